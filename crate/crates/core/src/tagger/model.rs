//! Forward and backward passes of the tagger.

use super::attention::AttentionTrace;
use super::{DecoderKind, ModelParams};
use crate::embeddings::{EmbeddedSequence, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy, LstmStep};
use crate::tags::{Tag, TagVocabulary, NUM_TAGS};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutputs {
    pub outputs: Vec<Vec<f64>>,
    pub final_hidden: Vec<f64>,
    pub final_cell: Vec<f64>,
}

impl EncoderOutputs {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    pub step: usize,
}

impl DecoderState {
    /// Decoder starts from the encoder's final state.
    pub fn from_encoder(enc: &EncoderOutputs) -> Self {
        DecoderState {
            hidden: enc.final_hidden.clone(),
            cell: enc.final_cell.clone(),
            step: 0,
        }
    }
}

/// What the decoder consumes at step `i > 0`.
#[derive(Debug, Clone, Copy)]
pub enum Feed<'a> {
    /// The gold tag of step `i - 1`.
    TeacherForced(&'a [usize]),
    /// The argmax of step `i - 1`.
    Greedy,
}

/// An embedded input paired with its gold tag indices.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub x: &'a EmbeddedSequence,
    pub gold: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    steps: Vec<LstmStep>,
}

#[derive(Debug, Clone)]
struct DecodeStepTrace {
    prev_label: usize,
    lstm: LstmStep,
    attention: Option<AttentionTrace>,
    logits: Vec<f64>,
}

/// Full forward record of one sequence.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    encoder: EncoderTrace,
    enc_out: EncoderOutputs,
    keys: Option<Vec<Vec<f64>>>,
    steps: Vec<DecodeStepTrace>,
}

impl ForwardTrace {
    pub fn logits(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.logits.clone()).collect()
    }

    /// Labels fed into each decoder step (BOS first).
    pub fn fed_labels(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.prev_label).collect()
    }

    pub fn encoder_outputs(&self) -> &EncoderOutputs {
        &self.enc_out
    }

    pub fn attention_weights(&self) -> Vec<Vec<f64>> {
        self.steps
            .iter()
            .filter_map(|s| s.attention.as_ref().map(|a| a.weights.clone()))
            .collect()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| argmax(&s.logits)).collect()
    }
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what))
    }
}

pub fn encode_traced(params: &ModelParams, x: &EmbeddedSequence) -> Result<(EncoderOutputs, EncoderTrace)> {
    if x.is_empty() {
        return Err(Error::EmptyInput("encoder input is empty".into()));
    }
    if x.dim() != params.dims.input {
        return Err(Error::DimensionMismatch {
            expected: params.dims.input,
            found: x.dim(),
        });
    }
    let hd = params.dims.hidden;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut steps = Vec::with_capacity(x.len());
    let mut outputs = Vec::with_capacity(x.len());
    for row in x.rows() {
        let s = params.encoder.step(row, &h, &c);
        check_finite(&s.h, "encoder")?;
        h.clone_from(&s.h);
        c.clone_from(&s.c);
        outputs.push(s.h.clone());
        steps.push(s);
    }
    Ok((
        EncoderOutputs {
            outputs,
            final_hidden: h,
            final_cell: c,
        },
        EncoderTrace { steps },
    ))
}

/// Run the encoder over an embedded sequence.
pub fn encode(params: &ModelParams, x: &EmbeddedSequence) -> Result<EncoderOutputs> {
    encode_traced(params, x).map(|(o, _)| o)
}

/// Backpropagate through the encoder.
///
/// `d_outputs` holds gradients on every per-step output (may be empty),
/// `d_final_hidden`/`d_final_cell` those on the final state. Returns input
/// gradients when `want_dx` is set.
pub fn encoder_backward(
    params: &ModelParams,
    trace: &EncoderTrace,
    d_outputs: &[Vec<f64>],
    d_final_hidden: &[f64],
    d_final_cell: &[f64],
    grads: &mut ModelParams,
    want_dx: bool,
) -> Option<Vec<Vec<f64>>> {
    let n = trace.steps.len();
    let mut dh = d_final_hidden.to_vec();
    let mut dc = d_final_cell.to_vec();
    let mut dxs = if want_dx { vec![Vec::new(); n] } else { Vec::new() };
    for t in (0..n).rev() {
        if let Some(d_o) = d_outputs.get(t) {
            for (a, b) in dh.iter_mut().zip(d_o) {
                *a += b;
            }
        }
        let (dx, dh_prev, dc_prev) =
            params
                .encoder
                .step_backward(&trace.steps[t], &dh, &dc, &mut grads.encoder, want_dx);
        if let Some(dx) = dx {
            dxs[t] = dx;
        }
        dh = dh_prev;
        dc = dc_prev;
    }
    want_dx.then_some(dxs)
}

fn tag_input(params: &ModelParams, label: usize) -> Vec<f64> {
    params.tag_embedding.row(label).to_vec()
}

fn plain_step(params: &ModelParams, state: &DecoderState, label: usize) -> Result<DecodeStepTrace> {
    let lstm = params
        .decoder
        .step(&tag_input(params, label), &state.hidden, &state.cell);
    check_finite(&lstm.h, "decoder")?;
    let logits = params.output.forward(&lstm.h);
    Ok(DecodeStepTrace {
        prev_label: label,
        lstm,
        attention: None,
        logits,
    })
}

fn attention_step(
    params: &ModelParams,
    state: &DecoderState,
    label: usize,
    enc: &EncoderOutputs,
    keys: &[Vec<f64>],
    mask: Option<&[bool]>,
) -> Result<DecodeStepTrace> {
    let ap = params
        .attention
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("model has no attention parameters".into()))?;
    let attn = ap.step(&state.hidden, keys, mask)?;
    let context = super::attention::context_vector(&attn.weights, &enc.outputs);
    let mut input = tag_input(params, label);
    input.extend_from_slice(&context);
    let lstm = params.decoder.step(&input, &state.hidden, &state.cell);
    check_finite(&lstm.h, "decoder")?;
    let logits = params.output.forward(&lstm.h);
    Ok(DecodeStepTrace {
        prev_label: label,
        lstm,
        attention: Some(attn),
        logits,
    })
}

fn advance(state: &DecoderState, step: &DecodeStepTrace) -> DecoderState {
    DecoderState {
        hidden: step.lstm.h.clone(),
        cell: step.lstm.c.clone(),
        step: state.step + 1,
    }
}

/// One plain decoder step: feed the representation of `last_label`.
pub fn decode_step_plain(
    params: &ModelParams,
    state: &DecoderState,
    last_label: usize,
) -> Result<(Vec<f64>, DecoderState)> {
    let s = plain_step(params, state, last_label)?;
    let next = advance(state, &s);
    Ok((s.logits, next))
}

/// One attention decoder step. Returns logits, the new state and the
/// attention weights used to build the context vector.
pub fn decode_step_attention(
    params: &ModelParams,
    state: &DecoderState,
    last_label: usize,
    enc: &EncoderOutputs,
    mask: Option<&[bool]>,
) -> Result<(Vec<f64>, DecoderState, Vec<f64>)> {
    let ap = params
        .attention
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("model has no attention parameters".into()))?;
    let keys = ap.keys(&enc.outputs);
    let s = attention_step(params, state, last_label, enc, &keys, mask)?;
    let next = advance(state, &s);
    let weights = s.attention.map(|a| a.weights).unwrap_or_default();
    Ok((s.logits, next, weights))
}

/// Forward pass producing exactly one logit row per input token.
pub fn forward_traced(params: &ModelParams, x: &EmbeddedSequence, feed: Feed<'_>) -> Result<ForwardTrace> {
    let n = x.len();
    if let Feed::TeacherForced(gold) = feed {
        if gold.len() != n {
            return Err(Error::MissingGold);
        }
    }
    let (enc_out, encoder) = encode_traced(params, x)?;
    let keys = params.attention.as_ref().map(|a| a.keys(&enc_out.outputs));
    let bos = TagVocabulary::default().bos_index();
    let mut state = DecoderState::from_encoder(&enc_out);
    let mut label = bos;
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let s = match params.arch.decoder {
            DecoderKind::Plain => plain_step(params, &state, label)?,
            DecoderKind::Attention => {
                attention_step(params, &state, label, &enc_out, keys.as_ref().unwrap(), None)?
            }
        };
        state = advance(&state, &s);
        label = match feed {
            Feed::TeacherForced(gold) => gold[i],
            Feed::Greedy => argmax(&s.logits),
        };
        steps.push(s);
    }
    Ok(ForwardTrace {
        encoder,
        enc_out,
        keys,
        steps,
    })
}

/// Logits for every position, `n x 8`.
///
/// With `teacher_forcing`, `gold` must hold one tag index per token.
pub fn forward(
    params: &ModelParams,
    x: &EmbeddedSequence,
    gold: Option<&[usize]>,
    teacher_forcing: bool,
) -> Result<Vec<Vec<f64>>> {
    let feed = if teacher_forcing {
        Feed::TeacherForced(gold.ok_or(Error::MissingGold)?)
    } else {
        Feed::Greedy
    };
    forward_traced(params, x, feed).map(|t| t.logits())
}

/// Backward pass for one traced sequence.
///
/// Token cross-entropy gradients are scaled by `task_scale` (use zero to skip
/// the task loss). `context_grad` is an extra gradient on the encoder's final
/// hidden state, e.g. from the domain discriminator. Returns the summed
/// (unscaled) token loss and, if requested, gradients on the inputs.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    gold: &[usize],
    task_scale: f64,
    context_grad: Option<&[f64]>,
    grads: &mut ModelParams,
    want_dx: bool,
) -> (f64, Option<Vec<Vec<f64>>>) {
    let hd = params.dims.hidden;
    let td = params.dims.tag_dim;
    let n = trace.steps.len();
    let enc = &trace.enc_out;
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut d_outputs = vec![vec![0.0; hd]; n];
    let mut d_keys = trace.keys.as_ref().map(|k| vec![vec![0.0; k[0].len()]; n]);
    let mut loss = 0.0;
    for i in (0..n).rev() {
        let step = &trace.steps[i];
        let (l, mut d_logits) = cross_entropy(&step.logits, gold[i]);
        loss += l;
        d_logits.iter_mut().for_each(|g| *g *= task_scale);
        let mut dh = dh_next.clone();
        params
            .output
            .backward(&step.lstm.h, &d_logits, &mut grads.output, Some(&mut dh));
        let (dx, dh_prev, dc_prev) =
            params
                .decoder
                .step_backward(&step.lstm, &dh, &dc_next, &mut grads.decoder, true);
        let dx = dx.expect("decoder input gradient");
        for (g, d) in grads.tag_embedding.row_mut(step.prev_label).iter_mut().zip(&dx[..td]) {
            *g += d;
        }
        let mut dh_prev = dh_prev;
        if let (Some(attn), Some(ap)) = (&step.attention, &params.attention) {
            let ga = grads.attention.as_mut().expect("attention grads");
            let dh_attn = ap.step_backward(
                attn,
                &enc.outputs,
                &dx[td..],
                ga,
                d_keys.as_mut().unwrap(),
                &mut d_outputs,
            );
            for (a, b) in dh_prev.iter_mut().zip(dh_attn) {
                *a += b;
            }
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    if let (Some(ap), Some(dk)) = (&params.attention, &d_keys) {
        let ga = grads.attention.as_mut().expect("attention grads");
        ap.keys_backward(&enc.outputs, dk, ga, &mut d_outputs);
    }
    if let Some(cg) = context_grad {
        for (a, b) in dh_next.iter_mut().zip(cg) {
            *a += b;
        }
    }
    let dx = encoder_backward(
        params,
        &trace.encoder,
        &d_outputs,
        &dh_next,
        &dc_next,
        grads,
        want_dx,
    );
    (loss, dx)
}

/// Mean token cross-entropy of a batch under teacher forcing.
///
/// With `grads`, accumulates the gradient of that mean. Input gradients are
/// pushed to `input_grads` in example order when given.
pub fn task_batch_loss(
    params: &ModelParams,
    examples: &[Example<'_>],
    mut grads: Option<&mut ModelParams>,
    mut input_grads: Option<&mut Vec<Vec<Vec<f64>>>>,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let tokens: usize = examples.iter().map(|e| e.gold.len()).sum();
    let scale = 1.0 / tokens as f64;
    let mut total = 0.0;
    for ex in examples {
        let trace = forward_traced(params, ex.x, Feed::TeacherForced(ex.gold))?;
        match grads.as_deref_mut() {
            Some(g) => {
                let (loss, dx) =
                    backward(params, &trace, ex.gold, scale, None, g, input_grads.is_some());
                total += loss;
                if let (Some(sink), Some(dx)) = (input_grads.as_deref_mut(), dx) {
                    sink.push(dx);
                }
            }
            None => {
                total += trace
                    .steps
                    .iter()
                    .zip(ex.gold)
                    .map(|(s, &g)| cross_entropy(&s.logits, g).0)
                    .sum::<f64>();
            }
        }
    }
    Ok(total * scale)
}

/// Predicted tag indices for an embedded sequence (greedy decoding).
pub fn predict(params: &ModelParams, x: &EmbeddedSequence) -> Result<Vec<usize>> {
    forward_traced(params, x, Feed::Greedy).map(|t| t.predictions())
}

/// Tag a tokenized address.
pub fn greedy_parse(
    params: &ModelParams,
    provider: &EmbeddingProvider,
    tokens: &[String],
) -> Result<Vec<Tag>> {
    let x = provider.embed_sequence(tokens, params.combiner.as_ref())?;
    let pred = predict(params, &x)?;
    debug_assert!(pred.iter().all(|&i| i < NUM_TAGS));
    Ok(pred
        .into_iter()
        .map(|i| Tag::from_index(i).expect("output layer has one unit per tag"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::{Architecture, ModelDims};
    use super::*;
    use crate::nn::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            input: 5,
            hidden: 4,
            attention: 3,
            tag_dim: 3,
        }
    }

    fn random_seq(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddedSequence {
        EmbeddedSequence::new(
            (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn encoder_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init(Architecture::BASE, tiny_dims(), false, 1);
        let enc = encode(&p, &random_seq(&mut rng, 4, 5)).unwrap();
        assert_eq!(enc.len(), 4);
        assert!(enc.outputs.iter().all(|o| o.len() == 4));
        let one = encode(&p, &random_seq(&mut rng, 1, 5)).unwrap();
        assert_eq!(one.outputs[0], one.final_hidden);
    }

    #[test]
    fn zero_encoder_zero_outputs() {
        let mut p = ModelParams::init(Architecture::BASE, tiny_dims(), false, 1);
        p.encoder = crate::nn::LstmCell::zeros(5, 4);
        let x = EmbeddedSequence::new(vec![vec![0.0; 5]; 3]).unwrap();
        let enc = encode(&p, &x).unwrap();
        assert!(enc.outputs.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn forced_length_and_teacher_forcing_feed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for arch in Architecture::all() {
            let p = ModelParams::init(arch, tiny_dims(), false, 3);
            let x = random_seq(&mut rng, 3, 5);
            assert_eq!(forward(&p, &x, None, false).unwrap().len(), 3);
            let gold = [1, 1, 5];
            let trace = forward_traced(&p, &x, Feed::TeacherForced(&gold)).unwrap();
            assert_eq!(trace.fed_labels(), vec![8, 1, 1]);
            assert!(matches!(forward(&p, &x, None, true), Err(Error::MissingGold)));
            assert!(matches!(
                forward(&p, &x, Some(&[1, 2]), true),
                Err(Error::MissingGold)
            ));
        }
    }

    #[test]
    fn plain_step_is_deterministic() {
        let p = ModelParams::init(Architecture::BASE, tiny_dims(), false, 3);
        let state = DecoderState {
            hidden: vec![0.1; 4],
            cell: vec![0.0; 4],
            step: 0,
        };
        let (a, s1) = decode_step_plain(&p, &state, 8).unwrap();
        let (b, _) = decode_step_plain(&p, &state, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert_eq!(s1.step, 1);
    }

    #[test]
    fn single_source_attention_copies_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::init(Architecture::ATTENTION, tiny_dims(), false, 3);
        let enc = encode(&p, &random_seq(&mut rng, 1, 5)).unwrap();
        let state = DecoderState::from_encoder(&enc);
        let (logits, _, alpha) = decode_step_attention(&p, &state, 8, &enc, None).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(logits.len(), 8);
    }

    #[test]
    fn greedy_matches_teacher_forcing_when_predictions_are_gold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::init(Architecture::ATTENTION, tiny_dims(), false, 8);
        let x = random_seq(&mut rng, 5, 5);
        let greedy = forward_traced(&p, &x, Feed::Greedy).unwrap();
        let gold = greedy.predictions();
        let forced = forward_traced(&p, &x, Feed::TeacherForced(&gold)).unwrap();
        assert_eq!(greedy.logits(), forced.logits());
    }

    fn loss_of(p: &ModelParams, x: &EmbeddedSequence, gold: &[usize]) -> f64 {
        let t = forward_traced(p, x, Feed::TeacherForced(gold)).unwrap();
        t.steps
            .iter()
            .zip(gold)
            .map(|(s, &g)| cross_entropy(&s.logits, g).0)
            .sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for arch in [Architecture::BASE, Architecture::ATTENTION] {
            let p = ModelParams::init(arch, tiny_dims(), false, 21);
            let x = random_seq(&mut rng, 4, 5);
            let gold = [0, 1, 1, 5];
            let trace = forward_traced(&p, &x, Feed::TeacherForced(&gold)).unwrap();
            let mut g = p.zeros_like();
            let (loss, dx) = backward(&p, &trace, &gold, 1.0, None, &mut g, true);
            assert!((loss - loss_of(&p, &x, &gold)).abs() < 1e-12);

            let h = 1e-5;
            let names: Vec<String> = p.blocks().into_iter().map(|(n, _)| n).collect();
            for (bi, name) in names.iter().enumerate() {
                let len = p.blocks()[bi].1.data().len();
                for idx in (0..len).step_by(1 + len / 12) {
                    let perturb = |delta: f64| {
                        let mut q = p.clone();
                        q.blocks_mut()[bi].1.data_mut()[idx] += delta;
                        loss_of(&q, &x, &gold)
                    };
                    let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                    let an = g.blocks()[bi].1.data()[idx];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                    assert!(rel < 1e-4 || (fd - an).abs() < 1e-9, "{arch:?} {name}[{idx}]: analytic {an} numeric {fd}");
                }
            }
            // input gradient
            let dx = dx.unwrap();
            for t in 0..4 {
                for k in 0..5 {
                    let shift = |delta: f64| {
                        let mut rows = x.rows().to_vec();
                        rows[t][k] += delta;
                        loss_of(&p, &EmbeddedSequence::new(rows).unwrap(), &gold)
                    };
                    let fd = (shift(h) - shift(-h)) / (2.0 * h);
                    assert!((fd - dx[t][k]).abs() < 1e-7 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn constant_logit_shift_keeps_parse() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = ModelParams::init(Architecture::ATTENTION, tiny_dims(), false, 8);
        let x = random_seq(&mut rng, 6, 5);
        let before = predict(&p, &x).unwrap();
        let mut q = p.clone();
        let shifted: Vec<f64> = q.output.bias.data().iter().map(|b| b + 3.25).collect();
        q.output.bias = Matrix::from_vec(8, 1, shifted);
        assert_eq!(predict(&q, &x).unwrap(), before);
    }
}
