//! Domain-adversarial training pieces: gradient reversal, the two-way domain
//! discriminator on the encoder's final hidden state, and the per-sweep
//! source/target domain pairing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax, Linear};
use crate::tagger::model::{backward, encode_traced, encoder_backward, forward_traced, Example, Feed};
use crate::tagger::ModelParams;

/// Domain label of the source batch.
pub const SOURCE_DOMAIN: usize = 0;
/// Domain label of the target batch.
pub const TARGET_DOMAIN: usize = 1;

/// Identity on the forward pass; multiplies gradients by `-lambda` on the way back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReversal {
    lambda: f64,
}

impl GradReversal {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "reversal lambda must be a finite non-negative number, got {lambda}"
            )));
        }
        Ok(GradReversal { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    pub fn backward(&self, upstream: &[f64]) -> Vec<f64> {
        upstream.iter().map(|g| -self.lambda * g).collect()
    }
}

/// How the discriminator's gradient reaches the encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainGradient {
    /// Through a gradient reversal layer (training).
    Reversed(GradReversal),
    /// Unchanged, as if the reversal layer were absent. Used for diagnostics.
    Unreversed,
}

impl DomainGradient {
    fn apply(&self, upstream: &[f64]) -> Vec<f64> {
        match self {
            DomainGradient::Reversed(grl) => grl.backward(upstream),
            DomainGradient::Unreversed => upstream.to_vec(),
        }
    }
}

/// Fully connected `hidden -> 2` layer; class 0 is the source domain, class 1 the target.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDiscriminator {
    pub linear: Linear,
}

impl DomainDiscriminator {
    pub fn zeros(hidden: usize) -> Self {
        DomainDiscriminator {
            linear: Linear::zeros(hidden, 2),
        }
    }

    pub fn init<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        DomainDiscriminator {
            linear: Linear::init(hidden, 2, rng),
        }
    }

    pub fn logits(&self, context: &[f64]) -> [f64; 2] {
        let v = self.linear.forward(context);
        [v[0], v[1]]
    }

    pub fn probabilities(&self, context: &[f64]) -> [f64; 2] {
        let p = softmax(&self.logits(context));
        [p[0], p[1]]
    }
}

/// Two domain logits for an encoder context vector.
pub fn discriminate_domain(d: &DomainDiscriminator, context: &[f64]) -> [f64; 2] {
    d.logits(context)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainPair {
    pub source: String,
    pub target: String,
}

/// One sweep over the domains: every country is the source exactly once,
/// paired with a target drawn uniformly from the others. The sweep order is
/// shuffled too. Deterministic given `seed`.
pub fn adann_pairing(countries: &[String], seed: u64) -> Result<Vec<DomainPair>> {
    if countries.len() < 2 {
        return Err(Error::TooFewDomains(countries.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..countries.len()).collect();
    order.shuffle(&mut rng);
    Ok(order
        .into_iter()
        .map(|s| {
            let mut t = rng.gen_range(0..countries.len() - 1);
            if t >= s {
                t += 1;
            }
            DomainPair {
                source: countries[s].clone(),
                target: countries[t].clone(),
            }
        })
        .collect())
}

/// Loss components of one source/target batch pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLoss {
    /// Mean token cross-entropy on the source batch.
    pub task: f64,
    /// Mean discriminator cross-entropy on the source batch (label 0).
    pub domain_source: f64,
    /// Mean discriminator cross-entropy on the target batch (label 1).
    pub domain_target: f64,
}

impl AdversarialLoss {
    pub fn total(&self) -> f64 {
        self.task + self.domain_source + self.domain_target
    }
}

/// Input gradients of a pair of batches, in example order.
#[derive(Debug, Clone, Default)]
pub struct PairInputGrads {
    pub source: Vec<Vec<Vec<f64>>>,
    pub target: Vec<Vec<Vec<f64>>>,
}

/// Task loss on the source batch plus domain losses on both batches.
///
/// With `grads`, accumulates gradients of `task + domain_source +
/// domain_target`, except that the domain terms reach the encoder through
/// `path` (a gradient reversal layer during training). The discriminator
/// itself always receives the plain gradient. Target examples contribute
/// nothing to the task loss; their gold tags are ignored.
pub fn adversarial_batch_loss(
    params: &ModelParams,
    source: &[Example<'_>],
    target: &[Example<'_>],
    path: DomainGradient,
    mut grads: Option<&mut ModelParams>,
    mut input_grads: Option<&mut PairInputGrads>,
) -> Result<AdversarialLoss> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let disc = params
        .discriminator
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("model has no domain discriminator".into()))?;
    let want_dx = input_grads.is_some();
    let tokens: usize = source.iter().map(|e| e.gold.len()).sum();
    let task_scale = 1.0 / tokens as f64;
    let src_scale = 1.0 / source.len() as f64;
    let tgt_scale = 1.0 / target.len() as f64;

    let mut task = 0.0;
    let mut dom_src = 0.0;
    for ex in source {
        let trace = forward_traced(params, ex.x, Feed::TeacherForced(ex.gold))?;
        let ctx = &trace.encoder_outputs().final_hidden;
        let (l, d_logits) = cross_entropy(&disc.logits(ctx), SOURCE_DOMAIN);
        dom_src += l;
        match grads.as_deref_mut() {
            Some(g) => {
                let context_grad = discriminator_backward(params, ctx, &d_logits, src_scale, path, g);
                let (tl, dx) = backward(params, &trace, ex.gold, task_scale, Some(&context_grad), g, want_dx);
                task += tl;
                if let (Some(sink), Some(dx)) = (input_grads.as_deref_mut(), dx) {
                    sink.source.push(dx);
                }
            }
            None => {
                task += trace
                    .logits()
                    .iter()
                    .zip(ex.gold)
                    .map(|(l, &y)| cross_entropy(l, y).0)
                    .sum::<f64>();
            }
        }
    }

    let mut dom_tgt = 0.0;
    for ex in target {
        let (enc, enc_trace) = encode_traced(params, ex.x)?;
        let (l, d_logits) = cross_entropy(&disc.logits(&enc.final_hidden), TARGET_DOMAIN);
        dom_tgt += l;
        if let Some(g) = grads.as_deref_mut() {
            let context_grad =
                discriminator_backward(params, &enc.final_hidden, &d_logits, tgt_scale, path, g);
            let zero_cell = vec![0.0; params.dims.hidden];
            let dx = encoder_backward(params, &enc_trace, &[], &context_grad, &zero_cell, g, want_dx);
            if let (Some(sink), Some(dx)) = (input_grads.as_deref_mut(), dx) {
                sink.target.push(dx);
            }
        }
    }

    Ok(AdversarialLoss {
        task: task * task_scale,
        domain_source: dom_src * src_scale,
        domain_target: dom_tgt * tgt_scale,
    })
}

/// Accumulate discriminator gradients and return the gradient sent to the
/// encoder context, after the reversal layer.
fn discriminator_backward(
    params: &ModelParams,
    context: &[f64],
    d_logits: &[f64],
    scale: f64,
    path: DomainGradient,
    grads: &mut ModelParams,
) -> Vec<f64> {
    let disc = params.discriminator.as_ref().expect("discriminator");
    let g = grads.discriminator.as_mut().expect("discriminator grads");
    let dy: Vec<f64> = d_logits.iter().map(|d| d * scale).collect();
    let mut d_context = vec![0.0; context.len()];
    disc.linear.backward(context, &dy, &mut g.linear, Some(&mut d_context));
    path.apply(&d_context)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EmbeddedSequence;
    use crate::tagger::{Architecture, ModelDims};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reversal_forward_and_backward() {
        let grl = GradReversal::new(1.0).unwrap();
        assert_eq!(grl.forward(&[1.5, -2.0]), vec![1.5, -2.0]);
        assert_eq!(grl.backward(&[0.5, -3.0]), vec![-0.5, 3.0]);
        let zero = GradReversal::new(0.0).unwrap();
        assert!(zero.backward(&[0.5, -3.0]).iter().all(|&g| g == 0.0));
        assert!(GradReversal::new(-1.0).is_err());
        assert!(GradReversal::new(f64::NAN).is_err());
    }

    #[test]
    fn zero_discriminator_is_uninformed() {
        let d = DomainDiscriminator::zeros(6);
        assert_eq!(discriminate_domain(&d, &[0.3; 6]), [0.0, 0.0]);
        assert_eq!(d.probabilities(&[0.3; 6]), [0.5, 0.5]);
    }

    #[test]
    fn pairing_examples() {
        let two = vec!["US".to_string(), "KR".to_string()];
        let pairs = adann_pairing(&two, 1).unwrap();
        assert_eq!(pairs.len(), 2);
        for p in &pairs {
            assert_ne!(p.source, p.target);
        }
        let countries: Vec<String> = crate::country::CountrySet::standard().training().to_vec();
        let a = adann_pairing(&countries, 42).unwrap();
        assert_eq!(a.len(), 20);
        let mut sources: Vec<&String> = a.iter().map(|p| &p.source).collect();
        sources.sort();
        let mut expected: Vec<&String> = countries.iter().collect();
        expected.sort();
        assert_eq!(sources, expected);
        assert!(a.iter().all(|p| p.source != p.target));
        assert_eq!(a, adann_pairing(&countries, 42).unwrap());
        assert!(matches!(
            adann_pairing(&two[..1], 0),
            Err(Error::TooFewDomains(1))
        ));
    }

    #[test]
    fn targets_cover_all_other_domains() {
        let countries: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..200 {
            for p in adann_pairing(&countries, seed).unwrap() {
                seen.insert((p.source, p.target));
            }
        }
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn untrained_discriminator_losses_are_ln2() {
        let dims = ModelDims {
            input: 4,
            hidden: 3,
            attention: 2,
            tag_dim: 2,
        };
        let mut p = ModelParams::init(Architecture::BASE_ADVERSARIAL, dims, false, 1);
        p.discriminator = Some(DomainDiscriminator::zeros(3));
        let x = EmbeddedSequence::new(vec![vec![0.1, 0.2, 0.3, 0.4]; 2]).unwrap();
        let gold = [0usize, 1];
        let ex = [Example { x: &x, gold: &gold }];
        let loss =
            adversarial_batch_loss(&p, &ex, &ex, DomainGradient::Unreversed, None, None).unwrap();
        assert!((loss.domain_source - 2f64.ln()).abs() < 1e-15);
        assert!((loss.domain_target - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            adversarial_batch_loss(&p, &ex, &[], DomainGradient::Unreversed, None, None),
            Err(Error::EmptyBatch)
        ));
    }

    fn setup() -> (ModelParams, Vec<EmbeddedSequence>, Vec<Vec<usize>>) {
        use rand::Rng;
        let dims = ModelDims {
            input: 4,
            hidden: 3,
            attention: 3,
            tag_dim: 2,
        };
        let p = ModelParams::init(Architecture::BASE_ADVERSARIAL, dims, false, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<EmbeddedSequence> = [3usize, 2, 4, 1]
            .iter()
            .map(|&n| {
                EmbeddedSequence::new(
                    (0..n)
                        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let golds = vec![vec![0, 1, 5], vec![3, 4], vec![0, 1, 1, 3], vec![7]];
        (p, xs, golds)
    }

    fn split<'a>(xs: &'a [EmbeddedSequence], golds: &'a [Vec<usize>]) -> (Vec<Example<'a>>, Vec<Example<'a>>) {
        let ex: Vec<Example> = xs
            .iter()
            .zip(golds)
            .map(|(x, g)| Example { x, gold: g })
            .collect();
        (ex[..2].to_vec(), ex[2..].to_vec())
    }

    #[test]
    fn reversed_encoder_gradient_is_negated_and_scaled() {
        let (p, xs, golds) = setup();
        let (src, tgt) = split(&xs, &golds);
        let lambda = 0.7;
        // domain-only encoder gradient: difference against the task-only gradient
        let mut task_only = p.zeros_like();
        crate::tagger::model::task_batch_loss(&p, &src, Some(&mut task_only), None).unwrap();
        let mut rev = p.zeros_like();
        let grl = DomainGradient::Reversed(GradReversal::new(lambda).unwrap());
        adversarial_batch_loss(&p, &src, &tgt, grl, Some(&mut rev), None).unwrap();
        let mut unrev = p.zeros_like();
        adversarial_batch_loss(&p, &src, &tgt, DomainGradient::Unreversed, Some(&mut unrev), None)
            .unwrap();
        for ((a, b), t) in rev
            .encoder
            .w_ih
            .data()
            .iter()
            .zip(unrev.encoder.w_ih.data())
            .zip(task_only.encoder.w_ih.data())
        {
            let r = a - t;
            let u = b - t;
            assert!((r + lambda * u).abs() <= 1e-6 * u.abs().max(1e-12));
        }
        // discriminator and decoder gradients do not depend on the path
        assert_eq!(rev.discriminator, unrev.discriminator);
        assert_eq!(rev.decoder, unrev.decoder);
        assert_eq!(rev.decoder, task_only.decoder);
    }

    #[test]
    fn zero_lambda_matches_task_training_for_encoder() {
        let (p, xs, golds) = setup();
        let (src, tgt) = split(&xs, &golds);
        let mut task_only = p.zeros_like();
        crate::tagger::model::task_batch_loss(&p, &src, Some(&mut task_only), None).unwrap();
        let mut g = p.zeros_like();
        let grl = DomainGradient::Reversed(GradReversal::new(0.0).unwrap());
        adversarial_batch_loss(&p, &src, &tgt, grl, Some(&mut g), None).unwrap();
        for (a, b) in g.encoder.w_ih.data().iter().zip(task_only.encoder.w_ih.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn target_labels_do_not_affect_task_loss() {
        let (p, xs, golds) = setup();
        let (src, tgt) = split(&xs, &golds);
        let a = adversarial_batch_loss(&p, &src, &tgt, DomainGradient::Unreversed, None, None).unwrap();
        let other = [vec![7, 7, 7, 7], vec![2]];
        let tgt2: Vec<Example> = tgt
            .iter()
            .zip(&other)
            .map(|(e, g)| Example { x: e.x, gold: g })
            .collect();
        let b = adversarial_batch_loss(&p, &src, &tgt2, DomainGradient::Unreversed, None, None).unwrap();
        assert_eq!(a, b);
        let task = crate::tagger::model::task_batch_loss(&p, &src, None, None).unwrap();
        assert!((a.task - task).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_surrogate_finite_differences() {
        let (p, xs, golds) = setup();
        let (src, tgt) = split(&xs, &golds);
        let lambda = 0.5;
        let grl = DomainGradient::Reversed(GradReversal::new(lambda).unwrap());
        let mut g = p.zeros_like();
        let mut dx = PairInputGrads::default();
        adversarial_batch_loss(&p, &src, &tgt, grl, Some(&mut g), Some(&mut dx)).unwrap();
        let loss = |q: &ModelParams, src: &[Example], tgt: &[Example]| {
            adversarial_batch_loss(q, src, tgt, DomainGradient::Unreversed, None, None).unwrap()
        };
        let h = 1e-5;
        let names: Vec<String> = p.blocks().into_iter().map(|(n, _)| n).collect();
        for (bi, name) in names.iter().enumerate() {
            let objective = |l: AdversarialLoss| {
                let dom = l.domain_source + l.domain_target;
                if name.starts_with("encoder") {
                    l.task - lambda * dom
                } else if name.starts_with("discriminator") {
                    dom
                } else {
                    l.task
                }
            };
            let len = p.blocks()[bi].1.data().len();
            for idx in 0..len {
                let at = |delta: f64| {
                    let mut q = p.clone();
                    q.blocks_mut()[bi].1.data_mut()[idx] += delta;
                    objective(loss(&q, &src, &tgt))
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                let an = g.blocks()[bi].1.data()[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                assert!(rel < 1e-4 || (fd - an).abs() < 1e-9, "{name}[{idx}]: {an} vs {fd}");
            }
        }
        // target inputs only see the reversed domain term
        for (ti, ex) in tgt.iter().enumerate() {
            for t in 0..ex.x.len() {
                for k in 0..4 {
                    let at = |delta: f64| {
                        let mut rows = ex.x.rows().to_vec();
                        rows[t][k] += delta;
                        let moved = EmbeddedSequence::new(rows).unwrap();
                        let mut tg = tgt.clone();
                        tg[ti] = Example { x: &moved, gold: ex.gold };
                        let l = loss(&p, &src, &tg);
                        -lambda * l.domain_target
                    };
                    let fd = (at(h) - at(-h)) / (2.0 * h);
                    assert!((fd - dx.target[ti][t][k]).abs() < 1e-8);
                }
            }
        }
    }
}
