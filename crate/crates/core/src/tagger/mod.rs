//! Sequence-to-sequence tagger: LSTM encoder, plain or attention LSTM decoder
//! and a linear output layer over the eight tags.

pub mod attention;
pub mod model;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention::{attention_weights, attention_weights_masked, context_vector, AttentionParams};
pub use model::{
    decode_step_attention, decode_step_plain, encode, forward, greedy_parse, DecoderState,
    EncoderOutputs, Example, Feed, ForwardTrace, predict, task_batch_loss,
};

use crate::adversarial::DomainDiscriminator;
use crate::embeddings::{SubwordCombinerParams, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::nn::{Linear, LstmCell, Matrix};
use crate::tags::{TagVocabulary, NUM_TAGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    Plain,
    Attention,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Plain => "base",
            DecoderKind::Attention => "attention",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" | "plain" => Ok(DecoderKind::Plain),
            "attention" => Ok(DecoderKind::Attention),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}`"))),
        }
    }
}

/// Which model family: decoder kind plus whether a domain discriminator is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub decoder: DecoderKind,
    pub adversarial: bool,
}

impl Architecture {
    pub const BASE: Architecture = Architecture {
        decoder: DecoderKind::Plain,
        adversarial: false,
    };
    pub const ATTENTION: Architecture = Architecture {
        decoder: DecoderKind::Attention,
        adversarial: false,
    };
    pub const BASE_ADVERSARIAL: Architecture = Architecture {
        decoder: DecoderKind::Plain,
        adversarial: true,
    };
    pub const ATTENTION_ADVERSARIAL: Architecture = Architecture {
        decoder: DecoderKind::Attention,
        adversarial: true,
    };

    pub fn all() -> [Architecture; 4] {
        [
            Self::BASE,
            Self::ATTENTION,
            Self::BASE_ADVERSARIAL,
            Self::ATTENTION_ADVERSARIAL,
        ]
    }

    pub fn name(self) -> String {
        if self.adversarial {
            format!("{}+adversarial", self.decoder)
        } else {
            self.decoder.to_string()
        }
    }
}

/// Tag representation fed back into the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagRepr {
    /// Learned table of width `tag_dim`.
    Learned,
    /// Frozen identity rows over the label space; `tag_dim` equals 10.
    OneHot,
}

impl TagRepr {
    pub fn as_str(self) -> &'static str {
        match self {
            TagRepr::Learned => "learned",
            TagRepr::OneHot => "onehot",
        }
    }
}

impl FromStr for TagRepr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(TagRepr::Learned),
            "onehot" => Ok(TagRepr::OneHot),
            other => Err(Error::InvalidConfig(format!("unknown tag representation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub attention: usize,
    pub tag_dim: usize,
}

impl ModelDims {
    /// Full-size model: 300-d inputs, 1024-d recurrent states.
    pub fn full() -> Self {
        ModelDims {
            input: EMBEDDING_DIM,
            hidden: 1024,
            attention: 1024,
            tag_dim: 32,
        }
    }

    /// Scaled-down dims for desk experiments.
    pub fn scaled(hidden: usize) -> Self {
        ModelDims {
            input: EMBEDDING_DIM,
            hidden,
            attention: hidden,
            tag_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub dims: ModelDims,
    pub tag_repr: TagRepr,
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub attention: Option<AttentionParams>,
    /// One row per label, BOS and PAD included.
    pub tag_embedding: Matrix,
    pub output: Linear,
    pub discriminator: Option<DomainDiscriminator>,
    pub combiner: Option<SubwordCombinerParams>,
}

impl ModelParams {
    /// Seeded initialization, uniform in `±1/sqrt(fan_in)` per block.
    pub fn init(arch: Architecture, dims: ModelDims, with_combiner: bool, seed: u64) -> Self {
        Self::init_with(arch, dims, TagRepr::Learned, with_combiner, seed)
    }

    pub fn init_with(
        arch: Architecture,
        dims: ModelDims,
        tag_repr: TagRepr,
        with_combiner: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = TagVocabulary::default();
        let dims = match tag_repr {
            TagRepr::OneHot => ModelDims {
                tag_dim: vocab.label_space(),
                ..dims
            },
            TagRepr::Learned => dims,
        };
        let decoder_input = decoder_input_dim(arch, dims);
        let encoder = LstmCell::init(dims.input, dims.hidden, &mut rng);
        let decoder = LstmCell::init(decoder_input, dims.hidden, &mut rng);
        let attention = (arch.decoder == DecoderKind::Attention)
            .then(|| AttentionParams::init(dims.hidden, dims.attention, &mut rng));
        let tag_embedding = match tag_repr {
            TagRepr::Learned => Matrix::uniform(
                vocab.label_space(),
                dims.tag_dim,
                1.0 / (dims.tag_dim as f64).sqrt(),
                &mut rng,
            ),
            TagRepr::OneHot => {
                let n = vocab.label_space();
                let mut m = Matrix::zeros(n, n);
                for i in 0..n {
                    m.set(i, i, 1.0);
                }
                m
            }
        };
        let output = Linear::init(dims.hidden, NUM_TAGS, &mut rng);
        let discriminator = arch
            .adversarial
            .then(|| DomainDiscriminator::init(dims.hidden, &mut rng));
        let combiner = with_combiner
            .then(|| SubwordCombinerParams::init(EMBEDDING_DIM, EMBEDDING_DIM, &mut rng));
        ModelParams {
            arch,
            dims,
            tag_repr,
            encoder,
            decoder,
            attention,
            tag_embedding,
            output,
            discriminator,
            combiner,
        }
    }

    /// All-zero parameters of the given structure.
    pub fn zeros(arch: Architecture, dims: ModelDims, tag_repr: TagRepr, with_combiner: bool) -> Self {
        Self::init_with(arch, dims, tag_repr, with_combiner, 0).zeros_like()
    }

    /// Same structure, every entry zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.blocks_mut() {
            m.fill(0.0);
        }
        z
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = Vec::new();
        push_lstm(&mut out, "encoder", &self.encoder);
        push_lstm(&mut out, "decoder", &self.decoder);
        if let Some(a) = &self.attention {
            out.push(("attention.w_h".into(), &a.w_h));
            out.push(("attention.w_o".into(), &a.w_o));
            out.push(("attention.p".into(), &a.p));
        }
        out.push(("tag_embedding".into(), &self.tag_embedding));
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        if let Some(d) = &self.discriminator {
            out.push(("discriminator.weight".into(), &d.linear.weight));
            out.push(("discriminator.bias".into(), &d.linear.bias));
        }
        if let Some(c) = &self.combiner {
            push_lstm(&mut out, "combiner.forward", &c.forward);
            push_lstm(&mut out, "combiner.backward", &c.backward);
            out.push(("combiner.projection.weight".into(), &c.projection.weight));
            out.push(("combiner.projection.bias".into(), &c.projection.bias));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = Vec::new();
        push_lstm_mut(&mut out, "encoder", &mut self.encoder);
        push_lstm_mut(&mut out, "decoder", &mut self.decoder);
        if let Some(a) = &mut self.attention {
            out.push(("attention.w_h".into(), &mut a.w_h));
            out.push(("attention.w_o".into(), &mut a.w_o));
            out.push(("attention.p".into(), &mut a.p));
        }
        out.push(("tag_embedding".into(), &mut self.tag_embedding));
        out.push(("output.weight".into(), &mut self.output.weight));
        out.push(("output.bias".into(), &mut self.output.bias));
        if let Some(d) = &mut self.discriminator {
            out.push(("discriminator.weight".into(), &mut d.linear.weight));
            out.push(("discriminator.bias".into(), &mut d.linear.bias));
        }
        if let Some(c) = &mut self.combiner {
            push_lstm_mut(&mut out, "combiner.forward", &mut c.forward);
            push_lstm_mut(&mut out, "combiner.backward", &mut c.backward);
            out.push(("combiner.projection.weight".into(), &mut c.projection.weight));
            out.push(("combiner.projection.bias".into(), &mut c.projection.bias));
        }
        out
    }

    /// Expected `(rows, cols)` of every block implied by the architecture and dims.
    pub fn expected_shapes(&self) -> Vec<(String, (usize, usize))> {
        let d = self.dims;
        let h4 = 4 * d.hidden;
        let mut out = vec![
            ("encoder.w_ih".to_string(), (h4, d.input)),
            ("encoder.w_hh".to_string(), (h4, d.hidden)),
            ("encoder.bias".to_string(), (h4, 1)),
            ("decoder.w_ih".to_string(), (h4, decoder_input_dim(self.arch, d))),
            ("decoder.w_hh".to_string(), (h4, d.hidden)),
            ("decoder.bias".to_string(), (h4, 1)),
        ];
        if self.arch.decoder == DecoderKind::Attention {
            out.push(("attention.w_h".into(), (d.attention, d.hidden)));
            out.push(("attention.w_o".into(), (d.attention, d.hidden)));
            out.push(("attention.p".into(), (d.attention, 1)));
        }
        out.push(("tag_embedding".into(), (NUM_TAGS + 2, d.tag_dim)));
        out.push(("output.weight".into(), (NUM_TAGS, d.hidden)));
        out.push(("output.bias".into(), (NUM_TAGS, 1)));
        if self.arch.adversarial {
            out.push(("discriminator.weight".into(), (2, d.hidden)));
            out.push(("discriminator.bias".into(), (2, 1)));
        }
        if self.combiner.is_some() {
            let e = EMBEDDING_DIM;
            for dir in ["forward", "backward"] {
                out.push((format!("combiner.{dir}.w_ih"), (4 * e, e)));
                out.push((format!("combiner.{dir}.w_hh"), (4 * e, e)));
                out.push((format!("combiner.{dir}.bias"), (4 * e, 1)));
            }
            out.push(("combiner.projection.weight".into(), (e, 2 * e)));
            out.push(("combiner.projection.bias".into(), (e, 1)));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// Plain SGD step `p -= lr * g`. A frozen one-hot tag table is left untouched.
    pub fn sgd_step(&mut self, grads: &ModelParams, lr: f64) {
        let frozen_tags = self.tag_repr == TagRepr::OneHot;
        for ((name, p), (_, g)) in self.blocks_mut().into_iter().zip(grads.blocks()) {
            if frozen_tags && name == "tag_embedding" {
                continue;
            }
            p.sub_scaled(g, lr);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, m)| m.is_finite())
    }
}

pub(crate) fn decoder_input_dim(arch: Architecture, dims: ModelDims) -> usize {
    match arch.decoder {
        DecoderKind::Plain => dims.tag_dim,
        DecoderKind::Attention => dims.tag_dim + dims.hidden,
    }
}

fn push_lstm<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, cell: &'a LstmCell) {
    out.push((format!("{prefix}.w_ih"), &cell.w_ih));
    out.push((format!("{prefix}.w_hh"), &cell.w_hh));
    out.push((format!("{prefix}.bias"), &cell.bias));
}

fn push_lstm_mut<'a>(out: &mut Vec<(String, &'a mut Matrix)>, prefix: &str, cell: &'a mut LstmCell) {
    out.push((format!("{prefix}.w_ih"), &mut cell.w_ih));
    out.push((format!("{prefix}.w_hh"), &mut cell.w_hh));
    out.push((format!("{prefix}.bias"), &mut cell.bias));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_match_blocks() {
        for arch in Architecture::all() {
            let p = ModelParams::init(arch, ModelDims::scaled(8), false, 1);
            let blocks: Vec<(String, (usize, usize))> =
                p.blocks().iter().map(|(n, m)| (n.clone(), m.shape())).collect();
            assert_eq!(blocks, p.expected_shapes());
        }
        let p = ModelParams::init(Architecture::BASE, ModelDims::scaled(4), true, 1);
        let blocks: Vec<(String, (usize, usize))> =
            p.blocks().iter().map(|(n, m)| (n.clone(), m.shape())).collect();
        assert_eq!(blocks, p.expected_shapes());
    }

    #[test]
    fn output_width_is_tag_count() {
        let p = ModelParams::init(Architecture::ATTENTION, ModelDims::scaled(8), false, 1);
        assert_eq!(p.output.out_dim(), 8);
        assert_eq!(p.tag_embedding.rows(), 10);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelParams::init(Architecture::ATTENTION_ADVERSARIAL, ModelDims::scaled(8), false, 5);
        let b = ModelParams::init(Architecture::ATTENTION_ADVERSARIAL, ModelDims::scaled(8), false, 5);
        let c = ModelParams::init(Architecture::ATTENTION_ADVERSARIAL, ModelDims::scaled(8), false, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let p = ModelParams::init(Architecture::BASE, ModelDims::scaled(16), false, 3);
        let bound = 1.0 / 16f64.sqrt();
        assert!(p.encoder.w_hh.data().iter().all(|v| v.abs() <= bound));
        let out_bound = 1.0 / 16f64.sqrt();
        assert!(p.output.weight.data().iter().all(|v| v.abs() <= out_bound));
    }

    #[test]
    fn one_hot_tags_are_frozen() {
        let mut p = ModelParams::init_with(
            Architecture::BASE,
            ModelDims::scaled(4),
            TagRepr::OneHot,
            false,
            1,
        );
        assert_eq!(p.dims.tag_dim, 10);
        let before = p.tag_embedding.clone();
        let mut g = p.zeros_like();
        g.tag_embedding.fill(1.0);
        g.output.bias.fill(1.0);
        p.sgd_step(&g, 0.1);
        assert_eq!(p.tag_embedding, before);
    }
}
