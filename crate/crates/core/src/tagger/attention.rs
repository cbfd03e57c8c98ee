//! Additive attention: `a_j = p · tanh(W_h h + W_o O_j)`, softmax over `j`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{dot, softmax, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_h: Matrix,
    pub w_o: Matrix,
    /// Scoring vector, stored `a x 1`.
    pub p: Matrix,
}

/// Per-step values reused by the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub h_prev: Vec<f64>,
    /// `tanh(W_h h + W_o O_j)` for every source position.
    pub activations: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(hidden: usize, width: usize) -> Self {
        AttentionParams {
            w_h: Matrix::zeros(width, hidden),
            w_o: Matrix::zeros(width, hidden),
            p: Matrix::zeros(width, 1),
        }
    }

    pub fn init<R: Rng>(hidden: usize, width: usize, rng: &mut R) -> Self {
        let b_in = 1.0 / (hidden as f64).sqrt();
        let b_p = 1.0 / (width as f64).sqrt();
        AttentionParams {
            w_h: Matrix::uniform(width, hidden, b_in, rng),
            w_o: Matrix::uniform(width, hidden, b_in, rng),
            p: Matrix::uniform(width, 1, b_p, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.p.rows()
    }

    /// `W_o O_j` for every encoder output; independent of the decoder step.
    pub fn keys(&self, outputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        outputs.iter().map(|o| self.w_o.matvec(o)).collect()
    }

    /// Attention weights for one decoder step given precomputed keys.
    /// Positions with `mask[j] == false` receive weight zero.
    pub fn step(
        &self,
        h_prev: &[f64],
        keys: &[Vec<f64>],
        mask: Option<&[bool]>,
    ) -> Result<AttentionTrace> {
        if keys.is_empty() {
            return Err(Error::EmptyInput("attention over zero encoder outputs".into()));
        }
        if mask.is_some_and(|m| !m.iter().any(|&v| v)) {
            return Err(Error::EmptyInput("attention mask hides every position".into()));
        }
        let query = self.w_h.matvec(h_prev);
        let mut activations = Vec::with_capacity(keys.len());
        let mut scores = Vec::with_capacity(keys.len());
        for (j, key) in keys.iter().enumerate() {
            let e: Vec<f64> = query.iter().zip(key).map(|(q, k)| (q + k).tanh()).collect();
            let visible = mask.map_or(true, |m| m[j]);
            scores.push(if visible {
                dot(self.p.data(), &e)
            } else {
                f64::NEG_INFINITY
            });
            activations.push(e);
        }
        let weights = softmax(&scores);
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteActivation("attention weights"));
        }
        Ok(AttentionTrace {
            h_prev: h_prev.to_vec(),
            activations,
            weights,
        })
    }

    /// Backward for one step given the gradient on the context vector.
    ///
    /// Accumulates into `grads.w_h`, `grads.p`, `d_keys` and `d_outputs`, and
    /// returns the gradient on `h_prev`.
    pub fn step_backward(
        &self,
        trace: &AttentionTrace,
        outputs: &[Vec<f64>],
        d_context: &[f64],
        grads: &mut AttentionParams,
        d_keys: &mut [Vec<f64>],
        d_outputs: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let alpha = &trace.weights;
        let d_alpha: Vec<f64> = outputs.iter().map(|o| dot(d_context, o)).collect();
        for (d_o, &a) in d_outputs.iter_mut().zip(alpha) {
            if a != 0.0 {
                for (d, &c) in d_o.iter_mut().zip(d_context) {
                    *d += a * c;
                }
            }
        }
        let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        let mut d_query = vec![0.0; self.width()];
        let p = self.p.data();
        for j in 0..alpha.len() {
            let d_score = alpha[j] * (d_alpha[j] - mean);
            if d_score == 0.0 {
                continue;
            }
            let e = &trace.activations[j];
            for k in 0..e.len() {
                grads.p.data_mut()[k] += d_score * e[k];
                let du = d_score * p[k] * (1.0 - e[k] * e[k]);
                d_query[k] += du;
                d_keys[j][k] += du;
            }
        }
        grads.w_h.add_outer(&d_query, &trace.h_prev);
        let mut dh = vec![0.0; trace.h_prev.len()];
        self.w_h.matvec_t_add(&d_query, &mut dh);
        dh
    }

    /// Push accumulated key gradients through `W_o`.
    pub fn keys_backward(
        &self,
        outputs: &[Vec<f64>],
        d_keys: &[Vec<f64>],
        grads: &mut AttentionParams,
        d_outputs: &mut [Vec<f64>],
    ) {
        for ((o, dk), d_o) in outputs.iter().zip(d_keys).zip(d_outputs.iter_mut()) {
            grads.w_o.add_outer(dk, o);
            self.w_o.matvec_t_add(dk, d_o);
        }
    }
}

/// Attention weights of one decoder step over the encoder outputs.
pub fn attention_weights(
    params: &AttentionParams,
    h_prev: &[f64],
    outputs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    attention_weights_masked(params, h_prev, outputs, None)
}

pub fn attention_weights_masked(
    params: &AttentionParams,
    h_prev: &[f64],
    outputs: &[Vec<f64>],
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let keys = params.keys(outputs);
    params.step(h_prev, &keys, mask).map(|t| t.weights)
}

/// `c = Σ_k α_k O_k`
pub fn context_vector(weights: &[f64], outputs: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(weights.len(), outputs.len(), "one weight per encoder output");
    let mut c = vec![0.0; outputs[0].len()];
    for (&a, o) in weights.iter().zip(outputs) {
        for (ci, &oi) in c.iter_mut().zip(o) {
            *ci += a * oi;
        }
    }
    c
}
