//! Bidirectional LSTM that merges subword unit vectors into one word vector.
//!
//! The word vector is `projection([h_fwd_last ; h_bwd_last])`, where
//! `h_fwd_last` is the forward state after the last unit and `h_bwd_last` the
//! backward state after the first unit.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, LstmCell, LstmStep};

#[derive(Debug, Clone, PartialEq)]
pub struct SubwordCombinerParams {
    pub forward: LstmCell,
    pub backward: LstmCell,
    pub projection: Linear,
}

/// Forward-pass record used by [`SubwordCombinerParams::backward`].
#[derive(Debug, Clone)]
pub struct CombinerTrace {
    fwd: Vec<LstmStep>,
    bwd: Vec<LstmStep>,
    concat: Vec<f64>,
}

impl SubwordCombinerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        SubwordCombinerParams {
            forward: LstmCell::zeros(input, hidden),
            backward: LstmCell::zeros(input, hidden),
            projection: Linear::zeros(2 * hidden, hidden),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        SubwordCombinerParams {
            forward: LstmCell::init(input, hidden, rng),
            backward: LstmCell::init(input, hidden, rng),
            projection: Linear::init(2 * hidden, hidden, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.out_dim()
    }

    pub fn combine(&self, units: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.combine_traced(units).map(|(v, _)| v)
    }

    pub fn combine_traced(&self, units: &[Vec<f64>]) -> Result<(Vec<f64>, CombinerTrace)> {
        if units.is_empty() {
            return Err(Error::EmptyInput("no subword units to combine".into()));
        }
        if let Some(u) = units.iter().find(|u| u.len() != self.input_dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: u.len(),
            });
        }
        let hd = self.hidden_dim();
        let run = |cell: &LstmCell, order: &mut dyn Iterator<Item = &Vec<f64>>| {
            let mut h = vec![0.0; hd];
            let mut c = vec![0.0; hd];
            let mut steps = Vec::with_capacity(units.len());
            for x in order {
                let s = cell.step(x, &h, &c);
                h.clone_from(&s.h);
                c.clone_from(&s.c);
                steps.push(s);
            }
            steps
        };
        let fwd = run(&self.forward, &mut units.iter());
        let bwd = run(&self.backward, &mut units.iter().rev());
        let mut concat = fwd.last().unwrap().h.clone();
        concat.extend_from_slice(&bwd.last().unwrap().h);
        let out = self.projection.forward(&concat);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("subword combiner"));
        }
        Ok((out, CombinerTrace { fwd, bwd, concat }))
    }

    /// Accumulate parameter gradients for upstream gradient `d_out`.
    /// Unit vectors are frozen, so no input gradient is produced.
    pub fn backward(&self, trace: &CombinerTrace, d_out: &[f64], grads: &mut SubwordCombinerParams) {
        let hd = self.hidden_dim();
        let mut d_concat = vec![0.0; 2 * hd];
        self.projection
            .backward(&trace.concat, d_out, &mut grads.projection, Some(&mut d_concat));
        let bptt = |cell: &LstmCell, steps: &[LstmStep], dh_last: &[f64], g: &mut LstmCell| {
            let mut dh = dh_last.to_vec();
            let mut dc = vec![0.0; hd];
            for s in steps.iter().rev() {
                let (_, dh_prev, dc_prev) = cell.step_backward(s, &dh, &dc, g, false);
                dh = dh_prev;
                dc = dc_prev;
            }
        };
        bptt(&self.forward, &trace.fwd, &d_concat[..hd], &mut grads.forward);
        bptt(&self.backward, &trace.bwd, &d_concat[hd..], &mut grads.backward);
    }
}
