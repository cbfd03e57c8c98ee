//! Dense f64 building blocks with hand-written backward passes.

use rand::Rng;

/// Row-major dense matrix. Vectors (biases) are stored as `n x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `out += self * x`
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_add(x, &mut out);
        out
    }

    /// `out += self^T * y`
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += yr * w;
            }
        }
    }

    /// `self += a * b^T`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(cols)) {
            if ar == 0.0 {
                continue;
            }
            for (w, &bc) in row.iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }

    /// `self += v` for an `n x 1` matrix.
    pub fn add_column(&mut self, v: &[f64]) {
        debug_assert_eq!(self.cols, 1);
        for (w, &x) in self.data.iter_mut().zip(v) {
            *w += x;
        }
    }

    /// `self -= scale * other`
    pub fn sub_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (w, &g) in self.data.iter_mut().zip(&other.data) {
            *w -= scale * g;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax. `-inf` entries get probability zero.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln(sum(exp(scores)))`
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of `logits` against class `target`, with the gradient
/// w.r.t. the logits (`softmax - onehot`).
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (loss, grad)
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            weight: Matrix::uniform(out_dim, in_dim, bound, rng),
            bias: Matrix::uniform(out_dim, 1, bound, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.data().to_vec();
        self.weight.matvec_add(x, &mut y);
        y
    }

    /// Accumulate parameter gradients into `grads` and add `W^T dy` to `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear, dx: Option<&mut [f64]>) {
        grads.weight.add_outer(dy, x);
        grads.bias.add_column(dy);
        if let Some(dx) = dx {
            self.weight.matvec_t_add(dy, dx);
        }
    }
}

/// Single-layer LSTM cell with gate order (input, forget, cell, output).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub bias: Matrix,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates, `4 * hidden`, in (i, f, g, o) order.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w_ih: Matrix::zeros(4 * hidden, input),
            w_hh: Matrix::zeros(4 * hidden, hidden),
            bias: Matrix::zeros(4 * hidden, 1),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmCell {
            w_ih: Matrix::uniform(4 * hidden, input, bound, rng),
            w_hh: Matrix::uniform(4 * hidden, hidden, bound, rng),
            bias: Matrix::uniform(4 * hidden, 1, bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hd = self.hidden_dim();
        let mut z = self.bias.data().to_vec();
        self.w_ih.matvec_add(x, &mut z);
        self.w_hh.matvec_add(h_prev, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (z[j], z[hd + j], z[2 * hd + j], z[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: z,
            c,
            tanh_c,
            h,
        }
    }

    /// Backward through one step given the upstream gradients on `h` and `c`.
    ///
    /// Returns `(dx, dh_prev, dc_prev)`; `dx` is only computed when asked for.
    pub fn step_backward(
        &self,
        step: &LstmStep,
        dh: &[f64],
        dc_next: &[f64],
        grads: &mut LstmCell,
        want_dx: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let z = &step.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (z[j], z[hd + j], z[2 * hd + j], z[3 * hd + j]);
            let tc = step.tanh_c[j];
            let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dc * g * i * (1.0 - i);
            dz[hd + j] = dc * step.c_prev[j] * f * (1.0 - f);
            dz[2 * hd + j] = dc * i * (1.0 - g * g);
            dz[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dc * f;
        }
        grads.w_ih.add_outer(&dz, &step.x);
        grads.w_hh.add_outer(&dz, &step.h_prev);
        grads.bias.add_column(&dz);
        let mut dh_prev = vec![0.0; hd];
        self.w_hh.matvec_t_add(&dz, &mut dh_prev);
        let dx = want_dx.then(|| {
            let mut dx = vec![0.0; self.input_dim()];
            self.w_ih.matvec_t_add(&dz, &mut dx);
            dx
        });
        (dx, dh_prev, dc_prev)
    }
}
