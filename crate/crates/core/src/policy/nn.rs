//! Dense-layer building blocks with analytic gradients, plus optimizers.
//!
//! Everything operates on plain `f64` slices — no external tensor library.
//! Layers accumulate gradients into caller-owned buffers so a minibatch is
//! processed sample by sample.

use rand::Rng;
use rand_distr::StandardNormal;

/// Fully connected layer, `y = W x + b`, with `w` stored row-major
/// (`rows` outputs × `cols` inputs).
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Linear { w: vec![0.0; rows * cols], b: vec![0.0; rows], rows, cols }
    }

    /// Orthogonally initialized layer scaled by `gain`, bias zero.
    pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Self {
        let w = orthogonal_matrix(rows, cols, gain, rng);
        Linear { w, b: vec![0.0; rows], rows, cols }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `y = W x + b`; `y` must have length `rows`.
    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *out = acc;
        }
    }

    /// Accumulates `dW += dy ⊗ x`, `db += dy`, and, when `dx` is given,
    /// `dx += Wᵀ dy`.
    pub fn backward(&self, x: &[f64], dy: &[f64], mut dx: Option<&mut [f64]>, grad: &mut LinearGrad) {
        debug_assert_eq!(dy.len(), self.rows);
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad.dw[r * self.cols..(r + 1) * self.cols];
            for (dwi, xi) in row.iter_mut().zip(x) {
                *dwi += g * xi;
            }
            grad.db[r] += g;
            if let Some(dx) = dx.as_deref_mut() {
                let wrow = &self.w[r * self.cols..(r + 1) * self.cols];
                for (dxi, wi) in dx.iter_mut().zip(wrow) {
                    *dxi += g * wi;
                }
            }
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.b);
    }

    /// Reads parameters back in `write_params` order, advancing the cursor.
    pub fn read_params(&mut self, src: &[f64], cursor: &mut usize) {
        let nw = self.w.len();
        self.w.copy_from_slice(&src[*cursor..*cursor + nw]);
        *cursor += nw;
        let nb = self.b.len();
        self.b.copy_from_slice(&src[*cursor..*cursor + nb]);
        *cursor += nb;
    }
}

/// Gradient accumulator matching a [`Linear`].
#[derive(Clone, Debug)]
pub struct LinearGrad {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl LinearGrad {
    pub fn for_layer(layer: &Linear) -> Self {
        LinearGrad { dw: vec![0.0; layer.w.len()], db: vec![0.0; layer.b.len()] }
    }

    pub fn zero(&mut self) {
        self.dw.fill(0.0);
        self.db.fill(0.0);
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.dw);
        out.extend_from_slice(&self.db);
    }
}

/// In-place ReLU.
pub fn relu(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Backward through ReLU given the pre-activation values: zeroes `dy` where
/// the unit was inactive.
pub fn relu_backward(pre: &[f64], dy: &mut [f64]) {
    for (g, &p) in dy.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Random `rows × cols` matrix with orthonormal rows (or columns when
/// `rows > cols`), scaled by `gain`. Built by Gram–Schmidt on Gaussian draws;
/// the transpose trick handles the tall case.
pub fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (r, c, transpose) = if rows <= cols { (rows, cols, false) } else { (cols, rows, true) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v: Vec<f64> = (0..c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for u in &basis {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= proj * ui;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            // Degenerate draw (essentially impossible at f64): retry.
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    let mut w = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if transpose { basis[j][i] } else { basis[i][j] };
            w[i * cols + j] = gain * v;
        }
    }
    w
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

/// Adam moment state over one flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Pluggable first-order optimizer: Adam (default) or plain gradient descent.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd,
}

impl Optimizer {
    pub fn adam(param_count: usize) -> Self {
        Optimizer::Adam(AdamState::new(param_count))
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        match self {
            Optimizer::Adam(state) => state.step(params, grads, lr),
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
        }
    }
}

/// Scales `grads` down to `max_norm` when its L2 norm exceeds it; a
/// nonpositive `max_norm` disables clipping. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
