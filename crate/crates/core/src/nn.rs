//! Small dense-math kernels shared by the encoder and the detector heads.
//!
//! Everything is `f64` and row-major. Nothing here allocates inside the hot
//! loops except where a fresh output vector is returned.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Uniform Glorot initialisation.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::uniform(rows, cols, limit, rng)
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · x + bias`
    pub fn affine(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(bias.len(), self.rows);
        (0..self.rows)
            .map(|r| bias[r] + dot(self.row(r), x))
            .collect()
    }

    /// `out += selfᵀ · g`
    pub fn add_transpose_mul(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                axpy(gr, self.row(r), out);
            }
        }
    }

    /// `self += g ⊗ x`
    pub fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                axpy(gr, x, self.row_mut(r));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn relu(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax written into `out`.
pub fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Update rule applied to every parameter slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimiser with per-slot state.
///
/// Slots are identified by their position in the parameter visitation order,
/// which every parameter struct keeps fixed.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            moments: Vec::new(),
        }
    }

    /// Start a new step; must be called once before the slot updates of a step.
    pub fn begin_step(&mut self) {
        self.steps += 1;
    }

    fn slot(&mut self, slot: usize, len: usize) -> &mut (Vec<f64>, Vec<f64>) {
        if self.moments.len() <= slot {
            self.moments
                .resize_with(slot + 1, || (Vec::new(), Vec::new()));
        }
        let m = &mut self.moments[slot];
        if m.0.len() != len {
            *m = (vec![0.0; len], vec![0.0; len]);
        }
        m
    }

    /// Dense update of one parameter slot.
    pub fn update(&mut self, slot: usize, lr: f64, param: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(param.len(), grad.len());
        match self.kind {
            OptimizerKind::Sgd => axpy(-lr, grad, param),
            OptimizerKind::Adam => {
                let (b1, b2, eps, t) = (self.beta1, self.beta2, self.eps, self.steps as i32);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let (m, v) = self.slot(slot, param.len());
                for i in 0..param.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }

    /// Row-sparse update: only `rows` of a `total_rows × width` table move.
    /// Adam moments are only advanced on touched rows (lazy Adam).
    pub fn update_rows<'a>(
        &mut self,
        slot: usize,
        lr: f64,
        table: &mut Matrix,
        rows: impl Iterator<Item = (usize, &'a [f64])>,
    ) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (r, g) in rows {
                    axpy(-lr, g, table.row_mut(r));
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps, t) = (self.beta1, self.beta2, self.eps, self.steps as i32);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let width = table.cols;
                let (m, v) = self.slot(slot, table.data.len());
                for (r, g) in rows {
                    let base = r * width;
                    let p = table.row_mut(r);
                    for i in 0..width {
                        let j = base + i;
                        m[j] = b1 * m[j] + (1.0 - b1) * g[i];
                        v[j] = b2 * v[j] + (1.0 - b2) * g[i] * g[i];
                        p[i] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Linearly decaying learning rate: `base` at step 0 down to 0 after `total` steps.
pub fn linear_decay(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - step as f64 / total as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for z in [-5.0, -0.3, 0.0, 0.7, 4.0] {
            let naive = (1.0 + f64::exp(z)).ln();
            assert!((softplus(z) - naive).abs() < 1e-14);
        }
        assert_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert!(softplus(1000.0).is_finite());
    }

    #[test]
    fn log_sum_exp_uniform() {
        let v = vec![0.0; 12];
        assert!((log_sum_exp(&v) - 12f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sgd_with_zero_lr_is_noop() {
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        opt.begin_step();
        let mut p = vec![1.0, 2.0];
        opt.update(0, 0.0, &mut p, &[0.5, -0.5]);
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        opt.begin_step();
        let mut p = vec![0.0];
        opt.update(0, 0.1, &mut p, &[3.0]);
        assert!((p[0] + 0.1).abs() < 1e-6);
    }
}
