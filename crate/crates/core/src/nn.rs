//! Numeric building blocks shared by every model: dense matrices, the
//! logistic function, Glorot initialization, binary cross-entropy, Adam and
//! a central finite-difference gradient checker.
//!
//! Everything is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Probabilities are clamped this far away from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    #[inline]
    pub fn gemv_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ * v`
    #[inline]
    pub fn gemv_t_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&vi, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            if vi != 0.0 {
                axpy(vi, row, out);
            }
        }
    }

    /// `self += a bᵀ`
    #[inline]
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai != 0.0 {
                axpy(ai, b, row);
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

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Logistic function, split on sign so neither branch overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// A `fan_out x fan_in` matrix drawn uniformly from `[-L, L]`,
/// `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    assert!(fan_in > 0 && fan_out > 0, "glorot_init needs positive fans");
    Matrix::uniform(fan_out, fan_in, glorot_limit(fan_in, fan_out), rng)
}

/// Binary cross-entropy of probability `p` against label `y`, and its
/// derivative with respect to the pre-sigmoid logit (`p - y`).
pub fn bce_loss_and_grad(p: f64, y: f64) -> (f64, f64) {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    (loss, p - y)
}

/// Anything whose trainable state can be viewed as an ordered list of named
/// flat `f64` groups. Gradients use the same type and the same order.
pub trait ParamGroups {
    fn groups(&self) -> Vec<(&'static str, &[f64])>;
    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;
}

impl ParamGroups for Vec<f64> {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        vec![("theta", self.as_slice())]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("theta", self.as_mut_slice())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamGroups + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.groups().iter().map(|(_, g)| g.len()).collect();
        Self {
            config,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// One bias-corrected Adam update of `params` using `grads`.
    pub fn step<P: ParamGroups + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_groups = grads.groups();
        let mut param_groups = params.groups_mut();
        if grad_groups.len() != param_groups.len() || param_groups.len() != self.first_moment.len()
        {
            return Err(Error::Shape(format!(
                "adam: {} parameter groups, {} gradient groups, {} moment groups",
                param_groups.len(),
                grad_groups.len(),
                self.first_moment.len()
            )));
        }
        for (i, ((name, p), (_, g))) in param_groups.iter().zip(&grad_groups).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[i].len() {
                return Err(Error::Shape(format!(
                    "adam: group {name} has {} params, {} grads, {} moments",
                    p.len(),
                    g.len(),
                    self.first_moment[i].len()
                )));
            }
        }

        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (i, (_, p)) in param_groups.iter_mut().enumerate() {
            let g = grad_groups[i].1;
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub name: &'static str,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compares `analytic` against central differences of `loss_fn` around
/// `params`, one coordinate at a time. `params` is perturbed in place and
/// restored exactly before returning.
pub fn finite_difference_check<P, F>(
    params: &mut P,
    analytic: &P,
    eps: f64,
    mut loss_fn: F,
) -> Result<Vec<GroupCheck>>
where
    P: ParamGroups + ?Sized,
    F: FnMut(&P) -> f64,
{
    let layout: Vec<(&'static str, usize)> =
        params.groups().iter().map(|(n, g)| (*n, g.len())).collect();
    let analytic_layout: Vec<usize> = analytic.groups().iter().map(|(_, g)| g.len()).collect();
    if layout.len() != analytic_layout.len()
        || layout.iter().zip(&analytic_layout).any(|((_, a), b)| a != b)
    {
        return Err(Error::Shape("gradient layout does not match parameters".into()));
    }

    let mut report = Vec::with_capacity(layout.len());
    for (gi, &(name, len)) in layout.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for j in 0..len {
            let original = params.groups()[gi].1[j];
            params.groups_mut()[gi].1[j] = original + eps;
            let plus = loss_fn(params);
            params.groups_mut()[gi].1[j] = original - eps;
            let minus = loss_fn(params);
            params.groups_mut()[gi].1[j] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.groups()[gi].1[j];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        report.push(GroupCheck { name, len, max_rel_error: max_rel, max_abs_error: max_abs });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-3.0, 1.7, 42.0] {
            assert!((sigmoid(x) - (1.0 - sigmoid(-x))).abs() < 1e-15);
        }
        // 1 / (1 + e^-1.151), evaluated by hand.
        assert!((sigmoid(1.151) - 0.759_693_5).abs() < 1e-6);
        assert!(sigmoid(-700.0) > 0.0);
        assert!(sigmoid(700.0) <= 1.0);
        assert!(sigmoid(-745.0).is_finite());
    }

    #[test]
    fn sigmoid_monotone_on_grid() {
        let mut prev = 0.0;
        for i in -2000..=2000 {
            let s = sigmoid(i as f64 * 0.01);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn glorot_limits() {
        assert_eq!(glorot_limit(3, 3), 1.0);
        assert!((glorot_limit(300, 128) - 0.118_400_56).abs() < 1e-8);
        let mut rng = Rng::new(5);
        let w = glorot_init(3, 3, &mut rng);
        assert!(w.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        let a = glorot_init(300, 128, &mut Rng::new(9));
        let b = glorot_init(300, 128, &mut Rng::new(9));
        assert_eq!(a, b);
        assert_eq!((a.rows, a.cols), (128, 300));
    }

    #[test]
    fn glorot_moments_converge() {
        let mut rng = Rng::new(17);
        let w = glorot_init(1000, 1000, &mut rng);
        let l = glorot_limit(1000, 1000);
        let n = w.data.len() as f64;
        let mean = w.data.iter().sum::<f64>() / n;
        let var = w.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let target = l * l / 3.0;
        assert!(mean.abs() < 0.01 * l, "mean {mean}");
        assert!((var - target).abs() < 0.01 * target, "var {var} vs {target}");
    }

    #[test]
    fn bce_examples() {
        let (loss, g) = bce_loss_and_grad(0.5, 1.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g, -0.5);
        let (loss, g) = bce_loss_and_grad(0.9, 0.0);
        assert!((loss - 2.302_585_093).abs() < 1e-8);
        assert!((g - 0.9).abs() < 1e-15);
        let (loss, _) = bce_loss_and_grad(1.0, 1.0);
        assert!(loss.abs() < 1e-11);
        let (loss, _) = bce_loss_and_grad(0.0, 0.0);
        assert!(loss.abs() < 1e-11);
        let (loss, _) = bce_loss_and_grad(0.0, 1.0);
        assert!(loss.is_finite());
    }

    #[test]
    fn adam_zero_gradients_is_identity() {
        let mut theta = vec![1.0, -2.0, 3.5];
        let zeros = vec![0.0; 3];
        let mut state = AdamState::new(AdamConfig::default(), &theta);
        for t in 1..=5 {
            state.step(&mut theta, &zeros).unwrap();
            assert_eq!(state.step, t);
        }
        assert_eq!(theta, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut theta = vec![0.0];
        let mut state = AdamState::new(AdamConfig::default(), &theta);
        state.step(&mut theta, &vec![0.5]).unwrap();
        // m_hat = 0.5, v_hat = 0.25
        let expected = -0.001 * 0.5 / (0.5 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15);

        for g in [1e-6, -3.0, 250.0] {
            let mut theta = vec![0.0];
            let mut state = AdamState::new(AdamConfig::default(), &theta);
            state.step(&mut theta, &vec![g]).unwrap();
            assert!((theta[0].abs() - 0.001).abs() < 1e-5, "g={g} step={}", theta[0]);
            assert_eq!(theta[0].signum(), -g.signum());
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut theta = vec![0.0, 1.0];
        let mut state = AdamState::new(AdamConfig::default(), &theta);
        assert!(matches!(state.step(&mut theta, &vec![1.0]), Err(Error::Shape(_))));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn finite_differences_on_quadratic() {
        let mut theta = vec![3.0];
        let analytic = vec![6.0];
        let report =
            finite_difference_check(&mut theta, &analytic, 1e-5, |p| p[0] * p[0]).unwrap();
        assert!(report[0].max_abs_error < 1e-9);
        assert_eq!(theta, vec![3.0]);
    }

    #[test]
    fn finite_differences_on_unused_parameter() {
        let mut theta = vec![3.0, 7.0];
        let analytic = vec![6.0, 0.0];
        let report =
            finite_difference_check(&mut theta, &analytic, 1e-5, |p| p[0] * p[0]).unwrap();
        assert!(report[0].max_rel_error < 1e-9);
        assert_eq!(report[0].max_abs_error.max(0.0), report[0].max_abs_error);
    }

    #[test]
    fn matrix_products() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut y = vec![0.0; 2];
        a.gemv_add(&[1.0, 0.0, -1.0], &mut y);
        assert_eq!(y, vec![-2.0, -2.0]);
        let mut x = vec![0.0; 3];
        a.gemv_t_add(&[1.0, 1.0], &mut x);
        assert_eq!(x, vec![5.0, 7.0, 9.0]);
        let mut m = Matrix::zeros(2, 2);
        m.add_outer(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(m.data, vec![3.0, 4.0, 6.0, 8.0]);
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
    }
}
