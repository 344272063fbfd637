//! GRU encoder: a chain of cells over token embeddings, with reverse-mode
//! gradients through time.
//!
//! Cell equations, `x` the input and `h` the previous state:
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! r  = sigmoid(W_r x + U_r h + b_r)
//! h~ = tanh(W_h x + U_h (r * h) + b_h)
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! The initial state is zero and only the final state leaves the encoder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{axpy, glorot_init, sigmoid, Matrix, ParamGroups};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruWeights {
    /// `m x d` input projections.
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    /// `m x m` recurrent projections.
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruWeights {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Matrix::zeros(hidden_dim, input_dim);
        let u = || Matrix::zeros(hidden_dim, hidden_dim);
        Self {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: vec![0.0; hidden_dim],
            b_r: vec![0.0; hidden_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    /// Glorot-uniform matrices, zero biases.
    pub fn glorot(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        Self {
            w_z: glorot_init(input_dim, hidden_dim, rng),
            w_r: glorot_init(input_dim, hidden_dim, rng),
            w_h: glorot_init(input_dim, hidden_dim, rng),
            u_z: glorot_init(hidden_dim, hidden_dim, rng),
            u_r: glorot_init(hidden_dim, hidden_dim, rng),
            u_h: glorot_init(hidden_dim, hidden_dim, rng),
            b_z: vec![0.0; hidden_dim],
            b_r: vec![0.0; hidden_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (m, d) = (self.hidden_dim(), self.input_dim());
        let ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|w| w.rows == m && w.cols == d)
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|u| u.rows == m && u.cols == m)
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|b| b.len() == m);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("inconsistent GRU weights for d={d}, m={m}")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

impl ParamGroups for GruWeights {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("gru.w_z", &self.w_z.data),
            ("gru.w_r", &self.w_r.data),
            ("gru.w_h", &self.w_h.data),
            ("gru.u_z", &self.u_z.data),
            ("gru.u_r", &self.u_r.data),
            ("gru.u_h", &self.u_h.data),
            ("gru.b_z", &self.b_z),
            ("gru.b_r", &self.b_r),
            ("gru.b_h", &self.b_h),
        ]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("gru.w_z", &mut self.w_z.data),
            ("gru.w_r", &mut self.w_r.data),
            ("gru.w_h", &mut self.w_h.data),
            ("gru.u_z", &mut self.u_z.data),
            ("gru.u_r", &mut self.u_r.data),
            ("gru.u_h", &mut self.u_h.data),
            ("gru.b_z", &mut self.b_z),
            ("gru.b_r", &mut self.b_r),
            ("gru.b_h", &mut self.b_h),
        ]
    }
}

/// Activations of one cell application.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceCache {
    pub indices: Vec<usize>,
    pub steps: Vec<CellCache>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        &self.steps.last().expect("non-empty sequence").h
    }
}

/// Row-sparse gradient for a lookup table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub width: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseRows {
    pub fn new(width: usize) -> Self {
        Self { width, rows: BTreeMap::new() }
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        let width = self.width;
        self.rows.entry(index).or_insert_with(|| vec![0.0; width])
    }

    pub fn add_row(&mut self, index: usize, values: &[f64]) {
        axpy(1.0, values, self.row_mut(index));
    }

    pub fn merge(&mut self, other: &SparseRows) {
        for (&i, row) in &other.rows {
            self.add_row(i, row);
        }
    }

    /// `dense[i] += row` for every stored row.
    pub fn scatter_add(&self, dense: &mut Matrix) {
        for (&i, row) in &self.rows {
            axpy(1.0, row, dense.row_mut(i));
        }
    }

    pub fn get(&self, index: usize) -> Option<&[f64]> {
        self.rows.get(&index).map(Vec::as_slice)
    }
}

pub fn gru_cell_forward(x: &[f64], h_prev: &[f64], w: &GruWeights) -> Result<(Vec<f64>, CellCache)> {
    let m = w.hidden_dim();
    if x.len() != w.input_dim() || h_prev.len() != m {
        return Err(Error::Shape(format!(
            "cell input {} / state {} vs weights d={} m={m}",
            x.len(),
            h_prev.len(),
            w.input_dim()
        )));
    }

    let mut z = w.b_z.clone();
    w.w_z.gemv_add(x, &mut z);
    w.u_z.gemv_add(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = w.b_r.clone();
    w.w_r.gemv_add(x, &mut r);
    w.u_r.gemv_add(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let reset_state: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut h_tilde = w.b_h.clone();
    w.w_h.gemv_add(x, &mut h_tilde);
    w.u_h.gemv_add(&reset_state, &mut h_tilde);
    h_tilde.iter_mut().for_each(|v| *v = v.tanh());

    let h: Vec<f64> = (0..m).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * h_tilde[i]).collect();
    let cache = CellCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, h_tilde, h: h.clone() };
    Ok((h, cache))
}

/// Runs the chain from a zero state over `embeddings[indices[t]]`.
pub fn gru_sequence_forward(
    indices: &[usize],
    embeddings: &Matrix,
    w: &GruWeights,
) -> Result<(Vec<f64>, SequenceCache)> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("token sequence"));
    }
    if embeddings.cols != w.input_dim() {
        return Err(Error::Shape(format!(
            "embedding width {} vs GRU input width {}",
            embeddings.cols,
            w.input_dim()
        )));
    }
    let mut h = vec![0.0; w.hidden_dim()];
    let mut steps = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= embeddings.rows {
            return Err(Error::IndexOutOfRange { index: i, rows: embeddings.rows });
        }
        let (next, cache) = gru_cell_forward(embeddings.row(i), &h, w)?;
        h = next;
        steps.push(cache);
    }
    Ok((h, SequenceCache { indices: indices.to_vec(), steps }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruGradients {
    pub weights: GruWeights,
    pub embeddings: SparseRows,
}

/// Gradients of a scalar loss whose gradient at the final state is `dh_k`.
pub fn gru_sequence_backward(
    cache: &SequenceCache,
    dh_k: &[f64],
    w: &GruWeights,
) -> Result<GruGradients> {
    let mut weights = GruWeights::zeros(w.input_dim(), w.hidden_dim());
    let mut embeddings = SparseRows::new(w.input_dim());
    gru_backward_accumulate(cache, dh_k, w, &mut weights, &mut embeddings)?;
    Ok(GruGradients { weights, embeddings })
}

/// Same as [`gru_sequence_backward`] but adds into existing buffers.
pub fn gru_backward_accumulate(
    cache: &SequenceCache,
    dh_k: &[f64],
    w: &GruWeights,
    grads: &mut GruWeights,
    embedding_grads: &mut SparseRows,
) -> Result<()> {
    let (m, d) = (w.hidden_dim(), w.input_dim());
    if dh_k.len() != m || embedding_grads.width != d || cache.indices.len() != cache.steps.len() {
        return Err(Error::Shape("backward buffers do not match the weights".into()));
    }
    if cache.steps.iter().any(|s| s.x.len() != d || s.h.len() != m) {
        return Err(Error::Shape("sequence cache was produced with different weights".into()));
    }

    let mut dh = dh_k.to_vec();
    let mut dh_prev = vec![0.0; m];
    let mut da_z = vec![0.0; m];
    let mut da_r = vec![0.0; m];
    let mut da_h = vec![0.0; m];
    let mut d_reset_state = vec![0.0; m];
    let mut reset_state = vec![0.0; m];
    let mut dx = vec![0.0; d];

    for (step, &token) in cache.steps.iter().zip(&cache.indices).rev() {
        let CellCache { x, h_prev, z, r, h_tilde, .. } = step;
        for i in 0..m {
            dh_prev[i] = dh[i] * (1.0 - z[i]);
            da_z[i] = dh[i] * (h_tilde[i] - h_prev[i]) * z[i] * (1.0 - z[i]);
            da_h[i] = dh[i] * z[i] * (1.0 - h_tilde[i] * h_tilde[i]);
            reset_state[i] = r[i] * h_prev[i];
        }

        grads.w_h.add_outer(&da_h, x);
        grads.u_h.add_outer(&da_h, &reset_state);
        axpy(1.0, &da_h, &mut grads.b_h);
        d_reset_state.iter_mut().for_each(|v| *v = 0.0);
        w.u_h.gemv_t_add(&da_h, &mut d_reset_state);
        for i in 0..m {
            dh_prev[i] += d_reset_state[i] * r[i];
            da_r[i] = d_reset_state[i] * h_prev[i] * r[i] * (1.0 - r[i]);
        }

        grads.w_r.add_outer(&da_r, x);
        grads.u_r.add_outer(&da_r, h_prev);
        axpy(1.0, &da_r, &mut grads.b_r);
        w.u_r.gemv_t_add(&da_r, &mut dh_prev);

        grads.w_z.add_outer(&da_z, x);
        grads.u_z.add_outer(&da_z, h_prev);
        axpy(1.0, &da_z, &mut grads.b_z);
        w.u_z.gemv_t_add(&da_z, &mut dh_prev);

        dx.iter_mut().for_each(|v| *v = 0.0);
        w.w_z.gemv_t_add(&da_z, &mut dx);
        w.w_r.gemv_t_add(&da_r, &mut dx);
        w.w_h.gemv_t_add(&da_h, &mut dx);
        embedding_grads.add_row(token, &dx);

        std::mem::swap(&mut dh, &mut dh_prev);
    }
    Ok(())
}
