//! Post-hoc analyses of trained models: a two-component PCA of the learned
//! user embeddings, and per-user-type summaries of learned biases.

use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{UserStatsTable, UserType};
use crate::error::{Error, Result};
use crate::eval::mean_and_stderr;
use crate::models::{Model, SlotMap, UserTable, Variant};
use crate::nn::{dot, Matrix};
use crate::rng::Rng;

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaResult {
    /// Two orthonormal `d`-vectors, sorted by explained variance.
    pub components: [Vec<f64>; 2],
    /// `n x 2` coordinates of the centered input.
    pub projections: Matrix,
    pub eigenvalues: [f64; 2],
    /// Eigenvalue over total variance.
    pub explained: [f64; 2],
    pub total_variance: f64,
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let c = dot(v, u);
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
    }
}

/// Top eigenvector of the symmetric `cov` restricted to the complement of
/// `found` (deflation by projection), and its Rayleigh quotient.
fn power_iteration(cov: &Matrix, found: &[Vec<f64>], rng: &mut Rng) -> (Vec<f64>, f64) {
    let d = cov.rows;
    let scale = (0..d).map(|i| cov.data[i * d + i]).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    orthogonalize(&mut v, found);
    normalize(&mut v);

    for _ in 0..PCA_MAX_ITERATIONS {
        let mut w = vec![0.0; d];
        cov.gemv_add(&v, &mut w);
        orthogonalize(&mut w, found);
        if normalize(&mut w) <= 1e-14 * scale {
            // The remaining subspace carries no variance; any unit vector
            // in it is an eigenvector with eigenvalue 0.
            break;
        }
        if dot(&w, &v) < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        v = w;
        if delta < PCA_TOLERANCE {
            break;
        }
    }
    let mut cv = vec![0.0; d];
    cov.gemv_add(&v, &mut cv);
    (v.clone(), dot(&v, &cv).max(0.0))
}

/// Flips `v` so its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let largest = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if largest < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Centers the rows of `vectors` and projects them on the top two
/// principal axes, found by power iteration with deflation.
pub fn pca_project(vectors: &Matrix) -> Result<PcaResult> {
    let (n, d) = (vectors.rows, vectors.cols);
    if n < 3 || d < 2 {
        return Err(Error::Pca(format!("need at least 3 points in at least 2 dimensions, got {n}x{d}")));
    }
    if !vectors.is_finite() {
        return Err(Error::Pca("non-finite input".into()));
    }
    let mut means = vec![0.0; d];
    for r in 0..n {
        means.iter_mut().zip(vectors.row(r)).for_each(|(m, x)| *m += x);
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = vectors.clone();
    for r in 0..n {
        centered.row_mut(r).iter_mut().zip(&means).for_each(|(x, m)| *x -= m);
    }

    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        let row = centered.row(r);
        cov.add_outer(row, row);
    }
    cov.data.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    let total_variance: f64 = (0..d).map(|i| cov.data[i * d + i]).sum();
    let max_abs = vectors.data.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    if total_variance <= 1e-24 * max_abs * max_abs {
        return Err(Error::Pca("all points are identical".into()));
    }

    let mut rng = Rng::new(0x0050_4341);
    let (mut first, mut l1) = power_iteration(&cov, &[], &mut rng);
    let (mut second, mut l2) = power_iteration(&cov, std::slice::from_ref(&first), &mut rng);
    if l2 > l1 {
        std::mem::swap(&mut first, &mut second);
        std::mem::swap(&mut l1, &mut l2);
    }
    fix_sign(&mut first);
    fix_sign(&mut second);

    let mut projections = Matrix::zeros(n, 2);
    for r in 0..n {
        let row = centered.row(r);
        projections.data[2 * r] = dot(row, &first);
        projections.data[2 * r + 1] = dot(row, &second);
    }
    let share = |l: f64| (l / total_variance).clamp(0.0, 1.0);
    Ok(PcaResult {
        explained: [share(l1), share(l2)],
        eigenvalues: [l1, l2],
        components: [first, second],
        projections,
        total_variance,
    })
}

/// Pearson correlation, `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub utype: UserType,
    /// tbRNN's `b_t`, mean and standard error over repetitions.
    pub type_bias: Option<(f64, f64)>,
    /// ubRNN's `b_u` averaged over the users of this type, then mean and
    /// standard error over repetitions.
    pub user_bias: Option<(f64, f64)>,
    /// Users of this type holding a ubRNN slot (the shared slot counts once
    /// for Unknown).
    pub n_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub rows: Vec<BiasRow>,
}

impl BiasReport {
    pub fn row(&self, t: UserType) -> &BiasRow {
        &self.rows[t.index()]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("user_type,tb_bias_mean,tb_bias_stderr,ub_bias_mean,ub_bias_stderr,ub_slots\n");
        let fmt = |v: Option<(f64, f64)>| match v {
            Some((m, s)) => format!("{m:.6},{s:.6}"),
            None => ",".to_string(),
        };
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.utype, fmt(r.type_bias), fmt(r.user_bias), r.n_slots)
                .expect("writing to a String");
        }
        out
    }
}

fn biases(model: &Model, expected: Variant) -> Result<&[f64]> {
    match (&model.params.user, model.variant()) {
        (UserTable::Biases(b), v) if v == expected => Ok(b),
        (_, v) => Err(Error::Config(format!("expected a {expected} model, got {v}"))),
    }
}

/// Per-type learned biases from tbRNN and ubRNN repetitions. Either list may
/// be empty, in which case its columns are `None`.
pub fn bias_report(tb_runs: &[&Model], ub_runs: &[&Model], stats: &UserStatsTable) -> Result<BiasReport> {
    let slots = SlotMap::from_stats(stats);
    let mut rows = Vec::with_capacity(4);
    for t in UserType::ALL {
        let type_values = tb_runs
            .iter()
            .map(|m| biases(m, Variant::TbRnn).map(|b| b[t.index()]))
            .collect::<Result<Vec<f64>>>()?;

        let members: Vec<usize> = if t == UserType::Unknown {
            vec![SlotMap::UNKNOWN]
        } else {
            stats.known_users().filter(|u| u.utype == t).map(|u| slots.resolve(&u.user)).collect()
        };
        let mut user_values = Vec::with_capacity(ub_runs.len());
        for m in ub_runs {
            let b = biases(m, Variant::UbRnn)?;
            if b.len() != slots.len() {
                return Err(Error::Shape("ubRNN slots do not match the stats table".into()));
            }
            if !members.is_empty() {
                user_values.push(members.iter().map(|&s| b[s]).sum::<f64>() / members.len() as f64);
            }
        }
        rows.push(BiasRow {
            utype: t,
            type_bias: mean_and_stderr(&type_values).ok(),
            user_bias: mean_and_stderr(&user_values).ok(),
            n_slots: members.len(),
        });
    }
    Ok(BiasReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingRow {
    /// `None` for the shared Unknown slot.
    pub user: Option<String>,
    pub slot: usize,
    /// Training comments behind the slot (pooled over all T <= 10 users for
    /// the Unknown slot).
    pub train_comments: usize,
    pub rejection_rate: Option<f64>,
    pub utype: UserType,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingExport {
    pub rows: Vec<EmbeddingRow>,
    pub pca: PcaResult,
    /// Correlation between the first-component coordinate and R(u).
    pub pc1_rejection_correlation: Option<f64>,
}

impl EmbeddingExport {
    pub const CSV_HEADER: &'static str = "user,slot,train_comments,rejection_rate,user_type,pc1,pc2";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let rate = r.rejection_rate.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{:.9},{:.9}",
                r.user.as_deref().unwrap_or("<unknown>"),
                r.slot,
                r.train_comments,
                rate,
                r.utype,
                r.pc1,
                r.pc2
            )
            .expect("writing to a String");
        }
        out
    }
}

/// One row per user slot of a ueRNN with 2-D PCA coordinates of its
/// embedding, ready for plotting coloured by rejection rate.
pub fn embedding_export(model: &Model) -> Result<EmbeddingExport> {
    let UserTable::Embeddings { table, .. } = &model.params.user else {
        return Err(Error::Config(format!("expected a ueRNN model, got {}", model.variant())));
    };
    if model.variant() != Variant::UeRnn {
        return Err(Error::Config(format!("expected a ueRNN model, got {}", model.variant())));
    }
    if table.rows < 3 {
        return Err(Error::Pca(format!("need at least 3 user slots, model has {}", table.rows)));
    }
    let pca = pca_project(table)?;

    let (mut pooled_t, mut pooled_rej) = (0, 0);
    for u in model.stats.users().iter().filter(|u| !u.is_known()) {
        pooled_t += u.train_comments;
        pooled_rej += u.train_rejected;
    }
    let rows: Vec<EmbeddingRow> = (0..table.rows)
        .map(|slot| {
            let (pc1, pc2) = (pca.projections.data[2 * slot], pca.projections.data[2 * slot + 1]);
            match model.slots.user(slot).and_then(|u| model.stats.get(u)) {
                Some(u) => EmbeddingRow {
                    user: Some(u.user.clone()),
                    slot,
                    train_comments: u.train_comments,
                    rejection_rate: u.rejection_rate(),
                    utype: u.utype,
                    pc1,
                    pc2,
                },
                None => EmbeddingRow {
                    user: None,
                    slot,
                    train_comments: pooled_t,
                    rejection_rate: (pooled_t > 0).then(|| pooled_rej as f64 / pooled_t as f64),
                    utype: UserType::Unknown,
                    pc1,
                    pc2,
                },
            }
        })
        .collect();

    let (xs, ys): (Vec<f64>, Vec<f64>) =
        rows.iter().filter_map(|r| r.rejection_rate.map(|rate| (r.pc1, rate))).unzip();
    let pc1_rejection_correlation = pearson(&xs, &ys);
    Ok(EmbeddingExport { rows, pca, pc1_rejection_correlation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal(p: &PcaResult) {
        let [a, b] = &p.components;
        assert!((dot(a, a) - 1.0).abs() < 1e-9);
        assert!((dot(b, b) - 1.0).abs() < 1e-9);
        assert!(dot(a, b).abs() < 1e-9);
    }

    #[test]
    fn collinear_points() {
        let pts: Vec<f64> = (0..10).flat_map(|i| [i as f64, i as f64]).collect();
        let p = pca_project(&Matrix::from_vec(10, 2, pts).unwrap()).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((p.components[0][0] - s).abs() < 1e-9 && (p.components[0][1] - s).abs() < 1e-9);
        assert!(p.explained[1].abs() < 1e-12);
        assert!((p.explained[0] - 1.0).abs() < 1e-12);
        orthonormal(&p);
    }

    #[test]
    fn identical_points_are_rejected() {
        let m = Matrix::from_vec(4, 2, vec![1.5; 8]).unwrap();
        assert!(matches!(pca_project(&m), Err(Error::Pca(_))));
        assert!(pca_project(&Matrix::zeros(2, 3)).is_err());
        assert!(pca_project(&Matrix::zeros(5, 1)).is_err());
    }

    #[test]
    fn isotropic_sample_splits_variance_evenly() {
        let mut rng = Rng::new(31);
        let n = 10_000;
        let data: Vec<f64> = (0..2 * n).map(|_| rng.normal()).collect();
        let p = pca_project(&Matrix::from_vec(n, 2, data).unwrap()).unwrap();
        assert!((p.explained[0] - 0.5).abs() < 0.05, "{:?}", p.explained);
        assert!((p.explained[1] - 0.5).abs() < 0.05, "{:?}", p.explained);
        assert!(p.explained[0] >= p.explained[1]);
        orthonormal(&p);
    }

    #[test]
    fn sign_convention_and_centering() {
        let mut rng = Rng::new(2);
        let data: Vec<f64> = (0..50 * 4).map(|i| rng.normal() * (1 + i % 4) as f64 + 3.0).collect();
        let p = pca_project(&Matrix::from_vec(50, 4, data).unwrap()).unwrap();
        for c in &p.components {
            let largest = c.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(largest > 0.0);
        }
        for axis in 0..2 {
            let mean = (0..50).map(|r| p.projections.data[2 * r + axis]).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9);
        }
        assert!(p.eigenvalues[0] + p.eigenvalues[1] <= p.total_variance * (1.0 + 1e-12));
    }

    /// Rows whose sample covariance is exactly `diag(9, 1)` rotated by
    /// `theta`: a Gaussian sample is centred and whitened before scaling.
    fn planted(n: usize, theta: f64, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let mut xs: Vec<[f64; 2]> = (0..n).map(|_| [rng.normal(), rng.normal()]).collect();
        for axis in 0..2 {
            let mean = xs.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
            xs.iter_mut().for_each(|p| p[axis] -= mean);
        }
        let cov = |a: usize, b: usize| xs.iter().map(|p| p[a] * p[b]).sum::<f64>() / (n - 1) as f64;
        // Cholesky whitening: L^-1 x with L L^T = cov.
        let l11 = cov(0, 0).sqrt();
        let l21 = cov(1, 0) / l11;
        let l22 = (cov(1, 1) - l21 * l21).sqrt();
        let (c, s) = (theta.cos(), theta.sin());
        let data = xs
            .iter()
            .flat_map(|p| {
                let w0 = p[0] / l11;
                let w1 = (p[1] - l21 * w0) / l22;
                let (a, b) = (3.0 * w0, w1);
                [c * a - s * b, s * a + c * b]
            })
            .collect();
        Matrix::from_vec(n, 2, data).unwrap()
    }

    #[test]
    fn planted_axis_is_recovered() {
        for theta in [0.3, 1.1, 2.5] {
            let p = pca_project(&planted(10_000, theta, 17)).unwrap();
            let axis = [theta.cos(), theta.sin()];
            let cos = dot(&p.components[0], &axis).abs().min(1.0);
            assert!(cos.acos() < 1e-3, "theta {theta}: angle {}", cos.acos());
            assert!((p.explained[0] - 0.9).abs() < 1e-6);
            orthonormal(&p);
        }
    }

    #[test]
    fn rotation_preserves_projected_distances() {
        let mut rng = Rng::new(8);
        let n = 40;
        let data: Vec<f64> = (0..n * 3).map(|i| rng.normal() * [5.0, 2.0, 0.5][i % 3]).collect();
        let a = Matrix::from_vec(n, 3, data.clone()).unwrap();
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let rotated: Vec<f64> = data
            .chunks(3)
            .flat_map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]])
            .collect();
        let b = Matrix::from_vec(n, 3, rotated).unwrap();
        let (pa, pb) = (pca_project(&a).unwrap(), pca_project(&b).unwrap());
        let dist = |p: &PcaResult, i: usize, j: usize| {
            let d0 = p.projections.data[2 * i] - p.projections.data[2 * j];
            let d1 = p.projections.data[2 * i + 1] - p.projections.data[2 * j + 1];
            (d0 * d0 + d1 * d1).sqrt()
        };
        for i in 0..n {
            for j in 0..n {
                assert!((dist(&pa, i, j) - dist(&pb, i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_two_data_is_fully_captured() {
        let mut rng = Rng::new(4);
        let (u, v) = ([1.0, 2.0, 0.0, -1.0], [0.0, 1.0, 1.0, 1.0]);
        let data: Vec<f64> = (0..30)
            .flat_map(|_| {
                let (a, b) = (rng.normal(), rng.normal());
                (0..4).map(move |k| a * u[k] + b * v[k]).collect::<Vec<_>>()
            })
            .collect();
        let p = pca_project(&Matrix::from_vec(30, 4, data).unwrap()).unwrap();
        assert!((p.explained[0] + p.explained[1] - 1.0).abs() < 1e-9);
    }

    fn bias_models(variant: Variant, seeds: &[u64]) -> (Vec<Model>, UserStatsTable) {
        let corpus = crate::corpus::generate_synthetic(&crate::corpus::SyntheticSpec {
            n_users: 20,
            n_train: 600,
            n_dev: 10,
            n_test: 10,
            ..Default::default()
        })
        .unwrap();
        let stats = crate::corpus::compute_user_stats(&corpus);
        let vocab = crate::corpus::Vocabulary::build(corpus.split(crate::corpus::Split::Train));
        let slots = SlotMap::from_stats(&stats);
        let models = seeds
            .iter()
            .map(|&s| {
                let p = crate::models::ModelParameters::init(variant, vocab.size(), slots.len(), 4, 3, &mut Rng::new(s))
                    .unwrap();
                Model::new(p, vocab.clone(), stats.clone(), 50).unwrap()
            })
            .collect();
        (models, stats)
    }

    #[test]
    fn bias_report_of_untrained_models() {
        let (tb, stats) = bias_models(Variant::TbRnn, &[1, 2, 3]);
        let (ub, _) = bias_models(Variant::UbRnn, &[1, 2, 3]);
        let report = bias_report(&tb.iter().collect::<Vec<_>>(), &ub.iter().collect::<Vec<_>>(), &stats).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            let (m, _) = row.type_bias.unwrap();
            assert!(m.abs() <= 0.05);
            if let Some((m, _)) = row.user_bias {
                assert!(m.abs() <= 0.05);
            }
        }
        assert_eq!(report.to_csv().lines().count(), 5);
    }

    #[test]
    fn single_repetition_reports_exact_biases() {
        let (tb, stats) = bias_models(Variant::TbRnn, &[9]);
        let report = bias_report(&[&tb[0]], &[], &stats).unwrap();
        let UserTable::Biases(b) = &tb[0].params.user else { panic!() };
        for t in UserType::ALL {
            assert_eq!(report.row(t).type_bias, Some((b[t.index()], 0.0)));
            assert_eq!(report.row(t).user_bias, None);
        }
        assert!(bias_report(&[], &[&tb[0]], &stats).is_err());
    }

    #[test]
    fn export_has_one_row_per_slot() {
        let (ue, _) = bias_models(Variant::UeRnn, &[5]);
        let export = embedding_export(&ue[0]).unwrap();
        assert_eq!(export.rows.len(), ue[0].slots.len());
        assert!(export.rows[0].user.is_none());
        let csv = export.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(EmbeddingExport::CSV_HEADER));
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 7);
            assert!(fields[1].parse::<usize>().is_ok() && fields[2].parse::<usize>().is_ok());
            assert!(fields[4].parse::<UserType>().is_ok());
            assert!(fields[5].parse::<f64>().is_ok() && fields[6].parse::<f64>().is_ok());
        }
        let (tb, _) = bias_models(Variant::TbRnn, &[5]);
        assert!(embedding_export(&tb[0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
