//! Signal fidelity and distribution metrics for generated ECGs.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_signal_csv;
use crate::signal::{estimate_hr, Lead, MultiLeadSignal};

/// A real recording and a generated one under the same condition.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEval {
    pub real: MultiLeadSignal,
    pub generated: MultiLeadSignal,
    pub condition_id: String,
}

impl PairedEval {
    pub fn new(real: MultiLeadSignal, generated: MultiLeadSignal, condition_id: impl Into<String>) -> Result<Self> {
        if real.len() != generated.len() || real.fs() != generated.fs() {
            return Err(Error::ShapeMismatch(format!(
                "real is {} samples at {} Hz, generated {} at {} Hz",
                real.len(),
                real.fs(),
                generated.len(),
                generated.fs()
            )));
        }
        Ok(Self {
            real,
            generated,
            condition_id: condition_id.into(),
        })
    }

    fn per_lead(&self, f: impl Fn(Lead, ArrayView1<f64>, ArrayView1<f64>) -> Result<f64>) -> Result<f64> {
        let mut total = 0.0;
        for lead in Lead::ALL {
            total += f(lead, self.real.lead(lead), self.generated.lead(lead))?;
        }
        Ok(total / 12.0)
    }
}

/// Mean over leads of the per-lead mean absolute error.
pub fn mae(pair: &PairedEval) -> Result<f64> {
    pair.per_lead(|_, r, g| {
        Ok(r.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / r.len() as f64)
    })
}

/// Mean over leads of RMSE divided by the real lead's range.
pub fn nrmse(pair: &PairedEval) -> Result<f64> {
    pair.per_lead(|lead, r, g| {
        let rmse = (r.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
        let (lo, hi) = r
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > lo {
            Ok(rmse / (hi - lo))
        } else {
            Err(Error::Invalid(format!("lead {lead} of the real signal is constant; range is zero")))
        }
    })
}

fn is_constant(v: ArrayView1<f64>) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn correlation(lead: Lead, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if is_constant(x) || is_constant(y) {
        return Err(Error::UndefinedCorrelation(lead));
    }
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(lead));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over leads of the Pearson correlation.
pub fn pearson(pair: &PairedEval) -> Result<f64> {
    pair.per_lead(correlation)
}

/// Absolute heart-rate difference in bpm on `lead`.
pub fn hr_mae(pair: &PairedEval, lead: Lead) -> Result<f64> {
    Ok((estimate_hr(&pair.generated, lead)? - estimate_hr(&pair.real, lead)?).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Array2<f64>,
    pub label: String,
}

impl EmbeddingSet {
    pub fn new(vectors: Array2<f64>, label: impl Into<String>) -> Result<Self> {
        if vectors.nrows() < 2 || vectors.ncols() == 0 {
            return Err(Error::Invalid(format!(
                "embedding set needs >= 2 vectors of dimension >= 1, got {} x {}",
                vectors.nrows(),
                vectors.ncols()
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self {
            vectors,
            label: label.into(),
        })
    }

    /// Rows with even and odd indices, as two sets.
    pub fn split_even_odd(&self) -> Result<(EmbeddingSet, EmbeddingSet)> {
        let pick = |parity: usize| {
            let rows: Vec<usize> = (0..self.vectors.nrows()).filter(|i| i % 2 == parity).collect();
            self.vectors.select(ndarray::Axis(0), &rows)
        };
        Ok((
            EmbeddingSet::new(pick(0), format!("{}-even", self.label))?,
            EmbeddingSet::new(pick(1), format!("{}-odd", self.label))?,
        ))
    }

    fn moments(&self) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
        let (n, d) = self.vectors.dim();
        let x = DMatrix::from_fn(n, d, |i, j| self.vectors[[i, j]]);
        let mean = x.row_mean();
        let mut centred = x;
        for mut row in centred.row_iter_mut() {
            row -= &mean;
        }
        let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
        (mean.transpose(), cov)
    }
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two embedding sets.
///
/// The cross term uses `tr((S1^½ S2 S1^½)^½)`, which equals
/// `tr((S1 S2)^½)` and keeps every decomposition symmetric.
pub fn frechet(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.vectors.ncols() != b.vectors.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dimensions differ: {} vs {}",
            a.vectors.ncols(),
            b.vectors.ncols()
        )));
    }
    let (mu_a, cov_a) = a.moments();
    let (mu_b, cov_b) = b.moments();
    let mean_term = (&mu_a - &mu_b).norm_squared();
    let root_a = symmetric_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    Ok((mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 || !den.is_finite() || !num.is_finite() {
        return Err(Error::Invalid(format!("{what}: denominator must be finite and non-zero")));
    }
    Ok(num / den)
}

/// Generated-to-real ratio of text-signal similarity.
pub fn rclip(sim_gen: f64, sim_real: f64) -> Result<f64> {
    ratio(sim_gen, sim_real, "rclip")
}

/// Generated-to-real ratio of Fréchet distances.
pub fn rfid(fid_gen_real: f64, fid_real_real: f64) -> Result<f64> {
    ratio(fid_gen_real, fid_real_real, "rfid")
}

/// Mean similarity ratio over paired rows `(sim_gen, sim_real)`.
pub fn rclip_from_pairs(pairs: &Array2<f64>) -> Result<f64> {
    if pairs.ncols() != 2 || pairs.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "similarity table must have 2 columns and >= 1 row, got {} x {}",
            pairs.nrows(),
            pairs.ncols()
        )));
    }
    let n = pairs.nrows() as f64;
    rclip(pairs.column(0).sum() / n, pairs.column(1).sum() / n)
}

/// Fréchet distance of generated to real, over that of the real set's
/// even rows to its odd rows.
pub fn rfid_from_sets(generated: &EmbeddingSet, real: &EmbeddingSet) -> Result<(f64, f64, f64)> {
    let fid_gr = frechet(generated, real)?;
    let (even, odd) = real.split_even_odd()?;
    let fid_rr = frechet(&even, &odd)?;
    Ok((fid_gr, fid_rr, rfid(fid_gr, fid_rr)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub real_csv: PathBuf,
    pub generated_csv: PathBuf,
    pub condition_id: String,
}

/// Load a JSON array of pair entries; relative paths resolve against the
/// manifest's directory.
pub fn load_pairs(manifest: impl AsRef<Path>, fs: f64) -> Result<Vec<PairedEval>> {
    let manifest = manifest.as_ref();
    let entries: Vec<PairEntry> = crate::io::read_json(manifest)?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    entries
        .into_iter()
        .map(|e| {
            let real = read_signal_csv(base.join(&e.real_csv), fs)?;
            let generated = read_signal_csv(base.join(&e.generated_csv), fs)?;
            PairedEval::new(real, generated, e.condition_id)
        })
        .collect()
}

/// Record-level signal metrics averaged over pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMetrics {
    pub mae: f64,
    pub nrmse: f64,
    pub pearson: f64,
    pub hr_mae: f64,
    pub records: usize,
}

pub fn evaluate_pairs(pairs: &[PairedEval], hr_lead: Lead) -> Result<SignalMetrics> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no pairs to evaluate".into()));
    }
    let n = pairs.len() as f64;
    let mut out = SignalMetrics {
        mae: 0.0,
        nrmse: 0.0,
        pearson: 0.0,
        hr_mae: 0.0,
        records: pairs.len(),
    };
    for p in pairs {
        out.mae += mae(p)? / n;
        out.nrmse += nrmse(p)? / n;
        out.pearson += pearson(p)? / n;
        out.hr_mae += hr_mae(p, hr_lead)? / n;
    }
    Ok(out)
}
