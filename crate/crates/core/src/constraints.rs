//! Training-side consistency losses evaluated on beat crops.
//!
//! The Euler loss compares each lead's discrete derivative with the
//! simulator's voltage right-hand side along a reference phase trajectory.
//! The inter-lead loss applies the same test to the frontal-plane identities,
//! where the child lead's derivative must match a fixed combination of its
//! two parents' right-hand sides.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{beat_len, log_spectrum, Beat, Lead};
use crate::simulator::{simulate_beat, voltage_rhs, BeatTrajectory, ParamRegistry, WaveParams};

/// `child ≈ beta * parent_p + gamma * parent_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontalIdentity {
    pub child: Lead,
    pub parent_p: Lead,
    pub parent_q: Lead,
    pub beta: f64,
    pub gamma: f64,
}

const fn identity(child: Lead, parent_p: Lead, parent_q: Lead, beta: f64, gamma: f64) -> FrontalIdentity {
    FrontalIdentity {
        child,
        parent_p,
        parent_q,
        beta,
        gamma,
    }
}

/// The six limb-lead relations of the frontal plane.
pub const FRONTAL_IDENTITIES: [FrontalIdentity; 6] = [
    identity(Lead::I, Lead::II, Lead::III, 1.0, -1.0),
    identity(Lead::AVR, Lead::I, Lead::II, -0.5, -0.5),
    identity(Lead::AVL, Lead::I, Lead::III, 0.5, -0.5),
    identity(Lead::II, Lead::I, Lead::III, 1.0, 1.0),
    identity(Lead::AVF, Lead::II, Lead::III, 0.5, 0.5),
    identity(Lead::III, Lead::II, Lead::I, 1.0, -1.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_euler: f64,
    pub gamma_interlead: f64,
    pub alpha_spec: f64,
    pub beta_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_euler: 3e-3,
            gamma_interlead: 5e-2,
            alpha_spec: 1.0,
            beta_kl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_euler, self.gamma_interlead, self.alpha_spec, self.beta_kl];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Scalar loss with its per-component contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub value: f64,
    /// Contribution label and value; contributions sum to `value`.
    pub terms: Vec<(String, f64)>,
}

fn check_beat_len(beat: &Beat, fs: f64) -> Result<()> {
    let lc = beat_len(fs);
    if beat.len() != lc || beat.fs() != fs {
        return Err(Error::ShapeMismatch(format!(
            "beat has {} samples at {} Hz, expected {lc} at {fs} Hz",
            beat.len(),
            beat.fs()
        )));
    }
    if lc < 2 {
        return Err(Error::Invalid("beat must hold at least 2 samples".into()));
    }
    Ok(())
}

/// Sum over steps of `((h[l+1] - h[l]) / dt - rhs_l)^2`.
fn derivative_residual_sse(h: ArrayView1<f64>, fs: f64, rhs: impl Fn(usize) -> f64) -> f64 {
    (0..h.len() - 1)
        .map(|l| ((h[l + 1] - h[l]) * fs - rhs(l)).powi(2))
        .sum()
}

fn lead_rhs(traj: &BeatTrajectory, h: ArrayView1<f64>, params: &WaveParams, l: usize) -> f64 {
    voltage_rhs(traj.x[l], traj.y[l], h[l], traj.t[l], params)
}

/// Per-lead Euler consistency, normalised by `12 (L_c - 1)`.
pub fn euler_loss_terms(beat: &Beat, params_per_lead: &[WaveParams], fs: f64) -> Result<LossBreakdown> {
    check_beat_len(beat, fs)?;
    if params_per_lead.len() != 12 {
        return Err(Error::ShapeMismatch(format!(
            "expected 12 parameter sets, got {}",
            params_per_lead.len()
        )));
    }
    let norm = 12.0 * (beat.len() - 1) as f64;
    let mut terms = Vec::with_capacity(12);
    for (lead, params) in Lead::ALL.iter().zip(params_per_lead) {
        let traj = simulate_beat(params, fs)?;
        let h = beat.lead(*lead);
        let sse = derivative_residual_sse(h, fs, |l| lead_rhs(&traj, h, params, l));
        terms.push((lead.name().to_string(), sse / norm));
    }
    let value = terms.iter().map(|t| t.1).sum();
    Ok(LossBreakdown { value, terms })
}

pub fn euler_loss(beat: &Beat, params_per_lead: &[WaveParams], fs: f64) -> Result<f64> {
    Ok(euler_loss_terms(beat, params_per_lead, fs)?.value)
}

/// Euler loss with per-lead parameters looked up by class.
pub fn euler_loss_registry(beat: &Beat, registry: &ParamRegistry, class: &str, fs: f64) -> Result<LossBreakdown> {
    euler_loss_terms(beat, &registry.class_leads(class)?, fs)
}

/// Frontal-plane consistency summed over [`FRONTAL_IDENTITIES`].
///
/// Unnormalised by default; `normalize` divides by `6 (L_c - 1)`.
pub fn interlead_loss_terms(
    beat: &Beat,
    registry: &ParamRegistry,
    class: &str,
    fs: f64,
    normalize: bool,
) -> Result<LossBreakdown> {
    check_beat_len(beat, fs)?;
    let mut trajectories = Vec::with_capacity(6);
    for lead in Lead::FRONTAL {
        let params = registry.get(class, lead)?;
        trajectories.push((lead, params, simulate_beat(params, fs)?));
    }
    let find = |lead: Lead| {
        trajectories
            .iter()
            .find(|(l, _, _)| *l == lead)
            .expect("frontal lead present")
    };
    let norm = if normalize {
        (FRONTAL_IDENTITIES.len() * (beat.len() - 1)) as f64
    } else {
        1.0
    };
    let mut terms = Vec::with_capacity(FRONTAL_IDENTITIES.len());
    for id in FRONTAL_IDENTITIES {
        let (_, params_p, traj_p) = find(id.parent_p);
        let (_, params_q, traj_q) = find(id.parent_q);
        let hp = beat.lead(id.parent_p);
        let hq = beat.lead(id.parent_q);
        let sse = derivative_residual_sse(beat.lead(id.child), fs, |l| {
            id.beta * lead_rhs(traj_p, hp, params_p, l) + id.gamma * lead_rhs(traj_q, hq, params_q, l)
        });
        terms.push((id.child.name().to_string(), sse / norm));
    }
    let value = terms.iter().map(|t| t.1).sum();
    Ok(LossBreakdown { value, terms })
}

pub fn interlead_loss(beat: &Beat, registry: &ParamRegistry, class: &str, fs: f64) -> Result<f64> {
    Ok(interlead_loss_terms(beat, registry, class, fs, false)?.value)
}

/// Frequency weighting for the spectral loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BandWeights {
    Constant { weight: f64 },
    /// `weight` inside `[lo_hz, hi_hz]`, 1 elsewhere.
    Band { lo_hz: f64, hi_hz: f64, weight: f64 },
}

impl Default for BandWeights {
    fn default() -> Self {
        BandWeights::Constant { weight: 1.0 }
    }
}

impl BandWeights {
    /// The emphasised low-frequency profile: weight 2 on 0.5-3 Hz.
    pub fn low_band() -> Self {
        BandWeights::Band {
            lo_hz: 0.5,
            hi_hz: 3.0,
            weight: 2.0,
        }
    }

    pub fn at(&self, f: f64) -> f64 {
        match *self {
            BandWeights::Constant { weight } => weight,
            BandWeights::Band { lo_hz, hi_hz, weight } => {
                if (lo_hz..=hi_hz).contains(&f) {
                    weight
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub f_max: f64,
    pub epsilon: f64,
    pub band_weights: BandWeights,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            f_max: 40.0,
            epsilon: 1e-8,
            band_weights: BandWeights::default(),
        }
    }
}

/// Band-weighted log-spectrum discrepancy averaged over leads, crops and
/// bins; per-lead contributions are returned as terms.
pub fn spectral_loss_terms(pred: &Beat, crops: &[Beat], config: &SpectralConfig) -> Result<LossBreakdown> {
    if crops.is_empty() {
        return Err(Error::Invalid("spectral loss needs at least one real crop".into()));
    }
    if crops.iter().any(|c| c.len() != pred.len() || c.fs() != pred.fs()) {
        return Err(Error::ShapeMismatch("crops must share the predicted beat's length and rate".into()));
    }
    let fs = pred.fs();
    let spectrum_of = |beat: &Beat, lead: Lead| {
        log_spectrum(&beat.lead(lead).to_vec(), fs, config.f_max, config.epsilon)
    };
    let mut terms = Vec::with_capacity(12);
    let mut bins = 0;
    let mut sums = Vec::with_capacity(12);
    for lead in Lead::ALL {
        let p = spectrum_of(pred, lead)?;
        bins = p.len();
        let weights: Vec<f64> = p.frequencies().map(|f| config.band_weights.at(f)).collect();
        let mut sum = 0.0;
        for crop in crops {
            let r = spectrum_of(crop, lead)?;
            sum += weights
                .iter()
                .zip(p.values.iter().zip(&r.values))
                .map(|(w, (a, b))| w * (a - b).powi(2))
                .sum::<f64>();
        }
        sums.push((lead, sum));
    }
    let norm = (12 * crops.len() * bins) as f64;
    for (lead, sum) in sums {
        terms.push((lead.name().to_string(), sum / norm));
    }
    let value = terms.iter().map(|t| t.1).sum();
    Ok(LossBreakdown { value, terms })
}

pub fn spectral_loss(pred: &Beat, crops: &[Beat], config: &SpectralConfig) -> Result<f64> {
    Ok(spectral_loss_terms(pred, crops, config)?.value)
}

/// `||x - y||_F^2 / (rows * cols)`.
pub fn mse_norm(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.dim(), y.dim())));
    }
    if x.is_empty() {
        return Err(Error::Invalid("empty matrices".into()));
    }
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sse / x.len() as f64)
}

/// KL divergence of `N(mu, diag sigma^2)` from the standard normal.
pub fn kl_diag(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::ShapeMismatch(format!("{} means vs {} scales", mu.len(), sigma.len())));
    }
    if let Some(i) = sigma.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Invalid(format!("sigma[{i}] must be > 0")));
    }
    Ok(0.5
        * mu.iter()
            .zip(sigma)
            .map(|(m, s)| m * m + s * s - 1.0 - 2.0 * s.ln())
            .sum::<f64>())
}

/// `base + lambda * euler + gamma * interlead`.
pub fn combine_losses(base: f64, euler: f64, interlead: f64, weights: &LossWeights) -> f64 {
    base + weights.lambda_euler * euler + weights.gamma_interlead * interlead
}

/// Autoencoder objective `recon + beta_kl * kl + alpha_spec * spectral`.
pub fn autoencoder_objective(recon: f64, kl: f64, spectral: f64, weights: &LossWeights) -> f64 {
    recon + weights.beta_kl * kl + weights.alpha_spec * spectral
}
