//! Fitting simulator morphology to an observed single-cycle beat.
//!
//! The objective aligns the simulated voltage to the observation through a
//! least-squares offset, scale and linear trend, then adds weak priors: a
//! scale penalty, width shrinkage toward physiological targets, an
//! amplitude penalty and a hinge on the P-Q-R-S-T phase order. Widths are
//! optimised through a softplus so they stay positive.
//!
//! Gradients come from forward sensitivities carried through every Euler
//! update of the beat integrator, with central differences available as an
//! independent check.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{beat_len, beat_window, Lead};
use crate::simulator::{integrate_beat, simulate_beat, wrap_phase, WaveParams, R_WAVE};

/// Least-squares alignment `c + s z(t) + b (t - mean t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFit {
    pub c: f64,
    pub s: f64,
    /// Trend slope in mV per sample.
    pub b: f64,
    pub residual_sse: f64,
}

/// Projection onto the complement of span{1, t - mean t}, kept around so the
/// scale derivative can be formed without re-solving.
struct TrendProjection {
    fit: AlignmentFit,
    proj_sim: Vec<f64>,
    proj_target: Vec<f64>,
    denom: f64,
}

fn centred_time(n: usize) -> Vec<f64> {
    let mid = (n as f64 - 1.0) / 2.0;
    (0..n).map(|i| i as f64 - mid).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_out_trend(v: &[f64], tau: &[f64], tau_sq: f64) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let slope = dot(tau, v) / tau_sq;
    v.iter().zip(tau).map(|(x, t)| x - mean - slope * t).collect()
}

fn trend_projection(sim: &[f64], target: &[f64]) -> Result<TrendProjection> {
    let n = sim.len();
    if n != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "simulated trace has {n} samples, target {}",
            target.len()
        )));
    }
    if n < 4 {
        return Err(Error::Invalid(format!("alignment needs >= 4 samples, got {n}")));
    }
    let tau = centred_time(n);
    let tau_sq = dot(&tau, &tau);
    let proj_sim = project_out_trend(sim, &tau, tau_sq);
    let proj_target = project_out_trend(target, &tau, tau_sq);
    let denom = dot(&proj_sim, &proj_sim);
    let energy = dot(sim, sim);
    if !(denom > 1e-20 * energy) || denom == 0.0 {
        return Err(Error::DegenerateFit(
            "simulated trace is constant or collinear with a linear trend".into(),
        ));
    }
    let s = dot(&proj_sim, &proj_target) / denom;
    let mean_y = target.iter().sum::<f64>() / n as f64;
    let mean_z = sim.iter().sum::<f64>() / n as f64;
    let c = mean_y - s * mean_z;
    let b = tau
        .iter()
        .zip(sim.iter().zip(target))
        .map(|(t, (z, y))| t * (y - s * z))
        .sum::<f64>()
        / tau_sq;
    let residual_sse = proj_target
        .iter()
        .zip(&proj_sim)
        .map(|(py, pz)| (py - s * pz).powi(2))
        .sum();
    Ok(TrendProjection {
        fit: AlignmentFit {
            c,
            s,
            b,
            residual_sse,
        },
        proj_sim,
        proj_target,
        denom,
    })
}

/// Exact least-squares offset, scale and trend aligning `sim` to `target`.
pub fn fit_affine_trend(sim: &[f64], target: &[f64]) -> Result<AlignmentFit> {
    Ok(trend_projection(sim, target)?.fit)
}

impl AlignmentFit {
    /// The aligned prediction for a simulated trace.
    pub fn apply(&self, sim: &[f64]) -> Vec<f64> {
        let tau = centred_time(sim.len());
        sim.iter()
            .zip(&tau)
            .map(|(z, t)| self.c + self.s * z + self.b * t)
            .collect()
    }
}

/// Slope-free refit `y ~ c + s z`; returns `(c, s)`.
pub fn fit_affine(sim: &[f64], target: &[f64]) -> Result<(f64, f64)> {
    if sim.len() != target.len() || sim.len() < 2 {
        return Err(Error::ShapeMismatch("affine refit needs equal lengths >= 2".into()));
    }
    let n = sim.len() as f64;
    let mz = sim.iter().sum::<f64>() / n;
    let my = target.iter().sum::<f64>() / n;
    let var: f64 = sim.iter().map(|z| (z - mz).powi(2)).sum();
    let cov: f64 = sim.iter().zip(target).map(|(z, y)| (z - mz) * (y - my)).sum();
    let energy: f64 = sim.iter().map(|z| z * z).sum();
    if !(var > 1e-20 * energy) || var == 0.0 {
        return Err(Error::DegenerateFit("simulated trace is constant".into()));
    }
    let s = cov / var;
    Ok((my - s * mz, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    pub lambda_b: f64,
    pub width_targets: [f64; 5],
    pub width_weights: [f64; 5],
    pub lambda_a: f64,
    pub lambda_ord: f64,
    pub margin: f64,
    pub lambda_s: f64,
    pub softplus_eps: f64,
    pub max_iters: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub warmup: usize,
    pub polish_iters: usize,
    /// Stop once the fidelity term falls to this level.
    pub mse_tol: f64,
    pub grad_mode: GradMode,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            lambda_b: 5e-3,
            width_targets: [0.20, 0.08, 0.10, 0.08, 0.32],
            width_weights: [1.0, 1.0, 1.0, 1.0, 2.0],
            lambda_a: 4e-4,
            lambda_ord: 1e-4,
            margin: 0.05,
            lambda_s: 1e-6,
            softplus_eps: 1e-3,
            max_iters: 2000,
            lr: 0.02,
            lr_min: 0.002,
            warmup: 50,
            polish_iters: 50,
            mse_tol: 1e-12,
            grad_mode: GradMode::Analytic,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_b, self.lambda_a, self.lambda_ord, self.lambda_s, self.margin];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.width_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Invalid("calibration weights and margin must be >= 0".into()));
        }
        if !(self.softplus_eps > 0.0) {
            return Err(Error::Invalid("softplus_eps must be > 0".into()));
        }
        if self.width_targets.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Invalid("width targets must be > 0".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0) {
            return Err(Error::Invalid("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Value of every calibration loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mse: f64,
    pub scale: f64,
    pub width: f64,
    pub amp: f64,
    pub ord: f64,
    pub total: f64,
}

/// Gradient with respect to the natural parameters (phases, amplitudes,
/// widths) and the angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamGradient {
    pub theta: [f64; 5],
    pub a: [f64; 5],
    pub b: [f64; 5],
    pub omega: f64,
}

impl ParamGradient {
    pub const LEN: usize = 16;

    pub fn to_vec(&self) -> Vec<f64> {
        self.theta
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .chain(std::iter::once(&self.omega))
            .copied()
            .collect()
    }

    fn from_slice(g: &[f64]) -> Self {
        let mut out = Self {
            theta: [0.0; 5],
            a: [0.0; 5],
            b: [0.0; 5],
            omega: g[15],
        };
        out.theta.copy_from_slice(&g[0..5]);
        out.a.copy_from_slice(&g[5..10]);
        out.b.copy_from_slice(&g[10..15]);
        out
    }
}

fn prior_terms(params: &WaveParams, s: f64, config: &CalibConfig) -> (f64, f64, f64, f64) {
    let scale = config.lambda_s * s * s;
    let width = config.lambda_b
        * (0..5)
            .map(|i| config.width_weights[i] * (params.b[i] - config.width_targets[i]).powi(2))
            .sum::<f64>();
    let amp = config.lambda_a * params.a.iter().map(|a| a * a).sum::<f64>();
    let ord = config.lambda_ord
        * params
            .theta
            .windows(2)
            .map(|w| (w[0] - w[1] + config.margin).max(0.0))
            .sum::<f64>();
    (scale, width, amp, ord)
}

fn check_target(target: &[f64], fs: f64) -> Result<()> {
    let lc = beat_len(fs);
    if target.len() != lc {
        return Err(Error::ShapeMismatch(format!(
            "target has {} samples, expected {lc} at {fs} Hz",
            target.len()
        )));
    }
    if let Some(pos) = target.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    Ok(())
}

fn loss_from_trace(
    z: &[f64],
    params: &WaveParams,
    target: &[f64],
    config: &CalibConfig,
) -> Result<(LossTerms, TrendProjection)> {
    let proj = trend_projection(z, target)?;
    let mse = proj.fit.residual_sse / target.len() as f64;
    let (scale, width, amp, ord) = prior_terms(params, proj.fit.s, config);
    let terms = LossTerms {
        mse,
        scale,
        width,
        amp,
        ord,
        total: mse + scale + width + amp + ord,
    };
    Ok((terms, proj))
}

/// Calibration objective for a parameter set against a crop-length target.
pub fn calib_loss(
    params: &WaveParams,
    target: &[f64],
    fs: f64,
    config: &CalibConfig,
) -> Result<LossTerms> {
    check_target(target, fs)?;
    let traj = integrate_beat(params, fs)?;
    Ok(loss_from_trace(&traj.z, params, target, config)?.0)
}

/// Beat voltage together with `dz_l / dp` for the sixteen parameters
/// (theta, a, b, omega), propagated through each Euler update.
pub struct BeatSensitivity {
    pub z: Vec<f64>,
    /// Row `l` holds the derivatives of sample `l`.
    pub dz: Vec<[f64; 16]>,
}

pub fn beat_sensitivity(params: &WaveParams, fs: f64) -> Result<BeatSensitivity> {
    let (pre, post) = beat_window(fs);
    let n = pre + post;
    let h = 1.0 / fs;
    let lead_in = pre as f64 / fs;
    let omega = params.omega;
    let phi0 = params.theta[R_WAVE] - omega * lead_in;
    let (mut x, mut y, mut z) = (phi0.cos(), phi0.sin(), 0.0);
    // sensitivity rows for x, y, z
    let mut sx = [0.0; 16];
    let mut sy = [0.0; 16];
    let mut sz = [0.0; 16];
    sx[R_WAVE] = -phi0.sin();
    sy[R_WAVE] = phi0.cos();
    sx[15] = phi0.sin() * lead_in;
    sy[15] = -phi0.cos() * lead_in;

    let mut out = BeatSensitivity {
        z: Vec::with_capacity(n),
        dz: Vec::with_capacity(n),
    };
    for l in 0..n {
        out.z.push(z);
        out.dz.push(sz);
        if l + 1 == n {
            break;
        }
        let t = l as f64 * h;
        let r = x.hypot(y);
        let alpha = 1.0 - r;
        let phase = y.atan2(x);

        let mut kick = 0.0;
        let mut dkick_dphase = 0.0;
        let mut dfz = [0.0; 16];
        for i in 0..5 {
            let d = wrap_phase(phase - params.theta[i]);
            let b = params.b[i];
            let a = params.a[i];
            let e = (-d * d / (2.0 * b * b)).exp();
            kick -= a * d * e;
            let dg_dd = -a * e * (1.0 - d * d / (b * b));
            dkick_dphase += dg_dd;
            dfz[i] = -dg_dd;
            dfz[5 + i] = -d * e;
            dfz[10 + i] = -a * d * e * d * d / (b * b * b);
        }
        let fx = alpha * x - omega * y;
        let fy = alpha * y + omega * x;
        let fz = kick - (z - params.baseline(t));

        let r2 = r * r;
        let jxx = 1.0 - r - x * x / r;
        let jxy = -x * y / r - omega;
        let jyx = -x * y / r + omega;
        let jyy = 1.0 - r - y * y / r;
        let jzx = dkick_dphase * (-y / r2);
        let jzy = dkick_dphase * (x / r2);

        let mut nx = [0.0; 16];
        let mut ny = [0.0; 16];
        let mut nz = [0.0; 16];
        for p in 0..16 {
            let mut gx = jxx * sx[p] + jxy * sy[p];
            let mut gy = jyx * sx[p] + jyy * sy[p];
            let gz = jzx * sx[p] + jzy * sy[p] - sz[p] + dfz[p];
            if p == 15 {
                gx -= y;
                gy += x;
            }
            nx[p] = sx[p] + h * gx;
            ny[p] = sy[p] + h * gy;
            nz[p] = sz[p] + h * gz;
        }
        sx = nx;
        sy = ny;
        sz = nz;
        x += fx * h;
        y += fy * h;
        z += fz * h;
        if ![x, y, z].iter().all(|v| v.is_finite() && v.abs() <= 1e6) {
            return Err(Error::Divergence { step: l + 1 });
        }
    }
    Ok(out)
}

/// `dL/dz` for the aligned fidelity and scale terms.
fn loss_wrt_trace(proj: &TrendProjection, target: &[f64], config: &CalibConfig) -> Vec<f64> {
    let n = target.len() as f64;
    let s = proj.fit.s;
    proj.proj_target
        .iter()
        .zip(&proj.proj_sim)
        .map(|(py, pz)| {
            let resid = py - s * pz; // y - yhat
            let ds_dz = (py - 2.0 * s * pz) / proj.denom;
            -2.0 / n * s * resid + config.lambda_s * 2.0 * s * ds_dz
        })
        .collect()
}

fn prior_gradient(params: &WaveParams, config: &CalibConfig, g: &mut [f64]) {
    for w in 0..4 {
        if params.theta[w] - params.theta[w + 1] + config.margin > 0.0 {
            g[w] += config.lambda_ord;
            g[w + 1] -= config.lambda_ord;
        }
    }
    for i in 0..5 {
        g[5 + i] += 2.0 * config.lambda_a * params.a[i];
        g[10 + i] += 2.0
            * config.lambda_b
            * config.width_weights[i]
            * (params.b[i] - config.width_targets[i]);
    }
}

fn analytic_gradient(
    params: &WaveParams,
    target: &[f64],
    fs: f64,
    config: &CalibConfig,
) -> Result<(LossTerms, [f64; 16])> {
    let sens = beat_sensitivity(params, fs)?;
    let (terms, proj) = loss_from_trace(&sens.z, params, target, config)?;
    let dl_dz = loss_wrt_trace(&proj, target, config);
    let mut g = [0.0; 16];
    for (w, row) in dl_dz.iter().zip(&sens.dz) {
        for p in 0..16 {
            g[p] += w * row[p];
        }
    }
    prior_gradient(params, config, &mut g);
    Ok((terms, g))
}

fn param_slot(params: &mut WaveParams, p: usize) -> &mut f64 {
    match p {
        0..=4 => &mut params.theta[p],
        5..=9 => &mut params.a[p - 5],
        10..=14 => &mut params.b[p - 10],
        _ => &mut params.omega,
    }
}

fn finite_difference_gradient(
    params: &WaveParams,
    target: &[f64],
    fs: f64,
    config: &CalibConfig,
) -> Result<[f64; 16]> {
    let mut g = [0.0; 16];
    for (p, slot) in g.iter_mut().enumerate() {
        let base = *param_slot(&mut params.clone(), p);
        let step = (1e-5 * base.abs()).max(1e-7);
        let mut hi = params.clone();
        *param_slot(&mut hi, p) = base + step;
        let mut lo = params.clone();
        *param_slot(&mut lo, p) = base - step;
        let f_hi = calib_loss(&hi, target, fs, config)?.total;
        let f_lo = calib_loss(&lo, target, fs, config)?.total;
        *slot = (f_hi - f_lo) / (2.0 * step);
    }
    Ok(g)
}

/// Gradient of [`calib_loss`] using the configured [`GradMode`].
pub fn calib_grad(
    params: &WaveParams,
    target: &[f64],
    fs: f64,
    config: &CalibConfig,
) -> Result<ParamGradient> {
    check_target(target, fs)?;
    let g = match config.grad_mode {
        GradMode::Analytic => analytic_gradient(params, target, fs, config)?.1,
        GradMode::FiniteDifference => finite_difference_gradient(params, target, fs, config)?,
    };
    Ok(ParamGradient::from_slice(&g))
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Unconstrained optimisation coordinates: raw phases, amplitudes, raw
/// widths and the global phase shift.
#[derive(Debug, Clone, PartialEq)]
struct Coordinates {
    raw_theta: [f64; 5],
    a: [f64; 5],
    raw_b: [f64; 5],
    shift: f64,
}

const N_COORDS: usize = 16;

impl Coordinates {
    fn from_params(params: &WaveParams, eps: f64) -> Self {
        let mut raw_b = [0.0; 5];
        for (rb, b) in raw_b.iter_mut().zip(&params.b) {
            *rb = inverse_softplus((b - eps).max(1e-6));
        }
        Self {
            raw_theta: params.theta,
            a: params.a,
            raw_b,
            shift: 0.0,
        }
    }

    fn to_params(&self, template: &WaveParams, eps: f64) -> WaveParams {
        let mut p = template.clone();
        for i in 0..5 {
            p.theta[i] = wrap_phase(self.raw_theta[i] + self.shift);
            p.a[i] = self.a[i];
            p.b[i] = softplus(self.raw_b[i]) + eps;
        }
        p
    }

    fn to_vec(&self) -> [f64; N_COORDS] {
        let mut v = [0.0; N_COORDS];
        v[0..5].copy_from_slice(&self.raw_theta);
        v[5..10].copy_from_slice(&self.a);
        v[10..15].copy_from_slice(&self.raw_b);
        v[15] = self.shift;
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        let mut c = Self {
            raw_theta: [0.0; 5],
            a: [0.0; 5],
            raw_b: [0.0; 5],
            shift: v[15],
        };
        c.raw_theta.copy_from_slice(&v[0..5]);
        c.a.copy_from_slice(&v[5..10]);
        c.raw_b.copy_from_slice(&v[10..15]);
        c
    }

    /// Chain a natural-parameter gradient to these coordinates.
    fn pull_back(&self, g: &[f64; 16]) -> [f64; N_COORDS] {
        let mut out = [0.0; N_COORDS];
        for i in 0..5 {
            out[i] = g[i];
            out[15] += g[i];
            out[5 + i] = g[5 + i];
            out[10 + i] = g[10 + i] * sigmoid(self.raw_b[i]);
        }
        out
    }
}

/// Outcome of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibResult {
    pub params: WaveParams,
    pub fit: AlignmentFit,
    pub loss_trace: Vec<f64>,
    pub term_breakdown: LossTerms,
    pub polarity_flipped: bool,
    pub iterations: usize,
    /// RMSE of the aligned fit over the target's range.
    pub nrmse: f64,
}

/// Angular velocity that fits exactly one cycle in a crop at `fs`.
pub fn crop_cycle_omega(fs: f64) -> f64 {
    2.0 * PI * fs / beat_len(fs) as f64
}

/// Aligned NRMSE of a parameter set against a target beat.
pub fn aligned_nrmse(params: &WaveParams, target: &[f64], fs: f64) -> Result<f64> {
    let z = integrate_beat(params, fs)?.z;
    let fit = fit_affine_trend(&z, target)?;
    Ok(nrmse_of_fit(&fit, target))
}

fn nrmse_of_fit(fit: &AlignmentFit, target: &[f64]) -> f64 {
    let (lo, hi) = target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let rmse = (fit.residual_sse / target.len() as f64).sqrt();
    if hi > lo {
        rmse / (hi - lo)
    } else {
        f64::INFINITY
    }
}

fn cosine_lr(iter: usize, config: &CalibConfig) -> f64 {
    if iter < config.warmup {
        return config.lr * (iter + 1) as f64 / config.warmup as f64;
    }
    let span = config.max_iters.saturating_sub(config.warmup).max(1) as f64;
    let progress = ((iter - config.warmup) as f64 / span).min(1.0);
    config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + (PI * progress).cos())
}

struct Evaluation {
    terms: LossTerms,
    grad: [f64; N_COORDS],
}

fn evaluate(
    coords: &Coordinates,
    template: &WaveParams,
    target: &[f64],
    fs: f64,
    config: &CalibConfig,
) -> Result<Evaluation> {
    let params = coords.to_params(template, config.softplus_eps);
    let (terms, g) = match config.grad_mode {
        GradMode::Analytic => analytic_gradient(&params, target, fs, config)?,
        GradMode::FiniteDifference => {
            let terms = calib_loss(&params, target, fs, config)?;
            (terms, finite_difference_gradient(&params, target, fs, config)?)
        }
    };
    if !terms.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::CalibrationFailed("non-finite loss or gradient".into()));
    }
    Ok(Evaluation {
        terms,
        grad: coords.pull_back(&g),
    })
}

/// Calibrate starting from the built-in template for `lead`.
pub fn calibrate(
    target: &[f64],
    fs: f64,
    class_label: &str,
    lead: Lead,
    config: &CalibConfig,
) -> Result<CalibResult> {
    calibrate_from(target, fs, &WaveParams::mcsharry(class_label, lead), config)
}

/// Calibrate from an explicit initial parameter set.
///
/// Runs Adam with linear warmup and cosine step decay, then a damped
/// Gauss-Newton polish, and returns the best parameters seen. The angular
/// velocity is pinned to one cycle per crop.
pub fn calibrate_from(
    target: &[f64],
    fs: f64,
    init: &WaveParams,
    config: &CalibConfig,
) -> Result<CalibResult> {
    config.validate()?;
    check_target(target, fs)?;
    let mut template = init.clone();
    template.omega = crop_cycle_omega(fs);
    template.validate()?;

    let mut coords = Coordinates::from_params(&template, config.softplus_eps);
    rescale_amplitudes(&mut coords, &template, target, fs, config);
    let first = evaluate(&coords, &template, target, fs, config).map_err(|e| {
        Error::CalibrationFailed(format!("initial parameters give no finite loss: {e}"))
    })?;

    let mut trace = vec![first.terms.total];
    let mut best = (first.terms, coords.clone());
    let mut current = first;
    let mut m = [0.0; N_COORDS];
    let mut v = [0.0; N_COORDS];
    let (beta1, beta2, adam_eps) = (0.9, 0.999, 1e-8);
    let mut iterations = 0;

    let mut converged = current.terms.mse <= config.mse_tol;
    while !converged && iterations < config.max_iters {
        let lr = cosine_lr(iterations, config);
        iterations += 1;
        let t = iterations as i32;
        let mut u = coords.to_vec();
        for k in 0..N_COORDS {
            let g = current.grad[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            let m_hat = m[k] / (1.0 - beta1.powi(t));
            let v_hat = v[k] / (1.0 - beta2.powi(t));
            u[k] -= lr * m_hat / (v_hat.sqrt() + adam_eps);
        }
        let candidate = Coordinates::from_vec(&u);
        match evaluate(&candidate, &template, target, fs, config) {
            Ok(eval) => {
                coords = candidate;
                trace.push(eval.terms.total);
                if eval.terms.total < best.0.total {
                    best = (eval.terms, coords.clone());
                }
                converged = eval.terms.mse <= config.mse_tol;
                current = eval;
            }
            Err(_) => {
                // step left the stable region: restart from the best point
                coords = best.1.clone();
                current = evaluate(&coords, &template, target, fs, config)?;
                m = [0.0; N_COORDS];
                v = [0.0; N_COORDS];
            }
        }
    }

    if !converged && config.polish_iters > 0 {
        let polished = gauss_newton_polish(&best.1, &template, target, fs, config, &mut trace)?;
        if polished.0.total < best.0.total {
            best = polished;
        }
    }

    let params = best.1.to_params(&template, config.softplus_eps);
    let z = integrate_beat(&params, fs)?.z;
    let fit = fit_affine_trend(&z, target)?;
    Ok(CalibResult {
        params,
        fit,
        loss_trace: trace,
        term_breakdown: best.0,
        polarity_flipped: false,
        iterations,
        nrmse: nrmse_of_fit(&fit, target),
    })
}

/// Scaling every amplitude by k scales the voltage by k (with the baseline
/// off), so the amplitude penalty and the scale penalty can be balanced in
/// closed form. The rescale is kept only if the objective drops.
fn rescale_amplitudes(
    coords: &mut Coordinates,
    template: &WaveParams,
    target: &[f64],
    fs: f64,
    config: &CalibConfig,
) {
    let params = coords.to_params(template, config.softplus_eps);
    let energy: f64 = params.a.iter().map(|a| a * a).sum();
    if config.lambda_a <= 0.0 || config.lambda_s <= 0.0 || energy == 0.0 {
        return;
    }
    let Ok(before) = calib_loss(&params, target, fs, config) else {
        return;
    };
    let Ok(z) = integrate_beat(&params, fs) else {
        return;
    };
    let Ok(fit) = fit_affine_trend(&z.z, target) else {
        return;
    };
    let k = (config.lambda_s * fit.s * fit.s / (config.lambda_a * energy)).powf(0.25);
    if !(k.is_finite() && k > 0.0) {
        return;
    }
    let mut cand = coords.clone();
    for a in cand.a.iter_mut() {
        *a *= k;
    }
    let cand_params = cand.to_params(template, config.softplus_eps);
    if let Ok(after) = calib_loss(&cand_params, target, fs, config) {
        if after.total < before.total {
            *coords = cand;
        }
    }
}

/// Levenberg-damped Gauss-Newton on the stacked residuals of the fidelity
/// and quadratic prior terms, with (c, s, b) as joint unknowns. Steps are
/// accepted only if the exact objective (ordering hinge included) drops.
fn gauss_newton_polish(
    start: &Coordinates,
    template: &WaveParams,
    target: &[f64],
    fs: f64,
    config: &CalibConfig,
    trace: &mut Vec<f64>,
) -> Result<(LossTerms, Coordinates)> {
    let n = target.len();
    let tau = centred_time(n);
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    // the global shift leaves the fidelity term unchanged, so it stays fixed
    let n_shape = 15;
    let n_var = n_shape + 3;
    let n_res = n + 1 + 5 + 5;

    let mut coords = start.clone();
    let mut params = coords.to_params(template, config.softplus_eps);
    let mut terms = calib_loss(&params, target, fs, config)?;
    let mut mu = 1e-3;

    for _ in 0..config.polish_iters {
        let sens = beat_sensitivity(&params, fs)?;
        let fit = fit_affine_trend(&sens.z, target)?;
        let g_b: Vec<f64> = coords.raw_b.iter().map(|&rb| sigmoid(rb)).collect();

        let mut jac = DMatrix::<f64>::zeros(n_res, n_var);
        let mut res = DVector::<f64>::zeros(n_res);
        for t in 0..n {
            let yhat = fit.c + fit.s * sens.z[t] + fit.b * tau[t];
            res[t] = (yhat - target[t]) * inv_sqrt_n;
            let row = &sens.dz[t];
            for p in 0..5 {
                jac[(t, p)] = fit.s * row[p] * inv_sqrt_n;
                jac[(t, 5 + p)] = fit.s * row[5 + p] * inv_sqrt_n;
                jac[(t, 10 + p)] = fit.s * row[10 + p] * g_b[p] * inv_sqrt_n;
            }
            jac[(t, n_shape)] = inv_sqrt_n;
            jac[(t, n_shape + 1)] = sens.z[t] * inv_sqrt_n;
            jac[(t, n_shape + 2)] = tau[t] * inv_sqrt_n;
        }
        let ls = config.lambda_s.sqrt();
        res[n] = ls * fit.s;
        jac[(n, n_shape + 1)] = ls;
        for i in 0..5 {
            let wb = (config.lambda_b * config.width_weights[i]).sqrt();
            res[n + 1 + i] = wb * (params.b[i] - config.width_targets[i]);
            jac[(n + 1 + i, 10 + i)] = wb * g_b[i];
            let la = config.lambda_a.sqrt();
            res[n + 6 + i] = la * params.a[i];
            jac[(n + 6 + i, 5 + i)] = la;
        }

        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let max_diag = (0..n_var).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let mut accepted = false;
        for _ in 0..8 {
            let mut lhs = jtj.clone();
            for i in 0..n_var {
                lhs[(i, i)] += mu * (jtj[(i, i)] + 1e-12 * max_diag) + 1e-300;
            }
            let Some(chol) = lhs.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let mut u = coords.to_vec();
            for k in 0..n_shape {
                u[k] += step[k];
            }
            let cand = Coordinates::from_vec(&u);
            let cand_params = cand.to_params(template, config.softplus_eps);
            match calib_loss(&cand_params, target, fs, config) {
                Ok(t) if t.total.is_finite() && t.total < terms.total => {
                    coords = cand;
                    params = cand_params;
                    terms = t;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        trace.push(terms.total);
        if !accepted {
            break;
        }
    }
    Ok((terms, coords))
}

/// Flip all amplitudes once if the slope-free refit has a negative scale.
pub fn canonicalize_polarity(
    result: &CalibResult,
    target: &[f64],
    fs: f64,
) -> Result<CalibResult> {
    let z = simulate_beat(&result.params, fs)?.z;
    let (_, s) = fit_affine(&z, target)?;
    if s >= 0.0 {
        return Ok(result.clone());
    }
    let mut out = result.clone();
    for a in out.params.a.iter_mut() {
        *a = -*a;
    }
    let z = simulate_beat(&out.params, fs)?.z;
    out.fit = fit_affine_trend(&z, target)?;
    out.polarity_flipped = true;
    Ok(out)
}
