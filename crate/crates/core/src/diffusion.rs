//! Closed-form denoising-diffusion machinery: noise schedules, forward
//! noising, clean-signal recovery, posterior means and an ancestral sampler
//! driven by an injected noise predictor.

use std::f64::consts::PI;

use ndarray::{ArrayD, IxDyn, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Tensor = ArrayD<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Per-step tables; entry `t - 1` belongs to step `t` in `1..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub noise_level: Vec<f64>,
}

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Largest per-step beta the cosine schedule may take.
pub const COSINE_MAX_BETA: f64 = 0.999;

/// Build a schedule. The cosine kind ignores `beta_start` and `beta_end`.
pub fn build_schedule(kind: ScheduleKind, steps: usize, beta_start: f64, beta_end: f64) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::Invalid("schedule needs at least one step".into()));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
                return Err(Error::Invalid(format!(
                    "linear schedule needs 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
                )));
            }
            if steps == 1 {
                vec![beta_start]
            } else {
                let span = (steps - 1) as f64;
                (0..steps)
                    .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                    .collect()
            }
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let u = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (u * PI / 2.0).cos().powi(2)
            };
            (1..=steps)
                .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).min(COSINE_MAX_BETA))
                .collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let noise_level = alpha_bar.iter().map(|ab| 1.0 - ab).collect();
    Ok(Schedule {
        kind,
        steps,
        beta,
        alpha,
        alpha_bar,
        noise_level,
    })
}

impl Schedule {
    fn check_step(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps {
            return Err(Error::StepOutOfRange { t, max: self.steps });
        }
        Ok(t - 1)
    }

    /// Cumulative product before step `t` (1 at `t = 1`).
    pub fn alpha_bar_prev(&self, t: usize) -> Result<f64> {
        let i = self.check_step(t)?;
        Ok(if i == 0 { 1.0 } else { self.alpha_bar[i - 1] })
    }

    /// Variance of the reverse-step posterior at step `t`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        let i = self.check_step(t)?;
        let prev = self.alpha_bar_prev(t)?;
        Ok((1.0 - prev) / (1.0 - self.alpha_bar[i]) * self.beta[i])
    }

    /// Signal-to-noise ratio `alpha_bar / (1 - alpha_bar)` at step `t`.
    pub fn snr(&self, t: usize) -> Result<f64> {
        let i = self.check_step(t)?;
        Ok(self.alpha_bar[i] / (1.0 - self.alpha_bar[i]))
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_noise(x0: &Tensor, t: usize, eps: &Tensor, schedule: &Schedule) -> Result<Tensor> {
    same_shape(x0, eps, "forward_noise")?;
    let i = schedule.check_step(t)?;
    let (sa, sn) = (schedule.alpha_bar[i].sqrt(), schedule.noise_level[i].sqrt());
    Ok(Zip::from(x0).and(eps).map_collect(|x, e| sa * x + sn * e))
}

/// Clean-signal estimate from a noisy sample and a noise prediction.
pub fn recover_x0(z_t: &Tensor, t: usize, eps_pred: &Tensor, schedule: &Schedule) -> Result<Tensor> {
    same_shape(z_t, eps_pred, "recover_x0")?;
    let i = schedule.check_step(t)?;
    let (sa, sn) = (schedule.alpha_bar[i].sqrt(), schedule.noise_level[i].sqrt());
    Ok(Zip::from(z_t).and(eps_pred).map_collect(|z, e| (z - sn * e) / sa))
}

/// Mean of the reverse step from `z_t` given a noise prediction.
pub fn posterior_mean(z_t: &Tensor, t: usize, eps_pred: &Tensor, schedule: &Schedule) -> Result<Tensor> {
    same_shape(z_t, eps_pred, "posterior_mean")?;
    let i = schedule.check_step(t)?;
    let coef = schedule.beta[i] / schedule.noise_level[i].sqrt();
    let inv = 1.0 / schedule.alpha[i].sqrt();
    Ok(Zip::from(z_t).and(eps_pred).map_collect(|z, e| (z - coef * e) * inv))
}

/// `weight * mean((eps_true - eps_pred)^2)`.
pub fn simple_loss(eps_true: &Tensor, eps_pred: &Tensor, weight: f64) -> Result<f64> {
    same_shape(eps_true, eps_pred, "simple_loss")?;
    if eps_true.is_empty() {
        return Err(Error::Invalid("empty tensors".into()));
    }
    let sse: f64 = Zip::from(eps_true)
        .and(eps_pred)
        .fold(0.0, |acc, a, b| acc + (a - b).powi(2));
    Ok(weight * sse / eps_true.len() as f64)
}

/// Min-SNR loss weight `min(snr, gamma) / snr` for step `t`.
pub fn min_snr_weight(schedule: &Schedule, t: usize, gamma: f64) -> Result<f64> {
    let snr = schedule.snr(t)?;
    Ok(snr.min(gamma) / snr)
}

/// A noise predictor `(z_t, t, context) -> eps`.
pub trait Denoiser<C: ?Sized> {
    fn predict(&self, z_t: &Tensor, t: usize, context: &C) -> Tensor;
}

impl<C: ?Sized, F> Denoiser<C> for F
where
    F: Fn(&Tensor, usize, &C) -> Tensor,
{
    fn predict(&self, z_t: &Tensor, t: usize, context: &C) -> Tensor {
        self(z_t, t, context)
    }
}

/// Conditional predictor with an optional unconditional variant for guidance.
pub struct DenoiserHandle<'a, C: ?Sized> {
    pub conditional: &'a dyn Denoiser<C>,
    pub unconditional: Option<&'a dyn Denoiser<C>>,
    pub guidance_scale: f64,
}

impl<'a, C: ?Sized> DenoiserHandle<'a, C> {
    pub fn new(conditional: &'a dyn Denoiser<C>) -> Self {
        Self {
            conditional,
            unconditional: None,
            guidance_scale: 1.0,
        }
    }

    pub fn guided(conditional: &'a dyn Denoiser<C>, unconditional: &'a dyn Denoiser<C>, scale: f64) -> Self {
        Self {
            conditional,
            unconditional: Some(unconditional),
            guidance_scale: scale,
        }
    }

    /// Guided prediction; checks the output shape against the input.
    pub fn predict(&self, z_t: &Tensor, t: usize, context: &C) -> Result<Tensor> {
        let check = |eps: Tensor, which: &str| -> Result<Tensor> {
            if eps.shape() != z_t.shape() {
                return Err(Error::Contract(format!(
                    "{which} prediction has shape {:?}, input {:?}",
                    eps.shape(),
                    z_t.shape()
                )));
            }
            Ok(eps)
        };
        match self.unconditional {
            None => check(self.conditional.predict(z_t, t, context), "conditional"),
            Some(unc) => {
                let s = self.guidance_scale;
                let eps_u = check(unc.predict(z_t, t, context), "unconditional")?;
                if s == 0.0 {
                    return Ok(eps_u);
                }
                let eps_c = check(self.conditional.predict(z_t, t, context), "conditional")?;
                Ok(guidance_combine(&eps_u, &eps_c, s))
            }
        }
    }
}

/// `(1 - s) eps_u + s eps_c`, exact at `s = 0` and `s = 1`.
pub fn guidance_combine(eps_u: &Tensor, eps_c: &Tensor, s: f64) -> Tensor {
    if s == 1.0 {
        return eps_c.clone();
    }
    Zip::from(eps_u).and(eps_c).map_collect(|u, c| (1.0 - s) * u + s * c)
}

/// State handed to a sampling observer at every reverse step.
pub struct StepView<'a> {
    pub t: usize,
    pub z_t: &'a Tensor,
    pub eps: &'a Tensor,
    pub x0_hat: &'a Tensor,
}

pub fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_shape_simple_fn(IxDyn(shape), || StandardNormal.sample(rng))
}

/// Ancestral sampling from `z_T ~ N(0, I)` down to step 1.
pub fn sample<C: ?Sized>(
    denoiser: &DenoiserHandle<'_, C>,
    schedule: &Schedule,
    shape: &[usize],
    context: &C,
    rng_seed: u64,
) -> Result<Tensor> {
    sample_observed(denoiser, schedule, shape, context, rng_seed, |_| {})
}

/// [`sample`] with a callback at each step.
pub fn sample_observed<C: ?Sized>(
    denoiser: &DenoiserHandle<'_, C>,
    schedule: &Schedule,
    shape: &[usize],
    context: &C,
    rng_seed: u64,
    mut observer: impl FnMut(StepView<'_>),
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut z = standard_normal(shape, &mut rng);
    for t in (1..=schedule.steps).rev() {
        let eps = denoiser.predict(&z, t, context)?;
        let x0_hat = recover_x0(&z, t, &eps, schedule)?;
        observer(StepView {
            t,
            z_t: &z,
            eps: &eps,
            x0_hat: &x0_hat,
        });
        let mean = posterior_mean(&z, t, &eps, schedule)?;
        z = if t > 1 {
            let sigma = schedule.posterior_variance(t)?.sqrt();
            let noise = standard_normal(shape, &mut rng);
            Zip::from(&mean).and(&noise).map_collect(|m, n| m + sigma * n)
        } else {
            mean
        };
    }
    Ok(z)
}

/// Predicts the exact noise that maps a planted clean signal to `z_t`.
pub struct OracleDenoiser<'a> {
    pub schedule: &'a Schedule,
    pub x0: Tensor,
}

impl<C: ?Sized> Denoiser<C> for OracleDenoiser<'_> {
    fn predict(&self, z_t: &Tensor, t: usize, _context: &C) -> Tensor {
        let ab = self.schedule.alpha_bar[t - 1];
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        Zip::from(z_t).and(&self.x0).map_collect(|z, x| (z - sa * x) / sn)
    }
}
