//! Waveform containers and the signal substrate: R-peak detection, beat
//! cropping, heart-rate estimation and one-sided log-magnitude spectra.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the twelve standard ECG leads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lead {
    I,
    II,
    III,
    AVR,
    AVL,
    AVF,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl Lead {
    /// Canonical row order of a [`MultiLeadSignal`].
    pub const ALL: [Lead; 12] = [
        Lead::I,
        Lead::II,
        Lead::III,
        Lead::AVR,
        Lead::AVL,
        Lead::AVF,
        Lead::V1,
        Lead::V2,
        Lead::V3,
        Lead::V4,
        Lead::V5,
        Lead::V6,
    ];

    pub const FRONTAL: [Lead; 6] = [Lead::I, Lead::II, Lead::III, Lead::AVR, Lead::AVL, Lead::AVF];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Lead::I => "I",
            Lead::II => "II",
            Lead::III => "III",
            Lead::AVR => "aVR",
            Lead::AVL => "aVL",
            Lead::AVF => "aVF",
            Lead::V1 => "V1",
            Lead::V2 => "V2",
            Lead::V3 => "V3",
            Lead::V4 => "V4",
            Lead::V5 => "V5",
            Lead::V6 => "V6",
        }
    }

    pub fn is_frontal(self) -> bool {
        self.index() < 6
    }
}

impl fmt::Display for Lead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Lead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Lead::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s.trim())
            .ok_or_else(|| Error::UnknownLead(s.to_string()))
    }
}

impl Serialize for Lead {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Lead {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A 12 x L matrix of millivolt samples with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLeadSignal {
    samples: Array2<f64>,
    fs: f64,
}

impl MultiLeadSignal {
    pub fn new(samples: Array2<f64>, fs: f64) -> Result<Self> {
        if samples.nrows() != 12 {
            return Err(Error::ShapeMismatch(format!(
                "expected 12 leads, got {}",
                samples.nrows()
            )));
        }
        if samples.ncols() == 0 {
            return Err(Error::Invalid("signal has no samples".into()));
        }
        check_fs(fs)?;
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { samples, fs })
    }

    /// Build a signal where every lead carries the same trace.
    pub fn broadcast(trace: &[f64], fs: f64) -> Result<Self> {
        let mut samples = Array2::zeros((12, trace.len()));
        for mut row in samples.rows_mut() {
            row.assign(&ArrayView1::from(trace));
        }
        Self::new(samples, fs)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lead(&self, lead: Lead) -> ArrayView1<'_, f64> {
        self.samples.row(lead.index())
    }

    pub fn lead_vec(&self, lead: Lead) -> Vec<f64> {
        self.lead(lead).to_vec()
    }

    /// Add a constant to every sample of every lead.
    pub fn offset(&self, c: f64) -> Self {
        Self {
            samples: &self.samples + c,
            fs: self.fs,
        }
    }
}

fn check_fs(fs: f64) -> Result<()> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Invalid(format!("sampling rate must be > 0, got {fs}")));
    }
    Ok(())
}

/// Samples before and after the R-peak in a beat crop at `fs`.
pub fn beat_window(fs: f64) -> (usize, usize) {
    ((0.2 * fs).round() as usize, (0.4 * fs).round() as usize)
}

/// Number of samples in a single-cycle crop at `fs`.
pub fn beat_len(fs: f64) -> usize {
    let (pre, post) = beat_window(fs);
    pre + post
}

/// A single QRS-aligned cycle cropped from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Beat {
    samples: Array2<f64>,
    r_index: usize,
    fs: f64,
}

impl Beat {
    /// Wrap a 12 x L_c matrix as a beat; `r_index` locates the R-peak in the
    /// parent recording (for synthetic beats, the in-crop offset).
    pub fn new(samples: Array2<f64>, r_index: usize, fs: f64) -> Result<Self> {
        check_fs(fs)?;
        let lc = beat_len(fs);
        if samples.nrows() != 12 || samples.ncols() != lc {
            return Err(Error::ShapeMismatch(format!(
                "beat must be 12 x {lc} at {fs} Hz, got {} x {}",
                samples.nrows(),
                samples.ncols()
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self {
            samples,
            r_index,
            fs,
        })
    }

    /// Assemble a beat from one trace per lead, in [`Lead::ALL`] order.
    pub fn from_leads(leads: &[Vec<f64>], fs: f64) -> Result<Self> {
        if leads.len() != 12 {
            return Err(Error::ShapeMismatch(format!("expected 12 leads, got {}", leads.len())));
        }
        let lc = leads[0].len();
        let mut samples = Array2::zeros((12, lc));
        for (mut row, trace) in samples.rows_mut().into_iter().zip(leads) {
            if trace.len() != lc {
                return Err(Error::ShapeMismatch("leads differ in length".into()));
            }
            row.assign(&ArrayView1::from(trace.as_slice()));
        }
        Self::new(samples, beat_window(fs).0, fs)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut Array2<f64> {
        &mut self.samples
    }

    pub fn r_index(&self) -> usize {
        self.r_index
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lead(&self, lead: Lead) -> ArrayView1<'_, f64> {
        self.samples.row(lead.index())
    }

    /// Write the crop back into `signal` at the columns it was taken from.
    pub fn embed_into(&self, signal: &mut MultiLeadSignal) -> Result<()> {
        let (pre, _) = beat_window(self.fs);
        let start = self
            .r_index
            .checked_sub(pre)
            .ok_or_else(|| Error::OutOfBounds {
                side: "lower",
                detail: format!("r_index {} < {pre}", self.r_index),
            })?;
        if start + self.len() > signal.len() {
            return Err(Error::OutOfBounds {
                side: "upper",
                detail: format!("crop ends at {} > {}", start + self.len(), signal.len()),
            });
        }
        signal
            .samples
            .slice_mut(ndarray::s![.., start..start + self.len()])
            .assign(&self.samples);
        Ok(())
    }
}

/// Crop the window `[r - 0.2 fs, r + 0.4 fs)` around an R-peak.
pub fn crop_beat(signal: &MultiLeadSignal, r_index: usize) -> Result<Beat> {
    let (pre, post) = beat_window(signal.fs);
    if r_index < pre {
        return Err(Error::OutOfBounds {
            side: "lower",
            detail: format!("r_index {r_index} needs to be >= {pre}"),
        });
    }
    if r_index + post > signal.len() {
        return Err(Error::OutOfBounds {
            side: "upper",
            detail: format!(
                "r_index {r_index} + {post} exceeds signal length {}",
                signal.len()
            ),
        });
    }
    let crop = signal
        .samples
        .slice(ndarray::s![.., r_index - pre..r_index + post])
        .to_owned();
    Beat::new(crop, r_index, signal.fs)
}

/// Detect R-peaks on one lead of a recording.
pub fn detect_r_peaks(signal: &MultiLeadSignal, lead: Lead) -> Vec<usize> {
    let trace = signal.lead_vec(lead);
    detect_peaks(&trace, signal.fs)
}

/// Band-emphasised envelope used by the detector: squared central first
/// difference smoothed by a centred 0.1 s moving average.
pub fn qrs_envelope(trace: &[f64], fs: f64) -> Vec<f64> {
    let n = trace.len();
    if n < 3 {
        return vec![0.0; n];
    }
    let mut energy = vec![0.0; n];
    for i in 1..n - 1 {
        let d = 0.5 * (trace[i + 1] - trace[i - 1]);
        energy[i] = d * d;
    }
    let width = ((0.1 * fs).round() as usize).max(1) | 1;
    let half = width / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + energy[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Centred sliding maximum with half-width `half`.
fn sliding_max(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    let mut window: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let hi = (i + half).min(n - 1);
        while next <= hi {
            while let Some(&back) = window.back() {
                if values[back] <= values[next] {
                    window.pop_back();
                } else {
                    break;
                }
            }
            window.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(half);
        while let Some(&front) = window.front() {
            if front < lo {
                window.pop_front();
            } else {
                break;
            }
        }
        *slot = values[*window.front().expect("window never empty")];
    }
    out
}

/// True when the largest deviation from the local mean within `c +- half`
/// sits strictly inside that window. Complexes cut by the recording edge
/// peak on the boundary and are rejected.
fn has_interior_extremum(trace: &[f64], c: usize, half: usize) -> bool {
    let lo = c.saturating_sub(half);
    let hi = (c + half).min(trace.len() - 1);
    let window = &trace[lo..=hi];
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let arg = window
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1 - mean).abs().total_cmp(&(b.1 - mean).abs()))
        .map_or(0, |(i, _)| i);
    arg > 0 && arg < window.len() - 1
}

/// R-peak detection on a single trace.
///
/// Local maxima of [`qrs_envelope`] that reach 0.4 x the envelope maximum
/// within +-1 s are candidates. Candidates whose complex is truncated by the
/// recording edge are dropped; the rest are accepted in order of
/// decreasing envelope height, skipping any within 0.24 s of an accepted
/// peak. Returns indices in increasing order.
pub fn detect_peaks(trace: &[f64], fs: f64) -> Vec<usize> {
    let n = trace.len();
    if n < 3 || !(fs > 0.0) {
        return Vec::new();
    }
    let env = qrs_envelope(trace, fs);
    let thr = sliding_max(&env, fs.round() as usize);
    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| {
            env[i] > 0.0 && env[i] > env[i - 1] && env[i] >= env[i + 1] && env[i] >= 0.4 * thr[i]
        })
        .collect();
    let half = ((0.1 * fs).round() as usize).max(1) / 2;
    candidates.retain(|&c| has_interior_extremum(trace, c, half));
    candidates.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));

    let refractory = (0.24 * fs).ceil() as usize;
    let mut accepted = BTreeSet::new();
    for c in candidates {
        let lo = c.saturating_sub(refractory - 1);
        let clash = accepted.range(lo..c + refractory).next().is_some();
        if !clash {
            accepted.insert(c);
        }
    }
    accepted.into_iter().collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Heart rate in bpm from R-peak indices: 60 fs / median R-R gap.
pub fn heart_rate_from_peaks(peaks: &[usize], fs: f64) -> Result<f64> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientBeats {
            found: peaks.len(),
            needed: 2,
        });
    }
    let mut gaps: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    Ok(60.0 * fs / median(&mut gaps))
}

pub fn estimate_hr(signal: &MultiLeadSignal, lead: Lead) -> Result<f64> {
    heart_rate_from_peaks(&detect_r_peaks(signal, lead), signal.fs)
}

/// One-sided log-magnitude spectrum up to a cutoff frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub bin_hz: f64,
    pub f_max: f64,
    pub epsilon: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|k| k as f64 * self.bin_hz)
    }
}

/// Number of bins k >= 0 with k fs / n <= f_max.
pub fn spectrum_bins(n: usize, fs: f64, f_max: f64) -> usize {
    let mut k = 0;
    while k <= n / 2 && (k as f64) * fs / (n as f64) <= f_max {
        k += 1;
    }
    k
}

/// `log(epsilon + |DFT(x - mean x)|[k])` for every bin up to `f_max`.
///
/// The DFT is evaluated by direct summation so any length works.
pub fn log_spectrum(trace: &[f64], fs: f64, f_max: f64, epsilon: f64) -> Result<Spectrum> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::Invalid(format!("spectrum needs >= 2 samples, got {n}")));
    }
    check_fs(fs)?;
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(f_max > 0.0 && f_max <= fs / 2.0) {
        return Err(Error::Invalid(format!(
            "f_max must lie in (0, fs/2], got {f_max} at fs {fs}"
        )));
    }
    if let Some(pos) = trace.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let mut centred: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    // second pass removes the rounding residue of the first, so a constant
    // input centres to exact zeros
    let residue = centred.iter().sum::<f64>() / n as f64;
    centred.iter_mut().for_each(|v| *v -= residue);

    // twiddles indexed by (k n) mod N keep the phase argument exact
    let (cos_tab, sin_tab): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|m| {
            let phi = 2.0 * PI * m as f64 / n as f64;
            (phi.cos(), phi.sin())
        })
        .unzip();

    let bins = spectrum_bins(n, fs, f_max);
    let values = (0..bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in centred.iter().enumerate() {
                let m = (k * i) % n;
                re += v * cos_tab[m];
                im -= v * sin_tab[m];
            }
            (epsilon + re.hypot(im)).ln()
        })
        .collect();
    Ok(Spectrum {
        values,
        bin_hz: fs / n as f64,
        f_max,
        epsilon,
    })
}
