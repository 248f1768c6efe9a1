use cardiosim_core::constraints::{
    combine_losses, euler_loss, euler_loss_registry, interlead_loss, interlead_loss_terms,
    spectral_loss, BandWeights, LossWeights, SpectralConfig, FRONTAL_IDENTITIES,
};
use cardiosim_core::simulator::simulate_beat;
use cardiosim_core::{Beat, Lead, ParamRegistry, WaveParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FS: f64 = 500.0;

fn random_params(lead: Lead, rng: &mut ChaCha8Rng) -> WaveParams {
    let mut p = WaveParams::mcsharry("rand", lead);
    for i in 0..5 {
        p.a[i] *= 1.0 + rng.random_range(-0.3..0.3);
        p.b[i] *= 1.0 + rng.random_range(-0.3..0.3);
        p.theta[i] += rng.random_range(-0.05..0.05);
    }
    p.omega *= rng.random_range(0.8..1.6);
    p
}

fn self_consistent_beat(params: &[WaveParams]) -> Beat {
    let leads: Vec<Vec<f64>> = params.iter().map(|p| simulate_beat(p, FS).unwrap().z).collect();
    Beat::from_leads(&leads, FS).unwrap()
}

fn with_noise(beat: &Beat, sigma: f64, seed: u64) -> Beat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = beat.clone();
    out.samples_mut()
        .mapv_inplace(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    out
}

#[test]
fn euler_loss_vanishes_on_own_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let params: Vec<WaveParams> = Lead::ALL.iter().map(|&l| random_params(l, &mut rng)).collect();
        let beat = self_consistent_beat(&params);
        let loss = euler_loss(&beat, &params, FS).unwrap();
        assert!(loss <= 1e-10, "{loss}");
    }
}

#[test]
fn euler_loss_is_zero_on_flat_input() {
    let mut params: Vec<WaveParams> = Lead::ALL.iter().map(|&l| WaveParams::mcsharry("z", l)).collect();
    for p in params.iter_mut() {
        p.a = [0.0; 5];
    }
    let beat = Beat::new(Array2::zeros((12, 300)), 100, FS).unwrap();
    assert_eq!(euler_loss(&beat, &params, FS).unwrap(), 0.0);
}

#[test]
fn euler_loss_grows_with_noise() {
    let params: Vec<WaveParams> = Lead::ALL.iter().map(|&l| WaveParams::mcsharry("n", l)).collect();
    let beat = self_consistent_beat(&params);
    for seed in 0..20 {
        let small = euler_loss(&with_noise(&beat, 0.01, seed), &params, FS).unwrap();
        let large = euler_loss(&with_noise(&beat, 0.05, 1000 + seed), &params, FS).unwrap();
        assert!(large > small, "seed {seed}: {small} vs {large}");
    }
}

#[test]
fn euler_loss_matches_hand_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params: Vec<WaveParams> = Lead::ALL.iter().map(|&l| random_params(l, &mut rng)).collect();
    let beat = with_noise(&self_consistent_beat(&params), 0.02, 9);
    let mut total = 0.0;
    for (row, p) in params.iter().enumerate() {
        let traj = simulate_beat(p, FS).unwrap();
        let h = beat.samples().row(row);
        for l in 0..h.len() - 1 {
            let phase = traj.y[l].atan2(traj.x[l]);
            let mut f = -h[l];
            for i in 0..5 {
                let d = cardiosim_core::simulator::wrap_phase(phase - p.theta[i]);
                f -= p.a[i] * d * (-d * d / (2.0 * p.b[i] * p.b[i])).exp();
            }
            total += ((h[l + 1] - h[l]) * FS - f).powi(2);
        }
    }
    total /= 12.0 * 299.0;
    let lib = euler_loss(&beat, &params, FS).unwrap();
    assert!((lib - total).abs() <= 1e-12 * total, "{lib} vs {total}");
}

#[test]
fn euler_loss_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params: Vec<WaveParams> = Lead::ALL.iter().map(|&l| random_params(l, &mut rng)).collect();
    let beat = with_noise(&self_consistent_beat(&params), 0.02, 4);
    let perm = [5, 3, 11, 0, 7, 1, 9, 2, 10, 4, 6, 8];
    let shuffled_params: Vec<WaveParams> = perm.iter().map(|&i| params[i].clone()).collect();
    let mut samples = Array2::zeros((12, beat.len()));
    for (dst, &src) in perm.iter().enumerate() {
        samples.row_mut(dst).assign(&beat.samples().row(src));
    }
    let shuffled = Beat::new(samples, beat.r_index(), FS).unwrap();
    let a = euler_loss(&beat, &params, FS).unwrap();
    let b = euler_loss(&shuffled, &shuffled_params, FS).unwrap();
    assert!((a - b).abs() <= 1e-12 * a);
}

/// Frontal leads sharing phases, widths and rate, with amplitudes combined
/// so every limb-lead identity holds term by term.
fn constructive_registry() -> ParamRegistry {
    let mut reg = ParamRegistry::new();
    let base = WaveParams::mcsharry("frontal", Lead::II).with_heart_rate(72.0);
    let a2 = base.a;
    let a3 = [0.4, -2.0, 12.0, -4.0, 0.3];
    let combine = |f: &dyn Fn(usize) -> f64| {
        let mut a = [0.0; 5];
        for (i, v) in a.iter_mut().enumerate() {
            *v = f(i);
        }
        a
    };
    let a1 = combine(&|i| a2[i] - a3[i]);
    let amps = [
        (Lead::I, a1),
        (Lead::II, a2),
        (Lead::III, a3),
        (Lead::AVR, combine(&|i| -0.5 * (a1[i] + a2[i]))),
        (Lead::AVL, combine(&|i| 0.5 * (a1[i] - a3[i]))),
        (Lead::AVF, combine(&|i| 0.5 * (a2[i] + a3[i]))),
    ];
    for lead in Lead::ALL {
        let mut p = base.clone();
        p.lead = lead;
        if let Some((_, a)) = amps.iter().find(|(l, _)| *l == lead) {
            p.a = *a;
        }
        reg.insert(p);
    }
    reg
}

fn registry_beat(reg: &ParamRegistry, class: &str) -> Beat {
    self_consistent_beat(&reg.class_leads(class).unwrap())
}

#[test]
fn interlead_constructive_set_is_consistent() {
    let reg = constructive_registry();
    let beat = registry_beat(&reg, "frontal");
    let loss = interlead_loss(&beat, &reg, "frontal", FS).unwrap();
    assert!(loss <= 1e-10, "{loss}");
    let norm = interlead_loss_terms(&beat, &reg, "frontal", FS, true).unwrap();
    assert!(norm.value <= loss);
    assert_eq!(norm.terms.len(), FRONTAL_IDENTITIES.len());
}

#[test]
fn interlead_detects_independent_child() {
    let mut reg = constructive_registry();
    let mut beat = registry_beat(&reg, "frontal");
    let mut other = WaveParams::mcsharry("frontal", Lead::AVF).with_heart_rate(95.0);
    other.a = [0.2, -1.0, 8.0, -3.0, 0.5];
    let independent = simulate_beat(&other, FS).unwrap().z;
    beat.samples_mut()
        .row_mut(Lead::AVF.index())
        .assign(&ndarray::ArrayView1::from(independent.as_slice()));
    reg.insert(other);
    let loss = interlead_loss(&beat, &reg, "frontal", FS).unwrap();
    assert!(loss > 1e-3, "{loss}");
}

#[test]
fn interlead_zero_on_flat_input() {
    let mut reg = ParamRegistry::new();
    for lead in Lead::ALL {
        let mut p = WaveParams::mcsharry("flat", lead);
        p.a = [0.0; 5];
        reg.insert(p);
    }
    let beat = Beat::new(Array2::zeros((12, 300)), 100, FS).unwrap();
    assert_eq!(interlead_loss(&beat, &reg, "flat", FS).unwrap(), 0.0);
}

#[test]
fn interlead_reports_missing_entry() {
    let mut reg = ParamRegistry::new();
    reg.insert(WaveParams::mcsharry("partial", Lead::I));
    let beat = Beat::new(Array2::zeros((12, 300)), 100, FS).unwrap();
    let err = interlead_loss(&beat, &reg, "partial", FS).unwrap_err().to_string();
    assert!(err.contains("partial") && err.contains("II"), "{err}");
}

#[test]
fn interlead_perturbed_child_is_worse() {
    let reg = constructive_registry();
    let beat = registry_beat(&reg, "frontal");
    let clean = interlead_loss(&beat, &reg, "frontal", FS).unwrap();
    for seed in 0..5 {
        let mut noisy = beat.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in noisy.samples_mut().row_mut(Lead::AVL.index()).iter_mut() {
            *v += 0.01 * rng.sample::<f64, _>(StandardNormal);
        }
        assert!(interlead_loss(&noisy, &reg, "frontal", FS).unwrap() >= clean);
    }
}

#[test]
fn euler_registry_matches_explicit_params() {
    let reg = constructive_registry();
    let beat = with_noise(&registry_beat(&reg, "frontal"), 0.01, 5);
    let a = euler_loss_registry(&beat, &reg, "frontal", FS).unwrap();
    let b = euler_loss(&beat, &reg.class_leads("frontal").unwrap(), FS).unwrap();
    assert_eq!(a.value, b);
    let sum: f64 = a.terms.iter().map(|t| t.1).sum();
    assert!((sum - a.value).abs() < 1e-15 * a.value.max(1.0));
}

fn noisy_beat(seed: u64) -> Beat {
    let params: Vec<WaveParams> = Lead::ALL.iter().map(|&l| WaveParams::mcsharry("s", l)).collect();
    with_noise(&self_consistent_beat(&params), 0.01, seed)
}

#[test]
fn spectral_identities() {
    let cfg = SpectralConfig::default();
    let pred = noisy_beat(1);
    let other = noisy_beat(2);
    assert_eq!(spectral_loss(&pred, &[pred.clone()], &cfg).unwrap(), 0.0);
    let zero = SpectralConfig {
        band_weights: BandWeights::Constant { weight: 0.0 },
        ..cfg
    };
    assert_eq!(spectral_loss(&pred, &[other.clone()], &zero).unwrap(), 0.0);
    let alone = spectral_loss(&pred, &[other.clone()], &cfg).unwrap();
    let mixed = spectral_loss(&pred, &[pred.clone(), other.clone()], &cfg).unwrap();
    assert!(alone > 0.0);
    assert!((mixed - alone / 2.0).abs() <= 1e-12 * alone);
    let band = SpectralConfig {
        band_weights: BandWeights::low_band(),
        ..cfg
    };
    assert!(spectral_loss(&pred, &[other.clone()], &band).unwrap() >= alone);
    assert!(spectral_loss(&pred, &[], &cfg).is_err());
}

#[test]
fn combination_is_affine() {
    let w = LossWeights::default();
    let zero = LossWeights {
        lambda_euler: 0.0,
        gamma_interlead: 0.0,
        ..w
    };
    assert_eq!(combine_losses(0.7, 5.0, 9.0, &zero), 0.7);
    assert!((combine_losses(1.0, 2.0, 3.0, &w) - 1.156).abs() < 1e-12);
    let base = combine_losses(1.0, 2.0, 3.0, &w);
    let doubled = combine_losses(1.0, 4.0, 3.0, &w);
    assert!((doubled - base - w.lambda_euler * 2.0).abs() < 1e-15);
}
