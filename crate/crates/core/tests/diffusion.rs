use cardiosim_core::diffusion::{
    build_schedule, forward_noise, posterior_mean, recover_x0, sample, sample_observed, simple_loss,
    standard_normal, DenoiserHandle, OracleDenoiser, ScheduleKind, Tensor,
};
use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear(steps: usize) -> cardiosim_core::diffusion::Schedule {
    build_schedule(ScheduleKind::Linear, steps, 8.5e-4, 1.2e-2).unwrap()
}

#[test]
fn terminal_alpha_bar_matches_direct_product() {
    let s = linear(1000);
    let mut prod = 1.0;
    for i in 0..1000 {
        let beta = 8.5e-4 + (1.2e-2 - 8.5e-4) * i as f64 / 999.0;
        prod *= 1.0 - beta;
    }
    let last = s.alpha_bar[999];
    assert!((last - prod).abs() <= 0.05 * prod);
    assert!((last - 1.6e-3).abs() <= 0.05 * 1.6e-3, "{last}");
}

#[test]
fn linear_tables_are_monotone_and_consistent() {
    let s = linear(1000);
    assert!(s.beta.windows(2).all(|w| w[1] > w[0]));
    assert!(s.alpha.windows(2).all(|w| w[1] < w[0]));
    assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    assert!(s.noise_level.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(s.alpha_bar[0], 1.0 - s.beta[0]);
    for (n, ab) in s.noise_level.iter().zip(&s.alpha_bar) {
        assert_eq!(*n, 1.0 - ab);
    }
}

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    standard_normal(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn forward_noise_closed_forms() {
    let s = linear(100);
    let x0 = tensor(&[4, 8], 1);
    let eps = tensor(&[4, 8], 2);
    let zeros = Tensor::zeros(IxDyn(&[4, 8]));
    for t in [1, 50, 100] {
        let ab = s.alpha_bar[t - 1];
        let a = forward_noise(&x0, t, &zeros, &s).unwrap();
        assert!(a.iter().zip(&x0).all(|(v, x)| (v - ab.sqrt() * x).abs() < 1e-15));
        let b = forward_noise(&zeros, t, &eps, &s).unwrap();
        assert!(b.iter().zip(&eps).all(|(v, e)| (v - (1.0 - ab).sqrt() * e).abs() < 1e-15));
    }
}

#[test]
fn orthogonal_energy_split() {
    let s = linear(1000);
    let x0 = Tensor::from_shape_vec(IxDyn(&[2]), vec![0.6, 0.8]).unwrap();
    let eps = Tensor::from_shape_vec(IxDyn(&[2]), vec![-0.8, 0.6]).unwrap();
    for t in [1, 10, 500, 1000] {
        let z = forward_noise(&x0, t, &eps, &s).unwrap();
        let energy: f64 = z.iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-14);
    }
}

#[test]
fn recovery_inverts_forward_noise() {
    let s = linear(1000);
    let x0 = tensor(&[4, 128], 3);
    let eps = tensor(&[4, 128], 4);
    for t in 1..=1000 {
        let z = forward_noise(&x0, t, &eps, &s).unwrap();
        let back = recover_x0(&z, t, &eps, &s).unwrap();
        let worst = back.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "t {t}: {worst}");
    }
}

#[test]
fn single_step_half_schedule() {
    let s = build_schedule(ScheduleKind::Linear, 1, 0.5, 0.5).unwrap();
    let x0 = tensor(&[5], 5);
    let eps = tensor(&[5], 6);
    let z = x0.mapv(|v| 0.5f64.sqrt() * v) + eps.mapv(|v| 0.5f64.sqrt() * v);
    let back = recover_x0(&z, 1, &eps, &s).unwrap();
    assert!(back.iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn posterior_mean_without_noise() {
    let s = linear(50);
    let z = tensor(&[3, 3], 7);
    let zeros = Tensor::zeros(IxDyn(&[3, 3]));
    for t in [1, 25, 50] {
        let mu = posterior_mean(&z, t, &zeros, &s).unwrap();
        let inv = 1.0 / s.alpha[t - 1].sqrt();
        assert!(mu.iter().zip(&z).all(|(m, v)| (m - v * inv).abs() < 1e-15));
    }
}

#[test]
fn oracle_sampling_recovers_planted_signal() {
    for steps in [1, 10, 100, 1000] {
        let s = linear(steps);
        let x0 = tensor(&[4, 32], 8);
        let oracle = OracleDenoiser { schedule: &s, x0: x0.clone() };
        let handle = DenoiserHandle::<()>::new(&oracle);
        let mut worst = 0.0f64;
        let out = sample_observed(&handle, &s, &[4, 32], &(), 99, |view| {
            let dev = view.x0_hat.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(dev);
        })
        .unwrap();
        assert!(worst <= 1e-6, "T {steps}: {worst}");
        let final_dev = out.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(final_dev <= 1e-6, "T {steps}: final {final_dev}");
    }
}

#[test]
fn zero_guidance_is_unconditional_bit_for_bit() {
    let s = linear(100);
    let uncond = |z: &Tensor, t: usize, _: &()| z.mapv(|v| 0.3 * v + 0.01 * t as f64);
    let cond = |z: &Tensor, _: usize, _: &()| z.mapv(|v| -0.7 * v.sin());
    let plain = sample(&DenoiserHandle::new(&uncond), &s, &[2, 16], &(), 5).unwrap();
    let guided = sample(&DenoiserHandle::guided(&cond, &uncond, 0.0), &s, &[2, 16], &(), 5).unwrap();
    assert_eq!(plain, guided);
    let full = sample(&DenoiserHandle::guided(&cond, &uncond, 1.0), &s, &[2, 16], &(), 5).unwrap();
    let cond_only = sample(&DenoiserHandle::new(&cond), &s, &[2, 16], &(), 5).unwrap();
    assert_eq!(full, cond_only);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let s = linear(20);
    let den = |z: &Tensor, _: usize, _: &()| z.mapv(|v| 0.5 * v);
    let h = DenoiserHandle::new(&den);
    let a = sample(&h, &s, &[8], &(), 42).unwrap();
    let b = sample(&h, &s, &[8], &(), 42).unwrap();
    let c = sample(&h, &s, &[8], &(), 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn shape_violation_is_a_contract_error() {
    let s = linear(5);
    let bad = |_: &Tensor, _: usize, _: &()| Tensor::zeros(IxDyn(&[3]));
    let err = sample(&DenoiserHandle::new(&bad), &s, &[4], &(), 0).unwrap_err();
    assert!(matches!(err, cardiosim_core::Error::Contract(_)));
}

#[test]
fn simple_loss_cases() {
    let a = tensor(&[10], 1);
    assert_eq!(simple_loss(&a, &a, 1.0).unwrap(), 0.0);
    let b = a.mapv(|v| v + 1.0);
    assert!((simple_loss(&a, &b, 1.0).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(simple_loss(&a, &b, 0.0).unwrap(), 0.0);
    assert!(simple_loss(&a, &tensor(&[11], 1), 1.0).is_err());
}
