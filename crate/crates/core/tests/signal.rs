use cardiosim_core::format::fmt_g;
use cardiosim_core::io::{read_beat_csv, read_lead_csv, read_signal_csv, write_signal_csv_file};
use cardiosim_core::signal::{
    crop_beat, detect_peaks, detect_r_peaks, estimate_hr, heart_rate_from_peaks, log_spectrum,
    spectrum_bins,
};
use cardiosim_core::simulator::simulate;
use cardiosim_core::{Error, Lead, MultiLeadSignal, SimConfig, WaveParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 500.0;

/// Direct O(n^2) one-sided DFT magnitude of the mean-removed input.
fn naive_log_spectrum(x: &[f64], fs: f64, f_max: f64, eps: f64) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut out = Vec::new();
    let mut k = 0;
    while k as f64 * fs / n as f64 <= f_max {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in x.iter().enumerate() {
            let phi = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re += (v - mean) * phi.cos();
            im += (v - mean) * phi.sin();
        }
        out.push((eps + (re * re + im * im).sqrt()).ln());
        k += 1;
    }
    out
}

fn spike_train(positions: &[usize], len: usize) -> Vec<f64> {
    let sigma = 0.010 * FS;
    (0..len)
        .map(|i| {
            positions
                .iter()
                .map(|&p| (-((i as f64 - p as f64).powi(2)) / (2.0 * sigma * sigma)).exp())
                .sum()
        })
        .collect()
}

#[test]
fn spectrum_matches_naive_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for len in [300usize, 150, 37] {
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = log_spectrum(&x, FS, 40.0, 1e-8).unwrap();
        let oracle = naive_log_spectrum(&x, FS, 40.0, 1e-8);
        assert_eq!(s.values.len(), oracle.len());
        assert_eq!(s.values.len(), spectrum_bins(len, FS, 40.0));
        // magnitudes, since the DC bin sits on the log floor
        for (a, b) in s.values.iter().zip(&oracle) {
            assert!((a.exp() - b.exp()).abs() < 1e-9 * b.exp().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn spectrum_of_bin_aligned_cosine() {
    let x: Vec<f64> = (0..300)
        .map(|j| (2.0 * std::f64::consts::PI * 5.0 * j as f64 / 300.0).cos())
        .collect();
    let eps = 1e-3;
    let s = log_spectrum(&x, FS, 40.0, eps).unwrap();
    for (k, v) in s.values.iter().enumerate() {
        let expect = if k == 5 { (eps + 150.0).ln() } else { eps.ln() };
        assert!((v - expect).abs() < 1e-9, "bin {k}: {v}");
    }
}

#[test]
fn spectrum_ignores_offsets_and_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
    let shifted: Vec<f64> = x.iter().map(|v| v + 4.25).collect();
    let a = log_spectrum(&x, FS, 40.0, 1e-8).unwrap();
    let b = log_spectrum(&shifted, FS, 40.0, 1e-8).unwrap();
    // compare magnitudes: log amplifies rounding residue near the floor
    for (u, v) in a.values.iter().zip(&b.values) {
        assert!((u.exp() - v.exp()).abs() < 1e-9);
    }
    let flat = log_spectrum(&[0.7; 300], FS, 40.0, 1e-8).unwrap();
    assert!(flat.values.iter().all(|v| (*v - 1e-8f64.ln()).abs() < 1e-9));
    assert_eq!(a, log_spectrum(&x, FS, 40.0, 1e-8).unwrap());
    assert!(log_spectrum(&[1.0, f64::NAN, 0.0], FS, 40.0, 1e-8).is_err());
}

#[test]
fn spike_train_peaks_are_found() {
    let truth: Vec<usize> = (0..10).map(|i| 250 + 500 * i).collect();
    let trace = spike_train(&truth, 5000);
    let found = detect_peaks(&trace, FS);
    assert_eq!(found.len(), 10);
    for (f, t) in found.iter().zip(&truth) {
        assert!(f.abs_diff(*t) <= 1, "{f} vs {t}");
    }
    let scaled: Vec<f64> = trace.iter().map(|v| v * 7.5).collect();
    assert_eq!(detect_peaks(&scaled, FS), found);
    assert!(detect_peaks(&vec![0.0; 5000], FS).is_empty());
}

#[test]
fn simulated_peaks_and_heart_rate() {
    let p = WaveParams::mcsharry("n", Lead::II).with_heart_rate(60.0);
    let z = simulate(&p, &SimConfig::default()).unwrap();
    let signal = MultiLeadSignal::broadcast(&z, FS).unwrap();
    let peaks = detect_r_peaks(&signal, Lead::II);
    assert!((9..=11).contains(&peaks.len()), "{}", peaks.len());
    let gaps: Vec<usize> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(gaps.iter().all(|g| (490..=510).contains(g)), "{peaks:?}");
    let hr = estimate_hr(&signal, Lead::II).unwrap();
    assert_eq!(hr, estimate_hr(&signal.offset(2.0), Lead::II).unwrap());
    assert!((hr - 60.0).abs() <= 2.0);
}

#[test]
fn heart_rate_from_regular_gaps() {
    let every = |gap: usize| (0..8).map(|i| 100 + gap * i).collect::<Vec<_>>();
    assert_eq!(heart_rate_from_peaks(&every(500), FS).unwrap(), 60.0);
    assert_eq!(heart_rate_from_peaks(&every(400), FS).unwrap(), 75.0);
    assert!(matches!(heart_rate_from_peaks(&[10], FS), Err(Error::InsufficientBeats { .. })));
}

fn ramp_signal(len: usize, fs: f64) -> MultiLeadSignal {
    let samples = Array2::from_shape_fn((12, len), |(l, j)| l as f64 * 1000.0 + j as f64);
    MultiLeadSignal::new(samples, fs).unwrap()
}

#[test]
fn crop_windows_and_bounds() {
    let sig = ramp_signal(5000, FS);
    let beat = crop_beat(&sig, 500).unwrap();
    assert_eq!(beat.len(), 300);
    assert_eq!(beat.samples()[[0, 0]], 400.0);
    assert_eq!(beat.samples()[[0, 299]], 699.0);
    let err = crop_beat(&sig, 99).unwrap_err();
    assert!(matches!(err, Error::OutOfBounds { side: "lower", .. }));
    let err = crop_beat(&sig, 4801).unwrap_err();
    assert!(matches!(err, Error::OutOfBounds { side: "upper", .. }));
    assert!(crop_beat(&sig, 4800).is_ok());

    let slow = ramp_signal(1000, 250.0);
    let b = crop_beat(&slow, 200).unwrap();
    assert_eq!(b.len(), 150);
    assert_eq!(b.samples()[[3, 0]], 3150.0);
    assert_eq!(b.samples()[[3, 149]], 3299.0);
}

#[test]
fn crop_then_embed_restores_original() {
    let sig = ramp_signal(2000, FS);
    let beat = crop_beat(&sig, 777).unwrap();
    let mut blank = MultiLeadSignal::new(Array2::zeros((12, 2000)), FS).unwrap();
    beat.embed_into(&mut blank).unwrap();
    assert_eq!(
        blank.samples().slice(ndarray::s![.., 677..977]),
        sig.samples().slice(ndarray::s![.., 677..977])
    );
}

#[test]
fn signal_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sig.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples = Array2::from_shape_fn((12, 300), |_| rng.random_range(-2.0..2.0));
    write_signal_csv_file(&path, &samples).unwrap();
    let back = read_signal_csv(&path, FS).unwrap();
    for (a, b) in back.samples().iter().zip(samples.iter()) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3));
        assert_eq!(fmt_g(*a), fmt_g(*b));
    }
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("I,II,III,aVR,aVL,aVF,V1,V2,V3,V4,V5,V6\n"));
    let beat = read_beat_csv(&path, FS).unwrap();
    assert_eq!(beat.len(), 300);
}

#[test]
fn csv_errors_name_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "II,V1\n0.1,0.2\n0.3,abc\n").unwrap();
    let err = read_lead_csv(&path).unwrap_err();
    assert!(err.is_io());
    let msg = err.to_string();
    assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");
    std::fs::write(&path, "II,XX\n0.1,0.2\n").unwrap();
    assert!(read_lead_csv(&path).unwrap_err().to_string().contains("XX"));
    assert!(read_lead_csv(dir.path().join("missing.csv")).unwrap_err().is_io());
    std::fs::write(&path, "II,V1\n0.1,0.2\n").unwrap();
    let table = read_lead_csv(&path).unwrap();
    assert!(table.select(None).is_err());
    assert_eq!(table.select(Some(Lead::V1)).unwrap().1, &[0.2]);
}

#[test]
fn format_matches_printf_g() {
    let cases = [
        (0.0, "0"),
        (1.0, "1"),
        (-2.5, "-2.5"),
        (1e-5, "1e-05"),
        (1.5e-7, "1.5e-07"),
        (0.0001, "0.0001"),
        (123456789.0, "123456789"),
        (1234567891.0, "1.23456789e+09"),
        (std::f64::consts::PI, "3.14159265"),
    ];
    for (v, s) in cases {
        assert_eq!(fmt_g(v), s, "{v}");
    }
}
