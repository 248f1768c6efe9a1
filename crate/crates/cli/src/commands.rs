use std::io::Write;
use std::path::{Path, PathBuf};

use cardiosim_core::calibration::{calibrate_from, canonicalize_polarity, CalibConfig};
use cardiosim_core::constraints::{
    euler_loss_registry, interlead_loss_terms, spectral_loss_terms, LossBreakdown, SpectralConfig,
};
use cardiosim_core::diffusion::{build_schedule, sample_observed, DenoiserHandle, OracleDenoiser, Tensor};
use cardiosim_core::format::{fmt_g, to_rounded_json};
use cardiosim_core::io::{
    read_beat_csv, read_embeddings_csv, read_fs_sidecar, read_json, read_lead_csv, read_signal_csv,
    write_lead_csv, write_signal_csv_file,
};
use cardiosim_core::metrics::{evaluate_pairs, frechet, load_pairs, rclip_from_pairs, rfid_from_sets, EmbeddingSet};
use cardiosim_core::retrieval::{build_report, load_profiles, top_k, PatientProfile, QueryMeta, RetrievalConfig};
use cardiosim_core::signal::{beat_window, crop_beat, detect_r_peaks};
use cardiosim_core::simulator::{simulate, simulate_beat};
use cardiosim_core::{Error, Lead, ParamRegistry, Result, SimConfig, WaveParams};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::plot::schedule_svg;

/// Write `text` to `out`, or to standard output when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = to_rounded_json(value).map_err(|e| Error::Invalid(format!("serialising output: {e}")))?;
    emit(out, &text)
}

fn load_registry(path: Option<&Path>) -> Result<ParamRegistry> {
    path.map_or_else(|| Ok(ParamRegistry::builtin()), ParamRegistry::load)
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let registry = load_registry(args.registry.as_deref())?;
    let leads: Vec<Lead> = args.lead.map_or_else(|| Lead::ALL.to_vec(), |l| vec![l]);
    let config = SimConfig {
        fs: args.fs,
        duration_s: args.duration,
        burn_in_s: args.burn_in,
        sub_steps: args.sub_steps,
        ..SimConfig::default()
    };
    if !args.gain.is_finite() {
        return Err(Error::Invalid("--gain must be finite".into()));
    }
    let mut columns = Vec::with_capacity(leads.len());
    for &lead in &leads {
        let mut params = registry.get(&args.class, lead)?.clone();
        if let Some(hr) = args.hr {
            if !(hr.is_finite() && hr > 0.0) {
                return Err(Error::Invalid(format!("--hr must be > 0, got {hr}")));
            }
            params = params.with_heart_rate(hr);
        }
        let trace = if args.beat {
            simulate_beat(&params, args.fs)?.z
        } else {
            simulate(&params, &config)?
        };
        columns.push(trace.into_iter().map(|v| v * args.gain).collect::<Vec<f64>>());
    }
    let cols: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    let mut buf = Vec::new();
    write_lead_csv(&mut buf, &leads, &cols)?;
    emit(args.out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))
}

pub fn calibrate_cmd(args: &CalibrateArgs) -> Result<()> {
    let table = read_lead_csv(&args.beat)?;
    let (lead, target) = table.select(args.lead)?;
    let config: CalibConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => CalibConfig::default(),
    };
    let existing = match &args.registry {
        Some(path) if path.exists() => ParamRegistry::load(path)?,
        Some(_) => ParamRegistry::new(),
        None => ParamRegistry::builtin(),
    };
    let mut init = existing
        .get(&args.class, lead)
        .cloned()
        .or_else(|_| ParamRegistry::builtin().get("default", lead).cloned())
        .unwrap_or_else(|_| WaveParams::mcsharry(&args.class, lead));
    init.class_label = args.class.clone();
    init.lead = lead;

    let fitted = calibrate_from(target, args.fs, &init, &config)?;
    let result = canonicalize_polarity(&fitted, target, args.fs)?;
    if let Some(path) = &args.registry {
        let mut registry = existing;
        registry.insert(result.params.clone());
        let entries: Vec<&WaveParams> = registry.iter().collect();
        emit_json(Some(path), &entries)?;
    }
    emit_json(args.out.as_deref(), &result)
}

pub fn beat_extract_cmd(args: &BeatExtractArgs) -> Result<()> {
    let fs = match (args.fs, &args.fs_sidecar) {
        (Some(fs), _) => fs,
        (None, Some(side)) => read_fs_sidecar(side)?,
        (None, None) => return Err(Error::Invalid("give --fs or --fs-sidecar".into())),
    };
    let signal = read_signal_csv(&args.signal, fs)?;
    let peaks = detect_r_peaks(&signal, args.lead);
    let (pre, post) = beat_window(fs);
    let usable: Vec<usize> = peaks
        .iter()
        .copied()
        .filter(|&r| r >= pre && r + post <= signal.len())
        .collect();
    let r_index = *usable.get(args.index).ok_or_else(|| {
        Error::InsufficientBeats {
            found: usable.len(),
            needed: args.index + 1,
        }
    })?;
    let beat = crop_beat(&signal, r_index)?;
    write_signal_csv_file(&args.out, beat.samples())?;
    emit_json(
        None,
        &json!({
            "r_index": r_index,
            "beat_len": beat.len(),
            "detected_peaks": peaks,
            "in_bounds_peaks": usable,
        }),
    )
}

#[derive(Serialize)]
struct NamedTerm<'a> {
    name: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct LossReport<'a> {
    loss: &'a str,
    value: f64,
    terms: Vec<NamedTerm<'a>>,
}

pub fn loss_cmd(args: &LossArgs) -> Result<()> {
    let beat = read_beat_csv(&args.beat, args.fs)?;
    let (name, breakdown): (&str, LossBreakdown) = match args.kind {
        LossKind::Euler => {
            let registry = load_registry(args.registry.as_deref())?;
            ("euler", euler_loss_registry(&beat, &registry, &args.class, args.fs)?)
        }
        LossKind::Interlead => {
            let registry = load_registry(args.registry.as_deref())?;
            (
                "interlead",
                interlead_loss_terms(&beat, &registry, &args.class, args.fs, args.normalize)?,
            )
        }
        LossKind::Spectral => {
            let config: SpectralConfig = match &args.config {
                Some(path) => read_json(path)?,
                None => SpectralConfig::default(),
            };
            let crops = args
                .crops
                .iter()
                .map(|p| read_beat_csv(p, args.fs))
                .collect::<Result<Vec<_>>>()?;
            ("spectral", spectral_loss_terms(&beat, &crops, &config)?)
        }
    };
    let report = LossReport {
        loss: name,
        value: breakdown.value,
        terms: breakdown
            .terms
            .iter()
            .map(|(n, v)| NamedTerm { name: n, value: *v })
            .collect(),
    };
    emit_json(None, &report)
}

#[derive(Deserialize)]
struct Query {
    #[serde(flatten)]
    profile: PatientProfile,
    #[serde(default)]
    age: Option<f64>,
    #[serde(default)]
    sex: Option<String>,
    #[serde(default)]
    hr: Option<f64>,
    #[serde(default)]
    original_diagnoses: Option<String>,
}

pub fn retrieve_cmd(args: &RetrieveArgs) -> Result<()> {
    let mut config = RetrievalConfig {
        k: args.k,
        ..RetrievalConfig::default()
    };
    if let Some(w) = &args.weights {
        if w.len() != 3 {
            return Err(Error::Invalid(format!("--weights takes 3 values, got {}", w.len())));
        }
        config.lambda_diag = w[0];
        config.lambda_med = w[1];
        config.lambda_proc = w[2];
    }
    config.validate()?;
    let index = load_profiles(&args.index)?;
    let query: Query = read_json(&args.query)?;
    let neighbors = top_k(&query.profile, &index, &config)?;
    let meta = QueryMeta {
        age: query.age,
        sex: query.sex,
        hr: query.hr,
    };
    let diagnoses = query.original_diagnoses.unwrap_or_else(|| {
        query.profile.diag.iter().cloned().collect::<Vec<_>>().join(", ")
    });
    let report = build_report(&meta, &diagnoses, &neighbors, &index)?;
    emit_json(
        None,
        &json!({
            "neighbors": neighbors,
            "report": report.text,
            "prompt": report.prompt,
        }),
    )
}

const AGGREGATION: &str = "per record and lead, then mean over leads, then mean over records";

pub fn metrics_cmd(args: &MetricsArgs) -> Result<()> {
    let signal = match &args.pairs {
        Some(path) => Some(evaluate_pairs(&load_pairs(path, args.fs)?, args.hr_lead)?),
        None => None,
    };
    let embeddings = match (&args.gen_emb, &args.real_emb) {
        (Some(g), Some(r)) => {
            let generated = EmbeddingSet::new(read_embeddings_csv(g)?, "generated")?;
            let real = EmbeddingSet::new(read_embeddings_csv(r)?, "real")?;
            let fid = frechet(&generated, &real)?;
            let (_, fid_real_real, ratio) = rfid_from_sets(&generated, &real)?;
            Some((fid, fid_real_real, ratio))
        }
        (None, None) => None,
        _ => return Err(Error::Invalid("--gen-emb and --real-emb go together".into())),
    };
    let rclip = match &args.clip_sims {
        Some(path) => Some(rclip_from_pairs(&read_embeddings_csv(path)?)?),
        None => None,
    };
    emit_json(
        None,
        &json!({
            "mae": signal.as_ref().map(|s| s.mae),
            "nrmse": signal.as_ref().map(|s| s.nrmse),
            "pearson": signal.as_ref().map(|s| s.pearson),
            "hr_mae": signal.as_ref().map(|s| s.hr_mae),
            "records": signal.as_ref().map(|s| s.records),
            "aggregation": signal.as_ref().map(|_| AGGREGATION),
            "fid": embeddings.map(|e| e.0),
            "fid_real_real": embeddings.map(|e| e.1),
            "rfid": embeddings.map(|e| e.2),
            "rclip": rclip,
        }),
    )
}

pub fn schedule_cmd(args: &ScheduleArgs) -> Result<()> {
    let schedule = build_schedule(args.kind, args.steps, args.beta_start, args.beta_end)?;
    if args.plot.is_some() && args.plot_out.is_none() {
        return Err(Error::Invalid("--plot needs --plot-out".into()));
    }
    let mut csv = String::from("t,beta,alpha,alpha_bar,noise_level\n");
    for i in 0..schedule.steps {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            fmt_g(schedule.beta[i]),
            fmt_g(schedule.alpha[i]),
            fmt_g(schedule.alpha_bar[i]),
            fmt_g(schedule.noise_level[i]),
        ));
    }
    emit(args.out.as_deref(), &csv)?;
    if let (Some(PlotFormat::Svg), Some(path)) = (args.plot, &args.plot_out) {
        emit(Some(path), &schedule_svg(&schedule))?;
    }
    Ok(())
}

pub fn diffuse_demo_cmd(args: &DiffuseDemoArgs) -> Result<()> {
    let schedule = build_schedule(args.kind, args.steps, args.beta_start, args.beta_end)?;
    let registry = ParamRegistry::builtin();
    let mut data = Vec::new();
    let mut len = 0;
    for params in registry.class_leads("default")? {
        let z = simulate_beat(&params, args.fs)?.z;
        len = z.len();
        data.extend(z);
    }
    let x0 = Tensor::from_shape_vec(vec![12, len], data)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let oracle = OracleDenoiser {
        schedule: &schedule,
        x0: x0.clone(),
    };
    let handle = DenoiserHandle::<()>::new(&oracle);
    let mut csv = String::from("t,max_abs_x0_error\n");
    let out = sample_observed(&handle, &schedule, &[12, len], &(), args.seed, |view| {
        let dev = view
            .x0_hat
            .iter()
            .zip(&x0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        csv.push_str(&format!("{},{}\n", view.t, fmt_g(dev)));
    })?;
    let final_dev = out.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    csv.push_str(&format!("final,{}\n", fmt_g(final_dev)));
    emit(args.out.as_deref(), &csv)
}

/// Files read by a command, in argument order, for the manifest digest.
pub fn inputs(command: &Command) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = Vec::new();
    let mut add = |p: &Option<PathBuf>| v.extend(p.iter().cloned());
    match command {
        Command::Simulate(a) => add(&a.registry),
        Command::Calibrate(a) => {
            add(&Some(a.beat.clone()));
            add(&a.config);
            add(&a.registry.clone().filter(|p| p.exists()));
        }
        Command::BeatExtract(a) => {
            add(&Some(a.signal.clone()));
            add(&a.fs_sidecar);
        }
        Command::Loss(a) => {
            add(&Some(a.beat.clone()));
            add(&a.registry);
            add(&a.config);
            for c in &a.crops {
                add(&Some(c.clone()));
            }
        }
        Command::Retrieve(a) => {
            add(&Some(a.index.clone()));
            add(&Some(a.query.clone()));
        }
        Command::Metrics(a) => {
            add(&a.pairs);
            add(&a.gen_emb);
            add(&a.real_emb);
            add(&a.clip_sims);
        }
        Command::Schedule(_) | Command::DiffuseDemo(_) => {}
    }
    v
}

pub fn name(command: &Command) -> &'static str {
    match command {
        Command::Simulate(_) => "simulate",
        Command::Calibrate(_) => "calibrate",
        Command::BeatExtract(_) => "beat-extract",
        Command::Loss(a) => match a.kind {
            LossKind::Euler => "loss euler",
            LossKind::Interlead => "loss interlead",
            LossKind::Spectral => "loss spectral",
        },
        Command::Retrieve(_) => "retrieve",
        Command::Metrics(_) => "metrics",
        Command::Schedule(_) => "schedule",
        Command::DiffuseDemo(_) => "diffuse-demo",
    }
}
