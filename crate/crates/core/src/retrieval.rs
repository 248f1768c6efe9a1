//! Similar-admission retrieval over diagnosis, medication and procedure code
//! sets, plus deterministic templating of the conditioning report.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_g;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub admission_id: String,
    #[serde(default)]
    pub diag: BTreeSet<String>,
    #[serde(default)]
    pub med: BTreeSet<String>,
    #[serde(default)]
    pub proc: BTreeSet<String>,
    #[serde(default)]
    pub ecg_report: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub lambda_diag: f64,
    pub lambda_med: f64,
    pub lambda_proc: f64,
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            lambda_diag: 1.0 / 3.0,
            lambda_med: 1.0 / 3.0,
            lambda_proc: 1.0 / 3.0,
            k: 5,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_diag, self.lambda_med, self.lambda_proc];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Invalid("retrieval weights must be >= 0".into()));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::Invalid("retrieval weights must not all be zero".into()));
        }
        if self.k == 0 {
            return Err(Error::Invalid("k must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets scoring 0.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn similarity(u: &PatientProfile, v: &PatientProfile, config: &RetrievalConfig) -> f64 {
    config.lambda_diag * jaccard(&u.diag, &v.diag)
        + config.lambda_med * jaccard(&u.med, &v.med)
        + config.lambda_proc * jaccard(&u.proc, &v.proc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub admission_id: String,
    pub score: f64,
}

/// The `k` most similar profiles, excluding the query's own id.
///
/// Ordered by descending score, ties by ascending admission id.
pub fn top_k(query: &PatientProfile, index: &[PatientProfile], config: &RetrievalConfig) -> Result<Vec<Neighbor>> {
    config.validate()?;
    if index.is_empty() {
        return Err(Error::Invalid("retrieval index is empty".into()));
    }
    let mut scored: Vec<Neighbor> = index
        .iter()
        .filter(|p| p.admission_id != query.admission_id)
        .map(|p| Neighbor {
            admission_id: p.admission_id.clone(),
            score: similarity(query, p, config),
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.admission_id.cmp(&b.admission_id))
    });
    scored.truncate(config.k);
    Ok(scored)
}

/// Read profiles from JSON Lines; blank lines are skipped.
pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<PatientProfile>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<PatientProfile> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let profile: PatientProfile = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{} line {}", path.display(), i + 1), e))?;
        if !seen.insert(profile.admission_id.clone()) {
            return Err(Error::parse(
                format!("{} line {}", path.display(), i + 1),
                format!("duplicate admission_id `{}`", profile.admission_id),
            ));
        }
        out.push(profile);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub age: Option<f64>,
    pub sex: Option<String>,
    pub hr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    /// The templated report.
    pub text: String,
    /// Instruction plus report, ready for an external summariser.
    pub prompt: String,
}

fn opt_num(v: Option<f64>, unit: &str) -> String {
    v.map_or_else(|| "unknown".to_string(), |x| format!("{}{unit}", fmt_g(x)))
}

pub fn build_report(
    meta: &QueryMeta,
    original_diagnoses: &str,
    neighbors: &[Neighbor],
    index: &[PatientProfile],
) -> Result<ConditioningReport> {
    if neighbors.is_empty() {
        return Err(Error::Invalid("report needs at least one neighbor".into()));
    }
    let mut text = format!(
        "Patient: age {}, sex {}, heart rate {}\n",
        opt_num(meta.age, ""),
        meta.sex.as_deref().unwrap_or("unknown"),
        opt_num(meta.hr, " bpm"),
    );
    text.push_str(&format!("Original diagnoses: {}\n", original_diagnoses.trim()));
    text.push_str("Similar admissions:\n");
    for n in neighbors {
        let profile = index
            .iter()
            .find(|p| p.admission_id == n.admission_id)
            .ok_or_else(|| Error::Invalid(format!("neighbor `{}` not in index", n.admission_id)))?;
        text.push_str(&format!("- [{:.3}] {}\n", n.score, profile.ecg_report.trim()));
    }
    let prompt = format!(
        "Summarise the following into a concise, physiologically grounded ECG report \
         for the patient. Use the similar admissions as supporting evidence only.\n\n{text}"
    );
    Ok(ConditioningReport { text, prompt })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jaccard_cases() {
        assert!((jaccard(&set(&["1", "2"]), &set(&["2", "3"])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&["a"]), &set(&["a"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn k_zero_rejected() {
        let cfg = RetrievalConfig { k: 0, ..Default::default() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("k must be ≥ 1"));
    }

    #[test]
    fn report_bullet() {
        let index = vec![PatientProfile {
            admission_id: "a".into(),
            diag: set(&[]),
            med: set(&[]),
            proc: set(&[]),
            ecg_report: "Sinus rhythm".into(),
        }];
        let nb = vec![Neighbor { admission_id: "a".into(), score: 0.5 }];
        let r = build_report(&QueryMeta::default(), "none", &nb, &index).unwrap();
        assert!(r.text.lines().any(|l| l == "- [0.500] Sinus rhythm"));
        assert!(r.prompt.ends_with(&r.text));
    }
}
