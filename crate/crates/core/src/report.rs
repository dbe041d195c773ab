//! Detection metrics, run reports, and sweep aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::ImageEmbedder;

/// Harmonic mean of precision and recall; 0 when both vanish.
pub fn f1(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Config(format!(
            "f1 needs equal nonempty lengths, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let mut tp = 0.0f64;
    let mut fp = 0.0f64;
    let mut fn_ = 0.0f64;
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / denom)
}

/// F1 over per-model verdicts: rejecting H0 on a model trained on protected
/// data counts as a true positive, on a clean model as a false positive.
pub fn f1_n(verdicts_on_positive_models: &[bool], verdicts_on_negative_models: &[bool]) -> Result<f64> {
    if verdicts_on_positive_models.is_empty() || verdicts_on_negative_models.is_empty() {
        return Err(Error::Config("f1_n needs nonempty verdict lists".into()));
    }
    let mut predictions: Vec<bool> = verdicts_on_positive_models.to_vec();
    predictions.extend_from_slice(verdicts_on_negative_models);
    let mut labels = vec![true; verdicts_on_positive_models.len()];
    labels.extend(vec![false; verdicts_on_negative_models.len()]);
    f1(&predictions, &labels)
}

/// Embedding-space Fréchet distance with diagonal covariances: a generation
/// quality proxy on the default descriptor. Not comparable to published
/// FID values in any way.
pub fn frechet_proxy(
    set_a: &[crate::pixel::ImageBuf],
    set_b: &[crate::pixel::ImageBuf],
    embedder: &dyn ImageEmbedder,
) -> Result<f64> {
    if set_a.len() < 2 || set_b.len() < 2 {
        return Err(Error::Config("frechet proxy needs at least two images per set".into()));
    }
    let stats = |set: &[crate::pixel::ImageBuf]| -> (Vec<f64>, Vec<f64>) {
        let dim = embedder.dim();
        let mut mean = vec![0.0f64; dim];
        let embs: Vec<Vec<f32>> = set.iter().map(|im| embedder.embed(im)).collect();
        for e in &embs {
            for (m, v) in mean.iter_mut().zip(e) {
                *m += *v as f64;
            }
        }
        for m in &mut mean {
            *m /= embs.len() as f64;
        }
        let mut var = vec![0.0f64; dim];
        for e in &embs {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(e) {
                let d = *x as f64 - m;
                *v += d * d;
            }
        }
        for v in &mut var {
            *v /= (embs.len() - 1) as f64;
        }
        (mean, var)
    };
    let (mu_a, var_a) = stats(set_a);
    let (mu_b, var_b) = stats(set_b);
    let mut d2 = 0.0f64;
    for i in 0..mu_a.len() {
        let dm = mu_a[i] - mu_b[i];
        d2 += dm * dm + var_a[i] + var_b[i] - 2.0 * (var_a[i] * var_b[i]).sqrt();
    }
    Ok(d2.max(0.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub version: String,
}

/// One run's consolidated metrics, curves, and artifact pointers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub run_id: String,
    pub config: serde_json::Value,
    pub metrics: BTreeMap<String, MetricValue>,
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
    pub artifacts: Vec<String>,
    pub missing_stages: Vec<String>,
    pub environment: Environment,
}

impl RunReport {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn new(run_id: impl Into<String>, config: serde_json::Value, seed: u64) -> RunReport {
        RunReport {
            schema_version: Self::SCHEMA_VERSION,
            run_id: run_id.into(),
            config,
            metrics: BTreeMap::new(),
            curves: BTreeMap::new(),
            artifacts: Vec::new(),
            missing_stages: Vec::new(),
            environment: Environment {
                seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }

    pub fn add_metric(&mut self, name: impl Into<String>, value: f64, sample_count: usize) {
        self.metrics.insert(name.into(), MetricValue { value, sample_count });
    }

    pub fn add_curve(&mut self, name: impl Into<String>, points: impl IntoIterator<Item = (f64, f64)>) {
        self.curves.insert(
            name.into(),
            points.into_iter().map(|(x, y)| CurvePoint { x, y }).collect(),
        );
    }

    pub fn curve_csv(&self, name: &str) -> Option<String> {
        let points = self.curves.get(name)?;
        let mut out = String::from("x,y\n");
        for p in points {
            out.push_str(&format!("{},{}\n", p.x, p.y));
        }
        Some(out)
    }

    /// Write `report.json` (latest) and append one line to `reports.jsonl`
    /// (per-run history; reports are append-only).
    pub fn save_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let latest = dir.join("report.json");
        std::fs::write(
            &latest,
            serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("report serialization: {e}")))?,
        )
        .map_err(|e| Error::io(&latest, e))?;
        let history = dir.join("reports.jsonl");
        let line = serde_json::to_string(self).map_err(|e| Error::Config(format!("report serialization: {e}")))?;
        let mut existing = std::fs::read_to_string(&history).unwrap_or_default();
        existing.push_str(&line);
        existing.push('\n');
        std::fs::write(&history, existing).map_err(|e| Error::io(&history, e))?;
        for (name, _) in &self.curves {
            let path = dir.join(format!("curve_{name}.csv"));
            std::fs::write(&path, self.curve_csv(name).unwrap()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("report parse: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    AlterationRate,
    FineTuneSteps,
    ForegroundK,
    Corruption,
}

/// One sweep point's outcome. A failed run keeps its error string and the
/// sweep continues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

/// Run the provided pipeline closure once per value, collecting metrics per
/// point; failures are recorded, not fatal.
pub fn sweep(
    variable: SweepVariable,
    values: &[String],
    mut runner: impl FnMut(SweepVariable, &str) -> Result<BTreeMap<String, f64>>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        match runner(variable, value) {
            Ok(metrics) => rows.push(SweepRow {
                value: value.clone(),
                metrics,
                error: None,
            }),
            Err(e) => rows.push(SweepRow {
                value: value.clone(),
                metrics: BTreeMap::new(),
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f1_trivial_cases() {
        let labels = vec![true, true, false, false];
        assert_eq!(f1(&labels, &labels).unwrap(), 1.0);
        assert_eq!(f1(&[false, false, false, false], &labels).unwrap(), 0.0);
        assert!(f1(&[true], &[]).is_err());
    }

    #[test]
    fn f1_hand_arithmetic() {
        // TP=9, FP=1, FN=1 -> 0.9
        let mut predictions = vec![true; 10];
        predictions.push(false);
        let mut labels = vec![true; 9];
        labels.push(false); // the 10th prediction is a false positive
        labels.push(true); // the 11th is a missed positive
        let v = f1(&predictions, &labels).unwrap();
        assert!((v - 0.9).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn f1_matches_bruteforce_confusion_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = rng.random_range(1..30usize);
            let predictions: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            // oracle: explicit confusion counts and the textbook formula
            let tp = predictions.iter().zip(&labels).filter(|(&p, &l)| p && l).count() as f64;
            let fp = predictions.iter().zip(&labels).filter(|(&p, &l)| p && !l).count() as f64;
            let fn_ = predictions.iter().zip(&labels).filter(|(&p, &l)| !p && l).count() as f64;
            let expected = if tp == 0.0 {
                0.0
            } else {
                let precision = tp / (tp + fp);
                let recall = tp / (tp + fn_);
                2.0 * precision * recall / (precision + recall)
            };
            let got = f1(&predictions, &labels).unwrap();
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn f1_n_edges() {
        assert_eq!(f1_n(&[true, true], &[false, false]).unwrap(), 1.0);
        assert_eq!(f1_n(&[false, false], &[false]).unwrap(), 0.0);
        assert!(f1_n(&[], &[true]).is_err());
    }

    #[test]
    fn frechet_proxy_zero_on_identical_sets() {
        use crate::procedural::render_class;
        let set: Vec<_> = (0..4).map(|s| render_class("ring", 32, 32, s).unwrap()).collect();
        let embedder = crate::similarity::DefaultEmbedder;
        let d = frechet_proxy(&set, &set, &embedder).unwrap();
        assert!(d.abs() < 1e-9);
        let other: Vec<_> = (0..4).map(|s| render_class("star", 32, 32, s).unwrap()).collect();
        assert!(frechet_proxy(&set, &other, &embedder).unwrap() > d);
    }

    #[test]
    fn report_roundtrip_and_curves() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = RunReport::new("run-1", serde_json::json!({"rate": 0.005}), 7);
        report.add_metric("one_query_f1", 0.95, 200);
        report.add_curve("loss", vec![(0.0, 1.0), (100.0, 0.5)]);
        report.save_to_dir(dir.path()).unwrap();
        report.save_to_dir(dir.path()).unwrap();
        let back = RunReport::load(&dir.path().join("report.json")).unwrap();
        assert_eq!(back.run_id, "run-1");
        assert_eq!(back.metrics["one_query_f1"].sample_count, 200);
        let history = std::fs::read_to_string(dir.path().join("reports.jsonl")).unwrap();
        assert_eq!(history.lines().count(), 2, "history must append");
        assert!(dir.path().join("curve_loss.csv").is_file());
    }

    #[test]
    fn sweep_single_value_and_failure_recording() {
        let rows = sweep(SweepVariable::AlterationRate, &["0.005".into()], |_, v| {
            let mut m = BTreeMap::new();
            m.insert("one_query_f1".to_string(), v.parse::<f64>().unwrap() * 100.0);
            Ok(m)
        })
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.is_none());

        let rows = sweep(
            SweepVariable::FineTuneSteps,
            &["100".into(), "bad".into()],
            |_, v| {
                v.parse::<usize>()
                    .map_err(|e| Error::Config(e.to_string()))
                    .map(|_| BTreeMap::new())
            },
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.is_some(), "failure must be recorded, sweep continues");
    }
}
