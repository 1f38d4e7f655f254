//! Scoring a model over a manifest: per-item rows, correlation aggregates
//! and the files they are persisted to.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::kce::{extract_key_clusters, KceConfig, KeyClusterSet};
use crate::manifest::{DatasetManifest, Split};
use crate::metrics::{plcc, srocc, vqeg_logistic_fit, LogisticParams};
use crate::nn::{argmax, prepare_item, Checkpoint, Task};
use crate::train::data::quantize_f32;
use crate::train::{assign_levels, expected_level_score, level_for, KceCache, QualityLevel};

pub const REPORT_NAME: &str = "report.csv";
pub const SUMMARY_NAME: &str = "summary.txt";
pub const SCATTER_NAME: &str = "scatter.dat";

/// A scorer from a cloud file to a normalized MOS in `[0, 1]` and a level.
pub trait Predictor: Sync {
    fn predict(&self, path: &Path) -> Result<(f64, QualityLevel)>;
}

/// Runs key-cluster extraction and the network of a checkpoint.
pub struct ModelPredictor {
    pub checkpoint: Checkpoint,
    pub kce: KceConfig,
    pub cache: KceCache,
}

impl ModelPredictor {
    /// Extraction settings follow the checkpoint's `beta` and `k`.
    pub fn new(checkpoint: Checkpoint, cache: KceCache) -> Self {
        let cfg = &checkpoint.model.config;
        let kce = KceConfig {
            beta: cfg.beta,
            k: cfg.k,
            ..KceConfig::default()
        };
        Self { checkpoint, kce, cache }
    }

    /// Denormalized MOS and level for one file.
    pub fn score(&self, path: &Path) -> Result<(f64, QualityLevel)> {
        let (t, level) = self.predict(path)?;
        Ok((self.denormalize(t), level))
    }
}

impl Predictor for ModelPredictor {
    fn predict(&self, path: &Path) -> Result<(f64, QualityLevel)> {
        self.predict_clusters(&self.cache.key_clusters(path, &self.kce)?)
    }
}

impl ModelPredictor {
    /// Same result as scoring the cloud's PLY file.
    pub fn predict_cloud(&self, pc: &PointCloud) -> Result<(f64, QualityLevel)> {
        let mut set = extract_key_clusters(pc, &self.kce)?;
        quantize_f32(&mut set);
        self.predict_clusters(&set)
    }

    pub fn predict_clusters(&self, set: &KeyClusterSet) -> Result<(f64, QualityLevel)> {
        let model = &self.checkpoint.model;
        match self.checkpoint.meta.stage {
            Task::Classification => {
                let item = prepare_item(set, &model.config, Task::Classification)?;
                let logits = model.classify(&item)?;
                let level = QualityLevel::from_index(argmax(&logits)).expect("three logits");
                Ok((expected_level_score(&logits), level))
            }
            Task::Prediction => {
                let item = prepare_item(set, &model.config, Task::Prediction)?;
                let t = model.predict(&item)?;
                let bounds = self.checkpoint.meta.level_thresholds.unwrap_or((1.0 / 3.0, 2.0 / 3.0));
                Ok((t, level_for(t, bounds)))
            }
        }
    }

    /// Maps a normalized prediction onto the checkpoint's MOS scale.
    pub fn denormalize(&self, t: f64) -> f64 {
        let (lo, hi) = self.checkpoint.meta.mos_scale;
        lo + t * (hi - lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub mos_true: f64,
    pub mos_pred: f64,
    pub level_true: QualityLevel,
    pub level_pred: QualityLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticSummary {
    pub params: LogisticParams,
    pub plcc_mapped: f64,
    pub diverged: bool,
}

/// Per-item rows sorted by name plus aggregates derived from them only.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    /// NaN when undefined (fewer than two rows or a constant side).
    pub plcc: f64,
    pub srocc: f64,
    pub accuracy: f64,
    pub logistic: Option<LogisticSummary>,
}

impl EvalReport {
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        let pred: Vec<f64> = rows.iter().map(|r| r.mos_pred).collect();
        let truth: Vec<f64> = rows.iter().map(|r| r.mos_true).collect();
        let correct = rows.iter().filter(|r| r.level_true == r.level_pred).count();
        let accuracy = if rows.is_empty() {
            f64::NAN
        } else {
            correct as f64 / rows.len() as f64
        };
        let logistic = vqeg_logistic_fit(&pred, &truth).ok().map(|fit| LogisticSummary {
            params: fit.params,
            plcc_mapped: plcc(&fit.mapped, &truth).unwrap_or(f64::NAN),
            diverged: fit.diverged,
        });
        Self {
            plcc: plcc(&pred, &truth).unwrap_or(f64::NAN),
            srocc: srocc(&pred, &truth).unwrap_or(f64::NAN),
            accuracy,
            logistic,
            rows,
        }
    }

    pub fn report_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["name", "mos_true", "mos_pred", "level_true", "level_pred"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.mos_true.to_string(),
                r.mos_pred.to_string(),
                r.level_true.to_string(),
                r.level_pred.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("utf-8 fields"))
    }

    /// Rows back from `report_csv` output.
    pub fn parse_rows(text: &str) -> Result<Vec<ReportRow>> {
        let bad = |m: String| Error::InvalidArgument(format!("report: {m}"));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", rec.len())));
            }
            let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(e.to_string()));
            rows.push(ReportRow {
                name: rec[0].to_string(),
                mos_true: num(1)?,
                mos_pred: num(2)?,
                level_true: rec[3].parse()?,
                level_pred: rec[4].parse()?,
            });
        }
        Ok(rows)
    }

    /// `key=value` lines; correlations are given signed and absolute.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "items={}", self.rows.len());
        let _ = writeln!(s, "plcc={}", self.plcc);
        let _ = writeln!(s, "srocc={}", self.srocc);
        let _ = writeln!(s, "abs_plcc={}", self.plcc.abs());
        let _ = writeln!(s, "abs_srocc={}", self.srocc.abs());
        let _ = writeln!(s, "accuracy={}", self.accuracy);
        match &self.logistic {
            Some(l) => {
                let p = l.params;
                let _ = writeln!(s, "logistic_b1={}\nlogistic_b2={}\nlogistic_b3={}\nlogistic_b4={}", p.b1, p.b2, p.b3, p.b4);
                let _ = writeln!(s, "logistic_diverged={}", l.diverged);
                let _ = writeln!(s, "plcc_logistic={}", l.plcc_mapped);
            }
            None => {
                let _ = writeln!(s, "logistic=unavailable");
            }
        }
        s
    }

    /// Whitespace-separated `mos_pred mos_true` pairs for plotting.
    pub fn scatter(&self) -> String {
        let mut s = String::from("# mos_pred mos_true\n");
        for r in &self.rows {
            let _ = writeln!(s, "{} {}", r.mos_pred, r.mos_true);
        }
        s
    }

    /// Writes the report, summary and scatter files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            (REPORT_NAME, self.report_csv()?),
            (SUMMARY_NAME, self.summary()),
            (SCATTER_NAME, self.scatter()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Scores every entry of `split` (all entries when `None`). Ground-truth
/// levels come from the per-source tertiles of the whole manifest.
pub fn evaluate(predictor: &dyn Predictor, manifest: &DatasetManifest, split: Option<Split>) -> Result<EvalReport> {
    let levels = assign_levels(manifest)?;
    let rows = manifest
        .entries
        .par_iter()
        .zip(levels)
        .filter(|(e, _)| split.is_none_or(|s| e.split == s))
        .map(|(e, level_true)| {
            let (t, level_pred) = predictor.predict(&manifest.resolve(e))?;
            Ok(ReportRow {
                name: e.path.to_string_lossy().into_owned(),
                mos_true: e.mos,
                mos_pred: manifest.denormalize_mos(t),
                level_true,
                level_pred,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no manifest entries to evaluate".into()));
    }
    Ok(EvalReport::from_rows(rows))
}
