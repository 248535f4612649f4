//! End-to-end stages over a dataset directory: train, calibrate, score and
//! evaluate, each persisting its artifact for the next one.
//!
//! Configuration is a flat `key = value` text file whose keys mirror the
//! nested config structs (`ae.epochs`, `preprocess.denoise_enabled`,
//! `paths.report_dir`, ...). List values are comma separated.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autoencoder::{build_model, load_model, save_model, train, AEConfig, AutoencoderModel, EpochStats};
use crate::bscan::{load_manifest, DatasetSplit, Label, ScanVolume, Split};
use crate::error::{Error, Result};
use crate::evaluator::{eval_ms, eval_score, export_report, EvalReport, LabeledScore};
use crate::preprocess::{preprocess_volume, PreprocessConfig};
use crate::scorer::{
    calibrate, load_calibration, save_calibration, score_volume, ConfidenceReport, Decision, Polarity,
    ScoreCalibration, ScoreKind, Thresholds,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePaths {
    /// Holds `manifest.tsv` and the images it lists.
    pub data_dir: PathBuf,
    pub model_path: PathBuf,
    pub calibration_path: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PipelinePaths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            model_path: "run/model.ckpt".into(),
            calibration_path: "run/calibration.txt".into(),
            report_dir: "run/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub ae: AEConfig,
    pub thresholds: Thresholds,
    pub paths: PipelinePaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            preprocess: PreprocessConfig::default(),
            ae: AEConfig::default(),
            thresholds: Thresholds::default(),
            paths: PipelinePaths::default(),
        }
    }
}

fn config_err(m: impl Into<String>) -> Error {
    Error::Config(m.into())
}

/// Parses `raw` into the JSON type already held at the slot.
fn coerce(key: &str, current: &Value, raw: &str) -> Result<Value> {
    let raw = raw.trim();
    let bad = || config_err(format!("{key}: cannot use {raw:?} here"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(match raw.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => true,
            "false" | "0" | "no" | "off" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
        }
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(items) => {
            let proto = items.first().cloned().unwrap_or(Value::from(0u64));
            let parts = raw.split(',').filter(|p| !p.trim().is_empty());
            Value::Array(parts.map(|p| coerce(key, &proto, p)).collect::<Result<_>>()?)
        }
        _ => return Err(bad()),
    })
}

impl PipelineConfig {
    /// Sets one dotted key, e.g. `ae.epochs`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self).expect("config serialises");
        let mut slot = &mut tree;
        for part in key.trim().split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| config_err(format!("unknown config key {key:?}")))?;
        }
        if slot.is_object() {
            return Err(config_err(format!("{key:?} is a section, not a value")));
        }
        *slot = coerce(key, slot, value)?;
        *self = serde_json::from_value(tree).map_err(|e| config_err(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every leaf as a `key = value` line, in a form `from_text` reads back.
    pub fn to_text(&self) -> String {
        fn walk(prefix: &str, v: &Value, out: &mut String) {
            match v {
                Value::Object(map) => {
                    for (k, child) in map {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, child, out);
                    }
                }
                Value::Array(items) => {
                    let joined: Vec<String> = items.iter().map(|i| i.to_string()).collect();
                    let _ = writeln!(out, "{prefix} = {}", joined.join(","));
                }
                Value::String(s) => {
                    let _ = writeln!(out, "{prefix} = {s}");
                }
                other => {
                    let _ = writeln!(out, "{prefix} = {other}");
                }
            }
        }
        let mut out = String::new();
        walk("", &serde_json::to_value(self).expect("config serialises"), &mut out);
        out
    }

    /// Autoencoder settings with the root seed applied.
    pub fn ae_config(&self) -> AEConfig {
        AEConfig {
            seed: self.seed,
            ..self.ae.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.ae.validate()?;
        if (self.preprocess.target_height, self.preprocess.target_width) != (self.ae.input_height, self.ae.input_width) {
            return Err(config_err(format!(
                "preprocess output {}x{} does not match autoencoder input {}x{}",
                self.preprocess.target_height,
                self.preprocess.target_width,
                self.ae.input_height,
                self.ae.input_width
            )));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.data_dir.join("manifest.tsv")
    }

    pub fn scores_path(&self) -> PathBuf {
        self.paths.report_dir.join("scores.csv")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn load_dataset(cfg: &PipelineConfig) -> Result<(Vec<ScanVolume>, DatasetSplit)> {
    cfg.validate()?;
    load_manifest(cfg.manifest_path())
}

fn preprocessed(volumes: &[&ScanVolume], cfg: &PreprocessConfig) -> Result<Vec<ScanVolume>> {
    volumes.iter().map(|v| preprocess_volume(v, cfg)).collect()
}

/// Trains on the model split and writes the checkpoint.
pub fn run_train(cfg: &PipelineConfig, on_epoch: impl FnMut(EpochStats)) -> Result<AutoencoderModel> {
    let (volumes, split) = load_dataset(cfg)?;
    split.validate(&volumes)?;
    let model_set = preprocessed(&split.select(Split::Model, &volumes), &cfg.preprocess)?;
    log::info!(
        "training on {} volumes ({} B-scans)",
        model_set.len(),
        model_set.iter().map(ScanVolume::len).sum::<usize>()
    );
    let model = train(build_model(&cfg.ae_config())?, &model_set, on_epoch)?;
    ensure_parent(&cfg.paths.model_path)?;
    save_model(&model, &cfg.paths.model_path)?;
    Ok(model)
}

fn trained_model(cfg: &PipelineConfig) -> Result<AutoencoderModel> {
    require(&cfg.paths.model_path)?;
    let model = load_model(&cfg.paths.model_path)?;
    if model.config().input_height != cfg.preprocess.target_height
        || model.config().input_width != cfg.preprocess.target_width
    {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint expects {}x{} input, preprocessing yields {}x{}",
            model.config().input_height,
            model.config().input_width,
            cfg.preprocess.target_height,
            cfg.preprocess.target_width
        )));
    }
    Ok(model)
}

/// Fits the calibration on the score split and writes it.
pub fn run_calibrate(cfg: &PipelineConfig) -> Result<ScoreCalibration> {
    let model = trained_model(cfg)?;
    let (volumes, split) = load_dataset(cfg)?;
    split.validate(&volumes)?;
    let cal = calibrate(split.select(Split::Score, &volumes), &model, &cfg.preprocess)?;
    ensure_parent(&cfg.paths.calibration_path)?;
    save_calibration(&cal, &cfg.paths.calibration_path)?;
    Ok(cal)
}

/// Scores every test volume and writes the score CSV to `out`.
pub fn run_score(cfg: &PipelineConfig, out: &Path) -> Result<Vec<ConfidenceReport>> {
    let model = trained_model(cfg)?;
    require(&cfg.paths.calibration_path)?;
    let cal = load_calibration(&cfg.paths.calibration_path, Some(&model.fingerprint()))?;
    let (volumes, split) = load_dataset(cfg)?;
    split.validate(&volumes)?;
    let reports = split
        .select(Split::Test, &volumes)
        .into_iter()
        .map(|v| score_volume(v, &model, &cfg.preprocess, &cal, cfg.thresholds))
        .collect::<Result<Vec<_>>>()?;
    ensure_parent(out)?;
    fs::write(out, scores_to_csv(&reports)).map_err(|e| Error::io(out, e))?;
    Ok(reports)
}

pub const SCORE_CSV_HEADER: &str =
    "scan_id,truth,s_score,m_score,sm_score,ms_decision,pd_postp,pd_prep,kl_pre,kl_post,iou_score";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| f64::NAN.to_string(), |v| v.to_string())
}

/// One row per report; undefined divergence scores are written as `NaN`.
pub fn scores_to_csv(reports: &[ConfidenceReport]) -> String {
    let mut out = format!("{SCORE_CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scan_id,
            r.truth,
            r.s_score,
            r.m_score,
            r.sm_score,
            r.ms_decision,
            r.pd_postp,
            r.pd_prep,
            opt(r.kl_pre),
            opt(r.kl_post),
            opt(r.iou_score)
        );
    }
    out
}

/// A parsed score CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub scan_id: String,
    pub truth: Label,
    pub ms_decision: Decision,
    /// In `ScoreKind::ALL` order; `None` where the CSV holds `NaN`.
    pub values: [Option<f64>; 8],
}

impl ScoreRow {
    pub fn value(&self, kind: ScoreKind) -> Option<f64> {
        let i = ScoreKind::ALL.iter().position(|&k| k == kind).expect("kind listed");
        self.values[i]
    }
}

pub fn scores_from_csv(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(SCORE_CSV_HEADER) {
        return Err(Error::Format(format!("score CSV must start with {SCORE_CSV_HEADER:?}")));
    }
    let columns: Vec<&str> = SCORE_CSV_HEADER.split(',').collect();
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != columns.len() {
                return Err(Error::Format(format!(
                    "score CSV row {}: {} fields, expected {}",
                    n + 1,
                    f.len(),
                    columns.len()
                )));
            }
            let mut values = [None; 8];
            for (slot, kind) in values.iter_mut().zip(ScoreKind::ALL) {
                let col = columns.iter().position(|&c| c == kind.name()).expect("column listed");
                let v: f64 = f[col]
                    .parse()
                    .map_err(|_| Error::Format(format!("score CSV row {}: bad {}", n + 1, kind.name())))?;
                *slot = (!v.is_nan()).then_some(v);
            }
            Ok(ScoreRow {
                scan_id: f[0].to_string(),
                truth: f[1].parse()?,
                ms_decision: f[5].parse()?,
                values,
            })
        })
        .collect()
}

/// Which rows of the evaluation to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSelection {
    All,
    Ms,
    Score(ScoreKind),
    Family(&'static str),
}

impl std::str::FromStr for EvalSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(EvalSelection::All),
            "ms" | "ms_score" => Ok(EvalSelection::Ms),
            "statistical" | "density" | "divergence" => Ok(EvalSelection::Family(
                ScoreKind::ALL.iter().map(|k| k.family()).find(|f| *f == s).expect("known family"),
            )),
            other => other.parse().map(EvalSelection::Score),
        }
    }
}

impl EvalSelection {
    fn includes_ms(self) -> bool {
        matches!(self, EvalSelection::All | EvalSelection::Ms | EvalSelection::Family("statistical"))
    }

    fn includes(self, kind: ScoreKind) -> bool {
        match self {
            EvalSelection::All => true,
            EvalSelection::Ms => false,
            EvalSelection::Score(k) => k == kind,
            EvalSelection::Family(f) => kind.family() == f,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub family: &'static str,
    pub report: EvalReport,
}

/// Evaluates score rows. A score that is undefined for a volume counts as
/// maximally attack-like for that volume.
pub fn evaluate_rows(rows: &[ScoreRow], selection: EvalSelection) -> Result<Vec<SummaryRow>> {
    let mut out = Vec::new();
    if selection.includes_ms() {
        let pairs: Vec<(f64, f64, Label)> = rows
            .iter()
            .map(|r| {
                let s = r.value(ScoreKind::SScore).unwrap_or(f64::MAX);
                let m = r.value(ScoreKind::MScore).unwrap_or(f64::MAX);
                (s, m, r.truth)
            })
            .collect();
        out.push(SummaryRow {
            name: "ms_score".into(),
            family: "statistical",
            report: eval_ms(&pairs)?,
        });
    }
    for kind in ScoreKind::ALL.into_iter().filter(|&k| selection.includes(k)) {
        let worst = match kind.polarity() {
            Polarity::LargerIsAttack => f64::MAX,
            Polarity::LargerIsBonafide => f64::MIN,
        };
        let scores: Vec<LabeledScore> = rows
            .iter()
            .map(|r| LabeledScore {
                scan_id: r.scan_id.clone(),
                truth: r.truth,
                value: r.value(kind).unwrap_or(worst),
                polarity: kind.polarity(),
            })
            .collect();
        out.push(SummaryRow {
            name: kind.name().into(),
            family: kind.family(),
            report: eval_score(&scores)?,
        });
    }
    Ok(out)
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("score,family,err,tpr@0.10,tpr@0.05,threshold\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.name, r.family, r.report.err, r.report.tpr_at_fpr10, r.report.tpr_at_fpr5, r.report.best_threshold
        );
    }
    out
}

/// `(s_score, m_score, truth)` per volume, for plotting the score plane.
pub fn scatter_to_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("scan_id,s_score,m_score,truth\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.scan_id,
            opt(r.value(ScoreKind::SScore)),
            opt(r.value(ScoreKind::MScore)),
            r.truth
        );
    }
    out
}

/// Reads `scores`, writes one ROC report per selected score
/// (`eval_<name>.csv`), `summary.csv` and `scatter.csv` into `report_dir`.
pub fn run_eval(scores: &Path, report_dir: &Path, selection: EvalSelection) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(scores).map_err(|e| Error::io(scores, e))?;
    let rows = scores_from_csv(&text)?;
    let summary = evaluate_rows(&rows, selection)?;
    fs::create_dir_all(report_dir).map_err(|e| Error::io(report_dir, e))?;
    for r in &summary {
        export_report(&r.report, report_dir.join(format!("eval_{}.csv", r.name)))?;
    }
    let write = |name: &str, body: String| {
        let p = report_dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("summary.csv", summary_to_csv(&summary))?;
    write("scatter.csv", scatter_to_csv(&rows))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::ScanGaussian;

    #[test]
    fn config_text_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.set("ae.epochs", "3").unwrap();
        cfg.set("preprocess.denoise_enabled", "false").unwrap();
        cfg.set("ae.atrous_rates", "1, 3").unwrap();
        cfg.set("thresholds.s_thres", "0.75").unwrap();
        cfg.set("paths.report_dir", "out/r").unwrap();
        assert_eq!(cfg.ae.epochs, 3);
        assert!(!cfg.preprocess.denoise_enabled);
        assert_eq!(cfg.ae.atrous_rates, vec![1, 3]);
        assert_eq!(cfg.thresholds.s_thres, 0.75);
        assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_rejects_unknown_and_mistyped_keys() {
        let mut cfg = PipelineConfig::default();
        assert!(matches!(cfg.set("ae.nope", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("ae", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("ae.epochs", "-1"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_text("seed 4").is_err());
        let cfg = PipelineConfig::from_text("# c\n\nseed = 11\n").unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.ae_config().seed, 11);
    }

    #[test]
    fn mismatched_dims_fail_validation() {
        let mut cfg = PipelineConfig::default();
        cfg.set("preprocess.target_height", "32").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    fn report(id: &str, truth: Label, s: f64, kl: Option<f64>) -> ConfidenceReport {
        ConfidenceReport {
            scan_id: id.into(),
            truth,
            gaussian: ScanGaussian::new(0.1, 0.01),
            s_score: s,
            m_score: 0.5,
            sm_score: 0.5 * (s + 0.5),
            ms_decision: if s <= 1.0 { Decision::Bonafide } else { Decision::Attack },
            pd_postp: 3.0,
            pd_prep: 0.25,
            kl_pre: kl,
            kl_post: kl,
            iou_score: kl.map(|_| 0.5),
        }
    }

    #[test]
    fn score_csv_round_trip_keeps_missing_values() {
        let reports = [
            report("a", Label::Bonafide, 0.2, Some(0.1)),
            report("b", Label::PresentationAttack, 4.0, None),
        ];
        let text = scores_to_csv(&reports);
        assert_eq!(text.lines().next().unwrap(), SCORE_CSV_HEADER);
        let rows = scores_from_csv(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].value(ScoreKind::SScore), Some(0.2));
        assert_eq!(rows[1].value(ScoreKind::KlPre), None);
        assert_eq!(rows[1].ms_decision, Decision::Attack);
        assert!(scores_from_csv("a,b\n").is_err());
    }

    #[test]
    fn undefined_scores_count_against_the_volume() {
        let rows = scores_from_csv(&scores_to_csv(&[
            report("a", Label::Bonafide, 0.2, Some(0.1)),
            report("b", Label::PresentationAttack, 4.0, None),
        ]))
        .unwrap();
        let summary = evaluate_rows(&rows, EvalSelection::All).unwrap();
        assert_eq!(summary.len(), 9);
        for r in &summary {
            let expect = if r.name == "pd_postp" || r.name == "pd_prep" || r.name == "m_score" { 0.5 } else { 0.0 };
            assert_eq!(r.report.err, expect, "{}", r.name);
        }
    }

    #[test]
    fn selection_filters_rows() {
        let rows = scores_from_csv(&scores_to_csv(&[
            report("a", Label::Bonafide, 0.2, Some(0.1)),
            report("b", Label::PresentationAttack, 4.0, Some(2.0)),
        ]))
        .unwrap();
        let names = |sel: &str| -> Vec<String> {
            evaluate_rows(&rows, sel.parse().unwrap()).unwrap().into_iter().map(|r| r.name).collect()
        };
        assert_eq!(names("pd_postp"), vec!["pd_postp"]);
        assert_eq!(names("ms"), vec!["ms_score"]);
        assert_eq!(names("density"), vec!["pd_postp", "pd_prep"]);
        assert_eq!(names("all").len(), 9);
        assert!("bogus".parse::<EvalSelection>().is_err());
    }

    #[test]
    fn single_class_rows_are_rejected() {
        let rows = scores_from_csv(&scores_to_csv(&[report("a", Label::Bonafide, 0.2, None)])).unwrap();
        assert!(matches!(evaluate_rows(&rows, EvalSelection::All), Err(Error::SingleClass(_))));
    }

    #[test]
    fn missing_artifacts_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.model_path = dir.path().join("none.ckpt");
        assert!(matches!(run_calibrate(&cfg), Err(Error::MissingArtifact(_))));
        assert!(matches!(
            run_score(&cfg, &dir.path().join("s.csv")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
