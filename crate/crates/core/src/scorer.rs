//! Gaussian modelling of per-scan refined errors and the confidence scores
//! derived from it.
//!
//! A scan volume yields one refined error per B-scan. Their maximum
//! likelihood Gaussian `(m, s)` is compared against statistics of the
//! bonafide score set in four ways:
//!
//! * normalised distances of `m` and `s` (`m_score`, `s_score`), their mean,
//!   and the two-threshold veto rule;
//! * the pooled score-set density at the test errors (`pd_postp`, `pd_prep`);
//! * Gaussian KL divergence in both directions;
//! * overlap-over-union of the two densities.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderModel, ReconRecord};
use crate::bscan::{Label, ScanVolume};
use crate::error::{Error, Result};
use crate::finemap::analyse_bscan;
use crate::preprocess::{preprocess_volume, PreprocessConfig};

/// Maximum likelihood Gaussian of a set of errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGaussian {
    pub m: f64,
    /// Population (divisor `n`) standard deviation.
    pub s: f64,
    pub n: usize,
}

impl ScanGaussian {
    pub fn new(m: f64, s: f64) -> Self {
        Self { m, s, n: 1 }
    }

    /// Density at `x`; `None` when `s == 0`.
    pub fn density(&self, x: f64) -> Option<f64> {
        if !(self.s > 0.0) {
            return None;
        }
        let z = (x - self.m) / self.s;
        Some((-0.5 * z * z).exp() / (self.s * (2.0 * PI).sqrt()))
    }
}

pub fn fit_scan_gaussian(errors: &[f64]) -> Result<ScanGaussian> {
    if errors.is_empty() {
        return Err(Error::Argument("cannot fit a Gaussian to no errors".into()));
    }
    if let Some(e) = errors.iter().find(|e| !e.is_finite()) {
        return Err(Error::Argument(format!("non-finite error value {e}")));
    }
    let n = errors.len() as f64;
    let m = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / n;
    Ok(ScanGaussian {
        m,
        s: var.sqrt(),
        n: errors.len(),
    })
}

/// Spread below this is treated as no spread.
const DEGENERATE_TOL: f64 = 1e-12;

/// Score-set statistics shared by every confidence score. Construction
/// guarantees `m_max > m_bar` and `s_max > s_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCalibration {
    m_bar: f64,
    m_max: f64,
    s_bar: f64,
    s_max: f64,
    pooled: ScanGaussian,
    volumes: usize,
    model_fingerprint: Option<String>,
}

impl ScoreCalibration {
    pub fn new(m_bar: f64, m_max: f64, s_bar: f64, s_max: f64, pooled: ScanGaussian, volumes: usize) -> Result<Self> {
        for (name, v) in [("m_bar", m_bar), ("m_max", m_max), ("s_bar", s_bar), ("s_max", s_max), ("pooled m", pooled.m), ("pooled s", pooled.s)] {
            if !v.is_finite() {
                return Err(Error::CalibrationDegenerate(format!("{name} is {v}")));
            }
        }
        if m_max - m_bar <= DEGENERATE_TOL {
            return Err(Error::CalibrationDegenerate(format!(
                "mean feature has no spread (max {m_max}, mean {m_bar})"
            )));
        }
        if s_max - s_bar <= DEGENERATE_TOL {
            return Err(Error::CalibrationDegenerate(format!(
                "std feature has no spread (max {s_max}, mean {s_bar})"
            )));
        }
        if !(pooled.s > 0.0) {
            return Err(Error::CalibrationDegenerate("pooled errors have zero spread".into()));
        }
        Ok(Self {
            m_bar,
            m_max,
            s_bar,
            s_max,
            pooled,
            volumes,
            model_fingerprint: None,
        })
    }

    /// From the refined errors of each score-set volume.
    pub fn from_error_sets<S: AsRef<[f64]>>(sets: &[S]) -> Result<Self> {
        if sets.len() < 2 {
            return Err(Error::CalibrationDegenerate(format!(
                "need at least two score volumes, got {}",
                sets.len()
            )));
        }
        let fits = sets
            .iter()
            .map(|s| fit_scan_gaussian(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let k = fits.len() as f64;
        let m_bar = fits.iter().map(|g| g.m).sum::<f64>() / k;
        let s_bar = fits.iter().map(|g| g.s).sum::<f64>() / k;
        let m_max = fits.iter().map(|g| g.m).fold(f64::NEG_INFINITY, f64::max);
        let s_max = fits.iter().map(|g| g.s).fold(f64::NEG_INFINITY, f64::max);
        let all: Vec<f64> = sets.iter().flat_map(|s| s.as_ref().iter().copied()).collect();
        let pooled = fit_scan_gaussian(&all)?;
        Self::new(m_bar, m_max, s_bar, s_max, pooled, fits.len())
    }

    pub fn with_model_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.model_fingerprint = Some(fingerprint.into());
        self
    }

    pub fn m_bar(&self) -> f64 {
        self.m_bar
    }

    pub fn m_max(&self) -> f64 {
        self.m_max
    }

    pub fn s_bar(&self) -> f64 {
        self.s_bar
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn pooled(&self) -> ScanGaussian {
        self.pooled
    }

    pub fn volumes(&self) -> usize {
        self.volumes
    }

    pub fn model_fingerprint(&self) -> Option<&str> {
        self.model_fingerprint.as_deref()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# score calibration\n");
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("m_bar", self.m_bar.to_string());
        kv("m_max", self.m_max.to_string());
        kv("s_bar", self.s_bar.to_string());
        kv("s_max", self.s_max.to_string());
        kv("pooled_m", self.pooled.m.to_string());
        kv("pooled_s", self.pooled.s.to_string());
        kv("pooled_n", self.pooled.n.to_string());
        kv("volumes", self.volumes.to_string());
        if let Some(fp) = &self.model_fingerprint {
            kv("model_sha256", fp.clone());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("calibration line without '=': {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: FromStr>(map: &std::collections::BTreeMap<String, String>, key: &str) -> Result<T> {
            map.get(key)
                .ok_or_else(|| Error::Format(format!("calibration is missing {key}")))?
                .parse()
                .map_err(|_| Error::Format(format!("calibration value for {key} does not parse")))
        }
        let pooled = ScanGaussian {
            m: get(&map, "pooled_m")?,
            s: get(&map, "pooled_s")?,
            n: get(&map, "pooled_n")?,
        };
        let mut cal = Self::new(
            get(&map, "m_bar")?,
            get(&map, "m_max")?,
            get(&map, "s_bar")?,
            get(&map, "s_max")?,
            pooled,
            get(&map, "volumes")?,
        )?;
        cal.model_fingerprint = map.get("model_sha256").cloned();
        Ok(cal)
    }
}

pub fn save_calibration(cal: &ScoreCalibration, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cal.to_text()).map_err(|e| Error::io(path, e))
}

/// Loads a calibration; warns when it was built from a different checkpoint.
pub fn load_calibration(path: impl AsRef<Path>, model_fingerprint: Option<&str>) -> Result<ScoreCalibration> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cal = ScoreCalibration::from_text(&text)?;
    if let (Some(want), Some(have)) = (model_fingerprint, cal.model_fingerprint()) {
        if want != have {
            log::warn!(
                "calibration {} was built with model {have}, scoring with {want}",
                path.display()
            );
        }
    }
    Ok(cal)
}

/// Preprocess a volume and compute raw and refined error for every B-scan.
pub fn volume_errors(
    v: &ScanVolume,
    model: &AutoencoderModel,
    pre_cfg: &PreprocessConfig,
) -> Result<Vec<ReconRecord>> {
    let pre = preprocess_volume(v, pre_cfg)?;
    pre.bscans()
        .iter()
        .map(|b| analyse_bscan(model, b).map(|(r, _)| r))
        .collect()
}

fn refined(records: &[ReconRecord]) -> Vec<f64> {
    records.iter().map(|r| r.refined_error).collect()
}

/// Builds the calibration from bonafide score-set volumes.
pub fn calibrate<'a>(
    score_volumes: impl IntoIterator<Item = &'a ScanVolume>,
    model: &AutoencoderModel,
    pre_cfg: &PreprocessConfig,
) -> Result<ScoreCalibration> {
    let mut sets = Vec::new();
    for v in score_volumes {
        if v.label != Label::Bonafide {
            return Err(Error::ZeroPaViolation(format!(
                "volume {:?} labelled {} cannot calibrate scores",
                v.scan_id, v.label
            )));
        }
        sets.push(refined(&volume_errors(v, model, pre_cfg)?));
    }
    Ok(ScoreCalibration::from_error_sets(&sets)?.with_model_fingerprint(model.fingerprint()))
}

pub fn m_score(test: &ScanGaussian, cal: &ScoreCalibration) -> f64 {
    (test.m - cal.m_bar).abs() / (cal.m_max - cal.m_bar)
}

pub fn s_score(test: &ScanGaussian, cal: &ScoreCalibration) -> f64 {
    (test.s - cal.s_bar).abs() / (cal.s_max - cal.s_bar)
}

pub fn sm_score(s: f64, m: f64) -> f64 {
    0.5 * (s + m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub s_thres: f64,
    pub m_thres: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            s_thres: 1.0,
            m_thres: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Bonafide,
    Attack,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Bonafide => "bonafide",
            Decision::Attack => "pa",
        })
    }
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(Decision::Bonafide),
            "pa" => Ok(Decision::Attack),
            other => Err(Error::Format(format!("unknown decision {other:?}"))),
        }
    }
}

/// Bonafide only if both scores are within their thresholds.
pub fn ms_decide(s: f64, m: f64, t: Thresholds) -> Decision {
    if s <= t.s_thres && m <= t.m_thres {
        Decision::Bonafide
    } else {
        Decision::Attack
    }
}

fn require_density(cal: &ScoreCalibration, errors: &[f64]) -> Result<()> {
    if errors.is_empty() {
        return Err(Error::Argument("no test errors".into()));
    }
    if !(cal.pooled.s > 0.0) {
        return Err(Error::DegenerateDensity("pooled score-set std is zero".into()));
    }
    Ok(())
}

/// Mean pooled density over the test errors.
pub fn pd_postp(test_errors: &[f64], cal: &ScoreCalibration) -> Result<f64> {
    require_density(cal, test_errors)?;
    let sum: f64 = test_errors
        .iter()
        .map(|&e| cal.pooled.density(e).expect("s > 0"))
        .sum();
    Ok(sum / test_errors.len() as f64)
}

/// Pooled density at the mean test error.
pub fn pd_prep(test_errors: &[f64], cal: &ScoreCalibration) -> Result<f64> {
    require_density(cal, test_errors)?;
    let mean = test_errors.iter().sum::<f64>() / test_errors.len() as f64;
    Ok(cal.pooled.density(mean).expect("s > 0"))
}

fn require_spread(p: &ScanGaussian, q: &ScanGaussian) -> Result<()> {
    if !(p.s > 0.0 && q.s > 0.0) {
        return Err(Error::DegenerateDensity(format!(
            "Gaussian with zero std (p.s = {}, q.s = {})",
            p.s, q.s
        )));
    }
    Ok(())
}

/// `KL(p || q)` for univariate Gaussians.
pub fn kl_divergence(p: &ScanGaussian, q: &ScanGaussian) -> Result<f64> {
    require_spread(p, q)?;
    let dm = p.m - q.m;
    let kl = (q.s / p.s).ln() + (p.s * p.s + dm * dm) / (2.0 * q.s * q.s) - 0.5;
    Ok(kl.max(0.0))
}

/// Grid points for the overlap integral.
pub const IOU_GRID_POINTS: usize = 8193;

/// Overlap over union of two Gaussian densities, by trapezoidal integration
/// of `min(p, q)` on `[min m - 8 s_max, max m + 8 s_max]`. Uses
/// `union = 2 - overlap`.
pub fn iou_score(p: &ScanGaussian, q: &ScanGaussian) -> Result<f64> {
    require_spread(p, q)?;
    let s_max = p.s.max(q.s);
    let lo = p.m.min(q.m) - 8.0 * s_max;
    let hi = p.m.max(q.m) + 8.0 * s_max;
    let n = IOU_GRID_POINTS;
    let dx = (hi - lo) / (n - 1) as f64;
    let f = |i: usize| {
        let x = lo + dx * i as f64;
        let a = p.density(x).expect("s > 0");
        let b = q.density(x).expect("s > 0");
        a.min(b)
    };
    let mut overlap = 0.5 * (f(0) + f(n - 1));
    for i in 1..n - 1 {
        overlap += f(i);
    }
    overlap *= dx;
    let overlap = overlap.clamp(0.0, 1.0);
    Ok(overlap / (2.0 - overlap))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    LargerIsAttack,
    LargerIsBonafide,
}

/// The eight numeric confidence scores (the ninth, MS, is a decision).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreKind {
    SScore,
    MScore,
    SmScore,
    PdPostp,
    PdPrep,
    KlPre,
    KlPost,
    Iou,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 8] = [
        ScoreKind::SScore,
        ScoreKind::MScore,
        ScoreKind::SmScore,
        ScoreKind::PdPostp,
        ScoreKind::PdPrep,
        ScoreKind::KlPre,
        ScoreKind::KlPost,
        ScoreKind::Iou,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::SScore => "s_score",
            ScoreKind::MScore => "m_score",
            ScoreKind::SmScore => "sm_score",
            ScoreKind::PdPostp => "pd_postp",
            ScoreKind::PdPrep => "pd_prep",
            ScoreKind::KlPre => "kl_pre",
            ScoreKind::KlPost => "kl_post",
            ScoreKind::Iou => "iou_score",
        }
    }

    pub fn polarity(self) -> Polarity {
        match self {
            ScoreKind::PdPostp | ScoreKind::PdPrep | ScoreKind::Iou => Polarity::LargerIsBonafide,
            _ => Polarity::LargerIsAttack,
        }
    }

    /// Statistical, density or divergence.
    pub fn family(self) -> &'static str {
        match self {
            ScoreKind::SScore | ScoreKind::MScore | ScoreKind::SmScore => "statistical",
            ScoreKind::PdPostp | ScoreKind::PdPrep => "density",
            ScoreKind::KlPre | ScoreKind::KlPost | ScoreKind::Iou => "divergence",
        }
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown score {s:?}")))
    }
}

/// Every confidence score for one test volume. Divergence scores are `None`
/// when the test errors have zero spread.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReport {
    pub scan_id: String,
    pub truth: Label,
    pub gaussian: ScanGaussian,
    pub s_score: f64,
    pub m_score: f64,
    pub sm_score: f64,
    pub ms_decision: Decision,
    pub pd_postp: f64,
    pub pd_prep: f64,
    pub kl_pre: Option<f64>,
    pub kl_post: Option<f64>,
    pub iou_score: Option<f64>,
}

impl ConfidenceReport {
    pub fn value(&self, kind: ScoreKind) -> Option<f64> {
        match kind {
            ScoreKind::SScore => Some(self.s_score),
            ScoreKind::MScore => Some(self.m_score),
            ScoreKind::SmScore => Some(self.sm_score),
            ScoreKind::PdPostp => Some(self.pd_postp),
            ScoreKind::PdPrep => Some(self.pd_prep),
            ScoreKind::KlPre => self.kl_pre,
            ScoreKind::KlPost => self.kl_post,
            ScoreKind::Iou => self.iou_score,
        }
    }
}

/// Scores one volume's refined errors against a calibration.
pub fn score_errors(
    scan_id: &str,
    truth: Label,
    errors: &[f64],
    cal: &ScoreCalibration,
    t: Thresholds,
) -> Result<ConfidenceReport> {
    let test = fit_scan_gaussian(errors)?;
    let s = s_score(&test, cal);
    let m = m_score(&test, cal);
    let divergence = |f: fn(&ScanGaussian, &ScanGaussian) -> Result<f64>, a, b| match f(a, b) {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateDensity(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let pooled = cal.pooled;
    Ok(ConfidenceReport {
        scan_id: scan_id.to_string(),
        truth,
        gaussian: test,
        s_score: s,
        m_score: m,
        sm_score: sm_score(s, m),
        ms_decision: ms_decide(s, m, t),
        pd_postp: pd_postp(errors, cal)?,
        pd_prep: pd_prep(errors, cal)?,
        kl_pre: divergence(kl_divergence, &pooled, &test)?,
        kl_post: divergence(kl_divergence, &test, &pooled)?,
        iou_score: divergence(iou_score, &pooled, &test)?,
    })
}

/// Full on-line path for one test volume.
pub fn score_volume(
    v: &ScanVolume,
    model: &AutoencoderModel,
    pre_cfg: &PreprocessConfig,
    cal: &ScoreCalibration,
    t: Thresholds,
) -> Result<ConfidenceReport> {
    let errors = refined(&volume_errors(v, model, pre_cfg)?);
    score_errors(&v.scan_id, v.label, &errors, cal, t)
}
