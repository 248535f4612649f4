//! Threshold sweeps and summary metrics.
//!
//! Bonafide is the positive class: TPR is the fraction of bonafide scans
//! accepted, FPR the fraction of attacks accepted. `err` is the lowest
//! misclassification rate over every threshold.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::bscan::Label;
use crate::error::{Error, Result};
use crate::scorer::{ms_decide, Decision, Polarity, Thresholds};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScore {
    pub scan_id: String,
    pub truth: Label,
    pub value: f64,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Accept as bonafide when the score is on the bonafide side of this value
    /// (`<=` for larger-is-attack scores, `>=` otherwise).
    Single(f64),
    /// MS rule thresholds.
    Pair { s: f64, m: f64 },
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Single(t) => write!(f, "{t}"),
            Threshold::Pair { s, m } => write!(f, "{s}/{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub err: f64,
    pub tpr_at_fpr10: f64,
    pub tpr_at_fpr5: f64,
    /// `(fpr, tpr)`, non-decreasing in both.
    pub roc: Vec<(f64, f64)>,
    pub best_threshold: Threshold,
}

#[derive(Debug, Clone, Copy)]
struct Counts {
    bonafide: usize,
    attacks: usize,
}

fn class_counts<'a>(truths: impl Iterator<Item = &'a Label>) -> Result<Counts> {
    let mut c = Counts { bonafide: 0, attacks: 0 };
    for t in truths {
        match t {
            Label::Bonafide => c.bonafide += 1,
            Label::PresentationAttack => c.attacks += 1,
            Label::Unknown => return Err(Error::Argument("evaluation needs known labels".into())),
        }
    }
    if c.bonafide == 0 || c.attacks == 0 {
        return Err(Error::SingleClass(format!(
            "{} bonafide and {} attack samples",
            c.bonafide, c.attacks
        )));
    }
    Ok(c)
}

/// Accumulates one operating point per candidate threshold, in order of
/// growing acceptance.
struct Sweep<T> {
    counts: Counts,
    roc: Vec<(f64, f64)>,
    best: Option<(usize, T)>,
    tpr10: f64,
    tpr5: f64,
}

impl<T: Copy> Sweep<T> {
    fn new(counts: Counts) -> Self {
        Self {
            counts,
            roc: Vec::new(),
            best: None,
            tpr10: 0.0,
            tpr5: 0.0,
        }
    }

    fn point(&mut self, accepted_bonafide: usize, accepted_attacks: usize, threshold: T) {
        let Counts { bonafide, attacks } = self.counts;
        let tpr = accepted_bonafide as f64 / bonafide as f64;
        let fpr = accepted_attacks as f64 / attacks as f64;
        let errors = (bonafide - accepted_bonafide) + accepted_attacks;
        if self.best.is_none_or(|(e, _)| errors < e) {
            self.best = Some((errors, threshold));
        }
        if fpr <= 0.10 {
            self.tpr10 = self.tpr10.max(tpr);
        }
        if fpr <= 0.05 {
            self.tpr5 = self.tpr5.max(tpr);
        }
        self.roc.push((fpr, tpr));
    }

    fn finish(self, wrap: impl Fn(T) -> Threshold) -> EvalReport {
        let (errors, t) = self.best.expect("at least one threshold");
        EvalReport {
            err: errors as f64 / (self.counts.bonafide + self.counts.attacks) as f64,
            tpr_at_fpr10: self.tpr10,
            tpr_at_fpr5: self.tpr5,
            roc: self.roc,
            best_threshold: wrap(t),
        }
    }
}

/// Sweeps `-inf`, every midpoint between consecutive distinct values, and
/// `+inf`.
pub fn eval_score(scores: &[LabeledScore]) -> Result<EvalReport> {
    let first = scores
        .first()
        .ok_or_else(|| Error::SingleClass("no scores".into()))?;
    let polarity = first.polarity;
    if scores.iter().any(|s| s.polarity != polarity) {
        return Err(Error::Argument("mixed score polarities".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.value.is_finite()) {
        return Err(Error::Argument(format!("non-finite score for {}", s.scan_id)));
    }
    let counts = class_counts(scores.iter().map(|s| &s.truth))?;

    // work in "attack-ness" so that acceptance is always `a <= tau`
    let sign = match polarity {
        Polarity::LargerIsAttack => 1.0,
        Polarity::LargerIsBonafide => -1.0,
    };
    let mut items: Vec<(f64, bool)> = scores
        .iter()
        .map(|s| (sign * s.value, s.truth == Label::Bonafide))
        .collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut sweep = Sweep::new(counts);
    let (mut acc_b, mut acc_a) = (0, 0);
    sweep.point(0, 0, f64::NEG_INFINITY);
    let mut i = 0;
    while i < items.len() {
        let v = items[i].0;
        while i < items.len() && items[i].0 == v {
            if items[i].1 {
                acc_b += 1;
            } else {
                acc_a += 1;
            }
            i += 1;
        }
        let tau = if i < items.len() {
            0.5 * (v + items[i].0)
        } else {
            f64::INFINITY
        };
        sweep.point(acc_b, acc_a, tau);
    }
    Ok(sweep.finish(|tau| Threshold::Single(sign * tau)))
}

/// MS rule with tied thresholds `s_thres = m_thres = t`, `t` ranging over
/// `-inf` and every observed s and m value.
pub fn eval_ms(pairs: &[(f64, f64, Label)]) -> Result<EvalReport> {
    let counts = class_counts(pairs.iter().map(|p| &p.2))?;
    if pairs.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Argument("non-finite S or M score".into()));
    }
    let mut ts: Vec<f64> = pairs.iter().flat_map(|p| [p.0, p.1]).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut sweep = Sweep::new(counts);
    for t in std::iter::once(f64::NEG_INFINITY).chain(ts) {
        let th = Thresholds { s_thres: t, m_thres: t };
        let (mut acc_b, mut acc_a) = (0, 0);
        for &(s, m, truth) in pairs {
            if ms_decide(s, m, th) == Decision::Bonafide {
                if truth == Label::Bonafide {
                    acc_b += 1;
                } else {
                    acc_a += 1;
                }
            }
        }
        sweep.point(acc_b, acc_a, t);
    }
    Ok(sweep.finish(|t| Threshold::Pair { s: t, m: t }))
}

pub fn report_to_csv(r: &EvalReport) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (fpr, tpr) in &r.roc {
        out.push_str(&format!("{fpr},{tpr}\n"));
    }
    out.push_str(&format!(
        "# err={} tpr@0.10={} tpr@0.05={} threshold={}\n",
        r.err, r.tpr_at_fpr10, r.tpr_at_fpr5, r.best_threshold
    ));
    out
}

pub fn report_from_csv(text: &str) -> Result<EvalReport> {
    let bad = |m: &str| Error::Format(format!("report CSV: {m}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("not a number: {s:?}")));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("fpr,tpr") {
        return Err(bad("missing fpr,tpr header"));
    }
    let mut roc = Vec::new();
    let mut summary = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix('#') {
            summary = Some(rest.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| bad("ROC row without comma"))?;
        roc.push((num(a)?, num(b)?));
    }
    let summary = summary.ok_or_else(|| bad("missing summary line"))?;
    let mut fields = std::collections::BTreeMap::new();
    for kv in summary.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("summary field without '='"))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("summary lacks {k}")));
    let threshold = match get("threshold")?.split_once('/') {
        Some((s, m)) => Threshold::Pair { s: num(s)?, m: num(m)? },
        None => Threshold::Single(num(get("threshold")?)?),
    };
    Ok(EvalReport {
        err: num(get("err")?)?,
        tpr_at_fpr10: num(get("tpr@0.10")?)?,
        tpr_at_fpr5: num(get("tpr@0.05")?)?,
        roc,
        best_threshold: threshold,
    })
}

pub fn export_report(r: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_to_csv(r)).map_err(|e| Error::io(path, e))
}

pub fn import_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    report_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(bona: &[f64], pa: &[f64], polarity: Polarity) -> Vec<LabeledScore> {
        let mk = |v: &f64, truth| LabeledScore {
            scan_id: String::new(),
            truth,
            value: *v,
            polarity,
        };
        bona.iter()
            .map(|v| mk(v, Label::Bonafide))
            .chain(pa.iter().map(|v| mk(v, Label::PresentationAttack)))
            .collect()
    }

    #[test]
    fn separable_scores() {
        let r = eval_score(&labeled(&[0.1], &[0.9], Polarity::LargerIsAttack)).unwrap();
        assert_eq!(r.err, 0.0);
        assert_eq!(r.tpr_at_fpr10, 1.0);
        assert_eq!(r.tpr_at_fpr5, 1.0);
        assert_eq!(r.best_threshold, Threshold::Single(0.5));
    }

    #[test]
    fn identical_scores_fall_back_to_prior() {
        let r = eval_score(&labeled(&[0.3; 3], &[0.3], Polarity::LargerIsAttack)).unwrap();
        assert_eq!(r.err, 0.25);
        assert_eq!(r.roc, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn one_misplaced_bonafide() {
        let s = labeled(&[0.1, 0.2, 0.3, 0.9], &[0.8, 0.85, 0.95, 0.97], Polarity::LargerIsAttack);
        assert_eq!(eval_score(&s).unwrap().err, 0.125);
    }

    #[test]
    fn larger_is_bonafide_polarity() {
        let r = eval_score(&labeled(&[0.9, 0.8], &[0.1, 0.2], Polarity::LargerIsBonafide)).unwrap();
        assert_eq!(r.err, 0.0);
        assert_eq!(r.best_threshold, Threshold::Single(0.5));
    }

    #[test]
    fn single_class_and_mixed_polarity_rejected() {
        assert!(matches!(
            eval_score(&labeled(&[0.1, 0.2], &[], Polarity::LargerIsAttack)),
            Err(Error::SingleClass(_))
        ));
        let mut s = labeled(&[0.1], &[0.2], Polarity::LargerIsAttack);
        s[1].polarity = Polarity::LargerIsBonafide;
        assert!(matches!(eval_score(&s), Err(Error::Argument(_))));
    }

    #[test]
    fn ms_cases() {
        let r = eval_ms(&[(0.0, 0.0, Label::Bonafide), (1.0, 1.0, Label::PresentationAttack)]).unwrap();
        assert_eq!(r.err, 0.0);
        assert_eq!(r.best_threshold, Threshold::Pair { s: 0.0, m: 0.0 });
        let r = eval_ms(&[(0.9, 0.0, Label::Bonafide), (0.0, 0.9, Label::PresentationAttack)]).unwrap();
        assert_eq!(r.err, 0.5);
        assert!(matches!(eval_ms(&[(0.0, 0.0, Label::Bonafide)]), Err(Error::SingleClass(_))));
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let r = EvalReport {
            err: 0.0471,
            tpr_at_fpr10: 0.9773,
            tpr_at_fpr5: 0.9318,
            roc: vec![(0.0, 0.0), (0.5, 0.75), (1.0, 1.0)],
            best_threshold: Threshold::Single(0.25),
        };
        let text = report_to_csv(&r);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "fpr,tpr");
        assert_eq!(lines[4], "# err=0.0471 tpr@0.10=0.9773 tpr@0.05=0.9318 threshold=0.25");
        assert_eq!(report_from_csv(&text).unwrap(), r);

        let pair = EvalReport {
            best_threshold: Threshold::Pair { s: f64::NEG_INFINITY, m: f64::NEG_INFINITY },
            ..r
        };
        assert_eq!(report_from_csv(&report_to_csv(&pair)).unwrap(), pair);
    }
}
