//! Tempo accuracy, boundary retrieval and section labelling scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Section;
use crate::segmentation::SectionSequence;
use crate::tempo::TempoTrack;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("frame grids differ: {0}")]
    GridMismatch(String),
    #[error("no ground-truth frames to evaluate")]
    NoFrames,
    #[error("{which} sequence has a gap or overlap at {at:.3} s")]
    CoverageGap { which: &'static str, at: f64 },
    #[error("sequences do not overlap in time")]
    NoOverlap,
}

/// Relative tolerance and accepted metrical factors for tempo accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TempoAccuracyConfig {
    pub tol: f64,
    pub factors: Vec<f64>,
}

impl Default for TempoAccuracyConfig {
    fn default() -> Self {
        Self {
            tol: 0.04,
            factors: vec![1.0 / 3.0, 0.5, 1.0, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoScores {
    pub accuracy1: f64,
    pub accuracy2: f64,
}

/// Fraction of ground-truth frames whose estimate is within `tol` of the
/// truth (accuracy1) or of the truth times one of `factors` (accuracy2).
/// Frames without ground truth are skipped; a missing estimate is a miss.
pub fn tempo_accuracy(est: &TempoTrack, gt: &TempoTrack, cfg: &TempoAccuracyConfig) -> Result<TempoScores, EvalError> {
    if est.times.len() != gt.times.len() {
        return Err(EvalError::GridMismatch(format!("{} vs {} frames", est.times.len(), gt.times.len())));
    }
    if let Some(i) = est.times.iter().zip(&gt.times).position(|(a, b)| (a - b).abs() > 1e-6) {
        return Err(EvalError::GridMismatch(format!("frame {i}")));
    }
    let within = |e: f64, g: f64| (e / g - 1.0).abs() <= cfg.tol + 1e-12;
    let (mut n, mut a1, mut a2) = (0usize, 0usize, 0usize);
    for (e, g) in est.bpm.iter().zip(&gt.bpm) {
        let Some(g) = *g else { continue };
        n += 1;
        let Some(e) = *e else { continue };
        if within(e, g) {
            a1 += 1;
        }
        if within(e, g) || cfg.factors.iter().any(|f| within(e, g * f)) {
            a2 += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::NoFrames);
    }
    Ok(TempoScores {
        accuracy1: a1 as f64 / n as f64,
        accuracy2: a2 as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    pub fn from_counts(hits: usize, n_est: usize, n_gt: usize) -> Self {
        let ratio = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
        Self::from_pr(ratio(hits, n_est), ratio(hits, n_gt))
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f }
    }
}

/// Hits of the greedy chronological matching: each estimate in time order
/// takes the nearest unmatched ground-truth boundary within `tol` (the
/// earlier one on ties).
pub fn boundary_hits(est: &[f64], gt: &[f64], tol: f64) -> usize {
    let mut est = est.to_vec();
    est.sort_by(f64::total_cmp);
    let mut used = vec![false; gt.len()];
    let mut hits = 0;
    for e in est {
        let best = (0..gt.len())
            .filter(|&j| !used[j] && (gt[j] - e).abs() <= tol + 1e-9)
            .min_by(|&a, &b| (gt[a] - e).abs().total_cmp(&(gt[b] - e).abs()).then(gt[a].total_cmp(&gt[b])));
        if let Some(j) = best {
            used[j] = true;
            hits += 1;
        }
    }
    hits
}

/// Boundary precision, recall and F-measure at tolerance `tol` seconds.
pub fn boundary_prf(est: &[f64], gt: &[f64], tol: f64) -> Prf {
    Prf::from_counts(boundary_hits(est, gt, tol), est.len(), gt.len())
}

/// Which label a labelling score compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDim {
    Vocal,
    Pakhawaj,
    Net,
    Joint,
}

impl LabelDim {
    pub const ALL: [LabelDim; 4] = [LabelDim::Vocal, LabelDim::Pakhawaj, LabelDim::Net, LabelDim::Joint];

    fn matches(self, est: &Section, gt: &Section) -> bool {
        match self {
            LabelDim::Vocal => est.stm_vocal == gt.stm_vocal,
            LabelDim::Pakhawaj => est.stm_pakhawaj == gt.stm_pakhawaj,
            LabelDim::Net => est.stm_net == gt.stm_net,
            LabelDim::Joint => est.labels() == gt.labels(),
        }
    }
}

fn check_contiguous(which: &'static str, s: &[Section]) -> Result<(), EvalError> {
    for w in s.windows(2) {
        if (w[0].end - w[1].start).abs() > 1e-6 {
            return Err(EvalError::CoverageGap { which, at: w[0].end });
        }
    }
    Ok(())
}

/// A ground-truth section counts only when all three of its labels lie in
/// their class sets.
fn scored(gt: &Section) -> bool {
    !gt.is_excluded() && gt.stm_vocal.is_some() && gt.stm_pakhawaj.is_some() && gt.stm_net.is_some()
}

/// Fraction of the scored duration where `dim` agrees. Integration runs
/// over the intersection of the two spans; ground-truth regions with a label
/// outside the class sets (or none) leave both numerator and denominator.
pub fn labelling_accuracy(est: &SectionSequence, gt: &SectionSequence, dim: LabelDim) -> Result<f64, EvalError> {
    let (e, g) = (&est.sections, &gt.sections);
    check_contiguous("estimated", e)?;
    check_contiguous("ground-truth", g)?;
    let (Some(e0), Some(g0)) = (e.first(), g.first()) else {
        return Err(EvalError::NoOverlap);
    };
    let lo = e0.start.max(g0.start);
    let hi = e.last().unwrap().end.min(g.last().unwrap().end);
    if !(hi > lo) {
        return Err(EvalError::NoOverlap);
    }
    let (mut num, mut den) = (0.0, 0.0);
    let (mut i, mut j) = (0, 0);
    while i < e.len() && j < g.len() {
        let a = e[i].start.max(g[j].start).max(lo);
        let b = e[i].end.min(g[j].end).min(hi);
        if b > a && scored(&g[j]) {
            den += b - a;
            if dim.matches(&e[i], &g[j]) {
                num += b - a;
            }
        }
        if e[i].end < g[j].end { i += 1 } else { j += 1 }
    }
    if den <= 0.0 {
        return Err(EvalError::NoFrames);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScores {
    pub tol: f64,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabellingScores {
    pub vocal: f64,
    pub pakhawaj: f64,
    pub net: f64,
    pub joint: f64,
}

impl LabellingScores {
    pub fn compute(est: &SectionSequence, gt: &SectionSequence) -> Result<Self, EvalError> {
        Ok(Self {
            vocal: labelling_accuracy(est, gt, LabelDim::Vocal)?,
            pakhawaj: labelling_accuracy(est, gt, LabelDim::Pakhawaj)?,
            net: labelling_accuracy(est, gt, LabelDim::Net)?,
            joint: labelling_accuracy(est, gt, LabelDim::Joint)?,
        })
    }
}

/// Scores of one concert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcertEval {
    pub concert_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tempo: Option<TempoScores>,
    pub boundaries: Vec<BoundaryScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labelling: Option<LabellingScores>,
}

/// Tolerances used by default, in seconds.
pub const BOUNDARY_TOLERANCES: [f64; 2] = [1.5, 3.0];

/// Evaluates estimated sections (and optionally a tempo track) of one
/// concert against the ground truth.
pub fn evaluate_concert(
    concert_id: &str,
    est: &SectionSequence,
    gt: &SectionSequence,
    tols: &[f64],
    tempo: Option<(&TempoTrack, &TempoTrack, &TempoAccuracyConfig)>,
) -> Result<ConcertEval, EvalError> {
    let (eb, gb) = (est.boundaries(), gt.boundaries());
    Ok(ConcertEval {
        concert_id: concert_id.into(),
        tempo: tempo.map(|(e, g, c)| tempo_accuracy(e, g, c)).transpose()?,
        boundaries: tols
            .iter()
            .map(|&tol| BoundaryScores {
                tol,
                prf: boundary_prf(&eb, &gb, tol),
            })
            .collect(),
        labelling: Some(LabellingScores::compute(est, gt)?),
    })
}

/// Per-concert scores of one method and their dataset averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub concerts: Vec<ConcertEval>,
    pub mean: ConcertEval,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    /// Averages every score over the concerts that have it. Boundary F is
    /// recomputed from the averaged precision and recall.
    pub fn new(method: &str, concerts: Vec<ConcertEval>) -> Self {
        let tempo = mean(concerts.iter().filter_map(|c| c.tempo.map(|t| t.accuracy1))).map(|a1| TempoScores {
            accuracy1: a1,
            accuracy2: mean(concerts.iter().filter_map(|c| c.tempo.map(|t| t.accuracy2))).unwrap_or(0.0),
        });
        let mut tols: Vec<f64> = concerts.iter().flat_map(|c| c.boundaries.iter().map(|b| b.tol)).collect();
        tols.sort_by(f64::total_cmp);
        tols.dedup();
        let boundaries = tols
            .iter()
            .map(|&tol| {
                let at: Vec<Prf> = concerts
                    .iter()
                    .flat_map(|c| c.boundaries.iter().filter(|b| b.tol == tol).map(|b| b.prf))
                    .collect();
                let p = mean(at.iter().map(|x| x.precision)).unwrap_or(0.0);
                let r = mean(at.iter().map(|x| x.recall)).unwrap_or(0.0);
                BoundaryScores {
                    tol,
                    prf: Prf::from_pr(p, r),
                }
            })
            .collect();
        let labs: Vec<LabellingScores> = concerts.iter().filter_map(|c| c.labelling).collect();
        let labelling = (!labs.is_empty()).then(|| LabellingScores {
            vocal: mean(labs.iter().map(|l| l.vocal)).unwrap(),
            pakhawaj: mean(labs.iter().map(|l| l.pakhawaj)).unwrap(),
            net: mean(labs.iter().map(|l| l.net)).unwrap(),
            joint: mean(labs.iter().map(|l| l.joint)).unwrap(),
        });
        Self {
            method: method.into(),
            mean: ConcertEval {
                concert_id: "mean".into(),
                tempo,
                boundaries,
                labelling,
            },
            concerts,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Text tables with one row per method: tempo accuracies (percent),
/// boundary P/R/F per tolerance, and labelling accuracies (percent).
pub fn render_tables(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let pct = |x: f64| format!("{:.2}", 100.0 * x);

    if reports.iter().any(|r| r.mean.tempo.is_some()) {
        let _ = writeln!(out, "{:width$}  {:>10}  {:>10}", "Method", "Accuracy 1", "Accuracy 2");
        for r in reports {
            if let Some(t) = r.mean.tempo {
                let _ = writeln!(out, "{:width$}  {:>10}  {:>10}", r.method, pct(t.accuracy1), pct(t.accuracy2));
            }
        }
        out.push('\n');
    }

    let tols: Vec<f64> = reports
        .first()
        .map(|r| r.mean.boundaries.iter().map(|b| b.tol).collect())
        .unwrap_or_default();
    if !tols.is_empty() {
        let mut head = format!("{:width$}", "");
        let mut sub = format!("{:width$}", "");
        for t in &tols {
            let _ = write!(head, "  {:^22}", format!("+-{t}s tolerance"));
            let _ = write!(sub, "  {:>6} {:>6} {:>8}", "Prec.", "Rec.", "F-sc.");
        }
        let _ = writeln!(out, "{head}\n{sub}");
        for r in reports {
            let mut line = format!("{:width$}", r.method);
            for t in &tols {
                match r.mean.boundaries.iter().find(|b| b.tol == *t) {
                    Some(b) => {
                        let _ = write!(line, "  {:>6.3} {:>6.3} {:>8.3}", b.prf.precision, b.prf.recall, b.prf.f);
                    }
                    None => line.push_str(&format!("  {:>22}", "-")),
                }
            }
            let _ = writeln!(out, "{line}");
        }
        out.push('\n');
    }

    if reports.iter().any(|r| r.mean.labelling.is_some()) {
        let _ = writeln!(
            out,
            "{:width$}  {:>8}  {:>8}  {:>8}  {:>12}",
            "", "Vocals", "Pakhawaj", "Net", "All 3 labels"
        );
        for r in reports {
            if let Some(l) = r.mean.labelling {
                let _ = writeln!(
                    out,
                    "{:width$}  {:>8}  {:>8}  {:>8}  {:>12}",
                    r.method,
                    pct(l.vocal),
                    pct(l.pakhawaj),
                    pct(l.net),
                    pct(l.joint)
                );
            }
        }
    }
    out
}
