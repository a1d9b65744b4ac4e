//! Scoring analysis outputs against annotations.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result, bail};
use laykari::dataset::{load_annotations, read_sections_csv};
use laykari::evaluation::{ConcertEval, EvalReport, evaluate_concert};
use laykari::segmentation::SectionSequence;
use laykari::tempo::{TempoTrack, mt_from_sams};

use crate::config::EvaluateRun;

fn sections(path: &Path) -> Result<SectionSequence> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SectionSequence {
        sections: read_sections_csv(file, path)?,
    })
}

fn concert_id(gt: &Path) -> String {
    gt.canonicalize()
        .ok()
        .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| gt.display().to_string())
}

/// Ground-truth metric tempo from the annotated sams, on the estimate's
/// frame times; undefined outside the annotated cycles.
pub fn gt_tempo_on(gt_sections: &Path, times: &[f64]) -> Result<TempoTrack> {
    let ann = load_annotations(gt_sections).with_context(|| format!("loading {}", gt_sections.display()))?;
    let gt = mt_from_sams(&ann.sam_times, ann.matras_per_cycle)?;
    let bpm = times
        .iter()
        .map(|&t| {
            let i = (t / laykari::ANALYSIS_HOP).round();
            if i < 0.0 || (i as usize) >= gt.len() || (gt.times[i as usize] - t).abs() > 1e-6 {
                return None;
            }
            gt.bpm[i as usize]
        })
        .collect();
    Ok(TempoTrack {
        times: times.to_vec(),
        bpm,
    })
}

pub fn run(cfg: &EvaluateRun) -> Result<EvalReport> {
    if cfg.est.is_empty() {
        bail!("nothing to evaluate");
    }
    if cfg.est.len() != cfg.gt.len() {
        bail!("{} estimates but {} ground-truth files", cfg.est.len(), cfg.gt.len());
    }
    if !cfg.est_tempo.is_empty() && cfg.est_tempo.len() != cfg.est.len() {
        bail!("{} tempo tracks for {} concerts", cfg.est_tempo.len(), cfg.est.len());
    }
    if cfg.tols.iter().any(|t| !(*t > 0.0)) {
        bail!("tolerances must be positive");
    }
    let mut concerts: Vec<ConcertEval> = Vec::new();
    for (i, (est, gt)) in cfg.est.iter().zip(&cfg.gt).enumerate() {
        let est_seq = sections(est)?;
        let gt_seq = sections(gt)?;
        let tempo = match cfg.est_tempo.get(i) {
            Some(p) => {
                let f = File::open(p).with_context(|| format!("reading {}", p.display()))?;
                let est_t = TempoTrack::read_csv(f).with_context(|| format!("parsing {}", p.display()))?;
                let gt_t = gt_tempo_on(gt, &est_t.times)?;
                Some((est_t, gt_t))
            }
            None => None,
        };
        let ev = evaluate_concert(
            &concert_id(gt),
            &est_seq,
            &gt_seq,
            &cfg.tols,
            tempo.as_ref().map(|(e, g)| (e, g, &cfg.accuracy)),
        )
        .with_context(|| format!("evaluating {} against {}", est.display(), gt.display()))?;
        concerts.push(ev);
    }
    Ok(EvalReport::new(&cfg.method, concerts))
}
