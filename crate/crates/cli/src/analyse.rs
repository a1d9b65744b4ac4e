//! Concert analysis: metric tempo, frame-wise s.t.m. tracks, sections and
//! surface tempo.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use laykari::dataset::{ConcertAnnotation, Stream, load_annotations};
use laykari::features::MelMatrix;
use laykari::segmentation::{
    FoldModel, FrameProvenance, SectionSequence, StmTrack, assemble_net, assemble_seg1, assemble_seg2,
    framewise_stm_cv, smooth_sections,
};
use laykari::tempo::{TempoTrack, metric_tempo_from_mel};
use rayon::prelude::*;

use crate::config::{AnalyseRun, RunConfig, SegMethod, record};
use crate::train::StreamModels;
use crate::{cache, corpus, plot};

pub struct Analysis {
    pub concert_id: Option<String>,
    pub duration: f64,
    pub metric_tempo: TempoTrack,
    pub tracks: BTreeMap<Stream, StmTrack>,
    pub provenance: BTreeMap<Stream, Vec<FrameProvenance>>,
    /// Frame-wise sections before smoothing.
    pub raw: SectionSequence,
    pub sections: SectionSequence,
}

impl Analysis {
    /// Metric tempo times each smoothed label, per frame: net, vocal and
    /// pakhawaj columns (undefined where the label is).
    pub fn surface_tempo(&self) -> Vec<(f64, Option<f64>, [Option<f64>; 3])> {
        let labels = self.sections.labels_at(&self.metric_tempo.times);
        self.metric_tempo
            .times
            .iter()
            .zip(&self.metric_tempo.bpm)
            .zip(labels)
            .map(|((&t, &mt), (v, p, n))| {
                let st = |l: Option<u32>| mt.zip(l).map(|(b, l)| b * l as f64);
                (t, mt, [st(n), st(v), st(p)])
            })
            .collect()
    }
}

/// The annotation next to the mixture file, used when none was given so an
/// analysed training concert never reaches models that saw it.
pub fn sibling_annotation(audio: &Path) -> Option<PathBuf> {
    let csv = audio.parent()?.join("sections.csv");
    (csv.is_file() && csv.with_file_name("concert.json").is_file()).then_some(csv)
}

pub fn analyse(cfg: &AnalyseRun) -> Result<Analysis> {
    cfg.feat.validate()?;
    let mut inputs: Vec<(Stream, &Path)> = vec![(Stream::Mixture, cfg.audio.as_path())];
    match (&cfg.vocal, &cfg.pakhawaj) {
        (Some(v), Some(p)) => {
            inputs.push((Stream::Vocal, v));
            inputs.push((Stream::Pakhawaj, p));
        }
        (None, None) => {}
        _ => bail!("--vocal and --pakhawaj must be given together"),
    }
    let annotation: Option<ConcertAnnotation> = cfg
        .annotation
        .as_ref()
        .map(|p| load_annotations(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;

    let loaded: Vec<(Stream, MelMatrix, f64, StreamModels)> = inputs
        .par_iter()
        .map(|&(stream, path)| {
            let audio = corpus::load_wav(path)?;
            let mel = cache::mel(&audio, &cfg.feat)?;
            let models = StreamModels::load(&cfg.models, stream)?;
            Ok((stream, mel, audio.duration(), models))
        })
        .collect::<Result<_>>()?;
    let duration = loaded[0].2;
    let frames = laykari::frame_times(duration).len();
    for (stream, _, d, _) in &loaded[1..] {
        if laykari::frame_times(*d).len() != frames {
            bail!("{stream} audio lasts {d:.2} s but the mixture lasts {duration:.2} s");
        }
    }

    let metric_tempo = metric_tempo_from_mel(&loaded[0].1, duration, &cfg.tempo)?;
    let classified: Vec<(Stream, StmTrack, Vec<FrameProvenance>)> = loaded
        .par_iter()
        .map(|(stream, mel, _, sm)| {
            let folds: Vec<FoldModel> = sm
                .models
                .iter()
                .zip(&sm.training_sections)
                .map(|(model, training_sections)| FoldModel {
                    model,
                    training_sections,
                })
                .collect();
            let (track, prov) = framewise_stm_cv(&folds, *stream, mel, duration, annotation.as_ref())
                .with_context(|| format!("classifying {stream}"))?;
            Ok((*stream, track, prov))
        })
        .collect::<Result<_>>()?;
    let mut tracks = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    for (s, t, p) in classified {
        tracks.insert(s, t);
        provenance.insert(s, p);
    }

    let net = &tracks[&Stream::Mixture];
    let raw = match (tracks.get(&Stream::Vocal), tracks.get(&Stream::Pakhawaj)) {
        (Some(v), Some(p)) => match cfg.method {
            SegMethod::Seg1 => assemble_seg1(v, p, Some(net), cfg.net_mode)?,
            SegMethod::Seg2 => assemble_seg2(v, p, net)?,
        },
        _ => assemble_net(net),
    };
    let sections = match cfg.smooth {
        Some(s) => smooth_sections(&raw, s),
        None => raw.clone(),
    };
    Ok(Analysis {
        concert_id: annotation.map(|a| a.concert_id),
        duration,
        metric_tempo,
        tracks,
        provenance,
        raw,
        sections,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |b| format!("{b:.3}"))
}

/// Writes every analysis output into `out`.
pub fn write(analysis: &Analysis, out: &Path, with_plot: bool) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    analysis.metric_tempo.write_csv(create(&out.join("metric_tempo.csv"))?)?;
    for (stream, track) in &analysis.tracks {
        let mut w = create(&out.join(format!("tracks_{stream}.csv")))?;
        track.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut w = create(&out.join("sections_raw.csv"))?;
    analysis.raw.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("sections.csv"))?;
    analysis.sections.write_csv(&mut w)?;
    w.flush()?;

    let stems = analysis.tracks.len() > 1;
    let mut w = create(&out.join("surface_tempo.csv"))?;
    write!(w, "time_s,mt_bpm,net_bpm")?;
    if stems {
        write!(w, ",vocal_bpm,pakhawaj_bpm")?;
    }
    writeln!(w)?;
    for (t, mt, st) in analysis.surface_tempo() {
        write!(w, "{t:.3},{},{}", cell(mt), cell(st[0]))?;
        if stems {
            write!(w, ",{},{}", cell(st[1]), cell(st[2]))?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let prov: BTreeMap<&str, &Vec<FrameProvenance>> =
        analysis.provenance.iter().map(|(s, p)| (s.name(), p)).collect();
    crate::config::write_json(&out.join("provenance.json"), &prov)?;
    if with_plot {
        plot::render(analysis, &out.join("plot.png"))?;
    }
    Ok(())
}

pub fn run(cfg: &AnalyseRun) -> Result<Analysis> {
    let mut cfg = cfg.clone();
    if cfg.annotation.is_none() {
        cfg.annotation = sibling_annotation(&cfg.audio);
        if let Some(a) = &cfg.annotation {
            log::info!("using annotation {} to keep fold models off their training sections", a.display());
        }
    }
    let analysis = analyse(&cfg)?;
    write(&analysis, &cfg.out, cfg.plot)?;
    record(&cfg.out, RunConfig::Analyse(cfg.clone()))?;
    Ok(analysis)
}
