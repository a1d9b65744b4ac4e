//! Concert directories: `<id>/sections.csv`, `<id>/concert.json` and one WAV
//! per stream.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use laykari::audio::{AudioBuffer, CANONICAL_RATE, load_audio};
use laykari::dataset::{ConcertAnnotation, Stream, load_annotations};

pub fn wav_name(stream: Stream) -> &'static str {
    match stream {
        Stream::Mixture => "mix.wav",
        Stream::Vocal => "vocal.wav",
        Stream::Pakhawaj => "pakhawaj.wav",
    }
}

pub fn load_wav(path: &Path) -> Result<AudioBuffer> {
    load_audio(path, CANONICAL_RATE, true).with_context(|| format!("reading {}", path.display()))
}

/// Concert directories under `root`, sorted by name.
pub fn concert_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let p = entry?.path();
        if p.join("sections.csv").is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!("{}: no concert directories (with sections.csv) found", root.display());
    }
    Ok(dirs)
}

pub fn load_annotation(dir: &Path) -> Result<ConcertAnnotation> {
    let csv = dir.join("sections.csv");
    load_annotations(&csv).with_context(|| format!("loading {}", csv.display()))
}

pub fn load_stream(dir: &Path, stream: Stream) -> Result<AudioBuffer> {
    let path = dir.join(wav_name(stream));
    if !path.is_file() {
        bail!("{}: missing {} for stream {stream}", dir.display(), wav_name(stream));
    }
    load_wav(&path)
}
