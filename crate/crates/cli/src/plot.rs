//! PNG overview of an analysis: metric and surface tempo on top, one
//! probability strip per stream, and the section labels at the bottom.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use laykari::dataset::Stream;

use crate::analyse::Analysis;

const PX_PER_FRAME: u32 = 2;
const TEMPO_H: u32 = 160;
const ROW_H: u32 = 8;
const GAP: u32 = 6;
const BAND_H: u32 = 14;

fn label_colour(stm: Option<u32>) -> Rgb<u8> {
    match stm {
        Some(1) => Rgb([68, 119, 170]),
        Some(2) => Rgb([102, 204, 238]),
        Some(4) => Rgb([34, 136, 51]),
        Some(8) => Rgb([204, 187, 68]),
        Some(16) => Rgb([238, 102, 119]),
        _ => Rgb([200, 200, 200]),
    }
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, c: Rgb<u8>) {
    for x in x0..(x0 + w).min(img.width()) {
        for y in y0..(y0 + h).min(img.height()) {
            img.put_pixel(x, y, c);
        }
    }
}

pub fn render(a: &Analysis, path: &Path) -> Result<()> {
    let n = a.metric_tempo.len() as u32;
    let width = (n * PX_PER_FRAME).max(1);
    let strips: u32 = a.tracks.values().map(|t| t.classes.len() as u32 * ROW_H + GAP).sum();
    let bands = if a.tracks.len() > 1 { 3 } else { 1 };
    let height = TEMPO_H + GAP + strips + bands * (BAND_H + 2);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    // Tempo panel on a log2 axis from 20 to 1280 bpm.
    let surface = a.surface_tempo();
    let y_of = |bpm: f64| {
        let f = ((bpm / 20.0).log2() / 6.0).clamp(0.0, 1.0);
        ((1.0 - f) * (TEMPO_H - 1) as f64) as u32
    };
    for (i, (_, mt, st)) in surface.iter().enumerate() {
        let x = i as u32 * PX_PER_FRAME;
        if let Some(b) = st[0] {
            fill(&mut img, x, y_of(b), PX_PER_FRAME, 2, Rgb([200, 40, 40]));
        }
        if let Some(b) = mt {
            fill(&mut img, x, y_of(*b), PX_PER_FRAME, 2, Rgb([0, 0, 0]));
        }
    }

    let mut y = TEMPO_H + GAP;
    for stream in [Stream::Vocal, Stream::Pakhawaj, Stream::Mixture] {
        let Some(track) = a.tracks.get(&stream) else {
            continue;
        };
        // Highest class on top.
        for (row, _) in track.classes.iter().enumerate().rev() {
            for f in 0..track.len() {
                let v = 255 - (track.probs[[f, row]].clamp(0.0, 1.0) * 255.0) as u8;
                fill(&mut img, f as u32 * PX_PER_FRAME, y, PX_PER_FRAME, ROW_H, Rgb([v, v, v]));
            }
            y += ROW_H;
        }
        y += GAP;
    }

    let labels = a.sections.labels_at(&a.metric_tempo.times);
    for band in 0..bands {
        for (f, l) in labels.iter().enumerate() {
            let stm = match band {
                0 => l.2,
                1 => l.0,
                _ => l.1,
            };
            fill(&mut img, f as u32 * PX_PER_FRAME, y, PX_PER_FRAME, BAND_H, label_colour(stm));
        }
        y += BAND_H + 2;
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
