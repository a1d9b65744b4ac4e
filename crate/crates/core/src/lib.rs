pub mod audio;
pub mod dataset;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod segmentation;
pub mod synth;
pub mod tempo;

/// Hop of every frame-level track (tempo and s.t.m.), in seconds.
pub const ANALYSIS_HOP: f64 = 0.5;

/// Frame times `0, 0.5, 1.0, ...` covering `duration` seconds.
pub fn frame_times(duration: f64) -> Vec<f64> {
    let n = (duration / ANALYSIS_HOP + 1e-9).floor().max(0.0) as usize;
    (0..n).map(|i| i as f64 * ANALYSIS_HOP).collect()
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/synthetic-concerts.md")]
    mod synthetic_concerts {}
    #[doc = include_str!("../../../book/src/metric-tempo.md")]
    mod metric_tempo {}
    #[doc = include_str!("../../../book/src/stm-classifier.md")]
    mod stm_classifier {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
