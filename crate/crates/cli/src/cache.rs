//! Log-mel cache keyed by audio content and analysis settings.

use std::path::PathBuf;

use anyhow::Result;
use laykari::audio::AudioBuffer;
use laykari::features::{FeatConfig, MelMatrix, log_mel};
use sha2::{Digest, Sha256};

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "LAYKARI_CACHE";

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn key(audio: &AudioBuffer, feat: &FeatConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(feat).expect("config serialises"));
    h.update(audio.rate().to_le_bytes());
    for s in audio.samples() {
        h.update(s.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Log-mel of `audio`, read from and stored to `$LAYKARI_CACHE` when set.
pub fn mel(audio: &AudioBuffer, feat: &FeatConfig) -> Result<MelMatrix> {
    let Some(dir) = cache_dir() else {
        return Ok(log_mel(audio, feat)?);
    };
    let path = dir.join(format!("{}.mel", key(audio, feat)));
    if let Ok(m) = MelMatrix::read_cache(&path) {
        return Ok(m);
    }
    let m = log_mel(audio, feat)?;
    std::fs::create_dir_all(&dir)?;
    // Write then rename so concurrent readers never see a partial file.
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    m.write_cache(&tmp)?;
    std::fs::rename(&tmp, &path)?;
    Ok(m)
}
