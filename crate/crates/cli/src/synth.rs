//! Synthetic corpus generation from spec files.

use std::path::Path;

use anyhow::{Context, Result, bail};
use laykari::synth::{RandomSpecConfig, SynthSpec, generate_concert, random_spec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SynthRun, read_json, record, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomCorpus {
    pub n_concerts: usize,
    pub seed: u64,
    pub prefix: String,
    pub config: RandomSpecConfig,
}

impl Default for RandomCorpus {
    fn default() -> Self {
        Self {
            n_concerts: 10,
            seed: 0,
            prefix: "synth".into(),
            config: RandomSpecConfig::default(),
        }
    }
}

impl RandomCorpus {
    pub fn specs(&self) -> Vec<SynthSpec> {
        (0..self.n_concerts)
            .map(|i| {
                let seed = self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                random_spec(&format!("{}{i:03}", self.prefix), seed, &self.config)
            })
            .collect()
    }
}

/// Accepted spec files: one concert, a list of concerts, or
/// `{"random": {...}}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SpecFile {
    Random { random: RandomCorpus },
    Many(Vec<SynthSpec>),
    One(SynthSpec),
}

impl SpecFile {
    pub fn specs(self) -> Vec<SynthSpec> {
        match self {
            SpecFile::Random { random } => random.specs(),
            SpecFile::Many(v) => v,
            SpecFile::One(s) => vec![s],
        }
    }
}

pub fn load_specs(path: &Path) -> Result<Vec<SynthSpec>> {
    Ok(read_json::<SpecFile>(path)?.specs())
}

/// Renders every concert into `<out>/<concert_id>/`.
pub fn run(specs: Vec<SynthSpec>, out: &Path) -> Result<()> {
    if specs.is_empty() {
        bail!("no concerts to synthesise");
    }
    let mut ids: Vec<&str> = specs.iter().map(|s| s.concert_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("duplicate concert id {:?}", w[0]);
    }
    for s in &specs {
        s.validate().with_context(|| format!("concert {}", s.concert_id))?;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    specs.par_iter().try_for_each(|s| -> Result<()> {
        let dir = out.join(&s.concert_id);
        let concert = generate_concert(s).with_context(|| format!("concert {}", s.concert_id))?;
        concert.save(&dir).with_context(|| format!("writing {}", dir.display()))?;
        write_json(&dir.join("synth_spec.json"), s)
    })?;
    record(out, RunConfig::Synth(SynthRun { concerts: specs }))
}
