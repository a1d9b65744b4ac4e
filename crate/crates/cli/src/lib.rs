//! Command-line front end: synthesis, feature caching, training, analysis
//! and evaluation.

pub mod analyse;
pub mod cache;
pub mod config;
pub mod corpus;
pub mod evaluate;
pub mod plot;
pub mod synth;
pub mod train;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand};
use laykari::dataset::Stream;
use laykari::evaluation::render_tables;
use laykari::model::Variant;
use laykari::segmentation::{NetMode, SmoothConfig};
use laykari::tempo::{TempoRange, metric_tempo_from_mel};

use crate::config::{
    AnalyseRun, EvaluateRun, FeaturizeRun, RunConfig, SegMethod, TempoRun, TrainRun, read_json, record,
};

#[derive(Debug, Parser)]
#[command(name = "laykari", version, about = "Metric and surface tempo analysis of dhrupad concert audio")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render synthetic concerts with stems and annotations.
    Synth(SynthArgs),
    /// Compute the log-mel matrix of a recording and store it.
    Featurize(FeaturizeArgs),
    /// Train cross-validated s.t.m. classifiers on an annotated corpus.
    Train(TrainArgs),
    /// Estimate the metric tempo of a recording.
    Tempo(TempoArgs),
    /// Metric tempo, s.t.m. tracks, sections and surface tempo of a concert.
    Analyse(AnalyseArgs),
    /// Score estimated sections and tempo against annotations.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON spec: one concert, a list, or {"random": {...}}.
    #[arg(long, conflicts_with = "random")]
    spec: Option<PathBuf>,
    /// Number of random concerts instead of a spec file.
    #[arg(long, value_name = "N")]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Streams to train (mixture, vocal, pakhawaj).
    #[arg(long, value_delimiter = ',')]
    streams: Option<Vec<Stream>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Examples per class.
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TempoArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TempoRange::default().lo)]
    lo: f64,
    #[arg(long, default_value_t = TempoRange::default().hi)]
    hi: f64,
}

#[derive(Debug, Args)]
struct AnalyseArgs {
    /// Mixture recording.
    #[arg(long)]
    audio: PathBuf,
    #[arg(long, requires = "pakhawaj")]
    vocal: Option<PathBuf>,
    #[arg(long, requires = "vocal")]
    pakhawaj: Option<PathBuf>,
    /// Output directory of `train`.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Annotation of the concert (defaults to a sections.csv next to the audio).
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SegMethod::Seg2)]
    method: SegMethod,
    /// seg1 only: take the net label from the net model or as max(vocal, pakhawaj).
    #[arg(long, value_enum, default_value_t = NetModeArg::FromModel)]
    net_mode: NetModeArg,
    /// Minimum section length after smoothing, seconds (0 disables).
    #[arg(long, default_value_t = SmoothConfig::default().min_dur)]
    min_section: f64,
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum NetModeArg {
    FromModel,
    AsMax,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Estimated sections.csv (repeat, paired with --gt).
    #[arg(long, required = true)]
    est: Vec<PathBuf>,
    /// Annotated sections.csv (concert.json beside it for tempo).
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Estimated metric_tempo.csv, paired with --est.
    #[arg(long)]
    est_tempo: Vec<PathBuf>,
    /// Boundary tolerance in seconds (repeatable).
    #[arg(long = "tol")]
    tols: Vec<f64>,
    #[arg(long, default_value = "estimate")]
    method: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print text tables.
    #[arg(long)]
    table: bool,
}

fn train_run(a: TrainArgs) -> Result<TrainRun> {
    let mut cfg: TrainRun = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainRun::default(),
    };
    cfg.corpus = a.corpus;
    cfg.out = a.out;
    if let Some(s) = a.streams {
        cfg.streams = s;
    }
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(p) = a.patience {
        cfg.train.patience = p;
    }
    if let Some(t) = a.target {
        cfg.extract.target = Some(t);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn analyse_run(a: AnalyseArgs) -> AnalyseRun {
    AnalyseRun {
        audio: a.audio,
        vocal: a.vocal,
        pakhawaj: a.pakhawaj,
        models: a.models,
        out: a.out,
        annotation: a.annotation,
        method: a.method,
        net_mode: match a.net_mode {
            NetModeArg::FromModel => NetMode::FromModel,
            NetModeArg::AsMax => NetMode::AsMax,
        },
        smooth: (a.min_section > 0.0).then(|| SmoothConfig {
            min_dur: a.min_section,
            ..Default::default()
        }),
        plot: a.plot,
        ..Default::default()
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => {
            let specs = match (a.spec, a.random) {
                (Some(p), None) => synth::load_specs(&p)?,
                (None, Some(n)) => synth::RandomCorpus {
                    n_concerts: n,
                    seed: a.seed,
                    ..Default::default()
                }
                .specs(),
                _ => bail!("give either --spec or --random"),
            };
            synth::run(specs, &a.out)
        }
        Command::Featurize(a) => {
            let cfg = FeaturizeRun {
                audio: a.audio,
                feat: Default::default(),
            };
            let audio = corpus::load_wav(&cfg.audio)?;
            let mel = laykari::features::log_mel(&audio, &cfg.feat)?;
            mel.write_cache(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
            Ok(())
        }
        Command::Train(a) => {
            let cfg = train_run(a)?;
            let summary = train::run(&cfg)?;
            for (stream, f) in &summary.streams {
                for r in &f.folds {
                    println!(
                        "{stream} fold {}: best epoch {} train acc {:.3} val acc {:.3}",
                        r.fold, r.best_epoch, r.train_acc, r.val_acc
                    );
                }
            }
            Ok(())
        }
        Command::Tempo(a) => {
            let mut cfg = TempoRun {
                audio: a.audio,
                feat: Default::default(),
                tempo: Default::default(),
            };
            cfg.tempo.range = TempoRange::new(a.lo, a.hi)?;
            let audio = corpus::load_wav(&cfg.audio)?;
            let mel = cache::mel(&audio, &cfg.feat)?;
            let track = metric_tempo_from_mel(&mel, audio.duration(), &cfg.tempo)?;
            std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
            let path = a.out.join("metric_tempo.csv");
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            track.write_csv(std::io::BufWriter::new(file))?;
            record(&a.out, RunConfig::Tempo(cfg))
        }
        Command::Analyse(a) => {
            let cfg = analyse_run(a);
            let analysis = analyse::run(&cfg)?;
            println!(
                "{} sections over {:.1} s written to {}",
                analysis.sections.sections.len(),
                analysis.duration,
                cfg.out.display()
            );
            Ok(())
        }
        Command::Evaluate(a) => {
            let mut cfg = EvaluateRun {
                method: a.method,
                est: a.est,
                gt: a.gt,
                est_tempo: a.est_tempo,
                ..Default::default()
            };
            if !a.tols.is_empty() {
                cfg.tols = a.tols;
            }
            let report = evaluate::run(&cfg)?;
            let json = report.to_json() + "\n";
            let mut stdout = std::io::stdout().lock();
            match &a.out {
                Some(p) => std::fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?,
                None => stdout.write_all(json.as_bytes())?,
            }
            if a.table {
                stdout.write_all(render_tables(std::slice::from_ref(&report)).as_bytes())?;
            }
            Ok(())
        }
    }
}

/// Runs the command line `argv` (program name first) and returns the exit
/// status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be positive");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let result = pool
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|p| p.install(|| dispatch(cli.command)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
