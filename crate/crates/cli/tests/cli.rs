use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use laykari::features::MelMatrix;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laykari")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ONE_CONCERT: &str = r#"{
  "concert_id": "one",
  "tempo": {"kind": "constant", "bpm": 60},
  "schedule": [
    {"duration": 14, "stm_vocal": 1, "stm_pakhawaj": 2},
    {"duration": 12, "stm_vocal": 4, "stm_pakhawaj": 2}
  ]
}"#;

/// A small corpus and models trained on it, shared by the tests below.
fn trained() -> &'static (PathBuf, PathBuf) {
    static CELL: OnceLock<(PathBuf, PathBuf)> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli_trained");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let spec = root.join("spec.json");
        std::fs::write(
            &spec,
            r#"{"random": {"n_concerts": 3, "seed": 2, "prefix": "k",
                "config": {"n_sections": 3, "min_section_s": 12, "max_section_s": 14}}}"#,
        )
        .unwrap();
        let corpus = root.join("corpus");
        let models = root.join("models");
        assert!(bin(&["synth", "--spec", p(&spec), "--out", p(&corpus)]).status.success());
        let o = bin(&[
            "train", "--corpus", p(&corpus), "--out", p(&models), "--folds", "2", "--epochs", "1", "--patience",
            "1", "--target", "6",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (corpus, models)
    })
}

#[test]
fn synth_writes_a_concert_directory() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, ONE_CONCERT).unwrap();
    let out = dir.path().join("corpus");
    let o = bin(&["synth", "--spec", p(&spec), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["mix.wav", "vocal.wav", "pakhawaj.wav", "sections.csv", "concert.json", "synth_spec.json"] {
        assert!(out.join("one").join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out.join("one/sections.csv")).unwrap();
    assert_eq!(
        csv,
        "start_s,end_s,stm_vocal,stm_pakhawaj,stm_net\n0.000,14.000,1,2,2\n14.000,26.000,4,2,4\n"
    );
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["command"], "synth");
    assert_eq!(cfg["concerts"][0]["concert_id"], "one");
}

#[test]
fn synth_output_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        assert!(bin(&["synth", "--random", "3", "--seed", "4", "--out", p(out), "--jobs", jobs]).status.success());
    }
    for id in ["synth000", "synth001", "synth002"] {
        for f in ["mix.wav", "sections.csv", "concert.json"] {
            assert_eq!(std::fs::read(a.join(id).join(f)).unwrap(), std::fs::read(b.join(id).join(f)).unwrap());
        }
    }
}

#[test]
fn bad_invocations_fail_with_a_diagnostic() {
    let o = bin(&["synth", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus"));

    let o = bin(&["tempo", "--audio", "/no/such/file.wav", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/file.wav"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"concert_id": "x", "schedule": [{"duration": 3, "stm_vocal": 1}]}"#).unwrap();
    let o = bin(&["synth", "--spec", p(&spec), "--out", p(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("concert x"), "{}", stderr(&o));

    let csv = dir.path().join("s.csv");
    std::fs::write(&csv, "start_s,end_s,stm_vocal,stm_pakhawaj,stm_net\n0,10,1,1,1\n5,20,1,1,1\n").unwrap();
    let o = bin(&["evaluate", "--est", p(&csv), "--gt", p(&csv)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("overlap"), "{}", stderr(&o));
}

#[test]
fn evaluate_reports_both_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.csv");
    let est = dir.path().join("est.csv");
    std::fs::write(&gt, "start_s,end_s,stm_vocal,stm_pakhawaj,stm_net\n0,30,1,1,1\n30,60,2,1,2\n60,90,2,4,4\n").unwrap();
    std::fs::write(&est, "start_s,end_s,stm_vocal,stm_pakhawaj,stm_net\n0,32,1,1,1\n32,90,2,1,2\n").unwrap();
    let o = bin(&["evaluate", "--est", p(&est), "--gt", p(&gt), "--tol", "1.5", "--tol", "3.0", "--table"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let report: serde_json::Value =
        serde_json::Deserializer::from_str(&text).into_iter().next().unwrap().unwrap();
    let b = &report["concerts"][0]["boundaries"];
    assert_eq!(b[0]["tol"], 1.5);
    assert_eq!(b[0]["precision"], 0.0);
    assert_eq!(b[1]["tol"], 3.0);
    assert_eq!(b[1]["precision"], 1.0);
    assert_eq!(b[1]["recall"], 0.5);
    assert!(text.contains("+-3s tolerance"));
}

#[test]
fn featurize_and_tempo_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, ONE_CONCERT).unwrap();
    let corpus = dir.path().join("corpus");
    assert!(bin(&["synth", "--spec", p(&spec), "--out", p(&corpus)]).status.success());
    let mix = corpus.join("one/mix.wav");

    let mel_path = dir.path().join("mix.mel");
    assert!(bin(&["featurize", "--audio", p(&mix), "--out", p(&mel_path)]).status.success());
    let mel = MelMatrix::read_cache(&mel_path).unwrap();
    assert_eq!(mel.n_mels(), 40);
    assert_eq!(mel.n_frames(), 1301);

    let out = dir.path().join("tempo");
    let o = Command::new(env!("CARGO_BIN_EXE_laykari"))
        .args(["tempo", "--audio", p(&mix), "--out", p(&out)])
        .env("LAYKARI_CACHE", dir.path().join("cache"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("metric_tempo.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "time_s,bpm");
    assert_eq!(rows.len(), 1 + 52);
    let mid: f64 = rows[26].split(',').nth(1).unwrap().parse().unwrap();
    assert!((mid / 60.0 - 1.0).abs() < 0.04, "{mid}");
    assert_eq!(std::fs::read_dir(dir.path().join("cache")).unwrap().count(), 1);
}

#[test]
fn train_writes_fold_models_and_histories() {
    let (_, models) = trained();
    for stream in ["mixture", "vocal", "pakhawaj"] {
        for f in ["fold0.stmw", "fold1.stmw", "fold0_history.csv", "fold1_history.csv", "folds.json"] {
            assert!(models.join(stream).join(f).is_file(), "{stream}/{f}");
        }
    }
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(models.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["command"], "train");
    assert_eq!(cfg["folds"], 2);
    assert_eq!(cfg["extract"]["target"], 6);
    assert!(models.join("summary.json").is_file());
}

#[test]
fn analyse_with_and_without_stems() {
    let (corpus, models) = trained();
    let dir = tempfile::tempdir().unwrap();
    let c = corpus.join("k000");

    let full = dir.path().join("full");
    let o = bin(&[
        "analyse", "--audio", p(&c.join("mix.wav")), "--vocal", p(&c.join("vocal.wav")), "--pakhawaj",
        p(&c.join("pakhawaj.wav")), "--models", p(models), "--out", p(&full), "--plot",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sections = std::fs::read_to_string(full.join("sections.csv")).unwrap();
    assert!(sections.starts_with("start_s,end_s,stm_vocal,stm_pakhawaj,stm_net\n"));
    for row in sections.lines().skip(1) {
        assert!(row.split(',').skip(2).all(|l| l != "na"), "{row}");
    }
    for f in ["tracks_vocal.csv", "tracks_pakhawaj.csv", "tracks_mixture.csv", "metric_tempo.csv", "plot.png"] {
        assert!(full.join(f).is_file(), "{f}");
    }
    let surface = std::fs::read_to_string(full.join("surface_tempo.csv")).unwrap();
    assert!(surface.starts_with("time_s,mt_bpm,net_bpm,vocal_bpm,pakhawaj_bpm\n"));

    let net_only = dir.path().join("net");
    let o = bin(&["analyse", "--audio", p(&c.join("mix.wav")), "--models", p(models), "--out", p(&net_only)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(net_only.join("tracks_mixture.csv").is_file());
    assert!(!net_only.join("tracks_vocal.csv").exists());
    let sections = std::fs::read_to_string(net_only.join("sections.csv")).unwrap();
    for row in sections.lines().skip(1) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(&cells[2..4], ["na", "na"]);
        assert_ne!(cells[4], "na");
    }
    let surface = std::fs::read_to_string(net_only.join("surface_tempo.csv")).unwrap();
    assert!(surface.starts_with("time_s,mt_bpm,net_bpm\n"));

    let o = bin(&["analyse", "--audio", p(&c.join("mix.wav")), "--vocal", p(&c.join("vocal.wav")), "--models", p(models), "--out", p(&net_only)]);
    assert_eq!(o.status.code(), Some(2));
}
