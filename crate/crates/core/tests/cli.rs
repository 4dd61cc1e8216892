use std::path::{Path, PathBuf};

use conpro::cli::{self, CliError, RunManifest};
use conpro::data::load_dataset;

const SMALL: &str = "\
# small end-to-end run
dim = 8
subjects_per_class = 6
epochs_con = 2
epochs_pro = 2
train_pairs = 128
eval_pairs = 64
hidden = 16
feature_dim = 16
proj_dim = 8
probe_epochs = 5
";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name).display().to_string();
        let text = format!(
            "{SMALL}{extra}\ndata_path = {}\ncheckpoint_path = {}\nmetrics_path = {}\nembedding_path = {}\nplot_path = {}\n",
            p("data.cpds"),
            p("model.cpk"),
            p("metrics.csv"),
            p("embedding.csv"),
            p("embedding.svg"),
        );
        std::fs::write(dir.path().join("run.cfg"), text).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &str, sets: &[&str]) -> Result<RunManifest, CliError> {
        self.run_env(command, sets, None)
    }

    fn run_env(&self, command: &str, sets: &[&str], env: Option<&str>) -> Result<RunManifest, CliError> {
        let cfg = self.path("run.cfg").display().to_string();
        let mut args = vec!["conpro".to_string(), command.into(), "--config".into(), cfg];
        for s in sets {
            args.push("--set".into());
            args.push(s.to_string());
        }
        cli::run(args, env)
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn gen_data_is_loadable_and_deterministic() {
    let ws = Workspace::new("");
    let m = ws.run("gen-data", &[]).unwrap();
    assert_eq!(m.command, "gen-data");
    let first = std::fs::read(ws.path("data.cpds")).unwrap();
    let ds = load_dataset(ws.path("data.cpds")).unwrap();
    assert_eq!(ds.dim(), 8);
    let mut seen = [false; 6];
    for s in ds.samples() {
        seen[usize::from(s.severity)] = true;
    }
    assert!(seen.iter().all(|&b| b));
    ws.run("gen-data", &[]).unwrap();
    assert_eq!(std::fs::read(ws.path("data.cpds")).unwrap(), first);
    assert!(ws.path("data.cpds.manifest").exists());
}

#[test]
fn full_pipeline_and_manifests() {
    let ws = Workspace::new("");
    ws.run("gen-data", &[]).unwrap();

    let m = ws.run("train", &[]).unwrap();
    let log = read(&ws.path("model_log.csv"));
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,phase,loss,pref_acc"));
    let phases: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(phases, ["con", "con", "pro", "pro"]);
    let manifest = RunManifest::parse(&read(&ws.path("model.cpk.manifest"))).unwrap();
    assert_eq!(manifest, RunManifest { wall_secs: manifest.wall_secs, ..m });
    assert_eq!(manifest.config.get("epochs_pro").map(String::as_str), Some("2"));

    let ckpt_bytes = std::fs::read(ws.path("model.cpk")).unwrap();
    ws.run("train", &[]).unwrap();
    assert_eq!(std::fs::read(ws.path("model.cpk")).unwrap(), ckpt_bytes);
    assert_eq!(read(&ws.path("model_log.csv")), log);

    ws.run("eval", &[]).unwrap();
    let metrics = read(&ws.path("metrics.csv"));
    let names: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for required in ["macro_f1", "recall", "mae", "maee", "ordering_rho"] {
        assert!(names.contains(&required), "missing {required}");
    }
    let maee: f64 = metrics
        .lines()
        .find_map(|l| l.strip_prefix("maee,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(maee >= 1.0);
    assert_eq!(read(&ws.path("metrics_confusion.csv")).lines().count(), 6);

    ws.run("embed", &[]).unwrap();
    let emb = read(&ws.path("embedding.csv"));
    let rows: Vec<Vec<f64>> = emb
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let ds = load_dataset(ws.path("data.cpds")).unwrap();
    let splits = conpro::data::split_by_subject(&ds, &Default::default()).unwrap();
    assert_eq!(rows.len(), splits.test.len());
    assert!(rows.iter().all(|r| (0.0..=5.0).contains(&r[1]) && r[1].fract() == 0.0));
    let var = |k: usize| {
        let m = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
        rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>()
    };
    assert!(var(3) >= var(4));

    ws.run("plot", &[]).unwrap();
    let svg = read(&ws.path("embedding.svg"));
    roxmltree::Document::parse(&svg).unwrap();
    assert!(ws.path("embedding.svg.manifest").exists());
}

#[test]
fn supcon2_log_has_only_con_rows() {
    let ws = Workspace::new("mode = supcon2\n");
    ws.run("gen-data", &[]).unwrap();
    ws.run("train", &[]).unwrap();
    let log = read(&ws.path("model_log.csv"));
    assert!(log.lines().skip(1).all(|l| l.split(',').nth(1) == Some("con")));
}

#[test]
fn overrides_and_env_seed() {
    let ws = Workspace::new("seed = 1\n");
    ws.run("gen-data", &[]).unwrap();
    let m = ws.run_env("train", &["epochs_pro=1"], Some("9")).unwrap();
    assert_eq!(m.seed, 9);
    assert_eq!(m.config["epochs_pro"], "1");
    let m = ws.run_env("train", &["seed=4"], Some("9")).unwrap();
    assert_eq!(m.seed, 4);
}

#[test]
fn out_flag_redirects_primary_output() {
    let ws = Workspace::new("");
    let out = ws.path("other.cpds");
    let args = [
        "conpro".to_string(),
        "gen-data".into(),
        "--config".into(),
        ws.path("run.cfg").display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    cli::run(args, None).unwrap();
    assert!(out.exists());
    assert!(!ws.path("data.cpds").exists());
}

#[test]
fn errors_are_reported() {
    let ws = Workspace::new("");
    assert!(matches!(ws.run("gen-data", &["margn=2"]), Err(CliError::UnknownKey(k)) if k == "margn"));
    assert!(matches!(ws.run("train", &[]), Err(CliError::Data(_))));
    assert!(matches!(
        cli::run(["conpro", "fly", "--config", "x"], None),
        Err(CliError::Usage(_))
    ));

    ws.run("gen-data", &[]).unwrap();
    ws.run("train", &["epochs_con=1", "epochs_pro=0"]).unwrap();
    ws.run("gen-data", &["dim=6"]).unwrap();
    let err = ws.run("eval", &[]).unwrap_err();
    assert!(matches!(err, CliError::DimMismatch { expected: 8, found: 6, .. }));
    assert!(err.to_string().contains("dimension"));

    std::fs::write(ws.path("embedding.csv"), "subject_id,severity,dist_to_anchor,pc1,pc2\n").unwrap();
    assert!(ws.run("plot", &[]).is_err());
    assert!(!ws.path("embedding.svg").exists());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_conpro");
    let ws = Workspace::new("");
    let ok = std::process::Command::new(bin)
        .args(["gen-data", "--config"])
        .arg(ws.path("run.cfg"))
        .env_remove(cli::SEED_ENV)
        .output()
        .unwrap();
    assert!(ok.status.success());
    let bad = std::process::Command::new(bin)
        .args(["gen-data", "--config"])
        .arg(ws.path("run.cfg"))
        .args(["--set", "margn=2"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("margn"));
}
