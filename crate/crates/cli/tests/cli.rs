use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppssl_cli::commands::{cmd_gen_data, cmd_train};
use ppssl_cli::records::{aggregate, Aggregate, EPOCH_HEADER};
use ppssl_cli::ExperimentConfig;
use ppssl_core::RunRecord;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ppssl"));
    c.env_remove("PPGRAD_SEED");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    out
}

const SHORT: &str = "[data]\nkind = \"two_group\"\nmu = 3.0\n[experiment]\nepochs = 60\nseeds = [3, 4]\n";

#[test]
fn gen_data_writes_full_table_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[data]\nkind = \"two_group\"\n");
    for sub in ["a", "b"] {
        let o = run(bin().args(["gen-data", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join(sub)));
        assert!(o.status.success());
    }
    let a = std::fs::read_to_string(tmp.path().join("a/seed_0/data.csv")).unwrap();
    let b = std::fs::read_to_string(tmp.path().join("b/seed_0/data.csv")).unwrap();
    assert_eq!(a, b);
    let mut lines = a.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3 + 11);
    assert_eq!(lines.count(), 2000);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("a/seed_0/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["rows"]["labeled"], 20);
    assert_eq!(manifest["rows"]["unlabeled"], 990);
    assert_eq!(manifest["rows"]["test"], 790);
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    for (text, field) in [
        ("[data]\nkind = \"two_group\"\ntau = 1.5\n", "tau"),
        ("[data]\nkind = \"two_group\"\n[experiment]\nepochz = 3\n", "epochz"),
        (
            "[data]\nkind = \"csv\"\npath = \"/no/such/file.csv\"\nfeatures = [\"x0\"]\ntarget = \"y\"\nfractions = { labeled = 0.1, validation = 0.1, test = 0.2, pretrain = 0.1 }\n",
            "data.path",
        ),
    ] {
        let cfg = write_config(tmp.path(), text);
        let out_dir = tmp.path().join("out");
        let o = run(bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out_dir));
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(field), "{text}");
        assert!(!out_dir.exists(), "nothing computed or written");
    }
    let o = run(bin().args(["train", "--config"]).arg(tmp.path().join("missing.toml")).args(["--out", "x"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_environment_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[data]\nkind = \"two_group\"\n[experiment]\nseeds = [1, 2]\n");
    let o = run(bin().args(["gen-data", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join("o")).env("PPGRAD_SEED", "40"));
    assert!(o.status.success());
    assert!(tmp.path().join("o/seed_40/data.csv").is_file());
    assert!(tmp.path().join("o/seed_41/data.csv").is_file());
    assert!(!tmp.path().join("o/seed_1").exists());
    let o = run(bin().args(["gen-data", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join("p")).env("PPGRAD_SEED", "x"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn only_labeled_matches_ppi_plus_plus_at_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::parse(SHORT).unwrap();
    let mut ol = base.clone();
    ol.experiment.method = ppssl_cli::config::MethodName::OnlyLabeled;
    let mut pz = base.clone();
    pz.experiment.method = ppssl_cli::config::MethodName::PpiPlusPlus;
    pz.experiment.lambda = Some(ppssl_cli::config::LambdaSpec::Value(0.0));
    cmd_train(&ol, &tmp.path().join("ol"), 1).unwrap();
    cmd_train(&pz, &tmp.path().join("pz"), 1).unwrap();
    for seed in [3, 4] {
        let a = std::fs::read_to_string(tmp.path().join(format!("ol/seed_{seed}/epochs.csv"))).unwrap();
        let b = std::fs::read_to_string(tmp.path().join(format!("pz/seed_{seed}/epochs.csv"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().next().unwrap(), EPOCH_HEADER);
    }
}

#[test]
fn aggregate_rederives_from_seed_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(SHORT).unwrap();
    let out = tmp.path().join("run");
    cmd_train(&cfg, &out, 2).unwrap();
    let records: Vec<RunRecord> = [3, 4]
        .iter()
        .map(|s| serde_json::from_str(&std::fs::read_to_string(out.join(format!("seed_{s}/record.json"))).unwrap()).unwrap())
        .collect();
    for r in &records {
        assert_eq!(r.per_epoch.len(), r.stop_epoch);
        assert_eq!(r.config_hash.as_deref(), Some(cfg.config_hash().as_str()));
    }
    let stored: Aggregate = serde_json::from_str(&std::fs::read_to_string(out.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(stored, aggregate(&cfg.config_hash(), &records));
    let mse: Vec<f64> = records.iter().map(|r| r.final_metrics.as_ref().unwrap().overall.mse.unwrap()).collect();
    let mean = (mse[0] + mse[1]) / 2.0;
    let std = ((mse[0] - mean).powi(2) + (mse[1] - mean).powi(2)).sqrt();
    let m = stored.metrics["test_mse"];
    assert!((m.mean - mean).abs() <= 1e-12 * mean.abs());
    assert!((m.std - std).abs() <= 1e-9 * std.max(1e-300));
    let csv = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("test_mse,")));
}

#[test]
fn csv_source_trains_with_a_pretrained_teacher() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = ExperimentConfig::parse("[data]\nkind = \"two_group\"\nmu = 2.0\n").unwrap();
    let files = cmd_gen_data(&gen, &tmp.path().join("gen")).unwrap();
    let text = format!(
        "[data]\nkind = \"csv\"\npath = \"{}\"\nfeatures = [{}]\ntarget = \"y\"\ngroup = \"group\"\nfractions = {{ labeled = 0.02, validation = 0.1, test = 0.3, pretrain = 0.05 }}\n[experiment]\nepochs = 40\nmethod = \"pp_ssl\"\n",
        files[0].display(),
        (0..11).map(|j| format!("\"x{j}\"")).collect::<Vec<_>>().join(", ")
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let recs = cmd_train(&cfg, &tmp.path().join("train"), 1).unwrap();
    let m = recs[0].final_metrics.as_ref().unwrap();
    assert!(m.per_group.contains_key(&0) && m.per_group.contains_key(&1));
    assert!(m.overall.mse.unwrap().is_finite());
}

#[test]
fn diagnose_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[data]\nkind = \"g1\"\nn = 20\nbig_n = 200\nb = 1.0\nsigma_zeta_sq = 1.5\n[experiment.diagnose]\nruns = 3\nsteps = 200\nladder_seeds = 2\nladder_steps = 300\ndraws = 10000\nconst_draws = 5000\npoints = 2\n",
    );
    for which in ["regret", "dynamics_s5", "variance"] {
        let o = run(bin().args(["diagnose", which, "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join("d")));
        assert!(o.status.success(), "{which}");
    }
    let dyn_csv = std::fs::read_to_string(tmp.path().join("d/dynamics_s5.csv")).unwrap();
    assert_eq!(dyn_csv.lines().next().unwrap(), "teacher_mse,b,sigma_zeta_sq,lambda_0,lambda_100,lambda_200,lambda_300");
    assert_eq!(dyn_csv.lines().count(), 4);
    let regret: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("d/regret.json")).unwrap()).unwrap();
    assert_eq!(regret.as_array().unwrap().len(), 3);
    assert!(tmp.path().join("d/variance.csv").is_file());
}

#[test]
fn accept_subset_writes_scoreboard() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(bin().args(["accept", "--only", "3,9", "--out"]).arg(tmp.path()));
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    let board: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("scoreboard.json")).unwrap()).unwrap();
    assert_eq!(board["passed"], 2);
    let o = run(bin().args(["accept", "--only", "13", "--out"]).arg(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap().validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
