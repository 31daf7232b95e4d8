use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ae_noma(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ae-noma"))
        .args(args)
        .current_dir(dir)
        .env_remove("AE_NOMA_OUT")
        .output()
        .expect("spawn ae-noma")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn data_lines(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

/// Trains a short model once per test that needs one.
fn short_model(dir: &Path, iterations: &str, seed: &str) -> String {
    let out = dir.join("run");
    ok(&ae_noma(
        &["train", "--preset", "case1", "--iterations", iterations, "--seed", seed, "--out", out.to_str().unwrap()],
        dir,
    ));
    out.join("model.json").to_str().unwrap().to_owned()
}

#[test]
fn train_writes_model_and_history_deterministically() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        ok(&ae_noma(
            &["train", "--preset", "case1", "--iterations", "1000", "--seed", "7", "--out", d.to_str().unwrap()],
            tmp.path(),
        ));
    }
    let history = std::fs::read_to_string(a.join("history.csv")).unwrap();
    let rows = data_lines(&history);
    assert_eq!(rows[0], "iteration,loss1,loss2,w1,w2,total");
    assert_eq!(rows.len(), 1 + 1000);
    assert!(history.starts_with("# config: {"));
    let ma = std::fs::read(a.join("model.json")).unwrap();
    let mb = std::fs::read(b.join("model.json")).unwrap();
    assert_eq!(ma, mb);
    let model: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(model["schema_version"], 1);
    assert_eq!(model["final_iteration"], 1000);
    assert_eq!(model["seed"], 7);
    assert_eq!(model["config"]["training"]["seed"], 7);
}

#[test]
fn case3_preset_expands_in_echoed_config() {
    let tmp = TempDir::new().unwrap();
    ok(&ae_noma(&["train", "--preset", "case3", "--iterations", "2", "--out", "c3"], tmp.path()));
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("c3/config.json")).unwrap()).unwrap();
    let t = &cfg["training"];
    assert_eq!(t["loss_weight"], 15.0);
    assert_eq!(t["channel"]["kind"], "uniform");
    assert_eq!(t["channel"]["h_min"], 8.0);
    assert_eq!(t["channel"]["h_max"], 12.0);
    assert_eq!(t["batch_size"], 1024);
    assert_eq!(t["snr1_train_db"], 10.0);
    assert_eq!(cfg["eval"]["h2_test"], 10.0);
    assert!(cfg.get("preset").is_none());
}

#[test]
fn output_dir_defaults_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ae-noma"))
        .args(["train", "--preset", "case2", "--iterations", "1"])
        .current_dir(tmp.path())
        .env("AE_NOMA_OUT", "from-env")
        .output()
        .unwrap();
    ok(&out);
    assert!(tmp.path().join("from-env/model.json").exists());
}

#[test]
fn eval_grid_columns_and_reproducibility() {
    let tmp = TempDir::new().unwrap();
    let model = short_model(tmp.path(), "300", "2");
    let args = ["eval", "--model", &model, "--grid", "0:20:1", "--seed", "4", "--max-symbols", "20000"];
    let mut a = args.to_vec();
    a.extend(["--out", "e1"]);
    let mut b = args.to_vec();
    b.extend(["--out", "e2"]);
    ok(&ae_noma(&a, tmp.path()));
    ok(&ae_noma(&b, tmp.path()));
    let csv1 = std::fs::read_to_string(tmp.path().join("e1/ber.csv")).unwrap();
    let csv2 = std::fs::read_to_string(tmp.path().join("e2/ber.csv")).unwrap();
    assert_eq!(csv1, csv2);
    let rows = data_lines(&csv1);
    assert_eq!(rows[0], "snr1_db,ber1,stderr1,ber2,stderr2,n_bits");
    assert_eq!(rows.len(), 22);
    assert!(csv1.contains("eval_seed: 4"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("e1/ber.json")).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 21);
    assert_eq!(report["config"]["eval"]["seed"], 4);

    let ml = ae_noma(&["eval", "--model", &model, "--grid", "10", "--detector", "ml", "--max-symbols", "20000", "--out", "e3"], tmp.path());
    ok(&ml);
}

#[test]
fn baseline_subcommands() {
    let tmp = TempDir::new().unwrap();
    let csv = ok(&ae_noma(&["baseline", "qpsk-noma", "--alpha", "0.7", "--h1", "1", "--h2", "2"], tmp.path()));
    let rows = data_lines(&csv);
    assert_eq!(rows[0], "snr1_db,ber1,ber2");
    assert_eq!(rows.len(), 22);
    assert_eq!(rows[1].split(',').count(), 3);

    let out = ae_noma(&["baseline", "qpsk-noma", "--alpha", "0.4"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.5"));
    ok(&ae_noma(&["baseline", "qpsk-noma", "--alpha", "0.4", "--allow-overlap", "--grid", "5"], tmp.path()));

    let mc = ok(&ae_noma(
        &["baseline", "qpsk-noma", "--grid", "6", "--mc-symbols", "100000", "--out", "q.csv"],
        tmp.path(),
    ));
    assert_eq!(data_lines(&mc)[0], "snr1_db,ber1,ber2,mc_ber1,mc_stderr1,mc_ber2,mc_stderr2");
    assert_eq!(std::fs::read_to_string(tmp.path().join("q.csv")).unwrap(), mc);

    let qam = ok(&ae_noma(&["baseline", "16qam", "--snr1", "10", "--h-ratio", "2"], tmp.path()));
    let row: Vec<f64> = data_lines(&qam)[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[1] - 16.0206).abs() < 1e-4);
    assert_eq!(row[2], ae_noma::baselines::ber_16qam(row[1]));
}

#[test]
fn constellation_exports() {
    let tmp = TempDir::new().unwrap();
    let model = short_model(tmp.path(), "200", "3");
    ok(&ae_noma(&["constellation", "--model", &model, "--out", "k"], tmp.path()));
    let csv = std::fs::read_to_string(tmp.path().join("k/constellation.csv")).unwrap();
    let rows = data_lines(&csv);
    assert_eq!(rows[0], "bits1,bits2,i,q");
    assert_eq!(rows.len(), 17);
    let footer = csv.lines().last().unwrap();
    let p: f64 = footer.strip_prefix("# mean_power,").unwrap().parse().unwrap();
    assert!((p - 1.0).abs() < 1e-9);
    let svg = std::fs::read_to_string(tmp.path().join("k/constellation.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("path")).count(), 16);

    for d in ["n1", "n2"] {
        ok(&ae_noma(
            &["constellation", "--model", &model, "--noisy", "500", "--snr", "8", "--user", "2", "--seed", "9", "--out", d],
            tmp.path(),
        ));
    }
    let a = std::fs::read(tmp.path().join("n1/constellation.svg")).unwrap();
    let b = std::fs::read(tmp.path().join("n2/constellation.svg")).unwrap();
    assert_eq!(a, b);
    let doc = roxmltree::Document::parse(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 500);
}

#[test]
fn compare_table_rows_are_tagged() {
    let tmp = TempDir::new().unwrap();
    let model = short_model(tmp.path(), "200", "4");
    let csv = ok(&ae_noma(&["compare", "--model", &model, "--max-symbols", "20000", "--out", "c"], tmp.path()));
    let rows = data_lines(&csv);
    assert_eq!(rows[0], "method,snr1_db,worse_ber,source");
    for snr in ["14", "16", "18"] {
        assert!(rows.iter().any(|r| r.contains(&format!(",{snr},")) && r.ends_with("literature-constant")));
    }
    assert!(rows.iter().any(|r| r.starts_with("QPSK-NOMA alpha=0.7") && r.ends_with("closed-form")));
    assert!(rows[1..].iter().all(|r| r.ends_with("measured") || r.ends_with("closed-form") || r.ends_with("literature-constant")));
    assert!(tmp.path().join("c/comparison.json").exists());
}

#[test]
fn gradcheck_passes_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = ok(&ae_noma(&["gradcheck", "--seed", "2"], tmp.path()));
    let b = ok(&ae_noma(&["gradcheck", "--seed", "2"], tmp.path()));
    assert_eq!(a, b);
    assert!(a.trim_end().ends_with("PASS"), "{a}");
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("bad.json"), r#"{"preset":"case1","surprise":true}"#).unwrap();
    let out = ae_noma(&["train", "--config", "bad.json", "--iterations", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("surprise"));

    assert_eq!(ae_noma(&["train", "--preset", "case9"], tmp.path()).status.code(), Some(2));
    assert_eq!(ae_noma(&["eval", "--model", "missing.json"], tmp.path()).status.code(), Some(2));

    let model = short_model(tmp.path(), "1", "0");
    let text = std::fs::read_to_string(&model).unwrap();
    std::fs::write(tmp.path().join("v2.json"), text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1)).unwrap();
    let out = ae_noma(&["eval", "--model", "v2.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema version"));
}

#[test]
fn numeric_failure_exits_with_3_and_names_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let mut run = ae_noma::cli::RunConfig::from_preset(ae_noma::training::Preset::Case1)
        .expand()
        .unwrap();
    let t = run.training.as_mut().unwrap();
    t.adam.lr = 1e300;
    t.batch_size = 32;
    t.iterations = 50;
    std::fs::write(tmp.path().join("blowup.json"), serde_json::to_string(&run).unwrap()).unwrap();
    let out = ae_noma(&["train", "--config", "blowup.json", "--checkpoint-every", "1", "--out", "b"], tmp.path());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(3), "{stderr}");
    assert!(stderr.contains("last checkpoint:"), "{stderr}");
    assert!(tmp.path().join("b/checkpoint.json").exists());
    assert!(!tmp.path().join("b/model.json").exists());
}
