//! End-to-end exercises of the command-line binary: the prepare,
//! build-graphs, train, evaluate, export, and diagnose chain on a written
//! fixture, plus the sweep verbs and the error paths users hit first.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egorec::synth;

fn egorec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_egorec"))
}

fn run_ok(cmd: &mut Command) -> String {
    let Output { status, stdout, stderr } = cmd.output().expect("spawn egorec");
    assert!(
        status.success(),
        "command failed ({status}):\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&stdout),
        String::from_utf8_lossy(&stderr)
    );
    String::from_utf8(stdout).expect("utf8 stdout")
}

fn run_err(cmd: &mut Command) -> String {
    let Output { status, stdout, stderr } = cmd.output().expect("spawn egorec");
    assert!(
        !status.success(),
        "command unexpectedly succeeded:\nstdout: {}",
        String::from_utf8_lossy(&stdout)
    );
    String::from_utf8(stderr).expect("utf8 stderr")
}

fn json_file(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Write raw fixture inputs and run `prepare` over them.
fn prepared_world(root: &Path, seed: u64) -> PathBuf {
    let inputs = root.join("inputs");
    synth::write_fixture_inputs(&inputs, seed).expect("write fixture");
    let prepared = root.join("prepared");
    run_ok(
        egorec()
            .arg("prepare")
            .args(["--interactions".as_ref(), inputs.join("interactions.tsv").as_os_str()])
            .arg("--features")
            .arg(format!("visual={}", inputs.join("visual.mmft").display()))
            .arg("--features")
            .arg(format!("textual={}", inputs.join("textual.mmft").display()))
            .args(["--out".as_ref(), prepared.as_os_str()]),
    );
    prepared
}

#[test]
fn pipeline_prepare_train_evaluate_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let inputs = root.join("inputs");
    synth::write_fixture_inputs(&inputs, 11).expect("write fixture");

    let prepared = root.join("prepared");
    let out = run_ok(
        egorec()
            .arg("prepare")
            .args(["--interactions".as_ref(), inputs.join("interactions.tsv").as_os_str()])
            .arg("--features")
            .arg(format!("visual={}", inputs.join("visual.mmft").display()))
            .arg("--features")
            .arg(format!("textual={}", inputs.join("textual.mmft").display()))
            .args(["--out".as_ref(), prepared.as_os_str()]),
    );
    assert!(out.contains("prepared 60 users x 90 items"), "{out}");
    let manifest = json_file(&prepared.join("prepare_manifest.json"));
    assert_eq!(manifest["num_users"], 60);
    assert_eq!(manifest["num_items"], 90);
    assert_eq!(manifest["features"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["interactions_sha256"].as_str().unwrap().len(), 64);

    let graphs_dir = root.join("graphs");
    let out = run_ok(
        egorec()
            .arg("build-graphs")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(["--k", "5"])
            .arg("--dump-tsv")
            .args(["--out".as_ref(), graphs_dir.as_os_str()]),
    );
    assert!(out.contains("frozen check: ok"), "{out}");
    let gm = json_file(&graphs_dir.join("graphs_manifest.json"));
    assert_eq!(gm["k"], 5);
    for tag in ["visual", "textual"] {
        assert!(graphs_dir.join(format!("item_graph_{tag}.csrg")).exists());
        assert!(graphs_dir.join(format!("item_graph_{tag}.tsv")).exists());
    }
    for g in gm["graphs"].as_array().unwrap() {
        assert_eq!(g["content_hash"].as_str().unwrap().len(), 64);
        assert!(g["nnz"].as_u64().unwrap() > 0);
    }

    let run_dir = root.join("run");
    let out = run_ok(
        egorec()
            .arg("train")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(["--set", "embed_dim=8"])
            .args(["--set", "num_layers=2"])
            .args(["--set", "num_neighbors=5"])
            .args(["--set", "learning_rate=0.005"])
            .args(["--set", "max_epochs=4"])
            .args(["--set", "patience=4"])
            .args(["--out".as_ref(), run_dir.as_os_str()]),
    );
    assert!(out.contains("best epoch"), "{out}");
    let tm = json_file(&run_dir.join("manifest.json"));
    let epochs_run = tm["epochs_run"].as_u64().unwrap();
    assert!((1..=4).contains(&epochs_run));
    let best_recall = tm["best_val_recall"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&best_recall));
    assert_eq!(tm["config"]["embed_dim"], 8);
    assert_eq!(tm["graph_hashes"].as_array().unwrap().len(), 2);
    let history = std::fs::read_to_string(run_dir.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count() as u64, epochs_run);
    for dir in ["checkpoint_best", "checkpoint_final"] {
        assert!(run_dir.join(dir).join("checkpoint.json").exists());
    }

    // the held-out score in the manifest must be reproducible from disk
    let eval_dir = root.join("eval_val");
    run_ok(
        egorec()
            .arg("evaluate")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(["--checkpoint".as_ref(), run_dir.join("checkpoint_best").as_os_str()])
            .args(["--split", "val"])
            .args(["--k", "20"])
            .arg("--per-user")
            .args(["--out".as_ref(), eval_dir.as_os_str()]),
    );
    let metrics = json_file(&eval_dir.join("metrics.json"));
    let recall = metrics["recall"][0].as_f64().unwrap();
    assert_eq!(
        recall.to_bits(),
        best_recall.to_bits(),
        "evaluate gave {recall}, train manifest says {best_recall}"
    );
    let evaluated = metrics["users_evaluated"].as_u64().unwrap();
    let csv = std::fs::read_to_string(eval_dir.join("per_user.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, evaluated + 1, "header plus one row per user");
    assert!(csv.starts_with("user,relevant,recall@20,ndcg@20"), "{}", &csv[..60.min(csv.len())]);

    let out = run_ok(
        egorec()
            .arg("evaluate")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(["--checkpoint".as_ref(), run_dir.join("checkpoint_best").as_os_str()])
            .args(["--split", "test"])
            .args(["--k", "10,20"]),
    );
    assert!(out.contains("test@K"), "{out}");
    assert!(out.contains("K=10") && out.contains("K=20"), "{out}");

    let embed_dir = root.join("embeds");
    run_ok(
        egorec()
            .arg("export")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(["--checkpoint".as_ref(), run_dir.join("checkpoint_best").as_os_str()])
            .args(["--kind", "fused"])
            .args(["--out".as_ref(), embed_dir.as_os_str()]),
    );
    assert!(embed_dir.join("fused.mmft").exists());
    run_ok(
        egorec()
            .arg("export")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(["--checkpoint".as_ref(), run_dir.join("checkpoint_best").as_os_str()])
            .args(["--kind", "ego"])
            .args(["--out".as_ref(), embed_dir.as_os_str()]),
    );
    assert!(embed_dir.join("ego_visual.mmft").exists());
    assert!(embed_dir.join("ego_textual.mmft").exists());

    let out = run_ok(
        egorec()
            .arg("diagnose")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(["--checkpoint".as_ref(), run_dir.join("checkpoint_best").as_os_str()]),
    );
    assert!(out.contains("mean pairwise distance"), "{out}");
    let out = run_ok(
        egorec()
            .arg("diagnose")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(["--checkpoint".as_ref(), run_dir.join("checkpoint_best").as_os_str()])
            .args(["--baseline".as_ref(), run_dir.join("checkpoint_final").as_os_str()]),
    );
    assert!(out.contains("distance ratio checkpoint/baseline"), "{out}");
}

#[test]
fn train_rejects_unknown_config_key() {
    // config merging happens before any data is touched
    let err = run_err(
        egorec()
            .arg("train")
            .args(["--prepared", "/nonexistent"])
            .args(["--out", "/nonexistent-out"])
            .args(["--set", "warmup=1"]),
    );
    assert!(err.contains("unknown key 'warmup'"), "{err}");
}

#[test]
fn prepare_rejects_bad_ratio_lists() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = tmp.path().join("inputs");
    synth::write_fixture_inputs(&inputs, 5).expect("write fixture");

    let err = run_err(
        egorec()
            .arg("prepare")
            .args(["--interactions".as_ref(), inputs.join("interactions.tsv").as_os_str()])
            .args(["--out".as_ref(), tmp.path().join("p1").as_os_str()])
            .args(["--ratios", "0.5,0.5"]),
    );
    assert!(err.contains("exactly three shares"), "{err}");

    let err = run_err(
        egorec()
            .arg("prepare")
            .args(["--interactions".as_ref(), inputs.join("interactions.tsv").as_os_str()])
            .args(["--out".as_ref(), tmp.path().join("p2").as_os_str()])
            .args(["--ratios", "0.5,0.4,0.2"]),
    );
    assert!(err.contains("sum to 1"), "{err}");
}

#[test]
fn grad_check_verb_reports_success() {
    let out = run_ok(
        egorec()
            .arg("grad-check")
            .args(["--embed-dim", "3"])
            .args(["--num-layers", "2"])
            .args(["--batch", "4"]),
    );
    assert!(out.contains("gradient check passed"), "{out}");
}

#[test]
fn sweep_verbs_emit_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let prepared = prepared_world(tmp.path(), 7);
    let fast = [
        "--set", "embed_dim=8",
        "--set", "num_neighbors=3",
        "--set", "max_epochs=2",
        "--set", "patience=2",
    ];

    let grid_dir = tmp.path().join("grid");
    let out = run_ok(
        egorec()
            .arg("grid-search")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(fast)
            .args(["--lambda", "0.0001"])
            .args(["--lambda-cl", "0.01,0.0"])
            .args(["--out".as_ref(), grid_dir.as_os_str()]),
    );
    assert!(out.contains("rank") && out.contains("lambda_cl"), "{out}");
    let grid = json_file(&grid_dir.join("grid.json"));
    let rows = grid["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2, "one lambda x two alignment strengths");
    let recalls: Vec<f64> = rows.iter().map(|r| r["val_recall"].as_f64().unwrap()).collect();
    assert!(recalls[0] >= recalls[1], "rows must be sorted best-first: {recalls:?}");

    let abl_dir = tmp.path().join("ablation");
    let out = run_ok(
        egorec()
            .arg("ablate")
            .args(["--prepared".as_ref(), prepared.as_os_str()])
            .args(fast)
            .args(["--layers", "1,2"])
            .args(["--out".as_ref(), abl_dir.as_os_str()]),
    );
    assert!(out.contains("layers"), "{out}");
    let rows = json_file(&abl_dir.join("ablation.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["num_layers"], 1);
    assert_eq!(rows[1]["num_layers"], 2);
    for r in rows {
        assert!(r["test_recall"].as_f64().unwrap().is_finite());
        assert_eq!(r["diverged"], false);
    }
}
