use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use deform_gnn_cli::commands::{TrainSummary, SUMMARY_FILE};
use deform_gnn_cli::config::SEED_ENV;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deform-gnn"));
    c.env_remove(SEED_ENV).env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: [&str; 6] = ["--synthetic", "n=60,c=3,h=0.3,d=6,degree=3", "--epochs", "5", "--hidden-dim", "8"];

fn summary(dir: &Path) -> TrainSummary {
    serde_json::from_slice(&fs::read(dir.join(SUMMARY_FILE)).unwrap()).unwrap()
}

#[test]
fn summaries_are_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(bin().arg("train").args(TINY).args(["--seeds", "2", "--knn", "3"]).arg("--out").arg(out));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(a.join(SUMMARY_FILE)).unwrap(), fs::read(b.join(SUMMARY_FILE)).unwrap());
    let s = summary(&a);
    assert_eq!(s.grid[0].runs.len(), 2);
    assert_eq!(s.grid[0].test.runs, 2);
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "model = mlp\nseed = 5\n").unwrap();
    let seed_of = |env: Option<&str>, flag: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let mut c = bin();
        c.arg("train").args(TINY).arg("--config").arg(&cfg).arg("--out").arg(&out);
        if let Some(e) = env {
            c.env(SEED_ENV, e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let o = run(&mut c);
        assert!(o.status.success(), "{}", stderr(&o));
        let s = summary(&out);
        assert_eq!(s.grid[0].config.model.kind.as_str(), "mlp");
        s.grid[0].config.seed
    };
    assert_eq!(seed_of(None, None, "file"), 5);
    assert_eq!(seed_of(Some("7"), None, "env"), 7);
    assert_eq!(seed_of(Some("7"), Some("9"), "flag"), 9);
}

#[test]
fn grid_selects_by_mean_validation_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let o = run(bin()
        .arg("train")
        .args(["--synthetic", TINY[1], "--hidden-dim", "8"])
        .args(["--model", "mlp", "--lr", "0,0.05", "--epochs", "30"])
        .arg("--out")
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s.grid.len(), 2);
    let best = s.grid.iter().map(|g| g.val.mean).fold(f64::MIN, f64::max);
    assert_eq!(s.best().val.mean, best);
    for g in 0..2 {
        let run_dir = out.join(format!("grid_{g}/split_0_seed_0"));
        for f in ["config.txt", "metrics.jsonl", "model.json"] {
            assert!(run_dir.join(f).is_file(), "{f}");
        }
        let lines = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 30);
    }
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("lr = 0,0.05") && echo.contains("weight_decay = 0.0005"));
}

#[test]
fn missing_edge_file_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(bin().args(["synth", "--spec", "n=30,c=3,d=4", "--splits", "1", "--out"]).arg(&data));
    assert!(o.status.success(), "{}", stderr(&o));
    fs::remove_file(data.join("edges.tsv")).unwrap();
    let o = run(bin().arg("train").arg("--dataset").arg(&data).arg("--out").arg(dir.path().join("r")));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("edges.tsv"), "{}", stderr(&o));
}

#[test]
fn both_or_neither_dataset_source_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["train", "--epochs", "1", "--out"]).arg(dir.path()));
    assert!(!o.status.success());
    let o = run(bin().args(["train", "--dataset", "x", "--synthetic", "n=30", "--out"]).arg(dir.path()));
    assert!(!o.status.success());
}

#[test]
fn gradcheck_exit_codes() {
    let o = run(bin().arg("gradcheck"));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    for group in ["encoder", "positional", "kernel_vectors", "transforms", "deformation", "fusion", "classifier"] {
        assert!(text.contains(group));
    }
    assert_eq!(run(bin().args(["gradcheck", "--inject-fault", "edge-scores"])).status.code(), Some(1));
    let o = run(bin().args(["gradcheck", "--dropout", "0.3"]));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("dropout"));
}

fn train_deformable(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("run");
    let o = run(bin()
        .arg("train")
        .args(TINY)
        .args(["--num-kernels", "2", "--knn", "3", "--pos-dim", "4", "--out"])
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("grid_0/split_0_seed_0/model.json")
}

#[test]
fn analyze_restricts_receptive_fields_to_targets() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_deformable(dir.path());
    let tables = dir.path().join("tables");
    let o = run(bin()
        .arg("analyze")
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--synthetic", TINY[1], "--target-nodes", "3,7", "--out"])
        .arg(&tables));
    assert!(o.status.success(), "{}", stderr(&o));
    let report = deform_gnn_core::analysis::AnalysisReport::import(&tables).unwrap();
    assert!(report.receptive.iter().all(|r| r.target == 3 || r.target == 7));
    let total: f64 = report.attention.iter().map(|r| r.avg_score).sum();
    assert!((total - 1.0).abs() < 1e-9);
    for t in [3, 7] {
        let mass: f64 = report.receptive.iter().filter(|r| r.target == t).map(|r| r.intensity).sum();
        assert!((mass - 2.0).abs() < 1e-8);
    }
}

#[test]
fn eval_and_analyze_reject_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_deformable(dir.path());
    let o = run(bin().arg("eval").arg("--checkpoint").arg(&ckpt).args(["--synthetic", "n=60,c=3,d=7"]));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("encoder.weight"), "{}", stderr(&o));
    let o = run(bin().arg("eval").arg("--checkpoint").arg(&ckpt).args(["--synthetic", "n=60,c=4,d=6"]));
    assert!(stderr(&o).contains("classifier.weight"), "{}", stderr(&o));
    let o = run(bin().arg("eval").arg("--checkpoint").arg(&ckpt).args(["--synthetic", TINY[1]]));
    assert!(o.status.success(), "{}", stderr(&o));
}

fn npy_bool(mask: &[bool]) -> Vec<u8> {
    let header = format!("{{'descr': '|b1', 'fortran_order': False, 'shape': ({},), }}\n", mask.len());
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend((header.len() as u16).to_le_bytes());
    out.extend(header.as_bytes());
    out.extend(mask.iter().map(|&m| m as u8));
    out
}

fn write_raw(dir: &Path, with_splits: bool) {
    let mut nodes = String::from("node_id\tfeature\tlabel\n");
    for v in [2usize, 0, 1, 3, 5, 4, 6, 7] {
        nodes.push_str(&format!("{v}\t{},{},0\t{}\n", v, v % 2, v % 2));
    }
    fs::write(dir.join("out1_node_feature_label.txt"), nodes).unwrap();
    fs::write(dir.join("out1_graph_edges.txt"), "node_id\tnode_id\n0\t1\n1\t2\n2\t3\n3\t0\n4\t5\n6\t7\n").unwrap();
    if with_splits {
        let file = fs::File::create(dir.join("toy_split_0.6_0.2_0.npz")).unwrap();
        let mut zip = zip::ZipWriter::new(file);
        let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
        let train = [true, true, true, true, false, false, false, false];
        let val = [false, false, false, false, true, true, false, false];
        let test = [false, false, false, false, false, false, true, true];
        for (name, m) in [("train_mask", train), ("val_mask", val), ("test_mask", test)] {
            zip.start_file(format!("{name}.npy"), opts).unwrap();
            zip.write_all(&npy_bool(&m)).unwrap();
        }
        zip.finish().unwrap();
    }
}

#[test]
fn import_converts_raw_files_and_keeps_stored_splits() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    write_raw(&raw, true);
    let out = dir.path().join("toy");
    let o = run(bin().arg("import").arg("--raw").arg(&raw).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = deform_gnn_core::graph::load_dataset_dir(&out).unwrap();
    assert_eq!((ds.num_nodes(), ds.num_features(), ds.num_classes()), (8, 3, 2));
    assert_eq!(ds.features().row(5), &[5.0, 1.0, 0.0]);
    assert_eq!(ds.labels()[5], 1);
    assert_eq!(ds.edges().len(), 6);
    assert_eq!(ds.splits().len(), 1);
    use deform_gnn_core::graph::SplitPart;
    assert_eq!(ds.splits()[0].indices(SplitPart::Val), vec![4, 5]);
    assert_eq!(ds.splits()[0].indices(SplitPart::Test), vec![6, 7]);
}

#[test]
fn import_without_split_files_draws_splits() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    write_raw(&raw, false);
    let out = dir.path().join("toy");
    let o = run(bin().arg("import").arg("--raw").arg(&raw).args(["--splits", "3", "--out"]).arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(deform_gnn_core::graph::load_dataset_dir(&out).unwrap().splits().len(), 3);
    fs::remove_file(raw.join("out1_graph_edges.txt")).unwrap();
    let o = run(bin().arg("import").arg("--raw").arg(&raw).arg("--out").arg(&out));
    assert!(stderr(&o).contains("out1_graph_edges.txt"));
}
