use std::path::Path;
use std::process::Command;

use uvcloth_core::dataset::{ActionSpec, Dataset, DatasetConfig, Split};
use uvcloth_core::obj::{load_mesh, save_mesh};
use uvcloth_core::uvbake::{Semantic, UVMap};
use uvcloth_eval::cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use uvcloth_eval::report::EvalRow;
use uvcloth_net::train::TrainConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uvcloth"))
}

#[test]
fn exit_codes_follow_the_contract() {
    let unknown = bin().arg("frobnicate").output().unwrap();
    assert_eq!(unknown.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(bin().output().unwrap().status.code(), Some(EXIT_USAGE));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(EXIT_OK));
    assert_eq!(bin().args(["train"]).output().unwrap().status.code(), Some(EXIT_USAGE));
    let missing = bin().args(["eval", "--checkpoint", "/nonexistent/c.pxn", "--data", "/nonexistent"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_RUNTIME));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

fn tiny_config() -> DatasetConfig {
    let action = |name: &str, kind: &str| ActionSpec {
        name: name.into(),
        kind: kind.into(),
        intensity: 1.0,
        frames: 8,
    };
    DatasetConfig {
        resolution: 16,
        train_fraction: 0.5,
        actions: vec![action("swing", "swing_arms"), action("still", "rest")],
        ..DatasetConfig::desk(0)
    }
}

fn call(args: &[&str]) -> i32 {
    run(std::iter::once("uvcloth").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_subcommand_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("data.toml");
    std::fs::write(&config, tiny_config().to_toml()).unwrap();
    let train_cfg = root.join("train.toml");
    std::fs::write(&train_cfg, "base_width = 4\nbatch_size = 4\n").unwrap();
    let data = root.join("data");

    assert_eq!(call(&["bake", "--config", s(&config), "--out", s(&root.join("bake"))]), EXIT_OK);
    let rest = UVMap::load(root.join("bake/offset_tops.uvm")).unwrap();
    assert_eq!((rest.size(), rest.semantic()), (16, Semantic::Offset));

    assert_eq!(call(&["simulate", "--config", s(&config), "--action", "swing", "--out", s(&root.join("sim"))]), EXIT_OK);
    assert!(root.join("sim/cloth_dress.csq").exists());
    assert_eq!(call(&["simulate", "--config", s(&config), "--action", "nope"]), EXIT_RUNTIME);

    assert_eq!(call(&["make-dataset", "--config", s(&config), "--out", s(&data)]), EXIT_OK);
    assert!(data.join("manifest.json").exists());

    let run_dir = root.join("run");
    assert_eq!(call(&["train", "--config", s(&train_cfg), "--data", s(&data), "--epochs", "2", "--out", s(&run_dir)]), EXIT_OK);
    let log = std::fs::read_to_string(run_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let checkpoint = run_dir.join("model.pxn");
    assert_eq!(call(&["train", "--data", s(&data), "--resolution", "32", "--out", s(&run_dir)]), EXIT_RUNTIME);

    let ds = Dataset::open(&data).unwrap();
    let test_action = ds.manifest.actions_in(Split::Test).next().unwrap().name.clone();
    let test_action = test_action.as_str();
    let offsets = root.join("offsets");
    assert_eq!(
        call(&["infer", "--checkpoint", s(&checkpoint), "--data", s(&data), "--action", test_action, "--frame", "5", "--out", s(&offsets)]),
        EXIT_OK
    );
    assert_eq!(UVMap::load(offsets.join("offset_dress.uvm")).unwrap().semantic(), Semantic::Offset);
    assert_eq!(call(&["infer", "--checkpoint", s(&checkpoint), "--data", s(&data), "--action", test_action, "--frame", "2"]), EXIT_RUNTIME);

    let garment = root.join("garment.obj");
    assert_eq!(
        call(&[
            "reconstruct", "--data", s(&data), "--offsets", s(&offsets), "--action", test_action, "--frame", "5", "--template", "tops", "--out", s(&garment),
        ]),
        EXIT_OK
    );
    let rebuilt = load_mesh(&garment).unwrap();
    let source = load_mesh(root.join("bake/garment_tops.obj")).unwrap();
    assert_eq!(rebuilt.vertex_count(), source.vertex_count());
    // An explicit garment file takes the same path.
    let copy = root.join("copy.obj");
    save_mesh(&source, &copy).unwrap();
    assert_eq!(
        call(&[
            "reconstruct", "--data", s(&data), "--offsets", s(&offsets), "--action", test_action, "--frame", "5", "--template", "tops", "--garment", s(&copy),
            "--out", s(&root.join("copy_out.obj")),
        ]),
        EXIT_OK
    );

    let report = root.join("report.csv");
    assert_eq!(call(&["eval", "--checkpoint", s(&checkpoint), "--data", s(&data), "--split", "test", "--out", s(&report)]), EXIT_OK);
    let rows: Vec<EvalRow> = csv::Reader::from_path(&report).unwrap().deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3 * 3);
    assert!(rows.iter().all(|r| r.frames == 4 && r.mse_vert_mm2.is_finite()));
    assert!(root.join("report_hem.csv").exists());

    let summary = root.join("summary.txt");
    assert_eq!(call(&["report", "--input", s(&report), "--out", s(&summary)]), EXIT_OK);
    assert!(std::fs::read_to_string(&summary).unwrap().contains("ground_truth"));
    assert_eq!(call(&["report", "--input", s(&root.join("missing.csv"))]), EXIT_RUNTIME);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let quick = DatasetConfig::load(dir.join("quick.toml")).unwrap();
    assert_eq!(quick.actions.len(), 4);
    let train = TrainConfig::from_toml(&std::fs::read_to_string(dir.join("train.toml")).unwrap()).unwrap();
    assert_eq!(train, TrainConfig::default());
    let small = TrainConfig::from_toml(&std::fs::read_to_string(dir.join("train_small.toml")).unwrap()).unwrap();
    assert_eq!((small.base_width, small.epochs), (8, 20));
}
