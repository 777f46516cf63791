use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dunet_core::data::{phantom, read_volume, save_case, PhantomParams, Volume, VolumeCase};
use dunet_core::train::save_model;
use dunet_core::{Model, Preset};

fn dunet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dunet"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_cases(dir: &Path, cases: &[VolumeCase]) {
    for c in cases {
        save_case(dir, c, "nii.gz").unwrap();
    }
    let ids: Vec<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    fs::write(dir.join("cases.txt"), ids.join("\n") + "\n").unwrap();
}

fn phantoms(n: usize, depth: usize) -> Vec<VolumeCase> {
    let p = PhantomParams {
        dims: [197, 233, depth],
        ..PhantomParams::default()
    };
    (0..n).map(|i| phantom(&format!("c{i}"), &p, i as u64).unwrap()).collect()
}

const SMALL_RUN: &str = "[data]\nstore = \"store\"\n[arch]\nbase_filters = 16\n\
    [train]\noptimizer = \"adam\"\nlearning_rate = 1e-3\nepochs = 1\nbatch_size = 4\n";

#[test]
fn count_params_reports_published_totals() {
    let dir = tempfile::tempdir().unwrap();
    let o = dunet(dir.path(), &["count-params", "--arch", "se-add-23"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("SE-Add-23\tse-add-23\t8,640,163"), "{}", stdout(&o));
    let o = dunet(dir.path(), &["count-params", "--arch", "add-23"]);
    assert!(stdout(&o).contains("8,635,043"));
    let o = dunet(dir.path(), &["count-params", "--all"]);
    assert_eq!(stdout(&o).lines().count(), 11);
    let o = dunet(dir.path(), &["count-params", "--arch", "add-9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn prepare_counts_stacks_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    write_cases(dir.path(), &phantoms(1, 8));
    let o = dunet(dir.path(), &["--out", "store", "prepare", "--manifest", "cases.txt", "--size", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let index: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("store/index.json")).unwrap()).unwrap();
    assert_eq!(index["cases"][0]["stacks"], 8);
    let first = fs::read(dir.path().join("store/index.json")).unwrap();
    let o = dunet(dir.path(), &["--out", "store", "prepare", "--manifest", "cases.txt", "--size", "32"]);
    assert!(o.status.success());
    assert_eq!(fs::read(dir.path().join("store/index.json")).unwrap(), first);
}

#[test]
fn empty_manifest_creates_nothing() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cases.txt"), "# none\n").unwrap();
    let o = dunet(dir.path(), &["--out", "store", "prepare", "--manifest", "cases.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no cases"), "{}", stderr(&o));
    assert!(!dir.path().join("store").exists());
}

#[test]
fn train_writes_checkpoint_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_cases(dir.path(), &phantoms(2, 3));
    assert!(dunet(dir.path(), &["--out", "store", "prepare", "--manifest", "cases.txt", "--size", "32"])
        .status
        .success());
    fs::write(dir.path().join("run.toml"), SMALL_RUN).unwrap();
    let o = dunet(dir.path(), &["--config", "run.toml", "--seed", "5", "--out", "run", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("run/model.ckpt").exists());
    let history = fs::read_to_string(dir.path().join("run/history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["loss"]["loss"], "eml");
    assert_eq!(m["loss"]["alpha"], 1.1);
    assert_eq!(m["loss"]["gamma"], 0.48);
    assert_eq!(m["loss"]["delta"], 1.0);
    assert_eq!(m["seed"], 5);
    assert_eq!(m["train"]["batch_size"], 4);
    assert_eq!(m["extra"]["config"]["data"]["split"]["train_ratio"], 0.8);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[train]\nepochz = 3\n").unwrap();
    let o = dunet(dir.path(), &["--config", "run.toml", "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn eval_of_an_oracle_model_scores_one() {
    // every crop pixel is lesion, and the model saturates to foreground
    let dir = tempfile::tempdir().unwrap();
    let dims = [197, 233, 3];
    let cases: Vec<VolumeCase> = (0..2)
        .map(|i| {
            let img = Volume::new(dims, (0..dims.iter().product()).map(|v| (v % 7) as f32).collect()).unwrap();
            let lbl = Volume::new(dims, vec![1.0; dims.iter().product()]).unwrap();
            VolumeCase::new(format!("o{i}"), img, lbl, [1.0; 3]).unwrap()
        })
        .collect();
    write_cases(dir.path(), &cases);
    assert!(dunet(dir.path(), &["--out", "store", "prepare", "--manifest", "cases.txt", "--size", "32"])
        .status
        .success());
    let mut model = Model::build(&Preset::SeAdd23.spec().with_resolution(32).with_base_filters(16)).unwrap();
    let store = model.params_mut();
    let k = store.find("head.kernel").unwrap();
    store.get_mut(k).data.iter_mut().for_each(|w| *w = 0.0);
    let b = store.find("head.bias").unwrap();
    store.get_mut(b).data[0] = 20.0;
    save_model(&dir.path().join("oracle.ckpt"), &model).unwrap();

    fs::write(dir.path().join("run.toml"), SMALL_RUN).unwrap();
    let o = dunet(
        dir.path(),
        &["--config", "run.toml", "--out", "ev", "eval", "--checkpoint", "oracle.ckpt", "--all"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("ev/report.tsv")).unwrap();
    let row = table.lines().nth(1).unwrap();
    assert!(row.starts_with("SE-Add-23\t1.0000 ± 0.0000\t1.0000"), "{row}");
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("ev/per_case.json")).unwrap()).unwrap();
    assert_eq!(report["per_case"].as_object().unwrap().len(), 2);
}

#[test]
fn predict_matches_the_input_grid() {
    let dir = tempfile::tempdir().unwrap();
    let case = &phantoms(1, 3)[0];
    write_cases(dir.path(), std::slice::from_ref(case));
    let model = Model::build(&Preset::Add23.spec().with_resolution(32).with_base_filters(16)).unwrap();
    save_model(&dir.path().join("m.ckpt"), &model).unwrap();
    let o = dunet(
        dir.path(),
        &["--out", "pred", "predict", "--checkpoint", "m.ckpt", "--image", "c0_t1.nii.gz"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (mask, _) = read_volume(&dir.path().join("pred/c0_pred.nii.gz")).unwrap();
    assert_eq!(mask.dims(), case.dims());
    assert!(mask.data().iter().all(|v| *v == 0.0 || *v == 1.0));
}

#[test]
fn plot_renders_three_labelled_curves() {
    let dir = tempfile::tempdir().unwrap();
    let history = |dsc: [f64; 3]| {
        let mut s = String::from("epoch\tloss\tdsc\tseconds\n");
        for (i, d) in dsc.iter().enumerate() {
            s += &format!("{}\t1\t{d}\t1\n", i + 1);
        }
        s
    };
    let curve = |loss: &str, dsc: [f64; 3]| {
        serde_json::json!({
            "loss": loss,
            "epochs_to_threshold": null,
            "history": dunet_core::History::from_tsv(&history(dsc)).unwrap(),
        })
    };
    let bundle = serde_json::json!({
        "spec_hash": "x",
        "seed": 0,
        "threshold": 0.8,
        "curves": [curve("fl", [0.1, 0.2, 0.3]), curve("dl", [0.2, 0.5, 0.7]), curve("eml", [0.3, 0.6, 0.9])],
    });
    fs::write(dir.path().join("curves.json"), bundle.to_string()).unwrap();
    let o = dunet(dir.path(), &["--out", "plots", "plot", "--bundle", "curves.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("plots/dsc_curves.svg")).unwrap();
    let texts: Vec<&str> = svg.lines().map(str::trim).collect();
    for label in ["FL", "DL", "EML"] {
        assert!(texts.contains(&label), "missing {label}");
    }
    let o = dunet(dir.path(), &["plot"]);
    assert_eq!(o.status.code(), Some(1));
}
