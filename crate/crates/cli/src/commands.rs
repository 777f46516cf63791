use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dunet_core::data::{
    load_manifest_cases, phantom, read_volume, save_case, split_dataset, write_store, write_volume, PhantomParams,
    SliceStack, StackStore, Volume, VolumeCase,
};
use dunet_core::metrics::MetricsReport;
use dunet_core::train::{
    compare_losses, evaluate, load_model, load_state, predict_case, CheckpointPlan, CurveBundle, History, LossConfig,
    RunManifest, TrainState,
};
use dunet_core::{ArchSpec, Model, Preset};
use serde_json::json;

use crate::config::RunConfig;
use crate::plot;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn synth(out: &Path, cases: usize, depth: usize, seed: u64, ext: &str) -> Result<()> {
    if cases == 0 || depth == 0 {
        bail!("need at least one case and one slice");
    }
    let params = PhantomParams {
        dims: [PhantomParams::default().dims[0], PhantomParams::default().dims[1], depth],
        ..PhantomParams::default()
    };
    let mut ids = Vec::with_capacity(cases);
    for i in 0..cases {
        let id = format!("synth{i:03}");
        save_case(out, &phantom(&id, &params, seed.wrapping_add(i as u64))?, ext)?;
        ids.push(id);
    }
    write_text(&out.join("cases.txt"), &(ids.join("\n") + "\n"))?;
    println!("wrote {cases} cases to {}", out.display());
    Ok(())
}

pub fn prepare(cfg: &RunConfig, manifest: &Path, out: &Path, size: Option<usize>) -> Result<()> {
    let mut prep = cfg.data.preprocess;
    if let Some(s) = size {
        prep.size = s;
    }
    let cases = load_manifest_cases(manifest)?;
    if cases.is_empty() {
        bail!("manifest {} lists no cases", manifest.display());
    }
    let index = write_store(out, &cases, &prep)?;
    let stacks: usize = index.cases.iter().map(|c| c.stacks).sum();
    write_json(
        &out.join("prepare.json"),
        &json!({
            "command": "prepare",
            "version": env!("CARGO_PKG_VERSION"),
            "manifest": path_str(manifest),
            "preprocess": prep,
            "cases": index.cases.iter().map(|c| &c.case_id).collect::<Vec<_>>(),
        }),
    )?;
    println!("prepared {} cases, {stacks} stacks into {}", index.cases.len(), out.display());
    Ok(())
}

/// Store, its training and validation ids, and the spec at the store's
/// resolution.
struct Workspace {
    store: StackStore,
    train_ids: Vec<String>,
    val_ids: Vec<String>,
    spec: ArchSpec,
}

fn open_workspace(cfg: &RunConfig, store: Option<&Path>) -> Result<Workspace> {
    let dir = store.unwrap_or(&cfg.data.store);
    let store = StackStore::open(dir).with_context(|| format!("opening stack store {}", dir.display()))?;
    let (train_ids, val_ids) = split_dataset(&store.case_ids(), &cfg.data.split)?;
    let spec = cfg.arch.spec(store.index().preprocess.size)?;
    Ok(Workspace {
        store,
        train_ids,
        val_ids,
        spec,
    })
}

fn manifest_for(command: &str, cfg: &RunConfig, spec: &ArchSpec, loss: &LossConfig) -> Result<RunManifest> {
    let params = Model::build(spec)?.count_parameters();
    Ok(RunManifest::new(command, spec, params, &cfg.train, loss))
}

pub fn train(cfg: &RunConfig, out: &Path, store: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let ws = open_workspace(cfg, store)?;
    let stacks = ws.store.load_many(&ws.train_ids)?;
    let mut state = match resume {
        Some(p) => {
            let mut s = load_state(p).with_context(|| format!("resuming from {}", p.display()))?;
            if s.model.spec() != &ws.spec {
                bail!("checkpoint {} was trained with a different architecture", p.display());
            }
            s.config.epochs = cfg.train.epochs;
            s
        }
        None => TrainState::new(&ws.spec, &cfg.train, &cfg.loss)?,
    };
    let plan = CheckpointPlan {
        dir: out.join("checkpoints"),
    };
    let mut manifest = manifest_for("train", cfg, &ws.spec, &state.loss)?;
    manifest.train = {
        let mut t = state.config.clone();
        t.batch_size = Some(t.batch_size_for(&ws.spec));
        t
    };
    manifest.seed = state.config.seed;
    manifest.extra = json!({
        "config": cfg,
        "store": path_str(&cfg.data.store),
        "train_cases": ws.train_ids,
        "validation_cases": ws.val_ids,
        "resumed_from": resume.map(path_str),
        "outputs": ["model.ckpt", "history.tsv"],
    });
    write_text(&out.join("manifest.json"), &manifest.to_json())?;
    state.run(&stacks, Some(&plan))?;
    state.save(&out.join("model.ckpt"))?;
    write_text(&out.join("history.tsv"), &state.history.to_tsv())?;
    if let Some(last) = state.history.records.last() {
        println!(
            "trained {} epochs: loss {:.6}, training DSC {:.4}; checkpoint {}",
            last.epoch,
            last.loss,
            last.dsc,
            out.join("model.ckpt").display()
        );
    }
    Ok(())
}

fn load_eval_stacks(ws: &Workspace, all: bool) -> Result<(Vec<SliceStack>, BTreeMap<String, usize>)> {
    let ids = if all { ws.store.case_ids() } else { ws.val_ids.clone() };
    let depths = ids
        .iter()
        .map(|id| Ok((id.clone(), ws.store.entry(id)?.stacks)))
        .collect::<Result<_>>()?;
    Ok((ws.store.load_many(&ids)?, depths))
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, out: &Path, store: Option<&Path>, all: bool) -> Result<()> {
    let model = load_model(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let ws = open_workspace(cfg, store)?;
    let [h, ..] = model.spec().input_shape;
    if h != ws.store.index().preprocess.size {
        bail!(
            "checkpoint expects {h}x{h} inputs but the store holds {0}x{0} stacks",
            ws.store.index().preprocess.size
        );
    }
    let (stacks, depths) = load_eval_stacks(&ws, all)?;
    let report = evaluate(&model, &stacks, Some(&depths), cfg.eval.batch_size)?;
    let label = model.spec().label();
    let table = MetricsReport::table(&[(&label, &report, Some(model.count_parameters()))]);
    write_text(&out.join("report.tsv"), &table)?;
    write_json(&out.join("per_case.json"), &report)?;
    let mut manifest = manifest_for("eval", cfg, model.spec(), &cfg.loss)?;
    manifest.extra = json!({
        "config": cfg,
        "checkpoint": path_str(checkpoint),
        "cases": depths.keys().collect::<Vec<_>>(),
        "outputs": ["report.tsv", "per_case.json"],
    });
    write_text(&out.join("manifest.json"), &manifest.to_json())?;
    print!("{table}");
    Ok(())
}

/// `<dir>/<id>_t1.<ext>` → (`id`, `ext`); any other name keeps its stem.
fn case_name(image: &Path) -> (String, String) {
    if let Some((_, id, ext)) = dunet_core::data::io::parse_image_path(image) {
        return (id, ext);
    }
    let name = image.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    for ext in dunet_core::data::io::EXTENSIONS {
        if let Some(stem) = name.strip_suffix(&format!(".{ext}")) {
            return (stem.to_string(), ext.to_string());
        }
    }
    (name, "nii.gz".into())
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, image: &Path, out: &Path) -> Result<()> {
    let model = load_model(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (volume, spacing) = read_volume(image)?;
    let (id, ext) = case_name(image);
    let case = VolumeCase::new(id.clone(), volume.clone(), Volume::zeros(volume.dims()), spacing)?;
    let mut prep = cfg.data.preprocess;
    prep.size = model.spec().input_shape[0];
    let mask = predict_case(&model, &case, &prep, cfg.eval.batch_size)?;
    let path = out.join(format!("{id}_pred.{ext}"));
    write_volume(&path, &mask, spacing)?;
    write_json(
        &out.join(format!("{id}_pred.json")),
        &json!({
            "command": "predict",
            "version": env!("CARGO_PKG_VERSION"),
            "checkpoint": path_str(checkpoint),
            "image": path_str(image),
            "preprocess": prep,
            "spec_hash": model.spec().content_hash(),
            "foreground_voxels": mask.data().iter().filter(|v| **v > 0.0).count(),
        }),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn count_params(arch: Option<&str>, all: bool) -> Result<()> {
    let presets: Vec<Preset> = match (arch, all) {
        (_, true) => Preset::ALL.to_vec(),
        (Some(a), false) => vec![a.parse()?],
        (None, false) => bail!("pass --arch <name> or --all"),
    };
    println!("Method\tName\tTotal parameters\tTrainable");
    for p in presets {
        let c = Model::build(&p.spec())?.parameter_counts();
        println!(
            "{}\t{}\t{}\t{}",
            p.spec().label(),
            p.name(),
            group_thousands(c.total),
            group_thousands(c.trainable)
        );
    }
    Ok(())
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn compare(cfg: &RunConfig, out: &Path, store: Option<&Path>) -> Result<()> {
    let ws = open_workspace(cfg, store)?;
    let stacks = ws.store.load_many(&ws.train_ids)?;
    let losses: Vec<LossConfig> = dunet_core::losses::LossKind::ALL
        .into_iter()
        .map(|k| LossConfig { loss: k, ..cfg.loss })
        .collect();
    let bundle = compare_losses(&ws.spec, &stacks, &cfg.train, &losses)?;
    write_json(&out.join("curves.json"), &bundle)?;
    write_text(&out.join("curves.tsv"), &bundle.to_tsv())?;
    let mut manifest = manifest_for("compare-losses", cfg, &ws.spec, &cfg.loss)?;
    manifest.extra = json!({
        "config": cfg,
        "train_cases": ws.train_ids,
        "losses": losses,
        "outputs": ["curves.json", "curves.tsv"],
    });
    write_text(&out.join("manifest.json"), &manifest.to_json())?;
    for c in &bundle.curves {
        let reached = c.epochs_to_threshold.map_or("not reached".into(), |e| format!("epoch {e}"));
        println!("{}: DSC {} {reached}", c.loss.name(), bundle.threshold);
    }
    Ok(())
}

pub fn plot(histories: &[PathBuf], bundle: Option<&Path>, reports: &[PathBuf], out: &Path) -> Result<()> {
    if histories.is_empty() && bundle.is_none() && reports.is_empty() {
        bail!("nothing to plot: pass --history, --bundle or --report");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    for h in histories {
        let text = fs::read_to_string(h).with_context(|| format!("reading {}", h.display()))?;
        let label = h.file_stem().map_or("run".into(), |s| s.to_string_lossy().to_string());
        curves.push((label, History::from_tsv(&text)?.dsc()));
    }
    if let Some(b) = bundle {
        let text = fs::read_to_string(b).with_context(|| format!("reading {}", b.display()))?;
        let bundle: CurveBundle = serde_json::from_str(&text).with_context(|| format!("parsing {}", b.display()))?;
        for c in bundle.curves {
            curves.push((c.loss.name().to_uppercase(), c.history.dsc()));
        }
    }
    if !curves.is_empty() {
        let path = out.join("dsc_curves.svg");
        plot::curves(&path, &curves)?;
        println!("wrote {}", path.display());
    }
    if !reports.is_empty() {
        let mut boxes = Vec::new();
        for r in reports {
            let text = fs::read_to_string(r).with_context(|| format!("reading {}", r.display()))?;
            let report: MetricsReport =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", r.display()))?;
            let label = r
                .parent()
                .and_then(|p| p.file_name())
                .map_or("run".into(), |s| s.to_string_lossy().to_string());
            boxes.push((label, report.per_case.values().map(|m| m.dsc).collect::<Vec<_>>()));
        }
        let path = out.join("dsc_boxplot.svg");
        plot::boxplot(&path, &boxes)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
