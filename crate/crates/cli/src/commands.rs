use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use mvrec::dataset::{build_manifest, synthetic_manifest, Connectivity, DatasetLayout, DatasetManifest};
use mvrec::embedding::{export_features_csv, load_embeddings, synthetic_store, EmbeddingStore};
use mvrec::eval::{ablation_suite, emit_report, run_experiment, ResultTable};
use mvrec::geometry::{generate_views, group_views, read_views_file, write_views_file, AugmentCombo, ViewSpec};
use serde_json::json;

use crate::args::{
    AugmentArgs, Backend, DatasetBuildArgs, EmbedValidateArgs, EvalArgs, ExportArgs, InputArgs, Layout, SyntheticArgs,
    ViewsArgs,
};
use crate::config::CliConfig;
use crate::error::{CliError, CliResult};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::user("IoError", format!("{}: {e}", path.display()))
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::user("InvalidArgument", format!("--{name} is required (or paths.{name} in the config)")))
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn apply_augment(cfg: &mut CliConfig, a: &AugmentArgs) {
    let g = &mut cfg.experiment.augment;
    if let Some(v) = a.num_scale {
        g.num_scale = v;
    }
    if let Some(v) = a.num_offset {
        g.num_offset = v;
    }
    if let Some(v) = a.rotation {
        g.enable_rotation = v;
    }
    if let Some(v) = a.flip {
        g.enable_flip = v;
    }
    if let Some(v) = a.mask_mode {
        g.mask_mode = v.into();
    }
}

fn apply_input(cfg: &mut CliConfig, a: &InputArgs) {
    if let Some(v) = a.normalize_before_average {
        cfg.experiment.load.normalize_before_average = v;
    }
}

fn apply_synthetic(cfg: &mut CliConfig, a: &SyntheticArgs) {
    let s = &mut cfg.experiment.synthetic;
    if let Some(v) = a.channels {
        s.channels = v;
    }
    if let Some(v) = a.sigma_inst {
        s.sigma_inst = v;
    }
    if let Some(v) = a.sigma_view {
        s.sigma_view = v;
    }
    if let Some(v) = a.synthetic_seed {
        s.seed = v;
    }
    let d = &mut cfg.synthetic_dataset;
    if let Some(v) = a.synthetic_classes {
        d.num_classes = v;
    }
    if let Some(v) = a.synthetic_instances {
        d.instances_per_class = v;
    }
}

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

pub fn dataset_build(mut cfg: CliConfig, a: DatasetBuildArgs) -> CliResult<()> {
    let o = &mut cfg.dataset;
    if let Some(v) = a.name {
        o.dataset_name = v;
    }
    if let Some(v) = a.seed {
        o.seed = v;
    }
    if let Some(n) = a.connectivity {
        o.connectivity = Connectivity::from_number(n)
            .ok_or_else(|| CliError::user("InvalidArgument", format!("connectivity must be 4 or 8, got {n}")))?;
    }
    if let Some(v) = a.min_area {
        o.min_area = v;
    }
    if let Some(v) = a.min_train_per_class {
        o.min_train_per_class = v;
    }
    if a.keep_single_class_categories {
        o.drop_single_class_categories = false;
    }
    if let Some(v) = a.categories {
        o.categories = v;
    }
    if let Some(v) = a.exclude_types {
        o.exclude_types = v;
    }
    let layout = match a.layout {
        Layout::Mvtec => DatasetLayout::MvtecAd {
            root: a.root.ok_or_else(|| CliError::user("InvalidArgument", "--root is required for the mvtec layout"))?,
        },
        Layout::Bbox => match (a.images_root, a.annotations) {
            (Some(images_root), Some(annotations)) => DatasetLayout::BboxCsv {
                images_root,
                annotations,
            },
            _ => {
                return Err(CliError::user(
                    "InvalidArgument",
                    "--images-root and --annotations are required for the bbox layout",
                ))
            }
        },
    };
    let m = build_manifest(&layout, &cfg.dataset)?;
    m.write(&a.out)?;
    print_json(json!({
        "manifest": a.out.display().to_string(),
        "instances": m.instances.len(),
        "classes": m.classes.len(),
        "categories": m.categories().len(),
    }));
    Ok(())
}

fn manifest_views(m: &DatasetManifest, cfg: &CliConfig) -> CliResult<Vec<ViewSpec>> {
    let mut views = Vec::new();
    for inst in &m.instances {
        views.extend(generate_views(inst, &cfg.experiment.augment)?);
    }
    Ok(views)
}

pub fn views(mut cfg: CliConfig, a: ViewsArgs) -> CliResult<()> {
    apply_augment(&mut cfg, &a.augment);
    cfg.experiment.augment.validate()?;
    let path = required(a.manifest, &cfg.experiment.paths.manifest, "manifest")?;
    let m = DatasetManifest::read(&path)?;
    let views = manifest_views(&m, &cfg)?;
    write_views_file(&a.out, &views)?;
    print_json(json!({
        "views_file": a.out.display().to_string(),
        "instances": m.instances.len(),
        "views_per_instance": cfg.experiment.augment.view_count(),
        "records": views.len(),
    }));
    Ok(())
}

/// Manifest, views and the store built from the embedding file; coverage must be complete.
fn load_inputs(cfg: &CliConfig, a: &InputArgs) -> CliResult<(DatasetManifest, Vec<ViewSpec>, EmbeddingStore)> {
    let paths = &cfg.experiment.paths;
    let manifest = required(a.manifest.clone(), &paths.manifest, "manifest")?;
    let views_path = required(a.views.clone(), &paths.views, "views")?;
    let embeddings = required(a.embeddings.clone(), &paths.embeddings, "embeddings")?;
    let m = DatasetManifest::read(&manifest)?;
    let views = read_views_file(&views_path)?;
    let grouped = group_views(&views);
    if let Some(stray) = grouped.keys().find(|id| m.instance(id).is_none()) {
        return Err(CliError::user(
            "UnexpectedKey",
            format!("views file names instance {stray} which is not in the manifest"),
        ));
    }
    if let Some(inst) = m.instances.iter().find(|i| !grouped.contains_key(&i.instance_id)) {
        return Err(CliError::user(
            "MissingViews",
            format!("manifest instance {} has no views in {}", inst.instance_id, views_path.display()),
        ));
    }
    let (store, report) = load_embeddings(&embeddings, &views, cfg.experiment.load)?;
    report.require_complete()?;
    Ok((m, views, store))
}

pub fn embed_validate(mut cfg: CliConfig, a: EmbedValidateArgs) -> CliResult<()> {
    apply_input(&mut cfg, &a.input);
    let (m, views, store) = load_inputs(&cfg, &a.input)?;
    let counts: BTreeSet<usize> = store.iter().map(|e| e.num_views()).collect();
    print_json(json!({
        "instances": m.instances.len(),
        "records": views.len(),
        "channels": store.channels(),
        "backbone_tag": store.backbone_tag(),
        "views_per_instance": counts.into_iter().collect::<Vec<_>>(),
        "missing": 0,
    }));
    Ok(())
}

fn synthetic_inputs(cfg: &CliConfig, manifest: Option<PathBuf>) -> CliResult<(DatasetManifest, EmbeddingStore)> {
    let m = match manifest.or_else(|| cfg.experiment.paths.manifest.clone()) {
        Some(p) => DatasetManifest::read(&p)?,
        None => synthetic_manifest(&cfg.synthetic_dataset)?,
    };
    let (store, _) = synthetic_store(&m, &cfg.experiment.synthetic, &cfg.experiment.augment, cfg.experiment.load)?;
    Ok((m, store))
}

fn apply_eval(cfg: &mut CliConfig, a: &EvalArgs) {
    apply_augment(cfg, &a.augment);
    apply_input(cfg, &a.input);
    apply_synthetic(cfg, &a.synthetic);
    let e = &mut cfg.experiment;
    if let Some(v) = &a.classifiers {
        e.classifiers = v.clone();
    }
    if let Some(v) = &a.shots {
        e.shots = v.clone();
    }
    if let Some(v) = &a.seeds {
        e.seeds = v.clone();
    }
    if let Some(v) = &a.categories {
        e.categories = v.clone();
    }
    let t = &mut e.classifier.train;
    if let Some(v) = a.iterations {
        t.iterations = v;
    }
    if let Some(v) = a.beta {
        t.beta = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.lambda {
        t.lambda = v;
    }
    if let Some(v) = a.lr {
        t.adamw.lr = v;
    }
    if let Some(v) = a.train_seed {
        t.seed = v;
    }
    if let Some(v) = a.zip_beta {
        e.classifier.zip_beta = v;
    }
}

fn emit_all(table: &ResultTable, stem: &str, a: &EvalArgs, out_dir: &Path) -> CliResult<()> {
    for &f in &a.format {
        emit_report(table, f, &out_dir.join(format!("{stem}.{}", f.extension())))?;
    }
    Ok(())
}

pub fn eval(mut cfg: CliConfig, a: EvalArgs) -> CliResult<()> {
    apply_eval(&mut cfg, &a);
    cfg.experiment.validate()?;
    let synthetic = a.backend == Backend::Synthetic;
    if synthetic && !a.augment_embeddings.is_empty() {
        return Err(CliError::user(
            "InvalidArgument",
            "--augment-embeddings needs the embeddings backend; the synthetic backend generates its own",
        ));
    }
    let (m, store) = if synthetic {
        synthetic_inputs(&cfg, a.input.manifest.clone())?
    } else {
        let (m, _, store) = load_inputs(&cfg, &a.input)?;
        (m, store)
    };
    let out_dir = a
        .out_dir
        .clone()
        .or_else(|| cfg.experiment.paths.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    let table = run_experiment(&m, &store, &cfg.experiment)?;
    emit_all(&table, "results", &a, &out_dir)?;
    let mut written = vec!["results".to_string()];

    if a.ablation {
        let region: Vec<(String, EmbeddingStore)> = a
            .variants
            .iter()
            .map(|(name, path)| -> CliResult<_> {
                let views = read_views_file(&required(a.input.views.clone(), &cfg.experiment.paths.views, "views")?)?;
                let (s, report) = load_embeddings(path, &views, cfg.experiment.load)?;
                report.require_complete()?;
                Ok((name.clone(), s))
            })
            .collect::<CliResult<_>>()?;
        let base = &cfg.experiment.augment;
        let augment: Vec<(AugmentCombo, EmbeddingStore)> = if synthetic {
            AugmentCombo::ALL
                .iter()
                .map(|&c| -> CliResult<_> {
                    let (s, _) = synthetic_store(&m, &cfg.experiment.synthetic, &c.config(base), cfg.experiment.load)?;
                    Ok((c, s))
                })
                .collect::<CliResult<_>>()?
        } else {
            a.augment_embeddings
                .iter()
                .map(|(c, path)| -> CliResult<_> {
                    let mut combo_cfg = cfg.clone();
                    combo_cfg.experiment.augment = c.config(base);
                    let views = manifest_views(&m, &combo_cfg)?;
                    let (s, report) = load_embeddings(path, &views, cfg.experiment.load)?;
                    report.require_complete()?;
                    Ok((*c, s))
                })
                .collect::<CliResult<_>>()?
        };
        let region_refs: Vec<(String, &EmbeddingStore)> = region.iter().map(|(n, s)| (n.clone(), s)).collect();
        let augment_refs: Vec<(AugmentCombo, &EmbeddingStore)> = augment.iter().map(|(c, s)| (*c, s)).collect();
        let report = ablation_suite(&m, &store, &region_refs, &augment_refs, &cfg.experiment)?;
        for (name, t) in report.tables() {
            let stem = format!("ablation_{name}");
            emit_all(t, &stem, &a, &out_dir)?;
            written.push(stem);
        }
    }

    let echo = out_dir.join("config.toml");
    write_file(&echo, &cfg.echo(false, synthetic && a.input.manifest.is_none()))?;
    print!("{}", table.to_text());
    eprintln!("wrote {} to {}", written.join(", "), out_dir.display());
    Ok(())
}

pub fn export_features(mut cfg: CliConfig, a: ExportArgs) -> CliResult<()> {
    apply_augment(&mut cfg, &a.augment);
    apply_input(&mut cfg, &a.input);
    apply_synthetic(&mut cfg, &a.synthetic);
    cfg.experiment.augment.validate()?;
    let (m, store) = match a.backend {
        Backend::Synthetic => synthetic_inputs(&cfg, a.input.manifest.clone())?,
        Backend::Embeddings => {
            let (m, _, store) = load_inputs(&cfg, &a.input)?;
            (m, store)
        }
    };
    let rows = export_features_csv(&store, &m, &a.out)?;
    print_json(json!({
        "features": a.out.display().to_string(),
        "rows": rows,
        "channels": store.channels(),
    }));
    Ok(())
}
