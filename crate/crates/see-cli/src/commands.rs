//! Command implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use see_core::dataset::{
    generate_synthetic, load_csv, save_csv, split, Dataset, Normalizer, SyntheticSpec,
};
use see_core::dse::{
    run_forest_sweep, run_sweep, select_deployment, ForestSweepOptions, Selection, SweepGrid,
    SweepOptions, SweepRecord,
};
use see_core::energy::{build_report, render_report, Artifact, MemoryFigures, SensorPowerModel};
use see_core::forest::{
    build_cascade, featurize_prefix, load_cascade, predict_proba, save_cascade, save_forest,
    train_forest, FeatureMode, FeatureSchema, ForestConfig,
};
use see_core::inference::{infer_dataset, read_trace_log, write_trace_log, ThresholdVector};
use see_core::model::{load_model, save_model, ArchitectureSpec, SeeCnnModel};
use see_core::trainer::{train, TrainConfig};

use crate::config::Config;

pub fn out_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = cfg.get_path("out")?;
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn feature_mode(cfg: &Config) -> Result<FeatureMode> {
    match cfg.require("feature_mode")? {
        "summary" => Ok(FeatureMode::SummaryStats),
        "raw" => Ok(FeatureMode::RawPrefix),
        other => bail!("feature_mode must be `summary` or `raw`, got `{other}`"),
    }
}

/// Load, split, and (optionally) z-score the dataset with train-split
/// statistics.
fn prepare_split(cfg: &Config) -> Result<(Dataset, Dataset, Option<Normalizer>)> {
    let path = cfg.get_path("dataset")?;
    let dataset = load_csv(&path)?;
    let outcome = split(&dataset, cfg.get_f64("train_fraction")?, cfg.get_u64("seed")?)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if cfg.get_bool("normalize")? {
        let norm = Normalizer::fit(&outcome.train)?;
        let train = norm.apply(&outcome.train);
        let test = norm.apply(&outcome.test);
        Ok((train, test, Some(norm)))
    } else {
        Ok((outcome.train, outcome.test, None))
    }
}

fn cnn_spec_from_config(cfg: &Config, data: &Dataset) -> Result<ArchitectureSpec> {
    let placements = cfg.get_list_usize("exits.placements")?;
    let fractions = cfg.get_list_f64("exits.fractions")?;
    if placements.len() != fractions.len() {
        bail!(
            "{} exit placements but {} fractions",
            placements.len(),
            fractions.len()
        );
    }
    let pairs: Vec<(usize, f64)> = placements.into_iter().zip(fractions).collect();
    let mut spec = ArchitectureSpec::default_for(data.channels(), data.segment_length(), data.num_classes())
        .with_early_exits(&pairs);
    if let Some(raw) = cfg.get("exits.thresholds") {
        if !raw.trim().is_empty() {
            let thresholds = cfg.get_list_f64("exits.thresholds")?;
            if thresholds.len() != spec.num_early_exits() {
                bail!(
                    "{} thresholds for {} early exits",
                    thresholds.len(),
                    spec.num_early_exits()
                );
            }
            for (exit, t) in spec.exits.iter_mut().zip(thresholds) {
                exit.entropy_threshold = Some(t);
            }
        }
    }
    if let Some(raw) = cfg.get("loss_weights") {
        if !raw.trim().is_empty() {
            let weights = cfg.get_list_f64("loss_weights")?;
            if weights.len() != spec.num_exits() {
                bail!("{} loss weights for {} exits", weights.len(), spec.num_exits());
            }
            for (exit, w) in spec.exits.iter_mut().zip(weights) {
                exit.loss_weight = w;
            }
        }
    }
    spec.validate().map_err(|e| anyhow!(e))?;
    Ok(spec)
}

fn train_config(cfg: &Config) -> Result<TrainConfig> {
    Ok(TrainConfig {
        epochs: cfg.get_usize("epochs")?,
        batch_size: cfg.get_usize("batch_size")?,
        learning_rate: cfg.get_f64("learning_rate")?,
        loss_weights: None, // spec-level weights apply
        seed: cfg.get_u64("seed")?,
        patience: cfg.get_usize("patience")?,
    })
}

// ── gen-data ────────────────────────────────────────────────────────

pub fn gen_data_defaults() -> Vec<(&'static str, &'static str)> {
    vec![
        ("command", "gen-data"),
        ("classes", "6"),
        ("easy_classes", "3"),
        ("channels", "4"),
        ("segment_length", "128"),
        ("per_class", "300"),
        ("noise_sigma", "0.3"),
        ("seed", "0"),
        ("out", "see-out"),
    ]
}

pub fn cmd_gen_data(cfg: &Config) -> Result<()> {
    let dir = out_dir(cfg)?;
    let spec = SyntheticSpec {
        num_classes: cfg.get_usize("classes")?,
        easy_class_count: cfg.get_usize("easy_classes")?,
        channels: cfg.get_usize("channels")?,
        segment_length: cfg.get_usize("segment_length")?,
        n_per_class: cfg.get_usize("per_class")?,
        noise_sigma: cfg.get_f64("noise_sigma")?,
        seed: cfg.get_u64("seed")?,
    };
    let dataset = generate_synthetic(&spec)?;
    let path = dir.join("dataset.csv");
    save_csv(&path, &dataset)?;
    cfg.write_manifest(&dir)?;
    println!(
        "wrote {} ({} segments, {} channels x {} samples, {} classes)",
        path.display(),
        dataset.segments.len(),
        dataset.channels(),
        dataset.segment_length(),
        dataset.num_classes()
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────

pub fn train_defaults() -> Vec<(&'static str, &'static str)> {
    vec![
        ("command", "train"),
        ("classifier", "cnn"),
        ("train_fraction", "0.6"),
        ("normalize", "true"),
        ("epochs", "15"),
        ("batch_size", "32"),
        ("learning_rate", "0.001"),
        ("patience", "0"),
        ("exits.placements", "1,2"),
        ("exits.fractions", "0.4,0.7"),
        ("exits.thresholds", "0.5,0.5"),
        ("forest.trees", "30"),
        ("forest.max_depth", "5"),
        ("forest.size_scale", "0.3"),
        ("cascade.fractions", "0.3,0.7"),
        ("cascade.threshold", "0.5"),
        ("feature_mode", "summary"),
        ("seed", "0"),
        ("out", "see-out"),
    ]
}

pub fn cmd_train(cfg: &Config) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (train_data, test_data, normalizer) = prepare_split(cfg)?;
    match cfg.require("classifier")? {
        "cnn" => train_cnn(cfg, &dir, &train_data, &test_data, normalizer.as_ref()),
        "forest" => train_cascade(cfg, &dir, &train_data, &test_data, normalizer.as_ref()),
        other => bail!("classifier must be `cnn` or `forest`, got `{other}`"),
    }?;
    if let Some(norm) = &normalizer {
        write_normalizer(&dir.join("normalizer.json"), norm)?;
    }
    cfg.write_manifest(&dir)?;
    Ok(())
}

fn train_cnn(
    cfg: &Config,
    dir: &Path,
    train_data: &Dataset,
    test_data: &Dataset,
    _normalizer: Option<&Normalizer>,
) -> Result<()> {
    let spec = cnn_spec_from_config(cfg, train_data)?;
    let model = SeeCnnModel::assemble(spec, cfg.get_u64("seed")?)?;
    let tc = train_config(cfg)?;
    let heldout = (tc.patience > 0).then_some(test_data);
    let (model, report) = train(model, train_data, heldout, &tc)?;

    let model_path = dir.join("model.json");
    save_model(&model_path, &model)?;
    fs::write(dir.join("train-report.jsonl"), report.to_jsonl()?)?;
    println!("wrote {}", model_path.display());
    println!(
        "parameters {} ({:.3} KB, baseline trunk {:.3} KB)",
        model.parameter_count(),
        model.memory_kb(),
        model.baseline_memory_kb()
    );
    for (i, acc) in report.final_per_exit_train_accuracy.iter().enumerate() {
        println!("exit {} train accuracy {:.4}", i + 1, acc);
    }
    Ok(())
}

fn train_cascade(
    cfg: &Config,
    dir: &Path,
    train_data: &Dataset,
    test_data: &Dataset,
    _normalizer: Option<&Normalizer>,
) -> Result<()> {
    let mode = feature_mode(cfg)?;
    let seed = cfg.get_u64("seed")?;
    let trees = cfg.get_usize("forest.trees")?;
    let max_depth = cfg.get_usize("forest.max_depth")?;

    // Baseline forest on full windows.
    let schema =
        FeatureSchema::for_segment(train_data.channels(), train_data.segment_length(), 1.0, mode)?;
    let features: Vec<Vec<f64>> = train_data
        .segments
        .iter()
        .map(|s| featurize_prefix(&s.data, 1.0, mode))
        .collect::<see_core::Result<_>>()?;
    let labels: Vec<usize> = train_data.segments.iter().map(|s| s.label).collect();
    let baseline = train_forest(
        &features,
        &labels,
        train_data.num_classes(),
        schema,
        &ForestConfig {
            num_trees: trees,
            max_depth,
            seed,
            ..ForestConfig::default()
        },
    )?;

    let mut fractions = cfg.get_list_f64("cascade.fractions")?;
    fractions.push(1.0);
    let stage_trees = match cfg.get("cascade.trees") {
        Some(raw) if !raw.trim().is_empty() => cfg.get_list_usize("cascade.trees")?,
        _ => {
            let scale = cfg.get_f64("forest.size_scale")?;
            fractions
                .iter()
                .map(|&c| ((trees as f64 * c * scale).round() as usize).max(1))
                .collect()
        }
    };
    let mut cascade = build_cascade(train_data, &fractions, &stage_trees, max_depth, mode, &baseline, seed)?;
    let shared = cfg.get_f64("cascade.threshold")?;
    let stage_count = cascade.stages.len();
    for (i, stage) in cascade.stages.iter_mut().enumerate() {
        stage.threshold = (i < stage_count - 1).then_some(shared);
    }

    let baseline_path = dir.join("forest-baseline.json");
    save_forest(&baseline_path, &baseline)?;
    let cascade_path = dir.join("cascade.json");
    save_cascade(&cascade_path, &cascade)?;

    let mut correct = 0usize;
    for seg in &test_data.segments {
        let f = featurize_prefix(&seg.data, 1.0, mode)?;
        let p = predict_proba(&baseline, &f)?;
        let pred = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if pred == seg.label {
            correct += 1;
        }
    }
    println!("wrote {} and {}", baseline_path.display(), cascade_path.display());
    println!(
        "baseline forest: {} nodes ({:.3} KB), test accuracy {:.4}",
        baseline.node_count(),
        baseline.memory_kb(),
        correct as f64 / test_data.segments.len().max(1) as f64
    );
    println!(
        "cascade: stages {:?} nodes {:?} total {} ({:.3} KB)",
        fractions,
        cascade.stage_node_counts,
        cascade.node_count(),
        cascade.memory_kb()
    );
    Ok(())
}

fn write_normalizer(path: &Path, norm: &Normalizer) -> Result<()> {
    let file = serde_json::json!({
        "format": "see-normalizer",
        "version": 1,
        "normalizer": norm,
    });
    fs::write(path, serde_json::to_string(&file)? + "\n")?;
    Ok(())
}

fn read_normalizer(path: &Path) -> Result<Normalizer> {
    let value: serde_json::Value = serde_json::from_str(fs::read_to_string(path)?.trim_end())?;
    if value.get("format").and_then(|v| v.as_str()) != Some("see-normalizer") {
        bail!("{} is not a normalizer file", path.display());
    }
    Ok(serde_json::from_value(value["normalizer"].clone())?)
}

// ── eval ────────────────────────────────────────────────────────────

pub fn eval_defaults() -> Vec<(&'static str, &'static str)> {
    vec![
        ("command", "eval"),
        ("train_fraction", "0.6"),
        ("split", "test"),
        ("seed", "0"),
        ("out", "see-out"),
    ]
}

enum LoadedArtifact {
    Cnn(SeeCnnModel),
    Cascade(see_core::forest::ForestCascade),
}

fn load_artifact(path: &Path) -> Result<LoadedArtifact> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read model file {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(text.trim_end())?;
    match value.get("format").and_then(|v| v.as_str()) {
        Some("see-cnn-model") => Ok(LoadedArtifact::Cnn(load_model(path)?)),
        Some("see-forest-cascade") => Ok(LoadedArtifact::Cascade(load_cascade(path)?)),
        other => bail!("unsupported model format {other:?} in {}", path.display()),
    }
}

pub fn cmd_eval(cfg: &Config) -> Result<()> {
    let dir = out_dir(cfg)?;
    let model_path = cfg.get_path("model")?;
    let artifact = load_artifact(&model_path)?;

    let dataset = load_csv(&cfg.get_path("dataset")?)?;
    let outcome = split(&dataset, cfg.get_f64("train_fraction")?, cfg.get_u64("seed")?)?;
    let mut eval_data = match cfg.require("split")? {
        "test" => outcome.test,
        "train" => outcome.train,
        "all" => dataset.clone(),
        other => bail!("split must be test/train/all, got `{other}`"),
    };

    // Apply the training normalizer when present (sibling file or key).
    let norm_path = match cfg.get("normalizer") {
        Some(p) if !p.is_empty() => Some(PathBuf::from(p)),
        _ => {
            let sibling = model_path.parent().unwrap_or(Path::new(".")).join("normalizer.json");
            sibling.exists().then_some(sibling)
        }
    };
    if let Some(p) = &norm_path {
        eval_data = read_normalizer(p)?.apply(&eval_data);
    }

    let (traces, num_exits, memory, ops) = match &artifact {
        LoadedArtifact::Cnn(model) => {
            let thresholds = match cfg.get("thresholds") {
                Some(raw) if !raw.trim().is_empty() => ThresholdVector::new(cfg.get_list_f64("thresholds")?)?,
                _ => ThresholdVector::new(
                    model
                        .spec()
                        .exits
                        .iter()
                        .filter_map(|e| e.entropy_threshold)
                        .collect(),
                )?,
            };
            let traces = infer_dataset(model, &eval_data, &thresholds)?;
            let memory = MemoryFigures {
                baseline_kb: model.baseline_memory_kb(),
                see_kb: model.memory_kb(),
            };
            let ops = model.ops_per_exit().to_vec();
            (traces, model.spec().num_exits(), memory, ops)
        }
        LoadedArtifact::Cascade(cascade) => {
            let thresholds = match cfg.get("thresholds") {
                Some(raw) if !raw.trim().is_empty() => ThresholdVector::new(cfg.get_list_f64("thresholds")?)?,
                _ => ThresholdVector::new(
                    cascade
                        .stages
                        .iter()
                        .take(cascade.stages.len() - 1)
                        .map(|s| s.threshold.unwrap_or(0.5))
                        .collect(),
                )?,
            };
            let traces = infer_dataset(cascade, &eval_data, &thresholds)?;
            let memory = MemoryFigures {
                baseline_kb: see_core::energy::kb_from_nodes(cascade.baseline_node_count),
                see_kb: Artifact::Cascade(cascade).memory_kb(),
            };
            // Cumulative tree nodes as the cascade's compute proxy.
            let mut ops = Vec::with_capacity(cascade.stage_node_counts.len());
            let mut total = 0u64;
            for &n in &cascade.stage_node_counts {
                total += n as u64;
                ops.push(total);
            }
            (traces, cascade.stages.len(), memory, ops)
        }
    };

    let report = build_report(
        &traces,
        num_exits,
        eval_data.num_classes(),
        &SensorPowerModel::uniform(eval_data.channels()),
        memory,
        Some(ops),
    )?;

    write_trace_log(&dir.join("traces.jsonl"), &traces)?;
    fs::write(
        dir.join("energy-report.json"),
        serde_json::to_string(&report)? + "\n",
    )?;
    let rendered = render_report(&report, &eval_data.class_names);
    fs::write(dir.join("report.txt"), &rendered)?;
    cfg.write_manifest(&dir)?;
    print!("{rendered}");
    Ok(())
}

// ── sweep ───────────────────────────────────────────────────────────

pub fn sweep_defaults() -> Vec<(&'static str, &'static str)> {
    vec![
        ("command", "sweep"),
        ("classifier", "cnn"),
        ("train_fraction", "0.6"),
        ("normalize", "true"),
        ("epochs", "15"),
        ("batch_size", "32"),
        ("learning_rate", "0.001"),
        ("patience", "0"),
        ("grid.fractions", "10,20,30,40,50"),
        ("grid.exits", "1,2"),
        ("grid.thresholds", "0.1,0.3,0.5,0.8,1.0,1.5"),
        ("grid.weights", "1,2,3,4"),
        ("grid.placements", "1,2"),
        ("grid.allow_out_of_range", "false"),
        ("resume", "true"),
        ("forest.trees", "30"),
        ("forest.max_depth", "5"),
        ("forest.size_scale", "0.3"),
        ("feature_mode", "summary"),
        ("seed", "0"),
        ("out", "see-out"),
    ]
}

fn grid_from_config(cfg: &Config) -> Result<SweepGrid> {
    Ok(SweepGrid {
        data_fraction_percents: cfg.get_list_u32("grid.fractions")?,
        num_early_exits: cfg.get_list_usize("grid.exits")?,
        thresholds: cfg.get_list_f64("grid.thresholds")?,
        loss_weights: cfg.get_list_f64("grid.weights")?,
        exit_placements: cfg.get_list_usize("grid.placements")?,
        allow_out_of_range: cfg.get_bool("grid.allow_out_of_range")?,
    })
}

fn render_pareto(records: &[SweepRecord]) -> String {
    let mut front: Vec<&SweepRecord> = records.iter().filter(|r| r.pareto).collect();
    front.sort_by(|a, b| a.energy_ratio.partial_cmp(&b.energy_ratio).unwrap());
    let mut out = String::from("pareto front (energy ascending)\n");
    let _ = writeln!(
        out,
        "{:<28} {:>9} {:>10} {:>10}",
        "config", "accuracy", "energy", "memory_kb"
    );
    for r in front {
        let _ = writeln!(
            out,
            "{:<28} {:>9.4} {:>10.4} {:>10.3}",
            r.config_id,
            r.accuracy.unwrap_or(f64::NAN),
            r.energy_ratio.unwrap_or(f64::NAN),
            r.memory_kb.unwrap_or(f64::NAN)
        );
    }
    out
}

pub fn cmd_sweep(cfg: &Config) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (train_data, test_data, _norm) = prepare_split(cfg)?;
    let grid = grid_from_config(cfg)?;
    let budget = match cfg.get("budget") {
        Some(raw) if !raw.trim().is_empty() => Some(raw.parse::<usize>().context("bad budget")?),
        _ => None,
    };
    let resume_path = cfg
        .get_bool("resume")?
        .then(|| dir.join("sweep-records.jsonl"));

    let result = match cfg.require("classifier")? {
        "cnn" => {
            let template = ArchitectureSpec::default_for(
                train_data.channels(),
                train_data.segment_length(),
                train_data.num_classes(),
            );
            let opts = SweepOptions {
                train: train_config(cfg)?,
                budget,
                resume_path,
            };
            run_sweep(&train_data, &test_data, &template, &grid, &opts)?
        }
        "forest" => {
            let opts = ForestSweepOptions {
                baseline_trees: cfg.get_usize("forest.trees")?,
                max_depth: cfg.get_usize("forest.max_depth")?,
                size_scale: cfg.get_f64("forest.size_scale")?,
                mode: feature_mode(cfg)?,
                seed: cfg.get_u64("seed")?,
                budget,
                resume_path,
            };
            run_forest_sweep(&train_data, &test_data, &grid, &opts)?
        }
        other => bail!("classifier must be `cnn` or `forest`, got `{other}`"),
    };

    let floor = match cfg.get("accuracy_floor") {
        Some(raw) if !raw.trim().is_empty() => Some(raw.parse::<f64>().context("bad accuracy_floor")?),
        _ => None,
    };
    let selection = select_deployment(&result, floor)?;

    // Persist records even when resume is off.
    if cfg.get_bool("resume")? {
        // run_sweep already wrote the canonical file.
    } else {
        let mut sorted = result.records.clone();
        sorted.sort_by(|a, b| a.config_id.cmp(&b.config_id));
        let mut text = String::new();
        for r in &sorted {
            let _ = writeln!(text, "{}", serde_json::to_string(r)?);
        }
        fs::write(dir.join("sweep-records.jsonl"), text)?;
    }
    let summary = serde_json::json!({
        "baseline_accuracy": result.baseline_accuracy,
        "baseline_memory_kb": result.baseline_memory_kb,
        "training_runs": result.training_runs,
        "records": result.records.len(),
    });
    fs::write(dir.join("sweep-summary.json"), serde_json::to_string(&summary)? + "\n")?;
    fs::write(dir.join("selected.json"), serde_json::to_string(&selection)? + "\n")?;
    let pareto = render_pareto(&result.records);
    fs::write(dir.join("pareto.txt"), &pareto)?;
    cfg.write_manifest(&dir)?;

    println!(
        "baseline accuracy {:.4}, {} records, {} training runs",
        result.baseline_accuracy,
        result.records.len(),
        result.training_runs
    );
    print!("{pareto}");
    match &selection {
        Selection::Chosen(r) => println!(
            "selected {} (accuracy {:.4}, energy {:.4})",
            r.config_id,
            r.accuracy.unwrap_or(f64::NAN),
            r.energy_ratio.unwrap_or(f64::NAN)
        ),
        Selection::NoFeasible { floor, nearest } => {
            println!("no feasible configuration for accuracy floor {floor:.4}");
            for r in nearest {
                println!(
                    "  nearest miss {} accuracy {:.4} energy {:.4}",
                    r.config_id,
                    r.accuracy.unwrap_or(f64::NAN),
                    r.energy_ratio.unwrap_or(f64::NAN)
                );
            }
        }
    }
    Ok(())
}

// ── report ──────────────────────────────────────────────────────────

pub fn cmd_report(sweep: Option<&Path>, traces: Option<&Path>, out: Option<&Path>) -> Result<()> {
    if sweep.is_none() && traces.is_none() {
        bail!("report needs --sweep and/or --traces");
    }
    let mut rendered = String::new();
    if let Some(path) = sweep {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read sweep records {}", path.display()))?;
        let records: Vec<SweepRecord> = text
            .lines()
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        rendered.push_str(&render_pareto(&records));
    }
    if let Some(path) = traces {
        let traces = read_trace_log(path)?;
        let num_exits = traces.iter().map(|t| t.exit_taken).max().unwrap_or(1);
        let num_classes = traces
            .iter()
            .filter_map(|t| t.true_label)
            .chain(traces.iter().map(|t| t.predicted_label))
            .max()
            .map_or(1, |m| m + 1);
        let report = build_report(
            &traces,
            num_exits,
            num_classes,
            &SensorPowerModel::uniform(1),
            MemoryFigures { baseline_kb: 0.0, see_kb: 0.0 },
            None,
        )?;
        let names: Vec<String> = (0..num_classes).map(|c| format!("class_{c}")).collect();
        rendered.push_str(&render_report(&report, &names));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), &rendered)?;
    }
    print!("{rendered}");
    Ok(())
}
