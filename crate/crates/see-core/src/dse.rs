//! Grid design-space exploration over SEE hyperparameters.
//!
//! Each (placement, fraction, loss-weight) combination trains once; the
//! entropy thresholds are swept over the trained model, since they affect
//! inference only. Results carry Pareto flags over (maximize accuracy,
//! minimize energy ratio) and persist as one JSON record per line, keyed
//! by config id, so interrupted sweeps resume without redoing work.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::energy::{accuracy_of, energy_ratio, SensorPowerModel};
use crate::error::{Error, Result};
use crate::forest::{
    build_cascade, featurize_prefix, predict_proba, train_forest, FeatureMode, FeatureSchema,
    ForestConfig,
};
use crate::inference::{infer_dataset, ThresholdVector};
use crate::model::{ArchitectureSpec, ExitSpec, SeeCnnModel};
use crate::trainer::{evaluate_exit, train, TrainConfig};

/// Hyperparameter ranges to explore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Per-exit data increments in percent: exit n receives this much NEW
    /// window data, so cumulative fractions are the prefix sums.
    pub data_fraction_percents: Vec<u32>,
    pub num_early_exits: Vec<usize>,
    /// Shared entropy threshold candidates.
    pub thresholds: Vec<f64>,
    /// First-exit loss weight candidates; the tail decreases linearly to 1.
    pub loss_weights: Vec<f64>,
    /// Candidate trunk layers for exit attachment.
    pub exit_placements: Vec<usize>,
    /// Permit values outside the documented ranges ([10,50]%, thresholds
    /// [0.1,1.5], weights [1,4], 1-2 CNN exits / 1-4 forest stages).
    pub allow_out_of_range: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            data_fraction_percents: vec![10, 20, 30, 40, 50],
            num_early_exits: vec![1, 2],
            thresholds: vec![0.1, 0.3, 0.5, 0.8, 1.0, 1.5],
            loss_weights: vec![1.0, 2.0, 3.0, 4.0],
            exit_placements: vec![1, 2],
            allow_out_of_range: false,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self, for_forest: bool) -> Result<()> {
        if self.data_fraction_percents.is_empty()
            || self.num_early_exits.is_empty()
            || self.thresholds.is_empty()
        {
            return Err(Error::Config("sweep grid has an empty dimension".into()));
        }
        if !for_forest && (self.loss_weights.is_empty() || self.exit_placements.is_empty()) {
            return Err(Error::Config("sweep grid has an empty dimension".into()));
        }
        for &t in &self.thresholds {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Config(format!("threshold {t} must be finite and >= 0")));
            }
        }
        for &w in &self.loss_weights {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Config(format!("loss weight {w} must be positive")));
            }
        }
        if self.allow_out_of_range {
            return Ok(());
        }
        let exit_range = if for_forest { 1..=4 } else { 1..=2 };
        for &p in &self.data_fraction_percents {
            if !(10..=50).contains(&p) {
                return Err(Error::Config(format!(
                    "data percentage {p} outside the explored 10-50 range"
                )));
            }
        }
        for &t in &self.thresholds {
            if !(0.1..=1.5).contains(&t) {
                return Err(Error::Config(format!("threshold {t} outside the explored 0.1-1.5 range")));
            }
        }
        for &w in &self.loss_weights {
            if !(1.0..=4.0).contains(&w) {
                return Err(Error::Config(format!("loss weight {w} outside the explored 1-4 range")));
            }
        }
        for &n in &self.num_early_exits {
            if !exit_range.contains(&n) {
                return Err(Error::Config(format!(
                    "{n} early exits outside the explored range {exit_range:?}"
                )));
            }
        }
        Ok(())
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub id: String,
    pub arch_id: String,
    pub placements: Vec<usize>,
    /// Cumulative early-exit data fractions.
    pub fractions: Vec<f64>,
    /// Per-exit loss weights including the terminal exit.
    pub loss_weights: Vec<f64>,
    /// Shared early-exit entropy threshold.
    pub threshold: f64,
}

fn decreasing_weights(first: f64, num_exits: usize) -> Vec<f64> {
    if num_exits == 1 {
        return vec![1.0];
    }
    (0..num_exits)
        .map(|i| first - (first - 1.0) * i as f64 / (num_exits - 1) as f64)
        .collect()
}

fn increasing_combinations<T: Copy + PartialOrd>(items: &[T], k: usize) -> Vec<Vec<T>> {
    fn recurse<T: Copy>(items: &[T], k: usize, start: usize, prefix: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for i in start..items.len() {
            prefix.push(items[i]);
            recurse(items, k, i + 1, prefix, out);
            prefix.pop();
        }
    }
    let mut sorted: Vec<T> = items.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    sorted.dedup_by(|a, b| a == b);
    let mut out = Vec::new();
    recurse(&sorted, k, 0, &mut Vec::new(), &mut out);
    out
}

/// All length-k sequences of increments (repetition allowed): the k-th
/// exit's NEW data share is chosen independently.
fn increment_sequences(items: &[u32], k: usize) -> Vec<Vec<u32>> {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out: Vec<Vec<u32>> = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::with_capacity(out.len() * sorted.len());
        for prefix in &out {
            for &item in &sorted {
                let mut seq = prefix.clone();
                seq.push(item);
                next.push(seq);
            }
        }
        out = next;
    }
    out
}

/// Prefix sums as cumulative percentages; `None` when the early exits
/// would already consume the whole window.
fn cumulative_percents(increments: &[u32]) -> Option<Vec<u32>> {
    let mut total = 0u32;
    let mut out = Vec::with_capacity(increments.len());
    for &inc in increments {
        total += inc;
        if total >= 100 {
            return None;
        }
        out.push(total);
    }
    Some(out)
}

fn spec_with_exits(template: &ArchitectureSpec, candidate: &SweepConfig) -> ArchitectureSpec {
    let mut spec = template.clone();
    spec.exits = candidate
        .placements
        .iter()
        .zip(&candidate.fractions)
        .enumerate()
        .map(|(i, (&layer, &fraction))| ExitSpec {
            attach_after_layer: layer,
            cumulative_data_fraction: fraction,
            entropy_threshold: Some(candidate.threshold),
            loss_weight: candidate.loss_weights[i],
        })
        .collect();
    spec.exits.push(ExitSpec {
        attach_after_layer: spec.trunk.len(),
        cumulative_data_fraction: 1.0,
        entropy_threshold: None,
        loss_weight: *candidate.loss_weights.last().unwrap(),
    });
    spec
}

fn format_arch_id(placements: &[usize], percents: &[u32], weight: f64) -> String {
    let p: Vec<String> = placements.iter().map(|x| x.to_string()).collect();
    let f: Vec<String> = percents.iter().map(|x| x.to_string()).collect();
    format!("p{}_f{}_w{}", p.join("-"), f.join("-"), weight)
}

/// Cartesian product of the grid, filtered to structurally feasible
/// configurations (increasing placements and fractions, shape-valid
/// specs). Output order is deterministic.
pub fn enumerate_grid(grid: &SweepGrid, template: &ArchitectureSpec) -> Result<Vec<SweepConfig>> {
    grid.validate(false)?;
    let mut out = Vec::new();
    let mut exit_counts: Vec<usize> = grid.num_early_exits.clone();
    exit_counts.sort_unstable();
    exit_counts.dedup();
    let mut thresholds = grid.thresholds.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut weights = grid.loss_weights.clone();
    weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    weights.dedup();

    for &k in &exit_counts {
        if k == 0 {
            // Degenerate baseline configuration: no exits, no gates.
            let candidate = SweepConfig {
                id: "baseline_t0".into(),
                arch_id: "baseline".into(),
                placements: vec![],
                fractions: vec![],
                loss_weights: vec![1.0],
                threshold: 0.0,
            };
            if crate::model::plan_shapes(&spec_with_exits(template, &candidate)).is_ok() {
                out.push(candidate);
            }
            continue;
        }
        for placements in increasing_combinations(&grid.exit_placements, k) {
            for increments in increment_sequences(&grid.data_fraction_percents, k) {
                let Some(percents) = cumulative_percents(&increments) else {
                    continue;
                };
                for &w in &weights {
                    let fractions: Vec<f64> = percents.iter().map(|&p| p as f64 / 100.0).collect();
                    let arch_id = format_arch_id(&placements, &percents, w);
                    let loss_weights = decreasing_weights(w, k + 1);
                    let probe = SweepConfig {
                        id: String::new(),
                        arch_id: arch_id.clone(),
                        placements: placements.clone(),
                        fractions: fractions.clone(),
                        loss_weights: loss_weights.clone(),
                        threshold: thresholds[0],
                    };
                    if crate::model::plan_shapes(&spec_with_exits(template, &probe)).is_err() {
                        continue;
                    }
                    for &t in &thresholds {
                        out.push(SweepConfig {
                            id: format!("{arch_id}_t{t}"),
                            arch_id: arch_id.clone(),
                            placements: placements.clone(),
                            fractions: fractions.clone(),
                            loss_weights: loss_weights.clone(),
                            threshold: t,
                        });
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no structurally feasible configuration in the grid".into()));
    }
    Ok(out)
}

/// Metrics of one evaluated configuration. `failed` records a training
/// failure; metric fields are `None` in that case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub config_id: String,
    pub arch_id: String,
    pub placements: Vec<usize>,
    pub fractions: Vec<f64>,
    pub loss_weights: Vec<f64>,
    pub threshold: f64,
    pub per_exit_accuracy: Option<Vec<f64>>,
    pub accuracy: Option<f64>,
    pub energy_ratio: Option<f64>,
    pub memory_kb: Option<f64>,
    pub pareto: bool,
    pub failed: Option<String>,
}

/// All evaluated records plus baseline figures and the train-invocation
/// counter (thresholds must never retrain).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub baseline_accuracy: f64,
    pub baseline_memory_kb: f64,
    pub training_runs: usize,
}

/// Sweep-wide controls.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub train: TrainConfig,
    /// Maximum architectures trained in this invocation; unfinished
    /// configurations stay absent and a resumed run picks them up.
    pub budget: Option<usize>,
    /// JSON-lines record store for resumable sweeps.
    pub resume_path: Option<PathBuf>,
}

fn load_cached_records(path: &Path) -> Result<BTreeMap<String, SweepRecord>> {
    let mut cache = BTreeMap::new();
    if !path.exists() {
        return Ok(cache);
    }
    let text = fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        let record: SweepRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        cache.insert(record.config_id.clone(), record);
    }
    Ok(cache)
}

fn persist_records(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.config_id.cmp(&b.config_id));
    let mut out = String::new();
    for r in sorted {
        let _ = writeln!(out, "{}", serde_json::to_string(r)?);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Flags the records that are Pareto-optimal for (max accuracy, min
/// energy). Sort-based sweep; the tests verify it against a brute-force
/// dominance check.
pub fn mark_pareto(records: &mut [SweepRecord]) {
    let mut order: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].failed.is_none())
        .collect();
    for &i in &order {
        records[i].pareto = false;
    }
    order.sort_by(|&a, &b| {
        let (ea, aa) = (records[a].energy_ratio.unwrap(), records[a].accuracy.unwrap());
        let (eb, ab) = (records[b].energy_ratio.unwrap(), records[b].accuracy.unwrap());
        ea.partial_cmp(&eb)
            .unwrap()
            .then(ab.partial_cmp(&aa).unwrap())
    });
    let mut best_acc = f64::NEG_INFINITY;
    let mut group_start = 0;
    while group_start < order.len() {
        let energy = records[order[group_start]].energy_ratio.unwrap();
        let mut group_end = group_start;
        while group_end < order.len() && records[order[group_end]].energy_ratio.unwrap() == energy {
            group_end += 1;
        }
        let group_best = records[order[group_start]].accuracy.unwrap();
        if group_best > best_acc {
            for &i in &order[group_start..group_end] {
                if records[i].accuracy.unwrap() == group_best {
                    records[i].pareto = true;
                }
            }
            best_acc = group_best;
        }
        group_start = group_end;
    }
}

/// Trains every architecture in the grid once and sweeps thresholds over
/// it. Deterministic for a fixed seed; single-configuration training
/// failures are recorded and the sweep continues.
pub fn run_sweep(
    train_data: &Dataset,
    test_data: &Dataset,
    template: &ArchitectureSpec,
    grid: &SweepGrid,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    let configs = enumerate_grid(grid, template)?;
    let cache = match &opts.resume_path {
        Some(path) => load_cached_records(path)?,
        None => BTreeMap::new(),
    };
    let mut training_runs = 0usize;

    // Baseline: the exit-free template.
    let mut baseline_spec = template.clone();
    baseline_spec.exits = vec![ExitSpec {
        attach_after_layer: baseline_spec.trunk.len(),
        cumulative_data_fraction: 1.0,
        entropy_threshold: None,
        loss_weight: 1.0,
    }];
    let baseline = SeeCnnModel::assemble(baseline_spec, opts.train.seed)?;
    let baseline_cfg = TrainConfig {
        loss_weights: Some(vec![1.0]),
        ..opts.train.clone()
    };
    let (baseline, _) = train(baseline, train_data, None, &baseline_cfg)?;
    training_runs += 1;
    let baseline_accuracy = evaluate_exit(&baseline, test_data, 0)?;
    let baseline_memory_kb = baseline.memory_kb();

    // Group configurations per architecture, preserving enumeration order.
    let mut arch_order: Vec<String> = Vec::new();
    let mut by_arch: BTreeMap<String, Vec<SweepConfig>> = BTreeMap::new();
    for config in configs {
        if !by_arch.contains_key(&config.arch_id) {
            arch_order.push(config.arch_id.clone());
        }
        by_arch.entry(config.arch_id.clone()).or_default().push(config);
    }

    let power = SensorPowerModel::uniform(train_data.channels());
    let mut records: Vec<SweepRecord> = Vec::new();
    let mut trained_this_run = 0usize;

    for arch_id in &arch_order {
        let group = &by_arch[arch_id];
        if group.iter().all(|c| cache.contains_key(&c.id)) {
            for c in group {
                records.push(cache[&c.id].clone());
            }
            continue;
        }
        if let Some(budget) = opts.budget {
            if trained_this_run >= budget {
                continue;
            }
        }
        trained_this_run += 1;

        let spec = spec_with_exits(template, &group[0]);
        let trained = SeeCnnModel::assemble(spec, opts.train.seed).and_then(|model| {
            let cfg = TrainConfig {
                loss_weights: Some(group[0].loss_weights.clone()),
                ..opts.train.clone()
            };
            training_runs += 1;
            train(model, train_data, None, &cfg).map(|(m, _)| m)
        });

        match trained {
            Err(e) => {
                for c in group {
                    records.push(SweepRecord {
                        config_id: c.id.clone(),
                        arch_id: c.arch_id.clone(),
                        placements: c.placements.clone(),
                        fractions: c.fractions.clone(),
                        loss_weights: c.loss_weights.clone(),
                        threshold: c.threshold,
                        per_exit_accuracy: None,
                        accuracy: None,
                        energy_ratio: None,
                        memory_kb: None,
                        pareto: false,
                        failed: Some(e.to_string()),
                    });
                }
            }
            Ok(model) => {
                let num_exits = model.num_exits();
                let mut per_exit = Vec::with_capacity(num_exits);
                for e in 0..num_exits {
                    per_exit.push(evaluate_exit(&model, test_data, e)?);
                }
                for c in group {
                    let thresholds = ThresholdVector::uniform(c.threshold, num_exits - 1)?;
                    let traces = infer_dataset(&model, test_data, &thresholds)?;
                    records.push(SweepRecord {
                        config_id: c.id.clone(),
                        arch_id: c.arch_id.clone(),
                        placements: c.placements.clone(),
                        fractions: c.fractions.clone(),
                        loss_weights: c.loss_weights.clone(),
                        threshold: c.threshold,
                        per_exit_accuracy: Some(per_exit.clone()),
                        accuracy: Some(accuracy_of(&traces)?),
                        energy_ratio: Some(energy_ratio(&traces, &power)?),
                        memory_kb: Some(model.memory_kb()),
                        pareto: false,
                        failed: None,
                    });
                }
            }
        }
    }

    mark_pareto(&mut records);
    if let Some(path) = &opts.resume_path {
        persist_records(path, &records)?;
    }

    Ok(SweepResult {
        records,
        baseline_accuracy,
        baseline_memory_kb,
        training_runs,
    })
}

// ── Forest sweep ────────────────────────────────────────────────────

/// Controls for the cascade sweep: the baseline forest's size, the stage
/// sizing factor, and the featurizer.
#[derive(Debug, Clone)]
pub struct ForestSweepOptions {
    pub baseline_trees: usize,
    pub max_depth: usize,
    /// Stage i gets `max(1, round(baseline_trees * fraction_i * scale))`
    /// trees.
    pub size_scale: f64,
    pub mode: FeatureMode,
    pub seed: u64,
    pub budget: Option<usize>,
    pub resume_path: Option<PathBuf>,
}

impl Default for ForestSweepOptions {
    fn default() -> Self {
        Self {
            baseline_trees: 30,
            max_depth: 5,
            size_scale: 0.3,
            mode: FeatureMode::SummaryStats,
            seed: 0,
            budget: None,
            resume_path: None,
        }
    }
}

/// Threshold-swept cascade exploration; mirrors [`run_sweep`] with stage
/// builds in place of CNN trainings (loss weights do not apply).
pub fn run_forest_sweep(
    train_data: &Dataset,
    test_data: &Dataset,
    grid: &SweepGrid,
    opts: &ForestSweepOptions,
) -> Result<SweepResult> {
    grid.validate(true)?;
    let cache = match &opts.resume_path {
        Some(path) => load_cached_records(path)?,
        None => BTreeMap::new(),
    };
    let mut training_runs = 0usize;

    // Baseline forest on full windows.
    let schema = FeatureSchema::for_segment(
        train_data.channels(),
        train_data.segment_length(),
        1.0,
        opts.mode,
    )?;
    let features: Vec<Vec<f64>> = train_data
        .segments
        .iter()
        .map(|s| featurize_prefix(&s.data, 1.0, opts.mode))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = train_data.segments.iter().map(|s| s.label).collect();
    let baseline = train_forest(
        &features,
        &labels,
        train_data.num_classes(),
        schema,
        &ForestConfig {
            num_trees: opts.baseline_trees,
            max_depth: opts.max_depth,
            seed: opts.seed,
            ..ForestConfig::default()
        },
    )?;
    training_runs += 1;
    let mut correct = 0usize;
    for seg in &test_data.segments {
        let f = featurize_prefix(&seg.data, 1.0, opts.mode)?;
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
    let baseline_accuracy = correct as f64 / test_data.segments.len() as f64;
    let baseline_memory_kb = baseline.memory_kb();

    let mut thresholds = grid.thresholds.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut exit_counts = grid.num_early_exits.clone();
    exit_counts.sort_unstable();
    exit_counts.dedup();

    let power = SensorPowerModel::uniform(train_data.channels());
    let mut records = Vec::new();
    let mut built_this_run = 0usize;

    for &k in &exit_counts {
        for increments in increment_sequences(&grid.data_fraction_percents, k) {
            let Some(percents) = cumulative_percents(&increments) else {
                continue;
            };
            let mut fractions: Vec<f64> = percents.iter().map(|&p| p as f64 / 100.0).collect();
            fractions.push(1.0);
            let stage_trees: Vec<usize> = fractions
                .iter()
                .map(|&c| ((opts.baseline_trees as f64 * c * opts.size_scale).round() as usize).max(1))
                .collect();
            let percent_id: Vec<String> = percents.iter().map(|p| p.to_string()).collect();
            let arch_id = format!("c{}_s{}", percent_id.join("-"), opts.baseline_trees);

            let group: Vec<(String, f64)> = thresholds
                .iter()
                .map(|&t| (format!("{arch_id}_t{t}"), t))
                .collect();
            if group.iter().all(|(id, _)| cache.contains_key(id)) {
                for (id, _) in &group {
                    records.push(cache[id].clone());
                }
                continue;
            }
            if let Some(budget) = opts.budget {
                if built_this_run >= budget {
                    continue;
                }
            }
            built_this_run += 1;
            training_runs += 1;

            let built = build_cascade(
                train_data,
                &fractions,
                &stage_trees,
                opts.max_depth,
                opts.mode,
                &baseline,
                opts.seed,
            );
            match built {
                Err(e) => {
                    for (id, t) in &group {
                        records.push(SweepRecord {
                            config_id: id.clone(),
                            arch_id: arch_id.clone(),
                            placements: vec![],
                            fractions: fractions.clone(),
                            loss_weights: vec![],
                            threshold: *t,
                            per_exit_accuracy: None,
                            accuracy: None,
                            energy_ratio: None,
                            memory_kb: None,
                            pareto: false,
                            failed: Some(e.to_string()),
                        });
                    }
                }
                Ok(cascade) => {
                    for (id, t) in &group {
                        let tv = ThresholdVector::uniform(*t, cascade.num_early_stages())?;
                        let traces = infer_dataset(&cascade, test_data, &tv)?;
                        records.push(SweepRecord {
                            config_id: id.clone(),
                            arch_id: arch_id.clone(),
                            placements: vec![],
                            fractions: fractions.clone(),
                            loss_weights: vec![],
                            threshold: *t,
                            per_exit_accuracy: None,
                            accuracy: Some(accuracy_of(&traces)?),
                            energy_ratio: Some(energy_ratio(&traces, &power)?),
                            memory_kb: Some(cascade.memory_kb()),
                            pareto: false,
                            failed: None,
                        });
                    }
                }
            }
        }
    }

    mark_pareto(&mut records);
    if let Some(path) = &opts.resume_path {
        persist_records(path, &records)?;
    }

    Ok(SweepResult {
        records,
        baseline_accuracy,
        baseline_memory_kb,
        training_runs,
    })
}

// ── Deployment selection ────────────────────────────────────────────

/// Outcome of configuration selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Selection {
    Chosen(SweepRecord),
    /// No configuration met the accuracy floor; carries the nearest
    /// misses sorted by accuracy.
    NoFeasible {
        floor: f64,
        nearest: Vec<SweepRecord>,
    },
}

/// Picks the minimum-energy configuration whose accuracy meets the floor
/// (default: baseline accuracy minus one point). Ties break toward higher
/// accuracy, then lower memory, then lexicographic config id.
pub fn select_deployment(result: &SweepResult, accuracy_floor: Option<f64>) -> Result<Selection> {
    if result.records.is_empty() {
        return Err(Error::Usage("cannot select from an empty sweep".into()));
    }
    let floor = accuracy_floor.unwrap_or(result.baseline_accuracy - 0.01);
    let mut feasible: Vec<&SweepRecord> = result
        .records
        .iter()
        .filter(|r| r.failed.is_none() && r.accuracy.unwrap() >= floor)
        .collect();
    if feasible.is_empty() {
        let mut nearest: Vec<SweepRecord> = result
            .records
            .iter()
            .filter(|r| r.failed.is_none())
            .cloned()
            .collect();
        nearest.sort_by(|a, b| b.accuracy.partial_cmp(&a.accuracy).unwrap());
        nearest.truncate(3);
        return Ok(Selection::NoFeasible { floor, nearest });
    }
    feasible.sort_by(|a, b| {
        a.energy_ratio
            .partial_cmp(&b.energy_ratio)
            .unwrap()
            .then(b.accuracy.partial_cmp(&a.accuracy).unwrap())
            .then(a.memory_kb.partial_cmp(&b.memory_kb).unwrap())
            .then(a.config_id.cmp(&b.config_id))
    });
    Ok(Selection::Chosen(feasible[0].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::model::ConvStageConfig;

    fn template() -> ArchitectureSpec {
        let mut spec = ArchitectureSpec::default_for(2, 32, 4);
        spec.trunk = vec![
            ConvStageConfig { out_channels: 4, kernel_width: 3, stride: 1, pool_width: 2, pool_stride: 2 },
            ConvStageConfig { out_channels: 6, kernel_width: 3, stride: 1, pool_width: 2, pool_stride: 2 },
            ConvStageConfig { out_channels: 6, kernel_width: 3, stride: 1, pool_width: 2, pool_stride: 2 },
        ];
        spec.fc_dims = [12, 4];
        spec.exit_head.conv_filters = 3;
        spec.exit_head.hidden_dim = 6;
        spec.late_input.kernel_width = 3;
        spec
    }

    fn small_data(seed: u64) -> (Dataset, Dataset) {
        let ds = generate_synthetic(&SyntheticSpec {
            num_classes: 4,
            easy_class_count: 2,
            channels: 2,
            segment_length: 32,
            n_per_class: 20,
            noise_sigma: 0.3,
            seed,
        })
        .unwrap();
        let split = crate::dataset::split(&ds, 0.6, seed).unwrap();
        (split.train, split.test)
    }

    fn quick_train() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 3e-3,
            loss_weights: None,
            seed: 0,
            patience: 0,
        }
    }

    #[test]
    fn counting_example_two_fractions_three_thresholds() {
        let grid = SweepGrid {
            data_fraction_percents: vec![40, 50],
            num_early_exits: vec![1],
            thresholds: vec![0.2, 0.5, 1.0],
            loss_weights: vec![2.0],
            exit_placements: vec![1],
            allow_out_of_range: false,
        };
        let configs = enumerate_grid(&grid, &template()).unwrap();
        assert!(configs.len() <= 6);
        assert_eq!(configs.len(), 6);
    }

    #[test]
    fn infeasible_placements_are_filtered() {
        // Attaching after layer 3 is not a legal early-exit placement for
        // a 3-stage trunk (and a 10% slice cannot reach it); only the
        // layer-1 placements survive.
        let grid = SweepGrid {
            data_fraction_percents: vec![10, 40],
            num_early_exits: vec![1],
            thresholds: vec![0.5],
            loss_weights: vec![2.0],
            exit_placements: vec![1, 2],
            allow_out_of_range: false,
        };
        let configs = enumerate_grid(&grid, &template()).unwrap();
        // 10%: 3 samples survive layer 1 (conv3 -> 1) but not the head.
        for c in &configs {
            assert!(!(c.placements == vec![2] && c.fractions == vec![0.1]));
        }
        assert!(configs.iter().any(|c| c.placements == vec![1]));
    }

    #[test]
    fn enumeration_is_deterministic() {
        let grid = SweepGrid::default();
        let a = enumerate_grid(&grid, &template()).unwrap();
        let b = enumerate_grid(&grid, &template()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_values_need_the_override() {
        let grid = SweepGrid {
            thresholds: vec![2.5],
            ..SweepGrid::default()
        };
        assert!(grid.validate(false).is_err());
        let grid = SweepGrid {
            thresholds: vec![2.5],
            allow_out_of_range: true,
            ..SweepGrid::default()
        };
        assert!(grid.validate(false).is_ok());
    }

    #[test]
    fn baseline_only_grid_yields_single_full_energy_record() {
        let (train_data, test_data) = small_data(0);
        let grid = SweepGrid {
            data_fraction_percents: vec![30],
            num_early_exits: vec![0],
            thresholds: vec![0.5],
            loss_weights: vec![1.0],
            exit_placements: vec![1],
            allow_out_of_range: true,
        };
        let opts = SweepOptions {
            train: quick_train(),
            budget: None,
            resume_path: None,
        };
        let result = run_sweep(&train_data, &test_data, &template(), &grid, &opts).unwrap();
        assert_eq!(result.records.len(), 1);
        let r = &result.records[0];
        assert_eq!(r.energy_ratio, Some(1.0));
        assert!(r.pareto);
    }

    #[test]
    fn thresholds_do_not_retrain() {
        let (train_data, test_data) = small_data(1);
        let grid = SweepGrid {
            data_fraction_percents: vec![40],
            num_early_exits: vec![1],
            thresholds: vec![0.1, 0.5, 1.0, 1.5],
            loss_weights: vec![2.0],
            exit_placements: vec![1],
            allow_out_of_range: false,
        };
        let opts = SweepOptions {
            train: quick_train(),
            budget: None,
            resume_path: None,
        };
        let result = run_sweep(&train_data, &test_data, &template(), &grid, &opts).unwrap();
        // 4 threshold records, 1 architecture: baseline + 1 training runs.
        assert_eq!(result.records.len(), 4);
        assert_eq!(result.training_runs, 2);
        let ids: Vec<&str> = result.records.iter().map(|r| r.arch_id.as_str()).collect();
        assert!(ids.iter().all(|&i| i == ids[0]));
    }

    #[test]
    fn interrupted_sweep_resumes_to_identical_results() {
        let (train_data, test_data) = small_data(2);
        let grid = SweepGrid {
            data_fraction_percents: vec![40, 50],
            num_early_exits: vec![1],
            thresholds: vec![0.3, 0.8],
            loss_weights: vec![2.0],
            exit_placements: vec![1],
            allow_out_of_range: false,
        };
        let dir = tempfile::tempdir().unwrap();

        // Uninterrupted reference.
        let full_path = dir.path().join("full.jsonl");
        let opts = SweepOptions {
            train: quick_train(),
            budget: None,
            resume_path: Some(full_path.clone()),
        };
        let reference = run_sweep(&train_data, &test_data, &template(), &grid, &opts).unwrap();

        // Interrupted: budget of one architecture, then resume.
        let part_path = dir.path().join("partial.jsonl");
        let first = SweepOptions {
            train: quick_train(),
            budget: Some(1),
            resume_path: Some(part_path.clone()),
        };
        let partial = run_sweep(&train_data, &test_data, &template(), &grid, &first).unwrap();
        assert!(partial.records.len() < reference.records.len());

        let second = SweepOptions {
            train: quick_train(),
            budget: None,
            resume_path: Some(part_path.clone()),
        };
        let resumed = run_sweep(&train_data, &test_data, &template(), &grid, &second).unwrap();
        assert_eq!(resumed.records, reference.records);
        assert_eq!(
            fs::read(&part_path).unwrap(),
            fs::read(&full_path).unwrap()
        );
        // The cached architecture was not retrained on resume.
        assert!(resumed.training_runs < reference.training_runs);
    }

    #[test]
    fn pareto_flags_match_brute_force_dominance() {
        let mk = |id: &str, acc: f64, energy: f64| SweepRecord {
            config_id: id.into(),
            arch_id: id.into(),
            placements: vec![],
            fractions: vec![],
            loss_weights: vec![],
            threshold: 0.0,
            per_exit_accuracy: None,
            accuracy: Some(acc),
            energy_ratio: Some(energy),
            memory_kb: Some(1.0),
            pareto: false,
            failed: None,
        };
        let mut records = vec![
            mk("a", 0.90, 0.50),
            mk("b", 0.95, 0.70),
            mk("c", 0.85, 0.40),
            mk("d", 0.95, 0.50), // dominates a and b
            mk("e", 0.85, 0.45), // dominated by c
            mk("f", 0.97, 1.00),
            mk("g", 0.95, 0.50), // duplicate of d
        ];
        mark_pareto(&mut records);

        // Independent O(n^2) dominance check.
        for i in 0..records.len() {
            let (ai, ei) = (records[i].accuracy.unwrap(), records[i].energy_ratio.unwrap());
            let dominated = (0..records.len()).any(|j| {
                if i == j {
                    return false;
                }
                let (aj, ej) = (records[j].accuracy.unwrap(), records[j].energy_ratio.unwrap());
                aj >= ai && ej <= ei && (aj > ai || ej < ei)
            });
            assert_eq!(
                records[i].pareto, !dominated,
                "record {} flag mismatch",
                records[i].config_id
            );
        }
    }

    #[test]
    fn selection_applies_tie_breaks() {
        let mk = |id: &str, acc: f64, energy: f64, kb: f64| SweepRecord {
            config_id: id.into(),
            arch_id: id.into(),
            placements: vec![],
            fractions: vec![],
            loss_weights: vec![],
            threshold: 0.0,
            per_exit_accuracy: None,
            accuracy: Some(acc),
            energy_ratio: Some(energy),
            memory_kb: Some(kb),
            pareto: false,
            failed: None,
        };
        let result = SweepResult {
            records: vec![
                mk("low-acc", 0.80, 0.30, 1.0),
                mk("a", 0.93, 0.50, 2.0),
                mk("b", 0.95, 0.50, 2.0), // same energy, higher accuracy
                mk("c", 0.95, 0.50, 1.5), // same energy+accuracy, less memory
            ],
            baseline_accuracy: 0.95,
            baseline_memory_kb: 3.0,
            training_runs: 0,
        };
        match select_deployment(&result, None).unwrap() {
            Selection::Chosen(r) => assert_eq!(r.config_id, "c"),
            other => panic!("expected a selection, got {other:?}"),
        }

        match select_deployment(&result, Some(0.99)).unwrap() {
            Selection::NoFeasible { floor, nearest } => {
                assert_eq!(floor, 0.99);
                assert_eq!(nearest[0].config_id, "b");
            }
            other => panic!("expected no-feasible, got {other:?}"),
        }
    }

    #[test]
    fn selection_is_repeatable() {
        let (train_data, test_data) = small_data(3);
        let grid = SweepGrid {
            data_fraction_percents: vec![40],
            num_early_exits: vec![1],
            thresholds: vec![0.5, 1.0],
            loss_weights: vec![2.0],
            exit_placements: vec![1],
            allow_out_of_range: false,
        };
        let opts = SweepOptions {
            train: quick_train(),
            budget: None,
            resume_path: None,
        };
        let result = run_sweep(&train_data, &test_data, &template(), &grid, &opts).unwrap();
        let a = select_deployment(&result, None).unwrap();
        let b = select_deployment(&result, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_sweep_produces_gated_records() {
        let (train_data, test_data) = small_data(4);
        let grid = SweepGrid {
            data_fraction_percents: vec![30, 50],
            num_early_exits: vec![1, 2],
            thresholds: vec![0.3, 0.8],
            loss_weights: vec![1.0],
            exit_placements: vec![1],
            allow_out_of_range: false,
        };
        let opts = ForestSweepOptions {
            baseline_trees: 20,
            max_depth: 5,
            ..ForestSweepOptions::default()
        };
        let result = run_forest_sweep(&train_data, &test_data, &grid, &opts).unwrap();
        // Increment sequences: k=1 gives (30) and (50); k=2 gives
        // (30,30), (30,50), (50,30) (50+50 fills the window and drops
        // out). Five cascades x 2 thresholds = 10 records.
        assert_eq!(result.records.len(), 10);
        assert!(result.records.iter().any(|r| r.failed.is_none()));
        for r in result.records.iter().filter(|r| r.failed.is_none()) {
            let e = r.energy_ratio.unwrap();
            assert!((0.0..=1.0).contains(&e));
        }
        // Baseline + one build per fraction combination.
        assert_eq!(result.training_runs, 6);
    }
}
