//! The experiment matrix: sanity calibration of the closure signatures
//! (CD/BD), data ablations against a natural-image baseline, the
//! conv-vs-fully-connected comparison, and layer-wise closure profiles.
//! Every run is seeded, replicated, and leaves CSV/JSON artifacts from
//! which its verdict can be recomputed.

use crate::closure::{
    closure_curve, closure_per_triple, embed_stimuli, is_flat, slope_bootstrap_ci,
    strictly_increasing, CiMethod, ClosureCurve, ClosureRecord, SlopeCi, FLATNESS_TAU,
};
use crate::data::{
    load_natural, make_cd_bd_sets, make_white_noise, shuffle_labels, shuffle_pixels,
    split_examples, write_synthetic_corpus, StimulusTask,
};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::{build_network, Head, NetConfig, Network};
use crate::stats::{anova_two_way, mean_t_interval95, t_test_one_sample, AnovaTable, TTestResult};
use crate::stimulus::{build_triples, enumerate_specs, render, spec_index, Image, Triple};
use crate::train::{train, TrainConfig, TrainReport};
use crate::{AugmentationConfig, Dataset, Error, Normalizer, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    SanityCdBd,
    WhiteNoise,
    ShuffledPixels,
    Untrained,
    ShuffledLabels,
    /// All four ablations against one shared natural baseline.
    Ablations,
    ConvVsFc,
    LayerWise,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::SanityCdBd => "sanity_cd_bd",
            ExperimentName::WhiteNoise => "white_noise",
            ExperimentName::ShuffledPixels => "shuffled_pixels",
            ExperimentName::Untrained => "untrained",
            ExperimentName::ShuffledLabels => "shuffled_labels",
            ExperimentName::Ablations => "ablations",
            ExperimentName::ConvVsFc => "conv_vs_fc",
            ExperimentName::LayerWise => "layer_wise",
        }
    }
}

/// Where the natural-image corpus comes from. With no root configured
/// and no GCL_DATA_DIR set, a deterministic synthetic corpus of simple
/// line drawings (no triangles) is written beside the results and used
/// instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_true")]
    pub synthetic_fallback: bool,
    #[serde(default = "default_corpus_seed")]
    pub corpus_seed: u64,
}

fn default_classes() -> usize {
    3
}
fn default_per_class() -> usize {
    150
}
fn default_true() -> bool {
    true
}
fn default_corpus_seed() -> u64 {
    7
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            classes: default_classes(),
            per_class: default_per_class(),
            synthetic_fallback: true,
            corpus_seed: default_corpus_seed(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: ExperimentName,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Seed of the triple pairing shared by every condition in the plan.
    #[serde(default)]
    pub triple_seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_fc_lr")]
    pub fc_lr: f64,
    #[serde(default = "default_tau")]
    pub flatness_tau: f64,
    #[serde(default = "default_b")]
    pub bootstrap_b: usize,
    /// Absolute validation-accuracy distance treated as matched.
    #[serde(default = "default_match_tol")]
    pub match_tolerance: f64,
    /// Probe layers for layer-wise runs; all layers when empty.
    #[serde(default)]
    pub layers: Vec<String>,
    /// Keep final checkpoints of trained models.
    #[serde(default)]
    pub keep_checkpoints: bool,
    /// Layer-wise runs may start from this trained checkpoint instead
    /// of training a fresh net.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    // last field: serializes as a TOML table
    #[serde(default)]
    pub data: DataConfig,
}

fn default_reps() -> usize {
    5
}
fn default_epochs() -> usize {
    30
}
fn default_lr() -> f64 {
    0.001
}
fn default_fc_lr() -> f64 {
    0.0001
}
fn default_tau() -> f64 {
    FLATNESS_TAU
}
fn default_b() -> usize {
    1000
}
fn default_match_tol() -> f64 {
    0.03
}

impl ExperimentPlan {
    pub fn new(name: ExperimentName) -> Self {
        let mut plan = ExperimentPlan {
            name,
            replications: default_reps(),
            base_seed: 0,
            triple_seed: 0,
            epochs: default_epochs(),
            lr: default_lr(),
            fc_lr: default_fc_lr(),
            flatness_tau: default_tau(),
            bootstrap_b: default_b(),
            match_tolerance: default_match_tol(),
            layers: Vec::new(),
            keep_checkpoints: false,
            checkpoint: None,
            data: DataConfig::default(),
        };
        match name {
            ExperimentName::ConvVsFc => plan.replications = 7,
            ExperimentName::LayerWise => plan.replications = 1,
            _ => {}
        }
        plan
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.flatness_tau > 0.0) {
            return Err(Error::Config("flatness tau must be positive".into()));
        }
        if self.bootstrap_b < 2 {
            return Err(Error::Config("bootstrap B must be at least 2".into()));
        }
        if !(self.match_tolerance > 0.0 && self.match_tolerance < 1.0) {
            return Err(Error::Config("match tolerance must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: ExperimentPlan = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::FileFormat {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?,
            _ => serde_json::from_str(&text).map_err(|e| Error::FileFormat {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Renders all 992 stimuli once, in canonical spec order.
pub fn render_arena() -> Arc<Vec<Image>> {
    Arc::new(enumerate_specs().iter().map(|s| render(s).expect("enumerated specs render")).collect())
}

/// Per-trained-model artifacts kept in memory during a run.
pub struct TrainedModel {
    pub model_id: String,
    pub net: Network<f32>,
    pub norm: Normalizer,
    pub report: TrainReport,
}

/// Placeholder report for nets that were never trained.
fn untrained_report(seed: u64) -> TrainReport {
    TrainReport {
        rows: Vec::new(),
        seed,
        config_hash: String::new(),
        wall_seconds: 0.0,
        early_stopped: false,
        diverged: false,
        final_epoch: 0,
        no_validation: true,
        checkpoints: Vec::new(),
    }
}

/// Saves the model as `{model_id}.ckpt` under `dir` when the plan keeps
/// checkpoints; returns the written path.
fn keep_checkpoint(
    plan: &ExperimentPlan,
    dir: Option<&Path>,
    model: &TrainedModel,
) -> Result<Option<PathBuf>> {
    let Some(dir) = dir else { return Ok(None) };
    if !plan.keep_checkpoints {
        return Ok(None);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{}.ckpt", model.model_id));
    save_checkpoint(&path, &model.net, model.report.final_epoch, None, Some(&model.norm))?;
    Ok(Some(path))
}

/// Closure records for one net at one layer over the given triples.
pub fn records_for(
    net: &Network<f32>,
    norm: &Normalizer,
    model_id: &str,
    arena: &[Image],
    triples: &[Triple],
    layer: &str,
) -> Result<Vec<ClosureRecord>> {
    let mut ids: Vec<usize> = Vec::with_capacity(triples.len() * 3);
    for t in triples {
        for s in [&t.complete, &t.aligned, &t.disordered] {
            ids.push(spec_index(s).ok_or_else(|| {
                Error::InvalidSpec(format!("triple member not in canonical enumeration: {s:?}"))
            })?);
        }
    }
    ids.sort_unstable();
    ids.dedup();
    let emb = embed_stimuli(net, norm, arena, &ids, layer, 32)?;
    let (records, _) = closure_per_triple(&emb, triples, model_id)?;
    Ok(records)
}

/// Closure records for one model at one layer over the given triples.
pub fn model_records(
    model: &TrainedModel,
    arena: &[Image],
    triples: &[Triple],
    layer: &str,
) -> Result<Vec<ClosureRecord>> {
    records_for(&model.net, &model.norm, &model.model_id, arena, triples, layer)
}

/// Records relabeled under one id so replications pool into one curve.
pub fn pooled(records: &[ClosureRecord], pooled_id: &str) -> Vec<ClosureRecord> {
    records
        .iter()
        .map(|r| ClosureRecord { model_id: pooled_id.to_string(), ..r.clone() })
        .collect()
}

fn mean_c(records: &[ClosureRecord]) -> f64 {
    records.iter().map(|r| r.c).sum::<f64>() / records.len() as f64
}

/// Runs `count` seeded jobs, at most `jobs` at a time, preserving
/// result order by index.
pub fn run_replicated<T: Send, F>(count: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || count <= 1 {
        return (0..count).map(&f).collect();
    }
    let mut out: Vec<Option<Result<T>>> = (0..count).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut out);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(count) {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if r >= count {
                    break;
                }
                let result = f(r);
                slots.lock().unwrap()[r] = Some(result);
            });
        }
    });
    out.into_iter().map(|slot| slot.expect("every job index was claimed")).collect()
}

// ---------------------------------------------------------------- sanity

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SanityVerdict {
    /// Every CD replication reached 100% validation accuracy.
    pub valid: bool,
    pub cd_val_accuracies: Vec<f64>,
    pub cd_strictly_increasing: bool,
    /// Pooled mean C at edge 29 minus edge 3.
    pub cd_delta: f64,
    pub bd_max_abs_mean: f64,
    pub bd_flat: bool,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct SanityResult {
    pub plan: ExperimentPlan,
    #[serde(skip)]
    pub records: Vec<ClosureRecord>,
    pub curves: Vec<ClosureCurve>,
    pub verdict: SanityVerdict,
    #[serde(skip)]
    pub reports: Vec<(String, TrainReport)>,
    pub checkpoints: Vec<PathBuf>,
}

/// The signature calibration: closure-discrimination nets must show
/// increasing closure on held-out triples, background-discrimination
/// nets must stay flat.
pub fn run_sanity(
    plan: &ExperimentPlan,
    ckpt_dir: Option<&Path>,
    jobs: usize,
) -> Result<SanityResult> {
    plan.validate()?;
    let arena = render_arena();
    let triples = build_triples(plan.triple_seed)?;
    let config = NetConfig::conv(3, 2, Head::SingleSigmoid);

    type TaskRun = (TrainedModel, Vec<ClosureRecord>, Option<PathBuf>);
    let run_task = |task: StimulusTask, label: &str| -> Result<Vec<TaskRun>> {
        let (train_ds, val_ds, val_idx) =
            make_cd_bd_sets(&arena, &triples, task, plan.base_seed)?;
        let held: Vec<Triple> = val_idx.iter().map(|&i| triples[i].clone()).collect();
        run_replicated(plan.replications, jobs, |r| {
            let seed = plan.base_seed + r as u64;
            let mut net = build_network::<f32>(&config, seed)?;
            let mut tc = TrainConfig::new(plan.epochs, plan.lr, seed);
            tc.early_stop_at_full_val = true;
            let (report, norm) = train(&mut net, &train_ds, Some(&val_ds), &tc)?;
            let model = TrainedModel {
                model_id: format!("{label}_r{r}"),
                net,
                norm,
                report,
            };
            let records = model_records(&model, &arena, &held, "fc_finale")?;
            let ckpt = keep_checkpoint(plan, ckpt_dir, &model)?;
            Ok((model, records, ckpt))
        })
    };

    let cd = run_task(StimulusTask::CD, "cd")?;
    let bd = run_task(StimulusTask::BD, "bd")?;

    let mut records = Vec::new();
    let mut curves = Vec::new();
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    let mut cd_val_accuracies = Vec::new();
    let mut cd_pool = Vec::new();
    let mut bd_pool = Vec::new();
    for (models, pool) in [(&cd, &mut cd_pool), (&bd, &mut bd_pool)] {
        for (model, recs, ckpt) in models.iter() {
            curves.push(closure_curve(recs, CiMethod::Bootstrap { b: plan.bootstrap_b, seed: plan.base_seed })?);
            pool.extend(recs.iter().cloned());
            records.extend(recs.iter().cloned());
            reports.push((model.model_id.clone(), model.report.clone()));
            checkpoints.extend(ckpt.iter().cloned());
        }
    }
    for (model, _, _) in &cd {
        let acc = model.report.rows.last().and_then(|r| r.val_acc).unwrap_or(0.0);
        cd_val_accuracies.push(acc);
    }
    let cd_pooled = pooled(&cd_pool, "cd_pooled");
    let bd_pooled = pooled(&bd_pool, "bd_pooled");
    let cd_curve =
        closure_curve(&cd_pooled, CiMethod::Bootstrap { b: plan.bootstrap_b, seed: plan.base_seed })?;
    let bd_curve =
        closure_curve(&bd_pooled, CiMethod::Bootstrap { b: plan.bootstrap_b, seed: plan.base_seed })?;
    records.extend(cd_pooled);
    records.extend(bd_pooled);

    let valid = cd_val_accuracies.iter().all(|a| *a == 1.0);
    let cd_inc = strictly_increasing(&cd_curve);
    let first = cd_curve.points.first().map(|p| p.mean_c).unwrap_or(0.0);
    let last = cd_curve.points.last().map(|p| p.mean_c).unwrap_or(0.0);
    let cd_delta = last - first;
    let bd_max = bd_curve.points.iter().map(|p| p.mean_c.abs()).fold(0.0, f64::max);
    let bd_flat = is_flat(&bd_curve, plan.flatness_tau);
    let verdict = SanityVerdict {
        valid,
        cd_val_accuracies,
        cd_strictly_increasing: cd_inc,
        cd_delta,
        bd_max_abs_mean: bd_max,
        bd_flat,
        pass: valid && cd_inc && cd_delta > 0.2 && bd_flat,
    };
    curves.push(cd_curve);
    curves.push(bd_curve);
    Ok(SanityResult { plan: plan.clone(), records, curves, verdict, reports, checkpoints })
}

/// Recomputes the sanity verdict from persisted records alone; the
/// training-accuracy precondition is carried through as given.
pub fn sanity_verdict_from_records(
    records: &[ClosureRecord],
    cd_val_accuracies: &[f64],
    tau: f64,
    bootstrap_b: usize,
    bootstrap_seed: u64,
) -> Result<SanityVerdict> {
    let cd: Vec<ClosureRecord> =
        records.iter().filter(|r| r.model_id == "cd_pooled").cloned().collect();
    let bd: Vec<ClosureRecord> =
        records.iter().filter(|r| r.model_id == "bd_pooled").cloned().collect();
    let ci = CiMethod::Bootstrap { b: bootstrap_b, seed: bootstrap_seed };
    let cd_curve = closure_curve(&cd, ci)?;
    let bd_curve = closure_curve(&bd, ci)?;
    let valid = !cd_val_accuracies.is_empty() && cd_val_accuracies.iter().all(|a| *a == 1.0);
    let cd_inc = strictly_increasing(&cd_curve);
    let cd_delta = cd_curve.points.last().unwrap().mean_c - cd_curve.points.first().unwrap().mean_c;
    let bd_max = bd_curve.points.iter().map(|p| p.mean_c.abs()).fold(0.0, f64::max);
    let bd_flat = is_flat(&bd_curve, tau);
    Ok(SanityVerdict {
        valid,
        cd_val_accuracies: cd_val_accuracies.to_vec(),
        cd_strictly_increasing: cd_inc,
        cd_delta,
        bd_max_abs_mean: bd_max,
        bd_flat,
        pass: valid && cd_inc && cd_delta > 0.2 && bd_flat,
    })
}

// ------------------------------------------------------------- ablations

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    WhiteNoise,
    ShuffledPixels,
    Untrained,
    ShuffledLabels,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::WhiteNoise => "white_noise",
            AblationKind::ShuffledPixels => "shuffled_pixels",
            AblationKind::Untrained => "untrained",
            AblationKind::ShuffledLabels => "shuffled_labels",
        }
    }

    /// Expected to keep learned closure at zero (flat curve) rather
    /// than merely weaken it.
    pub fn expects_flat(self) -> bool {
        matches!(self, AblationKind::WhiteNoise | AblationKind::ShuffledPixels)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationConditionVerdict {
    pub kind: AblationKind,
    pub pooled_mean: f64,
    pub anova_interaction_p: f64,
    pub anova_condition_p: f64,
    /// Flat-curve conditions: max |mean C| under tau and interaction
    /// significant. Weakened-closure conditions: pooled t-test nonzero,
    /// positive, and mean below the natural baseline.
    pub flat: Option<bool>,
    pub max_abs_mean: f64,
    pub pooled_t: Option<TTestResult>,
    pub below_natural: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationVerdict {
    pub natural_slope: SlopeCi,
    pub natural_pooled_mean: f64,
    /// Natural baseline shows the closure signature.
    pub natural_pass: bool,
    pub conditions: Vec<AblationConditionVerdict>,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct AblationResult {
    pub plan: ExperimentPlan,
    pub kinds: Vec<AblationKind>,
    #[serde(skip)]
    pub records: Vec<ClosureRecord>,
    pub curves: Vec<ClosureCurve>,
    pub anova: Vec<(AblationKind, AnovaTable)>,
    pub verdict: AblationVerdict,
    #[serde(skip)]
    pub reports: Vec<(String, TrainReport)>,
    pub checkpoints: Vec<PathBuf>,
}

/// Loads the configured natural corpus, or falls back to the synthetic
/// one written under `scratch`.
pub fn resolve_corpus(
    data: &DataConfig,
    scratch: &Path,
) -> Result<(Dataset, Vec<String>, PathBuf)> {
    let root = data
        .root
        .clone()
        .or_else(|| std::env::var_os("GCL_DATA_DIR").map(PathBuf::from));
    let root = match root {
        Some(r) => r,
        None if data.synthetic_fallback => {
            let dir = scratch.join("synthetic_corpus");
            if !dir.is_dir() {
                write_synthetic_corpus(&dir, data.per_class, data.corpus_seed)?;
            }
            dir
        }
        None => {
            return Err(Error::Config(
                "no corpus root configured, GCL_DATA_DIR unset, synthetic fallback disabled"
                    .into(),
            ))
        }
    };
    let (ds, names) = load_natural(&root, data.classes, data.per_class, 150, data.corpus_seed, false)?;
    Ok((ds, names, root))
}

struct ConditionRun {
    records_by_rep: Vec<Vec<ClosureRecord>>,
    pooled_records: Vec<ClosureRecord>,
    reports: Vec<(String, TrainReport)>,
    checkpoints: Vec<PathBuf>,
}

/// Trains `replications` nets for one condition and collects records
/// over all 768 triples at fc_finale.
fn run_condition<FD>(
    plan: &ExperimentPlan,
    ckpt_dir: Option<&Path>,
    jobs: usize,
    arena: &Arc<Vec<Image>>,
    triples: &[Triple],
    label: &str,
    make_data: FD,
    trained: bool,
) -> Result<ConditionRun>
where
    FD: Fn(u64) -> Result<(Dataset, Option<Dataset>)> + Sync,
{
    let config = NetConfig::conv(3, plan.data.classes, Head::Softmax);
    let results = run_replicated(plan.replications, jobs, |r| {
        let seed = plan.base_seed + r as u64;
        let mut net = build_network::<f32>(&config, seed)?;
        let (model_id, report, norm);
        if trained {
            let (tr, va) = make_data(seed)?;
            let mut tc = TrainConfig::new(plan.epochs, plan.lr, seed);
            tc.augmentation = AugmentationConfig::default();
            let (rep, n) = train(&mut net, &tr, va.as_ref(), &tc)?;
            report = rep;
            norm = n;
        } else {
            report = untrained_report(seed);
            norm = Normalizer::identity(3);
        }
        model_id = format!("{label}_r{r}");
        let model = TrainedModel { model_id: model_id.clone(), net, norm, report };
        let records = model_records(&model, arena, triples, "fc_finale")?;
        let ckpt = keep_checkpoint(plan, ckpt_dir, &model)?;
        Ok((model_id, model.report, records, ckpt))
    })?;
    let mut run = ConditionRun {
        records_by_rep: Vec::new(),
        pooled_records: Vec::new(),
        reports: Vec::new(),
        checkpoints: Vec::new(),
    };
    for (model_id, report, records, ckpt) in results {
        run.pooled_records.extend(pooled(&records, &format!("{label}_pooled")));
        run.records_by_rep.push(records);
        run.reports.push((model_id, report));
        run.checkpoints.extend(ckpt);
    }
    Ok(run)
}

/// Natural baseline plus the requested ablations, with a
/// condition-by-edge-length ANOVA and pooled t-tests.
pub fn run_ablations(
    plan: &ExperimentPlan,
    kinds: &[AblationKind],
    scratch: &Path,
    ckpt_dir: Option<&Path>,
    jobs: usize,
) -> Result<AblationResult> {
    plan.validate()?;
    if kinds.is_empty() {
        return Err(Error::Config("no ablation kinds requested".into()));
    }
    let arena = render_arena();
    let triples = build_triples(plan.triple_seed)?;
    let (natural_ds, _, _) = resolve_corpus(&plan.data, scratch)?;

    let natural = run_condition(
        plan,
        ckpt_dir,
        jobs,
        &arena,
        &triples,
        "natural",
        |seed| {
            let (tr, va) = split_examples(&natural_ds, 0.75, seed)?;
            Ok((tr, Some(va)))
        },
        true,
    )?;

    let mut records = natural.pooled_records.clone();
    for recs in &natural.records_by_rep {
        records.extend(recs.iter().cloned());
    }
    let mut reports = natural.reports;
    let mut checkpoints = natural.checkpoints;
    let ci = CiMethod::Bootstrap { b: plan.bootstrap_b, seed: plan.base_seed };
    let mut curves = vec![closure_curve(&natural.pooled_records, ci)?];

    let natural_slope = slope_bootstrap_ci(&natural.pooled_records, plan.bootstrap_b, plan.base_seed)?;
    let natural_mean = mean_c(&natural.pooled_records);
    let natural_pass = natural_slope.slope > 0.0 && natural_slope.excludes_zero();

    let mut anova = Vec::new();
    let mut conditions = Vec::new();
    for &kind in kinds {
        let label = kind.as_str();
        let run = match kind {
            AblationKind::WhiteNoise => run_condition(
                plan,
                ckpt_dir,
                jobs,
                &arena,
                &triples,
                label,
                |seed| Ok((make_white_noise(natural_ds.len(), plan.data.classes as u32, seed)?, None)),
                true,
            )?,
            AblationKind::ShuffledPixels => run_condition(
                plan,
                ckpt_dir,
                jobs,
                &arena,
                &triples,
                label,
                |seed| {
                    let shuffled = shuffle_pixels(&natural_ds, plan.base_seed)?;
                    let (tr, va) = split_examples(&shuffled, 0.75, seed)?;
                    Ok((tr, Some(va)))
                },
                true,
            )?,
            AblationKind::ShuffledLabels => run_condition(
                plan,
                ckpt_dir,
                jobs,
                &arena,
                &triples,
                label,
                |seed| Ok((shuffle_labels(&natural_ds, seed)?, None)),
                true,
            )?,
            AblationKind::Untrained => run_condition(
                plan,
                ckpt_dir,
                jobs,
                &arena,
                &triples,
                label,
                |_| Err(Error::Experiment("untrained nets never load data".into())),
                false,
            )?,
        };

        curves.push(closure_curve(&run.pooled_records, ci)?);
        // two-way fixed-effects ANOVA over (condition, edge length),
        // replicate-pooled; df recomputed from the actual counts
        let mut table_rows: Vec<(String, u8, f64)> = Vec::new();
        for r in natural.pooled_records.iter().chain(&run.pooled_records) {
            table_rows.push((r.model_id.clone(), r.edge_length, r.c));
        }
        let table = anova_two_way(&table_rows)?;
        // p undefined only under zero residual variance; treat as
        // non-significant rather than crash
        let interaction_p = table.interaction.p.unwrap_or(1.0);
        let condition_p = table.model.p.unwrap_or(1.0);

        let max_abs = {
            let curve = curves.last().unwrap();
            curve.points.iter().map(|p| p.mean_c.abs()).fold(0.0, f64::max)
        };
        let pooled_mean = mean_c(&run.pooled_records);
        let (flat, pooled_t, below, pass);
        if kind.expects_flat() {
            let f = max_abs < plan.flatness_tau;
            pass = f && interaction_p < 0.01;
            flat = Some(f);
            pooled_t = None;
            below = pooled_mean < natural_mean;
        } else {
            let cs: Vec<f64> = run.pooled_records.iter().map(|r| r.c).collect();
            let t = t_test_one_sample(&cs, 0.0)?;
            below = pooled_mean < natural_mean;
            pass = t.p_two_sided < 0.01 && pooled_mean > 0.0 && below;
            flat = None;
            pooled_t = Some(t);
        }
        conditions.push(AblationConditionVerdict {
            kind,
            pooled_mean,
            anova_interaction_p: interaction_p,
            anova_condition_p: condition_p,
            flat,
            max_abs_mean: max_abs,
            pooled_t,
            below_natural: below,
            pass,
        });
        anova.push((kind, table));
        records.extend(run.pooled_records);
        for recs in &run.records_by_rep {
            records.extend(recs.iter().cloned());
        }
        reports.extend(run.reports);
        checkpoints.extend(run.checkpoints);
    }

    let pass = natural_pass && conditions.iter().all(|c| c.pass);
    Ok(AblationResult {
        plan: plan.clone(),
        kinds: kinds.to_vec(),
        records,
        curves,
        anova,
        verdict: AblationVerdict {
            natural_slope,
            natural_pooled_mean: natural_mean,
            natural_pass,
            conditions,
            pass,
        },
        reports,
        checkpoints,
    })
}

/// Recomputes an ablation verdict from persisted records alone.
pub fn ablation_verdict_from_records(
    records: &[ClosureRecord],
    kinds: &[AblationKind],
    tau: f64,
    bootstrap_b: usize,
    bootstrap_seed: u64,
) -> Result<AblationVerdict> {
    let of = |id: &str| -> Vec<ClosureRecord> {
        records.iter().filter(|r| r.model_id == id).cloned().collect()
    };
    let natural = of("natural_pooled");
    if natural.is_empty() {
        return Err(Error::Experiment("no natural_pooled records".into()));
    }
    let natural_slope = slope_bootstrap_ci(&natural, bootstrap_b, bootstrap_seed)?;
    let natural_mean = mean_c(&natural);
    let natural_pass = natural_slope.slope > 0.0 && natural_slope.excludes_zero();
    let ci = CiMethod::Bootstrap { b: bootstrap_b, seed: bootstrap_seed };
    let mut conditions = Vec::new();
    for &kind in kinds {
        let recs = of(&format!("{}_pooled", kind.as_str()));
        if recs.is_empty() {
            return Err(Error::Experiment(format!("no records for {}", kind.as_str())));
        }
        let mut rows: Vec<(String, u8, f64)> = Vec::new();
        for r in natural.iter().chain(&recs) {
            rows.push((r.model_id.clone(), r.edge_length, r.c));
        }
        let table = anova_two_way(&rows)?;
        let curve = closure_curve(&recs, ci)?;
        let max_abs = curve.points.iter().map(|p| p.mean_c.abs()).fold(0.0, f64::max);
        let pooled_mean = mean_c(&recs);
        let below = pooled_mean < natural_mean;
        let (flat, pooled_t, pass);
        if kind.expects_flat() {
            let f = max_abs < tau;
            pass = f && table.interaction.p.unwrap_or(1.0) < 0.01;
            flat = Some(f);
            pooled_t = None;
        } else {
            let cs: Vec<f64> = recs.iter().map(|r| r.c).collect();
            let t = t_test_one_sample(&cs, 0.0)?;
            pass = t.p_two_sided < 0.01 && pooled_mean > 0.0 && below;
            flat = None;
            pooled_t = Some(t);
        }
        conditions.push(AblationConditionVerdict {
            kind,
            pooled_mean,
            anova_interaction_p: table.interaction.p.unwrap_or(1.0),
            anova_condition_p: table.model.p.unwrap_or(1.0),
            flat,
            max_abs_mean: max_abs,
            pooled_t,
            below_natural: below,
            pass,
        });
    }
    let pass = natural_pass && conditions.iter().all(|c| c.pass);
    Ok(AblationVerdict {
        natural_slope,
        natural_pooled_mean: natural_mean,
        natural_pass,
        conditions,
        pass,
    })
}

// ------------------------------------------------------------ conv vs fc

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatchedPair {
    pub replicate: usize,
    pub conv_epochs: usize,
    pub fc_epochs: usize,
    pub conv_val_acc: f64,
    pub fc_val_acc: f64,
    pub matched: bool,
    pub conv_slope: f64,
    pub fc_slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvVsFcVerdict {
    pub pairs: Vec<MatchedPair>,
    /// Every replication found an accuracy-matched epoch pair.
    pub conclusive: bool,
    pub conv_slope_mean: f64,
    pub conv_slope_lo: f64,
    pub conv_slope_hi: f64,
    pub fc_slope_mean: f64,
    pub fc_slope_lo: f64,
    pub fc_slope_hi: f64,
    pub conv_excludes_zero: bool,
    pub fc_includes_zero: bool,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct ConvVsFcResult {
    pub plan: ExperimentPlan,
    #[serde(skip)]
    pub records: Vec<ClosureRecord>,
    pub curves: Vec<ClosureCurve>,
    pub verdict: ConvVsFcVerdict,
    #[serde(skip)]
    pub reports: Vec<(String, TrainReport)>,
    pub checkpoints: Vec<PathBuf>,
}

/// Picks (conv epoch, fc epoch) with validation accuracies within
/// tolerance, preferring the highest matched accuracy; epoch 0 rows
/// (untrained) are not candidates.
fn pick_matched_epochs(
    conv: &TrainReport,
    fc: &TrainReport,
    tol: f64,
) -> Option<(usize, f64, usize, f64)> {
    let mut best: Option<(usize, f64, usize, f64)> = None;
    for cr in &conv.rows {
        let Some(ca) = cr.val_acc else { continue };
        for fr in &fc.rows {
            let Some(fa) = fr.val_acc else { continue };
            if (ca - fa).abs() <= tol {
                let better = match &best {
                    None => true,
                    Some((_, bca, _, bfa)) => ca + fa > bca + bfa,
                };
                if better {
                    best = Some((cr.epoch, ca, fr.epoch, fa));
                }
            }
        }
    }
    best
}

/// Trains conv and fully-connected nets on the same corpus, matches
/// their validation accuracy by epoch selection, and compares closure
/// slopes across replications.
pub fn run_conv_vs_fc(
    plan: &ExperimentPlan,
    scratch: &Path,
    ckpt_dir: Option<&Path>,
    jobs: usize,
) -> Result<ConvVsFcResult> {
    plan.validate()?;
    let arena = render_arena();
    let triples = build_triples(plan.triple_seed)?;
    let (corpus, _, _) = resolve_corpus(&plan.data, scratch)?;
    let conv_config = NetConfig::conv(3, plan.data.classes, Head::Softmax);
    let fc_config = NetConfig::fully_connected(3, plan.data.classes, Head::Softmax);

    struct Rep {
        pair: MatchedPair,
        conv_records: Vec<ClosureRecord>,
        fc_records: Vec<ClosureRecord>,
        reports: Vec<(String, TrainReport)>,
        checkpoints: Vec<PathBuf>,
    }

    let reps = run_replicated(plan.replications, jobs, |r| -> Result<Rep> {
        let seed = plan.base_seed + r as u64;
        let (tr, va) = split_examples(&corpus, 0.75, seed)?;
        let aug = AugmentationConfig::default();

        let train_to = |config: &NetConfig, epochs: usize, lr: f64| -> Result<TrainedModel> {
            let mut net = build_network::<f32>(config, seed)?;
            let mut tc = TrainConfig::new(epochs, lr, seed);
            tc.augmentation = aug;
            let (report, norm) = train(&mut net, &tr, Some(&va), &tc)?;
            Ok(TrainedModel { model_id: String::new(), net, norm, report })
        };

        let conv_full = train_to(&conv_config, plan.epochs, plan.lr)?;
        let fc_full = train_to(&fc_config, plan.epochs * 2, plan.fc_lr)?;
        let picked = pick_matched_epochs(&conv_full.report, &fc_full.report, plan.match_tolerance);
        let (conv_e, conv_acc, fc_e, fc_acc, matched) = match picked {
            Some((ce, ca, fe, fa)) => (ce, ca, fe, fa, true),
            // unmatched: compare the fully trained pair, flagged
            None => {
                let ca = conv_full.report.rows.last().and_then(|r| r.val_acc).unwrap_or(0.0);
                let fa = fc_full.report.rows.last().and_then(|r| r.val_acc).unwrap_or(0.0);
                (conv_full.report.final_epoch, ca, fc_full.report.final_epoch, fa, false)
            }
        };

        // seeded prefix consistency makes retraining to a shorter
        // horizon identical to having stopped there
        let mut conv = if conv_e == conv_full.report.final_epoch {
            conv_full
        } else {
            train_to(&conv_config, conv_e, plan.lr)?
        };
        let mut fc = if fc_e == fc_full.report.final_epoch {
            fc_full
        } else {
            train_to(&fc_config, fc_e, plan.fc_lr)?
        };
        conv.model_id = format!("conv_r{r}");
        fc.model_id = format!("fc_r{r}");

        let conv_records = model_records(&conv, &arena, &triples, "fc_finale")?;
        let fc_records = model_records(&fc, &arena, &triples, "fc_finale")?;
        let conv_slope = slope_bootstrap_ci(&conv_records, plan.bootstrap_b, seed)?.slope;
        let fc_slope = slope_bootstrap_ci(&fc_records, plan.bootstrap_b, seed)?.slope;
        let mut checkpoints = Vec::new();
        checkpoints.extend(keep_checkpoint(plan, ckpt_dir, &conv)?);
        checkpoints.extend(keep_checkpoint(plan, ckpt_dir, &fc)?);
        Ok(Rep {
            pair: MatchedPair {
                replicate: r,
                conv_epochs: conv_e,
                fc_epochs: fc_e,
                conv_val_acc: conv_acc,
                fc_val_acc: fc_acc,
                matched,
                conv_slope,
                fc_slope,
            },
            reports: vec![
                (conv.model_id.clone(), conv.report.clone()),
                (fc.model_id.clone(), fc.report.clone()),
            ],
            conv_records,
            fc_records,
            checkpoints,
        })
    })?;

    let mut records = Vec::new();
    let mut curves = Vec::new();
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    let mut pairs = Vec::new();
    let ci = CiMethod::Bootstrap { b: plan.bootstrap_b, seed: plan.base_seed };
    let mut conv_pool = Vec::new();
    let mut fc_pool = Vec::new();
    for rep in &reps {
        curves.push(closure_curve(&rep.conv_records, ci)?);
        curves.push(closure_curve(&rep.fc_records, ci)?);
        conv_pool.extend(pooled(&rep.conv_records, "conv_pooled"));
        fc_pool.extend(pooled(&rep.fc_records, "fc_pooled"));
        records.extend(rep.conv_records.iter().cloned());
        records.extend(rep.fc_records.iter().cloned());
        reports.extend(rep.reports.iter().cloned());
        checkpoints.extend(rep.checkpoints.iter().cloned());
        pairs.push(rep.pair.clone());
    }
    curves.push(closure_curve(&conv_pool, ci)?);
    curves.push(closure_curve(&fc_pool, ci)?);
    records.extend(conv_pool);
    records.extend(fc_pool);

    let verdict = conv_vs_fc_verdict(&pairs)?;
    Ok(ConvVsFcResult { plan: plan.clone(), records, curves, verdict, reports, checkpoints })
}

/// Verdict over matched pairs: t-interval across replication slopes.
pub fn conv_vs_fc_verdict(pairs: &[MatchedPair]) -> Result<ConvVsFcVerdict> {
    if pairs.len() < 2 {
        return Err(Error::Experiment(format!(
            "conv-vs-fc verdict needs >= 2 replications, got {}",
            pairs.len()
        )));
    }
    let conclusive = pairs.iter().all(|p| p.matched);
    let conv_slopes: Vec<f64> = pairs.iter().map(|p| p.conv_slope).collect();
    let fc_slopes: Vec<f64> = pairs.iter().map(|p| p.fc_slope).collect();
    let (cm, cl, ch) = mean_t_interval95(&conv_slopes)?;
    let (fm, fl, fh) = mean_t_interval95(&fc_slopes)?;
    let conv_excludes_zero = cl > 0.0 || ch < 0.0;
    let fc_includes_zero = fl <= 0.0 && fh >= 0.0;
    Ok(ConvVsFcVerdict {
        pairs: pairs.to_vec(),
        conclusive,
        conv_slope_mean: cm,
        conv_slope_lo: cl,
        conv_slope_hi: ch,
        fc_slope_mean: fm,
        fc_slope_lo: fl,
        fc_slope_hi: fh,
        conv_excludes_zero,
        fc_includes_zero,
        pass: conclusive && cl > 0.0 && fc_includes_zero,
    })
}

// -------------------------------------------------------------- layerwise

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub layer: String,
    pub slope: SlopeCi,
    pub signature_present: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerWiseVerdict {
    pub layers: Vec<LayerVerdict>,
    pub fc_finale_present: bool,
    pub conv2d_1_absent: bool,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct LayerWiseResult {
    pub plan: ExperimentPlan,
    #[serde(skip)]
    pub records: Vec<ClosureRecord>,
    pub curves: Vec<ClosureCurve>,
    pub verdict: LayerWiseVerdict,
    #[serde(skip)]
    pub reports: Vec<(String, TrainReport)>,
    pub checkpoints: Vec<PathBuf>,
}

/// Closure profile across every recordable layer of one natural-trained
/// conv net (or a supplied checkpoint). Layers are embedded
/// sequentially: early conv activations over the full stimulus set run
/// to gigabytes, one layer at a time caps peak memory.
pub fn run_layer_wise(
    plan: &ExperimentPlan,
    scratch: &Path,
    ckpt_dir: Option<&Path>,
) -> Result<LayerWiseResult> {
    plan.validate()?;
    let arena = render_arena();
    let triples = build_triples(plan.triple_seed)?;
    let model = match &plan.checkpoint {
        Some(path) => {
            let loaded = load_checkpoint::<f32>(path)?;
            let channels = loaded.net.config.input_channels;
            let mut report = untrained_report(loaded.net.seed);
            report.final_epoch = loaded.epoch;
            TrainedModel {
                model_id: "layerwise".into(),
                norm: loaded.normalizer.unwrap_or_else(|| Normalizer::identity(channels)),
                net: loaded.net,
                report,
            }
        }
        None => {
            let (corpus, _, _) = resolve_corpus(&plan.data, scratch)?;
            let config = NetConfig::conv(3, plan.data.classes, Head::Softmax);
            let seed = plan.base_seed;
            let (tr, va) = split_examples(&corpus, 0.75, seed)?;
            let mut net = build_network::<f32>(&config, seed)?;
            let mut tc = TrainConfig::new(plan.epochs, plan.lr, seed);
            tc.augmentation = AugmentationConfig::default();
            let (report, norm) = train(&mut net, &tr, Some(&va), &tc)?;
            TrainedModel { model_id: "layerwise".into(), net, norm, report }
        }
    };
    let checkpoints: Vec<PathBuf> = keep_checkpoint(plan, ckpt_dir, &model)?.into_iter().collect();

    let layers: Vec<String> =
        if plan.layers.is_empty() { model.net.layer_names() } else { plan.layers.clone() };
    let mut records = Vec::new();
    let mut curves = Vec::new();
    let mut verdicts = Vec::new();
    for layer in &layers {
        let mut recs = model_records(&model, &arena, &triples, layer)?;
        for r in &mut recs {
            r.model_id = format!("layerwise_{layer}");
        }
        let curve = closure_curve(
            &recs,
            CiMethod::Bootstrap { b: plan.bootstrap_b, seed: plan.base_seed },
        )?;
        let slope = slope_bootstrap_ci(&recs, plan.bootstrap_b, plan.base_seed)?;
        verdicts.push(LayerVerdict {
            layer: layer.clone(),
            slope,
            signature_present: slope.slope > 0.0 && slope.excludes_zero(),
        });
        records.extend(recs);
        curves.push(curve);
    }
    let verdict = layer_wise_verdict(verdicts);
    Ok(LayerWiseResult {
        plan: plan.clone(),
        records,
        curves,
        verdict,
        reports: vec![(model.model_id.clone(), model.report.clone())],
        checkpoints,
    })
}

pub fn layer_wise_verdict(layers: Vec<LayerVerdict>) -> LayerWiseVerdict {
    let find = |name: &str| layers.iter().find(|l| l.layer == name);
    let fc_finale_present = find("fc_finale").map(|l| l.signature_present).unwrap_or(false);
    let conv2d_1_absent = find("conv2d_1").map(|l| !l.signature_present).unwrap_or(false);
    LayerWiseVerdict { pass: fc_finale_present && conv2d_1_absent, layers, fc_finale_present, conv2d_1_absent }
}

/// Recomputes the layer-wise verdict from persisted records alone.
pub fn layer_wise_verdict_from_records(
    records: &[ClosureRecord],
    bootstrap_b: usize,
    bootstrap_seed: u64,
) -> Result<LayerWiseVerdict> {
    let mut by_layer: BTreeMap<String, Vec<ClosureRecord>> = BTreeMap::new();
    for r in records {
        by_layer.entry(r.layer.clone()).or_default().push(r.clone());
    }
    let mut verdicts = Vec::new();
    for (layer, recs) in by_layer {
        let slope = slope_bootstrap_ci(&recs, bootstrap_b, bootstrap_seed)?;
        verdicts.push(LayerVerdict {
            layer,
            slope,
            signature_present: slope.slope > 0.0 && slope.excludes_zero(),
        });
    }
    Ok(layer_wise_verdict(verdicts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_roundtrips_toml_and_json_with_defaults() {
        let plan = ExperimentPlan::new(ExperimentName::SanityCdBd);
        let toml_text = toml::to_string(&plan).unwrap();
        let back: ExperimentPlan = toml::from_str(&toml_text).unwrap();
        assert_eq!(plan, back);
        let minimal: ExperimentPlan = toml::from_str("name = \"conv_vs_fc\"\n").unwrap();
        assert_eq!(minimal.replications, default_reps());
        assert_eq!(minimal.flatness_tau, FLATNESS_TAU);
        let json: ExperimentPlan =
            serde_json::from_str("{\"name\":\"layer_wise\",\"epochs\":3}").unwrap();
        assert_eq!(json.epochs, 3);
        assert!(json.data.synthetic_fallback);
    }

    #[test]
    fn plan_validation_rejects_nonsense() {
        let mut plan = ExperimentPlan::new(ExperimentName::SanityCdBd);
        plan.replications = 0;
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::new(ExperimentName::SanityCdBd);
        plan.flatness_tau = 0.0;
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::new(ExperimentName::SanityCdBd);
        plan.match_tolerance = 1.5;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn replicated_runner_matches_serial_order_and_propagates_errors() {
        let serial = run_replicated(5, 1, |r| Ok::<usize, Error>(r * r)).unwrap();
        let parallel = run_replicated(5, 3, |r| Ok::<usize, Error>(r * r)).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial, vec![0, 1, 4, 9, 16]);
        let failing = run_replicated(4, 2, |r| {
            if r == 2 {
                Err(Error::Experiment("boom".into()))
            } else {
                Ok(r)
            }
        });
        assert!(failing.is_err());
    }

    #[test]
    fn epoch_matching_picks_highest_matched_accuracy() {
        use crate::train::EpochRow;
        let report = |accs: &[f64]| TrainReport {
            rows: accs
                .iter()
                .enumerate()
                .map(|(i, a)| EpochRow {
                    epoch: i + 1,
                    train_loss: 0.0,
                    train_acc: 0.0,
                    val_acc: Some(*a),
                })
                .collect(),
            seed: 0,
            config_hash: String::new(),
            wall_seconds: 0.0,
            early_stopped: false,
            diverged: false,
            final_epoch: accs.len(),
            no_validation: false,
            checkpoints: Vec::new(),
        };
        let conv = report(&[0.5, 0.8, 0.95, 1.0]);
        let fc = report(&[0.4, 0.6, 0.82]);
        let (ce, ca, fe, fa) = pick_matched_epochs(&conv, &fc, 0.03).unwrap();
        assert_eq!((ce, fe), (2, 3));
        assert!((ca - 0.8).abs() < 1e-12 && (fa - 0.82).abs() < 1e-12);
        assert!(pick_matched_epochs(&report(&[1.0]), &report(&[0.5]), 0.03).is_none());
    }

    #[test]
    fn conv_vs_fc_verdict_interval_logic() {
        let pair = |cs: f64, fs: f64, matched: bool| MatchedPair {
            replicate: 0,
            conv_epochs: 1,
            fc_epochs: 1,
            conv_val_acc: 0.9,
            fc_val_acc: 0.9,
            matched,
            conv_slope: cs,
            fc_slope: fs,
        };
        let v = conv_vs_fc_verdict(&[
            pair(0.010, 0.001, true),
            pair(0.012, -0.001, true),
            pair(0.011, 0.000, true),
            pair(0.013, 0.002, true),
        ])
        .unwrap();
        assert!(v.conv_excludes_zero && v.fc_includes_zero && v.conclusive && v.pass);
        let v = conv_vs_fc_verdict(&[pair(0.01, 0.0, true), pair(0.012, 0.001, false)]).unwrap();
        assert!(!v.conclusive && !v.pass);
    }
}
