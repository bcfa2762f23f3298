//! One function per subcommand. Every command claims its output
//! directory, writes its artifacts, then records them in a manifest;
//! a missing artifact fails the run before the manifest is written.

use crate::manifest::{claim_out_dir, ManifestBuilder};
use crate::plots::plot_curves;
use crate::train_doc::TrainDoc;
use anyhow::{bail, Context, Result};
use gcl_core::closure::{closure_curve, write_curves, write_records, CiMethod, ClosureRecord};
use gcl_core::experiments::{
    records_for, run_ablations, run_conv_vs_fc, run_layer_wise, run_sanity, AblationKind,
    ExperimentName, ExperimentPlan,
};
use gcl_core::nn::checkpoint::load_checkpoint;
use gcl_core::stimulus::{
    build_triples, enumerate_specs, export_stimuli, read_triples_csv, write_triples_csv,
    ExportFormat,
};
use gcl_core::train::{write_train_report, TrainReport};
use gcl_core::{build_network, ClosureCurve, Normalizer};
use std::path::{Path, PathBuf};

pub fn gen_stimuli(out: &Path, format: ExportFormat, seed: u64, force: bool) -> Result<()> {
    claim_out_dir(out, force)?;
    let images = out.join("images");
    export_stimuli(&images, format)?;
    let triples = build_triples(seed)?;
    write_triples_csv(&out.join("triples.csv"), &triples)?;

    let mut m = ManifestBuilder::new("gen-stimuli")
        .seed("triples", seed)
        .config(&serde_json::json!({ "format": format.ext() }))?;
    m.output("images/manifest.csv");
    m.output("triples.csv");
    let specs = enumerate_specs();
    for (i, spec) in specs.iter().enumerate() {
        m.output(format!("images/{}", spec.filename(i, format.ext())));
    }
    m.write(out)?;
    println!(
        "gen-stimuli: {} images ({}), {} triples -> {}",
        specs.len(),
        format.ext(),
        triples.len(),
        out.display()
    );
    Ok(())
}

pub fn train(config: &Path, out: &Path, seed: Option<u64>, force: bool) -> Result<()> {
    claim_out_dir(out, force)?;
    let doc = TrainDoc::from_file(config)?;
    let seed = seed.unwrap_or(doc.seed);
    let (train_ds, val_ds) = doc.resolve_data(&out.join(".scratch"))?;

    let mut net = build_network::<f32>(&doc.net, seed)?;
    let mut tc = doc.train_config(seed);
    if !tc.checkpoint_epochs.is_empty() {
        tc.checkpoint_dir = Some(out.join("checkpoints"));
    }
    let (report, norm) = gcl_core::train::train(&mut net, &train_ds, val_ds.as_ref(), &tc)?;

    let ckpt = out.join("net.ckpt");
    gcl_core::nn::checkpoint::save_checkpoint(&ckpt, &net, report.final_epoch, None, Some(&norm))?;
    write_train_report(&out.join("train_report.csv"), &report)?;

    let mut m = ManifestBuilder::new("train").seed("train", seed).config(&doc)?.input(config)?;
    m.output("net.ckpt");
    m.output("train_report.csv");
    for (_, path) in &report.checkpoints {
        m.output(rel_to(path, out)?);
    }
    m.write(out)?;

    let last = report.rows.last();
    println!(
        "train: {} epochs in {:.1}s, train acc {:.3}, val acc {} -> {}",
        report.final_epoch,
        report.wall_seconds,
        last.map(|r| r.train_acc).unwrap_or(0.0),
        last.and_then(|r| r.val_acc).map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into()),
        out.display()
    );
    Ok(())
}

pub fn closure(
    checkpoint: &Path,
    triples_csv: Option<&Path>,
    layers: &[String],
    out: &Path,
    seed: u64,
    bootstrap_b: usize,
    force: bool,
) -> Result<()> {
    claim_out_dir(out, force)?;
    let loaded = load_checkpoint::<f32>(checkpoint)?;
    let valid = loaded.net.layer_names();
    let layers: Vec<String> = if layers.is_empty() { valid.clone() } else { layers.to_vec() };
    for l in &layers {
        if !valid.contains(l) {
            return Err(gcl_core::Error::UnknownLayer { name: l.clone(), valid }.into());
        }
    }
    let triples = match triples_csv {
        Some(p) => read_triples_csv(p)?,
        None => build_triples(seed)?,
    };
    let norm = loaded
        .normalizer
        .unwrap_or_else(|| Normalizer::identity(loaded.net.config.input_channels));
    let model_id = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();

    let arena = gcl_core::experiments::render_arena();
    let mut records: Vec<ClosureRecord> = Vec::new();
    let mut curves: Vec<ClosureCurve> = Vec::new();
    // one layer at a time: early-layer embeddings over the full
    // stimulus set dominate peak memory
    for layer in &layers {
        let recs = records_for(&loaded.net, &norm, &model_id, &arena, &triples, layer)?;
        curves.push(closure_curve(&recs, CiMethod::Bootstrap { b: bootstrap_b, seed })?);
        records.extend(recs);
    }
    write_records(&out.join("records.csv"), &records)?;
    write_curves(&out.join("curves.csv"), &curves)?;

    let mut m = ManifestBuilder::new("closure")
        .seed("bootstrap", seed)
        .config(&serde_json::json!({
            "checkpoint": checkpoint.display().to_string(),
            "layers": layers,
            "bootstrap_b": bootstrap_b,
        }))?
        .input(checkpoint)?;
    if let Some(p) = triples_csv {
        m = m.input(p)?;
    }
    m.output("records.csv");
    m.output("curves.csv");
    m.write(out)?;

    println!(
        "closure: {} layers x {} triples -> {}",
        layers.len(),
        triples.len(),
        out.display()
    );
    Ok(())
}

struct ExperimentArtifacts {
    records: Vec<ClosureRecord>,
    curves: Vec<ClosureCurve>,
    verdict: serde_json::Value,
    stats: serde_json::Value,
    reports: Vec<(String, TrainReport)>,
    checkpoints: Vec<PathBuf>,
    pass: bool,
    summary: String,
}

pub fn experiment(
    plan_path: &Path,
    out: &Path,
    jobs: usize,
    seed: Option<u64>,
    force: bool,
) -> Result<()> {
    claim_out_dir(out, force)?;
    let mut plan = ExperimentPlan::from_file(plan_path)?;
    if let Some(s) = seed {
        plan.base_seed = s;
    }
    let scratch = out.join(".scratch");
    let ckpt_dir = out.join("checkpoints");
    let art = run_experiment(&plan, &scratch, &ckpt_dir, jobs)?;

    write_records(&out.join("records.csv"), &art.records)?;
    write_curves(&out.join("curves.csv"), &art.curves)?;
    write_json(&out.join("verdict.json"), &art.verdict)?;
    write_json(&out.join("stats.json"), &art.stats)?;
    let reports_dir = out.join("reports");
    std::fs::create_dir_all(&reports_dir)
        .with_context(|| format!("creating {}", reports_dir.display()))?;
    for (model_id, report) in &art.reports {
        write_train_report(&reports_dir.join(format!("{model_id}.csv")), report)?;
    }

    let mut m = ManifestBuilder::new("experiment")
        .seed("base", plan.base_seed)
        .seed("triples", plan.triple_seed)
        .config(&plan)?
        .input(plan_path)?;
    for rel in ["records.csv", "curves.csv", "verdict.json", "stats.json"] {
        m.output(rel);
    }
    for (model_id, _) in &art.reports {
        m.output(format!("reports/{model_id}.csv"));
    }
    for path in &art.checkpoints {
        m.output(rel_to(path, out)?);
    }
    m.write(out)?;

    println!(
        "experiment {}: {} ({}) -> {}",
        plan.name.as_str(),
        if art.pass { "PASS" } else { "FAIL" },
        art.summary,
        out.display()
    );
    Ok(())
}

fn run_experiment(
    plan: &ExperimentPlan,
    scratch: &Path,
    ckpt_dir: &Path,
    jobs: usize,
) -> Result<ExperimentArtifacts> {
    let ckpt_dir = Some(ckpt_dir);
    let ablation = |kinds: &[AblationKind]| -> Result<ExperimentArtifacts> {
        let r = run_ablations(plan, kinds, scratch, ckpt_dir, jobs)?;
        Ok(ExperimentArtifacts {
            stats: serde_json::to_value(&r)?,
            verdict: serde_json::to_value(&r.verdict)?,
            pass: r.verdict.pass,
            summary: format!(
                "natural slope [{:.4}, {:.4}], {} condition(s)",
                r.verdict.natural_slope.lo,
                r.verdict.natural_slope.hi,
                r.verdict.conditions.len()
            ),
            records: r.records,
            curves: r.curves,
            reports: r.reports,
            checkpoints: r.checkpoints,
        })
    };
    match plan.name {
        ExperimentName::SanityCdBd => {
            let r = run_sanity(plan, ckpt_dir, jobs)?;
            Ok(ExperimentArtifacts {
                stats: serde_json::to_value(&r)?,
                verdict: serde_json::to_value(&r.verdict)?,
                pass: r.verdict.pass,
                summary: format!(
                    "cd_delta {:.3}, bd_max {:.3}",
                    r.verdict.cd_delta, r.verdict.bd_max_abs_mean
                ),
                records: r.records,
                curves: r.curves,
                reports: r.reports,
                checkpoints: r.checkpoints,
            })
        }
        ExperimentName::WhiteNoise => ablation(&[AblationKind::WhiteNoise]),
        ExperimentName::ShuffledPixels => ablation(&[AblationKind::ShuffledPixels]),
        ExperimentName::Untrained => ablation(&[AblationKind::Untrained]),
        ExperimentName::ShuffledLabels => ablation(&[AblationKind::ShuffledLabels]),
        ExperimentName::Ablations => ablation(&[
            AblationKind::WhiteNoise,
            AblationKind::ShuffledPixels,
            AblationKind::Untrained,
            AblationKind::ShuffledLabels,
        ]),
        ExperimentName::ConvVsFc => {
            let r = run_conv_vs_fc(plan, scratch, ckpt_dir, jobs)?;
            Ok(ExperimentArtifacts {
                stats: serde_json::to_value(&r)?,
                verdict: serde_json::to_value(&r.verdict)?,
                pass: r.verdict.pass,
                summary: format!(
                    "conv [{:.4}, {:.4}], fc [{:.4}, {:.4}]",
                    r.verdict.conv_slope_lo,
                    r.verdict.conv_slope_hi,
                    r.verdict.fc_slope_lo,
                    r.verdict.fc_slope_hi
                ),
                records: r.records,
                curves: r.curves,
                reports: r.reports,
                checkpoints: r.checkpoints,
            })
        }
        ExperimentName::LayerWise => {
            let r = run_layer_wise(plan, scratch, ckpt_dir)?;
            Ok(ExperimentArtifacts {
                stats: serde_json::to_value(&r)?,
                verdict: serde_json::to_value(&r.verdict)?,
                pass: r.verdict.pass,
                summary: format!(
                    "fc_finale present: {}, conv2d_1 absent: {}",
                    r.verdict.fc_finale_present, r.verdict.conv2d_1_absent
                ),
                records: r.records,
                curves: r.curves,
                reports: r.reports,
                checkpoints: r.checkpoints,
            })
        }
    }
}

pub fn report(curves_csvs: &[PathBuf], out: &Path, title: Option<&str>, force: bool) -> Result<()> {
    if curves_csvs.is_empty() {
        bail!("no curves CSVs given");
    }
    claim_out_dir(out, force)?;
    let mut m = ManifestBuilder::new("report")
        .config(&serde_json::json!({ "title": title, "inputs": curves_csvs.len() }))?;
    let mut names: Vec<String> = Vec::new();
    for csv in curves_csvs {
        let stem = csv
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("no usable file name in {}", csv.display()))?
            .to_string();
        if names.contains(&stem) {
            bail!("two inputs would both write {stem}.svg; rename one");
        }
        let curves = gcl_core::closure::read_curves(csv)?;
        let svg = plot_curves(&curves, title.unwrap_or(&stem))?;
        let rel = format!("{stem}.svg");
        std::fs::write(out.join(&rel), svg.as_bytes())
            .with_context(|| format!("writing {}", out.join(&rel).display()))?;
        m = m.input(csv)?;
        m.output(rel);
        names.push(stem);
    }
    m.write(out)?;
    println!("report: {} plot(s) -> {}", names.len(), out.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("encoding JSON")?;
    std::fs::write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn rel_to(path: &Path, base: &Path) -> Result<String> {
    Ok(path
        .strip_prefix(base)
        .with_context(|| format!("{} is outside {}", path.display(), base.display()))?
        .to_string_lossy()
        .into_owned())
}
