//! Exploratory timing and signal calibration for the experiment
//! defaults where phase is one of: sanity, ablations, fc, layers.
//! Run with: cargo run --release --example calibrate -- <phase> [jobs]

use gcl_core::experiments::{
    run_ablations, run_conv_vs_fc, run_layer_wise, run_sanity, AblationKind, ExperimentName,
    ExperimentPlan,
};
use gcl_core::ClosureCurve;
use std::path::PathBuf;
use std::time::Instant;

fn print_curves(curves: &[ClosureCurve]) {
    for c in curves {
        let means: Vec<f64> =
            c.points.iter().map(|p| (p.mean_c * 1000.0).round() / 1000.0).collect();
        eprintln!("  {}/{}: {:?}", c.model_id, c.layer, means);
    }
}

fn scratch() -> PathBuf {
    let dir = std::env::temp_dir().join("gcl_calibrate");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn main() {
    let phase = std::env::args().nth(1).unwrap_or_else(|| "sanity".into());
    let jobs: usize = std::env::args().nth(2).and_then(|j| j.parse().ok()).unwrap_or(1);
    let t = Instant::now();
    match phase.as_str() {
        "sanity" => {
            let plan = ExperimentPlan::new(ExperimentName::SanityCdBd);
            let res = run_sanity(&plan, None, jobs).unwrap();
            print_curves(&res.curves);
            for (id, rep) in &res.reports {
                eprintln!(
                    "  {id}: {} epochs, {:.1}s, last val {:?}",
                    rep.final_epoch,
                    rep.wall_seconds,
                    rep.rows.last().and_then(|r| r.val_acc)
                );
            }
            eprintln!("verdict: {}", serde_json::to_string_pretty(&res.verdict).unwrap());
        }
        "ablations" => {
            let plan = ExperimentPlan::new(ExperimentName::Ablations);
            let kinds = [
                AblationKind::WhiteNoise,
                AblationKind::ShuffledPixels,
                AblationKind::Untrained,
                AblationKind::ShuffledLabels,
            ];
            let res = run_ablations(&plan, &kinds, &scratch(), None, jobs).unwrap();
            print_curves(&res.curves);
            for (id, rep) in &res.reports {
                eprintln!(
                    "  {id}: {} epochs, {:.1}s, last val {:?}",
                    rep.final_epoch,
                    rep.wall_seconds,
                    rep.rows.last().and_then(|r| r.val_acc)
                );
            }
            eprintln!("verdict: {}", serde_json::to_string_pretty(&res.verdict).unwrap());
        }
        "fc" => {
            let plan = ExperimentPlan::new(ExperimentName::ConvVsFc);
            let res = run_conv_vs_fc(&plan, &scratch(), None, jobs).unwrap();
            print_curves(&res.curves);
            for (id, rep) in &res.reports {
                eprintln!(
                    "  {id}: {} epochs, {:.1}s, last val {:?}",
                    rep.final_epoch,
                    rep.wall_seconds,
                    rep.rows.last().and_then(|r| r.val_acc)
                );
            }
            eprintln!("verdict: {}", serde_json::to_string_pretty(&res.verdict).unwrap());
        }
        "layers" => {
            let plan = ExperimentPlan::new(ExperimentName::LayerWise);
            let res = run_layer_wise(&plan, &scratch(), None).unwrap();
            print_curves(&res.curves);
            eprintln!("verdict: {}", serde_json::to_string_pretty(&res.verdict).unwrap());
        }
        other => eprintln!("unknown phase {other}"),
    }
    eprintln!("{phase}: total {:.1?}", t.elapsed());
}
