use std::fmt::Write as _;
use std::path::Path;

use super::{evaluate, fit_samples};
use crate::config::RunConfig;
use crate::data::Sample;
use crate::metrics::MetricReport;
use crate::network::Variant;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricReport,
    pub final_loss: Option<f64>,
}

/// Trains every variant with the same seed and data and evaluates each on `test`.
/// Variants run one after another; with `root`, each gets its own run directory.
pub fn ablate(cfg: &RunConfig, train: &[Sample], test: &[Sample], root: Option<&Path>) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(4);
    for variant in Variant::ALL {
        let run = RunConfig {
            variant: Some(variant),
            ..cfg.clone()
        };
        log::info!("training variant {variant}");
        let dir = root.map(|r| r.join(variant.as_str()));
        let out = fit_samples(&run, train, None, dir.as_deref())?;
        let report = evaluate(&out.state.net, test, run.eval.per_image, &out.config_hash)?.report;
        rows.push(AblationRow {
            variant,
            report,
            final_loss: out.history.last().map(|r| r.total),
        });
    }
    Ok(rows)
}

fn label(v: Variant) -> &'static str {
    match v {
        Variant::Base => "base",
        Variant::Egm => "+EGM",
        Variant::Wam => "+WAM",
        Variant::Full => "+EGM +WAM",
    }
}

/// Comparison table with one row per variant.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let classes = rows.first().map_or(0, |r| r.report.per_class.len());
    let mut out = String::from("| variant | mIoU | Acc |");
    for c in 1..classes {
        let _ = write!(out, " Dice c{c} |");
    }
    out.push_str(" edge Dice |\n|---|---|---|");
    for _ in 1..classes {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    for r in rows {
        let _ = write!(out, "| {} | {:.4} | {:.4} |", label(r.variant), r.report.miou, r.report.accuracy);
        for m in &r.report.per_class[1..] {
            let _ = write!(out, " {:.4} |", m.dice);
        }
        match r.report.edge_dice {
            Some(d) => {
                let _ = writeln!(out, " {d:.4} |");
            }
            None => out.push_str(" - |\n"),
        }
    }
    out
}
