//! Report assembly and serialization: machine-readable JSON plus
//! aligned plain-text tables, with curve/ROC data as comma-separated
//! files. Every file embeds the run's config hash (JSON field or a
//! leading `#` comment line).

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::eval::{
    mean, std_dev, CohortStats, GridReport, MedianSplitReport, RetentionSweepReport,
    ScoredInstance,
};

/// Per-variant ensemble AUC summary (the model-comparison table).
#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub per_member_auc: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
}

impl VariantSummary {
    pub fn new(variant: &str, per_member_auc: Vec<f64>) -> Self {
        VariantSummary {
            variant: variant.to_string(),
            mean_auc: mean(&per_member_auc),
            std_auc: std_dev(&per_member_auc),
            per_member_auc,
        }
    }
}

/// One member's median-uncertainty split.
#[derive(Debug, Clone, Serialize)]
pub struct MemberSplit {
    pub member: usize,
    pub low: CohortStats,
    pub high: CohortStats,
}

/// Ensemble aggregate of the median-split analysis.
#[derive(Debug, Clone, Serialize)]
pub struct MedianSplitSummary {
    pub per_member: Vec<MemberSplit>,
    pub mean_low_auc: f64,
    pub std_low_auc: f64,
    pub mean_high_auc: f64,
    pub std_high_auc: f64,
    pub mean_low_positives: f64,
    pub mean_high_positives: f64,
}

impl MedianSplitSummary {
    pub fn from_members(splits: Vec<(usize, MedianSplitReport)>) -> Self {
        let low_aucs: Vec<f64> = splits.iter().map(|(_, s)| s.low.auc).collect();
        let high_aucs: Vec<f64> = splits.iter().map(|(_, s)| s.high.auc).collect();
        let low_pos: Vec<f64> = splits.iter().map(|(_, s)| s.low.positives as f64).collect();
        let high_pos: Vec<f64> = splits.iter().map(|(_, s)| s.high.positives as f64).collect();
        MedianSplitSummary {
            mean_low_auc: mean(&low_aucs),
            std_low_auc: std_dev(&low_aucs),
            mean_high_auc: mean(&high_aucs),
            std_high_auc: std_dev(&high_aucs),
            mean_low_positives: mean(&low_pos),
            mean_high_positives: mean(&high_pos),
            per_member: splits
                .into_iter()
                .map(|(member, s)| MemberSplit {
                    member,
                    low: s.low,
                    high: s.high,
                })
                .collect(),
        }
    }
}

/// The eval command's full report.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub test_size: usize,
    pub test_positives: usize,
    pub variants: Vec<VariantSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_split: Option<MedianSplitSummary>,
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let _ = writeln!(
            out,
            "test set: {} instances, {} positive",
            self.test_size, self.test_positives
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "model comparison (test AUC, mean ± std over members)");
        let _ = writeln!(out, "{:<12} {:>18} per-member", "variant", "auc");
        for v in &self.variants {
            let members = v
                .per_member_auc
                .iter()
                .map(|a| format!("{a:.4}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                out,
                "{:<12} {:>8.4} ± {:<7.4} {}",
                v.variant, v.mean_auc, v.std_auc, members
            );
        }
        if let Some(split) = &self.median_split {
            let _ = writeln!(out);
            let _ = writeln!(out, "median-uncertainty split (bayesian members)");
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>10} {:>8} {:>10}",
                "member", "low auc", "low pos", "high auc", "high pos"
            );
            for m in &split.per_member {
                let _ = writeln!(
                    out,
                    "{:<10} {:>8.4} {:>10} {:>8.4} {:>10}",
                    m.member, m.low.auc, m.low.positives, m.high.auc, m.high.positives
                );
            }
            let _ = writeln!(
                out,
                "{:<10} {:>8.4} {:>10.1} {:>8.4} {:>10.1}   (mean; auc std {:.4}/{:.4})",
                "aggregate",
                split.mean_low_auc,
                split.mean_low_positives,
                split.mean_high_auc,
                split.mean_high_positives,
                split.std_low_auc,
                split.std_high_auc
            );
        }
        out
    }
}

/// Sweep rendering.
pub fn render_sweep_text(report: &RetentionSweepReport, config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash}");
    let _ = writeln!(out, "retention sweep (aggregates are means over members)");
    let _ = writeln!(
        out,
        "{:>9} {:>18} {:>12} per-member auc",
        "retention", "median variance", "auc"
    );
    for row in &report.rows {
        let members = row
            .per_model_auc
            .iter()
            .map(|a| format!("{a:.4}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            out,
            "{:>9.2} {:>18.6} {:>12.4} {}",
            row.retention, row.aggregate_median_variance, row.aggregate_auc, members
        );
    }
    out
}

pub fn render_sweep_csv(report: &RetentionSweepReport, config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash}");
    let _ = writeln!(out, "retention,member,median_variance,auc");
    for row in &report.rows {
        for (m, (var, auc)) in row
            .per_model_median_variance
            .iter()
            .zip(&row.per_model_auc)
            .enumerate()
        {
            let _ = writeln!(out, "{},{},{},{}", row.retention, m, var, auc);
        }
        let _ = writeln!(
            out,
            "{},aggregate,{},{}",
            row.retention, row.aggregate_median_variance, row.aggregate_auc
        );
    }
    out
}

/// Grid rendering: 16 data rows.
pub fn render_grid_text(report: &GridReport, config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash}");
    let _ = writeln!(
        out,
        "uncertainty×probability grid: AUC change when one cell gets full data \
         (baseline retention {:.2}; mean ± std over members)",
        report.baseline_retention
    );
    let _ = writeln!(
        out,
        "{:>20} {:>20} {:>12} {:>10} {:>10}",
        "uncertainty quartile", "probability quartile", "delta", "std", "cell size"
    );
    for cell in &report.cells {
        let _ = writeln!(
            out,
            "{:>20} {:>20} {:>12.4} {:>10.4} {:>10.1}",
            quartile_label(cell.uncertainty_quartile),
            quartile_label(cell.probability_quartile),
            cell.mean_delta,
            cell.std_delta,
            cell.mean_cell_size
        );
    }
    out
}

pub fn render_grid_csv(report: &GridReport, config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash}");
    let _ = writeln!(
        out,
        "uncertainty_quartile,probability_quartile,mean_delta,std_delta,mean_cell_size"
    );
    for cell in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            cell.uncertainty_quartile,
            cell.probability_quartile,
            cell.mean_delta,
            cell.std_delta,
            cell.mean_cell_size
        );
    }
    out
}

fn quartile_label(q: usize) -> &'static str {
    match q {
        1 => "0%-25%",
        2 => "25%-50%",
        3 => "50%-75%",
        _ => "75%-100%",
    }
}

/// ROC points as CSV.
pub fn render_roc_csv(points: &[(f64, f64)], config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash}");
    let _ = writeln!(out, "false_positive_rate,true_positive_rate");
    for (fpr, tpr) in points {
        let _ = writeln!(out, "{fpr},{tpr}");
    }
    out
}

/// Scored instances as CSV (one row per test instance).
pub fn render_scores_csv(instances: &[ScoredInstance], config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash}");
    let _ = writeln!(out, "instance_id,label,probability,aleatoric_variance");
    for s in instances {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.instance_id,
            u8::from(s.label),
            s.probability,
            s.aleatoric_variance
        );
    }
    out
}

/// Writes pretty JSON.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// One training-log line per epoch, as JSON lines.
pub fn write_train_log(
    path: &Path,
    log: &[crate::train::EpochRecord],
    config_hash: &str,
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in log {
        let mut line = serde_json::to_value(record).expect("record serializes");
        line["config_hash"] = serde_json::Value::String(config_hash.to_string());
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_report_text_has_hash_and_rows() {
        let report = EvalReport {
            config_hash: "abc123".into(),
            test_size: 100,
            test_positives: 13,
            variants: vec![
                VariantSummary::new("benchmark", vec![0.84, 0.85]),
                VariantSummary::new("bayesian", vec![0.85, 0.86]),
            ],
            median_split: None,
        };
        let text = report.render_text();
        assert!(text.contains("# config_hash=abc123"));
        assert!(text.contains("benchmark"));
        assert!(text.contains("bayesian"));
    }

    #[test]
    fn single_member_summary_has_zero_std() {
        let summary = VariantSummary::new("bayesian", vec![0.87]);
        assert_eq!(summary.std_auc, 0.0);
        assert_eq!(summary.mean_auc, 0.87);
    }

    #[test]
    fn mean_std_match_direct_recomputation_in_summary() {
        let aucs = vec![0.81, 0.83, 0.79];
        let summary = VariantSummary::new("x", aucs.clone());
        let m = aucs.iter().sum::<f64>() / 3.0;
        let s = (aucs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 3.0).sqrt();
        assert!((summary.mean_auc - m).abs() < 1e-12);
        assert!((summary.std_auc - s).abs() < 1e-12);
    }
}
