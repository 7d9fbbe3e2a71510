//! Human-readable and CSV renderings of reports. Metrics are fractions
//! internally; rendering multiplies by 100 and prints two decimals.

use conflictkit::datamodel::{ConflictReport, OptionKey};
use conflictkit::dcd::DcdReport;
use conflictkit::mitigate::StrategyReport;

use crate::CliError;

fn pct(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

fn signed_pct(fraction: f64) -> String {
    format!("{:+.2}", fraction * 100.0)
}

/// Detection summary. The textual row carries the full metric suite.
pub fn detect_text(report: &ConflictReport) -> String {
    let mut out = String::new();
    out.push_str("== conflict detection ==\n");
    out.push_str(&format!(
        "items: {} evaluated, {} recognized, {} skipped\n",
        report.n_total, report.n_recognized, report.n_skipped
    ));
    out.push_str(&format!(
        "textual Acc / R.Acc / FR / CR: {} / {} / {} / {}\n",
        pct(report.acc_textual),
        pct(report.racc_textual),
        pct(report.flip_rate),
        pct(report.conflict_rate_lb),
    ));
    out.push_str(&format!(
        "visual  Acc / R.Acc: {} / {}\n",
        pct(report.acc_visual),
        pct(report.racc_visual),
    ));
    out.push_str(&format!("delta Acc (recognized): {}\n", pct(report.delta_acc)));
    out
}

pub fn dcd_text(report: &DcdReport, baseline: Option<&ConflictReport>) -> String {
    let mut out = String::new();
    out.push_str("== dynamic contrastive decoding ==\n");
    out.push_str(&format!(
        "items: {} evaluated, {} recognized, {} skipped\n",
        report.n_total, report.n_recognized, report.n_skipped
    ));
    out.push_str(&format!(
        "DCD Acc / R.Acc: {} / {}\n",
        pct(report.acc),
        pct(report.racc)
    ));
    if let Some(baseline) = baseline {
        out.push_str(&format!(
            "delta vs textual: {} / {}\n",
            signed_pct(report.acc - baseline.acc_textual),
            signed_pct(report.racc - baseline.racc_textual),
        ));
        out.push_str(&format!(
            "delta vs visual:  {} / {}\n",
            signed_pct(report.acc - baseline.acc_visual),
            signed_pct(report.racc - baseline.racc_visual),
        ));
    }
    out
}

pub fn strategy_text(report: &StrategyReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("== mitigation: {} ==\n", report.strategy));
    out.push_str(&format!(
        "items: {} evaluated, {} recognized, {} skipped\n",
        report.n_total, report.n_recognized, report.n_skipped
    ));
    out.push_str(&format!(
        "strategy Acc / R.Acc: {} / {}\n",
        pct(report.acc),
        pct(report.racc)
    ));
    out.push_str(&format!(
        "delta vs visual baseline: {} / {}\n",
        signed_pct(report.delta_acc),
        signed_pct(report.delta_racc),
    ));
    out
}

/// Combined summary table as text.
pub fn summary_text(
    detect: &ConflictReport,
    dcd: Option<&DcdReport>,
    strategies: &[StrategyReport],
) -> String {
    let mut out = detect_text(detect);
    if let Some(dcd) = dcd {
        out.push('\n');
        out.push_str(&dcd_text(dcd, Some(detect)));
    }
    for strategy in strategies {
        out.push('\n');
        out.push_str(&strategy_text(strategy));
    }
    out
}

/// Combined summary as CSV: one row per method with empty cells where a
/// metric does not apply.
pub fn summary_csv(
    detect: &ConflictReport,
    dcd: Option<&DcdReport>,
    strategies: &[StrategyReport],
) -> Result<String, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "method", "acc", "racc", "fr", "cr", "delta_acc_vs_visual", "delta_racc_vs_visual",
        ])
        .map_err(csv_err)?;
    writer
        .write_record([
            "textual_answer",
            &pct(detect.acc_textual),
            &pct(detect.racc_textual),
            &pct(detect.flip_rate),
            &pct(detect.conflict_rate_lb),
            "",
            "",
        ])
        .map_err(csv_err)?;
    writer
        .write_record([
            "visual_answer",
            &pct(detect.acc_visual),
            &pct(detect.racc_visual),
            "",
            "",
            "",
            "",
        ])
        .map_err(csv_err)?;
    if let Some(dcd) = dcd {
        writer
            .write_record([
                "dcd",
                &pct(dcd.acc),
                &pct(dcd.racc),
                "",
                "",
                &signed_pct(dcd.acc - detect.acc_visual),
                &signed_pct(dcd.racc - detect.racc_visual),
            ])
            .map_err(csv_err)?;
    }
    for strategy in strategies {
        writer
            .write_record([
                &strategy.strategy.to_string(),
                &pct(strategy.acc),
                &pct(strategy.racc),
                "",
                "",
                &signed_pct(strategy.delta_acc),
                &signed_pct(strategy.delta_racc),
            ])
            .map_err(csv_err)?;
    }
    finish(writer)
}

/// Flat per-sample CSV companion to the detection report.
pub fn records_csv(report: &ConflictReport) -> Result<String, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "item_id".to_string(),
        "gold".to_string(),
        "recognized".to_string(),
        "predicted_entity".to_string(),
        "textual_answer".to_string(),
        "visual_answer".to_string(),
        "textual_correct".to_string(),
        "visual_correct".to_string(),
        "flipped".to_string(),
    ];
    for key in OptionKey::ALL {
        header.push(format!("textual_logp_{key}"));
    }
    for key in OptionKey::ALL {
        header.push(format!("visual_logp_{key}"));
    }
    writer.write_record(&header).map_err(csv_err)?;

    for record in &report.records {
        let mut row = vec![
            record.item_id.clone(),
            record.gold.to_string(),
            record.recognized.to_string(),
            record.predicted_entity.clone(),
            record.textual_answer.to_string(),
            record.visual_answer.to_string(),
            record.textual_correct.to_string(),
            record.visual_correct.to_string(),
            record.flipped.to_string(),
        ];
        for key in OptionKey::ALL {
            row.push(format!("{}", record.textual_dist.logp(key)));
        }
        for key in OptionKey::ALL {
            row.push(format!("{}", record.visual_dist.logp(key)));
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    finish(writer)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::pipeline(format!("writing csv: {e}"))
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::pipeline(format!("finalizing csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::pipeline(format!("csv not utf-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A report shaped like published detection figures renders with the
    /// expected two-decimal row.
    #[test]
    fn detect_row_formats_percentages() {
        let report = ConflictReport {
            n_total: 3010,
            n_recognized: 2500,
            n_skipped: 0,
            acc_textual: 0.7565,
            acc_visual: 0.5326,
            racc_textual: 0.7843,
            racc_visual: 0.5811,
            flip_rate: 0.4168,
            delta_acc: 0.2032,
            conflict_rate_lb: 0.2136,
            records: Vec::new(),
            skipped: Vec::new(),
        };
        let text = detect_text(&report);
        assert!(text.contains("75.65 / 78.43 / 41.68 / 21.36"), "got:\n{text}");
        assert!(text.contains("53.26 / 58.11"));

        let csv = summary_csv(&report, None, &[]).unwrap();
        assert!(csv.contains("textual_answer,75.65,78.43,41.68,21.36"));
    }
}
