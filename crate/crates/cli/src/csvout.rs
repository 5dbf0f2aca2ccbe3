//! CSV export with fixed-precision numeric formatting.

use nomafl_core::sim::{ComparisonRow, RoundLog};

/// Header shared by per-run and comparison CSVs.
pub const CSV_HEADER: &str = "round,scheme,selected_count,accuracy,global_loss,avg_aou,\
round_time_s,cumulative_time_s,predictions_used";

/// Serialize a float with 12 significant digits (scientific notation),
/// so re-parsing reproduces the value to that precision.
pub fn format_sig(x: f64) -> String {
    format!("{x:.11e}")
}

fn row(scheme: &str, log: &RoundLog) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        log.round,
        scheme,
        log.selected.len(),
        format_sig(log.accuracy),
        format_sig(log.global_loss),
        format_sig(log.avg_aou),
        format_sig(log.round_time_s),
        format_sig(log.cumulative_time_s),
        log.predictions_used,
    )
}

/// One experiment's per-round table.
pub fn rounds_csv(scheme: &str, logs: &[RoundLog]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for log in logs {
        out.push_str(&row(scheme, log));
        out.push('\n');
    }
    out
}

/// Merged long-format table from a scheme comparison, keyed by
/// (scheme, round) in deterministic scheme-major order.
pub fn compare_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.round,
            r.scheme,
            r.selected_count,
            format_sig(r.accuracy),
            format_sig(r.global_loss),
            format_sig(r.avg_aou),
            format_sig(r.round_time_s),
            format_sig(r.cumulative_time_s),
            r.predictions_used,
        ));
    }
    out
}
