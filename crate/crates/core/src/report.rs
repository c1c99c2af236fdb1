//! Plot-ready tables and report files for a finished envelope build.
//!
//! The report JSON keeps full floating-point precision so the verdict stays
//! re-checkable from the file alone. The flat tables are the presentation
//! layer: floats print with 6 significant digits and percentage-point
//! differences keep their stored 3-decimal rounding. Headers are stable so
//! downstream tooling can consume runs without parsing the full report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::envelope::{ApeReport, TestDescriptor};
use crate::error::{Error, Result};
use crate::outer::OuterTrace;

/// Output encoding for a table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    /// Comma-separated rows with a header line.
    Csv,
    /// One object with `columns` (names) and `rows` (numbers, full precision).
    Json,
}

/// Format a float with 6 significant digits. Fixed-point notation for
/// moderate magnitudes, scientific for the extremes, bare `0` for zero.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn csv_table(columns: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let line = |fields: &[String]| {
        fields
            .iter()
            .map(|f| csv_field(f))
            .collect::<Vec<_>>()
            .join(",")
    };
    out.push_str(&line(columns));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn json_table(columns: &[String], rows: Vec<Vec<f64>>) -> String {
    serde_json::json!({ "columns": columns, "rows": rows }).to_string()
}

fn theta_columns(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("theta_{j}")).collect()
}

/// Grid table: coordinate columns `theta_1..theta_d`, then one column per
/// named series. Series must match the grid length.
pub fn grid_table(
    coords: &[Vec<f64>],
    series: &[(&str, &[f64])],
    format: TableFormat,
) -> Result<String> {
    for (name, values) in series {
        if values.len() != coords.len() {
            return Err(Error::Dimension {
                expected: coords.len(),
                got: values.len(),
                context: format!("series {name} vs grid"),
            });
        }
    }
    let dim = coords.first().map_or(0, Vec::len);
    let mut columns = theta_columns(dim);
    columns.extend(series.iter().map(|(name, _)| name.to_string()));
    match format {
        TableFormat::Csv => {
            let rows: Vec<Vec<String>> = coords
                .iter()
                .enumerate()
                .map(|(i, point)| {
                    let mut row: Vec<String> = point.iter().map(|c| format_sig(*c)).collect();
                    row.extend(series.iter().map(|(_, values)| format_sig(values[i])));
                    row
                })
                .collect();
            Ok(csv_table(&columns, &rows))
        }
        TableFormat::Json => {
            let rows: Vec<Vec<f64>> = coords
                .iter()
                .enumerate()
                .map(|(i, point)| {
                    let mut row = point.clone();
                    row.extend(series.iter().map(|(_, values)| values[i]));
                    row
                })
                .collect();
            Ok(json_table(&columns, rows))
        }
    }
}

/// Power table over the fine alternative grid: coordinates, both powers, and
/// the difference in percentage points, one row per grid point.
pub fn heatmap_grid(report: &ApeReport, format: TableFormat) -> String {
    let dim = report.fine_alt_grid.first().map_or(0, Vec::len);
    let mut columns = theta_columns(dim);
    columns.extend(
        ["power_envelope", "power_adhoc", "diff_pp"]
            .iter()
            .map(|s| s.to_string()),
    );
    match format {
        TableFormat::Csv => {
            let rows: Vec<Vec<String>> = report
                .fine_alt_grid
                .iter()
                .enumerate()
                .map(|(i, point)| {
                    let mut row: Vec<String> = point.iter().map(|c| format_sig(*c)).collect();
                    row.push(format_sig(report.power_envelope[i]));
                    row.push(format_sig(report.power_adhoc[i]));
                    row.push(format!("{:.3}", report.diff_pp[i]));
                    row
                })
                .collect();
            csv_table(&columns, &rows)
        }
        TableFormat::Json => {
            let rows: Vec<Vec<f64>> = report
                .fine_alt_grid
                .iter()
                .enumerate()
                .map(|(i, point)| {
                    let mut row = point.clone();
                    row.push(report.power_envelope[i]);
                    row.push(report.power_adhoc[i]);
                    row.push(report.diff_pp[i]);
                    row
                })
                .collect();
            json_table(&columns, rows)
        }
    }
}

fn weights_table(report: &ApeReport) -> String {
    grid_table(
        &report.support_points,
        &[
            ("weight", &report.final_weights),
            ("power_envelope", &report.support_power_envelope),
            ("power_adhoc", &report.support_power_adhoc),
        ],
        TableFormat::Csv,
    )
    .expect("support columns align with the support points")
}

fn null_table(report: &ApeReport) -> String {
    grid_table(
        &report.fine_null_grid,
        &[
            ("size_envelope", &report.size_envelope),
            ("size_adhoc", &report.size_adhoc),
        ],
        TableFormat::Csv,
    )
    .expect("size columns align with the null grid")
}

fn multiplier_table(test: &TestDescriptor) -> String {
    let columns: Vec<String> = ["component", "multiplier", "lfd_weight"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = test
        .null_labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            vec![
                label.clone(),
                format_sig(test.multipliers.get(i).copied().unwrap_or(0.0)),
                format_sig(test.lfd_weights.get(i).copied().unwrap_or(0.0)),
            ]
        })
        .collect();
    csv_table(&columns, &rows)
}

fn trace_table(trace: &OuterTrace) -> String {
    let nw = trace.weights.first().map_or(0, Vec::len);
    let ng = trace.gaps.first().map_or(0, Vec::len);
    let mut columns = vec![
        "iteration".to_string(),
        "objective".to_string(),
        "best_value".to_string(),
    ];
    columns.extend((1..=nw).map(|j| format!("weight_{j}")));
    columns.extend((1..=ng).map(|j| format!("gap_{j}")));
    let rows: Vec<Vec<String>> = (0..trace.objectives.len())
        .map(|k| {
            let mut row = vec![
                k.to_string(),
                format_sig(trace.objectives[k]),
                format_sig(trace.best_values[k]),
            ];
            row.extend(trace.weights[k].iter().map(|w| format_sig(*w)));
            row.extend(trace.gaps[k].iter().map(|g| format_sig(*g)));
            row
        })
        .collect();
    csv_table(&columns, &rows)
}

fn summary_text(report: &ApeReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "problem: {}", report.problem);
    let _ = writeln!(s, "ad hoc test: {}", report.adhoc_name);
    let _ = writeln!(
        s,
        "alpha: {}  epsilon: {}  verify draws per point: {}",
        format_sig(report.alpha),
        format_sig(report.epsilon),
        report.n_draws_verify
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "verdict: {}", report.verdict);
    let _ = writeln!(s);
    let adhoc_max_size = report
        .size_adhoc
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(
        s,
        "envelope size on the null grid: max {} (budget {})",
        format_sig(report.max_size()),
        format_sig(report.alpha + report.epsilon)
    );
    let _ = writeln!(
        s,
        "ad hoc size on the null grid: max {}",
        format_sig(adhoc_max_size)
    );
    let _ = writeln!(
        s,
        "power difference on the alternative grid: min {:.3}pp, max {:.3}pp",
        report.min_diff_pp(),
        report.max_diff_pp()
    );
    let _ = writeln!(
        s,
        "alternative support ({} points):",
        report.support_points.len()
    );
    for (i, point) in report.support_points.iter().enumerate() {
        let coords = point
            .iter()
            .map(|c| format_sig(*c))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(
            s,
            "  ({coords})  weight {}  envelope {}  ad hoc {}",
            format_sig(report.final_weights[i]),
            format_sig(report.support_power_envelope[i]),
            format_sig(report.support_power_adhoc[i])
        );
    }
    if report.refinements.is_empty() {
        let _ = writeln!(s, "refinement rounds: none");
    } else {
        let added: usize = report.refinements.iter().map(|r| r.added.len()).sum();
        let _ = writeln!(
            s,
            "refinement rounds: {} ({} support points added)",
            report.refinements.len(),
            added
        );
    }
    let certificate = if report.exit_satisfied {
        "exit certificate satisfied"
    } else {
        "iteration cap reached"
    };
    let _ = writeln!(
        s,
        "final fit: {certificate}, {} outer iterations",
        report.outer_iterations_used
    );
    if !report.violations.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "violations:");
        for v in &report.violations {
            let _ = writeln!(s, "  - {v}");
        }
    }
    if !report.notes.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "notes:");
        for n in &report.notes {
            let _ = writeln!(s, "  - {n}");
        }
    }
    s
}

/// Paths of the files one analysis run writes.
#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub report_json: PathBuf,
    pub heatmap_csv: PathBuf,
    pub weights_csv: PathBuf,
    pub null_diagnostics_csv: PathBuf,
    pub multipliers_csv: PathBuf,
    pub outer_trace_csv: PathBuf,
    pub summary_txt: PathBuf,
}

/// Write the full file set for a finished build: the report JSON at full
/// precision, the flat CSV tables, and a human-readable summary whose
/// verdict line matches the report. Identical inputs produce identical
/// bytes.
pub fn write_report_files(
    report: &ApeReport,
    trace: &OuterTrace,
    out_dir: &Path,
) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir)?;
    let files = ReportFiles {
        report_json: out_dir.join("report.json"),
        heatmap_csv: out_dir.join("heatmap.csv"),
        weights_csv: out_dir.join("weights.csv"),
        null_diagnostics_csv: out_dir.join("null_diagnostics.csv"),
        multipliers_csv: out_dir.join("multipliers.csv"),
        outer_trace_csv: out_dir.join("outer_trace.csv"),
        summary_txt: out_dir.join("summary.txt"),
    };
    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Other(format!("report serialization: {e}")))?;
    json.push('\n');
    fs::write(&files.report_json, json)?;
    fs::write(&files.heatmap_csv, heatmap_grid(report, TableFormat::Csv))?;
    fs::write(&files.weights_csv, weights_table(report))?;
    fs::write(&files.null_diagnostics_csv, null_table(report))?;
    fs::write(&files.multipliers_csv, multiplier_table(&report.final_test))?;
    fs::write(&files.outer_trace_csv, trace_table(trace))?;
    fs::write(&files.summary_txt, summary_text(report))?;
    Ok(files)
}
