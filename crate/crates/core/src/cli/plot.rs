use super::report::RunReport;
use super::CliError;

/// Whitespace-separated table of one report series: a header row with the
/// column names, then one sample per line.
pub fn emit_plotdata(report: &RunReport, which: &str) -> Result<String, CliError> {
    let series = report.series.get(which).ok_or_else(|| {
        let known: Vec<&str> = report.series.keys().map(String::as_str).collect();
        CliError::UnknownSeries(format!("`{which}` (this report has: {})", known.join(", ")))
    })?;
    let mut out = series.columns.join(" ");
    out.push('\n');
    for row in &series.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    Ok(out)
}
