//! Report emission: CSV table, full JSON record, and a self-contained
//! gnuplot script. Output is deterministic byte for byte for a fixed
//! report, which the determinism checks rely on.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::study::ConvergenceReport;

pub const CSV_NAME: &str = "report.csv";
pub const JSON_NAME: &str = "report.json";
pub const GNUPLOT_NAME: &str = "plot.gp";

/// Write the (epsilon, error, h, dt) table.
pub fn write_csv(report: &ConvergenceReport, path: &Path) -> Result<()> {
    let mut out = String::from("epsilon,error,h,dt\n");
    for (eps, err, h, dt) in report.rows() {
        out.push_str(&format!("{eps},{err},{h},{dt}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a CSV written by `write_csv`.
pub fn read_csv(path: &Path) -> Result<Vec<(f64, f64, f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(crate::error::Error::Config(format!(
                "bad CSV row {lineno}: expected 4 fields"
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|e| crate::error::Error::Config(format!("bad CSV number '{s}': {e}")))
        };
        rows.push((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?, parse(fields[3])?));
    }
    Ok(rows)
}

pub fn write_json(report: &ConvergenceReport, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, report)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<ConvergenceReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// A gnuplot script plotting log error against log epsilon together with
/// the fitted power law; references only the CSV emitted next to it.
pub fn write_gnuplot(report: &ConvergenceReport, path: &Path) -> Result<()> {
    let script = format!(
        "# Convergence of '{id}' ({op}): fitted error ~ {c:.6e} * eps^{s:.4}\n\
         set terminal pngcairo size 800,600\n\
         set output '{id}.png'\n\
         set logscale xy\n\
         set xlabel 'epsilon'\n\
         set ylabel 'sup error'\n\
         set key left top\n\
         set datafile separator ','\n\
         fit_c = {c:.17e}\n\
         fit_s = {s:.17e}\n\
         plot '{csv}' every ::1 using 1:2 with points pt 7 ps 1.5 title 'measured', \\\n\
         \x20    fit_c * x**fit_s with lines lw 2 title sprintf('%.3g eps^{{%.3g}}', fit_c, fit_s)\n",
        id = report.id,
        op = report.operator,
        c = report.prefactor,
        s = report.slope,
        csv = CSV_NAME,
    );
    std::fs::write(path, script)?;
    Ok(())
}

/// Emit the requested formats into a directory; returns the files written.
pub fn emit_report(
    report: &ConvergenceReport,
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let path = match f {
            ReportFormat::Csv => {
                let p = dir.join(CSV_NAME);
                write_csv(report, &p)?;
                p
            }
            ReportFormat::Json => {
                let p = dir.join(JSON_NAME);
                write_json(report, &p)?;
                p
            }
            ReportFormat::Gnuplot => {
                let p = dir.join(GNUPLOT_NAME);
                write_gnuplot(report, &p)?;
                p
            }
        };
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Gnuplot,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "gnuplot" => Ok(ReportFormat::Gnuplot),
            other => Err(crate::error::Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}
