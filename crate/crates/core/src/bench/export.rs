//! CSV and SVG output of evaluation runs.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::RunRecord;
use crate::error::{Error, Result};

const PLOT_WIDTH: f64 = 720.0;
const PLOT_HEIGHT: f64 = 420.0;
const MARGIN: f64 = 48.0;
const MAX_POINTS: usize = 1000;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_run_csv<W: Write>(record: &RunRecord, mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,p")?;
    for (i, p) in record.p_sequence.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, p)?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(records: &[RunRecord], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "run,convergence_step,final_p,exact_p,sat_steps,move_steps"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.run_id,
            opt(r.convergence_step),
            opt(r.final_p()),
            opt(r.exact_p),
            r.sat_steps,
            r.move_steps
        )?;
    }
    Ok(())
}

/// Line plot of all p-sequences, with exact p-values as dotted lines.
pub fn write_svg_plot<W: Write>(records: &[RunRecord], mut out: W) -> std::io::Result<()> {
    let steps = records
        .iter()
        .map(|r| r.p_sequence.len())
        .max()
        .unwrap_or(1)
        .max(1);
    let x = |step: usize| MARGIN + (PLOT_WIDTH - 2.0 * MARGIN) * step as f64 / steps as f64;
    let y = |p: f64| PLOT_HEIGHT - MARGIN - (PLOT_HEIGHT - 2.0 * MARGIN) * p.clamp(0.0, 1.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_WIDTH}" height="{PLOT_HEIGHT}" viewBox="0 0 {PLOT_WIDTH} {PLOT_HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (x(0), x(steps), y(0.0), y(1.0));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}" fill="none" stroke="black"/>"#
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{tick}</text>"#,
            x0 - 6.0,
            y(tick) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x1:.1}" y="{:.1}" font-size="11" text-anchor="end">{steps} steps</text>"#,
        y0 + 20.0
    );
    for (k, r) in records.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let stride = r.p_sequence.len().div_ceil(MAX_POINTS).max(1);
        let mut points = String::new();
        for (i, p) in r.p_sequence.iter().enumerate() {
            if i % stride == 0 || i + 1 == r.p_sequence.len() {
                let _ = write!(points, "{:.1},{:.1} ", x(i + 1), y(*p));
            }
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1"/>"#,
            points.trim_end()
        );
        if let Some(p) = r.exact_p {
            let yp = y(p);
            let _ = writeln!(
                svg,
                r#"<line x1="{x0:.1}" y1="{yp:.1}" x2="{x1:.1}" y2="{yp:.1}" stroke="{color}" stroke-dasharray="2,3"/>"#
            );
        }
    }
    svg.push_str("</svg>\n");
    out.write_all(svg.as_bytes())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `run_XXXX.csv` per run, `summary.csv` and `plot.svg` into
/// `out_dir`, returning the written paths.
pub fn export_results(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(records.len() + 2);
    for r in records {
        let path = out_dir.join(format!("run_{:04}.csv", r.run_id));
        let mut w = create(&path)?;
        write_run_csv(r, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = out_dir.join("summary.csv");
    let mut w = create(&path)?;
    write_summary_csv(records, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    written.push(path);
    let path = out_dir.join("plot.svg");
    let mut w = create(&path)?;
    write_svg_plot(records, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Table;

    fn record(id: usize, exact: Option<f64>) -> RunRecord {
        RunRecord {
            run_id: id,
            lambda: 0.5,
            initial: Table::from_vec(vec![1, 2]),
            structural_zeros: Default::default(),
            exact_p: exact,
            p_sequence: vec![1.0, 0.5, 0.5],
            convergence_step: Some(2),
            schedule: "A_2".into(),
            sat_steps: 1,
            move_steps: 2,
            mle_converged: true,
        }
    }

    #[test]
    fn empty_summary_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        export_results(&[], dir.path()).unwrap();
        let s = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(
            s,
            "run,convergence_step,final_p,exact_p,sat_steps,move_steps\n"
        );
        let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn files_per_run() {
        let dir = tempfile::tempdir().unwrap();
        let files = export_results(&[record(0, Some(0.4)), record(1, None)], dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let s = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert_eq!(s.lines().nth(2).unwrap(), "1,2,0.5,,1,2");
        let run = std::fs::read_to_string(dir.path().join("run_0000.csv")).unwrap();
        assert_eq!(run, "step,p\n1,1\n2,0.5\n3,0.5\n");
        let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let dotted = doc
            .descendants()
            .filter(|n| n.attribute("stroke-dasharray").is_some())
            .count();
        assert_eq!(dotted, 1);
        assert_eq!(
            doc.descendants()
                .filter(|n| n.has_tag_name("polyline"))
                .count(),
            2
        );
    }
}
