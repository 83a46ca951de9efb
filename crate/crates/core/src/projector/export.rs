//! Visualization exports: CSV data files and self-contained SVG panels
//! (loss line plot, mean-rank and hits bar charts, embedding scatter).
//! No plotting dependency; the CSVs let users re-plot elsewhere.

use std::fs;
use std::path::{Path, PathBuf};

use crate::evaluator::MetricsReport;
use crate::trainer::TrainRecord;

use super::{ProjectionResult, ProjectorError};

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 56.0;

fn write(path: &Path, body: String) -> Result<(), ProjectorError> {
    fs::write(path, body).map_err(|source| ProjectorError::Io {
        path: path.to_owned(),
        source,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// `embedding_2d.csv`: label, x, y, kind.
pub fn write_embedding_csv(proj: &ProjectionResult, path: &Path) -> Result<(), ProjectorError> {
    let mut out = String::from("label,x,y,kind\n");
    for i in 0..proj.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&proj.labels[i]),
            proj.coords[i][0],
            proj.coords[i][1],
            proj.point_kinds[i].name()
        ));
    }
    write(path, out)
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let pad = |lo: f64, hi: f64| {
            if lo == hi {
                (lo - 1.0, hi + 1.0)
            } else {
                let p = (hi - lo) * 0.05;
                (lo - p, hi + p)
            }
        };
        let (x_min, x_max) = pad(
            xs.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
        );
        let (y_min, y_max) = pad(
            ys.clone().fold(f64::INFINITY, f64::min),
            ys.fold(f64::NEG_INFINITY, f64::max),
        );
        Self { x_min, x_max, y_min, y_max }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (W - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (H - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{title}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN,
    )
}

/// Loss trajectory as a line plot. An empty record still produces a valid
/// (blank) panel.
pub fn write_loss_svg(record: &TrainRecord, path: &Path) -> Result<(), ProjectorError> {
    let mut svg = svg_open("training loss per epoch");
    if !record.epoch_loss.is_empty() {
        let frame = Frame::new(
            (1..=record.epoch_loss.len()).map(|e| e as f64),
            record.epoch_loss.iter().copied(),
        );
        let pts: Vec<String> = record
            .epoch_loss
            .iter()
            .enumerate()
            .map(|(i, &l)| format!("{:.2},{:.2}", frame.sx((i + 1) as f64), frame.sy(l)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    write(path, svg)
}

fn bar_chart(title: &str, bars: &[(String, f64, f64)]) -> String {
    // Each bar pair: (label, raw, filtered).
    let mut svg = svg_open(title);
    if bars.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let max_v = bars
        .iter()
        .flat_map(|(_, a, b)| [*a, *b])
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;
    let group_w = plot_w / bars.len() as f64;
    let bar_w = group_w * 0.35;
    for (g, (label, raw, filt)) in bars.iter().enumerate() {
        let x0 = MARGIN + g as f64 * group_w + group_w * 0.1;
        for (k, (v, color)) in [(raw, "steelblue"), (filt, "darkorange")].iter().enumerate() {
            let h = (**v / max_v) * plot_h;
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
                x0 + k as f64 * bar_w,
                H - MARGIN - h,
                bar_w,
                h,
                color
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"12\">{}</text>\n",
            x0 + bar_w,
            H - MARGIN + 16.0,
            label
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"steelblue\">raw</text>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"darkorange\">filtered</text>\n",
        W - MARGIN - 80.0,
        MARGIN,
        W - MARGIN - 80.0,
        MARGIN + 16.0
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Mean-rank and hits@k bar panels.
pub fn write_metric_svgs(
    report: &MetricsReport,
    mean_rank_path: &Path,
    hits_path: &Path,
) -> Result<(), ProjectorError> {
    let mr = vec![(
        "mean rank".to_owned(),
        report.mean_rank_raw,
        report.mean_rank_filtered,
    )];
    write(mean_rank_path, bar_chart("mean rank", &mr))?;
    let hits: Vec<(String, f64, f64)> = report
        .hits_ks
        .iter()
        .enumerate()
        .map(|(i, k)| {
            (
                format!("hits@{k}"),
                report.hits_raw[i],
                report.hits_filtered[i],
            )
        })
        .collect();
    write(hits_path, bar_chart("hit ratios", &hits))
}

/// Embedding scatter: one circle per projected row.
pub fn write_embedding_svg(proj: &ProjectionResult, path: &Path) -> Result<(), ProjectorError> {
    let mut svg = svg_open("entity and relation embeddings (2d)");
    if !proj.is_empty() {
        let frame = Frame::new(
            proj.coords.iter().map(|c| c[0]),
            proj.coords.iter().map(|c| c[1]),
        );
        for i in 0..proj.len() {
            let color = match proj.point_kinds[i] {
                super::PointKind::Entity => "steelblue",
                super::PointKind::Relation => "darkorange",
            };
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
                frame.sx(proj.coords[i][0]),
                frame.sy(proj.coords[i][1]),
                color
            ));
        }
    }
    svg.push_str("</svg>\n");
    write(path, svg)
}

/// Writes every visualization artifact for one run into `out_dir`:
/// loss.csv, metrics.csv, embedding_2d.csv and the four SVG panels.
/// Returns the paths written.
pub fn export_plots(
    record: &TrainRecord,
    report: &MetricsReport,
    proj: &ProjectionResult,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ProjectorError> {
    fs::create_dir_all(out_dir).map_err(|source| ProjectorError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    let loss_csv = out_dir.join("loss.csv");
    crate::trainer::write_loss_csv(record, &loss_csv).map_err(|e| match e {
        crate::trainer::CheckpointError::Io { path, source } => ProjectorError::Io { path, source },
        _ => unreachable!("loss csv only fails on i/o"),
    })?;
    written.push(loss_csv);

    let metrics_csv = out_dir.join("metrics.csv");
    crate::evaluator::write_metrics_csv(report, &metrics_csv).map_err(|e| match e {
        crate::evaluator::EvalError::Io { path, source } => ProjectorError::Io { path, source },
        _ => unreachable!("metrics csv only fails on i/o"),
    })?;
    written.push(metrics_csv);

    for (name, writer) in [
        ("embedding_2d.csv", write_embedding_csv as fn(&ProjectionResult, &Path) -> _),
        ("embedding_2d.svg", write_embedding_svg),
    ] {
        let p = out_dir.join(name);
        writer(proj, &p)?;
        written.push(p);
    }
    let loss_svg = out_dir.join("loss.svg");
    write_loss_svg(record, &loss_svg)?;
    written.push(loss_svg);
    let mr = out_dir.join("mean_rank.svg");
    let hits = out_dir.join("hits.svg");
    write_metric_svgs(report, &mr, &hits)?;
    written.push(mr);
    written.push(hits);
    Ok(written)
}
