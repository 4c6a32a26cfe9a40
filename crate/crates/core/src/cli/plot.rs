//! Plain SVG rendering of run artifacts. Output depends only on the input
//! files, so re-plotting a run gives identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::CliError;
use crate::error::Error;
use crate::eval::{CONFUSION_FILE, CURVES_FILE, EMBEDDINGS_FILE};

pub const CONFUSION_SVG: &str = "confusion.svg";
pub const CURVES_SVG: &str = "curves.svg";
pub const SCATTER_SVG: &str = "scatter.svg";

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn bad(file: &Path, reason: impl Into<String>) -> CliError {
    CliError::Run(Error::Load {
        file: file.to_path_buf(),
        offset: 0,
        reason: reason.into(),
    })
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(path, e.to_string()))?;
    let header = r.headers().map_err(|e| bad(path, e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| bad(path, e.to_string()))?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn num(path: &Path, s: &str) -> Result<f64, CliError> {
    s.parse().map_err(|_| bad(path, format!("not a number: {s:?}")))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open_svg(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        W / 2.0,
        escape(title)
    );
    s
}

/// Row-normalized heat map with raw counts printed in each cell.
pub fn confusion_svg(path: &Path) -> Result<String, CliError> {
    let (header, rows) = read_csv(path)?;
    let k = header.len().saturating_sub(1);
    if k == 0 || rows.len() != k {
        return Err(bad(path, format!("expected a square matrix, got {} rows and {k} columns", rows.len())));
    }
    let mut counts = vec![vec![0.0; k]; k];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k + 1 {
            return Err(bad(path, format!("row {} has {} fields", i + 1, row.len())));
        }
        for j in 0..k {
            counts[i][j] = num(path, &row[j + 1])?;
        }
    }
    let side = ((W.min(H) - 2.0 * MARGIN) / k as f64).floor();
    let x0 = (W - side * k as f64) / 2.0;
    let y0 = MARGIN;
    let mut s = open_svg("confusion matrix (rows: true, columns: predicted)");
    for i in 0..k {
        let total: f64 = counts[i].iter().sum();
        for j in 0..k {
            let frac = if total > 0.0 { counts[i][j] / total } else { 0.0 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let (x, y) = (x0 + side * j as f64, y0 + side * i as f64);
            let _ = writeln!(
                s,
                "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{side}\" height=\"{side}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#333\"/>"
            );
            let ink = if frac > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{ink}\">{}</text>",
                x + side / 2.0,
                y + side / 2.0 + 4.0,
                counts[i][j]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            x0 - 4.0,
            y0 + side * i as f64 + side / 2.0 + 4.0,
            escape(&rows[i][0])
        );
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            x0 + side * j as f64 + side / 2.0,
            y0 + side * k as f64 + 14.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
        let _ = writeln!(s, "<path d=\"M{l} {t} L{l} {b} L{r} {b}\" fill=\"none\" stroke=\"black\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            W / 2.0,
            H - 12.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 {})\">{}</text>",
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
        for (v, anchor, x, y) in [
            (self.y.0, "end", l - 4.0, b),
            (self.y.1, "end", l - 4.0, t + 4.0),
            (self.x.0, "start", l, b + 14.0),
            (self.x.1, "end", r, b + 14.0),
        ] {
            let _ = writeln!(
                s,
                "<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{v:.3}</text>"
            );
        }
    }
}

/// Loss per epoch, stages laid end to end.
pub fn curves_svg(path: &Path) -> Result<String, CliError> {
    let (header, rows) = read_csv(path)?;
    if header != ["epoch", "stage", "loss"] {
        return Err(bad(path, format!("unexpected header {header:?}")));
    }
    if rows.is_empty() {
        return Err(bad(path, "no loss values"));
    }
    let mut stages: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        let loss = num(path, &row[2])?;
        match stages.last_mut() {
            Some((name, pts)) if *name == row[1] && num(path, &row[0])? > 1.0 => pts.push((t as f64 + 1.0, loss)),
            _ => stages.push((row[1].clone(), vec![(t as f64 + 1.0, loss)])),
        }
    }
    let all = stages.iter().flat_map(|(_, p)| p.iter().copied());
    let frame = Frame::new(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut s = open_svg("training loss");
    frame.axes(&mut s, "epoch (all stages)", "loss");
    for (i, (name, pts)) in stages.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        let _ = writeln!(s, "<polyline class=\"curve\" points=\"{}\" fill=\"none\" stroke=\"{color}\"/>", d.join(" "));
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"{color}\">{}</text>",
            W - MARGIN - 90.0,
            MARGIN + 12.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// 2-D projection of the test representations, colored by true class.
pub fn scatter_svg(path: &Path) -> Result<String, CliError> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(label), Some(p1), Some(p2)) = (col("label"), col("pc_1"), col("pc_2")) else {
        return Err(bad(path, "no projection columns"));
    };
    let mut pts = Vec::with_capacity(rows.len());
    for row in &rows {
        let class: usize = row[label].parse().map_err(|_| bad(path, format!("bad label {:?}", row[label])))?;
        pts.push((num(path, &row[p1])?, num(path, &row[p2])?, class));
    }
    if pts.is_empty() {
        return Err(bad(path, "no samples"));
    }
    let frame = Frame::new(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
    let mut s = open_svg("representations, first two principal components");
    frame.axes(&mut s, "PC 1", "PC 2");
    // Larger classes first so minority points stay visible.
    let max_class = pts.iter().map(|p| p.2).max().unwrap_or(0);
    let mut sizes = vec![0usize; max_class + 1];
    for p in &pts {
        sizes[p.2] += 1;
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(sizes[c]), c));
    for c in order {
        let color = PALETTE[c % PALETTE.len()];
        for p in pts.iter().filter(|p| p.2 == c) {
            let _ = writeln!(
                s,
                "<circle class=\"point\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
                frame.px(p.0),
                frame.py(p.1)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders every plot whose source artifact is present in `run_dir`.
/// Missing or unusable sources are skipped with a warning; it is an error
/// only when nothing could be drawn.
pub fn plot_run(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    type Render = fn(&Path) -> Result<String, CliError>;
    let jobs: [(&str, &str, Render); 3] = [
        (CONFUSION_FILE, CONFUSION_SVG, confusion_svg),
        (CURVES_FILE, CURVES_SVG, curves_svg),
        (EMBEDDINGS_FILE, SCATTER_SVG, scatter_svg),
    ];
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (src, dst, render) in jobs {
        let src = run_dir.join(src);
        if !src.exists() {
            log::warn!("skipping {dst}: {} not found", src.display());
            continue;
        }
        match render(&src) {
            Ok(svg) => {
                let p = out_dir.join(dst);
                fs::write(&p, svg)?;
                written.push(p);
            }
            Err(e) => log::warn!("skipping {dst}: {e}"),
        }
    }
    if written.is_empty() {
        return Err(CliError::Usage(format!("nothing to plot in {}", run_dir.display())));
    }
    Ok(written)
}
