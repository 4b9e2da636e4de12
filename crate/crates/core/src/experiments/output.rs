use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::spec::hash_blob;
use super::{RunData, RunResult, Trajectory};
use crate::stats::MeanStderr;
use crate::Result;

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn mse_cols(m: &Option<MeanStderr>) -> (String, String) {
    match m {
        Some(m) => (num(m.mean), opt(m.stderr)),
        None => (String::new(), String::new()),
    }
}

fn trajectory_csv(t: &Trajectory) -> String {
    let mut out = String::from("k,sensor,mse,stderr,bound\n");
    for r in &t.rows {
        let (mse, se) = mse_cols(&r.mse);
        let sensor = r.sensor.map_or_else(|| "all".to_string(), |i| i.to_string());
        let _ = writeln!(out, "{},{},{},{},{}", r.k, sensor, mse, se, num(r.bound));
    }
    out
}

/// A named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Self-contained SVG line plot. Non-positive values are dropped on log axes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool, log_y: bool) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 480.0, 70.0, 170.0, 40.0, 50.0);
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let keep = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!log_x || x > 0.0) && (!log_y || y > 0.0);
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().copied().filter(keep).map(|(x, y)| (tx(x), ty(y))).collect())
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let fmt_tick = |v: f64, log: bool| {
        let v = if log { 10f64.powf(v) } else { v };
        format!("{v:.3e}")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            top + ph + 16.0,
            fmt_tick(xv, log_x)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 4.0,
            py(yv) + 4.0,
            fmt_tick(yv, log_y)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !p.is_empty() {
            let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = top + 14.0 * i as f64 + 10.0;
        let lx = w - right + 10.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 22.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn trajectory_plot(prefix: &str, t: &Trajectory, log_x: bool) -> String {
    let avg: Vec<_> = t.rows.iter().filter(|r| r.sensor.is_none()).collect();
    let mse = Series {
        name: "sensor average".into(),
        points: avg.iter().filter_map(|r| r.mse.map(|m| (r.k as f64, m.mean))).collect(),
    };
    let bound = Series {
        name: "bound".into(),
        points: avg.iter().map(|r| (r.k as f64, r.bound)).collect(),
    };
    let y = if prefix == "online" { "k · MSE" } else { "MSE" };
    line_plot(&format!("{prefix} ({})", t.algorithm.label()), "k", y, &[mse, bound], log_x, true)
}

impl RunResult {
    /// `(file name, contents)` of every CSV, in a fixed order.
    pub fn csv_files(&self) -> Vec<(String, String)> {
        match &self.data {
            RunData::MechSweep(rows) => {
                let mut out = String::from("mechanism,s,mse,stderr,ppcr_trace\n");
                for r in rows {
                    let (mse, se) = mse_cols(&r.mse);
                    let _ = writeln!(out, "{},{},{},{},{}", r.mechanism.label(), num(r.s), mse, se, num(r.ppcr_trace));
                }
                vec![("mech_sweep.csv".into(), out)]
            }
            RunData::Offline(ts) | RunData::Online(ts) => {
                let prefix = self.meta.scenario.label();
                ts.iter()
                    .map(|t| (format!("{prefix}_{}.csv", t.algorithm.label()), trajectory_csv(t)))
                    .collect()
            }
            RunData::Consensus(rows) => {
                let mut out = String::from("reps,variance,stderr,bound\n");
                for r in rows {
                    let _ = writeln!(out, "{},{},{},{}", r.reps, num(r.variance.mean), opt(r.variance.stderr), num(r.bound));
                }
                vec![("consensus.csv".into(), out)]
            }
        }
    }

    /// One SVG per CSV.
    pub fn svg_files(&self) -> Vec<(String, String)> {
        match &self.data {
            RunData::MechSweep(rows) => {
                let mut kinds: Vec<_> = rows.iter().map(|r| r.mechanism).collect();
                kinds.dedup();
                kinds.sort();
                kinds.dedup();
                let mut series: Vec<Series> = kinds
                    .iter()
                    .map(|k| Series {
                        name: k.label().into(),
                        points: rows
                            .iter()
                            .filter(|r| r.mechanism == *k)
                            .filter_map(|r| r.mse.map(|m| (r.s, m.mean)))
                            .collect(),
                    })
                    .collect();
                let mut bound: Vec<(f64, f64)> = rows.iter().map(|r| (r.s, r.ppcr_trace)).collect();
                bound.dedup();
                series.push(Series {
                    name: "trace PPCR".into(),
                    points: bound,
                });
                vec![("mech_sweep.svg".into(), line_plot("MSE vs budget", "s", "MSE", &series, true, true))]
            }
            RunData::Offline(ts) => ts
                .iter()
                .map(|t| (format!("offline_{}.svg", t.algorithm.label()), trajectory_plot("offline", t, false)))
                .collect(),
            RunData::Online(ts) => ts
                .iter()
                .map(|t| (format!("online_{}.svg", t.algorithm.label()), trajectory_plot("online", t, true)))
                .collect(),
            RunData::Consensus(rows) => {
                let var = Series {
                    name: "variance".into(),
                    points: rows.iter().map(|r| (r.reps as f64, r.variance.mean)).collect(),
                };
                let bound = Series {
                    name: "bound".into(),
                    points: rows.iter().map(|r| (r.reps as f64, r.bound)).collect(),
                };
                vec![(
                    "consensus.svg".into(),
                    line_plot("private consensus", "replications", "variance", &[var, bound], false, false),
                )]
            }
        }
    }

    pub(crate) fn output_hash(&self) -> String {
        let mut bytes = Vec::new();
        for (name, body) in self.csv_files() {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(body.as_bytes());
        }
        hash_blob(&bytes)
    }

    /// Writes the CSVs, optional SVGs and `meta.json` into `dir`.
    pub fn write_to(&self, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = self.csv_files();
        if svg {
            files.extend(self.svg_files());
        }
        files.push(("meta.json".into(), serde_json::to_string_pretty(&self.meta)? + "\n"));
        let mut written = Vec::with_capacity(files.len());
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Cells whose MSE falls below the bound by more than three standard
    /// errors.
    pub fn dominance_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.data {
            RunData::MechSweep(rows) => {
                for r in rows.iter().filter(|r| !r.respects_bound()) {
                    out.push(format!("{} at s = {}", r.mechanism.label(), r.s));
                }
            }
            RunData::Offline(ts) | RunData::Online(ts) => {
                for t in ts {
                    if let Some(r) = t.last_average() {
                        if let Some(m) = &r.mse {
                            if m.mean < r.bound - 3.0 * m.stderr.unwrap_or(0.0) {
                                out.push(format!("{} at k = {}", t.algorithm.label(), r.k));
                            }
                        }
                    }
                }
            }
            RunData::Consensus(rows) => {
                if let Some(r) = rows.last() {
                    if r.variance.mean < r.bound - 3.0 * r.variance.stderr.unwrap_or(0.0) {
                        out.push(format!("variance below bound at {} reps", r.reps));
                    }
                }
            }
        }
        out
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        let _ = writeln!(s, "scenario {}  seed {}  reps {}", m.scenario.label(), m.seed, m.reps);
        let se = |x: &MeanStderr| x.stderr.map_or("-".to_string(), |v| format!("{v:.3e}"));
        match &self.data {
            RunData::MechSweep(rows) => {
                let _ = writeln!(s, "{:<18} {:>8} {:>12} {:>10} {:>12}", "mechanism", "s", "mse", "stderr", "trace PPCR");
                for r in rows {
                    match &r.mse {
                        Some(x) => {
                            let _ = writeln!(
                                s,
                                "{:<18} {:>8} {:>12.5e} {:>10} {:>12.5e}",
                                r.mechanism.label(),
                                r.s,
                                x.mean,
                                se(x),
                                r.ppcr_trace
                            );
                        }
                        None => {
                            let _ = writeln!(s, "{:<18} {:>8} {:>12} {:>10} {:>12.5e}", r.mechanism.label(), r.s, "gap", "-", r.ppcr_trace);
                        }
                    }
                }
            }
            RunData::Offline(ts) | RunData::Online(ts) => {
                let _ = writeln!(s, "{:<16} {:>8} {:>12} {:>10} {:>12}", "algorithm", "k", "mse", "stderr", "bound");
                for t in ts {
                    if let Some(r) = t.last_average() {
                        let (mean, err) = r.mse.as_ref().map_or(("-".into(), "-".into()), |x| (format!("{:.5e}", x.mean), se(x)));
                        let _ = writeln!(s, "{:<16} {:>8} {:>12} {:>10} {:>12.5e}", t.algorithm.label(), r.k, mean, err, r.bound);
                    }
                    if let Some(c) = &t.central {
                        let _ = writeln!(s, "{:<16} {:>8} {:>12.5e} {:>10}", "  central", "-", c.mean, se(c));
                    }
                }
            }
            RunData::Consensus(rows) => {
                let _ = writeln!(s, "{:>8} {:>12} {:>10} {:>10}", "reps", "variance", "stderr", "bound");
                for r in rows {
                    let _ = writeln!(s, "{:>8} {:>12.5e} {:>10} {:>10.5e}", r.reps, r.variance.mean, se(&r.variance), r.bound);
                }
            }
        }
        for e in &m.events {
            let _ = writeln!(s, "note: {e}");
        }
        let v = self.dominance_violations();
        if v.is_empty() {
            let _ = writeln!(s, "dominance: ok");
        } else {
            let _ = writeln!(s, "dominance: {} violation(s): {}", v.len(), v.join("; "));
        }
        s
    }
}
