use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use smooth_traj::metrics::{Metric, MetricsTable};
use smooth_traj::Error;

use crate::sweep::RESULTS_FILE;
use crate::{CliResult, ReportArgs};

pub const REPORT_FILE: &str = "report.md";

/// One rendered table: `values[row][col]` is the seed mean for `betas[row]`
/// at `horizons[col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub metric: Metric,
    pub split: String,
    pub model: String,
    pub betas: Vec<f64>,
    pub horizons: Vec<f64>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl Table {
    /// Row indices holding the best value of column `c` at display
    /// precision, so equal-looking cells are bolded alike.
    pub fn best_rows(&self, c: usize) -> Vec<usize> {
        let col: Vec<(usize, f64)> = self
            .values
            .iter()
            .enumerate()
            .filter_map(|(r, v)| v[c].map(|x| (r, displayed(x))))
            .collect();
        let better = |a: f64, b: f64| if self.metric.higher_is_better() { a > b } else { a < b };
        let Some(best) = col.iter().map(|p| p.1).reduce(|a, b| if better(b, a) { b } else { a }) else {
            return Vec::new();
        };
        col.iter().filter(|p| p.1 == best).map(|p| p.0).collect()
    }

    pub fn slug(&self) -> String {
        let raw = format!("{}_{}_{}", self.metric, self.split, self.model);
        raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
    }
}

pub const DECIMALS: usize = 3;

fn displayed(x: f64) -> f64 {
    format!("{x:.DECIMALS$}").parse().expect("formatted float parses")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn unit(m: Metric) -> &'static str {
    match m {
        Metric::Fde | Metric::Ade => " (m)",
        Metric::KdeNll | Metric::Auc => "",
    }
}

/// Groups rows by metric, split and model and averages over seeds.
pub fn tables(results: &MetricsTable) -> Vec<Table> {
    type Key = (Metric, String, String);
    type Sums = BTreeMap<(u64, u64), (f64, usize)>;
    let mut acc: BTreeMap<Key, Sums> = BTreeMap::new();
    let mut betas: BTreeMap<Key, BTreeSet<u64>> = BTreeMap::new();
    let mut horizons: BTreeMap<Key, BTreeSet<u64>> = BTreeMap::new();
    // Non-negative finite f64 bit patterns sort like the values.
    let ord = |x: f64| if x == 0.0 { 0 } else { x.to_bits() };
    for r in results.rows() {
        let k = (r.metric, r.split.clone(), r.model.clone());
        let e = acc.entry(k.clone()).or_default().entry((ord(r.beta), ord(r.horizon_s))).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
        betas.entry(k.clone()).or_default().insert(ord(r.beta));
        horizons.entry(k).or_default().insert(ord(r.horizon_s));
    }
    acc.into_iter()
        .map(|(k, cells)| {
            let bs: Vec<u64> = betas[&k].iter().copied().collect();
            let hs: Vec<u64> = horizons[&k].iter().copied().collect();
            let values = bs
                .iter()
                .map(|b| hs.iter().map(|h| cells.get(&(*b, *h)).map(|(s, n)| s / *n as f64)).collect())
                .collect();
            Table {
                metric: k.0,
                split: k.1,
                model: k.2,
                betas: bs.into_iter().map(f64::from_bits).collect(),
                horizons: hs.into_iter().map(f64::from_bits).collect(),
                values,
            }
        })
        .collect()
}

pub fn markdown_table(t: &Table, out: &mut String) {
    let _ = writeln!(out, "## {}{}: {} split, {}\n", t.metric, unit(t.metric), t.split, t.model);
    out.push_str("| β |");
    for h in &t.horizons {
        let _ = write!(out, " {h} s |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(t.horizons.len()));
    out.push('\n');
    let best: Vec<Vec<usize>> = (0..t.horizons.len()).map(|c| t.best_rows(c)).collect();
    for (r, b) in t.betas.iter().enumerate() {
        if *b == 0.0 {
            out.push_str("| 0 (baseline) |");
        } else {
            let _ = write!(out, "| {b} |");
        }
        for (c, v) in t.values[r].iter().enumerate() {
            match v {
                Some(x) if best[c].contains(&r) => {
                    let _ = write!(out, " **{x:.DECIMALS$}** |");
                }
                Some(x) => {
                    let _ = write!(out, " {x:.DECIMALS$} |");
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out.push('\n');
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot of the metric against β (categorical axis), one line per
/// horizon.
pub fn svg_plot(t: &Table) -> String {
    let (w, h) = (480.0, 300.0);
    let (left, right, top, bottom) = (60.0, 90.0, 30.0, 40.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let vals: Vec<f64> = t.values.iter().flatten().flatten().copied().collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let n = t.betas.len();
    let x = |i: usize| if n <= 1 { left + pw / 2.0 } else { left + pw * i as f64 / (n - 1) as f64 };
    let y = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}{} vs β ({}, {})</text>"#,
        w / 2.0,
        t.metric,
        unit(t.metric),
        xml_escape(&t.split),
        xml_escape(&t.model)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            left - 4.0,
            y(v) + 4.0
        );
    }
    for (i, b) in t.betas.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{b}</text>"#,
            x(i),
            top + ph + 16.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">β</text>"#, left + pw / 2.0, h - 6.0);
    for (c, hz) in t.horizons.iter().enumerate() {
        let color = COLORS[c % COLORS.len()];
        let pts: Vec<String> = (0..n)
            .filter_map(|r| t.values[r][c].map(|v| format!("{:.1},{:.1}", x(r), y(v))))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        for p in &pts {
            let (px, py) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="2.5" fill="{color}"/>"#);
        }
        let ly = top + 14.0 * c as f64 + 6.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{hz} s</text>"#,
            left + pw + 10.0,
            left + pw + 28.0,
            left + pw + 32.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Markdown report plus `(file name, svg)` plots.
pub fn render(results: &MetricsTable) -> CliResult<(String, Vec<(String, String)>)> {
    if results.is_empty() {
        return Err(Error::validation("results contain no rows; nothing to report").into());
    }
    let mut md = String::from("# Results\n\nValues are means over seeds. The best value per horizon is bold; lower is better except for auc.\n\n");
    let mut plots = Vec::new();
    for t in tables(results) {
        markdown_table(&t, &mut md);
        let name = format!("plot_{}.svg", t.slug());
        let _ = writeln!(md, "![{} vs beta]({name})\n", t.metric);
        plots.push((name, svg_plot(&t)));
    }
    Ok((md, plots))
}

pub fn cmd_report(a: &ReportArgs) -> CliResult<()> {
    let (csv, default_out) = if a.results.is_dir() {
        (a.results.join(RESULTS_FILE), a.results.clone())
    } else {
        let parent = a.results.parent().map(PathBuf::from).unwrap_or_default();
        (a.results.clone(), parent)
    };
    let out = a.out.clone().unwrap_or(default_out);
    let results = MetricsTable::read_csv(&csv)?;
    let (md, plots) = render(&results)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let p = out.join(REPORT_FILE);
    std::fs::write(&p, md).map_err(|e| Error::io(&p, e))?;
    for (name, svg) in plots {
        let p = out.join(name);
        std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
