//! TSV summaries and static SVG charts drawn from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::correlation::{rank_correlation_matrix, CorrelationAxis, LabeledMatrix};
use super::stats::{summarize, QuantileSummary};
use super::store::RecordStore;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    ScoreDistribution,
    ScoreVsStrength,
    Heatmap,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::ScoreDistribution, PlotKind::ScoreVsStrength, PlotKind::Heatmap];
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRow {
    pub world: String,
    pub metric: String,
    pub method: String,
    pub summary: QuantileSummary,
}

/// Quantile summary per `(world, metric, method)` over ok records. Groups
/// without ok records do not appear.
pub fn score_distribution(store: &RecordStore) -> Vec<DistributionRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in store.records().iter().filter(|r| r.is_ok()) {
        groups.entry((r.world.clone(), r.metric.clone(), r.method.clone())).or_default().push(r.value);
    }
    groups
        .into_iter()
        .filter_map(|((world, metric, method), v)| {
            summarize(&v).map(|summary| DistributionRow { world, metric, method, summary })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrengthRow {
    pub world: String,
    pub metric: String,
    pub method: String,
    pub hparam_name: String,
    pub hparam_value: f64,
    pub n: usize,
    pub median: f64,
}

/// Median score per `(world, metric, method, hyperparameter value)`.
pub fn score_vs_strength(store: &RecordStore) -> Vec<StrengthRow> {
    let mut groups: BTreeMap<(String, String, String), BTreeMap<u64, (String, f64, Vec<f64>)>> = BTreeMap::new();
    for r in store.records().iter().filter(|r| r.is_ok()) {
        let key = (r.world.clone(), r.metric.clone(), r.method.clone());
        groups
            .entry(key)
            .or_default()
            .entry(r.hparam_value.to_bits())
            .or_insert_with(|| (r.hparam_name.clone(), r.hparam_value, Vec::new()))
            .2
            .push(r.value);
    }
    let mut rows = Vec::new();
    for ((world, metric, method), by_h) in groups {
        let mut points: Vec<(String, f64, Vec<f64>)> = by_h.into_values().collect();
        points.sort_by(|a, b| a.1.total_cmp(&b.1));
        for (hparam_name, hparam_value, values) in points {
            let s = summarize(&values).expect("groups are non-empty");
            rows.push(StrengthRow {
                world: world.clone(),
                metric: metric.clone(),
                method: method.clone(),
                hparam_name,
                hparam_value,
                n: s.n,
                median: s.median,
            });
        }
    }
    rows
}

fn distribution_tsv(rows: &[DistributionRow]) -> String {
    let mut out = String::from("world\tmetric\tmethod\tn\tmin\tq10\tq25\tmedian\tq75\tq90\tmax\n");
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.world, r.metric, r.method, s.n, s.min, s.q10, s.q25, s.median, s.q75, s.q90, s.max
        );
    }
    out
}

fn strength_tsv(rows: &[StrengthRow]) -> String {
    let mut out = String::from("world\tmetric\tmethod\thparam_name\thparam_value\tn\tmedian\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.world, r.metric, r.method, r.hparam_name, r.hparam_value, r.n, r.median
        );
    }
    out
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

/// Maps `[lo, hi]` onto the plot's vertical pixel range.
struct YScale {
    lo: f64,
    hi: f64,
}

impl YScale {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        Self { lo, hi }
    }

    fn px(&self, v: f64) -> f64 {
        H - MARGIN - (v - self.lo) / (self.hi - self.lo) * (H - 2.0 * MARGIN)
    }

    fn axis(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>",
            H - MARGIN
        );
        for i in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
            let y = self.px(v);
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\">{v:.3}</text>\
                 <line x1=\"{}\" y1=\"{y:.1}\" x2=\"{MARGIN}\" y2=\"{y:.1}\" stroke=\"black\"/>",
                MARGIN - 6.0,
                MARGIN - 3.0
            );
        }
    }
}

/// Box-and-whisker glyphs: whiskers span q10–q90, the box q25–q75, with
/// min/max as dots and a median bar.
fn distribution_svg(title: &str, rows: &[&DistributionRow]) -> String {
    let mut out = svg_open(title);
    let y = YScale::new(rows.iter().flat_map(|r| [r.summary.min, r.summary.max]));
    y.axis(&mut out);
    let slot = (W - 2.0 * MARGIN) / rows.len().max(1) as f64;
    for (i, r) in rows.iter().enumerate() {
        let s = &r.summary;
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let half = (slot * 0.25).min(30.0);
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"{color}\"/>\n\
             <rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.4\" stroke=\"{color}\"/>\n\
             <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"2\"/>\n\
             <circle cx=\"{cx:.1}\" cy=\"{:.1}\" r=\"2\" fill=\"{color}\"/><circle cx=\"{cx:.1}\" cy=\"{:.1}\" r=\"2\" fill=\"{color}\"/>\n\
             <text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            y.px(s.q90),
            y.px(s.q10),
            cx - half,
            y.px(s.q75),
            2.0 * half,
            (y.px(s.q25) - y.px(s.q75)).max(0.5),
            cx - half,
            y.px(s.median),
            cx + half,
            y.px(s.median),
            y.px(s.min),
            y.px(s.max),
            H - MARGIN + 16.0,
            escape(&r.method)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One polyline per method; x is the rank of the hyperparameter value.
fn strength_svg(title: &str, rows: &[&StrengthRow]) -> String {
    let mut out = svg_open(title);
    let y = YScale::new(rows.iter().map(|r| r.median));
    y.axis(&mut out);
    let mut by_method: BTreeMap<&str, Vec<&StrengthRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(&r.method).or_default().push(r);
    }
    for (i, (method, pts)) in by_method.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let step = (W - 2.0 * MARGIN) / (pts.len().max(2) - 1) as f64;
        let coords: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(j, p)| format!("{:.1},{:.1}", MARGIN + step * j as f64, y.px(p.median)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            coords.join(" ")
        );
        for (j, p) in pts.iter().enumerate() {
            let x = MARGIN + step * j as f64;
            let _ = writeln!(
                out,
                "<circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\
                 <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{color}\">{}={}</text>",
                y.px(p.median),
                H - MARGIN + 16.0 + 14.0 * i as f64,
                escape(&p.hparam_name),
                p.hparam_value
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>",
            W - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64,
            escape(method)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Diverging blue–white–red cells for ρ in `[−1, 1]`; missing cells grey.
fn heatmap_svg(m: &LabeledMatrix) -> String {
    let mut out = svg_open(&m.axis.label());
    let n = m.labels.len().max(1);
    let cell = ((W.min(H) - 2.0 * MARGIN) / n as f64).min(48.0);
    let x0 = MARGIN * 2.0;
    for (i, row) in m.values.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            x0 - 4.0,
            MARGIN + cell * (i as f64 + 0.6),
            escape(&m.labels[i])
        );
        for (j, v) in row.iter().enumerate() {
            let fill = match v {
                Some(r) => {
                    let t = r.clamp(-1.0, 1.0);
                    let (red, blue) = if t >= 0.0 { (255.0, 255.0 * (1.0 - t)) } else { (255.0 * (1.0 + t), 255.0) };
                    let green = 255.0 * (1.0 - t.abs());
                    format!("rgb({},{},{})", red as u8, green as u8, blue as u8)
                }
                None => "#cccccc".to_string(),
            };
            let label = v.map_or("NA".to_string(), |r| format!("{r:.2}"));
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{fill}\" stroke=\"white\"/>\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\">{label}</text>",
                x0 + cell * j as f64,
                MARGIN + cell * i as f64,
                x0 + cell * (j as f64 + 0.5),
                MARGIN + cell * (i as f64 + 0.6)
            );
        }
    }
    for (j, l) in m.labels.iter().enumerate() {
        let x = x0 + cell * (j as f64 + 0.5);
        let y = MARGIN + cell * n as f64 + 8.0;
        let _ = writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" transform=\"rotate(45 {x:.1} {y:.1})\">{}</text>",
            escape(l)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn write(dir: &Path, name: &str, content: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, content)?;
    written.push(p);
    Ok(())
}

/// All rank-correlation matrices of a store: one across worlds per metric and
/// one across metrics per world.
pub fn all_correlation_matrices(store: &RecordStore) -> Result<Vec<LabeledMatrix>> {
    let mut axes: Vec<CorrelationAxis> =
        store.metrics().into_iter().map(|m| CorrelationAxis::AcrossWorlds { metric: m.to_string() }).collect();
    axes.extend(store.worlds().into_iter().map(|w| CorrelationAxis::Metrics { world: w.to_string() }));
    axes.iter().map(|a| rank_correlation_matrix(store, a)).collect()
}

/// Writes the TSV data and SVG charts of one plot kind into `dir` and returns
/// the written paths.
pub fn export_plots(store: &RecordStore, kind: PlotKind, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match kind {
        PlotKind::ScoreDistribution => {
            let rows = score_distribution(store);
            write(dir, "score_distribution.tsv", &distribution_tsv(&rows), &mut written)?;
            let mut panels: BTreeMap<(&str, &str), Vec<&DistributionRow>> = BTreeMap::new();
            for r in &rows {
                panels.entry((&r.world, &r.metric)).or_default().push(r);
            }
            for ((world, metric), rs) in panels {
                let name = format!("score_distribution_{}_{}.svg", file_safe(world), file_safe(metric));
                write(dir, &name, &distribution_svg(&format!("{metric} on {world}"), &rs), &mut written)?;
            }
        }
        PlotKind::ScoreVsStrength => {
            let rows = score_vs_strength(store);
            write(dir, "score_vs_strength.tsv", &strength_tsv(&rows), &mut written)?;
            let mut panels: BTreeMap<(&str, &str), Vec<&StrengthRow>> = BTreeMap::new();
            for r in &rows {
                panels.entry((&r.world, &r.metric)).or_default().push(r);
            }
            for ((world, metric), rs) in panels {
                let name = format!("score_vs_strength_{}_{}.svg", file_safe(world), file_safe(metric));
                write(dir, &name, &strength_svg(&format!("median {metric} on {world}"), &rs), &mut written)?;
            }
        }
        PlotKind::Heatmap => {
            for m in all_correlation_matrices(store)? {
                let stem = format!("heatmap_{}", file_safe(&m.axis.label()));
                write(dir, &format!("{stem}.tsv"), &m.to_tsv(), &mut written)?;
                write(dir, &format!("{stem}.svg"), &heatmap_svg(&m), &mut written)?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::store::{ScoreRecord, Status};

    fn rec(run: &str, method: &str, h: f64, metric: &str, value: f64, status: Status) -> ScoreRecord {
        ScoreRecord {
            run_id: run.into(),
            world: "w".into(),
            method: method.into(),
            hparam_name: "beta".into(),
            hparam_value: h,
            seed: 0,
            metric: metric.into(),
            value,
            status,
        }
    }

    #[test]
    fn failed_only_groups_are_dropped() {
        let mut st = RecordStore::new();
        st.append(
            vec![
                rec("a", "beta_vae", 1.0, "mig", 0.3, Status::Ok),
                rec("b", "beta_tcvae", 1.0, "mig", f64::NAN, Status::Failed),
            ],
            false,
        )
        .unwrap();
        let rows = score_distribution(&st);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].summary.median, 0.3);
        assert!(!distribution_tsv(&rows).contains("beta_tcvae"));
    }

    #[test]
    fn strength_series_sorted_by_value() {
        let mut st = RecordStore::new();
        st.append(
            vec![
                rec("a", "beta_vae", 16.0, "mig", 0.1, Status::Ok),
                rec("b", "beta_vae", 2.0, "mig", 0.4, Status::Ok),
                rec("c", "beta_vae", 2.0, "mig", 0.2, Status::Ok),
            ],
            false,
        )
        .unwrap();
        let rows = score_vs_strength(&st);
        assert_eq!(rows.iter().map(|r| (r.hparam_value, r.n)).collect::<Vec<_>>(), vec![(2.0, 2), (16.0, 1)]);
        assert_eq!(rows[0].median, 0.2);
    }

    #[test]
    fn exports_tsv_and_svg() {
        let dir = tempfile::tempdir().unwrap();
        let mut st = RecordStore::new();
        st.append(
            (0..6)
                .map(|i| rec(&format!("r{i}"), "beta_vae", 1.0 + (i % 2) as f64, "mig", i as f64 / 10.0, Status::Ok))
                .collect(),
            false,
        )
        .unwrap();
        for kind in PlotKind::ALL {
            let files = export_plots(&st, kind, dir.path()).unwrap();
            assert!(files.iter().any(|p| p.extension().unwrap() == "tsv"));
            for svg in files.iter().filter(|p| p.extension().unwrap() == "svg") {
                let text = fs::read_to_string(svg).unwrap();
                assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
            }
        }
    }
}
