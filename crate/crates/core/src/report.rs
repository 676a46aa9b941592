//! CSV, summary JSON and SVG writers.

use std::fmt::Write as _;

use serde::Serialize;

use crate::harness::{ReplicaResult, RunSummary, StrategyCurve};

pub const CSV_HEADER: &str = "strategy,seed,round,n_labeled,pool_size,test_acc,test_ece,pool_ece,mean_pool_cal_estimate,n_cal_selected,n_unc_selected,wallclock_s";

/// `x` with `digits` significant digits; plain decimal notation unless the
/// magnitude is outside `[1e-5, 1e9)`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci.split('e').nth(1).and_then(|e| e.parse().ok()).unwrap_or(0);
    if !(-5..9).contains(&exp) {
        return sci;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

fn num(x: f64) -> String {
    format_significant(x, 9)
}

/// Rows for the given replicas, header first, LF endings.
pub fn emit_csv(replicas: &[ReplicaResult]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for rep in replicas {
        for r in &rep.records {
            let fields = [
                rep.strategy.name(),
                rep.seed.to_string(),
                r.round.to_string(),
                r.n_labeled.to_string(),
                r.pool_size.to_string(),
                num(r.test_acc),
                num(r.test_ece),
                r.pool_ece.map(num).unwrap_or_default(),
                r.mean_pool_cal_estimate.map(num).unwrap_or_default(),
                r.n_cal_selected.to_string(),
                r.n_unc_selected.to_string(),
                num(r.wallclock_s),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    name: &'a str,
    #[serde(flatten)]
    summary: &'a RunSummary,
    warnings: Vec<String>,
}

pub fn emit_summary(name: &str, summary: &RunSummary, replicas: &[ReplicaResult]) -> String {
    let warnings = replicas
        .iter()
        .filter_map(|r| r.warning.as_ref().map(|w| format!("{} seed {}: {w}", r.strategy, r.seed)))
        .collect();
    let file = SummaryFile {
        name,
        summary,
        warnings,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("summary serializes");
    s.push('\n');
    s
}

/// Which per-round statistic a curve plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveMetric {
    TestAcc,
    TestEce,
    PoolEce,
}

impl CurveMetric {
    pub fn label(&self) -> &'static str {
        match self {
            CurveMetric::TestAcc => "test accuracy",
            CurveMetric::TestEce => "test ECE",
            CurveMetric::PoolEce => "pool ECE",
        }
    }

    pub fn file_stem(&self) -> &'static str {
        match self {
            CurveMetric::TestAcc => "test_acc",
            CurveMetric::TestEce => "test_ece",
            CurveMetric::PoolEce => "pool_ece",
        }
    }

    fn points(&self, curve: &StrategyCurve) -> Vec<(f64, f64, f64)> {
        curve
            .rounds
            .iter()
            .filter_map(|r| {
                let stat = match self {
                    CurveMetric::TestAcc => Some(r.test_acc),
                    CurveMetric::TestEce => Some(r.test_ece),
                    CurveMetric::PoolEce => r.pool_ece,
                }?;
                Some((r.round as f64, stat.mean, stat.std.unwrap_or(0.0)))
            })
            .collect()
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Rounds on x, metric mean on y, one polyline per strategy over a ±1 std band.
pub fn emit_svg(summary: &RunSummary, metric: CurveMetric) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (60.0, 170.0, 20.0, 40.0);
    let series: Vec<(&str, Vec<(f64, f64, f64)>)> = summary
        .curves
        .iter()
        .map(|c| (c.strategy.as_str(), metric.points(c)))
        .collect();
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let x_max = all.clone().map(|p| p.0).fold(1.0, f64::max);
    let mut y_lo = all.clone().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
    let mut y_hi = all.map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    if !y_lo.is_finite() || !y_hi.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + x / x_max * pw;
    let sy = |y: f64| top + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{left:.2},{top:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            left - 6.0,
            sy(v) + 4.0
        );
        let r = x_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{r:.0}</text>"#,
            sx(r),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        left + pw / 2.0,
        h - 6.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        metric.label()
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let upper = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 + p.2)));
        let lower = pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 - p.2)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{name}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
