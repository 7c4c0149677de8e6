//! Minimal SVG charts: loss curves from `metrics.tsv` and bar charts with
//! error bars from report tables.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

use crate::commands::UsageError;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

struct Bar {
    label: String,
    value: f64,
    err: f64,
}

pub fn plot(input: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let name = input.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let svg = if name.ends_with(".tsv") {
        loss_chart(&parse_tsv(&text)?, name)
    } else if name.ends_with(".json") {
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
        let (bars, y_label) = bars_from_json(&v)?;
        bar_chart(&bars, name, y_label)
    } else {
        bail!(UsageError(format!("cannot plot {name}: expected a .tsv metrics log or a .json report")));
    };
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))
}

/// `(step, loss)` pairs from a metrics log with a header row.
fn parse_tsv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    let (Some(si), Some(li)) = (header.iter().position(|h| *h == "step"), header.iter().position(|h| *h == "loss")) else {
        bail!(UsageError("metrics log needs `step` and `loss` columns".into()));
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let get = |i: usize| f.get(i).and_then(|s| s.parse::<f64>().ok()).context("malformed metrics row");
            Ok((get(si)?, get(li)?))
        })
        .collect()
}

fn report_bar(label: String, r: &Value) -> Option<Bar> {
    Some(Bar {
        label,
        value: r.get("mean")?.as_f64()?,
        err: r.get("std")?.as_f64()?,
    })
}

fn bars_from_json(v: &Value) -> Result<(Vec<Bar>, &'static str)> {
    let single = [v.clone()];
    let items: &[Value] = match v {
        Value::Array(a) => a,
        Value::Object(_) => &single,
        _ => bail!(UsageError("expected a JSON report or an array of them".into())),
    };
    let mut bars = Vec::new();
    let mut y_label = "metric (lower is better)";
    for item in items {
        if let Some(rows) = item.get("rows").and_then(Value::as_array) {
            let method = item.get("method").and_then(Value::as_str).unwrap_or("?");
            for row in rows {
                let variant = row.get("variant").and_then(Value::as_u64).unwrap_or(0);
                if let Some(b) = row.get("report").and_then(|r| report_bar(format!("{method} v{variant}"), r)) {
                    bars.push(b);
                }
            }
        } else if let Some(res) = item.get("result") {
            let method = item.get("method").and_then(Value::as_str).unwrap_or("?").to_string();
            let mi = res.get("Ok").and_then(|r| r.get("mi")).and_then(Value::as_f64).unwrap_or(0.0);
            bars.push(Bar {
                label: method,
                value: mi,
                err: 0.0,
            });
            y_label = "mutual information (nats)";
        } else if let Some(b) = report_bar(item.get("method").and_then(Value::as_str).unwrap_or("?").to_string(), item) {
            bars.push(b);
        }
    }
    if bars.is_empty() {
        bail!(UsageError("no plottable rows in report".into()));
    }
    Ok((bars, y_label))
}

fn header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>", W / 2.0, escape(title));
    let _ = writeln!(
        s,
        "<path d=\"M{MARGIN} {MARGIN} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        H - MARGIN,
        W - MARGIN / 2.0
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn loss_chart(points: &[(f64, f64)], title: &str) -> String {
    let mut s = header(title);
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(_, l)| l.is_finite() && *l > 0.0).collect();
    if !finite.is_empty() {
        let x_max = finite.iter().map(|p| p.0).fold(1.0, f64::max);
        let logs: Vec<f64> = finite.iter().map(|p| p.1.log10()).collect();
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil().max(lo + 1.0);
        let px = |x: f64| MARGIN + x / x_max * (W - 1.5 * MARGIN);
        let py = |l: f64| H - MARGIN - (l - lo) / (hi - lo) * (H - 2.0 * MARGIN);
        let mut d = String::new();
        for (i, ((x, _), l)) in finite.iter().zip(&logs).enumerate() {
            let _ = write!(d, "{}{:.1} {:.1} ", if i == 0 { "M" } else { "L" }, px(*x), py(*l));
        }
        let _ = writeln!(s, "<path d=\"{}\" stroke=\"steelblue\" fill=\"none\" stroke-width=\"1\"/>", d.trim_end());
        let mut e = lo as i32;
        while e as f64 <= hi {
            let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">1e{e}</text>", MARGIN - 4.0, py(e as f64) + 4.0);
            e += 1;
        }
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x_max}</text>", W - MARGIN / 2.0, H - MARGIN + 16.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>", W / 2.0, H - 20.0);
    let _ = writeln!(s, "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">loss</text>", H / 2.0, H / 2.0);
    s.push_str("</svg>\n");
    s
}

fn bar_chart(bars: &[Bar], title: &str, y_label: &str) -> String {
    let mut s = header(title);
    let top = bars.iter().map(|b| b.value + b.err).fold(0.0, f64::max).max(1e-12) * 1.1;
    let slot = (W - 1.5 * MARGIN) / bars.len() as f64;
    let py = |v: f64| H - MARGIN - v / top * (H - 2.0 * MARGIN);
    for (i, b) in bars.iter().enumerate() {
        let x = MARGIN + i as f64 * slot + slot * 0.15;
        let w = slot * 0.7;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{w:.1}\" height=\"{:.1}\" fill=\"steelblue\"/>",
            py(b.value),
            py(0.0) - py(b.value)
        );
        if b.err > 0.0 {
            let cx = x + w / 2.0;
            let _ = writeln!(
                s,
                "<path d=\"M{cx:.1} {:.1} V{:.1}\" stroke=\"black\"/>",
                py(b.value + b.err),
                py((b.value - b.err).max(0.0))
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"end\" transform=\"rotate(-30 {:.1} {})\">{}</text>",
            x + w / 2.0,
            H - MARGIN + 14.0,
            x + w / 2.0,
            H - MARGIN + 14.0,
            escape(&b.label)
        );
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.4}</text>", x + w / 2.0, py(b.value) - 4.0, b.value);
    }
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s.push_str("</svg>\n");
    s
}
