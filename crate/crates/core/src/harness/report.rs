//! Report files: JSON detail, a markdown table and one flow diagram per
//! architecture.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::suite::{Metrics, SuiteReport, ToolOutcome};
use crate::patterns::Architecture;

pub const JSON_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.md";

/// Published figures for the original and PDL-based agents on real models.
/// Shown for orientation only.
pub const REFERENCE_NOTES: [&str; 3] = [
    "gpt-4o: no tool called in 22.4% of runs (original agent) vs 2.4% (PDL agent)",
    "granite: no tool called in 53.5% of runs (original agent) vs 35.4% (PDL agent)",
    "granite: task success about 4 times higher with the PDL agent",
];

pub fn flow_file(arch: Architecture) -> String {
    format!("flow-{}.svg", arch.name())
}

/// Pretty JSON with a trailing newline; byte-stable for equal reports.
pub fn report_json(report: &SuiteReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn read_report(path: &Path) -> std::io::Result<SuiteReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

pub fn markdown_table(report: &SuiteReport) -> String {
    let mut out = String::from("# Architecture comparison\n\n");
    let _ = writeln!(
        out,
        "{} scenario(s) x {} seed(s) per architecture.",
        report.scenarios.len(),
        report.seeds.len()
    );
    match &report.faults {
        Some(f) => {
            let _ = writeln!(
                out,
                "Faults: pMalformedJson={:.3}, pWrongKey={:.3}, pHallucinatedTool={:.3}, pNoTool={:.3}\n",
                f.p_malformed_json, f.p_wrong_key, f.p_hallucinated_tool, f.p_no_tool
            );
        }
        None => out.push_str("Faults: per-scenario settings\n\n"),
    }
    out.push_str(
        "| architecture | runs | task success | tool_called_ok | tool_call_failed | no_tool_called | failed or no tool |\n",
    );
    out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    for (arch, m) in &report.metrics {
        let _ = writeln!(
            out,
            "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |",
            arch,
            m.n,
            m.success_rate,
            m.fraction(ToolOutcome::ToolCalledOk),
            m.fraction(ToolOutcome::ToolCallFailed),
            m.fraction(ToolOutcome::NoToolCalled),
            m.failure_rate()
        );
    }
    out.push_str("\nReference figures from real-model runs (not comparable to the synthetic runs above):\n\n");
    for note in REFERENCE_NOTES {
        let _ = writeln!(out, "- {note}");
    }
    out
}

const OUTCOME_COLORS: [(ToolOutcome, &str); 3] = [
    (ToolOutcome::ToolCalledOk, "#4c9f70"),
    (ToolOutcome::ToolCallFailed, "#d08c2f"),
    (ToolOutcome::NoToolCalled, "#c8553d"),
];

/// Sankey-style diagram: tool outcome (left) to task result (right).
pub fn flow_svg(arch: Architecture, m: &Metrics) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const TOP: f64 = 50.0;
    const BAND: f64 = 260.0;
    const GAP: f64 = 12.0;
    const NODE_W: f64 = 18.0;
    const LEFT_X: f64 = 150.0;
    const RIGHT_X: f64 = 470.0;

    let mut counts: BTreeMap<(ToolOutcome, bool), usize> = BTreeMap::new();
    for c in m.by_scenario.values() {
        *counts.entry((c.tool_outcome, c.task_success)).or_default() += 1;
    }
    let n = m.n.max(1) as f64;
    let scale = BAND / n;
    let left_total = |o: ToolOutcome| {
        counts.get(&(o, true)).unwrap_or(&0) + counts.get(&(o, false)).unwrap_or(&0)
    };
    let right_total = |ok: bool| -> usize {
        ToolOutcome::ALL
            .iter()
            .map(|o| counts.get(&(*o, ok)).copied().unwrap_or(0))
            .sum()
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{arch}: tool outcome to task result (n={})</text>"#,
        W / 2.0,
        m.n
    );

    let mut left_y = BTreeMap::new();
    let mut y = TOP;
    for (o, color) in OUTCOME_COLORS {
        let h = left_total(o) as f64 * scale;
        left_y.insert(o, y);
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT_X:.1}" y="{y:.2}" width="{NODE_W:.1}" height="{h:.2}" fill="{color}"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{} {:.1}%</text>"#,
            LEFT_X - 6.0,
            y + h / 2.0 + 4.0,
            o.name(),
            100.0 * left_total(o) as f64 / n
        );
        y += h + GAP;
    }
    let mut right_y = BTreeMap::new();
    let mut y = TOP;
    for (ok, label, color) in [(true, "success", "#3b6ea5"), (false, "failure", "#7a7a7a")] {
        let h = right_total(ok) as f64 * scale;
        right_y.insert(ok, y);
        let _ = writeln!(
            svg,
            r#"<rect x="{RIGHT_X:.1}" y="{y:.2}" width="{NODE_W:.1}" height="{h:.2}" fill="{color}"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.2}">{label} {:.1}%</text>"#,
            RIGHT_X + NODE_W + 6.0,
            y + h / 2.0 + 4.0,
            100.0 * right_total(ok) as f64 / n
        );
        y += h + GAP;
    }

    for (o, color) in OUTCOME_COLORS {
        for ok in [true, false] {
            let c = counts.get(&(o, ok)).copied().unwrap_or(0);
            if c == 0 {
                continue;
            }
            let h = c as f64 * scale;
            let (y0, y1) = (left_y[&o], right_y[&ok]);
            let (x0, x1) = (LEFT_X + NODE_W, RIGHT_X);
            let mid = (x0 + x1) / 2.0;
            let _ = writeln!(
                svg,
                r#"<path d="M{x0:.1},{y0:.2} C{mid:.1},{y0:.2} {mid:.1},{y1:.2} {x1:.1},{y1:.2} L{x1:.1},{:.2} C{mid:.1},{:.2} {mid:.1},{:.2} {x0:.1},{:.2} Z" fill="{color}" fill-opacity="0.45"><title>{} to {}: {c}</title></path>"#,
                y1 + h,
                y1 + h,
                y0 + h,
                y0 + h,
                o.name(),
                if ok { "success" } else { "failure" },
            );
            *left_y.get_mut(&o).expect("node") += h;
            *right_y.get_mut(&ok).expect("node") += h;
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the JSON report, the table and one SVG per architecture into
/// `out`, creating it if needed. Returns the written paths.
pub fn render_report(report: &SuiteReport, out: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> std::io::Result<()> {
        let p = out.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put(JSON_FILE, report_json(report))?;
    put(TABLE_FILE, markdown_table(report))?;
    for (arch, m) in &report.metrics {
        put(&flow_file(*arch), flow_svg(*arch, m))?;
    }
    Ok(written)
}
