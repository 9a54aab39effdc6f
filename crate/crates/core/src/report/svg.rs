//! Hand-built SVG figures. Output depends only on the input data, with all
//! coordinates printed at fixed precision.

use std::fmt::Write;

use crate::bias::{DoiPlot, LfkClass, LfkResult};
use crate::ingest::PrismaLedger;
use crate::meta::ProfileLikelihood;

use super::ForestData;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, s: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\">{}</text>",
        escape(s)
    );
}

fn line(out: &mut String, x1: f64, y1: f64, x2: f64, y2: f64, extra: &str) {
    let stroke = if extra.contains("stroke=") { "" } else { " stroke=\"black\"" };
    let _ = writeln!(
        out,
        "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\"{stroke}{extra}/>"
    );
}

/// Linear map from `[lo, hi]` onto `[a, b]`.
fn scale(lo: f64, hi: f64, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    let span = if hi != lo { hi - lo } else { 1.0 };
    move |v| a + (v - lo) / span * (b - a)
}

/// Forest plot on a log risk-ratio axis with square markers sized by weight
/// and a diamond for the pooled estimate.
pub fn forest_svg(forest: &ForestData) -> String {
    let n = forest.rows.len();
    let row_h = 24.0;
    let top = 40.0;
    let height = top + row_h * (n as f64 + 3.0);
    let (plot_left, plot_right) = (260.0, 560.0);
    let width = 760.0;

    let mut lo = forest.pooled_low.min(1.0);
    let mut hi = forest.pooled_high.max(1.0);
    for r in &forest.rows {
        lo = lo.min(r.rr_low);
        hi = hi.max(r.rr_high);
    }
    let sx = scale(lo.ln(), hi.ln(), plot_left, plot_right);

    let mut out = open(width, height);
    text(&mut out, 10.0, 20.0, "start", "Study");
    text(&mut out, 580.0, 20.0, "start", "RR [95% CI]");
    text(&mut out, 710.0, 20.0, "start", "Weight");
    let axis_y = top + row_h * (n as f64 + 1.5);
    line(&mut out, sx(0.0), top - 10.0, sx(0.0), axis_y, " stroke-dasharray=\"4 3\"");

    let max_w = forest.rows.iter().map(|r| r.weight_percent).fold(0.0, f64::max);
    for (i, r) in forest.rows.iter().enumerate() {
        let y = top + row_h * (i as f64 + 0.5);
        text(&mut out, 10.0, y + 4.0, "start", &r.label);
        line(&mut out, sx(r.rr_low.ln()), y, sx(r.rr_high.ln()), y, "");
        let side = if max_w > 0.0 { 4.0 + 8.0 * (r.weight_percent / max_w).sqrt() } else { 6.0 };
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{side:.2}\" height=\"{side:.2}\" fill=\"black\"/>",
            sx(r.rr.ln()) - side / 2.0,
            y - side / 2.0
        );
        text(
            &mut out,
            580.0,
            y + 4.0,
            "start",
            &format!("{:.2} [{:.2}, {:.2}]", r.rr, r.rr_low, r.rr_high),
        );
        text(&mut out, 710.0, y + 4.0, "start", &format!("{:.1}%", r.weight_percent));
    }

    let y = top + row_h * (n as f64 + 0.5);
    let (l, c, h) = (sx(forest.pooled_low.ln()), sx(forest.pooled_rr.ln()), sx(forest.pooled_high.ln()));
    let _ = writeln!(
        out,
        "<polygon points=\"{l:.2},{y:.2} {c:.2},{:.2} {h:.2},{y:.2} {c:.2},{:.2}\" fill=\"black\"/>",
        y - 7.0,
        y + 7.0
    );
    text(&mut out, 10.0, y + 4.0, "start", "Random effects");
    text(
        &mut out,
        580.0,
        y + 4.0,
        "start",
        &format!("{:.2} [{:.2}, {:.2}]", forest.pooled_rr, forest.pooled_low, forest.pooled_high),
    );

    line(&mut out, plot_left, axis_y, plot_right, axis_y, "");
    for tick in [lo, 1.0, hi] {
        let x = sx(tick.ln());
        line(&mut out, x, axis_y, x, axis_y + 5.0, "");
        text(&mut out, x, axis_y + 18.0, "middle", &format!("{tick:.2}"));
    }
    text(
        &mut out,
        10.0,
        axis_y + 18.0,
        "start",
        &format!("tau² = {:.4}; I² = {:.1}%", forest.tau2, forest.i_squared),
    );
    out.push_str("</svg>\n");
    out
}

/// Doi plot: effect on the x axis, folded normal quantile on the y axis
/// (zero at the top), with the LFK index in the caption.
pub fn doi_svg(plot: &DoiPlot, lfk: &LfkResult) -> String {
    let (width, height) = (520.0, 400.0);
    let (left, right, top, bottom) = (60.0, 490.0, 30.0, 340.0);
    let lo = plot.points.iter().map(|p| p.effect).fold(f64::INFINITY, f64::min);
    let hi = plot.points.iter().map(|p| p.effect).fold(f64::NEG_INFINITY, f64::max);
    let zmax = plot.points.iter().map(|p| p.abs_z).fold(0.0, f64::max).max(1e-9);
    let sx = scale(lo, hi, left, right);
    let sy = scale(0.0, zmax, top, bottom);

    let mut out = open(width, height);
    line(&mut out, left, bottom, right, bottom, "");
    line(&mut out, left, top, left, bottom, "");
    let path: Vec<String> = plot
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx(p.effect), sy(p.abs_z)))
        .collect();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"black\"/>",
        path.join(" ")
    );
    for (i, p) in plot.points.iter().enumerate() {
        let fill = if i == plot.apex_index { "red" } else { "black" };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{fill}\"><title>{}</title></circle>",
            sx(p.effect),
            sy(p.abs_z),
            escape(&p.study_id)
        );
    }
    text(&mut out, (left + right) / 2.0, bottom + 30.0, "middle", "log risk ratio");
    text(&mut out, 15.0, (top + bottom) / 2.0, "middle", "|Z|");
    let class = match lfk.classification {
        LfkClass::NoAsymmetry => "no asymmetry",
        LfkClass::Minor => "minor asymmetry",
        LfkClass::Major => "major asymmetry",
    };
    text(
        &mut out,
        (left + right) / 2.0,
        18.0,
        "middle",
        &format!("LFK index {:.2} ({class})", lfk.index),
    );
    out.push_str("</svg>\n");
    out
}

/// Restricted log-likelihood curve with the cutoff line and the interval.
pub fn profile_svg(profile: &ProfileLikelihood) -> String {
    let (width, height) = (520.0, 360.0);
    let (left, right, top, bottom) = (70.0, 490.0, 30.0, 300.0);
    let tmax = profile.curve.last().map_or(1.0, |p| p.tau2).max(1e-9);
    let cutoff = profile.max_log_likelihood - profile.critical_value / 2.0;
    let finite = profile.curve.iter().map(|p| p.log_likelihood).filter(|l| l.is_finite());
    let ll_lo = finite.clone().fold(cutoff, f64::min);
    let ll_hi = finite.fold(profile.max_log_likelihood, f64::max);
    let sx = scale(0.0, tmax, left, right);
    let sy = scale(ll_hi, ll_lo, top, bottom);

    let mut out = open(width, height);
    line(&mut out, left, bottom, right, bottom, "");
    line(&mut out, left, top, left, bottom, "");
    let path: Vec<String> = profile
        .curve
        .iter()
        .filter(|p| p.log_likelihood.is_finite())
        .map(|p| format!("{:.2},{:.2}", sx(p.tau2), sy(p.log_likelihood)))
        .collect();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"black\"/>",
        path.join(" ")
    );
    line(&mut out, left, sy(cutoff), right, sy(cutoff), " stroke-dasharray=\"4 3\"");
    for bound in [profile.interval.low, profile.interval.high] {
        let x = sx(bound.min(tmax));
        line(&mut out, x, top, x, bottom, " stroke=\"grey\"");
    }
    text(&mut out, (left + right) / 2.0, bottom + 30.0, "middle", "tau²");
    text(
        &mut out,
        (left + right) / 2.0,
        18.0,
        "middle",
        &format!(
            "peak {:.4}; {:.0}% interval [{:.4}, {:.4}]",
            profile.peak_tau2,
            profile.interval.level * 100.0,
            profile.interval.low,
            profile.interval.high
        ),
    );
    out.push_str("</svg>\n");
    out
}

/// Stacked boxes, one per stage, with exclusions to the right.
pub fn prisma_svg(ledger: &PrismaLedger) -> String {
    let stages = ledger.stages();
    let box_h = 50.0;
    let gap = 30.0;
    let height = 20.0 + (box_h + gap) * stages.len() as f64 + box_h;
    let mut out = open(640.0, height);
    let mut y = 20.0;
    for stage in stages {
        let _ = writeln!(
            out,
            "<rect x=\"20\" y=\"{y:.2}\" width=\"320\" height=\"{box_h:.2}\" fill=\"none\" stroke=\"black\"/>"
        );
        text(&mut out, 180.0, y + 20.0, "middle", &stage.stage_name);
        text(&mut out, 180.0, y + 38.0, "middle", &format!("n = {}", stage.records_in));
        if stage.records_excluded > 0 {
            let _ = writeln!(
                out,
                "<rect x=\"380\" y=\"{y:.2}\" width=\"240\" height=\"{box_h:.2}\" fill=\"none\" stroke=\"black\"/>"
            );
            line(&mut out, 340.0, y + box_h / 2.0, 380.0, y + box_h / 2.0, "");
            text(&mut out, 500.0, y + 20.0, "middle", &format!("excluded n = {}", stage.records_excluded));
            text(&mut out, 500.0, y + 38.0, "middle", &stage.reason);
        }
        line(&mut out, 180.0, y + box_h, 180.0, y + box_h + gap, "");
        y += box_h + gap;
    }
    let _ = writeln!(
        out,
        "<rect x=\"20\" y=\"{y:.2}\" width=\"320\" height=\"{box_h:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    text(
        &mut out,
        180.0,
        y + 30.0,
        "middle",
        &format!("remaining n = {}", ledger.remaining().unwrap_or(0)),
    );
    out.push_str("</svg>\n");
    out
}
