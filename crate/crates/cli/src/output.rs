//! Artifact writers: per-step CSV and the SVG line plot.
//!
//! Everything here formats floats deterministically (shortest round-trip
//! representation for data, fixed precision for plot geometry), so repeated
//! runs with equal configs produce byte-identical files.

use std::fmt::Write as _;

use lana_core::analysis::Trajectory;

/// Fixed column set, in this order.
pub const CSV_HEADER: &str =
    "t,player,context,kl_to_star,kl_to_tilde,delta_qnorm,winrate_vs_init,exploitability,loss,lemma_slack,flags";

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// One row per (step, player, context), header included.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for record in &traj.records {
        for ctx in &record.contexts {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                record.t,
                record.player,
                ctx.context_id,
                fmt_f64(ctx.kl_to_star),
                fmt_opt(ctx.kl_to_tilde),
                fmt_opt(ctx.delta_qnorm),
                fmt_f64(ctx.winrate_vs_init),
                fmt_f64(ctx.exploitability),
                fmt_opt(ctx.loss),
                fmt_opt(ctx.lemma_slack),
                ctx.flags.render(),
            );
        }
    }
    out
}

const PLOT_WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const PANEL_GAP: f64 = 50.0;
const PLAYER_COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

struct Series<'a> {
    label: String,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

fn panel(out: &mut String, title: &str, series: &[Series<'_>], y_top: f64) {
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0f64, f64::max);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(_, y) in &s.points {
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_lo, y_hi) = (y_min - pad, y_max + pad);

    let x_of = |t: f64| MARGIN_LEFT + (t / x_max) * (PLOT_WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let y_of = |v: f64| y_top + PANEL_HEIGHT - (v - y_lo) / (y_hi - y_lo) * PANEL_HEIGHT;

    let _ = writeln!(
        out,
        r#"  <text x="{MARGIN_LEFT}" y="{:.2}" font-size="13" font-family="monospace">{title}</text>"#,
        y_top - 8.0
    );
    // axes
    let _ = writeln!(
        out,
        r##"  <line x1="{MARGIN_LEFT}" y1="{:.2}" x2="{MARGIN_LEFT}" y2="{:.2}" stroke="#333" stroke-width="1"/>"##,
        y_top,
        y_top + PANEL_HEIGHT
    );
    let _ = writeln!(
        out,
        r##"  <line x1="{MARGIN_LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333" stroke-width="1"/>"##,
        y_top + PANEL_HEIGHT,
        PLOT_WIDTH - MARGIN_RIGHT,
        y_top + PANEL_HEIGHT
    );
    // axis labels
    let _ = writeln!(
        out,
        r#"  <text x="{:.2}" y="{:.2}" font-size="10" font-family="monospace" text-anchor="end">{:.4}</text>"#,
        MARGIN_LEFT - 4.0,
        y_top + 10.0,
        y_hi
    );
    let _ = writeln!(
        out,
        r#"  <text x="{:.2}" y="{:.2}" font-size="10" font-family="monospace" text-anchor="end">{:.4}</text>"#,
        MARGIN_LEFT - 4.0,
        y_top + PANEL_HEIGHT,
        y_lo
    );
    let _ = writeln!(
        out,
        r#"  <text x="{:.2}" y="{:.2}" font-size="10" font-family="monospace" text-anchor="end">t={}</text>"#,
        PLOT_WIDTH - MARGIN_RIGHT,
        y_top + PANEL_HEIGHT + 14.0,
        x_max as usize
    );

    for s in series {
        if s.points.is_empty() {
            continue;
        }
        let mut path = String::new();
        for (i, &(t, v)) in s.points.iter().enumerate() {
            let _ = write!(
                path,
                "{}{:.2},{:.2}",
                if i == 0 { "" } else { " " },
                x_of(t),
                y_of(v)
            );
        }
        let _ = writeln!(
            out,
            r#"  <polyline fill="none" stroke="{}" stroke-width="1.5" points="{path}"/>"#,
            s.color
        );
    }
    // legend
    let mut lx = MARGIN_LEFT + 10.0;
    for s in series {
        let _ = writeln!(
            out,
            r#"  <rect x="{lx:.2}" y="{:.2}" width="10" height="3" fill="{}"/>"#,
            y_top + 6.0,
            s.color
        );
        let _ = writeln!(
            out,
            r#"  <text x="{:.2}" y="{:.2}" font-size="10" font-family="monospace">{}</text>"#,
            lx + 14.0,
            y_top + 11.0,
            s.label
        );
        lx += 110.0;
    }
}

/// Two stacked panels: KL to the equilibrium and win rate against the
/// initial policy, one line per player.
pub fn trajectory_plot_svg(traj: &Trajectory) -> String {
    let height = MARGIN_TOP + 2.0 * PANEL_HEIGHT + PANEL_GAP + 30.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_WIDTH}" height="{height}" viewBox="0 0 {PLOT_WIDTH} {height}">"#
    );
    let _ = writeln!(out, r#"  <rect width="100%" height="100%" fill="white"/>"#);

    let series_of =
        |f: &dyn Fn(&lana_core::analysis::StepRecord) -> f64, label: &str| -> Vec<Series<'_>> {
            (1..=2)
                .map(|player| Series {
                    label: format!("{label} p{player}"),
                    color: PLAYER_COLORS[player - 1],
                    points: traj
                        .records_for(player)
                        .map(|r| (r.t as f64, f(r)))
                        .collect(),
                })
                .collect()
        };

    let kl_series = series_of(&|r| r.kl_to_star_mean, "kl");
    panel(&mut out, "KL(pi*, pi_t) vs t", &kl_series, MARGIN_TOP);

    let win_series = series_of(&|r| r.winrate_vs_init, "winrate");
    panel(
        &mut out,
        "winrate vs initial policy",
        &win_series,
        MARGIN_TOP + PANEL_HEIGHT + PANEL_GAP,
    );

    out.push_str("</svg>\n");
    out
}
