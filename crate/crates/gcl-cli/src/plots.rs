//! SVG line charts for closure curves: mean C against edge length with
//! shaded confidence bands, one line per curve, legend in input order.
//! The emitter is a pure function of its input, so identical curves
//! always produce identical SVG text.

use anyhow::{bail, Result};
use gcl_core::ClosureCurve;
use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed", "#0891b2", "#be185d", "#4d7c0f",
];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick step of the form {1, 2, 2.5, 5} x 10^k closest to `raw` from above.
fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.abs().log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if m * mag >= raw {
            return m * mag;
        }
    }
    10.0 * mag
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor() as i32).max(0) as usize
    };
    format!("{v:.decimals$}")
}

struct Scale {
    dmin: f64,
    dmax: f64,
    rmin: f64,
    rmax: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        self.rmin + (v - self.dmin) / (self.dmax - self.dmin) * (self.rmax - self.rmin)
    }
}

/// Renders the curves into one chart. Legend labels are the model ids,
/// disambiguated by layer when ids repeat; input order is preserved.
pub fn plot_curves(curves: &[ClosureCurve], title: &str) -> Result<String> {
    if curves.is_empty() || curves.iter().all(|c| c.points.is_empty()) {
        bail!("no curve points to plot");
    }

    let mut edges: Vec<u8> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.edge_length))
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for p in curves.iter().flat_map(|c| &c.points) {
        for v in [p.mean_c, p.ci_lo, p.ci_hi] {
            ymin = ymin.min(v);
            ymax = ymax.max(v);
        }
    }
    ymin = ymin.min(0.0);
    ymax = ymax.max(0.0);
    if ymax - ymin < 1e-9 {
        ymin -= 0.1;
        ymax += 0.1;
    }
    let pad = (ymax - ymin) * 0.08;
    ymin -= pad;
    ymax += pad;

    let xmax = f64::from(*edges.last().unwrap());
    let x = Scale { dmin: 0.0, dmax: xmax + 3.0, rmin: MARGIN_L, rmax: WIDTH - MARGIN_R };
    // y grows downward in SVG, so the range is flipped
    let y = Scale { dmin: ymin, dmax: ymax, rmin: HEIGHT - MARGIN_B, rmax: MARGIN_T };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"##
    );
    let _ = writeln!(s, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"<text x="{}" y="28" text-anchor="middle" font-family="sans-serif" font-size="16" fill="#111827">{}</text>"##,
        fmt(WIDTH / 2.0),
        xml_escape(title)
    );

    // y gridlines and ticks
    let step = nice_step((ymax - ymin) / 5.0);
    let mut tick = (ymin / step).ceil() * step;
    while tick <= ymax + 1e-12 {
        let py = y.map(tick);
        let zero = tick.abs() < step * 1e-6;
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="{}"/>"##,
            fmt(MARGIN_L),
            fmt(py),
            fmt(WIDTH - MARGIN_R),
            fmt(py),
            if zero { "#6b7280" } else { "#e5e7eb" },
            if zero { "1.5" } else { "1" },
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="12" fill="#374151">{}</text>"##,
            fmt(MARGIN_L - 8.0),
            fmt(py + 4.0),
            tick_label(tick, step)
        );
        tick += step;
    }

    // x ticks at the edge lengths present in the data
    for &e in &edges {
        let px = x.map(f64::from(e));
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#9ca3af" stroke-width="1"/>"##,
            fmt(px),
            fmt(HEIGHT - MARGIN_B),
            fmt(px),
            fmt(HEIGHT - MARGIN_B + 6.0),
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" fill="#374151">{e}</text>"##,
            fmt(px),
            fmt(HEIGHT - MARGIN_B + 20.0),
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#374151" stroke-width="1"/>"##,
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B),
        fmt(WIDTH - MARGIN_R),
        fmt(HEIGHT - MARGIN_B),
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" fill="#111827">edge length (px)</text>"##,
        fmt((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        fmt(HEIGHT - 12.0),
    );
    let _ = writeln!(
        s,
        r##"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" fill="#111827" transform="rotate(-90 18 {})">mean C</text>"##,
        fmt((MARGIN_T + HEIGHT - MARGIN_B) / 2.0),
        fmt((MARGIN_T + HEIGHT - MARGIN_B) / 2.0),
    );

    let ids_repeat = {
        let mut ids: Vec<&str> = curves.iter().map(|c| c.model_id.as_str()).collect();
        ids.sort_unstable();
        ids.windows(2).any(|w| w[0] == w[1])
    };

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // confidence band: upper edge forward, lower edge back
        let mut d = String::new();
        for (j, p) in curve.points.iter().enumerate() {
            let cmd = if j == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{},{} ", fmt(x.map(f64::from(p.edge_length))), fmt(y.map(p.ci_hi)));
        }
        for p in curve.points.iter().rev() {
            let _ = write!(d, "L{},{} ", fmt(x.map(f64::from(p.edge_length))), fmt(y.map(p.ci_lo)));
        }
        d.push('Z');
        let _ = writeln!(s, r##"<path d="{d}" fill="{color}" fill-opacity="0.15" stroke="none"/>"##);

        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{},{}", fmt(x.map(f64::from(p.edge_length))), fmt(y.map(p.mean_c))))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"##,
            pts.join(" ")
        );
        for p in &curve.points {
            let _ = writeln!(
                s,
                r##"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"##,
                fmt(x.map(f64::from(p.edge_length))),
                fmt(y.map(p.mean_c)),
            );
        }
    }

    // legend, top-right, input order
    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = if ids_repeat {
            format!("{}/{}", curve.model_id, curve.layer)
        } else {
            curve.model_id.clone()
        };
        let ly = MARGIN_T + 10.0 + i as f64 * 18.0;
        let lx = WIDTH - MARGIN_R - 190.0;
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/>"##,
            fmt(lx),
            fmt(ly - 10.0),
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="#111827">{}</text>"##,
            fmt(lx + 18.0),
            fmt(ly),
            xml_escape(&label)
        );
    }

    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use gcl_core::closure::CurvePoint;

    fn curve(model_id: &str, means: &[f64]) -> ClosureCurve {
        let edges = [3u8, 8, 13, 18, 24, 29];
        ClosureCurve {
            model_id: model_id.into(),
            layer: "fc_finale".into(),
            points: edges
                .iter()
                .zip(means)
                .map(|(&e, &m)| CurvePoint {
                    edge_length: e,
                    mean_c: m,
                    ci_lo: m - 0.05,
                    ci_hi: m + 0.05,
                    n: 128,
                    ci_defined: true,
                })
                .collect(),
        }
    }

    #[test]
    fn two_condition_chart_has_six_ticks_and_two_lines() {
        let curves = vec![
            curve("cd_pooled", &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            curve("bd_pooled", &[0.0, 0.01, -0.01, 0.0, 0.01, 0.0]),
        ];
        let svg = plot_curves(&curves, "sanity").unwrap();
        for e in [3, 8, 13, 18, 24, 29] {
            assert!(svg.contains(&format!(">{e}</text>")), "missing x tick {e}");
        }
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("fill-opacity").count(), 2);
        assert!(svg.contains("cd_pooled") && svg.contains("bd_pooled"));
        // legend preserves input order: cd listed above bd
        assert!(svg.find("cd_pooled").unwrap() < svg.find("bd_pooled").unwrap());
    }

    #[test]
    fn flat_zero_curve_is_horizontal_on_the_zero_line() {
        let c = curve("flat", &[0.0; 6]);
        let svg = plot_curves(&[c], "flat").unwrap();
        let line = svg
            .lines()
            .find(|l| l.starts_with("<polyline"))
            .expect("polyline present");
        let ys: Vec<&str> = line
            .split_whitespace()
            .filter_map(|t| t.split(',').nth(1))
            .map(|y| y.trim_end_matches('"'))
            .collect();
        assert_eq!(ys.len(), 6);
        assert!(ys.iter().all(|y| *y == ys[0]), "line not horizontal: {ys:?}");
        // the heavier zero gridline sits at the same height
        let zero_grid = svg
            .lines()
            .find(|l| l.contains("#6b7280"))
            .expect("zero gridline present");
        assert!(zero_grid.contains(&format!(r##"y1="{}""##, ys[0])));
    }

    #[test]
    fn output_is_stable_and_legend_orders_layers_shallow_to_deep() {
        let curves = vec![
            curve("layerwise_conv2d_1", &[0.0; 6]),
            curve("layerwise_conv2d_2", &[0.1; 6]),
            curve("layerwise_conv2d_3", &[0.2; 6]),
            curve("layerwise_fc_finale", &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]),
        ];
        let a = plot_curves(&curves, "layers").unwrap();
        let b = plot_curves(&curves, "layers").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("<polyline").count(), 4);
        let pos: Vec<usize> = ["conv2d_1", "conv2d_2", "conv2d_3", "fc_finale"]
            .iter()
            .map(|l| a.find(&format!("layerwise_{l}</text>")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(plot_curves(&[], "nothing").is_err());
        let empty = ClosureCurve { model_id: "m".into(), layer: "l".into(), points: vec![] };
        assert!(plot_curves(&[empty], "nothing").is_err());
    }
}
