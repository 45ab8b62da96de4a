//! SVG trajectory panels.

use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::Result;
use plotters::prelude::*;

use ecoroute::TripSolution;

const SIZE: (u32, u32) = (960, 420);
const FONT: (&str, u32) = ("sans-serif", 18);

/// One solution node on a common trip clock.
struct Row {
    t_min: f64,
    soc: f64,
    temp_c: f64,
    p_b_kw: f64,
    p_hvch_kw: f64,
    p_hvac_kw: f64,
    p_grid_kw: f64,
}

/// Driving nodes are timed with the same trapezoidal rule as the solver;
/// charging nodes sit at `tau * t_chg` after arrival.
fn timeline(sol: &TripSolution) -> Vec<Row> {
    let mut rows = Vec::new();
    let mut t = 0.0;
    for (i, seg) in sol.segments.iter().enumerate() {
        for k in 0..seg.len() {
            if k > 0 {
                t += (seg.s_m[k] - seg.s_m[k - 1]) * 0.5 * (1.0 / seg.v_mps[k] + 1.0 / seg.v_mps[k - 1]);
            }
            rows.push(Row {
                t_min: t / 60.0,
                soc: seg.soc[k],
                temp_c: seg.temp_c[k],
                p_b_kw: seg.p_b_w[k] / 1e3,
                p_hvch_kw: seg.p_hvch_w[k] / 1e3,
                p_hvac_kw: seg.p_hvac_w[k] / 1e3,
                p_grid_kw: 0.0,
            });
        }
        if let Some(stop) = sol.stops.get(i) {
            let t0 = t;
            for j in 0..stop.tau.len() {
                t = t0 + stop.tau[j] * stop.t_chg_s;
                rows.push(Row {
                    t_min: t / 60.0,
                    soc: stop.soc[j],
                    temp_c: stop.temp_c[j],
                    p_b_kw: stop.p_b_w[j] / 1e3,
                    p_hvch_kw: stop.p_hvch_w[j] / 1e3,
                    p_hvac_kw: stop.p_hvac_w[j] / 1e3,
                    p_grid_kw: stop.p_grid_w[j] / 1e3,
                });
            }
        }
    }
    rows
}

fn span(values: impl Iterator<Item = f64>) -> Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-3 * hi.abs().max(1.0));
    lo - pad..hi + pad
}

type Series = (&'static str, RGBColor, Vec<(f64, f64)>);

/// Line chart of several series sharing one axis pair.
fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let xs = span(series.iter().flat_map(|s| s.2.iter().map(|p| p.0)));
    let ys = span(series.iter().flat_map(|s| s.2.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, FONT)
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(xs, ys)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw()?;
    for (label, color, pts) in series {
        let color = *color;
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
            .label(*label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    if series.len() > 1 {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    }
    root.present()?;
    Ok(())
}

/// Speed and its limits over distance, with the altitude on a second axis.
fn speed_chart(path: &Path, sol: &TripSolution) -> Result<()> {
    let mut v = Vec::new();
    let mut vmin = Vec::new();
    let mut vmax = Vec::new();
    let mut alt = Vec::new();
    for seg in &sol.segments {
        for k in 0..seg.len() {
            let s = seg.s_m[k] / 1e3;
            v.push((s, seg.v_mps[k] * 3.6));
            vmin.push((s, seg.vmin_mps[k] * 3.6));
            vmax.push((s, seg.vmax_mps[k] * 3.6));
            alt.push((s, seg.altitude_m[k]));
        }
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let xs = span(v.iter().map(|p| p.0));
    let ys = span(v.iter().chain(&vmin).chain(&vmax).map(|p| p.1));
    let alts = span(alt.iter().map(|p| p.1));
    let mut chart = ChartBuilder::on(&root)
        .caption("Speed profile", FONT)
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .right_y_label_area_size(70)
        .build_cartesian_2d(xs.clone(), ys)?
        .set_secondary_coord(xs, alts);
    chart.configure_mesh().x_desc("distance [km]").y_desc("speed [km/h]").draw()?;
    chart.configure_secondary_axes().y_desc("altitude [m]").draw()?;
    let lines: [(&str, RGBColor, &Vec<(f64, f64)>); 3] =
        [("speed", BLUE, &v), ("v_min", RGBColor(120, 120, 120), &vmin), ("v_max", BLACK, &vmax)];
    for (label, color, pts) in lines {
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    let brown = RGBColor(150, 90, 30);
    chart
        .draw_secondary_series(LineSeries::new(alt, brown))?
        .label("altitude")
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], brown));
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

/// Write `speed.svg`, `soc.svg`, `temperature.svg` and `powers.svg` into `dir`.
pub fn render_all(sol: &TripSolution, dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = timeline(sol);
    let col = |f: fn(&Row) -> f64| -> Vec<(f64, f64)> { rows.iter().map(|r| (r.t_min, f(r))).collect() };
    let paths: Vec<PathBuf> = ["speed.svg", "soc.svg", "temperature.svg", "powers.svg"]
        .iter()
        .map(|n| dir.join(n))
        .collect();
    speed_chart(&paths[0], sol)?;
    line_chart(&paths[1], "State of charge", "time [min]", "soc [-]", &[("soc", BLUE, col(|r| r.soc))])?;
    line_chart(
        &paths[2],
        "Battery temperature",
        "time [min]",
        "temperature [°C]",
        &[("T_b", RED, col(|r| r.temp_c))],
    )?;
    line_chart(
        &paths[3],
        "Powers",
        "time [min]",
        "power [kW]",
        &[
            ("P_b", BLUE, col(|r| r.p_b_kw)),
            ("P_hvch", RED, col(|r| r.p_hvch_kw)),
            ("P_hvac", CYAN, col(|r| r.p_hvac_kw)),
            ("P_grid", GREEN, col(|r| r.p_grid_kw)),
        ],
    )?;
    Ok(paths)
}
