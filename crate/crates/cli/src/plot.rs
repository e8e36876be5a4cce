//! SVG figures drawn from the CSV logs of a run. Nothing here re-simulates.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use aerial_formation::sim::log::{
    read_csv, ImageRow, MonitorRow, RobotRow, UavMonitorRow, UavRow, IMAGE_FILE, MONITOR_FILE, ROBOTS_FILE,
    UAVS_FILE, UAV_MONITOR_FILE,
};
use anyhow::{anyhow, bail, Context, Result};
use plotters::coord::Shift;
use plotters::prelude::*;
use serde::de::DeserializeOwned;

use crate::group_by;

pub const PATHS_FILE: &str = "paths.svg";
pub const VELOCITIES_FILE: &str = "velocities.svg";
pub const COST_FILE: &str = "cost.svg";
pub const PARTIAL_FILE: &str = "partial_similarity.svg";
pub const IMAGE_TRACES_FILE: &str = "image_traces.svg";

const SIZE: (u32, u32) = (900, 700);

// plotters errors borrow the backend, so they cannot travel inside anyhow as is
fn plot_err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!("drawing failed: {e}")
}

fn load<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let path = dir.join(name);
    if !path.exists() {
        bail!("missing log {}", path.display());
    }
    let rows: Vec<T> = read_csv(&path).with_context(|| format!("reading {}", path.display()))?;
    if rows.is_empty() {
        bail!("log {} has no rows", path.display());
    }
    Ok(rows)
}

fn color(i: usize) -> RGBColor {
    let c = Palette99::pick(i).to_rgba();
    RGBColor(c.0, c.1, c.2)
}

fn bounds<I: IntoIterator<Item = f64>>(values: I) -> Range<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad)..(hi + pad)
}

type Area<'a> = DrawingArea<SVGBackend<'a>, Shift>;

fn series_panel(
    area: &Area,
    title: &str,
    y_label: &str,
    series: &BTreeMap<u32, Vec<(f64, f64)>>,
    prefix: &str,
) -> Result<()> {
    let x = bounds(series.values().flatten().map(|p| p.0));
    let y = bounds(series.values().flatten().map(|p| p.1));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(x, y).map_err(plot_err)?;
    chart.configure_mesh().x_desc("time [s]").y_desc(y_label).draw().map_err(plot_err)?;
    for (i, (id, pts)) in series.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), &c)).map_err(plot_err)?
            .label(format!("{prefix} {id}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], c));
    }
    if series.len() <= 8 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw().map_err(plot_err)?;
    }
    Ok(())
}

fn paths(dir: &Path, out: &Path) -> Result<PathBuf> {
    let robots = group_by(load::<RobotRow>(dir, ROBOTS_FILE)?, |r| r.robot_id);
    let uavs = group_by(load::<UavRow>(dir, UAVS_FILE)?, |r| r.uav_id);
    let file = out.join(PATHS_FILE);
    let root = SVGBackend::new(&file, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let xs = robots.values().flatten().map(|r| r.x).chain(uavs.values().flatten().map(|u| u.x));
    let ys = robots.values().flatten().map(|r| r.y).chain(uavs.values().flatten().map(|u| u.y));
    let mut chart = ChartBuilder::on(&root)
        .caption("Ground paths", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(bounds(xs), bounds(ys)).map_err(plot_err)?;
    chart.configure_mesh().x_desc("x [m]").y_desc("y [m]").draw().map_err(plot_err)?;

    for (i, (_, rows)) in robots.iter().enumerate() {
        chart.draw_series(LineSeries::new(rows.iter().map(|r| (r.x, r.y)), &color(i))).map_err(plot_err)?;
        let first = &rows[0];
        chart.draw_series(std::iter::once(Circle::new((first.x, first.y), 3, color(i).filled()))).map_err(plot_err)?;
    }
    for rows in uavs.values() {
        chart.draw_series(LineSeries::new(rows.iter().map(|u| (u.x, u.y)), BLACK.mix(0.5))).map_err(plot_err)?;
        let last = rows.last().expect("non-empty group");
        chart.draw_series(std::iter::once(TriangleMarker::new((last.x, last.y), 6, BLACK.filled()))).map_err(plot_err)?;
    }

    // final positions joined in id order
    let mut last: Vec<(f64, f64)> = robots
        .values()
        .map(|rows| rows.last().map(|r| (r.x, r.y)).expect("non-empty group"))
        .collect();
    if let Some(first) = last.first().copied() {
        last.push(first);
    }
    for pair in last.windows(2) {
        chart.draw_series(DashedLineSeries::new(pair.iter().copied(), 5, 4, BLACK.into())).map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(out.join(PATHS_FILE))
}

fn velocities(dir: &Path, out: &Path) -> Result<PathBuf> {
    let robots = group_by(load::<RobotRow>(dir, ROBOTS_FILE)?, |r| r.robot_id);
    let v = robots
        .iter()
        .map(|(id, rows)| (*id, rows.iter().map(|r| (r.time, r.v)).collect()))
        .collect();
    let w = robots
        .iter()
        .map(|(id, rows)| (*id, rows.iter().map(|r| (r.time, r.omega)).collect()))
        .collect();
    let file = out.join(VELOCITIES_FILE);
    let root = SVGBackend::new(&file, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((2, 1));
    series_panel(&panels[0], "Linear velocity", "v [m/s]", &v, "robot").map_err(plot_err)?;
    series_panel(&panels[1], "Angular velocity", "omega [rad/s]", &w, "robot").map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(out.join(VELOCITIES_FILE))
}

fn cost(dir: &Path, out: &Path) -> Result<PathBuf> {
    const FLOOR: f64 = 1e-16;
    let monitor = load::<MonitorRow>(dir, MONITOR_FILE)?;
    let per_uav = group_by(load::<UavMonitorRow>(dir, UAV_MONITOR_FILE)?, |r| r.uav_id);
    let file = out.join(COST_FILE);
    let root = SVGBackend::new(&file, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let t = bounds(monitor.iter().map(|m| m.time));
    let top = monitor.iter().map(|m| m.v).fold(FLOOR, f64::max) * 2.0;
    let mut chart = ChartBuilder::on(&root)
        .caption("Cost", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(70)
        .build_cartesian_2d(t, (FLOOR..top).log_scale()).map_err(plot_err)?;
    chart.configure_mesh().x_desc("time [s]").y_desc("V [m^2]").draw().map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            monitor.iter().map(|m| (m.time, m.v.max(FLOOR))),
            BLACK.stroke_width(2),
        )).map_err(plot_err)?
        .label("V")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], BLACK));
    for (i, (id, rows)) in per_uav.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(rows.iter().map(|r| (r.time, r.v_j.max(FLOOR))), &c)).map_err(plot_err)?
            .label(format!("V_{id}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], c));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(out.join(COST_FILE))
}

fn partial(dir: &Path, out: &Path) -> Result<PathBuf> {
    let per_uav = group_by(load::<UavMonitorRow>(dir, UAV_MONITOR_FILE)?, |r| r.uav_id);
    let s = per_uav
        .iter()
        .map(|(id, rows)| (*id, rows.iter().map(|r| (r.time, r.partial_scale)).collect()))
        .collect();
    let phi = per_uav
        .iter()
        .map(|(id, rows)| (*id, rows.iter().map(|r| (r.time, r.partial_rotation)).collect()))
        .collect();
    let file = out.join(PARTIAL_FILE);
    let root = SVGBackend::new(&file, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((2, 1));
    series_panel(&panels[0], "Partial formation scale", "scale [m/px]", &s, "uav").map_err(plot_err)?;
    series_panel(&panels[1], "Partial formation rotation", "rotation [rad]", &phi, "uav").map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(out.join(PARTIAL_FILE))
}

fn image_traces(dir: &Path, out: &Path) -> Result<PathBuf> {
    let per_uav = group_by(load::<ImageRow>(dir, IMAGE_FILE)?, |r| r.uav_id);
    let file = out.join(IMAGE_TRACES_FILE);
    let root = SVGBackend::new(&file, (SIZE.0, 420 * per_uav.len() as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((per_uav.len(), 1));
    for (panel, (uav, rows)) in panels.iter().zip(per_uav) {
        let x = bounds(rows.iter().map(|r| r.u));
        let y = bounds(rows.iter().map(|r| r.v));
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("Camera {uav}"), ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(x, y).map_err(plot_err)?;
        chart.configure_mesh().x_desc("u [px]").y_desc("v [px]").draw().map_err(plot_err)?;
        for (i, (_, pts)) in group_by(rows, |r| r.robot_id).iter().enumerate() {
            // break the trace wherever the robot left the image
            let mut segment: Vec<(f64, f64)> = Vec::new();
            let mut prev_step = None;
            for r in pts {
                if prev_step.is_some_and(|s| r.step > s + step_gap(pts)) {
                    chart.draw_series(LineSeries::new(std::mem::take(&mut segment), &color(i))).map_err(plot_err)?;
                }
                segment.push((r.u, r.v));
                prev_step = Some(r.step);
            }
            chart.draw_series(LineSeries::new(segment, &color(i))).map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)?;
    Ok(out.join(IMAGE_TRACES_FILE))
}

fn step_gap(rows: &[ImageRow]) -> u64 {
    rows.windows(2)
        .map(|w| w[1].step.saturating_sub(w[0].step))
        .min()
        .unwrap_or(1)
}

/// Writes the five figures into `out` and returns their paths.
pub fn plot_dir(log_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    if !log_dir.is_dir() {
        bail!("log directory {} does not exist", log_dir.display());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(vec![
        paths(log_dir, out)?,
        velocities(log_dir, out)?,
        cost(log_dir, out)?,
        partial(log_dir, out)?,
        image_traces(log_dir, out)?,
    ])
}
