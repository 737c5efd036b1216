//! Static SVG charts and PNG heatmaps.

use std::path::Path;

use image::{Rgb, RgbImage};
use plotters::prelude::*;

use super::families::Heatmap;
use crate::error::{Error, Result};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn plot_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Multi-series line chart with markers and a legend.
pub fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> Result<()> {
    let err = plot_err(path);
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (x0, x1, y0, y1) = pts.fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(&err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(&err)?
            .label(s.label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        if pts.len() <= 40 {
            chart
                .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(&err)?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Box-and-whisker chart of named groups.
pub fn box_chart(path: &Path, title: &str, y_desc: &str, groups: &[(&str, &[f64])]) -> Result<()> {
    let err = plot_err(path);
    let quartiles: Vec<Quartiles> = groups.iter().map(|(_, v)| Quartiles::new(v)).collect();
    let (lo, hi) = quartiles.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), q| {
        let v = q.values();
        (a.min(v[0]), b.max(v[4]))
    });
    let (lo, hi) = padded(lo as f64, hi as f64);
    let names: Vec<&str> = groups.iter().map(|(n, _)| *n).collect();
    let root = SVGBackend::new(path, (520, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(names.as_slice().into_segmented(), lo as f32..hi as f32)
        .map_err(&err)?;
    chart.configure_mesh().y_desc(y_desc).draw().map_err(&err)?;
    chart
        .draw_series(names.iter().zip(&quartiles).enumerate().map(|(i, (n, q))| {
            Boxplot::new_vertical(SegmentValue::CenterOf(n), q)
                .width(40)
                .style(PALETTE[i % PALETTE.len()])
        }))
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Saliency heatmap upscaled by `scale`; the skin outline is drawn in green
/// and the patch outline in red.
pub fn heatmap_png(path: &Path, map: &Heatmap, scale: u32) -> Result<()> {
    let n = map.size;
    let max = map.values.iter().copied().fold(0.0f64, f64::max);
    let edge = |mask: &[bool], y: usize, x: usize| {
        mask[y * n + x]
            && [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|(dy, dx)| {
                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                yy < 0 || xx < 0 || yy >= n as i64 || xx >= n as i64 || !mask[yy as usize * n + xx as usize]
            })
    };
    let img = RgbImage::from_fn(n as u32 * scale, n as u32 * scale, |px, py| {
        let (x, y) = ((px / scale) as usize, (py / scale) as usize);
        if map.patch.as_deref().is_some_and(|p| edge(p, y, x)) {
            return Rgb([230, 30, 30]);
        }
        if edge(&map.skin, y, x) {
            return Rgb([30, 200, 60]);
        }
        let v = if max > 0.0 { map.values[y * n + x] / max } else { 0.0 };
        // black -> orange -> white ramp
        let r = (v * 2.0).min(1.0);
        let g = (v * 1.6 - 0.3).clamp(0.0, 1.0);
        let b = (v * 2.0 - 1.0).clamp(0.0, 1.0);
        Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
    });
    img.save(path)?;
    Ok(())
}
