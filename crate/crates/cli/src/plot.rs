use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn draw_err(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("rendering plot: {e}")
}

/// Training DSC against epoch, one labelled line per curve.
pub fn curves(path: &Path, curves: &[(String, Vec<f64>)]) -> Result<()> {
    let epochs = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0).max(1);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Training DSC", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(1f64..epochs as f64, 0f64..1f64)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("DSC")
        .draw()
        .map_err(draw_err)?;
    for (i, (label, values)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(
                values.iter().enumerate().map(|(e, v)| ((e + 1) as f64, *v)),
                color.stroke_width(2),
            ))
            .map_err(draw_err)?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}

/// Per-case DSC distribution of each report.
pub fn boxplot(path: &Path, groups: &[(String, Vec<f64>)]) -> Result<()> {
    let labels: Vec<String> = groups.iter().map(|(l, _)| l.clone()).collect();
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Per-case DSC", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(labels.as_slice().into_segmented(), 0f32..1f32)
        .map_err(draw_err)?;
    chart.configure_mesh().y_desc("DSC").draw().map_err(draw_err)?;
    for (i, (label, values)) in groups.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let q = Quartiles::new(values);
        chart
            .draw_series(std::iter::once(
                Boxplot::new_vertical(SegmentValue::CenterOf(label), &q).style(PALETTE[i % PALETTE.len()]),
            ))
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)
}
