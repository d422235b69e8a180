//! SVG plots of a true and a predicted curve over the first two coordinates.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pwl::PwlCurve;

pub const MAX_SCATTER: usize = 1000;
const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;

/// Evenly spaced row indices, at most [`MAX_SCATTER`] of them.
pub fn subsample_indices(n: usize) -> Vec<usize> {
    if n <= MAX_SCATTER {
        return (0..n).collect();
    }
    (0..MAX_SCATTER).map(|k| k * n / MAX_SCATTER).collect()
}

struct Frame {
    x0: f64,
    y0: f64,
    scale: f64,
}

impl Frame {
    fn fit(xy: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in xy {
            lo_x = lo_x.min(x);
            lo_y = lo_y.min(y);
            hi_x = hi_x.max(x);
            hi_y = hi_y.max(y);
        }
        let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-12);
        Self {
            x0: lo_x,
            y0: lo_y,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (MARGIN + (x - self.x0) * self.scale, SIZE - MARGIN - (y - self.y0) * self.scale)
    }
}

fn polyline(out: &mut String, frame: &Frame, c: &PwlCurve, class: &str, style: &str) {
    let pts: Vec<String> = (0..=c.segments())
        .map(|i| {
            let v = c.vertices();
            let (x, y) = frame.map(v[(i, 0)], v[(i, 1)]);
            format!("{x:.3},{y:.3}")
        })
        .collect();
    let _ = writeln!(out, r#"<polyline class="{class}" points="{}" fill="none" {style}/>"#, pts.join(" "));
}

/// SVG document with the truth, the dashed prediction and an optional
/// subsampled scatter of `cloud`.
pub fn render_svg(truth: &PwlCurve, predicted: &PwlCurve, cloud: Option<&DMatrix<f64>>) -> Result<String> {
    let d = truth.dim();
    if d < 2 {
        return Err(Error::Config("plotting needs d >= 2".into()));
    }
    if predicted.dim() != d || cloud.is_some_and(|c| c.ncols() != d) {
        return Err(Error::Shape("plot inputs have different dimensions".into()));
    }
    let idx = cloud.map(|c| subsample_indices(c.nrows())).unwrap_or_default();
    let mut xy: Vec<(f64, f64)> = Vec::new();
    for c in [truth, predicted] {
        let v = c.vertices();
        xy.extend((0..v.nrows()).map(|i| (v[(i, 0)], v[(i, 1)])));
    }
    if let Some(c) = cloud {
        xy.extend(idx.iter().map(|&i| (c[(i, 0)], c[(i, 1)])));
    }
    let frame = Frame::fit(xy.into_iter());
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if let Some(c) = cloud {
        s.push_str("<g class=\"cloud\" fill=\"#7f7f7f\" fill-opacity=\"0.4\">\n");
        for &i in &idx {
            let (x, y) = frame.map(c[(i, 0)], c[(i, 1)]);
            let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="1.5"/>"#);
        }
        s.push_str("</g>\n");
    }
    polyline(&mut s, &frame, truth, "truth", r#"stroke="black" stroke-width="2""#);
    polyline(&mut s, &frame, predicted, "predicted", r#"stroke="red" stroke-width="2" stroke-dasharray="6 4""#);
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(truth: &PwlCurve, predicted: &PwlCurve, cloud: Option<&DMatrix<f64>>, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(truth, predicted, cloud)?)?;
    Ok(())
}
