//! Antialiased marker math: signed distance functions per shape and the
//! coverage ramp applied to them. The rasterizer evaluates these per pixel.

use std::f32::consts::SQRT_2;

use crate::view::{FillStyle, MarkerShape};

/// Default width of the antialiasing ramp, in pixels.
pub const DEFAULT_ANTIALIAS: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerStyle {
    pub shape: MarkerShape,
    pub fill: FillStyle,
    /// Stroke width in pixels; must be positive unless `fill` is `Filled`.
    pub linewidth: f32,
    /// Antialiasing band width in pixels, > 0.
    pub antialias: f32,
}

impl MarkerStyle {
    pub fn filled(shape: MarkerShape) -> Self {
        MarkerStyle {
            shape,
            fill: FillStyle::Filled,
            linewidth: 0.0,
            antialias: DEFAULT_ANTIALIAS,
        }
    }
}

/// Fill and stroke opacity of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub fill: f32,
    pub stroke: f32,
}

/// Signed distance in pixels from `p` (marker-local, pixels) to the marker
/// outline: negative inside, zero on the boundary.
///
/// `radius` is half the marker size. Disc and diamond return Euclidean
/// distances; the arrow (pointing to +x) combines a diamond head with a
/// rectangular shaft and is only a distance bound away from its edges.
#[inline]
pub fn marker_sdf(shape: MarkerShape, p: [f32; 2], radius: f32) -> f32 {
    let [x, y] = p;
    match shape {
        MarkerShape::Disc => (x * x + y * y).sqrt() - radius,
        MarkerShape::Diamond => (x.abs() + y.abs() - radius) / SQRT_2,
        MarkerShape::Arrow => {
            // The construction points to -x; mirror it.
            let x = -x;
            let size = 2.0 * radius;
            let head = x.abs() + y.abs() - size / 2.0;
            let clip = (x + size / 2.0).abs().max(y.abs()) - size / 2.0;
            let shaft = ((x - size / 6.0).abs() - size / 4.0).max(y.abs() - size / 4.0);
            shaft.min((0.75 * head).max(clip))
        }
    }
}

#[inline]
fn ramp(distance: f32, band: f32) -> f32 {
    (0.5 - distance / band).clamp(0.0, 1.0)
}

/// Coverage of a sample at signed distance `sdf` from the outline.
///
/// Opacity ramps linearly across a band of width `antialias` centred on
/// the edge: 1 at `-antialias/2` and inside, 0.5 on the edge, 0 at
/// `+antialias/2` and beyond.
#[inline]
pub fn marker_coverage(sdf: f32, style: &MarkerStyle) -> Coverage {
    let band = style.antialias;
    match style.fill {
        FillStyle::Filled => Coverage {
            fill: ramp(sdf, band),
            stroke: 0.0,
        },
        FillStyle::Stroked => Coverage {
            fill: 0.0,
            stroke: ramp(sdf.abs() - style.linewidth / 2.0, band),
        },
        FillStyle::Outlined => Coverage {
            fill: ramp(sdf, band),
            stroke: ramp(sdf.abs() - style.linewidth / 2.0, band),
        },
    }
}

/// Composites stroke over fill for one sample; returns straight RGB and
/// opacity.
#[inline]
pub fn shade(cov: Coverage, fill: [f32; 4], stroke: [f32; 4]) -> ([f32; 3], f32) {
    let fa = cov.fill * fill[3];
    let sa = cov.stroke * stroke[3];
    let alpha = sa + fa * (1.0 - sa);
    if alpha <= 0.0 {
        return ([0.0; 3], 0.0);
    }
    let rgb = std::array::from_fn(|c| (stroke[c] * sa + fill[c] * fa * (1.0 - sa)) / alpha);
    (rgb, alpha)
}
