//! Software rasterizer for markers, edges and voxels.
//!
//! Primitives are projected in parallel in chunks, binned by row band and
//! then drawn band by band, each band on its own worker. Within a band
//! primitives are drawn in element order, so output is deterministic.

use rayon::prelude::*;

use super::marker::{marker_coverage, marker_sdf, shade, MarkerStyle};
use crate::view::{DomainType, EdgeTopology, FillStyle, MarkerShape, ViewRuntime, ViewState};

/// Rows per band.
const BAND_ROWS: usize = 16;
/// Elements projected per chunk.
const CHUNK: usize = 1 << 16;

pub(crate) type Mat4 = [[f32; 4]; 4];

#[inline]
pub(crate) fn pack_rgba(c: [f32; 4]) -> u32 {
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u32;
    q(c[0]) | q(c[1]) << 8 | q(c[2]) << 16 | q(c[3]) << 24
}

#[inline]
pub(crate) fn unpack_rgba(p: u32) -> [u8; 4] {
    p.to_le_bytes()
}

/// Blends `rgb` at opacity `alpha` over the opaque pixel `dst`.
#[inline]
fn blend(dst: u32, rgb: [f32; 3], alpha: f32) -> u32 {
    let d = unpack_rgba(dst);
    let mix = |c: usize| (rgb[c].clamp(0.0, 1.0) * 255.0 * alpha + d[c] as f32 * (1.0 - alpha) + 0.5) as u32;
    mix(0) | mix(1) << 8 | mix(2) << 16 | 0xff00_0000
}

/// A horizontal slice of the framebuffer.
pub(crate) struct Band<'a> {
    y0: i32,
    y1: i32,
    width: i32,
    color: &'a mut [u32],
    depth: &'a mut [f32],
}

impl Band<'_> {
    /// Depth-tested blend of one sample. Depth is written where the sample
    /// is at least half opaque.
    #[inline]
    fn put(&mut self, x: i32, y: i32, z: f32, rgb: [f32; 3], alpha: f32) {
        let i = ((y - self.y0) * self.width + x) as usize;
        if z > self.depth[i] || alpha <= 0.0 {
            return;
        }
        self.color[i] = blend(self.color[i], rgb, alpha);
        if alpha >= 0.5 {
            self.depth[i] = z;
        }
    }

    #[inline]
    fn put_packed(&mut self, x: i32, y: i32, z: f32, packed: u32) {
        let i = ((y - self.y0) * self.width + x) as usize;
        if z <= self.depth[i] {
            self.color[i] = packed;
            self.depth[i] = z;
        }
    }
}

/// Framebuffer being drawn.
pub(crate) struct Target<'a> {
    pub width: u32,
    pub height: u32,
    pub color: &'a mut [u32],
    pub depth: &'a mut [f32],
}

impl Target<'_> {
    pub fn clear(&mut self, color: u32) {
        self.color.par_iter_mut().for_each(|c| *c = color);
        self.depth.par_iter_mut().for_each(|d| *d = 1.0);
    }

    fn band_count(&self) -> usize {
        (self.height as usize).div_ceil(BAND_ROWS)
    }

    /// Bins `prims` by the bands their row span touches and draws each band
    /// in parallel.
    fn draw<P, R, D>(&mut self, prims: &[P], rows: R, draw: D)
    where
        P: Sync,
        R: Fn(&P) -> (i32, i32),
        D: Fn(&P, &mut Band) + Sync,
    {
        if prims.is_empty() {
            return;
        }
        let nb = self.band_count();
        let last_row = self.height as i32 - 1;
        let span = |p: &P| -> Option<(usize, usize)> {
            let (r0, r1) = rows(p);
            if r1 < 0 || r0 > last_row || r0 > r1 {
                return None;
            }
            Some((r0.max(0) as usize / BAND_ROWS, r1.min(last_row) as usize / BAND_ROWS))
        };
        let mut offsets = vec![0u32; nb + 1];
        for p in prims {
            if let Some((b0, b1)) = span(p) {
                for b in b0..=b1 {
                    offsets[b + 1] += 1;
                }
            }
        }
        for b in 0..nb {
            offsets[b + 1] += offsets[b];
        }
        let mut fill = offsets.clone();
        let mut bins = vec![0u32; offsets[nb] as usize];
        for (k, p) in prims.iter().enumerate() {
            if let Some((b0, b1)) = span(p) {
                for b in b0..=b1 {
                    bins[fill[b] as usize] = k as u32;
                    fill[b] += 1;
                }
            }
        }

        let w = self.width as usize;
        let h = self.height as i32;
        self.color
            .par_chunks_mut(BAND_ROWS * w)
            .zip(self.depth.par_chunks_mut(BAND_ROWS * w))
            .enumerate()
            .for_each(|(b, (color, depth))| {
                let list = &bins[offsets[b] as usize..offsets[b + 1] as usize];
                if list.is_empty() {
                    return;
                }
                let y0 = (b * BAND_ROWS) as i32;
                let mut band = Band {
                    y0,
                    y1: (y0 + BAND_ROWS as i32).min(h),
                    width: w as i32,
                    color,
                    depth,
                };
                for &k in list {
                    draw(&prims[k as usize], &mut band);
                }
            });
    }
}

/// World point to pixel coordinates and depth in [0, 1]; `None` when
/// outside the depth range or behind the eye.
#[inline]
pub(crate) fn project(m: &Mat4, p: [f32; 3], width: u32, height: u32) -> Option<[f32; 3]> {
    let c: [f32; 4] = std::array::from_fn(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3]);
    if !(c[3] > 0.0) {
        return None;
    }
    let inv = 1.0 / c[3];
    let z = 0.5 * (c[2] * inv + 1.0);
    if !(0.0..=1.0).contains(&z) {
        return None;
    }
    Some([
        (c[0] * inv + 1.0) * 0.5 * width as f32,
        (1.0 - c[1] * inv) * 0.5 * height as f32,
        z,
    ])
}

/// Per-element attribute reads shared by all view types.
struct Attribs<'a> {
    view: &'a ViewState,
    rt: &'a ViewRuntime,
    flat: bool,
}

impl Attribs<'_> {
    #[inline]
    fn position(&self, k: usize) -> Option<[f32; 3]> {
        let p = self.view.bindings.position.fetch(k)?;
        let s = self.view.desc.scale;
        let z = if self.flat { 0.0 } else { p[2] };
        let w = [p[0] * s[0], p[1] * s[1], z * s[2]];
        w.iter().all(|c| c.is_finite()).then_some(w)
    }

    #[inline]
    fn color(&self, k: usize) -> [f32; 4] {
        self.view
            .bindings
            .color
            .as_ref()
            .and_then(|c| c.fetch(k))
            .unwrap_or(self.rt.default_color)
    }

    #[inline]
    fn size(&self, k: usize) -> Option<f32> {
        let s = match &self.view.bindings.size {
            Some(b) => b.fetch_scalar(k)?,
            None => self.rt.default_size,
        };
        (s > 0.0 && s.is_finite()).then_some(s)
    }

    #[inline]
    fn rotation(&self, k: usize) -> f32 {
        self.view
            .bindings
            .rotation
            .as_ref()
            .and_then(|r| r.fetch_scalar(k))
            .unwrap_or(0.0)
    }
}

struct Sprite {
    x: f32,
    y: f32,
    z: f32,
    radius: f32,
    color: [f32; 4],
    cos: f32,
    sin: f32,
}

pub(crate) fn draw_markers(t: &mut Target, m: &Mat4, view: &ViewState, rt: &ViewRuntime) {
    let (shape, fill) = view.pipeline.key.marker.unwrap_or_default();
    let style = MarkerStyle {
        shape,
        fill,
        linewidth: view.desc.linewidth,
        antialias: super::marker::DEFAULT_ANTIALIAS,
    };
    let a = Attribs {
        view,
        rt,
        flat: view.desc.domain == DomainType::Domain2D,
    };
    let rotate = shape == MarkerShape::Arrow && view.bindings.rotation.is_some();
    let (w, h) = (t.width, t.height);
    // Coverage vanishes once the distance exceeds half the antialias band
    // past the outline (or past the stroke, when there is one).
    let reach = match fill {
        FillStyle::Filled => 0.5 * style.antialias,
        _ => style.linewidth / 2.0 + 0.5 * style.antialias,
    };
    let n = view.desc.element_count;
    for base in (0..n).step_by(CHUNK) {
        let end = (base + CHUNK).min(n);
        let sprites: Vec<Sprite> = (base..end)
            .into_par_iter()
            .with_min_len(1024)
            .filter_map(|k| {
                let s = project(m, a.position(k)?, w, h)?;
                let (sin, cos) = if rotate { a.rotation(k).sin_cos() } else { (0.0, 1.0) };
                Some(Sprite {
                    x: s[0],
                    y: s[1],
                    z: s[2],
                    radius: 0.5 * a.size(k)?,
                    color: a.color(k),
                    cos,
                    sin,
                })
            })
            .collect();
        t.draw(
            &sprites,
            |s| ((s.y - s.radius - reach).floor() as i32, (s.y + s.radius + reach).ceil() as i32),
            |s, band| draw_sprite(s, &style, reach, band),
        );
    }
}

#[inline]
fn draw_sprite(s: &Sprite, style: &MarkerStyle, reach: f32, band: &mut Band) {
    let e = s.radius + reach;
    let x0 = ((s.x - e).floor() as i32).max(0);
    let x1 = ((s.x + e).ceil() as i32).min(band.width - 1);
    let y0 = ((s.y - e).floor() as i32).max(band.y0);
    let y1 = ((s.y + e).ceil() as i32).min(band.y1 - 1);
    let stroke = match style.fill {
        FillStyle::Outlined => [s.color[0] * 0.5, s.color[1] * 0.5, s.color[2] * 0.5, s.color[3]],
        _ => s.color,
    };
    for y in y0..=y1 {
        let py = s.y - (y as f32 + 0.5);
        for x in x0..=x1 {
            let px = x as f32 + 0.5 - s.x;
            let p = [s.cos * px + s.sin * py, -s.sin * px + s.cos * py];
            let d = marker_sdf(style.shape, p, s.radius);
            if d >= reach {
                continue;
            }
            let cov = marker_coverage(d, style);
            let (rgb, alpha) = shade(cov, s.color, stroke);
            band.put(x, y, s.z, rgb, alpha);
        }
    }
}

struct Line {
    a: [f32; 3],
    b: [f32; 3],
    color: [f32; 4],
}

pub(crate) fn draw_edges(t: &mut Target, m: &Mat4, view: &ViewState, rt: &ViewRuntime) {
    let a = Attribs {
        view,
        rt,
        flat: view.desc.domain == DomainType::Domain2D,
    };
    let width = view.desc.linewidth.round().max(1.0) as i32;
    let pairs: &[(usize, usize)] = match view.pipeline.key.topology.unwrap_or_default() {
        EdgeTopology::Segments => &[(0, 1)],
        EdgeTopology::Triangles => &[(0, 1), (1, 2), (2, 0)],
    };
    let group = if pairs.len() == 1 { 2 } else { 3 };
    let groups = view.desc.element_count / group;
    let (w, h) = (t.width, t.height);
    let per_chunk = (CHUNK / group).max(1);
    for base in (0..groups).step_by(per_chunk) {
        let end = (base + per_chunk).min(groups);
        let lines: Vec<Line> = (base..end)
            .into_par_iter()
            .with_min_len(512)
            .flat_map_iter(|g| {
                let first = g * group;
                let a = &a;
                pairs.iter().filter_map(move |&(i, j)| {
                    let pa = project(m, a.position(first + i)?, w, h)?;
                    let pb = project(m, a.position(first + j)?, w, h)?;
                    let (pa, pb) = clip_line(pa, pb, w as f32, h as f32, width as f32)?;
                    Some(Line {
                        a: pa,
                        b: pb,
                        color: a.color(first + i),
                    })
                })
            })
            .collect();
        let r = width;
        t.draw(
            &lines,
            |l| (l.a[1].min(l.b[1]).floor() as i32 - r, l.a[1].max(l.b[1]).ceil() as i32 + r),
            |l, band| draw_line(l, width, band),
        );
    }
}

/// Clips a segment to the screen rectangle grown by `pad` pixels.
fn clip_line(a: [f32; 3], b: [f32; 3], w: f32, h: f32, pad: f32) -> Option<([f32; 3], [f32; 3])> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f32, 1.0f32);
    for (p, q) in [
        (-d[0], a[0] + pad),
        (d[0], w + pad - a[0]),
        (-d[1], a[1] + pad),
        (d[1], h + pad - a[1]),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f32| std::array::from_fn(|c| a[c] + (b[c] - a[c]) * t);
    Some((at(t0), at(t1)))
}

fn draw_line(l: &Line, width: i32, band: &mut Band) {
    let dx = l.b[0] - l.a[0];
    let dy = l.b[1] - l.a[1];
    let steps = dx.abs().max(dy.abs()).ceil().max(1.0);
    let half = (width - 1) / 2;
    // Restrict the walk to the parameter range that can touch this band.
    let (mut lo, mut hi) = (0.0f32, 1.0f32);
    if dy != 0.0 {
        let ta = (band.y0 as f32 - width as f32 - 1.0 - l.a[1]) / dy;
        let tb = (band.y1 as f32 + width as f32 + 1.0 - l.a[1]) / dy;
        lo = lo.max(ta.min(tb));
        hi = hi.min(ta.max(tb));
    }
    if lo > hi {
        return;
    }
    let rgb = [l.color[0], l.color[1], l.color[2]];
    let i0 = (lo * steps).floor() as i32;
    let i1 = (hi * steps).ceil() as i32;
    for i in i0..=i1 {
        let t = i as f32 / steps;
        let x = (l.a[0] + dx * t).floor() as i32 - half;
        let y = (l.a[1] + dy * t).floor() as i32 - half;
        let z = l.a[2] + (l.b[2] - l.a[2]) * t;
        for yy in y.max(band.y0)..(y + width).min(band.y1) {
            for xx in x.max(0)..(x + width).min(band.width) {
                band.put(xx, yy, z, rgb, l.color[3]);
            }
        }
    }
}

struct Tri {
    v: [[f32; 3]; 3],
    color: [f32; 4],
    packed: u32,
}

/// Corners of the unit cube centred on the origin, and its faces as
/// quads with a shading factor each.
const CUBE: [[f32; 3]; 8] = [
    [-0.5, -0.5, -0.5],
    [0.5, -0.5, -0.5],
    [0.5, 0.5, -0.5],
    [-0.5, 0.5, -0.5],
    [-0.5, -0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0.5, 0.5, 0.5],
    [-0.5, 0.5, 0.5],
];
const CUBE_FACES: [([usize; 4], f32); 6] = [
    ([0, 1, 2, 3], 0.9),
    ([4, 5, 6, 7], 0.9),
    ([0, 1, 5, 4], 0.7),
    ([3, 2, 6, 7], 1.0),
    ([0, 3, 7, 4], 0.8),
    ([1, 2, 6, 5], 0.8),
];
const SQUARE: [([usize; 4], f32); 1] = [([0, 1, 2, 3], 1.0)];

pub(crate) fn draw_voxels(t: &mut Target, m: &Mat4, view: &ViewState, rt: &ViewRuntime) {
    let flat = view.desc.domain == DomainType::Domain2D;
    let a = Attribs { view, rt, flat };
    let faces: &[([usize; 4], f32)] = if flat { &SQUARE } else { &CUBE_FACES };
    let s = view.desc.scale;
    let (w, h) = (t.width, t.height);
    let n = view.desc.element_count;
    for base in (0..n).step_by(CHUNK) {
        let end = (base + CHUNK).min(n);
        let tris: Vec<Tri> = (base..end)
            .into_par_iter()
            .with_min_len(1024)
            .flat_map_iter(|k| {
                let center = a.position(k);
                let side = a.size(k);
                let color = a.color(k);
                let corners: Option<[[f32; 3]; 8]> = center.zip(side).and_then(|(c, side)| {
                    let mut out = [[0.0; 3]; 8];
                    for (o, unit) in out.iter_mut().zip(CUBE.iter()).take(if flat { 4 } else { 8 }) {
                        let z = if flat { 0.0 } else { unit[2] * side * s[2] };
                        let p = [c[0] + unit[0] * side * s[0], c[1] + unit[1] * side * s[1], c[2] + z];
                        *o = project(m, p, w, h)?;
                    }
                    Some(out)
                });
                faces.iter().flat_map(move |&(q, shade)| {
                    let c = [color[0] * shade, color[1] * shade, color[2] * shade, color[3]];
                    let packed = pack_rgba([c[0], c[1], c[2], 1.0]);
                    corners
                        .map(|v| {
                            [
                                Tri { v: [v[q[0]], v[q[1]], v[q[2]]], color: c, packed },
                                Tri { v: [v[q[0]], v[q[2]], v[q[3]]], color: c, packed },
                            ]
                        })
                        .into_iter()
                        .flatten()
                })
            })
            .collect();
        t.draw(
            &tris,
            |tri| {
                let ys = tri.v.map(|v| v[1]);
                (ys[0].min(ys[1]).min(ys[2]).floor() as i32, ys[0].max(ys[1]).max(ys[2]).ceil() as i32)
            },
            draw_tri,
        );
    }
}

#[inline]
fn edge(a: [f32; 3], b: [f32; 3], x: f32, y: f32) -> f32 {
    (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
}

fn draw_tri(t: &Tri, band: &mut Band) {
    let [mut a, b, mut c] = t.v;
    let mut area = edge(a, b, c[0], c[1]);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        std::mem::swap(&mut a, &mut c);
        area = -area;
    }
    let xs = [a[0], b[0], c[0]];
    let ys = [a[1], b[1], c[1]];
    let x0 = (xs[0].min(xs[1]).min(xs[2]).floor() as i32).max(0);
    let x1 = (xs[0].max(xs[1]).max(xs[2]).ceil() as i32).min(band.width - 1);
    let y0 = (ys[0].min(ys[1]).min(ys[2]).floor() as i32).max(band.y0);
    let y1 = (ys[0].max(ys[1]).max(ys[2]).ceil() as i32).min(band.y1 - 1);
    let opaque = t.color[3] >= 1.0;
    let rgb = [t.color[0], t.color[1], t.color[2]];
    let inv = 1.0 / area;
    for y in y0..=y1 {
        let py = y as f32 + 0.5;
        for x in x0..=x1 {
            let px = x as f32 + 0.5;
            let w0 = edge(b, c, px, py);
            let w1 = edge(c, a, px, py);
            let w2 = edge(a, b, px, py);
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let z = (w0 * a[2] + w1 * b[2] + w2 * c[2]) * inv;
            if opaque {
                band.put_packed(x, y, z, t.packed);
            } else {
                band.put(x, y, z, rgb, t.color[3]);
            }
        }
    }
}
