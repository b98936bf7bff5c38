//! Render pipeline variants.
//!
//! Each view resolves to one pipeline specialized on its view type, domain,
//! marker options, which properties are bound and the position format.
//! Variants are built on first use from small templates and cached per
//! instance.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::engine::Instance;
use crate::error::Result;
use crate::view::{
    DomainType, EdgeTopology, FillStyle, FormatDescription, MarkerShape, PropertyType, ViewDescription,
    ViewType,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PipelineKey {
    pub view_type: ViewType,
    pub domain: DomainType,
    /// Marker shape and style; `None` for other view types.
    pub marker: Option<(MarkerShape, FillStyle)>,
    /// Edge grouping; `None` for other view types.
    pub topology: Option<EdgeTopology>,
    pub has_color: bool,
    pub has_size: bool,
    pub has_rotation: bool,
    pub position_format: FormatDescription,
    pub position_indexed: bool,
}

impl PipelineKey {
    pub fn for_description(desc: &ViewDescription) -> Self {
        let position = desc.properties.get(&PropertyType::Position);
        PipelineKey {
            view_type: desc.view_type,
            domain: desc.domain,
            marker: desc.marker_options().map(|m| (m.shape, m.style)),
            topology: (desc.view_type == ViewType::Edges).then(|| desc.edge_topology()),
            has_color: desc.properties.contains_key(&PropertyType::Color),
            has_size: desc.properties.contains_key(&PropertyType::Size),
            has_rotation: desc.properties.contains_key(&PropertyType::Rotation),
            position_format: position.map_or(FormatDescription::FLOAT3, |p| p.format),
            position_indexed: position.is_some_and(|p| p.indices.is_some()),
        }
    }

    /// Stable file-name friendly identifier.
    pub fn name(&self) -> String {
        let mut s = format!("{:?}_{:?}", self.view_type, self.domain).to_lowercase();
        if let Some((shape, style)) = self.marker {
            write!(s, "_{shape:?}_{style:?}").unwrap();
        }
        if let Some(t) = self.topology {
            write!(s, "_{t:?}").unwrap();
        }
        write!(s, "_pos{}", self.position_format).unwrap();
        if self.position_indexed {
            s.push_str("_idx");
        }
        for (flag, tag) in [(self.has_color, "_col"), (self.has_size, "_size"), (self.has_rotation, "_rot")] {
            if flag {
                s.push_str(tag);
            }
        }
        s.to_lowercase()
    }
}

/// A resolved pipeline variant.
#[derive(Debug)]
pub struct Pipeline {
    pub key: PipelineKey,
    /// Generated stage source, as written by [`Instance::dump_pipelines`].
    pub source: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineCacheStats {
    pub variants: usize,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Default)]
pub(crate) struct PipelineCache {
    variants: HashMap<PipelineKey, Arc<Pipeline>>,
    hits: u64,
    misses: u64,
}

impl PipelineCache {
    pub fn resolve(&mut self, key: PipelineKey) -> Arc<Pipeline> {
        if let Some(p) = self.variants.get(&key) {
            self.hits += 1;
            return Arc::clone(p);
        }
        self.misses += 1;
        log::debug!("building pipeline variant {}", key.name());
        let p = Arc::new(Pipeline {
            key,
            source: generate_source(&key),
        });
        self.variants.insert(key, Arc::clone(&p));
        p
    }

    pub fn stats(&self) -> PipelineCacheStats {
        PipelineCacheStats {
            variants: self.variants.len(),
            hits: self.hits,
            misses: self.misses,
        }
    }
}

fn reader(out: &mut String, name: &str, ty: &str, bound: bool, indexed: bool, convert: bool) {
    if !bound {
        writeln!(out, "{ty} read_{name}(uint i) {{ return u_default_{name}; }}").unwrap();
        return;
    }
    let idx = if indexed { "b_index[i]" } else { "i" };
    let load = if convert {
        format!("{ty}(b_{name}[{idx}])")
    } else {
        format!("b_{name}[{idx}]")
    };
    writeln!(out, "{ty} read_{name}(uint i) {{ return {load}; }}").unwrap();
}

fn generate_source(key: &PipelineKey) -> String {
    let mut s = String::new();
    writeln!(s, "// variant {}", key.name()).unwrap();
    let f = key.position_format;
    let wide = f.bit_width() == 64;
    let comps = f.components();
    writeln!(
        s,
        "buffer b_position : {}{};",
        if wide { "double" } else { "float" },
        if comps > 1 { comps.to_string() } else { String::new() }
    )
    .unwrap();
    if key.position_indexed {
        writeln!(s, "buffer b_index : uint;").unwrap();
    }
    reader(&mut s, "position", "float3", true, key.position_indexed, wide || comps != 3);
    reader(&mut s, "color", "float4", key.has_color, false, false);
    reader(&mut s, "size", "float", key.has_size, false, false);
    reader(&mut s, "rotation", "float", key.has_rotation, false, false);
    if key.domain == DomainType::Domain2D {
        writeln!(s, "float3 world(uint i) {{ float3 p = read_position(i); return float3(p.xy, 0) * u_scale; }}")
            .unwrap();
    } else {
        writeln!(s, "float3 world(uint i) {{ return read_position(i) * u_scale; }}").unwrap();
    }
    match key.view_type {
        ViewType::Markers => {
            let (shape, style) = key.marker.unwrap_or_default();
            let sdf = match shape {
                MarkerShape::Disc => "length(p) - r",
                MarkerShape::Diamond => "(abs(p.x) + abs(p.y) - r) / sqrt(2.0)",
                MarkerShape::Arrow => "sdf_arrow(p, 2.0 * r)",
            };
            writeln!(s, "vertex quad(uint i, uint corner) {{ center = u_view_proj * float4(world(i), 1); half = 0.5 * read_size(i) + u_antialias; }}").unwrap();
            writeln!(s, "float sdf(float2 p, float r) {{ return {sdf}; }}").unwrap();
            if shape == MarkerShape::Arrow {
                writeln!(s, "float2 local(float2 p, uint i) {{ return rotate(p, -read_rotation(i)); }}").unwrap();
            } else {
                writeln!(s, "float2 local(float2 p, uint i) {{ return p; }}").unwrap();
            }
            let body = match style {
                FillStyle::Filled => "fill = ramp(d)",
                FillStyle::Stroked => "stroke = ramp(abs(d) - u_linewidth / 2)",
                FillStyle::Outlined => "fill = ramp(d); stroke = ramp(abs(d) - u_linewidth / 2)",
            };
            writeln!(s, "fragment(float2 p, uint i) {{ float d = sdf(local(p, i), 0.5 * read_size(i)); {body}; }}")
                .unwrap();
        }
        ViewType::Edges => {
            let group = match key.topology.unwrap_or_default() {
                EdgeTopology::Segments => "(2k, 2k+1)",
                EdgeTopology::Triangles => "(3k, 3k+1), (3k+1, 3k+2), (3k+2, 3k)",
            };
            writeln!(s, "vertex line(uint i) {{ segments {group}; width = max(u_linewidth, 1); }}").unwrap();
            writeln!(s, "fragment(uint i) {{ color = read_color(i); }}").unwrap();
        }
        ViewType::Voxels => {
            let prim = match key.domain {
                DomainType::Domain2D => "square",
                DomainType::Domain3D => "cube",
            };
            writeln!(s, "vertex {prim}(uint i) {{ side = read_size(i); }}").unwrap();
            writeln!(s, "fragment(uint i) {{ color = read_color(i); }}").unwrap();
        }
    }
    s
}

impl Instance {
    pub(crate) fn resolve_pipeline(&self, key: PipelineKey) -> Arc<Pipeline> {
        self.inner.pipelines.lock().resolve(key)
    }

    pub fn pipeline_cache_stats(&self) -> PipelineCacheStats {
        self.inner.pipelines.lock().stats()
    }

    /// Writes the source of every resolved variant to `dir`, one file each.
    pub fn dump_pipelines(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut variants: Vec<_> = self.inner.pipelines.lock().variants.values().cloned().collect();
        variants.sort_by_key(|p| p.key.name());
        let mut written = Vec::with_capacity(variants.len());
        for p in variants {
            let path = dir.join(format!("{}.shader", p.key.name()));
            std::fs::write(&path, &p.source)?;
            written.push(path);
        }
        Ok(written)
    }
}
