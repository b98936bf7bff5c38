//! Triangle meshes: OBJ loading, smooth normals and the breathing
//! deformation, drawn as vertex markers plus indexed triangle edges.

use std::path::{Path, PathBuf};

use crate::device::{Device, DeviceBuffer};
use crate::engine::Instance;
use crate::error::{Error, Result};
use crate::view::{
    DomainType, EdgeOptions, EdgeTopology, FormatDescription, PropertyDescription, PropertyType, ViewDescription,
    ViewHandle, ViewOptions, ViewType,
};

/// Bundled unit icosphere.
pub const ICOSPHERE_OBJ: &str = include_str!("../../assets/icosphere.obj");
/// Bundled torus.
pub const TORUS_OBJ: &str = include_str!("../../assets/torus.obj");

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<[f32; 3]>,
    pub rest_positions: Vec<[f32; 3]>,
}

impl Mesh {
    /// Builds a mesh and computes its smooth normals.
    pub fn new(vertices: Vec<[f32; 3]>, triangles: Vec<[u32; 3]>) -> Self {
        let normals = compute_smooth_normals(&vertices, &triangles);
        Mesh {
            rest_positions: vertices.clone(),
            vertices,
            triangles,
            normals,
        }
    }

    /// Flattened triangle indices.
    pub fn indices(&self) -> Vec<u32> {
        self.triangles.iter().flatten().copied().collect()
    }
}

fn parse_index(tok: &str, count: usize) -> std::result::Result<u32, String> {
    let head = tok.split('/').next().unwrap_or_default();
    let raw: i64 = head.parse().map_err(|_| format!("bad vertex index {tok:?}"))?;
    let resolved = match raw {
        0 => return Err("vertex index 0 is invalid".into()),
        r if r > 0 => r - 1,
        r => count as i64 + r,
    };
    if resolved < 0 || resolved >= count as i64 {
        return Err(format!("vertex index {raw} out of range for {count} vertices"));
    }
    Ok(resolved as u32)
}

/// Parses OBJ text. Only `v` and `f` lines are used; faces with more than
/// three vertices are fan-triangulated from their first vertex.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let coords: Vec<f32> = toks
                    .take(3)
                    .map(|t| t.parse::<f32>().map_err(|_| err(line_no, format!("bad coordinate {t:?}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err(line_no, "vertex needs three coordinates".into()));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = toks
                    .map(|t| parse_index(t, vertices.len()).map_err(|m| err(line_no, m)))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(line_no, "face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(Error::EmptyMesh(path.to_path_buf()));
    }
    Ok(Mesh::new(vertices, triangles))
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    parse_obj(&std::fs::read_to_string(path)?, path)
}

/// Loads a bundled mesh by name (`icosphere` or `torus`).
pub fn builtin_mesh(name: &str) -> Option<Mesh> {
    let text = match name {
        "icosphere" => ICOSPHERE_OBJ,
        "torus" => TORUS_OBJ,
        _ => return None,
    };
    parse_obj(text, &PathBuf::from(format!("<{name}>"))).ok()
}

fn sub(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Area-weighted vertex normals: the normalized sum of the unnormalized
/// face normals around each vertex.
pub fn compute_smooth_normals(vertices: &[[f32; 3]], triangles: &[[u32; 3]]) -> Vec<[f32; 3]> {
    let mut acc = vec![[0.0f64; 3]; vertices.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        for &i in t {
            for k in 0..3 {
                acc[i as usize][k] += n[k] as f64;
            }
        }
    }
    let mut degenerate = 0;
    let normals = acc
        .iter()
        .map(|s| {
            let len = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            if len > 0.0 {
                s.map(|c| (c / len) as f32)
            } else {
                degenerate += 1;
                [0.0, 0.0, 1.0]
            }
        })
        .collect();
    if degenerate > 0 {
        log::warn!("{degenerate} vertices have no defined normal; using +z");
    }
    normals
}

/// `rest + scale·normal` for every vertex.
pub fn breathe_deform(rest: &[[f32; 3]], normals: &[[f32; 3]], scale: f32) -> Vec<[f32; 3]> {
    rest.iter()
        .zip(normals)
        .map(|(p, n)| [p[0] + scale * n[0], p[1] + scale * n[1], p[2] + scale * n[2]])
        .collect()
}

/// Device twin of [`breathe_deform`] on packed `f32x3` buffers.
pub fn breathe_device(
    device: &Device,
    coords: &DeviceBuffer,
    rest: &DeviceBuffer,
    normals: &DeviceBuffer,
    n: usize,
    scale: f32,
) {
    device.dispatch(n, |i| {
        let p: [f32; 3] = rest.load_vec(i);
        let q: [f32; 3] = normals.load_vec(i);
        coords.store_vec(i, [p[0] + scale * q[0], p[1] + scale * q[1], p[2] + scale * q[2]]);
    });
}

/// Periodic breathing amplitude: each call advances the angle by a fixed
/// step and returns `amplitude·sin(angle)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSweep {
    pub degrees: f64,
    pub step: f64,
    pub amplitude: f32,
}

impl AngleSweep {
    pub fn new(amplitude: f32, step: f64) -> Self {
        AngleSweep {
            degrees: 0.0,
            step,
            amplitude,
        }
    }

    pub fn scale(&self) -> f32 {
        self.amplitude * self.degrees.to_radians().sin() as f32
    }

    pub fn vary_angle(&mut self) -> f32 {
        self.degrees = (self.degrees + self.step).rem_euclid(360.0);
        self.scale()
    }
}

/// Device-resident mesh drawn as vertex markers and triangle edges that
/// share one vertex allocation.
pub struct MeshSample {
    pub views: [ViewHandle; 2],
    pub sweep: AngleSweep,
    coords: DeviceBuffer,
    rest: DeviceBuffer,
    normals: DeviceBuffer,
    vertex_count: usize,
}

impl MeshSample {
    pub fn new(inst: &Instance, mesh: &Mesh, amplitude: f32) -> Result<Self> {
        let v = mesh.vertices.len();
        let indices = mesh.indices();
        let (coords, vertices) = inst.alloc_linear(v * 12)?;
        let (_, edges) = inst.alloc_linear(indices.len() * 4)?;

        let mut desc = ViewDescription::new(ViewType::Markers, DomainType::Domain3D, v).with_property(
            PropertyType::Position,
            PropertyDescription::new(vertices.clone(), v, FormatDescription::FLOAT3),
        );
        desc.default_size = 4.0;
        desc.default_color = [1.0, 0.85, 0.3, 1.0];
        let markers = inst.create_view(&desc)?;

        let mut desc = ViewDescription::new(ViewType::Edges, DomainType::Domain3D, indices.len()).with_property(
            PropertyType::Position,
            PropertyDescription::new(vertices.clone(), v, FormatDescription::FLOAT3).indexed(
                edges.clone(),
                indices.len(),
                4,
            ),
        );
        desc.options = ViewOptions::Edges(EdgeOptions {
            topology: EdgeTopology::Triangles,
        });
        desc.default_color = [0.4, 0.6, 0.9, 1.0];
        let wire = inst.create_view(&desc)?;

        vertices.write_f32(0, mesh.vertices.as_flattened())?;
        edges.write_u32(0, &indices)?;
        let device = inst.device();
        let rest = device.alloc(v * 12)?;
        let normals = device.alloc(v * 12)?;
        for i in 0..v {
            rest.store_vec(i, mesh.rest_positions[i]);
            normals.store_vec(i, mesh.normals[i]);
        }
        Ok(MeshSample {
            views: [markers, wire],
            sweep: AngleSweep::new(amplitude, 2.0),
            coords,
            rest,
            normals,
            vertex_count: v,
        })
    }

    pub fn step(&mut self, inst: &Instance) -> Result<()> {
        let scale = self.sweep.vary_angle();
        inst.prepare_views()?;
        breathe_device(inst.device(), &self.coords, &self.rest, &self.normals, self.vertex_count, scale);
        inst.update_views()
    }

    pub fn positions(&self) -> Vec<[f32; 3]> {
        (0..self.vertex_count).map(|i| self.coords.load_vec(i)).collect()
    }
}
