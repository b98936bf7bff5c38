//! Declarative view model: data formats, property sources with optional
//! index indirection, view descriptions and their validation, and the
//! runtime state a view exposes after creation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Weak};

use parking_lot::Mutex;

use crate::device::DeviceBuffer;
use crate::engine::{Instance, InstanceInner};
use crate::error::{Error, Result};
use crate::memory::SharedAllocation;
use crate::render::pipeline::{Pipeline, PipelineKey};

pub type ViewId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarKind {
    SignedInt,
    UnsignedInt,
    Float,
}

/// Interpretation of one element of a raw allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FormatDescription {
    kind: ScalarKind,
    bit_width: u8,
    components: u8,
}

impl FormatDescription {
    pub const FLOAT: Self = Self::raw(ScalarKind::Float, 32, 1);
    pub const FLOAT2: Self = Self::raw(ScalarKind::Float, 32, 2);
    pub const FLOAT3: Self = Self::raw(ScalarKind::Float, 32, 3);
    pub const FLOAT4: Self = Self::raw(ScalarKind::Float, 32, 4);
    pub const DOUBLE: Self = Self::raw(ScalarKind::Float, 64, 1);
    pub const DOUBLE2: Self = Self::raw(ScalarKind::Float, 64, 2);
    pub const DOUBLE3: Self = Self::raw(ScalarKind::Float, 64, 3);
    pub const DOUBLE4: Self = Self::raw(ScalarKind::Float, 64, 4);
    pub const INT: Self = Self::raw(ScalarKind::SignedInt, 32, 1);
    pub const UINT: Self = Self::raw(ScalarKind::UnsignedInt, 32, 1);
    pub const UINT2: Self = Self::raw(ScalarKind::UnsignedInt, 32, 2);
    pub const CHAR: Self = Self::raw(ScalarKind::SignedInt, 8, 1);

    const fn raw(kind: ScalarKind, bit_width: u8, components: u8) -> Self {
        FormatDescription {
            kind,
            bit_width,
            components,
        }
    }

    pub fn new(kind: ScalarKind, bit_width: u32, components: u32) -> Result<Self> {
        if !matches!(bit_width, 8 | 16 | 32 | 64) {
            return Err(Error::InvalidFormat(format!("bit width {bit_width}")));
        }
        if kind == ScalarKind::Float && bit_width == 8 {
            return Err(Error::InvalidFormat("8-bit floats do not exist".into()));
        }
        if !(1..=4).contains(&components) {
            return Err(Error::InvalidFormat(format!("{components} components")));
        }
        Ok(Self::raw(kind, bit_width as u8, components as u8))
    }

    /// Format of a host type, e.g. `FormatDescription::of::<[f32; 3]>()`.
    pub fn of<T: HasFormat>() -> Self {
        T::FORMAT
    }

    pub fn kind(&self) -> ScalarKind {
        self.kind
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width as u32
    }

    pub fn components(&self) -> u32 {
        self.components as u32
    }

    pub fn bytes_per_element(&self) -> usize {
        self.components as usize * self.bit_width as usize / 8
    }
}

impl fmt::Display for FormatDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            ScalarKind::SignedInt => "i",
            ScalarKind::UnsignedInt => "u",
            ScalarKind::Float => "f",
        };
        write!(f, "{prefix}{}x{}", self.bit_width, self.components)
    }
}

/// Host types with a fixed device format.
pub trait HasFormat {
    const FORMAT: FormatDescription;
}

macro_rules! has_format {
    ($($t:ty => $kind:ident, $bits:expr, $n:expr;)*) => {
        $(impl HasFormat for $t {
            const FORMAT: FormatDescription = FormatDescription::raw(ScalarKind::$kind, $bits, $n);
        })*
    };
}

has_format! {
    f32 => Float, 32, 1; [f32; 2] => Float, 32, 2; [f32; 3] => Float, 32, 3; [f32; 4] => Float, 32, 4;
    f64 => Float, 64, 1; [f64; 2] => Float, 64, 2; [f64; 3] => Float, 64, 3; [f64; 4] => Float, 64, 4;
    i8 => SignedInt, 8, 1; i16 => SignedInt, 16, 1; i32 => SignedInt, 32, 1; i64 => SignedInt, 64, 1;
    u8 => UnsignedInt, 8, 1; u16 => UnsignedInt, 16, 1; u32 => UnsignedInt, 32, 1; u64 => UnsignedInt, 64, 1;
    [i32; 2] => SignedInt, 32, 2; [u32; 2] => UnsignedInt, 32, 2; [u32; 3] => UnsignedInt, 32, 3;
}

/// Integer index buffer used to fetch a property indirectly.
#[derive(Debug, Clone)]
pub struct IndexDescription {
    pub source: SharedAllocation,
    /// Number of indices.
    pub size: usize,
    /// Bytes per index: 1, 2 or 4.
    pub index_size: usize,
}

/// Data source of one visual attribute.
#[derive(Debug, Clone)]
pub struct PropertyDescription {
    pub source: SharedAllocation,
    /// Number of elements in `source`.
    pub size: usize,
    pub format: FormatDescription,
    pub indices: Option<IndexDescription>,
}

impl PropertyDescription {
    pub fn new(source: SharedAllocation, size: usize, format: FormatDescription) -> Self {
        PropertyDescription {
            source,
            size,
            format,
            indices: None,
        }
    }

    pub fn indexed(mut self, source: SharedAllocation, size: usize, index_size: usize) -> Self {
        self.indices = Some(IndexDescription {
            source,
            size,
            index_size,
        });
        self
    }

    /// True iff every stored index addresses an element of the property.
    /// Reads the current device contents; properties without indices are
    /// trivially valid.
    pub fn validate_indices(&self) -> Result<bool> {
        let Some(idx) = &self.indices else {
            return Ok(true);
        };
        let bytes = idx.source.read_to_host(0, idx.size * idx.index_size)?;
        let ok = match idx.index_size {
            1 => bytes.iter().all(|&b| (b as usize) < self.size),
            2 => bytes
                .chunks_exact(2)
                .all(|c| (u16::from_le_bytes([c[0], c[1]]) as usize) < self.size),
            4 => bytes
                .chunks_exact(4)
                .all(|c| (u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize) < self.size),
            w => return Err(Error::BadIndexWidth(w)),
        };
        Ok(ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PropertyType {
    Position,
    Color,
    Size,
    Rotation,
}

impl PropertyType {
    pub fn name(self) -> &'static str {
        match self {
            PropertyType::Position => "position",
            PropertyType::Color => "color",
            PropertyType::Size => "size",
            PropertyType::Rotation => "rotation",
        }
    }

    fn accepts(self, f: FormatDescription) -> bool {
        let float = f.kind == ScalarKind::Float;
        match self {
            PropertyType::Position => float && matches!(f.bit_width, 32 | 64) && f.components >= 2,
            PropertyType::Color => float && f.bit_width == 32 && f.components >= 3,
            PropertyType::Size | PropertyType::Rotation => f == FormatDescription::FLOAT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ViewType {
    #[default]
    Markers,
    Edges,
    Voxels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DomainType {
    Domain2D,
    #[default]
    Domain3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MarkerShape {
    #[default]
    Disc,
    Diamond,
    Arrow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FillStyle {
    #[default]
    Filled,
    Stroked,
    Outlined,
}

/// How edge endpoints are grouped into segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum EdgeTopology {
    /// Endpoints `(0,1)`, `(2,3)`, ...
    #[default]
    Segments,
    /// Every three endpoints form a closed triangle outline.
    Triangles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MarkerOptions {
    pub shape: MarkerShape,
    pub style: FillStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct EdgeOptions {
    pub topology: EdgeTopology,
}

/// Options specific to each view type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewOptions {
    Markers(MarkerOptions),
    Edges(EdgeOptions),
    Voxels,
}

impl ViewOptions {
    pub fn default_for(view_type: ViewType) -> Self {
        match view_type {
            ViewType::Markers => ViewOptions::Markers(MarkerOptions::default()),
            ViewType::Edges => ViewOptions::Edges(EdgeOptions::default()),
            ViewType::Voxels => ViewOptions::Voxels,
        }
    }

    fn matches(&self, view_type: ViewType) -> bool {
        matches!(
            (self, view_type),
            (ViewOptions::Markers(_), ViewType::Markers)
                | (ViewOptions::Edges(_), ViewType::Edges)
                | (ViewOptions::Voxels, ViewType::Voxels)
        )
    }
}

/// Everything needed to draw a set of elements from raw allocations.
#[derive(Debug, Clone)]
pub struct ViewDescription {
    pub view_type: ViewType,
    pub domain: DomainType,
    pub element_count: usize,
    /// Spatial domain size; all zeros fits the camera to the data.
    pub extent: [f32; 3],
    pub properties: BTreeMap<PropertyType, PropertyDescription>,
    pub visible: bool,
    pub default_color: [f32; 4],
    /// Pixels for markers, world units for voxels.
    pub default_size: f32,
    /// Pixels. Edges draw 1-pixel lines when this is 0.
    pub linewidth: f32,
    pub scale: [f32; 3],
    pub options: ViewOptions,
}

impl ViewDescription {
    pub fn new(view_type: ViewType, domain: DomainType, element_count: usize) -> Self {
        ViewDescription {
            view_type,
            domain,
            element_count,
            extent: [0.0; 3],
            properties: BTreeMap::new(),
            visible: true,
            default_color: [1.0, 1.0, 1.0, 1.0],
            default_size: 10.0,
            linewidth: 0.0,
            scale: [1.0; 3],
            options: ViewOptions::default_for(view_type),
        }
    }

    pub fn with_property(mut self, ty: PropertyType, prop: PropertyDescription) -> Self {
        self.properties.insert(ty, prop);
        self
    }

    pub fn marker_options(&self) -> Option<MarkerOptions> {
        match self.options {
            ViewOptions::Markers(m) => Some(m),
            _ => None,
        }
    }

    pub fn edge_topology(&self) -> EdgeTopology {
        match self.options {
            ViewOptions::Edges(e) => e.topology,
            _ => EdgeTopology::Segments,
        }
    }

    fn allocations(&self) -> impl Iterator<Item = &SharedAllocation> {
        self.properties.values().flat_map(|p| {
            std::iter::once(&p.source).chain(p.indices.as_ref().map(|i| &i.source))
        })
    }
}

fn check_color(rgba: [f32; 4]) -> Result<()> {
    if rgba.iter().all(|c| (0.0..=1.0).contains(c)) {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("color {rgba:?} has channels outside [0, 1]")))
    }
}

fn check_size(size: f32) -> Result<()> {
    if size > 0.0 && size.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("size {size} must be positive")))
    }
}

/// Mutable per-view state applied at frame boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewRuntime {
    pub visible: bool,
    pub default_color: [f32; 4],
    pub default_size: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ViewChange {
    ToggleVisibility,
    DefaultColor([f32; 4]),
    DefaultSize(f32),
}

/// Index buffer binding.
#[derive(Debug, Clone)]
pub(crate) struct IndexBinding {
    buffer: DeviceBuffer,
    width: usize,
    len: usize,
}

impl IndexBinding {
    #[inline]
    pub fn get(&self, k: usize) -> Option<usize> {
        if k >= self.len {
            return None;
        }
        Some(match self.width {
            1 => self.buffer.load_u8(k) as usize,
            2 => self.buffer.load_u16(k) as usize,
            _ => self.buffer.load_u32(k) as usize,
        })
    }
}

/// A property bound for reading by the render path, directly from the
/// allocation's device memory.
#[derive(Debug, Clone)]
pub(crate) struct PropertyBinding {
    buffer: DeviceBuffer,
    format: FormatDescription,
    size: usize,
    indices: Option<IndexBinding>,
}

impl PropertyBinding {
    fn new(desc: &PropertyDescription) -> Self {
        PropertyBinding {
            buffer: desc.source.buffer.clone(),
            format: desc.format,
            size: desc.size,
            indices: desc.indices.as_ref().map(|i| IndexBinding {
                buffer: i.source.buffer.clone(),
                width: i.index_size,
                len: i.size,
            }),
        }
    }

    /// Value for element `k`, widened to four `f32` components with missing
    /// components taken from `(0, 0, 0, 1)`. `None` when an index points
    /// outside the property.
    #[inline]
    pub fn fetch(&self, k: usize) -> Option<[f32; 4]> {
        let i = match &self.indices {
            Some(ix) => ix.get(k)?,
            None => k,
        };
        if i >= self.size {
            return None;
        }
        let mut out = [0.0, 0.0, 0.0, 1.0];
        let n = self.format.components as usize;
        if self.format.bit_width == 64 {
            for (c, slot) in out.iter_mut().enumerate().take(n) {
                // Double sources are converted at read time.
                *slot = self.buffer.load_f64(i * n + c) as f32;
            }
        } else {
            for (c, slot) in out.iter_mut().enumerate().take(n) {
                *slot = self.buffer.load_f32(i * n + c);
            }
        }
        Some(out)
    }

    #[inline]
    pub fn fetch_scalar(&self, k: usize) -> Option<f32> {
        self.fetch(k).map(|v| v[0])
    }
}

/// Resolved bindings of a view, one per declared property.
#[derive(Debug, Clone)]
pub(crate) struct ViewBindings {
    pub position: PropertyBinding,
    pub color: Option<PropertyBinding>,
    pub size: Option<PropertyBinding>,
    pub rotation: Option<PropertyBinding>,
}

pub(crate) struct ViewState {
    pub id: ViewId,
    pub desc: ViewDescription,
    pub pipeline: Arc<Pipeline>,
    pub bindings: ViewBindings,
    pub runtime: Mutex<ViewRuntime>,
    alloc_ids: Vec<u64>,
}

impl ViewState {
    pub fn references(&self, alloc_id: u64) -> bool {
        self.alloc_ids.contains(&alloc_id)
    }

    pub fn apply(&self, change: ViewChange) {
        let mut rt = self.runtime.lock();
        match change {
            ViewChange::ToggleVisibility => rt.visible = !rt.visible,
            ViewChange::DefaultColor(c) => rt.default_color = c,
            ViewChange::DefaultSize(s) => rt.default_size = s,
        }
    }
}

/// Handle to a created view. Runtime changes made through it take effect at
/// the next frame boundary, or atomically at `update_views` when made inside
/// a compute critical section.
#[derive(Clone)]
pub struct ViewHandle {
    state: Arc<ViewState>,
    instance: Weak<InstanceInner>,
}

impl fmt::Debug for ViewHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ViewHandle")
            .field("id", &self.state.id)
            .field("view_type", &self.state.desc.view_type)
            .finish()
    }
}

impl ViewHandle {
    pub fn id(&self) -> ViewId {
        self.state.id
    }

    pub fn description(&self) -> &ViewDescription {
        &self.state.desc
    }

    /// Committed runtime state, i.e. what the next frame will draw if no
    /// change is pending.
    pub fn runtime(&self) -> ViewRuntime {
        *self.state.runtime.lock()
    }

    pub fn is_visible(&self) -> bool {
        self.runtime().visible
    }

    pub fn toggle_visibility(&self) {
        self.submit(ViewChange::ToggleVisibility);
    }

    pub fn set_default_color(&self, rgba: [f32; 4]) -> Result<()> {
        check_color(rgba)?;
        self.submit(ViewChange::DefaultColor(rgba));
        Ok(())
    }

    pub fn set_default_size(&self, size: f32) -> Result<()> {
        check_size(size)?;
        self.submit(ViewChange::DefaultSize(size));
        Ok(())
    }

    fn submit(&self, change: ViewChange) {
        match self.instance.upgrade() {
            Some(inner) => inner.sync.submit_change(&self.state, change),
            None => self.state.apply(change),
        }
    }
}

impl Instance {
    /// Validates `desc`, resolves its render pipeline and registers the view.
    pub fn create_view(&self, desc: &ViewDescription) -> Result<ViewHandle> {
        self.inner.ensure_live()?;
        let position = desc.properties.get(&PropertyType::Position).ok_or(Error::MissingPosition)?;

        {
            let reg = self.inner.registry.lock();
            for alloc in desc.allocations() {
                if alloc.instance_id != self.inner.id {
                    return Err(Error::ForeignAllocation(alloc.id));
                }
                if !reg.allocations.contains_key(&alloc.id) {
                    return Err(Error::InvalidHandle(alloc.id));
                }
            }
        }

        for (ty, prop) in &desc.properties {
            if let Some(idx) = &prop.indices {
                if !matches!(idx.index_size, 1 | 2 | 4) {
                    return Err(Error::BadIndexWidth(idx.index_size));
                }
            }
            if !ty.accepts(prop.format) {
                return Err(Error::UnsupportedFormat {
                    property: ty.name(),
                    format: prop.format.to_string(),
                });
            }
            if prop.size == 0 {
                return Err(Error::InvalidDescription(format!("{} has zero elements", ty.name())));
            }
            let needed = prop.size * prop.format.bytes_per_element();
            if prop.source.byte_size() < needed {
                return Err(Error::SizeMismatch {
                    property: ty.name(),
                    needed,
                    available: prop.source.byte_size(),
                });
            }
            let covered = match &prop.indices {
                Some(idx) => {
                    let needed = idx.size * idx.index_size;
                    if idx.source.byte_size() < needed {
                        return Err(Error::SizeMismatch {
                            property: "index source",
                            needed,
                            available: idx.source.byte_size(),
                        });
                    }
                    idx.size
                }
                None => prop.size,
            };
            if covered < desc.element_count {
                return Err(Error::SizeMismatch {
                    property: ty.name(),
                    needed: desc.element_count,
                    available: covered,
                });
            }
        }

        if desc.element_count == 0 {
            return Err(Error::InvalidDescription("element_count must be positive".into()));
        }
        if !desc.options.matches(desc.view_type) {
            return Err(Error::InvalidDescription(format!(
                "options {:?} do not apply to {:?} views",
                desc.options, desc.view_type
            )));
        }
        if desc.view_type == ViewType::Edges {
            let group = match desc.edge_topology() {
                EdgeTopology::Segments => 2,
                EdgeTopology::Triangles => 3,
            };
            if !desc.element_count.is_multiple_of(group) {
                return Err(Error::InvalidDescription(format!(
                    "{} edge endpoints is not a multiple of {group}",
                    desc.element_count
                )));
            }
        }
        check_color(desc.default_color)?;
        check_size(desc.default_size)?;
        if !(desc.linewidth >= 0.0) {
            return Err(Error::InvalidValue(format!("linewidth {}", desc.linewidth)));
        }
        if !desc.scale.iter().all(|s| *s > 0.0) {
            return Err(Error::InvalidValue(format!("scale {:?}", desc.scale)));
        }
        if !desc.extent.iter().all(|e| *e >= 0.0) {
            return Err(Error::InvalidValue(format!("extent {:?}", desc.extent)));
        }
        if let Some(m) = desc.marker_options() {
            if m.style != FillStyle::Filled && desc.linewidth <= 0.0 {
                return Err(Error::InvalidValue(format!(
                    "{:?} markers need a positive linewidth",
                    m.style
                )));
            }
        }

        let bindings = ViewBindings {
            position: PropertyBinding::new(position),
            color: desc.properties.get(&PropertyType::Color).map(PropertyBinding::new),
            size: desc.properties.get(&PropertyType::Size).map(PropertyBinding::new),
            rotation: desc.properties.get(&PropertyType::Rotation).map(PropertyBinding::new),
        };
        let pipeline = self.resolve_pipeline(PipelineKey::for_description(desc));
        let mut alloc_ids: Vec<u64> = desc.allocations().map(|a| a.id).collect();
        alloc_ids.sort_unstable();
        alloc_ids.dedup();

        let mut reg = self.inner.registry.lock();
        reg.next_view += 1;
        let id = reg.next_view;
        let state = Arc::new(ViewState {
            id,
            desc: desc.clone(),
            pipeline,
            bindings,
            runtime: Mutex::new(ViewRuntime {
                visible: desc.visible,
                default_color: desc.default_color,
                default_size: desc.default_size,
            }),
            alloc_ids,
        });
        reg.views.insert(id, Arc::clone(&state));
        reg.counters.views_created += 1;
        Ok(ViewHandle {
            state,
            instance: Arc::downgrade(&self.inner),
        })
    }

    /// Unregisters a view. Its allocations stay alive and may be freed
    /// afterwards. Destroying a view twice does nothing.
    pub fn destroy_view(&self, view: &ViewHandle) {
        let mut reg = self.inner.registry.lock();
        if reg.views.remove(&view.id()).is_some() {
            reg.counters.views_destroyed += 1;
        }
    }

    /// Ids of the registered views, in creation order.
    pub fn view_ids(&self) -> Vec<ViewId> {
        self.inner.registry.lock().views.keys().copied().collect()
    }

    /// Allocates an `nx*ny*nz` lattice of `f32x3` positions, `x` fastest,
    /// then `y`, then `z`, and returns it as a ready position property.
    pub fn make_structured_grid(&self, extent: [usize; 3]) -> Result<PropertyDescription> {
        let [nx, ny, nz] = extent;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidValue(format!("grid extent {extent:?}")));
        }
        let count = nx
            .checked_mul(ny)
            .and_then(|c| c.checked_mul(nz))
            .ok_or(Error::OutOfDeviceMemory { requested: usize::MAX })?;
        let bytes = count
            .checked_mul(12)
            .ok_or(Error::OutOfDeviceMemory { requested: usize::MAX })?;
        let (region, alloc) = self.alloc_linear(bytes)?;
        self.device().dispatch(count, |p| {
            let x = p % nx;
            let y = (p / nx) % ny;
            let z = p / (nx * ny);
            region.store_vec(p, [x as f32, y as f32, z as f32]);
        });
        Ok(PropertyDescription::new(alloc, count, FormatDescription::FLOAT3))
    }
}
