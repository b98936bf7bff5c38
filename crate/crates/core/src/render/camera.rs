//! Orbit camera and its input bindings.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::{Matrix4, Perspective3, Point3, Vector3, Vector4};

use crate::view::{DomainType, ViewRuntime, ViewState};

/// Margin keeping pitch away from the poles.
pub const PITCH_EPSILON: f64 = 1e-3;
/// Radians of rotation per pixel of drag.
pub const DRAG_SENSITIVITY: f64 = 0.01;
/// Exponential zoom rate per scroll unit.
pub const SCROLL_SENSITIVITY: f64 = 0.1;

const DEFAULT_FOV_Y: f64 = std::f64::consts::FRAC_PI_4;
/// Elements sampled per view when fitting to data without an extent.
const FIT_SAMPLES: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputEvent {
    Drag { dx: f64, dy: f64 },
    Scroll { dz: f64 },
    Key(char),
}

/// Orbit camera looking at `target` from `distance` away. With zero yaw
/// and pitch it looks down the -z axis with +y up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub target: [f64; 3],
    pub distance: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
    pub aspect: f64,
}

impl Camera {
    pub fn new(aspect: f64) -> Self {
        let mut cam = Camera {
            target: [0.0; 3],
            distance: 2.0,
            yaw: 0.0,
            pitch: 0.0,
            fov_y: DEFAULT_FOV_Y,
            near: 0.0,
            far: 0.0,
            aspect,
        };
        cam.update_clip();
        cam
    }

    fn update_clip(&mut self) {
        self.near = self.distance * 1e-2;
        self.far = self.distance * 1e2;
    }

    pub fn eye(&self) -> [f64; 3] {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let d = self.distance;
        [
            self.target[0] + d * cp * sy,
            self.target[1] + d * sp,
            self.target[2] + d * cp * cy,
        ]
    }

    pub fn view(&self) -> Matrix4<f64> {
        let eye = Point3::from(self.eye());
        let target = Point3::from(self.target);
        Matrix4::look_at_rh(&eye, &target, &Vector3::y())
    }

    pub fn projection(&self) -> Matrix4<f64> {
        Perspective3::new(self.aspect, self.fov_y, self.near, self.far).to_homogeneous()
    }

    pub fn view_proj(&self) -> Matrix4<f64> {
        self.projection() * self.view()
    }

    /// World point to normalized device coordinates; `None` behind the eye.
    pub fn project(&self, world: [f64; 3]) -> Option<[f64; 3]> {
        let c = self.view_proj() * Vector4::new(world[0], world[1], world[2], 1.0);
        (c.w > 0.0).then(|| [c.x / c.w, c.y / c.w, c.z / c.w])
    }

    /// Normalized device coordinates back to a world point.
    pub fn unproject(&self, ndc: [f64; 3]) -> Option<[f64; 3]> {
        let inv = self.view_proj().try_inverse()?;
        let w = inv * Vector4::new(ndc[0], ndc[1], ndc[2], 1.0);
        (w.w != 0.0).then(|| [w.x / w.w, w.y / w.w, w.z / w.w])
    }
}

/// Axis-aligned bounds accumulated while fitting.
#[derive(Debug, Clone, Copy)]
struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Bounds {
    fn empty() -> Self {
        Bounds {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        }
    }

    fn add(&mut self, p: [f64; 3]) {
        if p.iter().all(|c| c.is_finite()) {
            for a in 0..3 {
                self.lo[a] = self.lo[a].min(p[a]);
                self.hi[a] = self.hi[a].max(p[a]);
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.lo[0] > self.hi[0]
    }
}

/// Owns the interactive camera and the auto-fit camera it resets to.
#[derive(Debug, Clone)]
pub struct CameraController {
    camera: Camera,
    fitted: Option<Camera>,
}

impl CameraController {
    pub fn new(width: u32, height: u32) -> Self {
        CameraController {
            camera: Camera::new(width as f64 / height as f64),
            fitted: None,
        }
    }

    pub fn camera(&self) -> Camera {
        self.camera
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    /// Frames the union of the views' domains: the `[0, extent·scale]` box
    /// when an extent is given, otherwise a sample of the current positions.
    pub(crate) fn fit(&mut self, views: &[(Arc<ViewState>, ViewRuntime)]) {
        let mut bounds = Bounds::empty();
        let mut all_2d = true;
        for (view, _) in views {
            let desc = &view.desc;
            all_2d &= desc.domain == DomainType::Domain2D;
            let s = desc.scale.map(f64::from);
            if desc.extent.iter().any(|e| *e > 0.0) {
                bounds.add([0.0; 3]);
                bounds.add(std::array::from_fn(|a| desc.extent[a] as f64 * s[a]));
                continue;
            }
            let pos = &view.bindings.position;
            let stride = desc.element_count.div_ceil(FIT_SAMPLES).max(1);
            for k in (0..desc.element_count).step_by(stride) {
                if let Some(p) = pos.fetch(k) {
                    let z = if desc.domain == DomainType::Domain2D { 0.0 } else { p[2] as f64 };
                    bounds.add([p[0] as f64 * s[0], p[1] as f64 * s[1], z * s[2]]);
                }
            }
        }
        self.fit_bounds(bounds, all_2d);
    }

    fn fit_bounds(&mut self, bounds: Bounds, flat: bool) {
        let mut cam = Camera::new(self.camera.aspect);
        if !bounds.is_empty() {
            let center: [f64; 3] = std::array::from_fn(|a| 0.5 * (bounds.lo[a] + bounds.hi[a]));
            let half: [f64; 3] = std::array::from_fn(|a| 0.5 * (bounds.hi[a] - bounds.lo[a]));
            let fov_x = 2.0 * ((cam.fov_y / 2.0).tan() * cam.aspect).atan();
            cam.target = center;
            cam.distance = if flat {
                let fit_x = half[0] / (fov_x / 2.0).tan();
                let fit_y = half[1] / (cam.fov_y / 2.0).tan();
                fit_x.max(fit_y).max(1e-3) * 1.05
            } else {
                let radius = half.iter().map(|h| h * h).sum::<f64>().sqrt().max(1e-3);
                radius / (cam.fov_y.min(fov_x) / 2.0).sin() * 1.05
            };
            cam.update_clip();
        }
        self.camera = cam;
        self.fitted = Some(cam);
    }

    pub fn handle_input(&mut self, event: InputEvent) {
        let cam = &mut self.camera;
        match event {
            InputEvent::Drag { dx, dy } => {
                cam.yaw += DRAG_SENSITIVITY * dx;
                let limit = FRAC_PI_2 - PITCH_EPSILON;
                cam.pitch = (cam.pitch + DRAG_SENSITIVITY * dy).clamp(-limit, limit);
            }
            InputEvent::Scroll { dz } => {
                cam.distance *= (-SCROLL_SENSITIVITY * dz).exp();
                cam.update_clip();
            }
            InputEvent::Key('r' | 'R') => self.reset(),
            InputEvent::Key(_) => {}
        }
    }

    /// Returns to the auto-fit camera, if one has been computed.
    pub fn reset(&mut self) {
        if let Some(c) = self.fitted {
            self.camera = c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fitted() -> CameraController {
        let mut c = CameraController::new(800, 600);
        let mut b = Bounds::empty();
        b.add([0.0, 0.0, 0.0]);
        b.add([10.0, 4.0, 2.0]);
        c.fit_bounds(b, false);
        c
    }

    #[test]
    fn default_orientation_looks_down_negative_z() {
        let cam = Camera::new(1.0);
        let eye = cam.eye();
        assert_eq!(eye, [0.0, 0.0, cam.distance]);
        let ndc = cam.project([0.0, 0.0, 0.0]).unwrap();
        assert!(ndc[0].abs() < 1e-12 && ndc[1].abs() < 1e-12);
        let right = cam.project([0.1, 0.0, 0.0]).unwrap();
        assert!(right[0] > 0.0);
        let up = cam.project([0.0, 0.1, 0.0]).unwrap();
        assert!(up[1] > 0.0);
    }

    #[test]
    fn reset_after_drag() {
        let mut c = fitted();
        let initial = c.camera();
        c.handle_input(InputEvent::Drag { dx: 40.0, dy: -13.0 });
        c.handle_input(InputEvent::Scroll { dz: 3.0 });
        assert_ne!(c.camera(), initial);
        c.handle_input(InputEvent::Key('R'));
        assert_eq!(c.camera(), initial);
    }

    #[test]
    fn scroll_inverse_pair() {
        let mut c = fitted();
        let d = c.camera().distance;
        c.handle_input(InputEvent::Scroll { dz: 1.0 });
        c.handle_input(InputEvent::Scroll { dz: -1.0 });
        assert!((c.camera().distance - d).abs() <= 1e-6 * d);
    }

    #[test]
    fn pitch_clamps_and_stays_invertible() {
        let mut c = fitted();
        c.handle_input(InputEvent::Drag { dx: 0.0, dy: 1e4 });
        let cam = c.camera();
        assert_eq!(cam.pitch, FRAC_PI_2 - PITCH_EPSILON);
        assert!(cam.view().try_inverse().is_some());
        assert!(cam.projection().try_inverse().is_some());
        c.handle_input(InputEvent::Drag { dx: 0.0, dy: -1e5 });
        assert_eq!(c.camera().pitch, -(FRAC_PI_2 - PITCH_EPSILON));
    }

    #[test]
    fn fit_contains_bounds() {
        let c = fitted();
        let cam = c.camera();
        for x in [0.0, 10.0] {
            for y in [0.0, 4.0] {
                for z in [0.0, 2.0] {
                    let n = cam.project([x, y, z]).unwrap();
                    assert!(n.iter().all(|v| v.abs() <= 1.0), "{n:?}");
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn world_clip_round_trip(
                yaw in -6.0f64..6.0, pitch in -1.5f64..1.5,
                nx in -0.9f64..0.9, ny in -0.9f64..0.9, nz in -0.9f64..0.9,
            ) {
                let mut cam = fitted().camera();
                cam.yaw = yaw;
                cam.pitch = pitch;
                // Interior point of the frustum, via its NDC coordinates.
                let w = cam.unproject([nx, ny, nz]).unwrap();
                let back = cam.unproject(cam.project(w).unwrap()).unwrap();
                let scale = w.iter().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
                for a in 0..3 {
                    prop_assert!((back[a] - w[a]).abs() <= 1e-4 * scale);
                }
            }
        }
    }
}
