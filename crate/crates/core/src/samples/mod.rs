//! End-to-end samples: Potts lattice, gravitational N-body and mesh
//! breathing. Each has a host reference, device kernels and a runner that
//! binds the device state to views.

pub mod mesh;
pub mod nbody;
pub mod potts;
