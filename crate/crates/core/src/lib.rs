//! Occlusion-ordered latent rendering.
//!
//! Per-object feature layers are stacked front to back and integrated with a
//! volume-rendering quadrature: each object carries a transmittance map (its
//! box, optionally shaped by its subject-token attention) and a semantic
//! density that is scheduled across denoising steps. Objects nearer the
//! camera attenuate everything behind them, so the occlusion graph is
//! honored by construction.
//!
//! The crate also ships a reference single-ray volume renderer
//! ([`oracle`]), a toy denoising loop and a pixel-space compositor
//! ([`harness`]), and the scene-file format used by the CLI ([`scene`]).

// Range checks are written `!(x >= lo)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod harness;
pub mod oracle;
pub mod pnm;
pub mod render;
pub mod scene;
pub mod schedule;

pub use error::{Error, Result};
pub use graph::{topological_order, validate_graph, BBox, FrontToBackOrder, OcclusionGraph, SceneObject};
pub use grid::{FeatureGrid, ScalarMap};
pub use harness::{composite_pixels, opacity_sweep, run_generation, CompositeOptions, ToyDenoiserConfig};
pub use render::{
    density_to_opacity, latent_render, latent_render_unnormalized, opacity_to_density, RenderDiagnostics,
    RenderInputs,
};
pub use schedule::{DensitySchedule, ScheduleKind};
