//! JSON scene files.
//!
//! ```json
//! {
//!   "canvas": { "width": 64, "height": 64 },
//!   "objects": [
//!     { "id": "cat", "prompt": ["a", "cat"], "bbox": [0.1, 0.2, 0.6, 0.9],
//!       "opacity": 0.8, "color": [1, 0, 0] },
//!     { "id": "wall", "prompt": [], "bbox": [0, 0, 1, 1] }
//!   ],
//!   "occlusions": [["cat", "wall"]],
//!   "schedule": { "kind": "inverse_proportional", "steps": 25 },
//!   "render": { "attention_shaping": true, "epsilon": 1e-8 }
//! }
//! ```
//!
//! Omitted opacities default to 0.8 and omitted step counts to 25.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::rasterize_bbox;
use crate::graph::{validate_graph, BBox, OcclusionGraph, SceneObject};
use crate::harness::{CompositeOptions, ToyDenoiserConfig};
use crate::render::{opacity_to_density, DEFAULT_EPSILON};
use crate::schedule::{DensitySchedule, ScheduleKind};

pub const DEFAULT_OPACITY: f64 = 0.8;
pub const DEFAULT_STEPS: u32 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    #[serde(default)]
    pub prompt: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_index: Option<usize>,
    pub bbox: [f64; 4],
    #[serde(default = "default_opacity")]
    pub opacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f64; 3]>,
    #[serde(default)]
    pub embedding_seed: u64,
}

fn default_opacity() -> f64 {
    DEFAULT_OPACITY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub kind: ScheduleKind,
    #[serde(default = "default_steps")]
    pub steps: u32,
}

fn default_steps() -> u32 {
    DEFAULT_STEPS
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::default(),
            steps: DEFAULT_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSpec {
    #[serde(default = "default_true")]
    pub attention_shaping: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_true() -> bool {
    true
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            attention_shaping: true,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Toy denoiser settings; the latent grid matches the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_blend")]
    pub blend: f64,
}

fn default_layers() -> usize {
    3
}

fn default_channels() -> usize {
    8
}

fn default_blend() -> f64 {
    1.0
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            layers: default_layers(),
            channels: default_channels(),
            seed: 0,
            blend: default_blend(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub canvas: Canvas,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub occlusions: Vec<(String, String)>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub render: RenderSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{level}: {}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene: {0}")]
    Parse(String),
    #[error("invalid scene: {}", .0.iter().filter(|d| d.is_error()).map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Diagnostic>),
}

impl SceneError {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            SceneError::Io { path, source } => vec![Diagnostic::error(path.clone(), source.to_string())],
            SceneError::Parse(msg) => vec![Diagnostic::error("$", format!("malformed scene: {msg}"))],
            SceneError::Validation(d) => d.clone(),
        }
    }
}

impl SceneFile {
    pub fn graph(&self) -> OcclusionGraph {
        OcclusionGraph {
            objects: self
                .objects
                .iter()
                .map(|o| SceneObject {
                    id: o.id.clone(),
                    prompt_tokens: o.prompt.clone(),
                    subject_index: o.subject_index,
                    bbox: BBox::from_array(o.bbox),
                    opacity: o.opacity,
                    color: o.color,
                    embedding_seed: o.embedding_seed,
                })
                .collect(),
            edges: self.occlusions.clone(),
        }
    }

    /// Every problem with the scene, errors and warnings alike.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let Canvas { width, height } = self.canvas;
        if width == 0 || height == 0 {
            out.push(Diagnostic::error("canvas", format!("canvas must be at least 1x1, got {width}x{height}")));
        }
        if self.objects.is_empty() {
            out.push(Diagnostic::error("objects", "scene has no objects"));
        }
        if self.schedule.steps == 0 {
            out.push(Diagnostic::error("schedule.steps", "steps must be at least 1"));
        }
        if !(self.render.epsilon > 0.0) {
            out.push(Diagnostic::error(
                "render.epsilon",
                format!("epsilon must be positive, got {}", self.render.epsilon),
            ));
        }
        if self.simulate.layers == 0 {
            out.push(Diagnostic::error("simulate.layers", "need at least one layer"));
        }
        if self.simulate.channels == 0 {
            out.push(Diagnostic::error("simulate.channels", "need at least one channel"));
        }
        if !(self.simulate.blend > 0.0 && self.simulate.blend <= 1.0) {
            out.push(Diagnostic::error(
                "simulate.blend",
                format!("blend must lie in (0, 1], got {}", self.simulate.blend),
            ));
        }

        let graph = self.graph();
        out.extend(
            validate_graph(&graph)
                .violations
                .iter()
                .map(|v| Diagnostic::error(v.path(), v.to_string())),
        );

        for (i, obj) in graph.objects.iter().enumerate() {
            if width > 0 && height > 0 && obj.bbox.is_valid() && rasterize_bbox(&obj.bbox, width, height).is_err() {
                out.push(Diagnostic::error(
                    format!("objects[{i}].bbox"),
                    format!("object {:?} covers no pixel center on the {width}x{height} canvas", obj.id),
                ));
            }
            if obj.color.is_none() {
                out.push(Diagnostic::warning(
                    format!("objects[{i}].color"),
                    format!("object {:?} has no color; render and sweep need one", obj.id),
                ));
            }
        }
        if !graph.objects.iter().any(|o| o.bbox == BBox::FULL) && !graph.objects.is_empty() {
            out.push(Diagnostic::warning(
                "objects",
                "no full-frame background object; uncovered pixels pass the fallback through",
            ));
        }
        out
    }

    pub fn has_errors(&self) -> bool {
        self.diagnostics().iter().any(Diagnostic::is_error)
    }

    /// Target densities `D = -ln(1 - opacity)` in input order.
    pub fn densities(&self) -> crate::Result<Vec<f64>> {
        self.objects.iter().map(|o| opacity_to_density(o.opacity)).collect()
    }

    /// One schedule per object, in input order.
    pub fn schedules(&self) -> crate::Result<Vec<DensitySchedule>> {
        self.densities()?
            .into_iter()
            .map(|d| DensitySchedule::new(self.schedule.kind, d, self.schedule.steps))
            .collect()
    }

    pub fn composite_options(&self) -> CompositeOptions {
        CompositeOptions {
            width: self.canvas.width,
            height: self.canvas.height,
            attention_shaping: self.render.attention_shaping,
            epsilon: self.render.epsilon,
        }
    }

    pub fn denoiser_config(&self) -> ToyDenoiserConfig {
        ToyDenoiserConfig {
            layers: self.simulate.layers,
            width: self.canvas.width,
            height: self.canvas.height,
            channels: self.simulate.channels,
            steps: self.schedule.steps,
            seed: self.simulate.seed,
            blend: self.simulate.blend,
            schedule: self.schedule.kind,
            attention_shaping: self.render.attention_shaping,
            epsilon: self.render.epsilon,
            bypass_layers: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

/// Parses without semantic validation.
pub fn parse_scene_unchecked(text: &str) -> Result<SceneFile, SceneError> {
    serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))
}

/// Parses and validates; warnings alone do not fail.
pub fn parse_scene_str(text: &str) -> Result<SceneFile, SceneError> {
    let scene = parse_scene_unchecked(text)?;
    let diagnostics = scene.diagnostics();
    if diagnostics.iter().any(Diagnostic::is_error) {
        return Err(SceneError::Validation(diagnostics));
    }
    Ok(scene)
}

pub fn parse_scene(path: &Path) -> Result<SceneFile, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scene_str(&text)
}
