//! End-to-end drivers for the rendering operator.
//!
//! [`run_generation`] is a toy denoising loop: every step passes the latent
//! through a stack of latent rendering layers and blends the result back.
//! [`composite_pixels`] renders constant-color object layers directly, so
//! occlusion and opacity effects show up as literal RGB values.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attention::{cross_attention, embed_prompt, subject_attention_map, PromptEmbedding};
use crate::error::{Error, Result};
use crate::geometry::{box_only_transmittance_map, normalize_attention_map, rasterize_bbox, transmittance_map};
use crate::graph::{topological_order, validate_graph, FrontToBackOrder, OcclusionGraph, SceneObject};
use crate::grid::{FeatureGrid, ScalarMap};
use crate::render::{latent_render_with_epsilon, opacity_to_density, RenderDiagnostics, RenderInputs, DEFAULT_EPSILON};
use crate::schedule::{DensitySchedule, ScheduleKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiserConfig {
    pub layers: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub steps: u32,
    pub seed: u64,
    /// Per-step update `latent <- (1 - blend) latent + blend rendered`.
    pub blend: f64,
    pub schedule: ScheduleKind,
    pub attention_shaping: bool,
    pub epsilon: f64,
    /// Layers that run plain cross-attention over the concatenated prompts
    /// instead of latent rendering.
    pub bypass_layers: Vec<usize>,
}

impl Default for ToyDenoiserConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            width: 16,
            height: 16,
            channels: 8,
            steps: 25,
            seed: 0,
            blend: 1.0,
            schedule: ScheduleKind::InverseProportional,
            attention_shaping: true,
            epsilon: DEFAULT_EPSILON,
            bypass_layers: Vec::new(),
        }
    }
}

impl ToyDenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.height == 0 || self.channels == 0 || self.steps == 0 {
            return Err(Error::Config(format!(
                "layers, grid dimensions and steps must be positive (layers {}, grid {}x{}x{}, steps {})",
                self.layers, self.width, self.height, self.channels, self.steps
            )));
        }
        if !(self.blend > 0.0 && self.blend <= 1.0) {
            return Err(Error::Range {
                what: "blend",
                value: self.blend,
                range: "(0, 1]",
            });
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Range {
                what: "epsilon",
                value: self.epsilon,
                range: "(0, inf)",
            });
        }
        Ok(())
    }

    /// Every layer runs plain cross-attention.
    pub fn bypass_all(mut self) -> Self {
        self.bypass_layers = (0..self.layers).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub latent_rendering: bool,
    /// Densities in front-to-back order.
    pub sigmas: Vec<f64>,
    /// Spatial mean of each object's weight map.
    pub mean_weights: Vec<f64>,
    pub s_min: Option<f64>,
    pub s_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: u32,
    pub layers: Vec<LayerTrace>,
    pub latent_norm: f64,
}

impl StepTrace {
    fn is_finite(&self) -> bool {
        self.latent_norm.is_finite()
            && self.layers.iter().all(|l| {
                l.sigmas.iter().chain(&l.mean_weights).all(|v| v.is_finite())
                    && l.s_min.is_none_or(f64::is_finite)
                    && l.s_mean.is_none_or(f64::is_finite)
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub order: FrontToBackOrder,
    pub latent: FeatureGrid,
    pub traces: Vec<StepTrace>,
}

/// Everything about one object that stays fixed across the loop.
struct PreparedObject {
    embedding: PromptEmbedding,
    box_mask: ScalarMap,
    schedule: DensitySchedule,
    subject: Option<usize>,
}

fn shaping_subject(object: &SceneObject) -> Option<usize> {
    // Blank prompts have no subject token and keep the raw box mask.
    crate::attention::subject_token_index(object).ok()
}

fn prepare(graph: &OcclusionGraph, config: &ToyDenoiserConfig) -> Result<(FrontToBackOrder, Vec<PreparedObject>)> {
    validate_graph(graph).into_result()?;
    let order = topological_order(graph)?;
    let prepared = order
        .object_indices(graph)
        .into_iter()
        .map(|i| {
            let obj = &graph.objects[i];
            Ok(PreparedObject {
                embedding: embed_prompt(&obj.prompt_tokens, obj.embedding_seed, config.channels)?,
                box_mask: rasterize_bbox(&obj.bbox, config.width, config.height)?,
                schedule: DensitySchedule::new(config.schedule, opacity_to_density(obj.opacity)?, config.steps)?,
                subject: shaping_subject(obj),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((order, prepared))
}

/// Seeded standard-normal starting latent.
pub fn initial_latent(config: &ToyDenoiserConfig) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.width * config.height * config.channels;
    let values = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    FeatureGrid::from_vec(config.width, config.height, config.channels, values).expect("sized from config")
}

fn transmittance_for(
    object_mask: &ScalarMap,
    subject: Option<usize>,
    weights: &crate::attention::AttentionWeights,
    shaping: bool,
) -> Result<ScalarMap> {
    match (shaping, subject) {
        (true, Some(index)) => {
            let raw = subject_attention_map(weights, index, object_mask.width(), object_mask.height())?;
            transmittance_map(&normalize_attention_map(&raw), object_mask)
        }
        _ => Ok(box_only_transmittance_map(object_mask)),
    }
}

fn rendering_layer(
    input: &FeatureGrid,
    objects: &[PreparedObject],
    t: u32,
    config: &ToyDenoiserConfig,
) -> Result<(FeatureGrid, LayerTrace)> {
    let mut latents = Vec::with_capacity(objects.len());
    let mut masks = Vec::with_capacity(objects.len());
    let mut sigmas = Vec::with_capacity(objects.len());
    for obj in objects {
        let (attended, weights) = cross_attention(input, &obj.embedding)?;
        masks.push(transmittance_for(&obj.box_mask, obj.subject, &weights, config.attention_shaping)?);
        latents.push(attended);
        sigmas.push(obj.schedule.sigma_at(t)?);
    }
    let inputs = RenderInputs {
        latents,
        masks,
        sigmas,
        fallback: input.clone(),
    };
    let (out, diag) = latent_render_with_epsilon(&inputs, config.epsilon)?;
    let trace = LayerTrace {
        latent_rendering: true,
        mean_weights: diag.weights.iter().map(ScalarMap::mean).collect(),
        sigmas: inputs.sigmas,
        s_min: Some(diag.normalization.min()),
        s_mean: Some(diag.normalization.mean()),
    };
    Ok((out, trace))
}

/// Runs the toy denoising loop for `t = T` down to 1.
pub fn run_generation(graph: &OcclusionGraph, config: &ToyDenoiserConfig) -> Result<Generation> {
    config.validate()?;
    let (order, objects) = prepare(graph, config)?;
    if objects.is_empty() {
        return Err(Error::Config("scene has no objects".into()));
    }
    let full_prompt = PromptEmbedding::concat(&objects.iter().map(|o| &o.embedding).collect::<Vec<_>>())?;

    let mut latent = initial_latent(config);
    let mut traces = Vec::with_capacity(config.steps as usize);
    for t in (1..=config.steps).rev() {
        let mut x = latent.clone();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let (out, trace) = if config.bypass_layers.contains(&l) {
                let (out, _) = cross_attention(&x, &full_prompt)?;
                let trace = LayerTrace {
                    latent_rendering: false,
                    sigmas: Vec::new(),
                    mean_weights: Vec::new(),
                    s_min: None,
                    s_mean: None,
                };
                (out, trace)
            } else {
                rendering_layer(&x, &objects, t, config)?
            };
            x = out;
            layers.push(trace);
        }
        let eta = config.blend;
        for (l, r) in latent.values_mut().iter_mut().zip(x.values()) {
            *l = (1.0 - eta) * *l + eta * r;
        }
        let trace = StepTrace {
            t,
            layers,
            latent_norm: latent.norm(),
        };
        if !trace.is_finite() || !latent.is_finite() {
            return Err(Error::NonFinite(format!("step t = {t}")));
        }
        traces.push(trace);
    }
    Ok(Generation { order, latent, traces })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeOptions {
    pub width: usize,
    pub height: usize,
    pub attention_shaping: bool,
    pub epsilon: f64,
}

impl CompositeOptions {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            attention_shaping: false,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_attention_shaping(mut self, on: bool) -> Self {
        self.attention_shaping = on;
        self
    }
}

/// A pixel-space render together with everything that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composite {
    pub order: FrontToBackOrder,
    /// RGB values in `[0, 1]`.
    pub image: FeatureGrid,
    /// Transmittance maps in front-to-back order.
    pub masks: Vec<ScalarMap>,
    pub densities: Vec<f64>,
    pub diagnostics: RenderDiagnostics,
}

const COLOR_CHANNELS: usize = 3;

/// Fixed positional query grid the compositor attends from when attention
/// shaping is on.
fn positional_queries(width: usize, height: usize) -> FeatureGrid {
    let mut grid = FeatureGrid::zeros(width, height, COLOR_CHANNELS);
    for r in 0..height {
        let y = (r as f64 + 0.5) / height as f64;
        for c in 0..width {
            let x = (c as f64 + 0.5) / width as f64;
            let cell = grid.pixel_mut(r * width + c);
            cell[0] = 2.0 * (PI * x).cos();
            cell[1] = 2.0 * (PI * y).cos();
            cell[2] = 2.0 * (PI * (x - y)).sin();
        }
    }
    grid
}

/// Renders constant-color layers with box transmittance maps. Each object's
/// density is the target `D` its opacity implies.
pub fn composite_pixels(graph: &OcclusionGraph, options: &CompositeOptions) -> Result<Composite> {
    validate_graph(graph).into_result()?;
    let order = topological_order(graph)?;
    if order.is_empty() {
        return Err(Error::Config("scene has no objects".into()));
    }
    let (width, height) = (options.width, options.height);
    let queries = options.attention_shaping.then(|| positional_queries(width, height));

    let mut latents = Vec::with_capacity(order.len());
    let mut masks = Vec::with_capacity(order.len());
    let mut sigmas = Vec::with_capacity(order.len());
    for i in order.object_indices(graph) {
        let obj = &graph.objects[i];
        let color = obj
            .color
            .ok_or_else(|| Error::Config(format!("object {:?} has no color", obj.id)))?;
        let box_mask = rasterize_bbox(&obj.bbox, width, height)?;
        let mask = match (&queries, shaping_subject(obj)) {
            (Some(q), Some(subject)) => {
                let prompt = embed_prompt(&obj.prompt_tokens, obj.embedding_seed, COLOR_CHANNELS)?;
                let (_, weights) = cross_attention(q, &prompt)?;
                transmittance_for(&box_mask, Some(subject), &weights, true)?
            }
            _ => box_only_transmittance_map(&box_mask),
        };
        latents.push(FeatureGrid::constant(width, height, &color));
        masks.push(mask);
        sigmas.push(opacity_to_density(obj.opacity)?);
    }

    let inputs = RenderInputs {
        latents,
        masks,
        sigmas,
        fallback: FeatureGrid::zeros(width, height, COLOR_CHANNELS),
    };
    let (mut image, diagnostics) = latent_render_with_epsilon(&inputs, options.epsilon)?;
    image.values_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Composite {
        order,
        image,
        masks: inputs.masks,
        densities: inputs.sigmas,
        diagnostics,
    })
}

impl Composite {
    /// Mean `w / S` of the object at front-to-back `position` over pixels
    /// where it overlaps at least one other object. `None` when it overlaps
    /// nothing.
    pub fn overlap_weight_share(&self, position: usize, epsilon: f64) -> Option<f64> {
        let own = self.masks[position].values();
        let shares: Vec<f64> = (0..own.len())
            .filter(|&p| {
                own[p] > 0.0
                    && self
                        .masks
                        .iter()
                        .enumerate()
                        .any(|(j, m)| j != position && m.values()[p] > 0.0)
            })
            .filter_map(|p| self.diagnostics.weight_share(position, p, epsilon))
            .collect();
        (!shares.is_empty()).then(|| shares.iter().sum::<f64>() / shares.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFrame {
    pub alpha: f64,
    pub image: FeatureGrid,
    pub weight_share: Option<f64>,
}

/// One composite per opacity value for object `object_id`.
pub fn opacity_sweep(
    graph: &OcclusionGraph,
    object_id: &str,
    alphas: &[f64],
    options: &CompositeOptions,
) -> Result<Vec<SweepFrame>> {
    let index = graph
        .index_of(object_id)
        .ok_or_else(|| Error::UnknownObject(object_id.to_string()))?;
    alphas
        .iter()
        .map(|&alpha| {
            let mut scene = graph.clone();
            scene.objects[index].opacity = alpha;
            let composite = composite_pixels(&scene, options)?;
            let position = composite.order.position(object_id).expect("object is in the scene");
            Ok(SweepFrame {
                alpha,
                weight_share: composite.overlap_weight_share(position, options.epsilon),
                image: composite.image,
            })
        })
        .collect()
}
