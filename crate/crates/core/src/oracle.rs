//! Reference volume-rendering along a single ray, used to cross-check the
//! latent rendering operator.

use serde::{Deserialize, Serialize};

use crate::error::{dims_mismatch, Error, Result};
use crate::grid::{FeatureGrid, ScalarMap};
use crate::render::{latent_render_unnormalized, RenderInputs};

/// Tolerance of the quadrature-vs-latent-render equivalence check.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-12;

/// Samples along a ray, nearest first. Sample `i` holds density `sigmas[i]`
/// and color `colors[i]` over an interval of length `deltas[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySamples {
    sigmas: Vec<f64>,
    deltas: Vec<f64>,
    colors: Vec<Vec<f64>>,
}

impl RaySamples {
    pub fn new(sigmas: Vec<f64>, deltas: Vec<f64>, colors: Vec<Vec<f64>>) -> Result<Self> {
        let n = sigmas.len();
        if deltas.len() != n || colors.len() != n {
            return Err(dims_mismatch(
                format!("{n} deltas and colors"),
                format!("{} deltas and {} colors", deltas.len(), colors.len()),
            ));
        }
        let channels = colors.first().map_or(0, Vec::len);
        if let Some(bad) = colors.iter().find(|c| c.len() != channels) {
            return Err(dims_mismatch(format!("{channels} channels"), format!("{} channels", bad.len())));
        }
        if let Some(&bad) = sigmas.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::Range {
                what: "volume density",
                value: bad,
                range: "[0, inf)",
            });
        }
        if let Some(&bad) = deltas.iter().find(|d| !(**d > 0.0)) {
            return Err(Error::Range {
                what: "sample spacing",
                value: bad,
                range: "(0, inf)",
            });
        }
        Ok(Self { sigmas, deltas, colors })
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.colors.first().map_or(0, Vec::len)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn colors(&self) -> &[Vec<f64>] {
        &self.colors
    }
}

/// Quadrature estimate `sum_i T_i (1 - exp(-sigma_i delta_i)) c_i` with
/// `T_i = exp(-sum_{j<i} sigma_j delta_j)`.
pub fn nerf_quadrature(samples: &RaySamples) -> Vec<f64> {
    let mut out = vec![0.0; samples.channels()];
    let mut optical_depth: f64 = 0.0;
    for ((&sigma, &delta), color) in samples.sigmas.iter().zip(&samples.deltas).zip(&samples.colors) {
        let t = (-optical_depth).exp();
        let w = t * (1.0 - (-sigma * delta).exp());
        for (o, c) in out.iter_mut().zip(color) {
            *o += w * c;
        }
        optical_depth += sigma * delta;
    }
    out
}

/// Closed-form volume-rendering integral over a piecewise-constant medium.
///
/// On a segment of constant density the integrand `T(s) sigma` is the
/// derivative of `-T(s)`, so the segment contributes `c (T_start - T_end)`.
/// Transmittance is carried as a running product of per-segment factors.
pub fn piecewise_constant_integral(samples: &RaySamples) -> Vec<f64> {
    let mut out = vec![0.0; samples.channels()];
    let mut t_start: f64 = 1.0;
    for ((&sigma, &delta), color) in samples.sigmas.iter().zip(&samples.deltas).zip(&samples.colors) {
        let t_end = t_start * (-sigma * delta).exp();
        let absorbed = t_start - t_end;
        for (o, c) in out.iter_mut().zip(color) {
            *o += absorbed * c;
        }
        t_start = t_end;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub max_abs_deviation: f64,
    pub pixels: usize,
    pub channels: usize,
    pub passed: bool,
}

/// Compares unnormalized latent rendering under all-ones masks against the
/// quadrature with unit spacing, pixel by pixel and channel by channel.
pub fn equivalence_check(latents: &[FeatureGrid], sigmas: &[f64]) -> Result<EquivalenceReport> {
    let first = latents
        .first()
        .ok_or_else(|| Error::Config("equivalence check needs at least one latent".into()))?;
    let (width, height, channels) = (first.width(), first.height(), first.channels());
    let inputs = RenderInputs {
        latents: latents.to_vec(),
        masks: vec![ScalarMap::ones(width, height); latents.len()],
        sigmas: sigmas.to_vec(),
        fallback: FeatureGrid::zeros(width, height, channels),
    };
    let rendered = latent_render_unnormalized(&inputs)?;

    let mut max_abs_deviation: f64 = 0.0;
    for p in 0..first.pixel_count() {
        let ray = RaySamples::new(
            sigmas.to_vec(),
            vec![1.0; latents.len()],
            latents.iter().map(|l| l.pixel(p).to_vec()).collect(),
        )?;
        for (a, b) in nerf_quadrature(&ray).iter().zip(rendered.pixel(p)) {
            max_abs_deviation = max_abs_deviation.max((a - b).abs());
        }
    }
    Ok(EquivalenceReport {
        max_abs_deviation,
        pixels: first.pixel_count(),
        channels,
        passed: max_abs_deviation <= EQUIVALENCE_TOLERANCE,
    })
}
