//! The latent rendering operator.
//!
//! Objects are stacked front to back. Object `i` at pixel `p` receives the
//! weight `w_i = T_i (1 - exp(-sigma_i)) M_i`, where `M_i` is its
//! transmittance map and `T_i = exp(-sum_{j<i} M_j sigma_j)` is the
//! visibility left over by the objects in front of it. The rendered feature
//! is the weight-normalized sum of the object features; pixels no object
//! covers (`S <= epsilon`) pass the fallback latent through.
//!
//! Sample spacing is fixed at one: the virtual camera is orthographic.

use serde::{Deserialize, Serialize};

use crate::error::{dims_mismatch, Error, Result};
use crate::grid::{FeatureGrid, ScalarMap};

/// Normalization threshold below which the fallback latent is used.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// `D = -ln(1 - alpha)` for `alpha` in `[0, 1)`.
pub fn opacity_to_density(alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Range {
            what: "opacity",
            value: alpha,
            range: "[0, 1)",
        });
    }
    Ok(-(-alpha).ln_1p())
}

/// `alpha = 1 - exp(-D)` for `D >= 0`.
pub fn density_to_opacity(density: f64) -> Result<f64> {
    if !(density >= 0.0) {
        return Err(Error::Range {
            what: "density",
            value: density,
            range: "[0, inf)",
        });
    }
    Ok(-(-density).exp_m1())
}

/// Object layers in front-to-back order plus the latent used where nothing
/// is covered.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderInputs {
    pub latents: Vec<FeatureGrid>,
    pub masks: Vec<ScalarMap>,
    pub sigmas: Vec<f64>,
    pub fallback: FeatureGrid,
}

impl RenderInputs {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.latents.len();
        if n == 0 {
            return Err(Error::Config("latent rendering needs at least one object".into()));
        }
        if self.masks.len() != n || self.sigmas.len() != n {
            return Err(dims_mismatch(
                format!("{n} latents, masks and sigmas"),
                format!("{} masks and {} sigmas", self.masks.len(), self.sigmas.len()),
            ));
        }
        check_sigmas(&self.sigmas)?;
        for latent in &self.latents {
            self.fallback.check_same_shape(latent)?;
        }
        for mask in &self.masks {
            self.fallback.check_spatial(mask)?;
        }
        Ok(())
    }
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    match sigmas.iter().find(|s| !(**s >= 0.0)) {
        Some(&bad) => Err(Error::Range {
            what: "semantic density",
            value: bad,
            range: "[0, inf)",
        }),
        None => Ok(()),
    }
}

/// Per-object visibility, weights and the normalization map of one render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderDiagnostics {
    pub transmittance: Vec<ScalarMap>,
    pub weights: Vec<ScalarMap>,
    pub normalization: ScalarMap,
}

impl RenderDiagnostics {
    /// `w_i / S` at pixel `p`, or `None` where `S` is not above `epsilon`.
    pub fn weight_share(&self, object: usize, p: usize, epsilon: f64) -> Option<f64> {
        let s = self.normalization.values()[p];
        (s > epsilon).then(|| self.weights[object].values()[p] / s)
    }
}

/// `T_i = exp(-sum_{j<i} M_j sigma_j)`, so `T_1` is all ones.
pub fn accumulated_transmittance(masks: &[ScalarMap], sigmas: &[f64]) -> Result<Vec<ScalarMap>> {
    if masks.len() != sigmas.len() {
        return Err(dims_mismatch(
            format!("{} sigmas", masks.len()),
            format!("{} sigmas", sigmas.len()),
        ));
    }
    check_sigmas(sigmas)?;
    let Some(first) = masks.first() else {
        return Ok(Vec::new());
    };
    let mut optical_depth = ScalarMap::zeros(first.width(), first.height());
    let mut out = Vec::with_capacity(masks.len());
    for (mask, &sigma) in masks.iter().zip(sigmas) {
        out.push(optical_depth.map(|d| (-d).exp()));
        optical_depth = optical_depth.zip_with(mask, |d, m| d + m * sigma)?;
    }
    Ok(out)
}

fn object_weights(inputs: &RenderInputs) -> Result<(Vec<ScalarMap>, Vec<ScalarMap>)> {
    inputs.validate()?;
    let transmittance = accumulated_transmittance(&inputs.masks, &inputs.sigmas)?;
    let weights = transmittance
        .iter()
        .zip(&inputs.masks)
        .zip(&inputs.sigmas)
        .map(|((t, m), &sigma)| {
            let alpha = 1.0 - (-sigma).exp();
            t.zip_with(m, |t, m| t * alpha * m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((transmittance, weights))
}

pub fn latent_render(inputs: &RenderInputs) -> Result<(FeatureGrid, RenderDiagnostics)> {
    latent_render_with_epsilon(inputs, DEFAULT_EPSILON)
}

/// Normalized latent rendering with an explicit fallback threshold.
///
/// The per-pixel normalization is a scalar applied to every channel. Objects
/// are reduced in front-to-back order.
pub fn latent_render_with_epsilon(inputs: &RenderInputs, epsilon: f64) -> Result<(FeatureGrid, RenderDiagnostics)> {
    if !(epsilon > 0.0) {
        return Err(Error::Range {
            what: "epsilon",
            value: epsilon,
            range: "(0, inf)",
        });
    }
    let (transmittance, weights) = object_weights(inputs)?;
    let fallback = &inputs.fallback;
    let (width, height) = (fallback.width(), fallback.height());

    let mut normalization = ScalarMap::zeros(width, height);
    for w in &weights {
        normalization = normalization.zip_with(w, |s, w| s + w)?;
    }

    let mut out = fallback.clone();
    for (p, &s) in normalization.values().iter().enumerate() {
        if s <= epsilon {
            continue;
        }
        let cell = out.pixel_mut(p);
        cell.fill(0.0);
        for (w, latent) in weights.iter().zip(&inputs.latents) {
            let share = w.values()[p] / s;
            for (o, r) in cell.iter_mut().zip(latent.pixel(p)) {
                *o += share * r;
            }
        }
    }

    Ok((
        out,
        RenderDiagnostics {
            transmittance,
            weights,
            normalization,
        },
    ))
}

/// `sum_i w_i R_i` with neither normalization nor fallback.
pub fn latent_render_unnormalized(inputs: &RenderInputs) -> Result<FeatureGrid> {
    let (_, weights) = object_weights(inputs)?;
    let mut out = FeatureGrid::zeros(inputs.fallback.width(), inputs.fallback.height(), inputs.fallback.channels());
    for p in 0..out.pixel_count() {
        let cell = out.pixel_mut(p);
        for (w, latent) in weights.iter().zip(&inputs.latents) {
            let w = w.values()[p];
            for (o, r) in cell.iter_mut().zip(latent.pixel(p)) {
                *o += w * r;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(width: usize, height: usize, channels: usize, offset: f64) -> FeatureGrid {
        let values = (0..width * height * channels)
            .map(|i| (i as f64 * 0.7 + offset).sin())
            .collect();
        FeatureGrid::from_vec(width, height, channels, values).unwrap()
    }

    #[test]
    fn opacity_density_conversions() {
        assert_eq!(opacity_to_density(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(opacity_to_density(1.0 - (-1.0f64).exp()).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(opacity_to_density(0.8).unwrap(), 1.6094379124341003, epsilon = 1e-12);
        assert_eq!(density_to_opacity(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(density_to_opacity(2f64.ln()).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(density_to_opacity(40.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(density_to_opacity(40.0).unwrap() < 1.0 + f64::EPSILON);
    }

    #[test]
    fn conversions_reject_out_of_range_inputs() {
        for alpha in [1.0, 1.5, -0.01, f64::NAN] {
            assert!(matches!(opacity_to_density(alpha), Err(Error::Range { .. })));
        }
        for d in [-1e-9, f64::NAN] {
            assert!(matches!(density_to_opacity(d), Err(Error::Range { .. })));
        }
    }

    #[test]
    fn transmittance_examples() {
        let ones = ScalarMap::ones(2, 2);
        let t = accumulated_transmittance(std::slice::from_ref(&ones), &[0.3]).unwrap();
        assert_eq!(t, vec![ones.clone()]);

        let ln2 = 2f64.ln();
        let t = accumulated_transmittance(&[ones.clone(), ones.clone()], &[ln2, 5.0]).unwrap();
        assert!(t[1].values().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let t = accumulated_transmittance(&[ones.clone(), ones.clone(), ones.clone()], &[ln2, ln2, 1.0]).unwrap();
        assert!(t[2].values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn transmittance_rejects_bad_inputs() {
        let ones = ScalarMap::ones(2, 2);
        assert!(accumulated_transmittance(std::slice::from_ref(&ones), &[1.0, 2.0]).is_err());
        assert!(accumulated_transmittance(std::slice::from_ref(&ones), &[-1.0]).is_err());
        assert!(accumulated_transmittance(&[ones, ScalarMap::ones(3, 2)], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn single_full_mask_object_is_reproduced_exactly() {
        let r = grid(3, 3, 4, 0.0);
        let inputs = RenderInputs {
            latents: vec![r.clone()],
            masks: vec![ScalarMap::ones(3, 3)],
            sigmas: vec![0.7],
            fallback: grid(3, 3, 4, 9.0),
        };
        let (out, diag) = latent_render(&inputs).unwrap();
        assert_eq!(out, r);
        assert_eq!(diag.transmittance[0], ScalarMap::ones(3, 3));
    }

    #[test]
    fn dense_front_object_hides_the_back() {
        let front = grid(2, 2, 3, 0.0);
        let inputs = RenderInputs {
            latents: vec![front.clone(), grid(2, 2, 3, 4.0)],
            masks: vec![ScalarMap::ones(2, 2); 2],
            sigmas: vec![40.0, 1.0],
            fallback: FeatureGrid::zeros(2, 2, 3),
        };
        let (out, _) = latent_render(&inputs).unwrap();
        assert!(out.max_abs_diff(&front).unwrap() <= 1e-12);
    }

    #[test]
    fn disjoint_masks_pick_their_own_latent() {
        let left = ScalarMap::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let mid = ScalarMap::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let (r1, r2, fb) = (grid(3, 1, 2, 0.0), grid(3, 1, 2, 1.0), grid(3, 1, 2, 2.0));
        let inputs = RenderInputs {
            latents: vec![r1.clone(), r2.clone()],
            masks: vec![left, mid],
            sigmas: vec![0.5, 2.0],
            fallback: fb.clone(),
        };
        let (out, _) = latent_render(&inputs).unwrap();
        assert_eq!(out.pixel(0), r1.pixel(0));
        assert_eq!(out.pixel(1), r2.pixel(1));
        assert_eq!(out.pixel(2), fb.pixel(2));
    }

    #[test]
    fn uncovered_pixels_fall_back() {
        let fb = grid(2, 2, 2, 3.0);
        let inputs = RenderInputs {
            latents: vec![grid(2, 2, 2, 0.0)],
            masks: vec![ScalarMap::zeros(2, 2)],
            sigmas: vec![3.0],
            fallback: fb.clone(),
        };
        let (out, diag) = latent_render(&inputs).unwrap();
        assert_eq!(out, fb);
        assert_eq!(diag.normalization, ScalarMap::zeros(2, 2));
        assert_eq!(diag.weight_share(0, 0, DEFAULT_EPSILON), None);
    }

    #[test]
    fn unnormalized_render_examples() {
        let r = grid(2, 2, 3, 0.0);
        let mut inputs = RenderInputs {
            latents: vec![r.clone()],
            masks: vec![ScalarMap::ones(2, 2)],
            sigmas: vec![2f64.ln()],
            fallback: FeatureGrid::zeros(2, 2, 3),
        };
        let out = latent_render_unnormalized(&inputs).unwrap();
        for (o, r) in out.values().iter().zip(r.values()) {
            assert_abs_diff_eq!(*o, 0.5 * r, epsilon = 1e-15);
        }
        inputs.latents.push(grid(2, 2, 3, 1.0));
        inputs.masks.push(ScalarMap::ones(2, 2));
        inputs.sigmas = vec![0.0, 0.0];
        assert_eq!(latent_render_unnormalized(&inputs).unwrap(), FeatureGrid::zeros(2, 2, 3));
    }

    #[test]
    fn render_rejects_malformed_inputs() {
        let good = RenderInputs {
            latents: vec![grid(2, 2, 3, 0.0)],
            masks: vec![ScalarMap::ones(2, 2)],
            sigmas: vec![1.0],
            fallback: FeatureGrid::zeros(2, 2, 3),
        };
        let mut bad = good.clone();
        bad.masks[0] = ScalarMap::ones(2, 3);
        assert!(matches!(latent_render(&bad), Err(Error::DimensionMismatch { .. })));
        let mut bad = good.clone();
        bad.latents[0] = grid(2, 2, 4, 0.0);
        assert!(matches!(latent_render(&bad), Err(Error::DimensionMismatch { .. })));
        let mut bad = good.clone();
        bad.sigmas[0] = -0.5;
        assert!(matches!(latent_render(&bad), Err(Error::Range { .. })));
        let mut bad = good.clone();
        bad.sigmas.push(1.0);
        assert!(latent_render_unnormalized(&bad).is_err());
        let empty = RenderInputs {
            latents: vec![],
            masks: vec![],
            sigmas: vec![],
            fallback: FeatureGrid::zeros(2, 2, 3),
        };
        assert!(latent_render(&empty).is_err());
        assert!(latent_render_with_epsilon(&good, 0.0).is_err());
    }
}
