//! Grad-CAM and Grad-CAM++ saliency maps over the target-layer activations,
//! upsampled to input resolution, plus the deterministic pixel ranking the
//! perturbation engine consumes.
//!
//! Both explainers reduce (activations, gradients) at 8x8 to a raw class
//! activation map, then share the same finishing pipeline:
//!
//! 1. a constant raw map short-circuits to the all-zero map (avoids
//!    normalizing numerical noise) with the identity ranking;
//! 2. bilinear upsample to 32x32 with the align-corners convention
//!    (corner pixels land exactly on corner pixels);
//! 3. min-max normalization to [0,1];
//! 4. ranking: pixel indices sorted by map value descending, ties broken
//!    by ascending row-major index, so the order is a total one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{TARGET_CHANNELS, TARGET_SIDE};
use crate::synth::IMAGE_SIDE;
use crate::tensor::Tensor;

/// Denominators smaller than this in magnitude zero out the Grad-CAM++
/// alpha coefficients.
const ALPHA_DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Explainer {
    #[serde(rename = "GradCAM")]
    GradCam,
    #[serde(rename = "GradCAMpp")]
    GradCamPp,
}

impl std::fmt::Display for Explainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Explainer::GradCam => "GradCAM",
            Explainer::GradCamPp => "GradCAMpp",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// 32x32, values in [0,1]; min 0 and max 1 unless the raw map was
    /// constant (then all zeros).
    pub map: Tensor,
    /// All 1024 pixel indices, most important first.
    pub ranking: Vec<usize>,
    pub explainer_tag: Explainer,
    pub sample_id: u64,
}

fn check_pair(acts: &Tensor, grads: &Tensor) -> Result<(usize, usize, usize)> {
    let shape = acts.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            expected: vec![TARGET_CHANNELS, TARGET_SIDE, TARGET_SIDE],
            got: shape.to_vec(),
        });
    }
    grads.expect_shape(shape)?;
    Ok((shape[0], shape[1], shape[2]))
}

/// Raw Grad-CAM map at feature resolution: channel weights are the spatial
/// means of the gradients; map = ReLU(sum_k w_k * acts_k). Works for any
/// (c, h, w) so small hand cases can exercise it directly.
pub fn grad_cam_raw(acts: &Tensor, grads: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_pair(acts, grads)?;
    let spatial = h * w;
    let mut raw = Tensor::zeros(&[h, w]);
    let out = raw.values_mut();
    for k in 0..c {
        let g = &grads.values()[k * spatial..(k + 1) * spatial];
        let weight = g.iter().sum::<f64>() / spatial as f64;
        let a = &acts.values()[k * spatial..(k + 1) * spatial];
        for (o, &av) in out.iter_mut().zip(a) {
            *o += weight * av;
        }
    }
    for o in out.iter_mut() {
        if *o < 0.0 {
            *o = 0.0;
        }
    }
    Ok(raw)
}

/// Per-channel Grad-CAM++ weights under the exponential-score closed form:
/// alpha_ij = g_ij^2 / (2 g_ij^2 + sum_ab(acts_ab) * g_ij^3), zero where the
/// denominator vanishes; w = sum_ij alpha_ij * ReLU(g_ij).
pub(crate) fn grad_cam_pp_weights(acts: &Tensor, grads: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = check_pair(acts, grads)?;
    let spatial = h * w;
    let mut weights = Vec::with_capacity(c);
    for k in 0..c {
        let a = &acts.values()[k * spatial..(k + 1) * spatial];
        let g = &grads.values()[k * spatial..(k + 1) * spatial];
        let act_sum: f64 = a.iter().sum();
        let mut wk = 0.0;
        for &gv in g {
            let g2 = gv * gv;
            let denom = 2.0 * g2 + act_sum * g2 * gv;
            if denom.abs() < ALPHA_DENOM_FLOOR {
                continue;
            }
            let alpha = g2 / denom;
            if gv > 0.0 {
                wk += alpha * gv;
            }
        }
        weights.push(wk);
    }
    Ok(weights)
}

/// Raw Grad-CAM++ map at feature resolution.
pub fn grad_cam_pp_raw(acts: &Tensor, grads: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_pair(acts, grads)?;
    let weights = grad_cam_pp_weights(acts, grads)?;
    let spatial = h * w;
    let mut raw = Tensor::zeros(&[h, w]);
    let out = raw.values_mut();
    for (k, &wk) in weights.iter().enumerate().take(c) {
        let a = &acts.values()[k * spatial..(k + 1) * spatial];
        for (o, &av) in out.iter_mut().zip(a) {
            *o += wk * av;
        }
    }
    for o in out.iter_mut() {
        if *o < 0.0 {
            *o = 0.0;
        }
    }
    Ok(raw)
}

/// Align-corners bilinear interpolation; corner samples reproduce corner
/// inputs exactly. Evaluation order per output pixel is fixed:
/// `(1-fy) * ((1-fx)*v00 + fx*v01) + fy * ((1-fx)*v10 + fx*v11)`.
pub(crate) fn bilinear_upsample(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let scale_y = if oh > 1 && h > 1 {
        (h - 1) as f64 / (oh - 1) as f64
    } else {
        0.0
    };
    let scale_x = if ow > 1 && w > 1 {
        (w - 1) as f64 / (ow - 1) as f64
    } else {
        0.0
    };
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let sy = oy as f64 * scale_y;
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..ow {
            let sx = ox as f64 * scale_x;
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let v00 = src[y0 * w + x0];
            let v01 = src[y0 * w + x1];
            let v10 = src[y1 * w + x0];
            let v11 = src[y1 * w + x1];
            out[oy * ow + ox] =
                (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
        }
    }
    out
}

/// Pixel indices ordered by value descending, row-major index ascending on
/// ties — a total order for any finite map.
pub fn rank_pixels(map: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..map.len()).collect();
    idx.sort_unstable_by(|&a, &b| map[b].partial_cmp(&map[a]).unwrap().then(a.cmp(&b)));
    idx
}

fn finish(raw: Tensor, explainer_tag: Explainer, sample_id: u64) -> SaliencyMap {
    let raw_vals = raw.values();
    let raw_min = raw_vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw_max = raw_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = IMAGE_SIDE * IMAGE_SIDE;
    if raw_min == raw_max {
        // constant raw map: all zeros, identity ranking
        return SaliencyMap {
            map: Tensor::zeros(&[IMAGE_SIDE, IMAGE_SIDE]),
            ranking: (0..n).collect(),
            explainer_tag,
            sample_id,
        };
    }

    let (h, w) = (raw.shape()[0], raw.shape()[1]);
    let mut up = bilinear_upsample(raw.values(), h, w, IMAGE_SIDE, IMAGE_SIDE);
    let min = up.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return SaliencyMap {
            map: Tensor::zeros(&[IMAGE_SIDE, IMAGE_SIDE]),
            ranking: (0..n).collect(),
            explainer_tag,
            sample_id,
        };
    }
    let span = max - min;
    for v in &mut up {
        *v = (*v - min) / span;
    }
    let ranking = rank_pixels(&up);
    SaliencyMap {
        map: Tensor::from_values(&[IMAGE_SIDE, IMAGE_SIDE], up).expect("length fixed"),
        ranking,
        explainer_tag,
        sample_id,
    }
}

fn check_target_shape(acts: &Tensor, grads: &Tensor) -> Result<()> {
    acts.expect_shape(&[TARGET_CHANNELS, TARGET_SIDE, TARGET_SIDE])?;
    grads.expect_shape(&[TARGET_CHANNELS, TARGET_SIDE, TARGET_SIDE])
}

/// Grad-CAM at input resolution. `grads` must come from the signed-logit
/// backward pass of the predicted class so the map explains the prediction.
pub fn grad_cam(acts: &Tensor, grads: &Tensor, sample_id: u64) -> Result<SaliencyMap> {
    check_target_shape(acts, grads)?;
    Ok(finish(grad_cam_raw(acts, grads)?, Explainer::GradCam, sample_id))
}

/// Grad-CAM++ at input resolution; same contract as `grad_cam`.
pub fn grad_cam_pp(acts: &Tensor, grads: &Tensor, sample_id: u64) -> Result<SaliencyMap> {
    check_target_shape(acts, grads)?;
    Ok(finish(
        grad_cam_pp_raw(acts, grads)?,
        Explainer::GradCamPp,
        sample_id,
    ))
}

pub fn explain(
    explainer: Explainer,
    acts: &Tensor,
    grads: &Tensor,
    sample_id: u64,
) -> Result<SaliencyMap> {
    match explainer {
        Explainer::GradCam => grad_cam(acts, grads, sample_id),
        Explainer::GradCamPp => grad_cam_pp(acts, grads, sample_id),
    }
}

/// Fraction of the top `k` pixels two rankings share (used by the
/// explainer-agreement smoke checks).
pub fn top_k_overlap(a: &[usize], b: &[usize], k: usize) -> f64 {
    let set_a: std::collections::HashSet<usize> = a[..k].iter().copied().collect();
    let shared = b[..k].iter().filter(|i| set_a.contains(i)).count();
    shared as f64 / k as f64
}
