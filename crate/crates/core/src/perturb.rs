//! Saliency-ordered insertion/deletion evaluation: perturb images by their
//! frozen pixel ranking, re-score, and track group HTER curves at a fixed
//! threshold; normalize the group-B curve onto group A's starting point and
//! compare areas under the curves.
//!
//! Conventions pinned here:
//! * pixel budget k = round-half-even(fraction * 1024);
//! * the ranking is computed once on the unaltered image and reused for
//!   every fraction;
//! * curve AUC is the trapezoid divided by the fraction span (a mean error
//!   level), anchor point included by default;
//! * normalization subtracts the anchor offset from every point. It is
//!   evaluated as `male_anchor + (value - female_anchor)` so the anchored
//!   point equals the male value bit-exactly, with a verbatim copy when the
//!   offset is exactly zero so identical inputs pass through untouched.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{error_rates_at, ScoreEntry, ScoreSet};
use crate::nn::{sigmoid, MiniPadNet, TargetSign};
use crate::saliency::{explain, Explainer};
use crate::synth::{Dataset, Group, IMAGE_SIDE};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerturbationMode {
    Insertion,
    Deletion,
}

impl std::fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PerturbationMode::Insertion => "insertion",
            PerturbationMode::Deletion => "deletion",
        })
    }
}

/// The three training regimes the audit compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelTag {
    /// Trained on the full (both-group) training set.
    PadB,
    /// Trained on group A only.
    PadM,
    /// Trained on group B only.
    PadF,
}

impl ModelTag {
    pub const ALL: [ModelTag; 3] = [ModelTag::PadB, ModelTag::PadM, ModelTag::PadF];
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelTag::PadB => "PAD_B",
            ModelTag::PadM => "PAD_M",
            ModelTag::PadF => "PAD_F",
        })
    }
}

/// Anchor used when aligning the group-B curve to group A's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NormalizationAnchor {
    /// This curve's own fraction-0 value (insertion and deletion anchor on
    /// their respective degenerate images).
    #[default]
    FirstPoint,
    /// The unaltered-image HTER regardless of mode.
    Unaltered,
}

#[derive(Debug, Clone)]
pub struct EvalCurve {
    pub mode: PerturbationMode,
    pub group: Group,
    pub model_tag: ModelTag,
    pub explainer_tag: Explainer,
    /// Strictly increasing, first element 0.
    pub fractions: Vec<f64>,
    pub hter_values: Vec<f64>,
    pub threshold_used: f64,
    /// HTER on the unaltered images at `threshold_used` — the deletion
    /// curve's first point, kept on every curve so the Unaltered anchor is
    /// available to insertion curves too.
    pub unaltered_hter: f64,
    /// True for curves produced by `normalize_pair`.
    pub normalized: bool,
}

impl EvalCurve {
    pub fn anchor_value(&self, anchor: NormalizationAnchor) -> f64 {
        match anchor {
            NormalizationAnchor::FirstPoint => self.hter_values[0],
            NormalizationAnchor::Unaltered => self.unaltered_hter,
        }
    }
}

pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Default evaluation grid: the unaltered anchor plus 5%..30% in 5% steps.
pub fn default_fractions() -> Vec<f64> {
    vec![0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30]
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::InvalidConfig {
            field: "fractions".into(),
            reason: "must not be empty".into(),
        });
    }
    if fractions[0] != 0.0 {
        return Err(Error::InvalidConfig {
            field: "fractions".into(),
            reason: "first fraction must be 0".into(),
        });
    }
    for pair in fractions.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(Error::InvalidConfig {
                field: "fractions".into(),
                reason: format!("not strictly increasing at {} -> {}", pair[0], pair[1]),
            });
        }
    }
    let last = *fractions.last().unwrap();
    if !(0.0..=1.0).contains(&last) {
        return Err(Error::FractionOutOfRange(last));
    }
    Ok(())
}

/// Number of pixels covered by `fraction`, round-half-even.
pub fn pixel_budget(fraction: f64) -> usize {
    (fraction * PIXELS as f64).round_ties_even() as usize
}

fn check_ranking(ranking: &[usize], len: usize) -> Result<()> {
    if ranking.len() != len {
        return Err(Error::InvalidRanking { expected: len });
    }
    let mut seen = vec![false; len];
    for &idx in ranking {
        if idx >= len || seen[idx] {
            return Err(Error::InvalidRanking { expected: len });
        }
        seen[idx] = true;
    }
    Ok(())
}

/// Masks the top `round_ties_even(fraction * 1024)` ranked pixels.
/// Deletion zeroes them in a copy of the image; insertion copies them onto
/// an all-black canvas.
pub fn perturb(
    image: &Tensor,
    ranking: &[usize],
    fraction: f64,
    mode: PerturbationMode,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::FractionOutOfRange(fraction));
    }
    image.expect_shape(&[1, IMAGE_SIDE, IMAGE_SIDE])?;
    check_ranking(ranking, PIXELS)?;
    let k = pixel_budget(fraction);
    let mut out = match mode {
        PerturbationMode::Deletion => image.clone(),
        PerturbationMode::Insertion => Tensor::zeros(&[1, IMAGE_SIDE, IMAGE_SIDE]),
    };
    let values = out.values_mut();
    match mode {
        PerturbationMode::Deletion => {
            for &idx in &ranking[..k] {
                values[idx] = 0.0;
            }
        }
        PerturbationMode::Insertion => {
            let src = image.values();
            for &idx in &ranking[..k] {
                values[idx] = src[idx];
            }
        }
    }
    Ok(out)
}

fn hter_of(scores: &ScoreSet, threshold: f64) -> Result<f64> {
    Ok(error_rates_at(scores, threshold)?.hter)
}

/// Insertion/deletion HTER curve for one single-group test set.
///
/// Per image: one forward pass on the unaltered image fixes the score, the
/// predicted-class gradient sign, and the saliency ranking; each non-anchor
/// fraction then re-scores the perturbed image at the same threshold.
/// Anchors are free: deletion reuses the unaltered scores, insertion scores
/// the all-black canvas once (every image degenerates to the same canvas).
pub fn evaluation_curve(
    model: &MiniPadNet,
    group_set: &Dataset,
    explainer: Explainer,
    mode: PerturbationMode,
    fractions: &[f64],
    threshold: f64,
    model_tag: ModelTag,
) -> Result<EvalCurve> {
    validate_fractions(fractions)?;
    if !threshold.is_finite() {
        return Err(Error::NonFinite("threshold"));
    }
    if group_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let group = group_set.samples[0].group;
    if group_set.samples.iter().any(|s| s.group != group) {
        return Err(Error::MixedGroups);
    }

    let black_score = sigmoid(model.logit(&Tensor::zeros(&[1, IMAGE_SIDE, IMAGE_SIDE]))?);

    // per sample: (scores at every fraction, unaltered score)
    let per_image: Result<Vec<Vec<f64>>> = group_set
        .samples
        .par_iter()
        .map(|s| {
            let cache = model.forward(&s.image)?;
            let unaltered = cache.score();
            let sign = TargetSign::from_score(unaltered, threshold);
            let grads = model.backward_to_target(&cache, sign)?;
            let sal = explain(explainer, cache.target_activations(), &grads, s.id)?;
            let mut scores = Vec::with_capacity(fractions.len() + 1);
            for &f in fractions {
                let score = match (mode, f == 0.0) {
                    (PerturbationMode::Deletion, true) => unaltered,
                    (PerturbationMode::Insertion, true) => black_score,
                    _ => {
                        let img = perturb(&s.image, &sal.ranking, f, mode)?;
                        sigmoid(model.logit(&img)?)
                    }
                };
                scores.push(score);
            }
            scores.push(unaltered);
            Ok(scores)
        })
        .collect();
    let per_image = per_image?;

    let score_set_at = |column: usize| -> ScoreSet {
        ScoreSet {
            entries: group_set
                .samples
                .iter()
                .zip(&per_image)
                .map(|(s, scores)| ScoreEntry {
                    score: scores[column],
                    label: s.label,
                    group: s.group,
                    sample_id: s.id,
                })
                .collect(),
        }
    };

    let unaltered_hter = hter_of(&score_set_at(fractions.len()), threshold)?;
    let mut hter_values = Vec::with_capacity(fractions.len());
    for column in 0..fractions.len() {
        hter_values.push(hter_of(&score_set_at(column), threshold)?);
    }

    Ok(EvalCurve {
        mode,
        group,
        model_tag,
        explainer_tag: explainer,
        fractions: fractions.to_vec(),
        hter_values,
        threshold_used: threshold,
        unaltered_hter,
        normalized: false,
    })
}

fn require_matching(a: &EvalCurve, b: &EvalCurve) -> Result<()> {
    if a.mode != b.mode {
        return Err(Error::CurveMismatch("mode".into()));
    }
    if a.model_tag != b.model_tag {
        return Err(Error::CurveMismatch("model_tag".into()));
    }
    if a.explainer_tag != b.explainer_tag {
        return Err(Error::CurveMismatch("explainer_tag".into()));
    }
    if a.fractions != b.fractions {
        return Err(Error::CurveMismatch("fractions".into()));
    }
    if a.group == b.group {
        return Err(Error::CurveMismatch("group (curves must come from different groups)".into()));
    }
    Ok(())
}

/// Shifts the whole female curve so its anchor coincides with the male
/// anchor. A zero offset returns the female values verbatim; otherwise each
/// value is `male_anchor + (value - female_anchor)`, which pins the
/// anchored point to the male value exactly (the parenthesized difference
/// is exactly zero there).
pub fn normalize_pair(
    curve_male: &EvalCurve,
    curve_female: &EvalCurve,
    anchor: NormalizationAnchor,
) -> Result<EvalCurve> {
    require_matching(curve_male, curve_female)?;
    let male_anchor = curve_male.anchor_value(anchor);
    let female_anchor = curve_female.anchor_value(anchor);
    let offset = female_anchor - male_anchor;
    let hter_values = if offset == 0.0 {
        curve_female.hter_values.clone()
    } else {
        curve_female
            .hter_values
            .iter()
            .map(|v| male_anchor + (v - female_anchor))
            .collect()
    };
    Ok(EvalCurve {
        hter_values,
        normalized: true,
        ..curve_female.clone()
    })
}

/// Trapezoidal area divided by the fraction span — a mean error level.
/// `include_anchor = false` drops the fraction-0 point first. A constant
/// curve returns its value directly, keeping the mean-of-constant identity
/// exact on any grid.
pub fn curve_auc(curve: &EvalCurve, include_anchor: bool) -> Result<f64> {
    let skip = usize::from(!include_anchor);
    let fractions = &curve.fractions[skip..];
    let values = &curve.hter_values[skip..];
    if fractions.len() < 2 {
        return Err(Error::CurveTooShort);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hter"));
    }
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return Ok(values[0]);
    }
    let mut area = 0.0;
    for i in 0..fractions.len() - 1 {
        area += (fractions[i + 1] - fractions[i]) * (values[i] + values[i + 1]) / 2.0;
    }
    Ok(area / (fractions[fractions.len() - 1] - fractions[0]))
}

/// Absolute AUC difference — the bias score.
pub fn bias_delta(auc_male: f64, auc_female_norm: f64) -> f64 {
    (auc_male - auc_female_norm).abs()
}
