//! The fixed presentation-attack classifier: a small CNN scoring 1x32x32
//! grayscale images. Higher scores mean "attack".
//!
//! Architecture (all convs 3x3, stride 1, zero padding 1):
//!
//! ```text
//! input 1x32x32
//!   -> conv(1->8)  + ReLU -> maxpool2   8x16x16
//!   -> conv(8->16) + ReLU -> maxpool2  16x8x8
//!   -> conv(16->32)+ ReLU             32x8x8   <- explanation target layer
//!   -> global average pool            32
//!   -> linear(32->1)                  logit
//! ```
//!
//! `forward` keeps every intermediate needed for training and for
//! class-score gradients at the target layer; `logit` is a lean path for
//! scoring only, guaranteed to produce bit-identical logits.

mod ops;
mod train;
mod weights;

pub use train::{train, train_with_report, TrainConfig, TrainReport};
pub use weights::{load_model, save_model};

use crate::error::{Error, Result};
use crate::rng::Xoshiro256StarStar;
use crate::tensor::Tensor;

pub const INPUT_CHANNELS: usize = 1;
pub const INPUT_SIDE: usize = 32;
/// Channel count of the explanation target layer (third conv, post-ReLU).
pub const TARGET_CHANNELS: usize = 32;
/// Spatial side of the explanation target layer.
pub const TARGET_SIDE: usize = 8;

const C1: usize = 8;
const C2: usize = 16;
const C3: usize = TARGET_CHANNELS;
const H1: usize = 16; // after first pool
const H2: usize = 8; // after second pool

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// Shape (c_out, c_in, 3, 3).
    pub weight: Tensor,
    /// Shape (c_out,).
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniPadNet {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
    /// Shape (1, 32).
    pub head_weight: Tensor,
    /// Shape (1,).
    pub head_bias: Tensor,
}

/// Which class the explanation gradient targets: the sign applied to the
/// attack logit before differentiating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSign {
    /// Explain evidence for the attack class (+logit).
    Attack,
    /// Explain evidence for the bona fide class (-logit).
    BonaFide,
}

impl TargetSign {
    /// Picks the predicted class at a threshold: attack iff score >= threshold.
    pub fn from_score(score: f64, threshold: f64) -> Self {
        if score >= threshold {
            TargetSign::Attack
        } else {
            TargetSign::BonaFide
        }
    }

    pub fn factor(self) -> f64 {
        match self {
            TargetSign::Attack => 1.0,
            TargetSign::BonaFide => -1.0,
        }
    }
}

/// Every intermediate of one forward pass. Pre-activation tensors and pool
/// argmax indices are kept so the training backward pass can reuse the
/// cache; explanation code only touches `target_activations` and `logit`.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub(crate) conv1_pre: Tensor,
    pub(crate) pool1: Tensor,
    pub(crate) pool1_argmax: Vec<usize>,
    pub(crate) conv2_pre: Tensor,
    pub(crate) pool2: Tensor,
    pub(crate) pool2_argmax: Vec<usize>,
    pub(crate) conv3_pre: Tensor,
    pub(crate) conv3_post: Tensor,
    pub(crate) gap: Tensor,
    pub(crate) logit: f64,
}

impl ActivationCache {
    /// Post-ReLU activations of the target layer, shape (32, 8, 8).
    pub fn target_activations(&self) -> &Tensor {
        &self.conv3_post
    }

    pub fn logit(&self) -> f64 {
        self.logit
    }

    pub fn score(&self) -> f64 {
        sigmoid(self.logit)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn uniform_tensor(rng: &mut Xoshiro256StarStar, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.values_mut() {
        *v = rng.uniform(-bound, bound);
    }
    t
}

fn init_conv(rng: &mut Xoshiro256StarStar, c_out: usize, c_in: usize) -> ConvLayer {
    let bound = (6.0 / (c_in as f64 * 9.0)).sqrt();
    ConvLayer {
        weight: uniform_tensor(rng, &[c_out, c_in, 3, 3], bound),
        bias: uniform_tensor(rng, &[c_out], bound),
    }
}

/// Fresh model with uniform(-b, b) parameters, b = sqrt(6 / fan_in), drawn
/// from a single seeded stream in layer order (weights before biases).
pub fn init_model(seed: u64) -> MiniPadNet {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let conv1 = init_conv(&mut rng, C1, INPUT_CHANNELS);
    let conv2 = init_conv(&mut rng, C2, C1);
    let conv3 = init_conv(&mut rng, C3, C2);
    let head_bound = (6.0 / C3 as f64).sqrt();
    let head_weight = uniform_tensor(&mut rng, &[1, C3], head_bound);
    let head_bias = uniform_tensor(&mut rng, &[1], head_bound);
    MiniPadNet {
        conv1,
        conv2,
        conv3,
        head_weight,
        head_bias,
    }
}

impl MiniPadNet {
    fn check_input(image: &Tensor) -> Result<()> {
        image.expect_shape(&[INPUT_CHANNELS, INPUT_SIDE, INPUT_SIDE])
    }

    /// Full forward pass, retaining all intermediates.
    pub fn forward(&self, image: &Tensor) -> Result<ActivationCache> {
        Self::check_input(image)?;
        let s = INPUT_SIDE;

        let mut conv1_pre = Tensor::zeros(&[C1, s, s]);
        ops::conv3x3_forward(
            image.values(),
            INPUT_CHANNELS,
            s,
            s,
            self.conv1.weight.values(),
            self.conv1.bias.values(),
            C1,
            conv1_pre.values_mut(),
        );
        let mut act1 = conv1_pre.clone();
        ops::relu(act1.values_mut());
        let mut pool1 = Tensor::zeros(&[C1, H1, H1]);
        let mut pool1_argmax = vec![0usize; C1 * H1 * H1];
        ops::maxpool2(act1.values(), C1, s, s, pool1.values_mut(), Some(&mut pool1_argmax));

        let mut conv2_pre = Tensor::zeros(&[C2, H1, H1]);
        ops::conv3x3_forward(
            pool1.values(),
            C1,
            H1,
            H1,
            self.conv2.weight.values(),
            self.conv2.bias.values(),
            C2,
            conv2_pre.values_mut(),
        );
        let mut act2 = conv2_pre.clone();
        ops::relu(act2.values_mut());
        let mut pool2 = Tensor::zeros(&[C2, H2, H2]);
        let mut pool2_argmax = vec![0usize; C2 * H2 * H2];
        ops::maxpool2(act2.values(), C2, H1, H1, pool2.values_mut(), Some(&mut pool2_argmax));

        let mut conv3_pre = Tensor::zeros(&[C3, H2, H2]);
        ops::conv3x3_forward(
            pool2.values(),
            C2,
            H2,
            H2,
            self.conv3.weight.values(),
            self.conv3.bias.values(),
            C3,
            conv3_pre.values_mut(),
        );
        let mut conv3_post = conv3_pre.clone();
        ops::relu(conv3_post.values_mut());

        let mut gap = Tensor::zeros(&[C3]);
        ops::global_avg_pool(conv3_post.values(), C3, H2 * H2, gap.values_mut());

        let logit = self.head_logit(gap.values());
        if !logit.is_finite() {
            return Err(Error::NonFinite("logit"));
        }

        Ok(ActivationCache {
            conv1_pre,
            pool1,
            pool1_argmax,
            conv2_pre,
            pool2,
            pool2_argmax,
            conv3_pre,
            conv3_post,
            gap,
            logit,
        })
    }

    fn head_logit(&self, gap: &[f64]) -> f64 {
        let mut z = self.head_bias.values()[0];
        for (w, g) in self.head_weight.values().iter().zip(gap) {
            z += w * g;
        }
        z
    }

    /// Scoring-only forward pass; skips pre-activation copies and argmax
    /// bookkeeping but performs the identical arithmetic, so the returned
    /// logit is bit-identical to `forward(...)?.logit()`.
    pub fn logit(&self, image: &Tensor) -> Result<f64> {
        Self::check_input(image)?;
        let s = INPUT_SIDE;

        let mut buf1 = vec![0.0; C1 * s * s];
        ops::conv3x3_forward(
            image.values(),
            INPUT_CHANNELS,
            s,
            s,
            self.conv1.weight.values(),
            self.conv1.bias.values(),
            C1,
            &mut buf1,
        );
        ops::relu(&mut buf1);
        let mut pooled1 = vec![0.0; C1 * H1 * H1];
        ops::maxpool2(&buf1, C1, s, s, &mut pooled1, None);

        let mut buf2 = vec![0.0; C2 * H1 * H1];
        ops::conv3x3_forward(
            &pooled1,
            C1,
            H1,
            H1,
            self.conv2.weight.values(),
            self.conv2.bias.values(),
            C2,
            &mut buf2,
        );
        ops::relu(&mut buf2);
        let mut pooled2 = vec![0.0; C2 * H2 * H2];
        ops::maxpool2(&buf2, C2, H1, H1, &mut pooled2, None);

        let mut buf3 = vec![0.0; C3 * H2 * H2];
        ops::conv3x3_forward(
            &pooled2,
            C2,
            H2,
            H2,
            self.conv3.weight.values(),
            self.conv3.bias.values(),
            C3,
            &mut buf3,
        );
        ops::relu(&mut buf3);

        let mut gap = [0.0; C3];
        ops::global_avg_pool(&buf3, C3, H2 * H2, &mut gap);

        let z = self.head_logit(&gap);
        if !z.is_finite() {
            return Err(Error::NonFinite("logit"));
        }
        Ok(z)
    }

    /// Attack probability: sigmoid of the logit.
    pub fn score(&self, image: &Tensor) -> Result<f64> {
        Ok(sigmoid(self.logit(image)?))
    }

    /// Gradient of `sign * logit` with respect to the target-layer
    /// activations, shape (32, 8, 8). With a mean pool and linear head this
    /// is constant per channel: sign * head_weight[k] / 64.
    ///
    /// The cache must come from this model: the logit is recomputed from the
    /// cached pooled features and compared bit-for-bit.
    pub fn backward_to_target(&self, cache: &ActivationCache, sign: TargetSign) -> Result<Tensor> {
        cache
            .conv3_post
            .expect_shape(&[TARGET_CHANNELS, TARGET_SIDE, TARGET_SIDE])?;
        let replayed = self.head_logit(cache.gap.values());
        if replayed.to_bits() != cache.logit.to_bits() {
            return Err(Error::CacheMismatch);
        }

        let spatial = TARGET_SIDE * TARGET_SIDE;
        let mut grads = Tensor::zeros(&[TARGET_CHANNELS, TARGET_SIDE, TARGET_SIDE]);
        let out = grads.values_mut();
        for (k, &w) in self.head_weight.values().iter().enumerate() {
            let g = sign.factor() * w / spatial as f64;
            out[k * spatial..(k + 1) * spatial].fill(g);
        }
        Ok(grads)
    }

    /// Bitwise parameter equality, for determinism and round-trip checks.
    pub fn bit_eq(&self, other: &MiniPadNet) -> bool {
        self.conv1.weight.bit_eq(&other.conv1.weight)
            && self.conv1.bias.bit_eq(&other.conv1.bias)
            && self.conv2.weight.bit_eq(&other.conv2.weight)
            && self.conv2.bias.bit_eq(&other.conv2.bias)
            && self.conv3.weight.bit_eq(&other.conv3.weight)
            && self.conv3.bias.bit_eq(&other.conv3.bias)
            && self.head_weight.bit_eq(&other.head_weight)
            && self.head_bias.bit_eq(&other.head_bias)
    }
}
