//! Loss terms and the weighted total objective.
//!
//! Every loss reduces by the arithmetic mean over all elements. Each
//! training-relevant loss has a `_backward` companion returning the value
//! together with the gradient with respect to the argument the optimizer
//! cares about; probabilities are clamped to [ε, 1−ε] before any log and the
//! gradient is zero where the clamp binds.

pub mod extractor;

pub use extractor::{feature_losses, feature_losses_backward, FeatureExtractor, FeatureMaps};

use crate::error::{Error, Result};
use crate::nn::{Elem, Tensor};
use serde::{Deserialize, Serialize};

/// Probability floor/ceiling applied before logarithms.
pub const LOG_EPS: f64 = 1e-7;

fn default_lambda_l1() -> f64 {
    10.0
}
fn default_lambda_p() -> f64 {
    2.0
}
fn default_lambda_i() -> f64 {
    0.2
}
fn default_supervised() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Pixel L1 weight λ₁.
    #[serde(default = "default_lambda_l1")]
    pub lambda_l1: f64,
    /// Perceptual weight λ_P.
    #[serde(default = "default_lambda_p")]
    pub lambda_p: f64,
    /// Identity weight λ_I.
    #[serde(default = "default_lambda_i")]
    pub lambda_i: f64,
    /// When false the paired terms (L1, perceptual, identity) drop out and
    /// training never reads the pairing between the two modalities.
    #[serde(default = "default_supervised")]
    pub supervised: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_l1: default_lambda_l1(),
            lambda_p: default_lambda_p(),
            lambda_i: default_lambda_i(),
            supervised: default_supervised(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l1 < 0.0 || self.lambda_p < 0.0 || self.lambda_i < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-term values of one training step, all f64.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub gan_v: f64,
    pub gan_t: f64,
    pub cycle: f64,
    pub l1_v: f64,
    pub l1_t: f64,
    pub perc_v: f64,
    pub perc_t: f64,
    pub id_v: f64,
    pub id_t: f64,
    pub total_g: f64,
    pub total_d_v: f64,
    pub total_d_t: f64,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.gan_v,
            self.gan_t,
            self.cycle,
            self.l1_v,
            self.l1_t,
            self.perc_v,
            self.perc_t,
            self.id_v,
            self.id_t,
            self.total_g,
            self.total_d_v,
            self.total_d_t,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Weighted generator objective assembled from record parts.
pub fn total_objective(r: &LossRecord, w: &LossWeights) -> f64 {
    let mut total = r.gan_v + r.gan_t + r.cycle;
    if w.supervised {
        total += w.lambda_p * (r.perc_v + r.perc_t)
            + w.lambda_i * (r.id_v + r.id_t)
            + w.lambda_l1 * (r.l1_v + r.l1_t);
    }
    total
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Both adversarial losses of one discriminator:
/// L_D = mean(−log d_real) + mean(−log(1 − d_fake)), L_G = mean(−log d_fake).
pub fn adversarial_losses<T: Elem>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> (f64, f64) {
    let mr = d_real.numel() as f64;
    let mf = d_fake.numel() as f64;
    let mut l_real = 0.0;
    for v in d_real.data() {
        l_real -= clamp_prob(v.to_f()).ln();
    }
    let mut l_fake = 0.0;
    let mut l_g = 0.0;
    for v in d_fake.data() {
        let p = clamp_prob(v.to_f());
        l_fake -= (1.0 - p).ln();
        l_g -= p.ln();
    }
    (l_real / mr + l_fake / mf, l_g / mf)
}

/// L_D and its gradients with respect to both patch maps.
pub fn discriminator_loss_backward<T: Elem>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
) -> (f64, Tensor<T>, Tensor<T>) {
    let mr = d_real.numel() as f64;
    let mf = d_fake.numel() as f64;
    let mut loss = 0.0;
    let mut d_dreal = Tensor::zeros(d_real.shape());
    for (i, v) in d_real.data().iter().enumerate() {
        let p = v.to_f();
        let pc = clamp_prob(p);
        loss -= pc.ln() / mr;
        if p > LOG_EPS && p < 1.0 - LOG_EPS {
            d_dreal.data_mut()[i] = T::from_f(-1.0 / (mr * pc));
        }
    }
    let mut d_dfake = Tensor::zeros(d_fake.shape());
    for (i, v) in d_fake.data().iter().enumerate() {
        let p = v.to_f();
        let pc = clamp_prob(p);
        loss -= (1.0 - pc).ln() / mf;
        if p > LOG_EPS && p < 1.0 - LOG_EPS {
            d_dfake.data_mut()[i] = T::from_f(1.0 / (mf * (1.0 - pc)));
        }
    }
    (loss, d_dreal, d_dfake)
}

/// Generator adversarial term and its gradient with respect to the fake
/// patch map. Non-saturating by default; `saturating` selects the literal
/// minimax form mean(log(1 − d_fake)), which the generator also minimizes.
pub fn generator_gan_backward<T: Elem>(
    d_fake: &Tensor<T>,
    saturating: bool,
) -> (f64, Tensor<T>) {
    let m = d_fake.numel() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(d_fake.shape());
    for (i, v) in d_fake.data().iter().enumerate() {
        let p = v.to_f();
        let pc = clamp_prob(p);
        let inside = p > LOG_EPS && p < 1.0 - LOG_EPS;
        if saturating {
            loss += (1.0 - pc).ln() / m;
            if inside {
                grad.data_mut()[i] = T::from_f(-1.0 / (m * (1.0 - pc)));
            }
        } else {
            loss -= pc.ln() / m;
            if inside {
                grad.data_mut()[i] = T::from_f(-1.0 / (m * pc));
            }
        }
    }
    (loss, grad)
}

/// Mean absolute difference over all elements.
pub fn l1_loss<T: Elem>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "l1 operands {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let m = a.numel() as f64;
    let mut s = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        s += (x.to_f() - y.to_f()).abs();
    }
    Ok(s / m)
}

/// L1 value plus gradient with respect to `a` (sign convention: zero at ties).
pub fn l1_backward<T: Elem>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "l1 operands {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let m = a.numel() as f64;
    let unit = 1.0 / m;
    let mut s = 0.0;
    let mut grad = Tensor::zeros(a.shape());
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        let d = x.to_f() - y.to_f();
        s += d.abs();
        grad.data_mut()[i] = T::from_f(if d > 0.0 {
            unit
        } else if d < 0.0 {
            -unit
        } else {
            0.0
        });
    }
    Ok((s / m, grad))
}

/// Two-sided cycle-consistency loss through a pair of translation maps:
/// mean|f_vt(f_tv(x_t)) − x_t| + mean|f_tv(f_vt(x_v)) − x_v|.
pub fn cycle_loss<T, Ftv, Fvt>(
    x_t: &Tensor<T>,
    x_v: &Tensor<T>,
    f_tv: Ftv,
    f_vt: Fvt,
) -> Result<f64>
where
    T: Elem,
    Ftv: Fn(&Tensor<T>) -> Result<Tensor<T>>,
    Fvt: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let rec_t = f_vt(&f_tv(x_t)?)?;
    let rec_v = f_tv(&f_vt(x_v)?)?;
    Ok(l1_loss(&rec_t, x_t)? + l1_loss(&rec_v, x_v)?)
}
