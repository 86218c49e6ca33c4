//! Frozen feature extractor standing in for a pretrained face network.
//!
//! A fixed five-stage convolutional trunk with three taps: mid features
//! after stage 2, deep features after stage 4, and a pooled embedding vector
//! after stage 5. Widths are 3→16→32→64→64→128, every convolution k3 s1 p1,
//! ReLU activations, 2×2 mean pooling between stages. Parameters are either
//! drawn once from a seed (He-scaled Gaussians) or loaded from a named-array
//! archive; they are never trained. The identity variant returns the pixels
//! themselves from both feature taps, which reduces the perceptual loss to
//! plain L1 and anchors tests.
//!
//! On a 224×224 input the taps are mid [32,112,112], deep [64,28,28],
//! embedding [128]. Inputs must be 3-channel with sides divisible by 16.

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::nn::act::{self, Act};
use crate::nn::conv::Conv2d;
use crate::nn::init::fill_gaussian;
use crate::nn::pool::{avg_pool, avg_pool_backward};
use crate::nn::{Elem, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::path::Path;

const WIDTHS: [usize; 6] = [3, 16, 32, 64, 64, 128];

#[derive(Debug)]
pub struct FeatureMaps<T> {
    pub mid: Tensor<T>,
    pub deep: Tensor<T>,
    /// `[n, 128, 1, 1]` (identity variant: `[n, c, 1, 1]` channel means).
    pub embed: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor<T> {
    pub identifier: String,
    convs: Vec<Conv2d<T>>,
    identity: bool,
}

struct StageCache<T> {
    conv_in: Tensor<T>,
    pre: Tensor<T>,
}

struct TrunkCache<T> {
    stages: Vec<StageCache<T>>,
}

impl<T: Elem> FeatureExtractor<T> {
    /// Frozen random trunk, fully determined by the seed.
    pub fn deterministic(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(5);
        for i in 0..5 {
            let mut c = Conv2d::new(WIDTHS[i], WIDTHS[i + 1], 3, 1, 1);
            let fan_in = (WIDTHS[i] * 9) as f64;
            fill_gaussian(&mut c.w, (2.0 / fan_in).sqrt(), &mut rng);
            convs.push(c);
        }
        FeatureExtractor {
            identifier: format!("rand{seed}"),
            convs,
            identity: false,
        }
    }

    /// Pixel-identity taps: mid = deep = input, embedding = channel means.
    pub fn identity() -> Self {
        FeatureExtractor {
            identifier: "id".into(),
            convs: Vec::new(),
            identity: true,
        }
    }

    pub fn save_archive(&self, path: &Path) -> Result<()> {
        if self.identity {
            return Err(Error::Config("identity extractor has no weights to save".into()));
        }
        let mut a = Archive::new(json!({
            "identifier": self.identifier,
            "kind": "feature-extractor",
            "widths": WIDTHS,
        }));
        for (i, c) in self.convs.iter().enumerate() {
            a.push_tensor(&format!("conv{}.w", i + 1), &c.w.cast::<f32>())?;
            a.push_tensor(&format!("conv{}.b", i + 1), &c.b.cast::<f32>())?;
        }
        a.write_to(path)
    }

    pub fn from_archive(path: &Path) -> Result<Self> {
        let a = Archive::read_from(path)?;
        if a.meta["kind"] != "feature-extractor" {
            return Err(Error::Config(format!(
                "{} is not a feature-extractor archive",
                path.display()
            )));
        }
        let identifier = a.meta["identifier"]
            .as_str()
            .unwrap_or("archive")
            .to_string();
        let mut convs = Vec::with_capacity(5);
        for i in 0..5 {
            let mut c = Conv2d::<f32>::new(WIDTHS[i], WIDTHS[i + 1], 3, 1, 1);
            a.read_into(&format!("conv{}.w", i + 1), &mut c.w)?;
            a.read_into(&format!("conv{}.b", i + 1), &mut c.b)?;
            convs.push(Conv2d {
                w: c.w.cast::<T>(),
                b: c.b.cast::<T>(),
                geom: c.geom,
            });
        }
        Ok(FeatureExtractor { identifier, convs, identity: false })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if n == 0 || c != 3 {
            return Err(Error::Shape(format!(
                "extractor input must be [n,3,h,w], got {:?}",
                x.shape()
            )));
        }
        if !self.identity && (h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0) {
            return Err(Error::Config(format!(
                "extractor taps need input sides divisible by 16, got {h}x{w}"
            )));
        }
        Ok(())
    }

    fn stage(&self, i: usize, x: &Tensor<T>) -> (Tensor<T>, StageCache<T>) {
        let pre = self.convs[i].forward(x);
        let a = act::forward(Act::Relu, &pre);
        (a, StageCache { conv_in: x.clone(), pre })
    }

    /// Forward through stage 4, returning both tap values and the caches
    /// backward needs.
    fn forward_trunk(&self, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>, TrunkCache<T>) {
        let (a1, s1) = self.stage(0, x);
        let p1 = avg_pool(&a1, 2);
        let (mid, s2) = self.stage(1, &p1);
        let p2 = avg_pool(&mid, 2);
        let (a3, s3) = self.stage(2, &p2);
        let p3 = avg_pool(&a3, 2);
        let (deep, s4) = self.stage(3, &p3);
        (mid, deep, TrunkCache { stages: vec![s1, s2, s3, s4] })
    }

    fn stage_backward(&self, i: usize, cache: &StageCache<T>, da: &Tensor<T>) -> Tensor<T> {
        let dpre = act::backward(Act::Relu, &cache.pre, da);
        let mut dw = Tensor::zeros(self.convs[i].w.shape());
        let mut db = Tensor::zeros(self.convs[i].b.shape());
        self.convs[i]
            .backward_with(&self.convs[i].w, &cache.conv_in, &dpre, &mut dw, &mut db)
    }

    /// Gradient of (contributions seeded at the two taps) with respect to x.
    fn trunk_backward(
        &self,
        cache: &TrunkCache<T>,
        dmid: &Tensor<T>,
        ddeep: &Tensor<T>,
    ) -> Tensor<T> {
        let [s1, s2, s3, s4] = match cache.stages.as_slice() {
            [a, b, c, d] => [a, b, c, d],
            _ => unreachable!("trunk has four cached stages"),
        };
        let dp3 = self.stage_backward(3, s4, ddeep);
        let da3 = avg_pool_backward(&dp3, 2, s3.pre.shape());
        let dp2 = self.stage_backward(2, s3, &da3);
        let mut da2 = avg_pool_backward(&dp2, 2, s2.pre.shape());
        da2.add_assign(dmid);
        let dp1 = self.stage_backward(1, s2, &da2);
        let da1 = avg_pool_backward(&dp1, 2, s1.pre.shape());
        self.stage_backward(0, s1, &da1)
    }

    /// All three taps, evaluation mode.
    pub fn features(&self, x: &Tensor<T>) -> Result<FeatureMaps<T>> {
        self.check_input(x)?;
        if self.identity {
            let [n, c, h, w] = x.shape();
            let mut embed = Tensor::zeros([n, c, 1, 1]);
            let hw = (h * w) as f64;
            for ni in 0..n {
                let img = x.image(ni);
                for ci in 0..c {
                    let s: f64 = img[ci * h * w..(ci + 1) * h * w]
                        .iter()
                        .map(|v| v.to_f())
                        .sum();
                    embed.image_mut(ni)[ci] = T::from_f(s / hw);
                }
            }
            return Ok(FeatureMaps { mid: x.clone(), deep: x.clone(), embed });
        }
        let (mid, deep, _) = self.forward_trunk(x);
        let p4 = avg_pool(&deep, 2);
        let (a5, _) = self.stage(4, &p4);
        let [n, c, h, w] = a5.shape();
        let mut embed = Tensor::zeros([n, c, 1, 1]);
        let hw = (h * w) as f64;
        for ni in 0..n {
            let img = a5.image(ni);
            for ci in 0..c {
                let s: f64 = img[ci * h * w..(ci + 1) * h * w]
                    .iter()
                    .map(|v| v.to_f())
                    .sum();
                embed.image_mut(ni)[ci] = T::from_f(s / hw);
            }
        }
        Ok(FeatureMaps { mid, deep, embed })
    }
}

fn mean_abs_and_sign<T: Elem>(a: &Tensor<T>, b: &Tensor<T>, weight: f64) -> (f64, Tensor<T>) {
    let m = a.numel() as f64;
    let unit = weight / m;
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
    (s / m, grad)
}

/// Perceptual loss (mid tap) and identity loss (deep tap): mean absolute
/// feature differences between the synthesized batch and the reference.
pub fn feature_losses<T: Elem>(
    fx: &FeatureExtractor<T>,
    x_hat: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<(f64, f64)> {
    if x_hat.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "feature loss operands {:?} vs {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    let fh = fx.features(x_hat)?;
    let fr = fx.features(x)?;
    let (lp, _) = mean_abs_and_sign(&fh.mid, &fr.mid, 0.0);
    let (li, _) = mean_abs_and_sign(&fh.deep, &fr.deep, 0.0);
    Ok((lp, li))
}

/// Both feature losses plus d(w_p·L_P + w_i·L_I)/d x_hat in one backward
/// pass through the shared trunk.
pub fn feature_losses_backward<T: Elem>(
    fx: &FeatureExtractor<T>,
    x_hat: &Tensor<T>,
    x: &Tensor<T>,
    w_p: f64,
    w_i: f64,
) -> Result<(f64, f64, Tensor<T>)> {
    if x_hat.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "feature loss operands {:?} vs {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    fx.check_input(x_hat)?;
    if fx.identity {
        let (lp, gp) = mean_abs_and_sign(x_hat, x, w_p);
        let (li, gi) = mean_abs_and_sign(x_hat, x, w_i);
        let mut dx = gp;
        dx.add_assign(&gi);
        return Ok((lp, li, dx));
    }
    let (mid_h, deep_h, cache) = fx.forward_trunk(x_hat);
    let (mid_r, deep_r, _) = fx.forward_trunk(x);
    let (lp, dmid) = mean_abs_and_sign(&mid_h, &mid_r, w_p);
    let (li, ddeep) = mean_abs_and_sign(&deep_h, &deep_r, w_i);
    let dx = fx.trunk_backward(&cache, &dmid, &ddeep);
    Ok((lp, li, dx))
}
