//! Translation generator: 3-block encoder, 5 residual blocks, 2-block
//! decoder, self-attention, tanh head. Fully convolutional; size-preserving
//! for spatial dims divisible by 4 when the stem stride is 1.

use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::nn::act::{self, Act};
use crate::nn::attention::{AttnCache, SelfAttention};
use crate::nn::conv::{Conv2d, ConvT2d};
use crate::nn::init::{fill_gaussian, INIT_SIGMA};
use crate::nn::norm::{BatchNorm2d, BnCache};
use crate::nn::{Elem, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Convolution + batch norm + optional ReLU-family activation.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub act: Option<Act>,
}

pub struct ConvBlockCache<T> {
    x: Tensor<T>,
    bn: BnCache<T>,
    /// Activation input; absent for linear blocks.
    pre: Option<Tensor<T>>,
}

impl<T: Elem> ConvBlock<T> {
    fn new(c_in: usize, c_out: usize, k: usize, s: usize, p: usize, act: Option<Act>) -> Self {
        debug_assert!(!matches!(act, Some(Act::Tanh | Act::Sigmoid)), "ref tensor is the input");
        ConvBlock {
            conv: Conv2d::new(c_in, c_out, k, s, p),
            bn: BatchNorm2d::new(c_out),
            act,
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, ConvBlockCache<T>) {
        let z = self.conv.forward(x);
        let (pre, bn) = self.bn.forward_train(&z);
        let cache_x = x.clone();
        match self.act {
            Some(a) => {
                let y = act::forward(a, &pre);
                (y, ConvBlockCache { x: cache_x, bn, pre: Some(pre) })
            }
            None => (pre, ConvBlockCache { x: cache_x, bn, pre: None }),
        }
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let z = self.bn.forward_eval(&self.conv.forward(x));
        match self.act {
            Some(a) => act::forward(a, &z),
            None => z,
        }
    }

    fn backward(&self, cache: &ConvBlockCache<T>, dy: &Tensor<T>, g: &mut ConvBlock<T>) -> Tensor<T> {
        let dz = match (self.act, &cache.pre) {
            (Some(a), Some(pre)) => {
                let dpre = act::backward(a, pre, dy);
                self.bn.backward(&cache.bn, &dpre, &mut g.bn.gamma, &mut g.bn.beta)
            }
            _ => self.bn.backward(&cache.bn, dy, &mut g.bn.gamma, &mut g.bn.beta),
        };
        self.conv
            .backward_with(&self.conv.w, &cache.x, &dz, &mut g.conv.w, &mut g.conv.b)
    }
}

/// Transposed convolution + batch norm + leaky ReLU.
#[derive(Debug, Clone)]
pub struct DeconvBlock<T> {
    pub deconv: ConvT2d<T>,
    pub bn: BatchNorm2d<T>,
}

pub struct DeconvBlockCache<T> {
    x: Tensor<T>,
    bn: BnCache<T>,
    pre: Tensor<T>,
}

impl<T: Elem> DeconvBlock<T> {
    fn new(c_in: usize, c_out: usize) -> Self {
        DeconvBlock {
            deconv: ConvT2d::new(c_in, c_out, 4, 2, 1),
            bn: BatchNorm2d::new(c_out),
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, DeconvBlockCache<T>) {
        let z = self.deconv.forward(x);
        let (pre, bn) = self.bn.forward_train(&z);
        let y = act::forward(Act::LeakyRelu, &pre);
        (y, DeconvBlockCache { x: x.clone(), bn, pre })
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        act::forward(Act::LeakyRelu, &self.bn.forward_eval(&self.deconv.forward(x)))
    }

    fn backward(&self, cache: &DeconvBlockCache<T>, dy: &Tensor<T>, g: &mut DeconvBlock<T>) -> Tensor<T> {
        let dpre = act::backward(Act::LeakyRelu, &cache.pre, dy);
        let dz = self.bn.backward(&cache.bn, &dpre, &mut g.bn.gamma, &mut g.bn.beta);
        self.deconv
            .backward_with(&self.deconv.w, &cache.x, &dz, &mut g.deconv.w, &mut g.deconv.b)
    }
}

/// conv-bn-relu, conv-bn, additive skip. No activation after the sum.
#[derive(Debug, Clone)]
pub struct ResBlock<T> {
    pub a: ConvBlock<T>,
    pub b: ConvBlock<T>,
}

pub struct ResCache<T> {
    a: ConvBlockCache<T>,
    b: ConvBlockCache<T>,
}

impl<T: Elem> ResBlock<T> {
    pub fn new(c: usize) -> Self {
        ResBlock {
            a: ConvBlock::new(c, c, 3, 1, 1, Some(Act::Relu)),
            b: ConvBlock::new(c, c, 3, 1, 1, None),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, ResCache<T>) {
        let (h, ca) = self.a.forward_train(x);
        let (mut y, cb) = self.b.forward_train(&h);
        y.add_assign(x);
        (y, ResCache { a: ca, b: cb })
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.b.forward_eval(&self.a.forward_eval(x));
        y.add_assign(x);
        y
    }

    pub fn backward(&self, cache: &ResCache<T>, dy: &Tensor<T>, g: &mut ResBlock<T>) -> Tensor<T> {
        let dh = self.b.backward(&cache.b, dy, &mut g.b);
        let mut dx = self.a.backward(&cache.a, &dh, &mut g.a);
        dx.add_assign(dy);
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub stem: ConvBlock<T>,
    pub down1: ConvBlock<T>,
    pub down2: ConvBlock<T>,
    pub res: Vec<ResBlock<T>>,
    pub up1: DeconvBlock<T>,
    pub up2: DeconvBlock<T>,
    pub attn: SelfAttention<T>,
    pub head: Conv2d<T>,
    stem_stride: usize,
}

pub struct GenCache<T> {
    stem: ConvBlockCache<T>,
    down1: ConvBlockCache<T>,
    down2: ConvBlockCache<T>,
    res: Vec<ResCache<T>>,
    up1: DeconvBlockCache<T>,
    up2: DeconvBlockCache<T>,
    attn: AttnCache<T>,
    head_x: Tensor<T>,
    /// tanh output, the reference its backward needs.
    y: Tensor<T>,
}

impl<T: Elem> Generator<T> {
    /// Deterministic construction: all conv weights N(0, 0.02²) from the
    /// seed, biases zero, batch-norm affine at identity, attention gate 0.
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let stride = cfg.stem_stride.stride();
        let mut g = Generator {
            stem: ConvBlock::new(3, 64, 7, stride, 3, Some(Act::Relu)),
            down1: ConvBlock::new(64, 128, 4, 2, 1, Some(Act::Relu)),
            down2: ConvBlock::new(128, 256, 4, 2, 1, Some(Act::Relu)),
            res: (0..5).map(|_| ResBlock::new(256)).collect(),
            up1: DeconvBlock::new(256, 128),
            up2: DeconvBlock::new(128, 64),
            attn: SelfAttention::new(64, cfg.attention, cfg.attention_pool_cap),
            head: Conv2d::new(64, 3, 7, 1, 3),
            stem_stride: stride,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in g.params_mut() {
            if name.ends_with(".w") {
                fill_gaussian(t, INIT_SIGMA, &mut rng);
            }
        }
        Ok(g)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        let div = 4 * self.stem_stride;
        if n == 0 || c != 3 || h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "generator input must be [n,3,h,w] with h, w divisible by {div}, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics, full caches for backward.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, GenCache<T>)> {
        self.check_input(x)?;
        let (h, stem) = self.stem.forward_train(x);
        let (h, down1) = self.down1.forward_train(&h);
        let (mut h, down2) = self.down2.forward_train(&h);
        let mut res = Vec::with_capacity(self.res.len());
        for r in &mut self.res {
            let (h2, c) = r.forward_train(&h);
            h = h2;
            res.push(c);
        }
        let (h, up1) = self.up1.forward_train(&h);
        let (h, up2) = self.up2.forward_train(&h);
        let (h, attn) = self.attn.forward_train(&h, None);
        let z = self.head.forward(&h);
        let y = act::forward(Act::Tanh, &z);
        let cache = GenCache {
            stem,
            down1,
            down2,
            res,
            up1,
            up2,
            attn,
            head_x: h,
            y: y.clone(),
        };
        Ok((y, cache))
    }

    /// Evaluation forward: running statistics, no caches.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let h = self.stem.forward_eval(x);
        let h = self.down1.forward_eval(&h);
        let mut h = self.down2.forward_eval(&h);
        for r in &self.res {
            h = r.forward_eval(&h);
        }
        let h = self.up1.forward_eval(&h);
        let h = self.up2.forward_eval(&h);
        let h = self.attn.forward_eval(&h).y;
        Ok(act::forward(Act::Tanh, &self.head.forward(&h)))
    }

    /// Attention heat map of an evaluation forward (see
    /// [`SelfAttention::forward_eval`] for its shape and normalization).
    pub fn attention_map(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let h = self.stem.forward_eval(x);
        let h = self.down1.forward_eval(&h);
        let mut h = self.down2.forward_eval(&h);
        for r in &self.res {
            h = r.forward_eval(&h);
        }
        let h = self.up1.forward_eval(&h);
        let h = self.up2.forward_eval(&h);
        Ok(self.attn.forward_eval(&h).heat)
    }

    /// Accumulate parameter gradients into the mirror `g`; returns dx.
    pub fn backward(&self, cache: &GenCache<T>, dy: &Tensor<T>, g: &mut Generator<T>) -> Tensor<T> {
        let dz = act::backward(Act::Tanh, &cache.y, dy);
        let dh = self
            .head
            .backward_with(&self.head.w, &cache.head_x, &dz, &mut g.head.w, &mut g.head.b);
        let dh = self.attn.backward(&cache.attn, &dh, &mut g.attn);
        let dh = self.up2.backward(&cache.up2, &dh, &mut g.up2);
        let mut dh = self.up1.backward(&cache.up1, &dh, &mut g.up1);
        for i in (0..self.res.len()).rev() {
            dh = self.res[i].backward(&cache.res[i], &dh, &mut g.res[i]);
        }
        let dh = self.down2.backward(&cache.down2, &dh, &mut g.down2);
        let dh = self.down1.backward(&cache.down1, &dh, &mut g.down1);
        self.stem.backward(&cache.stem, &dh, &mut g.stem)
    }

    /// Same-structure copy with every trainable tensor zeroed, for use as a
    /// gradient accumulator.
    pub fn zeros_like(&self) -> Generator<T> {
        let mut g = self.clone();
        for (_, t) in g.params_mut() {
            t.fill(T::zero());
        }
        g
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        push_conv_block(&mut out, "stem", &self.stem);
        push_conv_block(&mut out, "down1", &self.down1);
        push_conv_block(&mut out, "down2", &self.down2);
        for (i, r) in self.res.iter().enumerate() {
            push_conv_block(&mut out, &format!("res{i}.a"), &r.a);
            push_conv_block(&mut out, &format!("res{i}.b"), &r.b);
        }
        push_deconv_block(&mut out, "up1", &self.up1);
        push_deconv_block(&mut out, "up2", &self.up2);
        out.push(("attn.q.w".into(), &self.attn.q.w));
        out.push(("attn.q.b".into(), &self.attn.q.b));
        out.push(("attn.k.w".into(), &self.attn.k.w));
        out.push(("attn.k.b".into(), &self.attn.k.b));
        out.push(("attn.v.w".into(), &self.attn.v.w));
        out.push(("attn.v.b".into(), &self.attn.v.b));
        out.push(("attn.gamma".into(), &self.attn.gamma));
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        push_conv_block_mut(&mut out, "stem", &mut self.stem);
        push_conv_block_mut(&mut out, "down1", &mut self.down1);
        push_conv_block_mut(&mut out, "down2", &mut self.down2);
        for (i, r) in self.res.iter_mut().enumerate() {
            push_conv_block_mut(&mut out, &format!("res{i}.a"), &mut r.a);
            push_conv_block_mut(&mut out, &format!("res{i}.b"), &mut r.b);
        }
        push_deconv_block_mut(&mut out, "up1", &mut self.up1);
        push_deconv_block_mut(&mut out, "up2", &mut self.up2);
        out.push(("attn.q.w".into(), &mut self.attn.q.w));
        out.push(("attn.q.b".into(), &mut self.attn.q.b));
        out.push(("attn.k.w".into(), &mut self.attn.k.w));
        out.push(("attn.k.b".into(), &mut self.attn.k.b));
        out.push(("attn.v.w".into(), &mut self.attn.v.w));
        out.push(("attn.v.b".into(), &mut self.attn.v.b));
        out.push(("attn.gamma".into(), &mut self.attn.gamma));
        out.push(("head.w".into(), &mut self.head.w));
        out.push(("head.b".into(), &mut self.head.b));
        out
    }

    /// Non-trained state: batch-norm running statistics.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        push_bn_buffers(&mut out, "stem", &self.stem.bn);
        push_bn_buffers(&mut out, "down1", &self.down1.bn);
        push_bn_buffers(&mut out, "down2", &self.down2.bn);
        for (i, r) in self.res.iter().enumerate() {
            push_bn_buffers(&mut out, &format!("res{i}.a"), &r.a.bn);
            push_bn_buffers(&mut out, &format!("res{i}.b"), &r.b.bn);
        }
        push_bn_buffers(&mut out, "up1", &self.up1.bn);
        push_bn_buffers(&mut out, "up2", &self.up2.bn);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        push_bn_buffers_mut(&mut out, "stem", &mut self.stem.bn);
        push_bn_buffers_mut(&mut out, "down1", &mut self.down1.bn);
        push_bn_buffers_mut(&mut out, "down2", &mut self.down2.bn);
        for (i, r) in self.res.iter_mut().enumerate() {
            push_bn_buffers_mut(&mut out, &format!("res{i}.a"), &mut r.a.bn);
            push_bn_buffers_mut(&mut out, &format!("res{i}.b"), &mut r.b.bn);
        }
        push_bn_buffers_mut(&mut out, "up1", &mut self.up1.bn);
        push_bn_buffers_mut(&mut out, "up2", &mut self.up2.bn);
        out
    }
}

fn push_conv_block<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, p: &str, b: &'a ConvBlock<T>) {
    out.push((format!("{p}.conv.w"), &b.conv.w));
    out.push((format!("{p}.conv.b"), &b.conv.b));
    out.push((format!("{p}.bn.gamma"), &b.bn.gamma));
    out.push((format!("{p}.bn.beta"), &b.bn.beta));
}

fn push_conv_block_mut<'a, T>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    p: &str,
    b: &'a mut ConvBlock<T>,
) {
    out.push((format!("{p}.conv.w"), &mut b.conv.w));
    out.push((format!("{p}.conv.b"), &mut b.conv.b));
    out.push((format!("{p}.bn.gamma"), &mut b.bn.gamma));
    out.push((format!("{p}.bn.beta"), &mut b.bn.beta));
}

fn push_deconv_block<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, p: &str, b: &'a DeconvBlock<T>) {
    out.push((format!("{p}.deconv.w"), &b.deconv.w));
    out.push((format!("{p}.deconv.b"), &b.deconv.b));
    out.push((format!("{p}.bn.gamma"), &b.bn.gamma));
    out.push((format!("{p}.bn.beta"), &b.bn.beta));
}

fn push_deconv_block_mut<'a, T>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    p: &str,
    b: &'a mut DeconvBlock<T>,
) {
    out.push((format!("{p}.deconv.w"), &mut b.deconv.w));
    out.push((format!("{p}.deconv.b"), &mut b.deconv.b));
    out.push((format!("{p}.bn.gamma"), &mut b.bn.gamma));
    out.push((format!("{p}.bn.beta"), &mut b.bn.beta));
}

fn push_bn_buffers<'a, T>(
    out: &mut Vec<(String, &'a Tensor<T>)>,
    p: &str,
    bn: &'a crate::nn::norm::BatchNorm2d<T>,
) {
    out.push((format!("{p}.bn.running_mean"), &bn.running_mean));
    out.push((format!("{p}.bn.running_var"), &bn.running_var));
}

fn push_bn_buffers_mut<'a, T>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    p: &str,
    bn: &'a mut crate::nn::norm::BatchNorm2d<T>,
) {
    out.push((format!("{p}.bn.running_mean"), &mut bn.running_mean));
    out.push((format!("{p}.bn.running_var"), &mut bn.running_var));
}
