//! Patch discriminator: five spectrally normalized stride-2 convolutions
//! with leaky ReLU, spectrally normalized self-attention, and a spectrally
//! normalized one-channel head under a sigmoid. No batch norm anywhere.
//!
//! Spectral power-iteration state advances exactly once per training step:
//! [`Discriminator::begin_step`] advances it and returns the step's
//! normalized weights, which every forward in that step (real batch, fake
//! batch, the post-update re-forward) must reuse via
//! [`Discriminator::current_weights`] so the state stays put.

use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::nn::act::{self, Act};
use crate::nn::attention::{AttnCache, AttnNorm, SelfAttention};
use crate::nn::init::{fill_gaussian, INIT_SIGMA};
use crate::nn::spectral::{SnConv2d, SnConvCache};
use crate::nn::{Elem, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WIDTHS: [usize; 6] = [3, 64, 128, 256, 512, 512];

/// Normalized weights frozen for one training step.
pub struct DiscWeights<T> {
    blocks: Vec<(Tensor<T>, T)>,
    attn: Option<AttnNorm<T>>,
    head: (Tensor<T>, T),
}

pub struct DiscCache<T> {
    /// Per block: conv cache plus the leaky-ReLU input.
    blocks: Vec<(SnConvCache<T>, Tensor<T>)>,
    attn: AttnCache<T>,
    head: SnConvCache<T>,
    /// Sigmoid output, the reference its backward needs.
    y: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub blocks: Vec<SnConv2d<T>>,
    pub attn: SelfAttention<T>,
    pub head: SnConv2d<T>,
}

impl<T: Elem> Discriminator<T> {
    /// Deterministic construction; spectral vectors are drawn from the same
    /// seed and burned in against the initialized weights.
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..5)
            .map(|i| SnConv2d::new(WIDTHS[i], WIDTHS[i + 1], 4, 2, 1, &mut rng))
            .collect();
        let attn =
            SelfAttention::new(512, cfg.attention, cfg.attention_pool_cap).with_spectral(&mut rng);
        let head = SnConv2d::new(512, 1, 4, 1, 1, &mut rng);
        let mut d = Discriminator { blocks, attn, head };
        for (name, t) in d.params_mut() {
            if name.ends_with(".w") {
                fill_gaussian(t, INIT_SIGMA, &mut rng);
            }
        }
        for b in &mut d.blocks {
            b.warm_up();
        }
        d.attn.warm_up();
        d.head.warm_up();
        Ok(d)
    }

    fn check_input(x: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if n == 0 || c != 3 || h < 64 || w < 64 {
            return Err(Error::Shape(format!(
                "discriminator input must be [n,3,h,w] with h, w >= 64, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Advance every spectral pair once and freeze this step's weights.
    pub fn begin_step(&mut self) -> DiscWeights<T> {
        DiscWeights {
            blocks: self.blocks.iter_mut().map(|b| b.step_normalized(1)).collect(),
            attn: self.attn.normalized_for_step(1),
            head: self.head.step_normalized(1),
        }
    }

    /// The step's weights recomputed from current raw weights and the stored
    /// spectral vectors, without advancing them. Used for the generator-phase
    /// re-forward after the discriminator update.
    pub fn current_weights(&self) -> DiscWeights<T> {
        DiscWeights {
            blocks: self.blocks.iter().map(|b| b.current_normalized()).collect(),
            attn: self.attn.current_normalized(),
            head: self.head.current_normalized(),
        }
    }

    pub fn forward_train(
        &self,
        w: &DiscWeights<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, DiscCache<T>)> {
        Self::check_input(x)?;
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, (wbar, sigma)) in self.blocks.iter().zip(&w.blocks) {
            let (z, cache) = b.forward_cached(wbar, *sigma, &h);
            h = act::forward(Act::LeakyRelu, &z);
            blocks.push((cache, z));
        }
        let (h2, attn) = self.attn.forward_train(&h, w.attn.clone());
        let (z, head) = self.head.forward_cached(&w.head.0, w.head.1, &h2);
        let y = act::forward(Act::Sigmoid, &z);
        let cache = DiscCache { blocks, attn, head, y: y.clone() };
        Ok((y, cache))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Self::check_input(x)?;
        let mut h = x.clone();
        for b in &self.blocks {
            h = act::forward(Act::LeakyRelu, &b.forward_eval(&h));
        }
        let h = self.attn.forward_eval(&h).y;
        Ok(act::forward(Act::Sigmoid, &self.head.forward_eval(&h)))
    }

    /// Accumulate parameter gradients into the mirror `g`; returns dx, the
    /// gradient with respect to the input image.
    pub fn backward(&self, cache: &DiscCache<T>, dy: &Tensor<T>, g: &mut Discriminator<T>) -> Tensor<T> {
        let dz = act::backward(Act::Sigmoid, &cache.y, dy);
        let mut dh = self
            .head
            .backward(&cache.head, &dz, &mut g.head.conv.w, &mut g.head.conv.b);
        dh = self.attn.backward(&cache.attn, &dh, &mut g.attn);
        for i in (0..self.blocks.len()).rev() {
            let (conv_cache, pre) = &cache.blocks[i];
            let dpre = act::backward(Act::LeakyRelu, pre, &dh);
            let gb = &mut g.blocks[i];
            dh = self.blocks[i].backward(conv_cache, &dpre, &mut gb.conv.w, &mut gb.conv.b);
        }
        dh
    }

    pub fn zeros_like(&self) -> Discriminator<T> {
        let mut d = self.clone();
        for (_, t) in d.params_mut() {
            t.fill(T::zero());
        }
        d
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{}.w", i + 1), &b.conv.w));
            out.push((format!("conv{}.b", i + 1), &b.conv.b));
        }
        out.push(("attn.q.w".into(), &self.attn.q.w));
        out.push(("attn.q.b".into(), &self.attn.q.b));
        out.push(("attn.k.w".into(), &self.attn.k.w));
        out.push(("attn.k.b".into(), &self.attn.k.b));
        out.push(("attn.v.w".into(), &self.attn.v.w));
        out.push(("attn.v.b".into(), &self.attn.v.b));
        out.push(("attn.gamma".into(), &self.attn.gamma));
        out.push(("head.w".into(), &self.head.conv.w));
        out.push(("head.b".into(), &self.head.conv.b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("conv{}.w", i + 1), &mut b.conv.w));
            out.push((format!("conv{}.b", i + 1), &mut b.conv.b));
        }
        out.push(("attn.q.w".into(), &mut self.attn.q.w));
        out.push(("attn.q.b".into(), &mut self.attn.q.b));
        out.push(("attn.k.w".into(), &mut self.attn.k.w));
        out.push(("attn.k.b".into(), &mut self.attn.k.b));
        out.push(("attn.v.w".into(), &mut self.attn.v.w));
        out.push(("attn.v.b".into(), &mut self.attn.v.b));
        out.push(("attn.gamma".into(), &mut self.attn.gamma));
        out.push(("head.w".into(), &mut self.head.conv.w));
        out.push(("head.b".into(), &mut self.head.conv.b));
        out
    }

    /// Non-trained state: spectral power-iteration vectors.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{}.sn.u", i + 1), &b.sn.u));
            out.push((format!("conv{}.sn.v", i + 1), &b.sn.v));
        }
        if let Some(sn) = &self.attn.sn {
            for (tag, s) in ["q", "k", "v"].iter().zip(sn.iter()) {
                out.push((format!("attn.{tag}.sn.u"), &s.u));
                out.push((format!("attn.{tag}.sn.v"), &s.v));
            }
        }
        out.push(("head.sn.u".into(), &self.head.sn.u));
        out.push(("head.sn.v".into(), &self.head.sn.v));
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("conv{}.sn.u", i + 1), &mut b.sn.u));
            out.push((format!("conv{}.sn.v", i + 1), &mut b.sn.v));
        }
        if let Some(sn) = &mut self.attn.sn {
            for (tag, s) in ["q", "k", "v"].iter().zip(sn.iter_mut()) {
                out.push((format!("attn.{tag}.sn.u"), &mut s.u));
                out.push((format!("attn.{tag}.sn.v"), &mut s.v));
            }
        }
        out.push(("head.sn.u".into(), &mut self.head.sn.u));
        out.push(("head.sn.v".into(), &mut self.head.sn.v));
        out
    }
}
