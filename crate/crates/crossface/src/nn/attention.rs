//! Self-attention over spatial positions, in two flavors.
//!
//! `Sagan`: 1×1 projections q, k (C → max(1, C/8)) and v (C → C); energies
//! e[i,j] = q(x_i)ᵀ k(x_j); softmax over keys j per query row; output
//! y = x + γ·o with o[·,i] = Σ_j att[i,j]·v(x_j) and γ a learned scalar
//! starting at 0. When the spatial extent exceeds `kv_cap`, the key/value
//! branch input is average-pooled by 2 until it fits (1×1 conv and average
//! pool commute, so pooling the input first changes nothing but cost).
//!
//! `Literal`: three C → C projections f, g, h; per pixel the channel vector
//! softmax(f(x) ⊙ g(x)) weights h(x) elementwise. No residual, no γ, no
//! pooling (nothing couples across positions).
//!
//! Projections may be spectrally normalized (discriminator use): the caller
//! advances the power iteration once per step via [`SelfAttention::normalized_for_step`]
//! and threads the returned weights through every forward of that step.

use super::conv::Conv2d;
use super::pool::{avg_pool, avg_pool_backward};
use super::spectral::SpectralNorm;
use super::{Elem, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Sagan,
    Literal,
}

/// Default cap on key/value positions before pooling: 64×64.
pub const DEFAULT_KV_CAP: usize = 4096;

/// Normalized projection weights for one step: (W̄, σ̂) for q, k, v.
pub type AttnNorm<T> = [(Tensor<T>, T); 3];

#[derive(Debug, Clone)]
pub struct SelfAttention<T> {
    pub q: Conv2d<T>,
    pub k: Conv2d<T>,
    pub v: Conv2d<T>,
    /// Residual gate, `[1,1,1,1]`. Sagan mode only.
    pub gamma: Tensor<T>,
    pub mode: AttentionMode,
    pub kv_cap: usize,
    pub sn: Option<[SpectralNorm<T>; 3]>,
}

/// Eval-time result: the layer output plus a compact per-image heat map.
///
/// Sagan: mean attention mass received per key position, `[n,1,ph,pw]` on the
/// (possibly pooled) key grid; each image's map sums to 1. Literal: max
/// channel weight per pixel, `[n,1,h,w]`.
pub struct AttentionOutput<T> {
    pub y: Tensor<T>,
    pub heat: Tensor<T>,
}

pub struct SaganCache<T> {
    pub x: Tensor<T>,
    pub xp: Tensor<T>,
    pub pool: usize,
    pub q_map: Tensor<T>,
    pub k_map: Tensor<T>,
    pub v_map: Tensor<T>,
    /// Row-stochastic attention, `[n,1,nq,np]`.
    pub att: Tensor<T>,
    /// Pre-γ aggregated values, `[n,c,h,w]`.
    pub o: Tensor<T>,
    pub norm: Option<AttnNorm<T>>,
}

pub struct LiteralCache<T> {
    pub x: Tensor<T>,
    pub f_map: Tensor<T>,
    pub g_map: Tensor<T>,
    pub h_map: Tensor<T>,
    /// Channel-stochastic weights `[n,c,h,w]` (softmax over c per pixel).
    pub a: Tensor<T>,
    pub norm: Option<AttnNorm<T>>,
}

pub enum AttnCache<T> {
    Sagan(SaganCache<T>),
    Literal(LiteralCache<T>),
}

impl<T: Elem> SelfAttention<T> {
    /// `channels` is C of the feature map the layer sits on.
    pub fn new(channels: usize, mode: AttentionMode, kv_cap: usize) -> Self {
        let qk = match mode {
            AttentionMode::Sagan => (channels / 8).max(1),
            AttentionMode::Literal => channels,
        };
        SelfAttention {
            q: Conv2d::new(channels, qk, 1, 1, 0),
            k: Conv2d::new(channels, qk, 1, 1, 0),
            v: Conv2d::new(channels, channels, 1, 1, 0),
            gamma: Tensor::zeros([1, 1, 1, 1]),
            mode,
            kv_cap,
            sn: None,
        }
    }

    /// Attach spectral normalization to the three projections.
    pub fn with_spectral<R: Rng>(mut self, rng: &mut R) -> Self {
        let mk = |c: &Conv2d<T>, rng: &mut R| {
            SpectralNorm::new(c.w.shape()[0], c.w.numel() / c.w.shape()[0], rng)
        };
        self.sn = Some([mk(&self.q, rng), mk(&self.k, rng), mk(&self.v, rng)]);
        self
    }

    pub fn warm_up(&mut self) {
        if let Some(sn) = self.sn.as_mut() {
            sn[0].iterate(&self.q.w, 30);
            sn[1].iterate(&self.k.w, 30);
            sn[2].iterate(&self.v.w, 30);
        }
    }

    pub fn channels(&self) -> usize {
        self.v.c_out()
    }

    /// Advance spectral state once and return this step's normalized weights.
    pub fn normalized_for_step(&mut self, iters: usize) -> Option<AttnNorm<T>> {
        let sn = self.sn.as_mut()?;
        sn[0].iterate(&self.q.w, iters);
        sn[1].iterate(&self.k.w, iters);
        sn[2].iterate(&self.v.w, iters);
        Some([
            sn[0].normalized(&self.q.w),
            sn[1].normalized(&self.k.w),
            sn[2].normalized(&self.v.w),
        ])
    }

    pub fn current_normalized(&self) -> Option<AttnNorm<T>> {
        let sn = self.sn.as_ref()?;
        Some([
            sn[0].normalized(&self.q.w),
            sn[1].normalized(&self.k.w),
            sn[2].normalized(&self.v.w),
        ])
    }

    fn weights<'a>(&'a self, norm: &'a Option<AttnNorm<T>>) -> [&'a Tensor<T>; 3] {
        match norm {
            Some(n) => [&n[0].0, &n[1].0, &n[2].0],
            None => [&self.q.w, &self.k.w, &self.v.w],
        }
    }

    /// Pool factor such that (h/f)·(w/f) ≤ cap, halving while dims stay even.
    fn pool_factor(&self, h: usize, w: usize) -> usize {
        let mut f = 1;
        let (mut ph, mut pw) = (h, w);
        while ph * pw > self.kv_cap && ph % 2 == 0 && pw % 2 == 0 {
            f *= 2;
            ph /= 2;
            pw /= 2;
        }
        f
    }

    pub fn forward_train(
        &self,
        x: &Tensor<T>,
        norm: Option<AttnNorm<T>>,
    ) -> (Tensor<T>, AttnCache<T>) {
        match self.mode {
            AttentionMode::Sagan => {
                let (y, c) = self.forward_sagan(x, norm);
                (y, AttnCache::Sagan(c))
            }
            AttentionMode::Literal => {
                let (y, c) = self.forward_literal(x, norm);
                (y, AttnCache::Literal(c))
            }
        }
    }

    fn forward_sagan(&self, x: &Tensor<T>, norm: Option<AttnNorm<T>>) -> (Tensor<T>, SaganCache<T>) {
        let [n, c, h, w] = x.shape();
        let nq = h * w;
        let f = self.pool_factor(h, w);
        let xp = if f > 1 { avg_pool(x, f) } else { x.clone() };
        let [_, _, ph, pw] = xp.shape();
        let np = ph * pw;

        let [wq, wk, wv] = self.weights(&norm);
        let q_map = self.q.forward_with(wq, x);
        let k_map = self.k.forward_with(wk, &xp);
        let v_map = self.v.forward_with(wv, &xp);
        let c8 = q_map.shape()[1];

        let mut att = Tensor::zeros([n, 1, nq, np]);
        let mut o = Tensor::zeros([n, c, h, w]);
        for ni in 0..n {
            // e = qᵀ·k, rows are query positions
            let e = att.image_mut(ni);
            T::gemm_strided(
                nq,
                c8,
                np,
                T::one(),
                q_map.image(ni),
                1,
                nq as isize,
                k_map.image(ni),
                np as isize,
                1,
                T::zero(),
                e,
                np as isize,
                1,
            );
            for row in e.chunks_mut(np) {
                softmax_in_place(row);
            }
            // o = v·attᵀ
            T::gemm_strided(
                c,
                np,
                nq,
                T::one(),
                v_map.image(ni),
                np as isize,
                1,
                att.image(ni),
                1,
                np as isize,
                T::zero(),
                o.image_mut(ni),
                nq as isize,
                1,
            );
        }

        let gamma = self.gamma.data()[0];
        let mut y = x.clone();
        if gamma != T::zero() {
            y.axpy(gamma, &o);
        }
        (
            y,
            SaganCache {
                x: x.clone(),
                xp,
                pool: f,
                q_map,
                k_map,
                v_map,
                att,
                o,
                norm,
            },
        )
    }

    fn forward_literal(
        &self,
        x: &Tensor<T>,
        norm: Option<AttnNorm<T>>,
    ) -> (Tensor<T>, LiteralCache<T>) {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let [wf, wg, wh] = self.weights(&norm);
        let f_map = self.q.forward_with(wf, x);
        let g_map = self.k.forward_with(wg, x);
        let h_map = self.v.forward_with(wh, x);

        // a = softmax over channels of f∘g, per (image, pixel)
        let mut a = Tensor::zeros([n, c, h, w]);
        for ni in 0..n {
            let fi = f_map.image(ni);
            let gi = g_map.image(ni);
            let ai = a.image_mut(ni);
            for p in 0..hw {
                let mut m = T::neg_infinity();
                for ci in 0..c {
                    let s = fi[ci * hw + p] * gi[ci * hw + p];
                    ai[ci * hw + p] = s;
                    if s > m {
                        m = s;
                    }
                }
                let mut sum = T::zero();
                for ci in 0..c {
                    let e = (ai[ci * hw + p] - m).exp();
                    ai[ci * hw + p] = e;
                    sum += e;
                }
                for ci in 0..c {
                    ai[ci * hw + p] /= sum;
                }
            }
        }

        let y_data: Vec<T> = a
            .data()
            .iter()
            .zip(h_map.data())
            .map(|(&av, &hv)| av * hv)
            .collect();
        let y = Tensor::from_vec(x.shape(), y_data);
        (
            y,
            LiteralCache {
                x: x.clone(),
                f_map,
                g_map,
                h_map,
                a,
                norm,
            },
        )
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> AttentionOutput<T> {
        let norm = self.current_normalized();
        match self.mode {
            AttentionMode::Sagan => {
                let (y, cache) = self.forward_sagan(x, norm);
                let [n, _, nq, np] = cache.att.shape();
                let [_, _, ph, pw] = cache.xp.shape();
                let mut heat = Tensor::zeros([n, 1, ph, pw]);
                for ni in 0..n {
                    let att = cache.att.image(ni);
                    let hm = heat.image_mut(ni);
                    for i in 0..nq {
                        for j in 0..np {
                            hm[j] += att[i * np + j];
                        }
                    }
                    let inv = T::from_f(1.0 / nq as f64);
                    hm.iter_mut().for_each(|v| *v *= inv);
                }
                AttentionOutput { y, heat }
            }
            AttentionMode::Literal => {
                let (y, cache) = self.forward_literal(x, norm);
                let [n, c, h, w] = cache.a.shape();
                let hw = h * w;
                let mut heat = Tensor::zeros([n, 1, h, w]);
                for ni in 0..n {
                    let ai = cache.a.image(ni);
                    let hm = heat.image_mut(ni);
                    for p in 0..hw {
                        let mut m = T::zero();
                        for ci in 0..c {
                            if ai[ci * hw + p] > m {
                                m = ai[ci * hw + p];
                            }
                        }
                        hm[p] = m;
                    }
                }
                AttentionOutput { y, heat }
            }
        }
    }

    /// Backward. Projection weight/bias grads and dγ accumulate into the
    /// mirror `grads` (a zero-initialized clone of this layer); spectral
    /// normalization, when present, is already folded in.
    pub fn backward(
        &self,
        cache: &AttnCache<T>,
        dy: &Tensor<T>,
        grads: &mut SelfAttention<T>,
    ) -> Tensor<T> {
        match cache {
            AttnCache::Sagan(c) => self.backward_sagan(c, dy, grads),
            AttnCache::Literal(c) => self.backward_literal(c, dy, grads),
        }
    }

    fn proj_backward(
        proj: &Conv2d<T>,
        wbar_sigma: Option<&(Tensor<T>, T)>,
        sn: Option<&SpectralNorm<T>>,
        x: &Tensor<T>,
        dmap: &Tensor<T>,
        dw: &mut Tensor<T>,
        db: &mut Tensor<T>,
    ) -> Tensor<T> {
        match (wbar_sigma, sn) {
            (Some((wbar, sigma)), Some(s)) => {
                let mut dwbar = Tensor::zeros(proj.w.shape());
                let dx = proj.backward_with(wbar, x, dmap, &mut dwbar, db);
                s.backward(wbar, *sigma, &mut dwbar);
                dw.add_assign(&dwbar);
                dx
            }
            _ => proj.backward_with(&proj.w, x, dmap, dw, db),
        }
    }

    fn backward_sagan(
        &self,
        cache: &SaganCache<T>,
        dy: &Tensor<T>,
        grads: &mut SelfAttention<T>,
    ) -> Tensor<T> {
        let [n, c, h, w] = cache.x.shape();
        let nq = h * w;
        let [_, _, ph, pw] = cache.xp.shape();
        let np = ph * pw;
        let c8 = cache.q_map.shape()[1];
        let gamma = self.gamma.data()[0];

        // y = x + γ·o
        let mut dx = dy.clone();
        let mut dgamma = T::zero();
        for (g, o) in dy.data().iter().zip(cache.o.data()) {
            dgamma += *g * *o;
        }
        grads.gamma.data_mut()[0] += dgamma;

        let mut dq_map = Tensor::zeros(cache.q_map.shape());
        let mut dk_map = Tensor::zeros(cache.k_map.shape());
        let mut dv_map = Tensor::zeros(cache.v_map.shape());
        let mut de = vec![T::zero(); nq * np];
        for ni in 0..n {
            // do = γ·dy (per image view)
            let dyi = dy.image(ni);
            let atti = cache.att.image(ni);
            // dv = do·att : [c][np]
            T::gemm_strided(
                c,
                nq,
                np,
                gamma,
                dyi,
                nq as isize,
                1,
                atti,
                np as isize,
                1,
                T::zero(),
                dv_map.image_mut(ni),
                np as isize,
                1,
            );
            // datt[i,j] = Σ_c do[c,i]·v[c,j] : doᵀ·v
            T::gemm_strided(
                nq,
                c,
                np,
                gamma,
                dyi,
                1,
                nq as isize,
                cache.v_map.image(ni),
                np as isize,
                1,
                T::zero(),
                &mut de,
                np as isize,
                1,
            );
            // softmax backward per row, in place over de
            for (row_a, row_d) in atti.chunks(np).zip(de.chunks_mut(np)) {
                let mut dot = T::zero();
                for (a, d) in row_a.iter().zip(row_d.iter()) {
                    dot += *a * *d;
                }
                for (a, d) in row_a.iter().zip(row_d.iter_mut()) {
                    *d = *a * (*d - dot);
                }
            }
            // dq = k·deᵀ : [c8][nq]
            T::gemm_strided(
                c8,
                np,
                nq,
                T::one(),
                cache.k_map.image(ni),
                np as isize,
                1,
                &de,
                1,
                np as isize,
                T::zero(),
                dq_map.image_mut(ni),
                nq as isize,
                1,
            );
            // dk = q·de : [c8][np]
            T::gemm_strided(
                c8,
                nq,
                np,
                T::one(),
                cache.q_map.image(ni),
                nq as isize,
                1,
                &de,
                np as isize,
                1,
                T::zero(),
                dk_map.image_mut(ni),
                np as isize,
                1,
            );
        }

        // through the projections
        let norms = &cache.norm;
        let sns = self.sn.as_ref();
        let dxq = Self::proj_backward(
            &self.q,
            norms.as_ref().map(|nn| &nn[0]),
            sns.map(|s| &s[0]),
            &cache.x,
            &dq_map,
            &mut grads.q.w,
            &mut grads.q.b,
        );
        let mut dxp = Self::proj_backward(
            &self.k,
            norms.as_ref().map(|nn| &nn[1]),
            sns.map(|s| &s[1]),
            &cache.xp,
            &dk_map,
            &mut grads.k.w,
            &mut grads.k.b,
        );
        let dxv = Self::proj_backward(
            &self.v,
            norms.as_ref().map(|nn| &nn[2]),
            sns.map(|s| &s[2]),
            &cache.xp,
            &dv_map,
            &mut grads.v.w,
            &mut grads.v.b,
        );
        dxp.add_assign(&dxv);

        dx.add_assign(&dxq);
        if cache.pool > 1 {
            dx.add_assign(&avg_pool_backward(&dxp, cache.pool, [n, c, h, w]));
        } else {
            dx.add_assign(&dxp);
        }
        dx
    }

    fn backward_literal(
        &self,
        cache: &LiteralCache<T>,
        dy: &Tensor<T>,
        grads: &mut SelfAttention<T>,
    ) -> Tensor<T> {
        let [n, c, h, w] = cache.x.shape();
        let hw = h * w;

        // y = a ∘ h
        let dh_data: Vec<T> = dy
            .data()
            .iter()
            .zip(cache.a.data())
            .map(|(&g, &a)| g * a)
            .collect();
        let dh_map = Tensor::from_vec(cache.x.shape(), dh_data);

        let mut da = Tensor::from_vec(
            cache.x.shape(),
            dy.data()
                .iter()
                .zip(cache.h_map.data())
                .map(|(&g, &hv)| g * hv)
                .collect(),
        );
        // softmax over channels backward, then ds splits into df, dg
        for ni in 0..n {
            let ai = cache.a.image(ni);
            let dai = da.image_mut(ni);
            for p in 0..hw {
                let mut dot = T::zero();
                for ci in 0..c {
                    dot += ai[ci * hw + p] * dai[ci * hw + p];
                }
                for ci in 0..c {
                    let idx = ci * hw + p;
                    dai[idx] = ai[idx] * (dai[idx] - dot);
                }
            }
        }
        let df_data: Vec<T> = da
            .data()
            .iter()
            .zip(cache.g_map.data())
            .map(|(&d, &g)| d * g)
            .collect();
        let dg_data: Vec<T> = da
            .data()
            .iter()
            .zip(cache.f_map.data())
            .map(|(&d, &f)| d * f)
            .collect();
        let df_map = Tensor::from_vec(cache.x.shape(), df_data);
        let dg_map = Tensor::from_vec(cache.x.shape(), dg_data);

        let norms = &cache.norm;
        let sns = self.sn.as_ref();
        let mut dx = Self::proj_backward(
            &self.q,
            norms.as_ref().map(|nn| &nn[0]),
            sns.map(|s| &s[0]),
            &cache.x,
            &df_map,
            &mut grads.q.w,
            &mut grads.q.b,
        );
        let dxg = Self::proj_backward(
            &self.k,
            norms.as_ref().map(|nn| &nn[1]),
            sns.map(|s| &s[1]),
            &cache.x,
            &dg_map,
            &mut grads.k.w,
            &mut grads.k.b,
        );
        let dxh = Self::proj_backward(
            &self.v,
            norms.as_ref().map(|nn| &nn[2]),
            sns.map(|s| &s[2]),
            &cache.x,
            &dh_map,
            &mut grads.v.w,
            &mut grads.v.b,
        );
        dx.add_assign(&dxg);
        dx.add_assign(&dxh);
        dx
    }
}

fn softmax_in_place<T: Elem>(row: &mut [T]) {
    let mut m = T::neg_infinity();
    for v in row.iter() {
        if *v > m {
            m = *v;
        }
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn_tensor(shape: [usize; 4], seed: u64, scale: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(shape);
        crate::nn::init::fill_gaussian(&mut t, scale, &mut rng);
        t
    }

    fn init_attn(mode: AttentionMode, c: usize, seed: u64) -> SelfAttention<f64> {
        let mut sa = SelfAttention::new(c, mode, DEFAULT_KV_CAP);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::nn::init::fill_gaussian(&mut sa.q.w, 0.3, &mut rng);
        crate::nn::init::fill_gaussian(&mut sa.k.w, 0.3, &mut rng);
        crate::nn::init::fill_gaussian(&mut sa.v.w, 0.3, &mut rng);
        sa.gamma = Tensor::scalar(0.7);
        sa
    }

    #[test]
    fn sagan_rows_are_stochastic() {
        let sa = init_attn(AttentionMode::Sagan, 16, 1);
        let x = randn_tensor([2, 16, 6, 6], 2, 1.0);
        let (_, cache) = sa.forward_train(&x, None);
        let AttnCache::Sagan(c) = cache else { panic!() };
        let [n, _, nq, np] = c.att.shape();
        for ni in 0..n {
            for row in c.att.image(ni).chunks(np) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "row sum {}", s);
                assert!(row.iter().all(|&a| a >= 0.0));
            }
            assert_eq!(c.att.image(ni).len(), nq * np);
        }
    }

    #[test]
    fn gamma_zero_passes_input_through_bitwise() {
        let mut sa = init_attn(AttentionMode::Sagan, 8, 3);
        sa.gamma = Tensor::scalar(0.0);
        let x = randn_tensor([1, 8, 5, 5], 4, 2.0);
        let (y, _) = sa.forward_train(&x, None);
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn literal_channel_weights_are_stochastic() {
        let sa = init_attn(AttentionMode::Literal, 6, 5);
        let x = randn_tensor([2, 6, 4, 4], 6, 1.0);
        let (_, cache) = sa.forward_train(&x, None);
        let AttnCache::Literal(c) = cache else { panic!() };
        let [n, ch, h, w] = c.a.shape();
        for ni in 0..n {
            let ai = c.a.image(ni);
            for p in 0..h * w {
                let s: f64 = (0..ch).map(|ci| ai[ci * h * w + p]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooling_kicks_in_above_cap_and_preserves_row_sums() {
        let mut sa = init_attn(AttentionMode::Sagan, 8, 7);
        sa.kv_cap = 16;
        let x = randn_tensor([1, 8, 8, 8], 8, 1.0);
        let (_, cache) = sa.forward_train(&x, None);
        let AttnCache::Sagan(c) = cache else { panic!() };
        assert_eq!(c.pool, 2);
        assert_eq!(c.att.shape(), [1, 1, 64, 16]);
        for row in c.att.image(0).chunks(16) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_heat_map_sums_to_one_per_image() {
        let sa = init_attn(AttentionMode::Sagan, 8, 9);
        let x = randn_tensor([2, 8, 6, 6], 10, 1.0);
        let out = sa.forward_eval(&x);
        for ni in 0..2 {
            let s: f64 = out.heat.image(ni).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "heat mass {}", s);
        }
    }
}
