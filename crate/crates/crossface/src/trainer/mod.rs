//! Alternating-update training loop.
//!
//! Per step: both discriminators update on real/fake batches with the fakes
//! detached, then both generators update jointly on the full objective. One
//! Adam group per network, strict 1:1 alternation, no gradient clipping.
//! The learning rate holds at lr0 for the first half of the run, then decays
//! linearly toward zero over the second half.

mod adam;
mod checkpoint;
mod sampler;

pub use adam::AdamGroup;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use sampler::{load_batch, Batch, PairPool};

use crate::data::catalog::SubjectCatalog;
use crate::data::split::{Protocol, ProtocolSplit};
use crate::error::{Error, Result};
use crate::networks::{Discriminator, Generator, NetworkConfig};
use crate::nn::Tensor;
use crate::objectives::{
    discriminator_loss_backward, feature_losses_backward, generator_gan_backward, l1_backward,
    total_objective, FeatureExtractor, LossRecord, LossWeights,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Run-level knobs. `epochs: None` resolves per protocol (200 for I, 100 for
/// II); the resolved count must be even so decay starts exactly halfway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub protocol: Protocol,
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    /// Literal minimax generator term instead of the non-saturating default.
    pub saturating_gan: bool,
    pub seed: u64,
    pub image_size: usize,
    /// Epochs between checkpoints; a final checkpoint is always written.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            protocol: Protocol::I,
            epochs: None,
            batch_size: 8,
            lr0: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            saturating_gan: false,
            seed: 0,
            image_size: 224,
            checkpoint_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn epoch_count(&self) -> usize {
        self.epochs.unwrap_or(match self.protocol {
            Protocol::I => 200,
            Protocol::II => 100,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.epoch_count();
        if e == 0 || e % 2 != 0 {
            return Err(Error::Config(format!(
                "epoch count must be positive and even, got {e}"
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be at least 1".into()));
        }
        self.weights.validate()
    }
}

/// Scheduled learning rate for an epoch: lr0 through the first half, then
/// lr0 * (epochs - epoch) / (epochs / 2). The last epoch still trains.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    let epochs = cfg.epoch_count();
    if epoch >= epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside a schedule of {epochs}"
        )));
    }
    let half = epochs / 2;
    Ok(if epoch < half {
        cfg.lr0
    } else {
        cfg.lr0 * (epochs - epoch) as f64 / half as f64
    })
}

/// Everything that mutates during a run: the four networks, their Adam
/// groups, and the position in the schedule.
pub struct TrainState {
    pub cfg: TrainConfig,
    pub net_cfg: NetworkConfig,
    /// Visible to thermal.
    pub g_vt: Generator<f32>,
    /// Thermal to visible.
    pub g_tv: Generator<f32>,
    pub d_v: Discriminator<f32>,
    pub d_t: Discriminator<f32>,
    pub opt_g_vt: AdamGroup<f32>,
    pub opt_g_tv: AdamGroup<f32>,
    pub opt_d_v: AdamGroup<f32>,
    pub opt_d_t: AdamGroup<f32>,
    /// Next epoch to run.
    pub epoch: usize,
    /// Steps taken so far across the whole run.
    pub step: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, net_cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut nc = net_cfg.clone();
        nc.image_size = cfg.image_size;
        nc.validate()?;
        let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
        let g_vt = Generator::init(&nc, seeder.gen())?;
        let g_tv = Generator::init(&nc, seeder.gen())?;
        let d_v = Discriminator::init(&nc, seeder.gen())?;
        let d_t = Discriminator::init(&nc, seeder.gen())?;
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.adam_eps);
        let opt_g_vt = AdamGroup::new(&g_vt.params(), b1, b2, eps);
        let opt_g_tv = AdamGroup::new(&g_tv.params(), b1, b2, eps);
        let opt_d_v = AdamGroup::new(&d_v.params(), b1, b2, eps);
        let opt_d_t = AdamGroup::new(&d_t.params(), b1, b2, eps);
        Ok(TrainState {
            cfg: cfg.clone(),
            net_cfg: nc,
            g_vt,
            g_tv,
            d_v,
            d_t,
            opt_g_vt,
            opt_g_tv,
            opt_d_v,
            opt_d_t,
            epoch: 0,
            step: 0,
        })
    }
}

fn first_bad_term(r: &LossRecord) -> String {
    for (name, v) in [
        ("gan_v", r.gan_v),
        ("gan_t", r.gan_t),
        ("cycle", r.cycle),
        ("l1_v", r.l1_v),
        ("l1_t", r.l1_t),
        ("perc_v", r.perc_v),
        ("perc_t", r.perc_t),
        ("id_v", r.id_v),
        ("id_t", r.id_t),
        ("total_d_v", r.total_d_v),
        ("total_d_t", r.total_d_t),
        ("total_g", r.total_g),
    ] {
        if !v.is_finite() {
            return name.to_string();
        }
    }
    "loss".to_string()
}

fn non_finite_param(params: &[(String, &Tensor<f32>)]) -> Option<String> {
    params
        .iter()
        .find(|(_, t)| !t.is_finite())
        .map(|(n, _)| n.clone())
}

/// One optimization step over one batch: D_v, then D_t, then both generators
/// jointly. Returns the loss components measured at this step.
pub fn train_step(
    state: &mut TrainState,
    fx: &FeatureExtractor<f32>,
    batch: &Batch,
) -> Result<LossRecord> {
    let cfg = state.cfg.clone();
    let lr = lr_at(state.epoch, &cfg)?;
    if batch.x_v.shape() != batch.x_t.shape() {
        return Err(Error::Shape(format!(
            "batch sides disagree: {:?} vs {:?}",
            batch.x_v.shape(),
            batch.x_t.shape()
        )));
    }
    let [_, _, h, w] = batch.x_v.shape();
    if h != cfg.image_size || w != cfg.image_size {
        return Err(Error::Shape(format!(
            "batch is {h}x{w} but the run is configured for {}",
            cfg.image_size
        )));
    }

    // Generator forwards; the fakes double as detached discriminator food.
    let (fake_t, cache_vt) = state.g_vt.forward_train(&batch.x_v)?;
    let (fake_v, cache_tv) = state.g_tv.forward_train(&batch.x_t)?;

    // Discriminator updates. begin_step advances each power iteration once
    // and freezes the normalized weights for every forward in this step.
    let total_d_v = {
        let w_d = state.d_v.begin_step();
        let (p_real, c_real) = state.d_v.forward_train(&w_d, &batch.x_v)?;
        let (p_fake, c_fake) = state.d_v.forward_train(&w_d, &fake_v)?;
        let (loss, g_real, g_fake) = discriminator_loss_backward(&p_real, &p_fake);
        let mut grads = state.d_v.zeros_like();
        state.d_v.backward(&c_real, &g_real, &mut grads);
        state.d_v.backward(&c_fake, &g_fake, &mut grads);
        state
            .opt_d_v
            .step(lr, &mut state.d_v.params_mut(), &grads.params())?;
        loss
    };
    let total_d_t = {
        let w_d = state.d_t.begin_step();
        let (p_real, c_real) = state.d_t.forward_train(&w_d, &batch.x_t)?;
        let (p_fake, c_fake) = state.d_t.forward_train(&w_d, &fake_t)?;
        let (loss, g_real, g_fake) = discriminator_loss_backward(&p_real, &p_fake);
        let mut grads = state.d_t.zeros_like();
        state.d_t.backward(&c_real, &g_real, &mut grads);
        state.d_t.backward(&c_fake, &g_fake, &mut grads);
        state
            .opt_d_t
            .step(lr, &mut state.d_t.params_mut(), &grads.params())?;
        loss
    };

    // Generator phase, against the freshly updated discriminators. The
    // adversarial gradient w.r.t. each fake flows back through D; the D
    // gradients from this pass are discarded.
    let (gan_v, mut d_fake_v) = {
        let w_d = state.d_v.current_weights();
        let (p_fake, c_fake) = state.d_v.forward_train(&w_d, &fake_v)?;
        let (loss, g_map) = generator_gan_backward(&p_fake, cfg.saturating_gan);
        let mut sink = state.d_v.zeros_like();
        let dx = state.d_v.backward(&c_fake, &g_map, &mut sink);
        (loss, dx)
    };
    let (gan_t, mut d_fake_t) = {
        let w_d = state.d_t.current_weights();
        let (p_fake, c_fake) = state.d_t.forward_train(&w_d, &fake_t)?;
        let (loss, g_map) = generator_gan_backward(&p_fake, cfg.saturating_gan);
        let mut sink = state.d_t.zeros_like();
        let dx = state.d_t.backward(&c_fake, &g_map, &mut sink);
        (loss, dx)
    };

    // Cycle reconstructions share weights with the first-pass generators.
    let (rec_t, c_rec_t) = state.g_vt.forward_train(&fake_v)?;
    let (rec_v, c_rec_v) = state.g_tv.forward_train(&fake_t)?;
    let (l_cyc_t, d_rec_t) = l1_backward(&rec_t, &batch.x_t)?;
    let (l_cyc_v, d_rec_v) = l1_backward(&rec_v, &batch.x_v)?;
    let cycle = l_cyc_t + l_cyc_v;

    let mut grads_vt = state.g_vt.zeros_like();
    let mut grads_tv = state.g_tv.zeros_like();

    // Cycle backward first: it adds to the gradient each fake receives.
    let d_fake_v_cyc = state.g_vt.backward(&c_rec_t, &d_rec_t, &mut grads_vt);
    let d_fake_t_cyc = state.g_tv.backward(&c_rec_v, &d_rec_v, &mut grads_tv);
    d_fake_v.add_assign(&d_fake_v_cyc);
    d_fake_t.add_assign(&d_fake_t_cyc);

    // Paired pixel and feature terms exist only under supervision.
    let (mut l1_v, mut l1_t) = (0.0, 0.0);
    let (mut perc_v, mut perc_t) = (0.0, 0.0);
    let (mut id_v, mut id_t) = (0.0, 0.0);
    if cfg.weights.supervised {
        let (lv, g_l1) = l1_backward(&fake_v, &batch.x_v)?;
        l1_v = lv;
        d_fake_v.axpy(cfg.weights.lambda_l1 as f32, &g_l1);
        let (lt, g_l1) = l1_backward(&fake_t, &batch.x_t)?;
        l1_t = lt;
        d_fake_t.axpy(cfg.weights.lambda_l1 as f32, &g_l1);
        let (lp, li, g_feat) = feature_losses_backward(
            fx,
            &fake_v,
            &batch.x_v,
            cfg.weights.lambda_p,
            cfg.weights.lambda_i,
        )?;
        perc_v = lp;
        id_v = li;
        d_fake_v.add_assign(&g_feat);
        let (lp, li, g_feat) = feature_losses_backward(
            fx,
            &fake_t,
            &batch.x_t,
            cfg.weights.lambda_p,
            cfg.weights.lambda_i,
        )?;
        perc_t = lp;
        id_t = li;
        d_fake_t.add_assign(&g_feat);
    }

    // Through the source generators, then one joint update.
    state.g_tv.backward(&cache_tv, &d_fake_v, &mut grads_tv);
    state.g_vt.backward(&cache_vt, &d_fake_t, &mut grads_vt);
    state
        .opt_g_vt
        .step(lr, &mut state.g_vt.params_mut(), &grads_vt.params())?;
    state
        .opt_g_tv
        .step(lr, &mut state.g_tv.params_mut(), &grads_tv.params())?;

    let mut rec = LossRecord {
        gan_v,
        gan_t,
        cycle,
        l1_v,
        l1_t,
        perc_v,
        perc_t,
        id_v,
        id_t,
        total_g: 0.0,
        total_d_v,
        total_d_t,
    };
    rec.total_g = total_objective(&rec, &cfg.weights);
    state.step += 1;

    if !rec.is_finite() {
        return Err(Error::Divergence {
            term: first_bad_term(&rec),
            epoch: state.epoch,
            step: state.step,
        });
    }
    for (net, params) in [
        ("g_vt", state.g_vt.params()),
        ("g_tv", state.g_tv.params()),
        ("d_v", state.d_v.params()),
        ("d_t", state.d_t.params()),
    ] {
        if let Some(name) = non_finite_param(&params) {
            return Err(Error::Divergence {
                term: format!("{net}.{name}"),
                epoch: state.epoch,
                step: state.step,
            });
        }
    }
    Ok(rec)
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    /// Global step count at the end of the run.
    pub steps: usize,
    /// Epochs executed by this call (smaller on resume).
    pub epochs_run: usize,
    pub first_epoch_mean_total_g: f64,
    pub last_epoch_mean_total_g: f64,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub consumed_subjects: BTreeSet<String>,
}

const CSV_HEADER: &str =
    "step,epoch,lr,gan_v,gan_t,cycle,l1_v,l1_t,perc_v,perc_t,id_v,id_t,total_g,total_d_v,total_d_t";

/// Full training run. Writes a loss CSV row per step, a checkpoint at every
/// interval boundary inside the run, and a final checkpoint; `resume` picks
/// up from a checkpoint and replays the remaining epochs bit-identically.
pub fn fit(
    cfg: &TrainConfig,
    net_cfg: &NetworkConfig,
    catalog: &SubjectCatalog,
    split: &ProtocolSplit,
    fx: &FeatureExtractor<f32>,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<FitReport> {
    cfg.validate()?;
    if split.protocol != cfg.protocol {
        return Err(Error::Config(format!(
            "config wants protocol {:?} but the split was built for {:?}",
            cfg.protocol, split.protocol
        )));
    }
    let pool = PairPool::build(catalog, split)?;
    if let Some(s) = pool.subjects().iter().find(|s| split.eval_subjects.contains(*s)) {
        return Err(Error::Split(format!(
            "training pool would consume eval subject {s}"
        )));
    }
    let epochs = cfg.epoch_count();
    let steps_per_epoch = pool.len() / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::Config(format!(
            "{} admissible pairs cannot fill a batch of {}",
            pool.len(),
            cfg.batch_size
        )));
    }
    fs::create_dir_all(out_dir)?;

    let mut state = match resume {
        Some(p) => {
            let s = load_checkpoint(p)?;
            if s.cfg != *cfg {
                return Err(Error::Checkpoint(
                    "checkpoint was written under a different train config".into(),
                ));
            }
            s
        }
        None => TrainState::new(cfg, net_cfg)?,
    };

    let csv_path = out_dir.join("losses.csv");
    let mut csv = if resume.is_some() && csv_path.exists() {
        fs::OpenOptions::new().append(true).open(&csv_path)?
    } else {
        let mut f = fs::File::create(&csv_path)?;
        writeln!(f, "{CSV_HEADER}")?;
        f
    };

    let mut checkpoints = Vec::new();
    let mut first_mean = None;
    let mut last_mean = f64::NAN;
    let start_epoch = state.epoch;
    for epoch in start_epoch..epochs {
        state.epoch = epoch;
        let lr = lr_at(epoch, cfg)?;
        let order = pool.epoch_order(cfg.seed, epoch, cfg.weights.supervised);
        let mut sum = 0.0;
        for b in 0..steps_per_epoch {
            let chunk = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let batch = load_batch(catalog, chunk, cfg.image_size)?;
            let r = train_step(&mut state, fx, &batch)?;
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                state.step,
                epoch,
                lr,
                r.gan_v,
                r.gan_t,
                r.cycle,
                r.l1_v,
                r.l1_t,
                r.perc_v,
                r.perc_t,
                r.id_v,
                r.id_t,
                r.total_g,
                r.total_d_v,
                r.total_d_t
            )?;
            sum += r.total_g;
        }
        let mean = sum / steps_per_epoch as f64;
        first_mean.get_or_insert(mean);
        last_mean = mean;
        log::info!("epoch {epoch}: lr {lr:.3e}, mean total_g {mean:.4}");
        state.epoch = epoch + 1;
        if (epoch + 1) % cfg.checkpoint_interval == 0 && epoch + 1 < epochs {
            let p = out_dir.join(format!("ckpt_epoch{:04}.narc", epoch + 1));
            save_checkpoint(&state, &p)?;
            checkpoints.push(p);
        }
    }
    state.epoch = epochs;
    let fin = out_dir.join("ckpt_final.narc");
    save_checkpoint(&state, &fin)?;
    checkpoints.push(fin.clone());
    csv.sync_all()?;

    Ok(FitReport {
        steps: state.step,
        epochs_run: epochs - start_epoch,
        first_epoch_mean_total_g: first_mean.unwrap_or(f64::NAN),
        last_epoch_mean_total_g: last_mean,
        checkpoints,
        final_checkpoint: fin,
        consumed_subjects: pool.subjects().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixture::synth_fixture;
    use crate::objectives::total_objective;
    use std::collections::BTreeSet;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            protocol: Protocol::II,
            epochs: Some(2),
            batch_size: 2,
            image_size: 64,
            checkpoint_interval: 1,
            ..TrainConfig::default()
        }
    }

    fn open_split(catalog: &SubjectCatalog) -> ProtocolSplit {
        ProtocolSplit {
            protocol: Protocol::II,
            trial_seed: 0,
            train_subjects: catalog.subjects(),
            eval_subjects: BTreeSet::new(),
        }
    }

    #[test]
    fn schedule_holds_then_decays_linearly() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = Some(10);
        cfg.lr0 = 1.0;
        for e in 0..5 {
            assert_eq!(lr_at(e, &cfg).unwrap(), 1.0);
        }
        assert!((lr_at(5, &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert!((lr_at(7, &cfg).unwrap() - 0.6).abs() < 1e-12);
        assert!((lr_at(9, &cfg).unwrap() - 0.2).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for e in 0..10 {
            let lr = lr_at(e, &cfg).unwrap();
            assert!(lr <= prev && lr > 0.0);
            prev = lr;
        }
        assert!(lr_at(10, &cfg).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epoch_count(), 200);
        assert_eq!(cfg.batch_size, 8);
        assert!((cfg.lr0 - 2e-4).abs() < 1e-18);
        let mut two = cfg.clone();
        two.protocol = Protocol::II;
        assert_eq!(two.epoch_count(), 100);
        let mut odd = cfg.clone();
        odd.epochs = Some(7);
        assert!(odd.validate().is_err());
        let mut zero_batch = cfg.clone();
        zero_batch.batch_size = 0;
        assert!(zero_batch.validate().is_err());
        // unknown keys must not deserialize
        let bad: std::result::Result<TrainConfig, _> =
            serde_json::from_str("{\"momentum\": 0.9}");
        assert!(bad.is_err());
    }

    #[test]
    fn step_updates_everything_and_reports_consistent_losses() {
        let cat = synth_fixture(2, 1, 64, 21).unwrap();
        let split = open_split(&cat);
        let mut cfg = tiny_cfg();
        cfg.seed = 3;
        let mut state = TrainState::new(&cfg, &NetworkConfig::default()).unwrap();
        let fx = FeatureExtractor::identity();
        let pool = PairPool::build(&cat, &split).unwrap();
        let order = pool.epoch_order(cfg.seed, 0, true);
        let batch = load_batch(&cat, &order[..2], 64).unwrap();

        let before: Vec<f32> = state
            .g_vt
            .params()
            .iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        let r = train_step(&mut state, &fx, &batch).unwrap();
        assert!(r.is_finite());
        assert!((r.total_g - total_objective(&r, &cfg.weights)).abs() < 1e-9);
        assert!(r.l1_v > 0.0 && r.cycle > 0.0);
        assert_eq!(state.step, 1);
        assert_eq!(state.opt_d_v.t, 1);
        assert_eq!(state.opt_g_vt.t, 1);
        let after: Vec<f32> = state
            .g_vt
            .params()
            .iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        assert_ne!(before, after, "generator parameters did not move");
    }

    #[test]
    fn unsupervised_step_drops_paired_terms() {
        let cat = synth_fixture(2, 1, 64, 22).unwrap();
        let split = open_split(&cat);
        let mut cfg = tiny_cfg();
        cfg.weights.supervised = false;
        let mut state = TrainState::new(&cfg, &NetworkConfig::default()).unwrap();
        let fx = FeatureExtractor::identity();
        let pool = PairPool::build(&cat, &split).unwrap();
        let order = pool.epoch_order(cfg.seed, 0, false);
        let batch = load_batch(&cat, &order[..2], 64).unwrap();
        let r = train_step(&mut state, &fx, &batch).unwrap();
        assert_eq!(r.l1_v, 0.0);
        assert_eq!(r.perc_t, 0.0);
        assert_eq!(r.id_v, 0.0);
        assert!((r.total_g - (r.gan_v + r.gan_t + r.cycle)).abs() < 1e-12);
    }

    #[test]
    fn nan_parameter_surfaces_as_divergence() {
        let cat = synth_fixture(2, 1, 64, 23).unwrap();
        let split = open_split(&cat);
        let cfg = tiny_cfg();
        let mut state = TrainState::new(&cfg, &NetworkConfig::default()).unwrap();
        state.g_vt.params_mut()[0].1.data_mut()[0] = f32::NAN;
        let fx = FeatureExtractor::identity();
        let pool = PairPool::build(&cat, &split).unwrap();
        let order = pool.epoch_order(cfg.seed, 0, true);
        let batch = load_batch(&cat, &order[..2], 64).unwrap();
        match train_step(&mut state, &fx, &batch) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let cat = synth_fixture(2, 1, 64, 24).unwrap();
        let split = open_split(&cat);
        let cfg = tiny_cfg();
        let mut state = TrainState::new(&cfg, &NetworkConfig::default()).unwrap();
        let fx = FeatureExtractor::identity();
        let pool = PairPool::build(&cat, &split).unwrap();
        let order = pool.epoch_order(cfg.seed, 0, true);
        let batch = load_batch(&cat, &order[..2], 64).unwrap();
        train_step(&mut state, &fx, &batch).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.narc");
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, state.epoch);
        assert_eq!(loaded.step, state.step);
        assert_eq!(loaded.opt_d_v.t, state.opt_d_v.t);
        for ((an, at), (bn, bt)) in state.g_vt.params().iter().zip(loaded.g_vt.params().iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data(), "param {an} differs");
        }
        for ((an, at), (bn, bt)) in state.d_t.buffers().iter().zip(loaded.d_t.buffers().iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data(), "buffer {an} differs");
        }
        for ((an, at), (bn, bt)) in state
            .opt_g_tv
            .first_moments()
            .iter()
            .zip(loaded.opt_g_tv.first_moments().iter())
        {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data(), "moment {an} differs");
        }
    }

    #[test]
    fn resumed_fit_matches_uninterrupted_fit_bitwise() {
        let cat = synth_fixture(2, 1, 64, 25).unwrap();
        let split = open_split(&cat);
        let mut cfg = tiny_cfg();
        cfg.epochs = Some(4);
        cfg.checkpoint_interval = 2;
        let fx = FeatureExtractor::identity();
        let net = NetworkConfig::default();

        let full_dir = tempfile::tempdir().unwrap();
        let full = fit(&cfg, &net, &cat, &split, &fx, full_dir.path(), None).unwrap();
        assert_eq!(full.steps, 4); // 1 step per epoch (2 pairs / batch 2)
        // interval boundary inside the run plus the final checkpoint
        let names: Vec<String> = full
            .checkpoints
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["ckpt_epoch0002.narc", "ckpt_final.narc"]);
        let csv = std::fs::read_to_string(full_dir.path().join("losses.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);

        let resume_dir = tempfile::tempdir().unwrap();
        let resumed = fit(
            &cfg,
            &net,
            &cat,
            &split,
            &fx,
            resume_dir.path(),
            Some(&full.checkpoints[0]),
        )
        .unwrap();
        assert_eq!(resumed.epochs_run, 2);

        let a = load_checkpoint(&full.final_checkpoint).unwrap();
        let b = load_checkpoint(&resumed.final_checkpoint).unwrap();
        for ((an, at), (bn, bt)) in a.g_vt.params().iter().zip(b.g_vt.params().iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data(), "resume diverged at {an}");
        }
        for ((an, at), (bn, bt)) in a.d_v.params().iter().zip(b.d_v.params().iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data(), "resume diverged at {an}");
        }
        for ((an, at), (bn, bt)) in a.g_tv.buffers().iter().zip(b.g_tv.buffers().iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data(), "resume diverged at buffer {an}");
        }
    }

    #[test]
    fn eval_subjects_never_enter_training() {
        let cat = synth_fixture(2, 1, 64, 26).unwrap();
        let subjects: Vec<String> = cat.subjects().into_iter().collect();
        let split = ProtocolSplit {
            protocol: Protocol::II,
            trial_seed: 0,
            train_subjects: subjects.iter().cloned().collect(),
            eval_subjects: [subjects[0].clone()].into_iter().collect(),
        };
        let cfg = tiny_cfg();
        let fx = FeatureExtractor::identity();
        let dir = tempfile::tempdir().unwrap();
        match fit(
            &cfg,
            &NetworkConfig::default(),
            &cat,
            &split,
            &fx,
            dir.path(),
            None,
        ) {
            Err(Error::Split(msg)) => assert!(msg.contains("eval subject")),
            other => panic!("expected split error, got {:?}", other.map(|_| ())),
        }
    }
}
