//! Checkpoints hold every mutable training quantity: network parameters,
//! normalization buffers (batch-norm running stats, power-iteration vectors),
//! Adam moments and step counts, and the schedule position. Epoch shuffles
//! are derived from (seed, epoch), so no sampler state needs to be stored;
//! a run resumed from a checkpoint replays bit-identically.

use super::{AdamGroup, TrainConfig, TrainState};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::networks::{Discriminator, Generator, NetworkConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    format: u32,
    epoch: usize,
    step: usize,
    train_config: TrainConfig,
    network_config: NetworkConfig,
    adam_t: BTreeMap<String, u64>,
}

fn push_gen(ar: &mut Archive, prefix: &str, net: &Generator<f32>) -> Result<()> {
    for (n, t) in net.params() {
        ar.push_tensor(&format!("{prefix}.{n}"), t)?;
    }
    for (n, t) in net.buffers() {
        ar.push_tensor(&format!("{prefix}.{n}"), t)?;
    }
    Ok(())
}

fn push_disc(ar: &mut Archive, prefix: &str, net: &Discriminator<f32>) -> Result<()> {
    for (n, t) in net.params() {
        ar.push_tensor(&format!("{prefix}.{n}"), t)?;
    }
    for (n, t) in net.buffers() {
        ar.push_tensor(&format!("{prefix}.{n}"), t)?;
    }
    Ok(())
}

fn push_opt(ar: &mut Archive, prefix: &str, opt: &AdamGroup<f32>) -> Result<()> {
    for (n, t) in opt.first_moments() {
        ar.push_tensor(&format!("adam.{prefix}.m.{n}"), t)?;
    }
    for (n, t) in opt.second_moments() {
        ar.push_tensor(&format!("adam.{prefix}.v.{n}"), t)?;
    }
    Ok(())
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut adam_t = BTreeMap::new();
    adam_t.insert("g_vt".to_string(), state.opt_g_vt.t);
    adam_t.insert("g_tv".to_string(), state.opt_g_tv.t);
    adam_t.insert("d_v".to_string(), state.opt_d_v.t);
    adam_t.insert("d_t".to_string(), state.opt_d_t.t);
    let meta = serde_json::to_value(CheckpointMeta {
        kind: "checkpoint".into(),
        format: CHECKPOINT_FORMAT,
        epoch: state.epoch,
        step: state.step,
        train_config: state.cfg.clone(),
        network_config: state.net_cfg.clone(),
        adam_t,
    })?;
    let mut ar = Archive::new(meta);
    push_gen(&mut ar, "g_vt", &state.g_vt)?;
    push_gen(&mut ar, "g_tv", &state.g_tv)?;
    push_disc(&mut ar, "d_v", &state.d_v)?;
    push_disc(&mut ar, "d_t", &state.d_t)?;
    push_opt(&mut ar, "g_vt", &state.opt_g_vt)?;
    push_opt(&mut ar, "g_tv", &state.opt_g_tv)?;
    push_opt(&mut ar, "d_v", &state.opt_d_v)?;
    push_opt(&mut ar, "d_t", &state.opt_d_t)?;
    ar.write_to(path)
}

fn pull_gen(ar: &Archive, prefix: &str, net: &mut Generator<f32>) -> Result<()> {
    for (n, t) in net.params_mut() {
        ar.read_into(&format!("{prefix}.{n}"), t)?;
    }
    for (n, t) in net.buffers_mut() {
        ar.read_into(&format!("{prefix}.{n}"), t)?;
    }
    Ok(())
}

fn pull_disc(ar: &Archive, prefix: &str, net: &mut Discriminator<f32>) -> Result<()> {
    for (n, t) in net.params_mut() {
        ar.read_into(&format!("{prefix}.{n}"), t)?;
    }
    for (n, t) in net.buffers_mut() {
        ar.read_into(&format!("{prefix}.{n}"), t)?;
    }
    Ok(())
}

fn pull_opt(ar: &Archive, prefix: &str, opt: &mut AdamGroup<f32>, t: u64) -> Result<()> {
    let (m, v) = opt.moments_mut();
    for (n, tens) in m.iter_mut() {
        ar.read_into(&format!("adam.{prefix}.m.{n}"), tens)?;
    }
    for (n, tens) in v.iter_mut() {
        ar.read_into(&format!("adam.{prefix}.v.{n}"), tens)?;
    }
    opt.t = t;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let ar = Archive::read_from(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ar.meta.clone())?;
    if meta.kind != "checkpoint" {
        return Err(Error::Checkpoint(format!(
            "archive holds a {:?}, not a checkpoint",
            meta.kind
        )));
    }
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {}",
            meta.format
        )));
    }
    let mut state = TrainState::new(&meta.train_config, &meta.network_config)?;
    state.epoch = meta.epoch;
    state.step = meta.step;
    pull_gen(&ar, "g_vt", &mut state.g_vt)?;
    pull_gen(&ar, "g_tv", &mut state.g_tv)?;
    pull_disc(&ar, "d_v", &mut state.d_v)?;
    pull_disc(&ar, "d_t", &mut state.d_t)?;
    let need = |k: &str| -> Result<u64> {
        meta.adam_t
            .get(k)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing optimizer step count for {k}")))
    };
    pull_opt(&ar, "g_vt", &mut state.opt_g_vt, need("g_vt")?)?;
    pull_opt(&ar, "g_tv", &mut state.opt_g_tv, need("g_tv")?)?;
    pull_opt(&ar, "d_v", &mut state.opt_d_v, need("d_v")?)?;
    pull_opt(&ar, "d_t", &mut state.opt_d_t, need("d_t")?)?;
    Ok(state)
}
