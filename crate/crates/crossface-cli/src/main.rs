use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crossface::config::RunConfig;
use crossface::data::catalog::{load_catalog, write_catalog};
use crossface::data::codec::{decode_image, encode_image};
use crossface::data::fixture::synth_fixture;
use crossface::data::geometry::crop_register;
use crossface::data::{build_split, FaceImage, Modality, Protocol};
use crossface::nn::attention::AttentionMode;
use crossface::trainer::{fit, load_checkpoint, TrainState};
use crossface::verification::{
    build_template, cosine_similarity, run_protocol, synthesize_counterpart, write_eval_report,
    CheckpointSource, EvalOptions, Side, VerifyMode,
};
use crossface::Error;

#[derive(Parser)]
#[command(name = "crossface", version, about = "Cross-spectral face synthesis and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face catalog (16-bit PNGs plus manifest.json)
    Fixtures(FixturesCmd),
    /// Train the translation networks on a catalog
    Train(TrainCmd),
    /// Run one generator over catalog or ad-hoc images and write the syntheses
    Synthesize(SynthesizeCmd),
    /// Score one probe image against one gallery image
    Verify(VerifyCmd),
    /// Multi-trial verification benchmark with ROC/AUC/EER statistics
    Evaluate(EvaluateCmd),
    /// Export generator attention heat maps for a checkpoint and image list
    #[command(name = "attention-maps")]
    AttentionMaps(AttentionMapsCmd),
}

/// Shared flags. Values given here override the config file.
#[derive(Args, Clone)]
struct Overrides {
    /// JSON run configuration
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Catalog manifest.json or the directory holding it
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Split protocol
    #[arg(long, value_parser = parse_protocol, value_name = "1|2")]
    protocol: Option<Protocol>,
    /// Template mode
    #[arg(long, value_parser = parse_mode, value_name = "fusion|polar2vis|vis2polar|raw")]
    mode: Option<VerifyMode>,
    /// Evaluation trial count
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Train without the paired pixel/feature losses
    #[arg(long)]
    unsupervised: bool,
    /// Attention formulation inside the networks
    #[arg(long, value_parser = parse_attention, value_name = "sagan|literal")]
    attention: Option<AttentionMode>,
    /// Square image resolution for training and the networks
    #[arg(long = "image-size", value_name = "N")]
    image_size: Option<usize>,
    /// Record the determinism pledge in the resolved snapshot
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct FixturesCmd {
    #[command(flatten)]
    common: Overrides,
    /// Subjects to synthesize
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    /// Images per subject per modality
    #[arg(long = "images-per-subject", default_value_t = 2)]
    images_per_subject: usize,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    common: Overrides,
    /// Checkpoint to continue from
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SynthesizeCmd {
    #[command(flatten)]
    common: Overrides,
    /// Trained checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// t2v runs thermal inputs through G_tv; v2t runs visible inputs through G_vt
    #[arg(long, value_parser = parse_direction, value_name = "t2v|v2t")]
    direction: Direction,
    /// Explicit input PNGs; without these every catalog image of the source
    /// modality is translated
    #[arg(value_name = "IMAGE")]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct VerifyCmd {
    #[command(flatten)]
    common: Overrides,
    /// Probe image (PNG)
    probe: PathBuf,
    /// Gallery image (PNG)
    gallery: PathBuf,
    /// Modality of the probe image
    #[arg(long = "probe-modality", value_parser = parse_modality, default_value = "polar")]
    probe_modality: Modality,
    /// Modality of the gallery image
    #[arg(long = "gallery-modality", value_parser = parse_modality, default_value = "visible")]
    gallery_modality: Modality,
    /// Trained checkpoint; required unless the mode needs no synthesis
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateCmd {
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args)]
struct AttentionMapsCmd {
    #[command(flatten)]
    common: Overrides,
    /// Trained checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Modality of the input images (picks the generator: visible uses G_vt)
    #[arg(long, value_parser = parse_modality, default_value = "polar")]
    modality: Modality,
    /// Input PNGs
    #[arg(value_name = "IMAGE", required = true)]
    images: Vec<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    T2V,
    V2T,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s {
        "1" | "I" | "i" => Ok(Protocol::I),
        "2" | "II" | "ii" => Ok(Protocol::II),
        other => Err(format!("unknown protocol {other:?}, expected 1 or 2")),
    }
}

fn parse_mode(s: &str) -> Result<VerifyMode, String> {
    match s {
        "fusion" => Ok(VerifyMode::Fusion),
        "polar2vis" => Ok(VerifyMode::Polar2Vis),
        "vis2polar" => Ok(VerifyMode::Vis2Polar),
        "raw" => Ok(VerifyMode::Raw),
        other => Err(format!(
            "unknown mode {other:?}, expected fusion, polar2vis, vis2polar or raw"
        )),
    }
}

fn parse_attention(s: &str) -> Result<AttentionMode, String> {
    match s {
        "sagan" => Ok(AttentionMode::Sagan),
        "literal" => Ok(AttentionMode::Literal),
        other => Err(format!("unknown attention mode {other:?}, expected sagan or literal")),
    }
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    match s {
        "visible" => Ok(Modality::Visible),
        "polar" | "thermal" => Ok(Modality::Polar),
        "s0" => Ok(Modality::S0),
        other => Err(format!("unknown modality {other:?}, expected visible, polar or s0")),
    }
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "t2v" => Ok(Direction::T2V),
        "v2t" => Ok(Direction::V2T),
        other => Err(format!("unknown direction {other:?}, expected t2v or v2t")),
    }
}

/// Config file (when given) merged with flag overrides; flags win.
fn resolve(ov: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = match &ov.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(out) = &ov.out {
        cfg.out_dir = out.clone();
    }
    if let Some(data) = &ov.data {
        cfg.data = data.clone();
    }
    if let Some(seed) = ov.seed {
        cfg.train.seed = seed;
    }
    if let Some(p) = ov.protocol {
        cfg.train.protocol = p;
    }
    if let Some(m) = ov.mode {
        cfg.eval.mode = m;
    }
    if let Some(t) = ov.trials {
        cfg.eval.trials = t;
    }
    if ov.unsupervised {
        cfg.train.weights.supervised = false;
    }
    if let Some(a) = ov.attention {
        cfg.network.attention = a;
    }
    if let Some(s) = ov.image_size {
        cfg.train.image_size = s;
        cfg.network.image_size = s;
    }
    if ov.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

/// Decode a PNG, register it to a square of side `size`, and stamp the file
/// stem as subject id so downstream labels are readable.
fn load_face(path: &Path, modality: Modality, size: usize) -> anyhow::Result<FaceImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let img = decode_image(&bytes, modality)?;
    let full = [0u32, 0, img.width as u32, img.height as u32];
    let mut face = crop_register(&img, full, size)?;
    face.subject_id = stem(path);
    Ok(face)
}

fn run_fixtures(c: FixturesCmd) -> anyhow::Result<()> {
    let cfg = resolve(&c.common)?;
    let dir = c.common.out.clone().unwrap_or_else(|| cfg.data.clone());
    let catalog = synth_fixture(
        c.subjects,
        c.images_per_subject,
        cfg.train.image_size,
        cfg.train.seed,
    )?;
    let written = write_catalog(&catalog, &dir)?;
    cfg.write_snapshot(&dir)?;
    println!(
        "wrote {} images and manifest.json under {}",
        written.entries().len(),
        dir.display()
    );
    Ok(())
}

fn run_train(c: TrainCmd) -> anyhow::Result<()> {
    let cfg = resolve(&c.common)?;
    let catalog = load_catalog(&cfg.manifest_path())?;
    let split = build_split(&catalog, cfg.train.protocol, cfg.train.seed)?;
    let fx = cfg.extractor.build()?;
    cfg.write_snapshot(&cfg.out_dir)?;
    let report = fit(
        &cfg.train,
        &cfg.network,
        &catalog,
        &split,
        &fx,
        &cfg.out_dir,
        c.resume.as_deref(),
    )?;
    fs::write(
        cfg.out_dir.join("fit_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "trained {} epochs ({} steps); final checkpoint {}",
        report.epochs_run,
        report.steps,
        report.final_checkpoint.display()
    );
    Ok(())
}

fn run_synthesize(c: SynthesizeCmd) -> anyhow::Result<()> {
    let cfg = resolve(&c.common)?;
    let state = load_checkpoint(&c.checkpoint)?;
    let size = state.cfg.image_size;
    let source_modality = match c.direction {
        Direction::T2V => Modality::Polar,
        Direction::V2T => Modality::Visible,
    };

    let mut inputs: Vec<FaceImage> = Vec::new();
    if c.images.is_empty() {
        let catalog = load_catalog(&cfg.manifest_path())?;
        for e in catalog.entries() {
            if e.modality.is_thermal() == source_modality.is_thermal() {
                inputs.push(e.load(size)?);
            }
        }
        if inputs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "catalog has no {source_modality:?} images to translate"
            ))
            .into());
        }
    } else {
        for p in &c.images {
            inputs.push(load_face(p, source_modality, size)?);
        }
    }

    let out = cfg.out_dir.join("synth");
    fs::create_dir_all(&out)?;
    cfg.write_snapshot(&cfg.out_dir)?;

    let tag = match c.direction {
        Direction::T2V => "t2v",
        Direction::V2T => "v2t",
    };
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    for img in &inputs {
        let synth = synthesize_counterpart(&state.g_vt, &state.g_tv, img)?;
        let key = if img.range_tag.is_empty() {
            format!("{}_{}", img.subject_id, tag)
        } else {
            format!("{}_{}_{}", img.subject_id, img.range_tag, tag)
        };
        let idx = counters.entry(key.clone()).or_insert(0);
        let name = format!("{key}_{idx:02}.png");
        *idx += 1;
        fs::write(out.join(&name), encode_image(&synth)?)?;
        log::info!("{} -> {}", img.subject_id, name);
    }
    println!("synthesized {} images into {}", inputs.len(), out.display());
    Ok(())
}

/// Synthesis is needed for a template side exactly when the mode replaces or
/// augments that side's raw features.
fn needs_counterpart(mode: VerifyMode, modality: Modality) -> bool {
    match mode {
        VerifyMode::Raw => false,
        VerifyMode::Fusion => true,
        VerifyMode::Polar2Vis => modality.is_thermal(),
        VerifyMode::Vis2Polar => !modality.is_thermal(),
    }
}

fn run_verify(c: VerifyCmd) -> anyhow::Result<()> {
    let cfg = resolve(&c.common)?;
    let mode = cfg.eval.mode;
    let fx = cfg.extractor.build()?;

    let state: Option<TrainState> = if needs_counterpart(mode, c.probe_modality)
        || needs_counterpart(mode, c.gallery_modality)
    {
        let ck = c.checkpoint.as_ref().ok_or_else(|| {
            Error::Config(format!("mode {} needs --checkpoint", mode.name()))
        })?;
        Some(load_checkpoint(ck)?)
    } else {
        None
    };
    let size = state
        .as_ref()
        .map(|s| s.cfg.image_size)
        .unwrap_or(cfg.train.image_size);

    let template_for = |path: &Path, modality: Modality, side: Side| -> anyhow::Result<_> {
        let img = load_face(path, modality, size)?;
        let hat = match &state {
            Some(s) if needs_counterpart(mode, modality) => {
                Some(synthesize_counterpart(&s.g_vt, &s.g_tv, &img)?)
            }
            _ => None,
        };
        Ok(build_template(
            &fx,
            &img,
            hat.as_ref(),
            mode,
            side,
            cfg.eval.normalize_templates,
        )?)
    };
    let probe = template_for(&c.probe, c.probe_modality, Side::Probe)?;
    let gallery = template_for(&c.gallery, c.gallery_modality, Side::Gallery)?;
    let score = cosine_similarity(&probe, &gallery)?;

    fs::create_dir_all(&cfg.out_dir)?;
    cfg.write_snapshot(&cfg.out_dir)?;
    let payload = serde_json::json!({
        "probe": c.probe,
        "gallery": c.gallery,
        "mode": mode.name(),
        "score": score,
    });
    fs::write(
        cfg.out_dir.join("verify.json"),
        serde_json::to_string_pretty(&payload)?,
    )?;
    println!("{payload}");
    Ok(())
}

fn run_evaluate(c: EvaluateCmd) -> anyhow::Result<()> {
    let cfg = resolve(&c.common)?;
    let catalog = load_catalog(&cfg.manifest_path())?;
    let fx = cfg.extractor.build()?;
    fs::create_dir_all(&cfg.out_dir)?;
    cfg.write_snapshot(&cfg.out_dir)?;
    let protocol = cfg.train.protocol;

    let source = if cfg.eval.mode == VerifyMode::Raw {
        // Never read: raw templates come straight from the extractor.
        CheckpointSource::Shared(PathBuf::new())
    } else if let Some(ck) = &cfg.eval.checkpoint {
        CheckpointSource::Shared(ck.clone())
    } else if cfg.eval.retrain_per_trial {
        // Trial k trains on the complement of its own evaluation subjects, so
        // each measurement is leak-free.
        let mut checkpoints = Vec::with_capacity(cfg.eval.trials);
        for trial in 0..cfg.eval.trials {
            let split = build_split(&catalog, protocol, cfg.eval.base_seed + trial as u64)?;
            let mut tc = cfg.train.clone();
            tc.seed = cfg.train.seed.wrapping_add(trial as u64);
            let dir = cfg.out_dir.join(format!("trial{trial}"));
            log::info!("training trial {trial} into {}", dir.display());
            let report = fit(&tc, &cfg.network, &catalog, &split, &fx, &dir, None)?;
            checkpoints.push(report.final_checkpoint);
        }
        CheckpointSource::PerTrial(checkpoints)
    } else {
        // One model trained on the first trial's split and reused everywhere.
        let split = build_split(&catalog, protocol, cfg.eval.base_seed)?;
        let dir = cfg.out_dir.join("shared");
        log::info!("training shared model into {}", dir.display());
        let report = fit(&cfg.train, &cfg.network, &catalog, &split, &fx, &dir, None)?;
        CheckpointSource::Shared(report.final_checkpoint)
    };

    let opts = EvalOptions {
        trials: cfg.eval.trials,
        base_seed: cfg.eval.base_seed,
        normalize_templates: cfg.eval.normalize_templates,
        image_size: cfg.train.image_size,
        out_dir: Some(cfg.out_dir.join("eval")),
    };
    let report = run_protocol(&source, &catalog, protocol, cfg.eval.mode, &fx, &opts)?;
    write_eval_report(&cfg.out_dir.join("eval_report.json"), &report)?;
    println!(
        "{} protocol {:?} over {} trials: AUC {:.4} ± {:.4}, EER {:.4} ± {:.4}",
        report.mode.name(),
        report.protocol,
        report.trials.len(),
        report.auc_mean,
        report.auc_std,
        report.eer_mean,
        report.eer_std
    );
    Ok(())
}

fn run_attention_maps(c: AttentionMapsCmd) -> anyhow::Result<()> {
    let cfg = resolve(&c.common)?;
    let state = load_checkpoint(&c.checkpoint)?;
    let size = state.cfg.image_size;
    let out = cfg.out_dir.join("attention");
    fs::create_dir_all(&out)?;
    cfg.write_snapshot(&cfg.out_dir)?;

    let generator = if c.modality.is_thermal() {
        &state.g_tv
    } else {
        &state.g_vt
    };
    for p in &c.images {
        let img = load_face(p, c.modality, size)?;
        let heat = generator.attention_map(&img.to_tensor())?;
        let [_, _, ph, pw] = heat.shape();
        let max = heat
            .data()
            .iter()
            .cloned()
            .fold(0.0f32, f32::max)
            .max(1e-12);
        // Grayscale heat map: 0 stays black, the strongest response is white.
        let mut map =
            FaceImage::new_zero(ph, pw, Modality::S0, &img.subject_id, &img.range_tag, img.source_volume);
        for y in 0..ph {
            for x in 0..pw {
                map.set(y, x, 0, (heat.data()[y * pw + x] / max) * 2.0 - 1.0);
            }
        }
        let name = format!("attn_{}.png", stem(p));
        fs::write(out.join(&name), encode_image(&map)?)?;
        println!("{} -> {} ({}x{} grid)", p.display(), name, ph, pw);
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fixtures(c) => run_fixtures(c),
        Command::Train(c) => run_train(c),
        Command::Synthesize(c) => run_synthesize(c),
        Command::Verify(c) => run_verify(c),
        Command::Evaluate(c) => run_evaluate(c),
        Command::AttentionMaps(c) => run_attention_maps(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map(|err| err.exit_code()).unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
