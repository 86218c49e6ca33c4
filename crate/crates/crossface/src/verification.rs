//! Cross-spectral verification: synthesize the missing modality, extract
//! features, fuse templates, score every probe/gallery pair with cosine
//! similarity, and sweep ROC curves with multi-trial statistics.
//!
//! Templates are not L2-normalized before fusion; cosine scoring absorbs
//! scale afterward. A flag enables pre-normalization for experiments.

use crate::data::catalog::SubjectCatalog;
use crate::data::split::{build_split, Protocol};
use crate::data::{image_from_tensor, FaceImage, Modality};
use crate::error::{Error, Result};
use crate::networks::Generator;
use crate::objectives::FeatureExtractor;
use crate::trainer::load_checkpoint;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Gallery,
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyMode {
    /// Average of the raw and synthesized-counterpart features.
    Fusion,
    /// Thermal images are replaced by their visible syntheses.
    Polar2Vis,
    /// Visible images are replaced by their thermal syntheses.
    Vis2Polar,
    /// Features of the raw image only; the cross-spectral gap stays.
    Raw,
}

impl VerifyMode {
    pub fn name(self) -> &'static str {
        match self {
            VerifyMode::Fusion => "fusion",
            VerifyMode::Polar2Vis => "polar2vis",
            VerifyMode::Vis2Polar => "vis2polar",
            VerifyMode::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub vector: Vec<f64>,
    pub subject_id: String,
    pub side: Side,
    pub mode: VerifyMode,
}

impl Template {
    /// Rejects non-finite entries and zero-norm vectors at the door.
    pub fn new(vector: Vec<f64>, subject_id: &str, side: Side, mode: VerifyMode) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Verification(format!(
                "template for {subject_id} has non-finite entries"
            )));
        }
        if l2(&vector) == 0.0 {
            return Err(Error::Verification(format!(
                "template for {subject_id} has zero norm"
            )));
        }
        Ok(Template {
            vector,
            subject_id: subject_id.to_string(),
            side,
            mode,
        })
    }

    pub fn with_side(&self, side: Side) -> Template {
        let mut t = self.clone();
        t.side = side;
        t
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Flattened embedding feature of one image.
fn embed_vector(fx: &FeatureExtractor<f32>, img: &FaceImage) -> Result<Vec<f64>> {
    let x = img.to_tensor();
    let f = fx.features(&x)?;
    Ok(f.embed.data().iter().map(|v| *v as f64).collect())
}

/// Template for one image under a verification mode. `x_hat` is the
/// synthesized counterpart in the opposite modality; raw mode and the
/// unimodal half of the conversion modes ignore it.
pub fn build_template(
    fx: &FeatureExtractor<f32>,
    x: &FaceImage,
    x_hat: Option<&FaceImage>,
    mode: VerifyMode,
    side: Side,
    normalize_first: bool,
) -> Result<Template> {
    let mut f = embed_vector(fx, x)?;
    let wants_hat = match mode {
        VerifyMode::Raw => false,
        VerifyMode::Fusion => true,
        VerifyMode::Polar2Vis => x.modality.is_thermal(),
        VerifyMode::Vis2Polar => x.modality == Modality::Visible,
    };
    if wants_hat {
        let hat = x_hat.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} mode needs a synthesized counterpart for a {:?} image",
                mode.name(),
                x.modality
            ))
        })?;
        let mut f_hat = embed_vector(fx, hat)?;
        if f_hat.len() != f.len() {
            return Err(Error::Config(format!(
                "feature widths disagree: {} vs {}",
                f.len(),
                f_hat.len()
            )));
        }
        if normalize_first {
            normalize_in_place(&mut f)?;
            normalize_in_place(&mut f_hat)?;
        }
        match mode {
            VerifyMode::Fusion => {
                for (a, b) in f.iter_mut().zip(&f_hat) {
                    *a = (*a + *b) / 2.0;
                }
            }
            // conversion modes keep only the synthesized side
            _ => f = f_hat,
        }
    } else if normalize_first {
        normalize_in_place(&mut f)?;
    }
    Template::new(f, &x.subject_id, side, mode)
}

fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = l2(v);
    if n == 0.0 {
        return Err(Error::Verification("cannot normalize a zero vector".into()));
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(())
}

pub fn cosine_similarity(a: &Template, b: &Template) -> Result<f64> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::Config(format!(
            "template widths disagree: {} vs {}",
            a.vector.len(),
            b.vector.len()
        )));
    }
    let (na, nb) = (l2(&a.vector), l2(&b.vector));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Verification("degenerate zero-norm template".into()));
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Dense probes x gallery score grid with genuine flags from subject ids.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub n_probes: usize,
    pub n_gallery: usize,
    /// Row-major, probes x gallery.
    pub scores: Vec<f64>,
    pub genuine: Vec<bool>,
}

impl ScoreMatrix {
    pub fn at(&self, p: usize, g: usize) -> f64 {
        self.scores[p * self.n_gallery + g]
    }

    pub fn genuine_at(&self, p: usize, g: usize) -> bool {
        self.genuine[p * self.n_gallery + g]
    }
}

pub fn score_matrix(probes: &[Template], gallery: &[Template]) -> Result<ScoreMatrix> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::InvalidArgument(
            "score matrix needs non-empty probe and gallery lists".into(),
        ));
    }
    let mut scores = Vec::with_capacity(probes.len() * gallery.len());
    let mut genuine = Vec::with_capacity(probes.len() * gallery.len());
    for p in probes {
        for g in gallery {
            scores.push(cosine_similarity(p, g)?);
            genuine.push(p.subject_id == g.subject_id);
        }
    }
    Ok(ScoreMatrix {
        n_probes: probes.len(),
        n_gallery: gallery.len(),
        scores,
        genuine,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocResult {
    /// (false-positive rate, true-positive rate), starting at (0,0) and
    /// ending at (1,1), one point per distinct threshold; monotone in FPR.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub eer: f64,
}

/// ROC sweep over all distinct thresholds. Ties between genuine and impostor
/// scores land on one operating point, so the trapezoid area equals the
/// rank statistic P(genuine > impostor) + 0.5 P(tie). EER solves FPR = FNR
/// linearly between the two bracketing operating points.
pub fn roc_from_labeled(scores: &[f64], genuine: &[bool]) -> Result<RocResult> {
    if scores.len() != genuine.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores with {} labels",
            scores.len(),
            genuine.len()
        )));
    }
    let n_g = genuine.iter().filter(|g| **g).count();
    let n_i = scores.len() - n_g;
    if n_g == 0 || n_i == 0 {
        return Err(Error::Verification(
            "metrics need at least one genuine and one impostor score".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Verification("non-finite score".into()));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(genuine.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_i as f64, tp as f64 / n_g as f64));
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }

    // FPR - FNR is non-decreasing along the sweep, from -1 to +1.
    let mut eer = 1.0;
    for (k, &(f, t)) in points.iter().enumerate() {
        let d = f - (1.0 - t);
        if d == 0.0 {
            eer = f;
            break;
        }
        if d > 0.0 {
            let (f0, t0) = points[k - 1];
            let d0 = f0 - (1.0 - t0);
            let u = -d0 / (d - d0);
            eer = f0 + (f - f0) * u;
            break;
        }
    }

    Ok(RocResult { points, auc, eer })
}

/// Metrics over every entry of the matrix.
pub fn roc_auc_eer(m: &ScoreMatrix) -> Result<RocResult> {
    roc_from_labeled(&m.scores, &m.genuine)
}

#[derive(Debug, Clone)]
pub enum CheckpointSource {
    /// One model evaluated on every trial split.
    Shared(PathBuf),
    /// One independently trained model per trial.
    PerTrial(Vec<PathBuf>),
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub trials: usize,
    /// Trial k builds its split from base_seed + k.
    pub base_seed: u64,
    pub normalize_templates: bool,
    /// Evaluation resolution; overridden by the checkpoint's training size
    /// whenever a checkpoint is loaded.
    pub image_size: usize,
    /// When set, per-trial score and ROC CSVs land here.
    pub out_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            trials: 5,
            base_seed: 0,
            normalize_templates: false,
            image_size: 224,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub auc: f64,
    pub eer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: VerifyMode,
    pub protocol: Protocol,
    pub trials: Vec<TrialMetrics>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub eer_mean: f64,
    pub eer_std: f64,
    /// ROC points per trial, exported as CSV rather than JSON.
    #[serde(skip)]
    pub rocs: Vec<Vec<(f64, f64)>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Synthesize the opposite-modality counterpart of one image, in eval mode.
pub fn synthesize_counterpart(
    g_vt: &Generator<f32>,
    g_tv: &Generator<f32>,
    img: &FaceImage,
) -> Result<FaceImage> {
    let x = img.to_tensor();
    let (gen, out_mod) = if img.modality == Modality::Visible {
        (g_vt, Modality::Polar)
    } else {
        (g_tv, Modality::Visible)
    };
    let y = gen.forward_eval(&x)?;
    Ok(image_from_tensor(
        &y,
        0,
        out_mod,
        &img.subject_id,
        &img.range_tag,
        img.source_volume,
    ))
}

struct EvalItem {
    uid: String,
    template: Template,
}

/// Multi-trial evaluation. Each trial rebuilds the split from its own seed,
/// synthesizes what the mode requires, scores all probe x gallery pairs
/// (the probe and gallery sides both carry every eval image; identical-image
/// pairs are excluded), and sweeps the ROC.
pub fn run_protocol(
    source: &CheckpointSource,
    catalog: &SubjectCatalog,
    protocol: Protocol,
    mode: VerifyMode,
    fx: &FeatureExtractor<f32>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.trials == 0 {
        return Err(Error::InvalidArgument("at least one trial".into()));
    }
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut trials = Vec::with_capacity(opts.trials);
    let mut rocs = Vec::with_capacity(opts.trials);
    for trial in 0..opts.trials {
        let split = build_split(catalog, protocol, opts.base_seed + trial as u64)?;
        let nets = if mode == VerifyMode::Raw {
            None
        } else {
            let path = match source {
                CheckpointSource::Shared(p) => p.clone(),
                CheckpointSource::PerTrial(v) => v
                    .get(trial)
                    .cloned()
                    .ok_or_else(|| {
                        Error::Checkpoint(format!(
                            "trial {trial} has no checkpoint ({} provided)",
                            v.len()
                        ))
                    })?,
            };
            let state = load_checkpoint(&path)?;
            Some((state.g_vt, state.g_tv, state.cfg.image_size))
        };
        let size = nets.as_ref().map(|n| n.2).unwrap_or(opts.image_size);

        let mut items: Vec<EvalItem> = Vec::new();
        for subject in &split.eval_subjects {
            for thermal in [false, true] {
                for (k, entry) in catalog.entries_of(subject, thermal).iter().enumerate() {
                    let img = entry.load(size)?;
                    let needs_hat = match mode {
                        VerifyMode::Raw => false,
                        VerifyMode::Fusion => true,
                        VerifyMode::Polar2Vis => img.modality.is_thermal(),
                        VerifyMode::Vis2Polar => img.modality == Modality::Visible,
                    };
                    let hat = if needs_hat {
                        let (g_vt, g_tv, _) = nets.as_ref().expect("raw mode never synthesizes");
                        Some(synthesize_counterpart(g_vt, g_tv, &img)?)
                    } else {
                        None
                    };
                    let template = build_template(
                        fx,
                        &img,
                        hat.as_ref(),
                        mode,
                        Side::Gallery,
                        opts.normalize_templates,
                    )?;
                    items.push(EvalItem {
                        uid: format!("{}/{:?}/{}#{}", subject, img.modality, entry.range_tag, k),
                        template,
                    });
                }
            }
        }
        if items.len() < 2 {
            return Err(Error::Verification(format!(
                "trial {trial} has only {} eval images",
                items.len()
            )));
        }

        let gallery: Vec<Template> = items.iter().map(|i| i.template.clone()).collect();
        let probes: Vec<Template> = items
            .iter()
            .map(|i| i.template.with_side(Side::Probe))
            .collect();
        let m = score_matrix(&probes, &gallery)?;

        // flatten without self-pairs
        let mut scores = Vec::with_capacity(m.scores.len() - items.len());
        let mut labels = Vec::with_capacity(m.scores.len() - items.len());
        for p in 0..m.n_probes {
            for g in 0..m.n_gallery {
                if items[p].uid == items[g].uid {
                    continue;
                }
                scores.push(m.at(p, g));
                labels.push(m.genuine_at(p, g));
            }
        }
        let roc = roc_from_labeled(&scores, &labels)?;

        if let Some(dir) = &opts.out_dir {
            let probe_ids: Vec<String> = items.iter().map(|i| i.uid.clone()).collect();
            write_scores_csv(
                &dir.join(format!("trial{trial}_scores.csv")),
                &m,
                &probe_ids,
                &probe_ids,
                true,
            )?;
            write_roc_csv(&dir.join(format!("trial{trial}_roc.csv")), &roc.points)?;
        }

        trials.push(TrialMetrics {
            trial,
            auc: roc.auc,
            eer: roc.eer,
        });
        rocs.push(roc.points);
    }

    let (auc_mean, auc_std) = mean_std(&trials.iter().map(|t| t.auc).collect::<Vec<_>>());
    let (eer_mean, eer_std) = mean_std(&trials.iter().map(|t| t.eer).collect::<Vec<_>>());
    Ok(EvalReport {
        mode,
        protocol,
        trials,
        auc_mean,
        auc_std,
        eer_mean,
        eer_std,
        rocs,
    })
}

/// One row per scored pair: probe_id, gallery_id, score, genuine.
pub fn write_scores_csv(
    path: &Path,
    m: &ScoreMatrix,
    probe_ids: &[String],
    gallery_ids: &[String],
    skip_same_id: bool,
) -> Result<()> {
    if probe_ids.len() != m.n_probes || gallery_ids.len() != m.n_gallery {
        return Err(Error::InvalidArgument(format!(
            "id lists ({}, {}) do not match a {}x{} matrix",
            probe_ids.len(),
            gallery_ids.len(),
            m.n_probes,
            m.n_gallery
        )));
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "probe_id,gallery_id,score,genuine")?;
    for p in 0..m.n_probes {
        for g in 0..m.n_gallery {
            if skip_same_id && probe_ids[p] == gallery_ids[g] {
                continue;
            }
            writeln!(
                f,
                "{},{},{},{}",
                probe_ids[p],
                gallery_ids[g],
                m.at(p, g),
                m.genuine_at(p, g)
            )?;
        }
    }
    f.sync_all()?;
    Ok(())
}

pub fn write_roc_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "fpr,tpr")?;
    for (fpr, tpr) in points {
        writeln!(f, "{fpr},{tpr}")?;
    }
    f.sync_all()?;
    Ok(())
}

pub fn write_eval_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    f.sync_all()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixture::synth_fixture;
    use crate::data::Volume;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tpl(v: &[f64], subject: &str) -> Template {
        Template::new(v.to_vec(), subject, Side::Probe, VerifyMode::Raw).unwrap()
    }

    #[test]
    fn cosine_matches_hand_values() {
        let a = tpl(&[1.0, 2.0, 2.0], "a");
        let b = tpl(&[2.0, 1.0, 2.0], "b");
        let s = cosine_similarity(&a, &b).unwrap();
        assert!((s - 8.0 / 9.0).abs() < 1e-12);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let e1 = tpl(&[1.0, 0.0], "a");
        let e2 = tpl(&[0.0, 1.0], "b");
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant() {
        let a = tpl(&[0.3, -1.2, 0.7, 2.0], "a");
        let b = tpl(&[1.1, 0.4, -0.2, 0.9], "b");
        let ab = cosine_similarity(&a, &b).unwrap();
        let ba = cosine_similarity(&b, &a).unwrap();
        assert_eq!(ab, ba);
        let scaled = tpl(&[0.3 * 7.5, -1.2 * 7.5, 0.7 * 7.5, 2.0 * 7.5], "a");
        let s = cosine_similarity(&scaled, &b).unwrap();
        assert!((ab - s).abs() < 1e-12);
    }

    #[test]
    fn degenerate_templates_are_rejected() {
        assert!(Template::new(vec![0.0, 0.0], "z", Side::Probe, VerifyMode::Raw).is_err());
        assert!(Template::new(vec![f64::NAN, 1.0], "z", Side::Probe, VerifyMode::Raw).is_err());
        // bypass the constructor to hit the cosine guard
        let zero = Template {
            vector: vec![0.0, 0.0],
            subject_id: "z".into(),
            side: Side::Probe,
            mode: VerifyMode::Raw,
        };
        let ok = tpl(&[1.0, 1.0], "a");
        assert!(cosine_similarity(&zero, &ok).is_err());
        let short = tpl(&[1.0], "a");
        assert!(cosine_similarity(&short, &ok).is_err());
    }

    fn flat_image(rgb: [f32; 3], modality: Modality, subject: &str) -> FaceImage {
        let mut img = FaceImage::new_zero(16, 16, modality, subject, "R1", Volume::I);
        for y in 0..16 {
            for x in 0..16 {
                for c in 0..3 {
                    img.set(y, x, c, rgb[c]);
                }
            }
        }
        img
    }

    #[test]
    fn fusion_averages_and_is_order_consistent() {
        // identity extractor embeds an image as its channel means
        let fx = FeatureExtractor::identity();
        let x = flat_image([0.1, 0.3, 0.0], Modality::Visible, "s");
        let hat = flat_image([0.3, 0.1, 0.0], Modality::Polar, "s");
        let t = build_template(&fx, &x, Some(&hat), VerifyMode::Fusion, Side::Probe, false)
            .unwrap();
        assert!((t.vector[0] - 0.2).abs() < 1e-6);
        assert!((t.vector[1] - 0.2).abs() < 1e-6);
        // swapping which image is "original" leaves the fusion unchanged
        let swapped =
            build_template(&fx, &hat, Some(&x), VerifyMode::Fusion, Side::Probe, false).unwrap();
        assert_eq!(t.vector, swapped.vector);
        // average of equals is the feature itself
        let same = build_template(&fx, &x, Some(&x), VerifyMode::Fusion, Side::Probe, false)
            .unwrap();
        let raw = build_template(&fx, &x, None, VerifyMode::Raw, Side::Probe, false).unwrap();
        assert_eq!(same.vector, raw.vector);
    }

    #[test]
    fn raw_ignores_the_counterpart_and_conversion_modes_pick_one_side() {
        let fx = FeatureExtractor::identity();
        let vis = flat_image([0.5, 0.25, 0.1], Modality::Visible, "s");
        let thm = flat_image([0.9, 0.05, 0.2], Modality::Polar, "s");
        let r1 = build_template(&fx, &vis, Some(&thm), VerifyMode::Raw, Side::Probe, false)
            .unwrap();
        let r2 = build_template(&fx, &vis, None, VerifyMode::Raw, Side::Probe, false).unwrap();
        assert_eq!(r1.vector, r2.vector);

        // polar2vis: thermal images take the synthesized (visible) feature,
        // visible images stay raw
        let p2v_thermal =
            build_template(&fx, &thm, Some(&vis), VerifyMode::Polar2Vis, Side::Probe, false)
                .unwrap();
        assert_eq!(p2v_thermal.vector, r2.vector);
        let p2v_vis =
            build_template(&fx, &vis, None, VerifyMode::Polar2Vis, Side::Probe, false).unwrap();
        assert_eq!(p2v_vis.vector, r2.vector);

        // vis2polar mirrors it
        let v2p_vis =
            build_template(&fx, &vis, Some(&thm), VerifyMode::Vis2Polar, Side::Probe, false)
                .unwrap();
        let thm_raw =
            build_template(&fx, &thm, None, VerifyMode::Raw, Side::Probe, false).unwrap();
        assert_eq!(v2p_vis.vector, thm_raw.vector);
        // missing counterpart where one is required
        assert!(build_template(&fx, &thm, None, VerifyMode::Fusion, Side::Probe, false).is_err());
    }

    #[test]
    fn score_matrix_shapes_and_labels() {
        let probes: Vec<Template> = (0..3)
            .map(|i| tpl(&[1.0, i as f64 + 0.5], &format!("s{i}")))
            .collect();
        let gallery: Vec<Template> = (0..4)
            .map(|i| tpl(&[0.5, i as f64 + 1.0], &format!("s{}", i % 2)))
            .collect();
        let m = score_matrix(&probes, &gallery).unwrap();
        assert_eq!((m.n_probes, m.n_gallery), (3, 4));
        assert!(m.genuine_at(0, 0) && m.genuine_at(0, 2));
        assert!(!m.genuine_at(2, 0));

        let single = vec![tpl(&[1.0, 2.0], "only"), tpl(&[2.0, 1.0], "only")];
        let m1 = score_matrix(&single, &single).unwrap();
        assert!(m1.genuine.iter().all(|g| *g));

        // 2x2 equals four independent cosine computations
        let a = tpl(&[1.0, 2.0, 2.0], "a");
        let b = tpl(&[2.0, 1.0, 2.0], "b");
        let m2 = score_matrix(&[a.clone(), b.clone()], &[a.clone(), b.clone()]).unwrap();
        for (p, pt) in [&a, &b].iter().enumerate() {
            for (g, gt) in [&a, &b].iter().enumerate() {
                assert_eq!(m2.at(p, g), cosine_similarity(pt, gt).unwrap());
            }
        }
    }

    #[test]
    fn roc_handles_the_worked_examples() {
        let r = roc_from_labeled(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert!((r.auc - 1.0).abs() < 1e-12);
        assert_eq!(r.eer, 0.0);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));

        let r = roc_from_labeled(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-12);
        assert!((r.eer - 0.5).abs() < 1e-12);

        // a pure tie is a coin flip
        let r = roc_from_labeled(&[0.5, 0.5], &[true, false]).unwrap();
        assert!((r.auc - 0.5).abs() < 1e-12);
        assert!((r.eer - 0.5).abs() < 1e-12);

        assert!(roc_from_labeled(&[0.5, 0.6], &[true, true]).is_err());
        assert!(roc_from_labeled(&[0.5, 0.6], &[false, false]).is_err());
    }

    /// Rank statistic: P(genuine > impostor) + 0.5 P(tie), by brute force.
    fn pair_count_auc(scores: &[f64], genuine: &[bool]) -> f64 {
        let g: Vec<f64> = scores
            .iter()
            .zip(genuine)
            .filter(|(_, l)| **l)
            .map(|(s, _)| *s)
            .collect();
        let i: Vec<f64> = scores
            .iter()
            .zip(genuine)
            .filter(|(_, l)| !**l)
            .map(|(s, _)| *s)
            .collect();
        let mut acc = 0.0;
        for a in &g {
            for b in &i {
                acc += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        acc / (g.len() * i.len()) as f64
    }

    #[test]
    fn auc_equals_pair_counting_and_negation_flips_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..25 {
            let n = rng.gen_range(5..60);
            // quantized scores force plenty of ties
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..8) as f64) / 8.0)
                .collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let r = roc_from_labeled(&scores, &labels).unwrap();
            let brute = pair_count_auc(&scores, &labels);
            assert!((r.auc - brute).abs() < 1e-9, "{} vs {brute}", r.auc);
            assert!(r.eer >= 0.0 && r.eer <= 1.0);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let rn = roc_from_labeled(&neg, &labels).unwrap();
            assert!((rn.auc - (1.0 - r.auc)).abs() < 1e-9);
            // rescaling any template leaves scores, hence metrics, unchanged
            let scaled: Vec<f64> = scores.iter().map(|s| *s).collect();
            let rs = roc_from_labeled(&scaled, &labels).unwrap();
            assert_eq!(rs.auc, r.auc);
        }
    }

    #[test]
    fn separation_iff_perfect_metrics() {
        let r = roc_from_labeled(&[0.7, 0.9, 0.3, 0.69], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.eer, 0.0);
        let r = roc_from_labeled(&[0.7, 0.9, 0.3, 0.7], &[true, true, false, false]).unwrap();
        assert!(r.auc < 1.0 && r.eer > 0.0);
    }

    #[test]
    fn raw_protocol_report_is_deterministic_and_well_formed() {
        let cat = synth_fixture(120, 1, 32, 31).unwrap();
        let fx = FeatureExtractor::deterministic(7);
        let opts = EvalOptions {
            trials: 3,
            base_seed: 11,
            image_size: 32,
            ..EvalOptions::default()
        };
        let src = CheckpointSource::Shared(PathBuf::from("/nonexistent"));
        let a = run_protocol(&src, &cat, Protocol::I, VerifyMode::Raw, &fx, &opts).unwrap();
        assert_eq!(a.trials.len(), 3);
        assert_eq!(a.rocs.len(), 3);
        assert!(a.auc_std.is_finite() && a.eer_std.is_finite());
        for t in &a.trials {
            assert!(t.auc >= 0.0 && t.auc <= 1.0);
            assert!(t.eer >= 0.0 && t.eer <= 1.0);
        }
        let b = run_protocol(&src, &cat, Protocol::I, VerifyMode::Raw, &fx, &opts).unwrap();
        for (x, y) in a.trials.iter().zip(b.trials.iter()) {
            assert_eq!(x.auc, y.auc);
            assert_eq!(x.eer, y.eer);
        }
    }

    #[test]
    fn eval_outputs_land_on_disk() {
        let cat = synth_fixture(120, 1, 32, 33).unwrap();
        let fx = FeatureExtractor::deterministic(3);
        let dir = tempfile::tempdir().unwrap();
        let opts = EvalOptions {
            trials: 2,
            image_size: 32,
            out_dir: Some(dir.path().to_path_buf()),
            ..EvalOptions::default()
        };
        let src = CheckpointSource::Shared(PathBuf::from("/nonexistent"));
        let rep = run_protocol(&src, &cat, Protocol::II, VerifyMode::Raw, &fx, &opts).unwrap();
        write_eval_report(&dir.path().join("report.json"), &rep).unwrap();
        for trial in 0..2 {
            let scores =
                std::fs::read_to_string(dir.path().join(format!("trial{trial}_scores.csv")))
                    .unwrap();
            assert!(scores.starts_with("probe_id,gallery_id,score,genuine"));
            assert!(scores.lines().count() > 1);
            let roc = std::fs::read_to_string(dir.path().join(format!("trial{trial}_roc.csv")))
                .unwrap();
            assert!(roc.starts_with("fpr,tpr"));
        }
        let back: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(back["mode"], "raw");
        assert_eq!(back["protocol"], "II");
        assert_eq!(back["trials"].as_array().unwrap().len(), 2);
        assert!(back["auc_mean"].is_number());
    }

    #[test]
    fn per_trial_source_requires_enough_checkpoints() {
        let cat = synth_fixture(120, 1, 32, 35).unwrap();
        let fx = FeatureExtractor::identity();
        let opts = EvalOptions {
            trials: 2,
            image_size: 32,
            ..EvalOptions::default()
        };
        let src = CheckpointSource::PerTrial(vec![]);
        match run_protocol(&src, &cat, Protocol::I, VerifyMode::Fusion, &fx, &opts) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("no checkpoint")),
            other => panic!("expected checkpoint error, got {:?}", other.map(|_| ())),
        }
    }
}
