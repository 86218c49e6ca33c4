//! Deterministic synthetic paired-modality fixture.
//!
//! Each subject is a smooth background plus four Gaussian feature blobs on a
//! jittered grid. Positions, widths, and signed per-channel amplitudes are
//! drawn once per subject and span wide ranges, so inter-subject distance is
//! large compared to the per-image nuisance (brightness shift, uniform pixel
//! noise) drawn per image; identity must survive an imperfect synthesis, not
//! a pixel-perfect one. The pseudo-thermal image is a fixed invertible
//! per-pixel channel transform of its paired pseudo-visible:
//!
//!   t = (0.9·v₀, −1.1·v₁, −0.9·v₂)
//!
//! Two of the three channels are sign-flipped on the thermal side, so naive
//! cross-modal feature comparison anti-correlates while each modality alone
//! stays discriminative; the closed-form inverse recovers the visible image
//! exactly up to float rounding. Gains stay near one in both directions, and
//! amplitudes are budgeted so no value leaves [−1, 1] on either side; nothing
//! is clamped.
//!
//! Determinism: every draw comes from ChaCha streams keyed by (seed, subject
//! index, image index); regenerating with the same arguments is bit-identical.

use super::catalog::{CatalogEntry, EntrySource, SubjectCatalog};
use super::{FaceImage, Modality, Volume};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-channel diagonal of the visible→thermal transform.
pub const THERMAL_DIAG: [f32; 3] = [0.9, -1.1, -0.9];

/// Upper bound on |pixel| of a generated visible image (see amplitude budget).
const VIS_BUDGET: f32 = 0.50;

struct Blob {
    cx: f32,
    cy: f32,
    sigma: f32,
    /// Per-channel amplitudes.
    amp: [f32; 3],
}

struct SubjectModel {
    blobs: Vec<Blob>,
    /// Background wave: amplitude, frequencies, phases.
    bg_amp: f32,
    bg_fx: f32,
    bg_fy: f32,
    bg_px: f32,
    bg_py: f32,
    /// Per-channel background mix.
    bg_mix: [f32; 3],
}

fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + subject as u64);
    rng
}

fn image_rng(seed: u64, subject: usize, image: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 32) + (subject as u64) * 4096 + image as u64);
    rng
}

fn draw_subject(rng: &mut ChaCha8Rng) -> SubjectModel {
    // One blob per grid cell keeps worst-case overlap small; see the
    // amplitude budget note on VIS_BUDGET.
    let blob = |cx0: f32, cy0: f32, rng: &mut ChaCha8Rng| {
        let cx = cx0 + rng.gen_range(-0.10..0.10);
        let cy = cy0 + rng.gen_range(-0.10..0.10);
        let sigma = rng.gen_range(0.04..0.08);
        let base = rng.gen_range(0.12..0.32);
        let signed = |rng: &mut ChaCha8Rng| {
            let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            s * rng.gen_range(0.4..1.0f32)
        };
        let amp = [base * signed(rng), base * signed(rng), base * signed(rng)];
        Blob { cx, cy, sigma, amp }
    };
    let blobs = vec![
        blob(0.30, 0.30, rng),
        blob(0.70, 0.30, rng),
        blob(0.30, 0.70, rng),
        blob(0.70, 0.70, rng),
    ];
    let signed_mix = |rng: &mut ChaCha8Rng| {
        let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        s * rng.gen_range(0.5..1.0f32)
    };
    SubjectModel {
        blobs,
        bg_amp: 0.12,
        bg_fx: rng.gen_range(0.4..3.0),
        bg_fy: rng.gen_range(0.4..3.0),
        bg_px: rng.gen_range(0.0..std::f32::consts::TAU),
        bg_py: rng.gen_range(0.0..std::f32::consts::TAU),
        bg_mix: [signed_mix(rng), signed_mix(rng), signed_mix(rng)],
    }
}

fn render_visible(
    model: &SubjectModel,
    size: usize,
    img_rng: &mut ChaCha8Rng,
    subject_id: &str,
    range_tag: &str,
    volume: Volume,
) -> FaceImage {
    let mut img = FaceImage::new_zero(size, size, Modality::Visible, subject_id, range_tag, volume);
    let shift: [f32; 3] = [
        img_rng.gen_range(-0.05..0.05),
        img_rng.gen_range(-0.05..0.05),
        img_rng.gen_range(-0.05..0.05),
    ];
    let s = size as f32;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f32 / s, y as f32 / s);
            let wave = (std::f32::consts::TAU * model.bg_fx * u + model.bg_px).sin()
                * (std::f32::consts::TAU * model.bg_fy * v + model.bg_py).cos();
            let mut px = [0.0f32; 3];
            for (c, p) in px.iter_mut().enumerate() {
                *p = model.bg_amp * model.bg_mix[c] * wave + shift[c];
            }
            for b in &model.blobs {
                let d2 = (u - b.cx).powi(2) + (v - b.cy).powi(2);
                let g = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                for (c, p) in px.iter_mut().enumerate() {
                    *p += b.amp[c] * g;
                }
            }
            for (c, p) in px.iter_mut().enumerate() {
                *p += img_rng.gen_range(-0.03..0.03);
                debug_assert!(p.abs() <= VIS_BUDGET + 0.11, "budget exceeded: {p}");
                img.set(y, x, c, *p);
            }
        }
    }
    img
}

/// Visible → pseudo-thermal (Stokes-like 3-channel), per-pixel diagonal.
pub fn to_thermal(vis: &FaceImage) -> FaceImage {
    assert_eq!(vis.channels, 3, "thermal transform needs 3 channels");
    let mut out = vis.clone();
    out.modality = Modality::Polar;
    for px in out.pixels.chunks_mut(3) {
        for c in 0..3 {
            px[c] *= THERMAL_DIAG[c];
        }
    }
    out
}

/// Closed-form inverse of [`to_thermal`].
pub fn to_visible(thermal: &FaceImage) -> FaceImage {
    assert_eq!(thermal.channels, 3, "inverse transform needs 3 channels");
    let mut out = thermal.clone();
    out.modality = Modality::Visible;
    for px in out.pixels.chunks_mut(3) {
        for c in 0..3 {
            px[c] /= THERMAL_DIAG[c];
        }
    }
    out
}

/// Generate the fixture catalog fully in memory.
///
/// Subjects `s000..` split into Volume I (first ⌈n/2⌉) and Volume II. Volume-I
/// image ranges cycle R1, R2, R3; Volume II is all R1. Every visible image has
/// a paired thermal entry.
pub fn synth_fixture(
    n_subjects: usize,
    images_per_subject: usize,
    image_size: usize,
    seed: u64,
) -> Result<SubjectCatalog> {
    if n_subjects < 2 {
        return Err(Error::InvalidArgument(format!(
            "fixture needs at least 2 subjects, got {n_subjects}"
        )));
    }
    if image_size < 32 {
        return Err(Error::InvalidArgument(format!(
            "fixture image size must be at least 32, got {image_size}"
        )));
    }
    if images_per_subject == 0 {
        return Err(Error::InvalidArgument("images_per_subject must be positive".into()));
    }

    let vol1_count = n_subjects.div_ceil(2);
    let bbox = [0u32, 0, image_size as u32, image_size as u32];
    let mut entries = Vec::with_capacity(n_subjects * images_per_subject * 2);
    for s in 0..n_subjects {
        let subject_id = format!("s{:03}", s);
        let volume = if s < vol1_count { Volume::I } else { Volume::II };
        let model = draw_subject(&mut subject_rng(seed, s));
        for i in 0..images_per_subject {
            let range_tag = match volume {
                Volume::I => format!("R{}", (i % 3) + 1),
                Volume::II => "R1".to_string(),
            };
            let mut rng = image_rng(seed, s, i);
            let vis = render_visible(&model, image_size, &mut rng, &subject_id, &range_tag, volume);
            vis.validate()?;
            let thm = to_thermal(&vis);
            thm.validate()?;
            entries.push(CatalogEntry {
                subject_id: subject_id.clone(),
                modality: Modality::Visible,
                range_tag: range_tag.clone(),
                volume,
                bbox,
                source: EntrySource::Memory(vis),
            });
            entries.push(CatalogEntry {
                subject_id: subject_id.clone(),
                modality: Modality::Polar,
                range_tag,
                volume,
                bbox,
                source: EntrySource::Memory(thm),
            });
        }
    }
    SubjectCatalog::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_the_request() {
        let cat = synth_fixture(4, 2, 32, 11).unwrap();
        let vis = cat.entries().iter().filter(|e| e.modality == Modality::Visible).count();
        let thm = cat.entries().iter().filter(|e| e.modality == Modality::Polar).count();
        assert_eq!(vis, 8);
        assert_eq!(thm, 8);
        assert_eq!(cat.subjects().len(), 4);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = synth_fixture(3, 2, 32, 42).unwrap();
        let b = synth_fixture(3, 2, 32, 42).unwrap();
        for (ea, eb) in a.entries().iter().zip(b.entries()) {
            let (EntrySource::Memory(ia), EntrySource::Memory(ib)) = (&ea.source, &eb.source)
            else {
                panic!("fixture entries are in-memory")
            };
            assert_eq!(ia.pixels, ib.pixels);
        }
    }

    #[test]
    fn different_seed_changes_pixels() {
        let a = synth_fixture(2, 1, 32, 1).unwrap();
        let b = synth_fixture(2, 1, 32, 2).unwrap();
        let (EntrySource::Memory(ia), EntrySource::Memory(ib)) =
            (&a.entries()[0].source, &b.entries()[0].source)
        else {
            panic!()
        };
        assert_ne!(ia.pixels, ib.pixels);
    }

    #[test]
    fn inverse_transform_recovers_visible() {
        let cat = synth_fixture(3, 1, 32, 9).unwrap();
        for pair in cat.entries().chunks(2) {
            // canonical sort puts the visible entry first within a subject+range
            let (EntrySource::Memory(vis), EntrySource::Memory(thm)) =
                (&pair[0].source, &pair[1].source)
            else {
                panic!()
            };
            assert_eq!(pair[0].modality, Modality::Visible);
            let rec = to_visible(thm);
            for (a, b) in rec.pixels.iter().zip(&vis.pixels) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn no_pixel_leaves_unit_range() {
        let cat = synth_fixture(6, 2, 32, 5).unwrap();
        for e in cat.entries() {
            let EntrySource::Memory(img) = &e.source else { panic!() };
            img.validate().unwrap();
        }
    }

    #[test]
    fn volumes_partition_subjects() {
        let cat = synth_fixture(5, 1, 32, 0).unwrap();
        assert_eq!(cat.subjects_in_volume(Volume::I).len(), 3);
        assert_eq!(cat.subjects_in_volume(Volume::II).len(), 2);
    }
}
