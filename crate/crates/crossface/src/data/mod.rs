//! Image I/O, registration, subject catalogs, protocol splits, and the
//! synthetic paired-modality fixture.

pub mod catalog;
pub mod codec;
pub mod fixture;
pub mod geometry;
pub mod split;

pub use catalog::{CatalogEntry, EntrySource, SubjectCatalog};
pub use split::{build_split, Protocol, ProtocolSplit};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    /// Stokes stack (S0, S1, S2), 3 channels.
    Polar,
    /// Single-channel thermal intensity.
    S0,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Visible | Modality::Polar => 3,
            Modality::S0 => 1,
        }
    }

    /// Thermal-side modalities (translation target of the visible domain).
    pub fn is_thermal(self) -> bool {
        !matches!(self, Modality::Visible)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Volume {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
}

/// One registered face image. Pixels are height×width×channels, row-major,
/// every value in [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    pub pixels: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub modality: Modality,
    pub subject_id: String,
    pub range_tag: String,
    pub source_volume: Volume,
}

impl FaceImage {
    pub fn new_zero(
        height: usize,
        width: usize,
        modality: Modality,
        subject_id: &str,
        range_tag: &str,
        source_volume: Volume,
    ) -> Self {
        let channels = modality.channels();
        FaceImage {
            pixels: vec![0.0; height * width * channels],
            height,
            width,
            channels,
            modality,
            subject_id: subject_id.to_string(),
            range_tag: range_tag.to_string(),
            source_volume,
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.height * self.width * self.channels {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer length {} does not match {}x{}x{}",
                self.pixels.len(),
                self.height,
                self.width,
                self.channels
            )));
        }
        if self.channels != self.modality.channels() {
            return Err(Error::InvalidArgument(format!(
                "{:?} image must have {} channels, has {}",
                self.modality,
                self.modality.channels(),
                self.channels
            )));
        }
        if let Some(bad) = self.pixels.iter().find(|p| !(-1.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "pixel {} outside [-1, 1]",
                bad
            )));
        }
        Ok(())
    }

    /// S0 replicated to 3 channels; 3-channel images pass through unchanged.
    pub fn replicated3(&self) -> FaceImage {
        if self.channels == 3 {
            return self.clone();
        }
        let mut out = self.clone();
        out.channels = 3;
        out.pixels = Vec::with_capacity(self.pixels.len() * 3);
        for &p in &self.pixels {
            out.pixels.extend_from_slice(&[p, p, p]);
        }
        out
    }

    /// CHW tensor `[1, 3, h, w]`; S0 is replicated.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let img = self.replicated3();
        let (h, w) = (img.height, img.width);
        let mut data = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[c * h * w + y * w + x] = img.at(y, x, c);
                }
            }
        }
        Tensor::from_vec([1, 3, h, w], data)
    }
}

/// Stack images (all equal size, S0 replicated) into one `[n, 3, h, w]` batch.
pub fn stack_images(images: &[&FaceImage]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::Shape(format!(
                "batch image {}x{} does not match {}x{}",
                img.height, img.width, h, w
            )));
        }
        let t = img.to_tensor();
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_vec([images.len(), 3, h, w], data))
}

/// CHW tensor plane back to a [`FaceImage`] (values clamped to [−1, 1]).
/// S0 collapses the three network channels to one by averaging.
pub fn image_from_tensor(
    t: &Tensor<f32>,
    n: usize,
    modality: Modality,
    subject_id: &str,
    range_tag: &str,
    source_volume: Volume,
) -> FaceImage {
    let [_, c, h, w] = t.shape();
    assert_eq!(c, 3, "network planes are 3-channel");
    let mut img = FaceImage::new_zero(h, w, modality, subject_id, range_tag, source_volume);
    let plane = t.image(n);
    for y in 0..h {
        for x in 0..w {
            match modality {
                Modality::S0 => {
                    let m = (0..3).map(|ci| plane[ci * h * w + y * w + x]).sum::<f32>() / 3.0;
                    img.set(y, x, 0, m.clamp(-1.0, 1.0));
                }
                _ => {
                    for ci in 0..3 {
                        img.set(y, x, ci, plane[ci * h * w + y * w + x].clamp(-1.0, 1.0));
                    }
                }
            }
        }
    }
    img
}
