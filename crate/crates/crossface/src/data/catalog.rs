//! Subject catalogs and their JSON manifest.
//!
//! A manifest is one JSON document:
//! `{ "entries": [ { "subject_id", "modality", "range", "volume", "path",
//! "box": [x0,y0,x1,y1] }, ... ] }` with paths relative to the manifest file.
//! Entries are kept canonically sorted so pairing and iteration order never
//! depend on filesystem enumeration.

use super::codec::decode_image;
use super::geometry::crop_register;
use super::{FaceImage, Modality, Volume};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub enum EntrySource {
    Path(PathBuf),
    Memory(FaceImage),
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub subject_id: String,
    pub modality: Modality,
    pub range_tag: String,
    pub volume: Volume,
    /// [x0, y0, x1, y1], x1/y1 exclusive.
    pub bbox: [u32; 4],
    pub source: EntrySource,
}

impl CatalogEntry {
    fn sort_key(&self) -> (String, u8, String, String) {
        let m = match self.modality {
            Modality::Visible => 0,
            Modality::Polar => 1,
            Modality::S0 => 2,
        };
        let path = match &self.source {
            EntrySource::Path(p) => p.display().to_string(),
            EntrySource::Memory(_) => String::new(),
        };
        (self.subject_id.clone(), m, self.range_tag.clone(), path)
    }

    /// Decode (or copy), then register through the bounding box.
    pub fn load(&self, out_size: usize) -> Result<FaceImage> {
        let mut img = match &self.source {
            EntrySource::Path(p) => {
                let bytes = std::fs::read(p)?;
                decode_image(&bytes, self.modality)?
            }
            EntrySource::Memory(img) => img.clone(),
        };
        img.subject_id = self.subject_id.clone();
        img.range_tag = self.range_tag.clone();
        img.source_volume = self.volume;
        crop_register(&img, self.bbox, out_size)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SubjectCatalog {
    entries: Vec<CatalogEntry>,
}

impl SubjectCatalog {
    /// Build from entries; sorts canonically and validates.
    pub fn new(mut entries: Vec<CatalogEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.sort_key());
        let cat = SubjectCatalog { entries };
        cat.validate()?;
        Ok(cat)
    }

    fn validate(&self) -> Result<()> {
        let mut seen_paths = BTreeSet::new();
        let mut coverage: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
        for e in &self.entries {
            if let EntrySource::Path(p) = &e.source {
                if !seen_paths.insert(p.clone()) {
                    return Err(Error::Catalog(format!("duplicate path {}", p.display())));
                }
            }
            let slot = coverage.entry(e.subject_id.as_str()).or_insert((false, false));
            if e.modality.is_thermal() {
                slot.1 = true;
            } else {
                slot.0 = true;
            }
        }
        for (id, (vis, thm)) in coverage {
            if !vis || !thm {
                return Err(Error::Catalog(format!(
                    "subject {} lacks a {} entry",
                    id,
                    if vis { "thermal" } else { "visible" }
                )));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.subject_id.clone()).collect()
    }

    pub fn subjects_in_volume(&self, vol: Volume) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter(|e| e.volume == vol)
            .map(|e| e.subject_id.clone())
            .collect()
    }

    /// Entries of one subject and modality side, catalog order.
    pub fn entries_of(&self, subject: &str, thermal: bool) -> Vec<&CatalogEntry> {
        self.entries
            .iter()
            .filter(|e| e.subject_id == subject && e.modality.is_thermal() == thermal)
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    subject_id: String,
    modality: Modality,
    range: String,
    volume: Volume,
    path: String,
    #[serde(rename = "box")]
    bbox: [u32; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

/// Read a manifest; paths resolve relative to the manifest's directory.
pub fn load_catalog(manifest_path: &Path) -> Result<SubjectCatalog> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::Catalog(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Catalog(format!("manifest: {e}")))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let entries = manifest
        .entries
        .into_iter()
        .map(|m| CatalogEntry {
            subject_id: m.subject_id,
            modality: m.modality,
            range_tag: m.range,
            volume: m.volume,
            bbox: m.bbox,
            source: EntrySource::Path(base.join(m.path)),
        })
        .collect();
    SubjectCatalog::new(entries)
}

/// Write every in-memory entry as a 16-bit PNG under `dir` plus a manifest,
/// returning the reloaded path-backed catalog.
pub fn write_catalog(catalog: &SubjectCatalog, dir: &Path) -> Result<SubjectCatalog> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest { entries: Vec::new() };
    let mut counters: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for e in catalog.entries() {
        let img = match &e.source {
            EntrySource::Memory(img) => img.clone(),
            EntrySource::Path(p) => {
                let bytes = std::fs::read(p)?;
                decode_image(&bytes, e.modality)?
            }
        };
        let mod_tag = match e.modality {
            Modality::Visible => "visible",
            Modality::Polar => "polar",
            Modality::S0 => "s0",
        };
        let mkey = (e.subject_id.clone(), mod_tag.to_string(), e.range_tag.clone());
        let idx = counters.entry(mkey).or_insert(0);
        let name = format!("{}_{}_{}_{:02}.png", e.subject_id, mod_tag, e.range_tag, idx);
        *idx += 1;
        std::fs::write(dir.join(&name), super::codec::encode_image(&img)?)?;
        manifest.entries.push(ManifestEntry {
            subject_id: e.subject_id.clone(),
            modality: e.modality,
            range: e.range_tag.clone(),
            volume: e.volume,
            path: name,
            bbox: e.bbox,
        });
    }
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    load_catalog(&manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem_entry(subject: &str, modality: Modality, range: &str) -> CatalogEntry {
        let mut img = FaceImage::new_zero(8, 8, modality, subject, range, Volume::I);
        img.pixels.iter_mut().for_each(|p| *p = 0.25);
        CatalogEntry {
            subject_id: subject.into(),
            modality,
            range_tag: range.into(),
            volume: Volume::I,
            bbox: [0, 0, 8, 8],
            source: EntrySource::Memory(img),
        }
    }

    #[test]
    fn missing_modality_side_is_rejected() {
        let err = SubjectCatalog::new(vec![mem_entry("a", Modality::Visible, "R1")]);
        assert!(err.is_err());
        let ok = SubjectCatalog::new(vec![
            mem_entry("a", Modality::Visible, "R1"),
            mem_entry("a", Modality::Polar, "R1"),
        ]);
        assert!(ok.is_ok());
    }

    #[test]
    fn entries_sort_canonically() {
        let cat = SubjectCatalog::new(vec![
            mem_entry("b", Modality::Polar, "R1"),
            mem_entry("b", Modality::Visible, "R2"),
            mem_entry("a", Modality::Polar, "R1"),
            mem_entry("a", Modality::Visible, "R1"),
            mem_entry("b", Modality::Visible, "R1"),
        ]);
        let cat = cat.unwrap();
        let ids: Vec<(String, bool)> = cat
            .entries()
            .iter()
            .map(|e| (e.subject_id.clone(), e.modality.is_thermal()))
            .collect();
        assert_eq!(
            ids,
            vec![
                ("a".into(), false),
                ("a".into(), true),
                ("b".into(), false),
                ("b".into(), false),
                ("b".into(), true),
            ]
        );
    }
}
