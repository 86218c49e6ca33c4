//! Batch assembly from a catalog and a protocol split.
//!
//! The pool pairs the k-th admitted visible image with the k-th admitted
//! thermal image inside each (subject, range) group, in canonical catalog
//! order; leftovers on the longer side are unused. Supervised epochs keep
//! those pairs aligned row by row. Unsupervised epochs reshuffle the thermal
//! column independently, so batches co-sample the two modalities without
//! exposing the pairing.

use crate::data::catalog::SubjectCatalog;
use crate::data::split::ProtocolSplit;
use crate::data::{stack_images, FaceImage, Modality};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// One training batch. Rows of the two tensors are aligned pairs under the
/// supervised objective and independent draws otherwise.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_v: Tensor<f32>,
    pub x_t: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct PairPool {
    /// (visible, thermal) indices into `catalog.entries()`.
    pairs: Vec<(usize, usize)>,
    subjects: BTreeSet<String>,
}

impl PairPool {
    pub fn build(catalog: &SubjectCatalog, split: &ProtocolSplit) -> Result<PairPool> {
        let mut vis: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        let mut thm: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, e) in catalog.entries().iter().enumerate() {
            if !split.admits_for_training(&e.subject_id, &e.range_tag) {
                continue;
            }
            let key = (e.subject_id.clone(), e.range_tag.clone());
            if e.modality == Modality::Visible {
                vis.entry(key).or_default().push(i);
            } else {
                thm.entry(key).or_default().push(i);
            }
        }
        let mut pairs = Vec::new();
        let mut subjects = BTreeSet::new();
        for (key, vids) in &vis {
            if let Some(tids) = thm.get(key) {
                for (a, b) in vids.iter().zip(tids) {
                    pairs.push((*a, *b));
                    subjects.insert(key.0.clone());
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Split(
                "split admits no visible/thermal training pairs".into(),
            ));
        }
        Ok(PairPool { pairs, subjects })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subjects(&self) -> &BTreeSet<String> {
        &self.subjects
    }

    /// Pair order for one epoch, derived only from (seed, epoch) so an
    /// interrupted run replays the exact same batches on resume.
    pub fn epoch_order(&self, seed: u64, epoch: usize, supervised: bool) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch));
        let mut order = self.pairs.clone();
        order.shuffle(&mut rng);
        if !supervised {
            let mut thermal: Vec<usize> = order.iter().map(|p| p.1).collect();
            thermal.shuffle(&mut rng);
            for (p, t) in order.iter_mut().zip(thermal) {
                p.1 = t;
            }
        }
        order
    }
}

pub(crate) fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    (seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0xD1B5_4A32_D192_ED03)
}

/// Decode and stack one batch at the training resolution.
pub fn load_batch(
    catalog: &SubjectCatalog,
    chunk: &[(usize, usize)],
    image_size: usize,
) -> Result<Batch> {
    let entries = catalog.entries();
    let mut vs: Vec<FaceImage> = Vec::with_capacity(chunk.len());
    let mut ts: Vec<FaceImage> = Vec::with_capacity(chunk.len());
    for &(iv, it) in chunk {
        vs.push(entries[iv].load(image_size)?);
        ts.push(entries[it].load(image_size)?);
    }
    let vrefs: Vec<&FaceImage> = vs.iter().collect();
    let trefs: Vec<&FaceImage> = ts.iter().collect();
    Ok(Batch {
        x_v: stack_images(&vrefs)?,
        x_t: stack_images(&trefs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixture::synth_fixture;
    use crate::data::split::Protocol;

    fn open_split(catalog: &SubjectCatalog) -> ProtocolSplit {
        ProtocolSplit {
            protocol: Protocol::II,
            trial_seed: 0,
            train_subjects: catalog.subjects(),
            eval_subjects: BTreeSet::new(),
        }
    }

    #[test]
    fn pool_pairs_every_admitted_image_once() {
        let cat = synth_fixture(3, 2, 32, 11).unwrap();
        let split = open_split(&cat);
        let pool = PairPool::build(&cat, &split).unwrap();
        // 3 subjects x 2 images, each image has one visible and one thermal
        assert_eq!(pool.len(), 6);
        assert_eq!(pool.subjects().len(), 3);
        let entries = cat.entries();
        for &(iv, it) in &pool.pairs {
            assert_eq!(entries[iv].modality, Modality::Visible);
            assert!(entries[it].modality.is_thermal());
            assert_eq!(entries[iv].subject_id, entries[it].subject_id);
            assert_eq!(entries[iv].range_tag, entries[it].range_tag);
        }
    }

    #[test]
    fn range_restriction_filters_the_pool() {
        let cat = synth_fixture(4, 3, 32, 5).unwrap();
        // Volume-I subjects carry ranges R1..R3; a Protocol-I style split
        // admits only R1 for training
        let split = ProtocolSplit {
            protocol: Protocol::I,
            trial_seed: 0,
            train_subjects: cat.subjects_in_volume(crate::data::Volume::I),
            eval_subjects: BTreeSet::new(),
        };
        let pool = PairPool::build(&cat, &split).unwrap();
        let entries = cat.entries();
        assert!(pool
            .pairs
            .iter()
            .all(|&(iv, _)| entries[iv].range_tag == "R1"));
        assert_eq!(pool.len(), 2); // 2 Vol-I subjects x 1 R1 image each
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let cat = synth_fixture(4, 2, 32, 2).unwrap();
        let split = open_split(&cat);
        let pool = PairPool::build(&cat, &split).unwrap();
        let a = pool.epoch_order(7, 3, true);
        let b = pool.epoch_order(7, 3, true);
        let c = pool.epoch_order(7, 4, true);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        let mut base = pool.pairs.clone();
        base.sort_unstable();
        assert_eq!(sorted, base);
    }

    #[test]
    fn unsupervised_order_breaks_alignment_but_keeps_both_columns() {
        let cat = synth_fixture(6, 2, 32, 9).unwrap();
        let split = open_split(&cat);
        let pool = PairPool::build(&cat, &split).unwrap();
        let sup = pool.epoch_order(1, 0, true);
        let unsup = pool.epoch_order(1, 0, false);
        let thermal_sup: BTreeSet<usize> = sup.iter().map(|p| p.1).collect();
        let thermal_unsup: BTreeSet<usize> = unsup.iter().map(|p| p.1).collect();
        assert_eq!(thermal_sup, thermal_unsup);
        let entries = cat.entries();
        let misaligned = unsup
            .iter()
            .filter(|&&(iv, it)| entries[iv].subject_id != entries[it].subject_id)
            .count();
        assert!(misaligned > 0, "independent shuffle left all pairs aligned");
    }

    #[test]
    fn batches_stack_to_the_requested_size() {
        let cat = synth_fixture(2, 1, 64, 3).unwrap();
        let split = open_split(&cat);
        let pool = PairPool::build(&cat, &split).unwrap();
        let order = pool.epoch_order(0, 0, true);
        let batch = load_batch(&cat, &order[..2], 32).unwrap();
        assert_eq!(batch.x_v.shape(), [2, 3, 32, 32]);
        assert_eq!(batch.x_t.shape(), [2, 3, 32, 32]);
    }
}
