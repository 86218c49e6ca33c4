//! Protocol splits over a subject catalog.
//!
//! Protocol I: 60 Volume-I subjects split 30 train / 30 eval; training images
//! are restricted to Range 1, evaluation uses every range. Protocol II:
//! training takes all Volume-I subjects plus 25 Volume-II subjects; evaluation
//! takes 26 Volume-II subjects never seen in training. Eval identities are
//! always disjoint from training identities; selection is a deterministic
//! function of the trial seed.

use super::catalog::SubjectCatalog;
use super::Volume;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSplit {
    pub protocol: Protocol,
    pub trial_seed: u64,
    pub train_subjects: BTreeSet<String>,
    pub eval_subjects: BTreeSet<String>,
}

impl ProtocolSplit {
    /// True when this image may enter the training set.
    pub fn admits_for_training(&self, subject_id: &str, range_tag: &str) -> bool {
        self.train_subjects.contains(subject_id)
            && (self.protocol == Protocol::II || range_tag == "R1")
    }
}

pub fn build_split(
    catalog: &SubjectCatalog,
    protocol: Protocol,
    trial_seed: u64,
) -> Result<ProtocolSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let vol1: Vec<String> = catalog.subjects_in_volume(Volume::I).into_iter().collect();
    let vol2: Vec<String> = catalog.subjects_in_volume(Volume::II).into_iter().collect();

    let (train, eval) = match protocol {
        Protocol::I => {
            if vol1.len() < 60 {
                return Err(Error::Split(format!(
                    "Protocol I needs at least 60 Volume-I subjects, catalog has {}",
                    vol1.len()
                )));
            }
            let mut pool = vol1;
            pool.shuffle(&mut rng);
            let train: BTreeSet<String> = pool[..30].iter().cloned().collect();
            let eval: BTreeSet<String> = pool[30..60].iter().cloned().collect();
            (train, eval)
        }
        Protocol::II => {
            let vol1_set: BTreeSet<&String> = vol1.iter().collect();
            // eval candidates must be unseen identities
            let mut pure2: Vec<String> = vol2
                .iter()
                .filter(|s| !vol1_set.contains(s))
                .cloned()
                .collect();
            if vol2.len() < 51 || pure2.len() < 26 {
                return Err(Error::Split(format!(
                    "Protocol II needs 51 Volume-II subjects with 26 unseen identities, \
                     catalog has {} ({} unseen)",
                    vol2.len(),
                    pure2.len()
                )));
            }
            pure2.shuffle(&mut rng);
            let eval: BTreeSet<String> = pure2[..26].iter().cloned().collect();
            let mut train_pool: Vec<String> = vol2
                .iter()
                .filter(|s| !eval.contains(*s))
                .cloned()
                .collect();
            train_pool.shuffle(&mut rng);
            let mut train: BTreeSet<String> = vol1.into_iter().collect();
            train.extend(train_pool.into_iter().take(25));
            (train, eval)
        }
    };

    debug_assert!(train.is_disjoint(&eval));
    Ok(ProtocolSplit {
        protocol,
        trial_seed,
        train_subjects: train,
        eval_subjects: eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixture::synth_fixture;

    #[test]
    fn protocol_one_splits_thirty_thirty() {
        let cat = synth_fixture(120, 1, 32, 99).unwrap();
        let s = build_split(&cat, Protocol::I, 0).unwrap();
        assert_eq!(s.train_subjects.len(), 30);
        assert_eq!(s.eval_subjects.len(), 30);
        assert!(s.train_subjects.is_disjoint(&s.eval_subjects));
    }

    #[test]
    fn protocol_two_eval_is_26_unseen() {
        let cat = synth_fixture(120, 1, 32, 99).unwrap(); // 60 Vol-I + 60 Vol-II
        let s = build_split(&cat, Protocol::II, 3).unwrap();
        assert_eq!(s.eval_subjects.len(), 26);
        let vol1 = cat.subjects_in_volume(Volume::I);
        assert!(s.eval_subjects.iter().all(|e| !vol1.contains(e)));
        assert!(s.train_subjects.is_disjoint(&s.eval_subjects));
        // all of Volume I trains, plus 25 Volume-II subjects
        assert_eq!(s.train_subjects.len(), 60 + 25);
    }

    #[test]
    fn same_seed_same_split_different_seed_differs() {
        let cat = synth_fixture(120, 1, 32, 7).unwrap();
        let a = build_split(&cat, Protocol::I, 5).unwrap();
        let b = build_split(&cat, Protocol::I, 5).unwrap();
        let c = build_split(&cat, Protocol::I, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train_subjects, c.train_subjects);
    }

    #[test]
    fn undersized_catalog_is_a_config_error() {
        let cat = synth_fixture(20, 1, 32, 1).unwrap();
        assert!(build_split(&cat, Protocol::I, 0).is_err());
        assert!(build_split(&cat, Protocol::II, 0).is_err());
    }

    #[test]
    fn protocol_one_training_admits_only_range_one() {
        let cat = synth_fixture(120, 3, 32, 4).unwrap();
        let s = build_split(&cat, Protocol::I, 0).unwrap();
        let subj = s.train_subjects.iter().next().unwrap();
        assert!(s.admits_for_training(subj, "R1"));
        assert!(!s.admits_for_training(subj, "R2"));
        let ev = s.eval_subjects.iter().next().unwrap();
        assert!(!s.admits_for_training(ev, "R1"));
    }
}
