//! Instances with a per-step feature set, and the bookkeeping of which
//! features have been seen so far.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureSpaceError {
    #[error("feature name must not be empty")]
    EmptyName,
    #[error("duplicate feature id {0} in instance")]
    DuplicateFeature(FeatureId),
    #[error("non-finite value for feature {0}")]
    NonFinite(FeatureId),
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("instance t={got} arrived after t={last}")]
    OutOfOrder { got: u64, last: u64 },
}

/// Dense feature identifier, assigned on first sight by a [`FeatureRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureId(pub u32);

impl FeatureId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for FeatureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Interns feature names into dense ids.
#[derive(Debug, Clone, Default)]
pub struct FeatureRegistry {
    names: Vec<String>,
    ids: HashMap<String, FeatureId>,
}

impl FeatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> Result<FeatureId, FeatureSpaceError> {
        if name.is_empty() {
            return Err(FeatureSpaceError::EmptyName);
        }
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let id = FeatureId(self.names.len() as u32);
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn get(&self, name: &str) -> Option<FeatureId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: FeatureId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One element of a haphazard stream: the features observed at time `t`
/// (sorted by id, unique, finite) and a binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaphazardInstance {
    t: u64,
    features: Vec<(FeatureId, f64)>,
    label: u8,
}

impl HaphazardInstance {
    pub fn new(
        t: u64,
        mut features: Vec<(FeatureId, f64)>,
        label: u8,
    ) -> Result<Self, FeatureSpaceError> {
        if label > 1 {
            return Err(FeatureSpaceError::InvalidLabel(label));
        }
        features.sort_by_key(|&(id, _)| id);
        for w in features.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(FeatureSpaceError::DuplicateFeature(w[0].0));
            }
        }
        if let Some(&(id, _)) = features.iter().find(|(_, v)| !v.is_finite()) {
            return Err(FeatureSpaceError::NonFinite(id));
        }
        Ok(Self { t, features, label })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn features(&self) -> &[(FeatureId, f64)] {
        &self.features
    }

    pub fn ids(&self) -> impl Iterator<Item = FeatureId> + '_ {
        self.features.iter().map(|&(id, _)| id)
    }

    pub fn get(&self, id: FeatureId) -> Option<f64> {
        self.features
            .binary_search_by_key(&id, |&(f, _)| f)
            .ok()
            .map(|i| self.features[i].1)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub first_seen: u64,
    pub last_seen: u64,
    pub observation_count: u64,
}

/// Every feature observed so far, with first/last sighting. Features are
/// never removed: an obsolete feature is one whose `last_seen` is old.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FeatureUniverse {
    records: Vec<Option<FeatureRecord>>,
    total_known: usize,
    last_t: Option<u64>,
}

/// Split of an instance's features into those never seen before and the rest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureDisposition {
    pub sudden: BTreeSet<FeatureId>,
    pub previously_seen: BTreeSet<FeatureId>,
}

impl FeatureUniverse {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total_known(&self) -> usize {
        self.total_known
    }

    pub fn contains(&self, id: FeatureId) -> bool {
        self.record(id).is_some()
    }

    pub fn record(&self, id: FeatureId) -> Option<&FeatureRecord> {
        self.records.get(id.index()).and_then(Option::as_ref)
    }

    /// Known ids in ascending order.
    pub fn known(&self) -> impl Iterator<Item = FeatureId> + '_ {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_some())
            .map(|(i, _)| FeatureId(i as u32))
    }

    pub fn classify(&self, instance: &HaphazardInstance) -> FeatureDisposition {
        let mut out = FeatureDisposition::default();
        for id in instance.ids() {
            if self.contains(id) {
                out.previously_seen.insert(id);
            } else {
                out.sudden.insert(id);
            }
        }
        out
    }

    pub fn absorb(&mut self, instance: &HaphazardInstance) -> Result<(), FeatureSpaceError> {
        let t = instance.t();
        if let Some(last) = self.last_t {
            if t < last {
                return Err(FeatureSpaceError::OutOfOrder { got: t, last });
            }
        }
        self.last_t = Some(t);
        for id in instance.ids() {
            if self.records.len() <= id.index() {
                self.records.resize(id.index() + 1, None);
            }
            match &mut self.records[id.index()] {
                Some(rec) => {
                    rec.last_seen = t;
                    rec.observation_count += 1;
                }
                slot @ None => {
                    *slot = Some(FeatureRecord { first_seen: t, last_seen: t, observation_count: 1 });
                    self.total_known += 1;
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`FeatureUniverse::classify`].
pub fn classify_features(instance: &HaphazardInstance, universe: &FeatureUniverse) -> FeatureDisposition {
    universe.classify(instance)
}
