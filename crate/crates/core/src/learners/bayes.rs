//! NB3 (naive Bayes with χ² feature selection) and FAE (an ensemble of
//! naive Bayes learners that are spawned and retired as the feature space
//! drifts).
//!
//! Features are numeric, so per-class likelihoods are Gaussian with running
//! moments. The χ² ranking scores each feature on its presence/class
//! contingency table, which is where the varying feature space shows up.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{LearnerError, OnlineLearner, Prediction};
use crate::feature_space::{FeatureId, HaphazardInstance};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;
/// Lower clamp on a single log-likelihood term so posteriors stay finite.
const MIN_LOG_TERM: f64 = -1e100;

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / self.count as f64)
    }

    fn merge(&self, other: &Moments) -> Moments {
        let count = self.count + other.count;
        if count == 0 {
            return Moments::default();
        }
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.count as f64 / count as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.count as f64 * other.count as f64) / count as f64;
        Moments { count, mean, m2 }
    }
}

/// Per-class instance counts and per-feature, per-class moments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureClassStats {
    pub class_counts: [u64; 2],
    pub features: BTreeMap<FeatureId, [Moments; 2]>,
}

impl FeatureClassStats {
    pub fn n(&self) -> u64 {
        self.class_counts[0] + self.class_counts[1]
    }

    /// Absorb one labelled instance; features outside `keep` are ignored.
    pub fn absorb(&mut self, x: &HaphazardInstance, label: u8, keep: Option<&BTreeSet<FeatureId>>) {
        let c = usize::from(label);
        self.class_counts[c] += 1;
        for &(id, v) in x.features() {
            if keep.is_some_and(|k| !k.contains(&id)) {
                continue;
            }
            self.features.entry(id).or_default()[c].push(v);
        }
    }

    pub fn log_prior(&self, class: usize) -> f64 {
        ((self.class_counts[class] + 1) as f64 / (self.n() + 2) as f64).ln()
    }

    /// Log-likelihood of observing `feature` with value `v` under `class`:
    /// smoothed presence rate times a Gaussian density. A class with too few
    /// observations borrows the pooled mean or variance.
    pub fn log_likelihood(&self, feature: FeatureId, v: f64, class: usize, var_floor: f64) -> Option<f64> {
        let m = self.features.get(&feature)?;
        let own = &m[class];
        let pooled = m[0].merge(&m[1]);
        let mean = if own.count >= 1 { own.mean } else { pooled.mean };
        let var = own.variance().or_else(|| pooled.variance()).unwrap_or(1.0).max(var_floor);
        let presence = ((own.count + 1) as f64 / (self.class_counts[class] + 2) as f64).ln();
        let ll = presence - 0.5 * (LOG_2PI + var.ln()) - (v - mean).powi(2) / (2.0 * var);
        Some(if ll.is_finite() { ll.max(MIN_LOG_TERM) } else { MIN_LOG_TERM })
    }

    /// Times `feature` was observed with each class.
    pub fn presence(&self, feature: FeatureId) -> [u64; 2] {
        self.features.get(&feature).map_or([0, 0], |m| [m[0].count, m[1].count])
    }
}

/// χ² statistic of the 2×2 (observed / not observed) × (class 0 / class 1)
/// table with one added to every cell. Zero for a feature never observed.
pub fn chi2_score(stats: &FeatureClassStats, feature: FeatureId) -> f64 {
    let seen = stats.presence(feature);
    if seen == [0, 0] {
        return 0.0;
    }
    let cells = [
        [seen[0] as f64 + 1.0, seen[1] as f64 + 1.0],
        [
            (stats.class_counts[0] - seen[0]) as f64 + 1.0,
            (stats.class_counts[1] - seen[1]) as f64 + 1.0,
        ],
    ];
    let total: f64 = cells.iter().flatten().sum();
    let rows = [cells[0][0] + cells[0][1], cells[1][0] + cells[1][1]];
    let cols = [cells[0][0] + cells[1][0], cells[0][1] + cells[1][1]];
    let mut chi2 = 0.0;
    for (i, row) in cells.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            chi2 += (o - e).powi(2) / e;
        }
    }
    chi2
}

/// The top `ceil(fraction * known)` features by χ², ties to the lower id.
pub fn top_features(stats: &FeatureClassStats, fraction: f64) -> BTreeSet<FeatureId> {
    let known = stats.features.len();
    let k = ((fraction * known as f64).ceil() as usize).min(known);
    if k == known {
        return stats.features.keys().copied().collect();
    }
    let mut scored: Vec<(f64, FeatureId)> =
        stats.features.keys().map(|&id| (chi2_score(stats, id), id)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

fn naive_bayes(
    stats: &FeatureClassStats,
    x: &HaphazardInstance,
    selected: Option<&BTreeSet<FeatureId>>,
    var_floor: f64,
) -> Prediction {
    let mut lp = [stats.log_prior(0), stats.log_prior(1)];
    for &(id, v) in x.features() {
        if selected.is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        for (c, slot) in lp.iter_mut().enumerate() {
            if let Some(ll) = stats.log_likelihood(id, v, c, var_floor) {
                *slot += ll;
            }
        }
    }
    let score = super::logistic(lp[1] - lp[0]);
    Prediction { class: u8::from(lp[1] > lp[0]), score }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Nb3Config {
    /// Fraction of known features kept after χ² ranking.
    pub n: f64,
    pub var_floor: f64,
}

impl Default for Nb3Config {
    fn default() -> Self {
        Self { n: 1.0, var_floor: 1e-6 }
    }
}

impl Nb3Config {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.n > 0.0 && self.n <= 1.0) {
            return Err(LearnerError::Config(format!("nb3.n must be in (0, 1], got {}", self.n)));
        }
        Ok(())
    }
}

/// Single naive Bayes learner over the χ²-selected top features. The first
/// instance it sees serves as its (single-instance) pretraining.
#[derive(Debug, Clone)]
pub struct Nb3 {
    cfg: Nb3Config,
    stats: FeatureClassStats,
    pretrained: bool,
}

impl Nb3 {
    pub fn new(cfg: Nb3Config) -> Result<Self, LearnerError> {
        cfg.validate()?;
        Ok(Self { cfg, stats: FeatureClassStats::default(), pretrained: false })
    }

    pub fn stats(&self) -> &FeatureClassStats {
        &self.stats
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn selected(&self) -> BTreeSet<FeatureId> {
        top_features(&self.stats, self.cfg.n)
    }
}

impl OnlineLearner for Nb3 {
    fn name(&self) -> &'static str {
        "nb3"
    }

    fn predict(&mut self, x: &HaphazardInstance) -> Prediction {
        let selected = (self.cfg.n < 1.0).then(|| self.selected());
        naive_bayes(&self.stats, x, selected.as_ref(), self.cfg.var_floor)
    }

    fn update(&mut self, x: &HaphazardInstance, label: u8) -> Result<(), LearnerError> {
        self.stats.absorb(x, label, None);
        self.pretrained = true;
        Ok(())
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct FaeConfig {
    /// Age (in instances) before a learner's vote counts.
    pub m: usize,
    /// Jaccard distance between the youngest learner's features and the
    /// current top features above which a new learner is spawned.
    pub f: f64,
    /// Consecutive under-threshold instances before a learner is removed.
    pub p: usize,
    /// Minimum instances between two spawns.
    pub r: usize,
    /// Rolling accuracy window.
    pub N: usize,
    /// Fraction of known features a new learner is trained on.
    pub M: f64,
    pub var_floor: f64,
}

impl Default for FaeConfig {
    fn default() -> Self {
        Self { m: 5, f: 0.15, p: 3, r: 10, N: 50, M: 1.0, var_floor: 1e-6 }
    }
}

impl FaeConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.M > 0.0 && self.M <= 1.0) {
            return Err(LearnerError::Config(format!("fae.M must be in (0, 1], got {}", self.M)));
        }
        if self.N == 0 || self.p == 0 {
            return Err(LearnerError::Config("fae.N and fae.p must be positive".into()));
        }
        if self.f.is_nan() || self.f < 0.0 {
            return Err(LearnerError::Config("fae.f must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct FaeMember {
    stats: FeatureClassStats,
    features: BTreeSet<FeatureId>,
    age: u64,
    hits: VecDeque<bool>,
    below: usize,
    last: Option<Prediction>,
}

impl FaeMember {
    fn new(features: BTreeSet<FeatureId>) -> Self {
        Self { stats: FeatureClassStats::default(), features, age: 0, hits: VecDeque::new(), below: 0, last: None }
    }

    fn accuracy(&self) -> f64 {
        if self.hits.is_empty() {
            0.0
        } else {
            self.hits.iter().filter(|&&h| h).count() as f64 / self.hits.len() as f64
        }
    }
}

fn jaccard_distance(a: &BTreeSet<FeatureId>, b: &BTreeSet<FeatureId>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

/// Feature Adaptive Ensemble: members are naive Bayes learners over fixed
/// feature subsets; votes are weighted by rolling accuracy.
#[derive(Debug, Clone)]
pub struct Fae {
    cfg: FaeConfig,
    global: FeatureClassStats,
    members: Vec<FaeMember>,
    seen: u64,
    last_spawn: u64,
    ensemble_hits: VecDeque<bool>,
    last: Option<Prediction>,
    spawn_log: Vec<u64>,
}

impl Fae {
    pub fn new(cfg: FaeConfig) -> Result<Self, LearnerError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            global: FeatureClassStats::default(),
            members: Vec::new(),
            seen: 0,
            last_spawn: 0,
            ensemble_hits: VecDeque::new(),
            last: None,
            spawn_log: Vec::new(),
        })
    }

    pub fn learner_count(&self) -> usize {
        self.members.len()
    }

    /// Instance counts (number of instances seen) at which members were spawned.
    pub fn spawn_log(&self) -> &[u64] {
        &self.spawn_log
    }

    fn push_window(window: &mut VecDeque<bool>, hit: bool, cap: usize) {
        window.push_back(hit);
        while window.len() > cap {
            window.pop_front();
        }
    }

    fn spawn(&mut self, features: BTreeSet<FeatureId>) {
        self.members.push(FaeMember::new(features));
        self.last_spawn = self.seen;
        self.spawn_log.push(self.seen);
    }
}

impl OnlineLearner for Fae {
    fn name(&self) -> &'static str {
        "fae"
    }

    fn predict(&mut self, x: &HaphazardInstance) -> Prediction {
        let floor = self.cfg.var_floor;
        for m in &mut self.members {
            m.last = Some(naive_bayes(&m.stats, x, Some(&m.features), floor));
        }
        let pred = if self.members.is_empty() {
            naive_bayes(&self.global, x, None, floor)
        } else {
            let m_age = self.cfg.m as u64;
            let mut votes = [0.0f64; 2];
            for m in self.members.iter().filter(|m| m.age >= m_age) {
                let p = m.last.expect("set above");
                votes[usize::from(p.class)] += m.accuracy();
            }
            if votes[0].max(votes[1]) > 0.0 {
                Prediction { class: u8::from(votes[1] > votes[0]), score: votes[1] / (votes[0] + votes[1]) }
            } else {
                // nobody has a positive weight yet: oldest eligible, else oldest
                let pick = self.members.iter().find(|m| m.age >= m_age).unwrap_or(&self.members[0]);
                pick.last.expect("set above")
            }
        };
        self.last = Some(pred);
        pred
    }

    fn update(&mut self, x: &HaphazardInstance, label: u8) -> Result<(), LearnerError> {
        let pred = self
            .last
            .take()
            .ok_or_else(|| LearnerError::Protocol("fae update without prediction".into()))?;
        let window = self.cfg.N;
        self.global.absorb(x, label, None);
        self.seen += 1;
        Self::push_window(&mut self.ensemble_hits, pred.class == label, window);

        for m in &mut self.members {
            if let Some(p) = m.last.take() {
                Self::push_window(&mut m.hits, p.class == label, window);
            }
            m.stats.absorb(x, label, Some(&m.features));
            m.age += 1;
        }

        // retire members that trail the ensemble for p consecutive steps
        let threshold =
            self.ensemble_hits.iter().filter(|&&h| h).count() as f64 / self.ensemble_hits.len() as f64;
        let m_age = self.cfg.m as u64;
        for m in &mut self.members {
            if m.age >= m_age && m.accuracy() < threshold {
                m.below += 1;
            } else {
                m.below = 0;
            }
        }
        let limit = self.cfg.p;
        if self.members.iter().all(|m| m.below >= limit) && !self.members.is_empty() {
            // keep the most accurate one (oldest on ties)
            let mut best = 0;
            for (i, m) in self.members.iter().enumerate() {
                if m.accuracy() > self.members[best].accuracy() {
                    best = i;
                }
            }
            self.members[best].below = 0;
        }
        self.members.retain(|m| m.below < limit);

        let top = top_features(&self.global, self.cfg.M);
        match self.members.last() {
            None => self.spawn(top),
            Some(youngest) => {
                let drift = jaccard_distance(&youngest.features, &top);
                if drift > self.cfg.f && self.seen - self.last_spawn >= self.cfg.r as u64 {
                    self.spawn(top);
                }
            }
        }
        Ok(())
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
