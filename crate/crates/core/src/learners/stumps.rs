//! Decision-stump ensembles: DynFo and ORF³V. Both keep a short window of
//! recent labelled instances from which stumps are (re)fitted.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LearnerError, OnlineLearner, Prediction};
use crate::feature_space::{FeatureId, HaphazardInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    /// Class 1 above the threshold.
    Positive,
    /// Class 1 at or below the threshold.
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionStump {
    pub feature: FeatureId,
    pub threshold: f64,
    pub polarity: Polarity,
    /// Set for a degenerate stump that always predicts this class.
    pub constant: Option<u8>,
}

impl DecisionStump {
    /// `None` when the split feature is not observed.
    pub fn predict(&self, x: &HaphazardInstance) -> Option<u8> {
        let v = x.get(self.feature)?;
        Some(self.predict_value(v))
    }

    pub fn predict_value(&self, v: f64) -> u8 {
        if let Some(c) = self.constant {
            return c;
        }
        let above = v > self.threshold;
        match self.polarity {
            Polarity::Positive => u8::from(above),
            Polarity::Negative => u8::from(!above),
        }
    }
}

/// FIFO window of the most recent labelled instances.
#[derive(Debug, Clone)]
pub struct InstanceBuffer {
    cap: usize,
    items: VecDeque<HaphazardInstance>,
}

impl InstanceBuffer {
    pub fn new(cap: usize) -> Self {
        Self { cap: cap.max(1), items: VecDeque::with_capacity(cap) }
    }

    pub fn push(&mut self, x: HaphazardInstance) {
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back(x);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HaphazardInstance> {
        self.items.iter()
    }

    /// Same length, drawn with replacement.
    pub fn bootstrap(&self, rng: &mut ChaCha8Rng) -> Vec<&HaphazardInstance> {
        (0..self.items.len()).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

fn balanced_accuracy(pairs: &[(f64, u8)], predict: impl Fn(f64) -> u8) -> f64 {
    let mut hit = [0usize; 2];
    let mut tot = [0usize; 2];
    for &(v, y) in pairs {
        tot[y as usize] += 1;
        hit[y as usize] += usize::from(predict(v) == y);
    }
    (hit[0] as f64 / tot[0] as f64 + hit[1] as f64 / tot[1] as f64) / 2.0
}

fn majority(labels: impl Iterator<Item = u8>) -> u8 {
    let mut c = [0usize; 2];
    for y in labels {
        c[y as usize] += 1;
    }
    u8::from(c[1] > c[0])
}

/// Best split of `feature` over the given instances by balanced accuracy:
/// midpoints of consecutive distinct values, both polarities, smallest
/// threshold (then positive polarity) on ties. Falls back to a constant
/// majority stump when the feature is seen fewer than twice, with a single
/// class, or with a single value.
pub fn stump_fit<'a>(instances: impl IntoIterator<Item = &'a HaphazardInstance>, feature: FeatureId) -> DecisionStump {
    let all: Vec<&HaphazardInstance> = instances.into_iter().collect();
    let pairs: Vec<(f64, u8)> = all.iter().filter_map(|x| x.get(feature).map(|v| (v, x.label()))).collect();
    let constant = |c: u8| DecisionStump { feature, threshold: 0.0, polarity: Polarity::Positive, constant: Some(c) };

    let both = pairs.iter().any(|p| p.1 == 0) && pairs.iter().any(|p| p.1 == 1);
    if pairs.len() < 2 || !both {
        let source: Box<dyn Iterator<Item = u8>> = if pairs.is_empty() {
            Box::new(all.iter().map(|x| x.label()))
        } else {
            Box::new(pairs.iter().map(|p| p.1))
        };
        return constant(majority(source));
    }
    let mut values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() < 2 {
        return constant(majority(pairs.iter().map(|p| p.1)));
    }
    let mut best: Option<(f64, DecisionStump)> = None;
    for w in values.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        for polarity in [Polarity::Positive, Polarity::Negative] {
            let s = DecisionStump { feature, threshold: t, polarity, constant: None };
            let score = balanced_accuracy(&pairs, |v| s.predict_value(v));
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, s));
            }
        }
    }
    best.expect("at least one candidate").1
}

/// Running class counts for the no-vote fallback.
#[derive(Debug, Clone, Default)]
struct Majority([u64; 2]);

impl Majority {
    fn predict(&self) -> Prediction {
        let n = self.0[0] + self.0[1];
        let score = if n == 0 { 0.5 } else { self.0[1] as f64 / n as f64 };
        Prediction { class: u8::from(self.0[1] > self.0[0]), score }
    }
}

fn weighted_vote(votes: [f64; 2]) -> Prediction {
    Prediction { class: u8::from(votes[1] > votes[0]), score: votes[1] / (votes[0] + votes[1]) }
}

fn push_bounded(w: &mut VecDeque<bool>, v: bool, cap: usize) {
    w.push_back(v);
    if w.len() > cap {
        w.pop_front();
    }
}

fn error_rate(w: &VecDeque<bool>) -> f64 {
    w.iter().filter(|&&wrong| wrong).count() as f64 / w.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct DynFoConfig {
    /// Multiplicative weight step.
    pub alpha: f64,
    /// Probability a poor learner is refitted rather than dropped.
    pub beta: f64,
    /// Fraction of known features each learner may split on.
    pub delta: f64,
    /// Penalty for a learner whose split feature is missing.
    pub epsilon: f64,
    /// Rolling error rate above which a learner is refitted or dropped.
    pub gamma: f64,
    pub M: usize,
    pub N: usize,
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for DynFoConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.5,
            delta: 0.001,
            epsilon: 0.001,
            gamma: 0.5,
            M: 500,
            N: 20,
            theta1: 0.05,
            theta2: 0.75,
        }
    }
}

impl DynFoConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.alpha) && unit(self.beta) && unit(self.epsilon) && unit(self.gamma)) {
            return Err(LearnerError::Config("dynfo alpha, beta, epsilon, gamma must lie in [0, 1]".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(LearnerError::Config("dynfo.delta must be in (0, 1]".into()));
        }
        if self.M == 0 || self.N == 0 {
            return Err(LearnerError::Config("dynfo M and N must be positive".into()));
        }
        if !(self.theta1 > 0.0 && self.theta1 <= self.theta2) {
            return Err(LearnerError::Config("dynfo needs 0 < theta1 <= theta2".into()));
        }
        Ok(())
    }
}

/// Votes needed before a learner's rolling error is trusted.
const MIN_VOTES: usize = 10;

#[derive(Debug, Clone)]
struct DynFoLearner {
    accepted: Vec<FeatureId>,
    stump: DecisionStump,
    weight: f64,
    wrong: VecDeque<bool>,
    vote: Option<u8>,
}

/// Dynamic Forest: weak stump learners, each restricted to a random subset
/// of the features known when it was created.
#[derive(Debug, Clone)]
pub struct DynFo {
    cfg: DynFoConfig,
    rng: ChaCha8Rng,
    learners: Vec<DynFoLearner>,
    buffer: InstanceBuffer,
    known: BTreeSet<FeatureId>,
    majority: Majority,
}

impl DynFo {
    pub fn new(cfg: DynFoConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        Ok(Self {
            buffer: InstanceBuffer::new(cfg.N),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            learners: Vec::new(),
            known: BTreeSet::new(),
            majority: Majority::default(),
        })
    }

    pub fn learner_count(&self) -> usize {
        self.learners.len()
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.learners.iter().map(|l| l.weight).collect()
    }

    fn best_stump(&self, accepted: &[FeatureId]) -> DecisionStump {
        let mut best: Option<(f64, DecisionStump)> = None;
        for &f in accepted {
            let s = stump_fit(self.buffer.iter(), f);
            let pairs: Vec<(f64, u8)> = self.buffer.iter().filter_map(|x| x.get(f).map(|v| (v, x.label()))).collect();
            let score = if pairs.iter().any(|p| p.1 == 0) && pairs.iter().any(|p| p.1 == 1) {
                balanced_accuracy(&pairs, |v| s.predict_value(v))
            } else {
                0.5
            };
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, s));
            }
        }
        best.expect("accepted set is never empty").1
    }

    fn make_learner(&self, accepted: Vec<FeatureId>) -> DynFoLearner {
        let stump = self.best_stump(&accepted);
        DynFoLearner {
            accepted,
            stump,
            weight: (self.cfg.theta1 + self.cfg.theta2) / 2.0,
            wrong: VecDeque::new(),
            vote: None,
        }
    }

    fn sample_accepted(&mut self) -> Vec<FeatureId> {
        let pool: Vec<FeatureId> = self.known.iter().copied().collect();
        let k = ((self.cfg.delta * pool.len() as f64).ceil() as usize).clamp(1, pool.len());
        let mut picked: Vec<FeatureId> = sample(&mut self.rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
        picked.sort();
        picked
    }
}

impl OnlineLearner for DynFo {
    fn name(&self) -> &'static str {
        "dynfo"
    }

    fn predict(&mut self, x: &HaphazardInstance) -> Prediction {
        let mut votes = [0.0f64; 2];
        for l in &mut self.learners {
            l.vote = l.stump.predict(x);
            if let Some(c) = l.vote {
                votes[c as usize] += l.weight;
            }
        }
        if votes[0] + votes[1] > 0.0 {
            weighted_vote(votes)
        } else {
            self.majority.predict()
        }
    }

    fn update(&mut self, x: &HaphazardInstance, label: u8) -> Result<(), LearnerError> {
        self.majority.0[label as usize] += 1;
        self.buffer.push(x.clone());
        let cfg = self.cfg.clone();

        for l in &mut self.learners {
            let factor = match l.vote.take() {
                Some(c) if c == label => 1.0 + cfg.alpha,
                Some(_) => 1.0 - cfg.alpha,
                None => 1.0 - cfg.epsilon,
            };
            if factor != 1.0 {
                l.weight = (l.weight * factor).clamp(cfg.theta1, cfg.theta2);
            }
            if let Some(c) = l.stump.predict(x) {
                push_bounded(&mut l.wrong, c != label, cfg.N);
            }
        }

        // refit or drop learners that keep failing
        let mut i = 0;
        while i < self.learners.len() {
            let l = &self.learners[i];
            if l.wrong.len() >= MIN_VOTES && error_rate(&l.wrong) > cfg.gamma {
                if self.rng.gen_bool(cfg.beta) {
                    let stump = self.best_stump(&self.learners[i].accepted);
                    let l = &mut self.learners[i];
                    l.stump = stump;
                    l.wrong.clear();
                } else {
                    self.learners.remove(i);
                    continue;
                }
            }
            i += 1;
        }

        let sudden: Vec<FeatureId> = x.ids().filter(|id| !self.known.contains(id)).collect();
        self.known.extend(sudden.iter().copied());
        if !sudden.is_empty() {
            let fresh = self.make_learner(sudden);
            if self.learners.len() >= cfg.M {
                let (lowest, _) = self
                    .learners
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.weight.total_cmp(&b.1.weight))
                    .expect("M > 0");
                self.learners[lowest] = fresh;
            } else {
                self.learners.push(fresh);
            }
        }
        if self.learners.len() < cfg.M && !self.known.is_empty() {
            let accepted = self.sample_accepted();
            let fresh = self.make_learner(accepted);
            self.learners.push(fresh);
        }
        Ok(())
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateStrategy {
    Oldest,
    Random,
}

impl FromStr for UpdateStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oldest" => Ok(Self::Oldest),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown update strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct Orf3vConfig {
    pub forestSize: usize,
    pub replacementInterval: usize,
    pub updateStrategy: UpdateStrategy,
    /// Probability of skipping a replacement under the random strategy.
    pub replacementChance: f64,
    pub windowsize: usize,
    pub alpha: f64,
    /// Pruning confidence.
    pub delta: f64,
    pub min_weight: f64,
    pub max_weight: f64,
}

impl Default for Orf3vConfig {
    fn default() -> Self {
        Self {
            forestSize: 5,
            replacementInterval: 5,
            updateStrategy: UpdateStrategy::Oldest,
            replacementChance: 0.7,
            windowsize: 20,
            alpha: 0.1,
            delta: 0.001,
            min_weight: 0.05,
            max_weight: 1.0,
        }
    }
}

impl Orf3vConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.forestSize == 0 || self.replacementInterval == 0 || self.windowsize == 0 {
            return Err(LearnerError::Config("orf3v forestSize, replacementInterval, windowsize must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.replacementChance) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(LearnerError::Config("orf3v replacementChance and alpha must lie in [0, 1]".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(LearnerError::Config("orf3v.delta must be in (0, 1)".into()));
        }
        if !(self.min_weight > 0.0 && self.min_weight <= self.max_weight) {
            return Err(LearnerError::Config("orf3v needs 0 < min_weight <= max_weight".into()));
        }
        Ok(())
    }
}

/// Hoeffding deviation √(ln(1/δ) / (2n)).
pub fn hoeffding_bound(delta: f64, n: usize) -> f64 {
    ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

#[derive(Debug, Clone)]
struct ForestStump {
    stump: DecisionStump,
    weight: f64,
    born: u64,
    wrong: VecDeque<bool>,
}

#[derive(Debug, Clone)]
struct Forest {
    stumps: Vec<ForestStump>,
    replacements: usize,
}

/// Online Random Feature Forests for Feature space Variabilities: one small
/// forest of bootstrap-fitted stumps per feature.
#[derive(Debug, Clone)]
pub struct Orf3v {
    cfg: Orf3vConfig,
    rng: ChaCha8Rng,
    forests: BTreeMap<FeatureId, Forest>,
    window: InstanceBuffer,
    seen: u64,
    majority: Majority,
}

impl Orf3v {
    pub fn new(cfg: Orf3vConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        Ok(Self {
            window: InstanceBuffer::new(cfg.windowsize),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            forests: BTreeMap::new(),
            seen: 0,
            majority: Majority::default(),
        })
    }

    pub fn forest_sizes(&self) -> BTreeMap<FeatureId, usize> {
        self.forests.iter().map(|(id, f)| (*id, f.stumps.len())).collect()
    }

    pub fn replacements(&self) -> BTreeMap<FeatureId, usize> {
        self.forests.iter().map(|(id, f)| (*id, f.replacements)).collect()
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    fn fresh_stump(&mut self, feature: FeatureId) -> ForestStump {
        let sample = self.window.bootstrap(&mut self.rng);
        ForestStump {
            stump: stump_fit(sample, feature),
            weight: (self.cfg.min_weight + self.cfg.max_weight) / 2.0,
            born: self.seen,
            wrong: VecDeque::new(),
        }
    }

    fn replace_one(&mut self, feature: FeatureId) {
        let size = self.forests[&feature].stumps.len();
        let target = if size < self.cfg.forestSize {
            None
        } else {
            match self.cfg.updateStrategy {
                UpdateStrategy::Oldest => {
                    let stumps = &self.forests[&feature].stumps;
                    let (i, _) = stumps.iter().enumerate().min_by_key(|(_, s)| s.born).expect("non-empty forest");
                    Some(i)
                }
                UpdateStrategy::Random => {
                    if self.rng.gen_bool(self.cfg.replacementChance) {
                        return;
                    }
                    Some(self.rng.gen_range(0..size))
                }
            }
        };
        let fresh = self.fresh_stump(feature);
        let forest = self.forests.get_mut(&feature).expect("forest exists");
        match target {
            Some(i) => forest.stumps[i] = fresh,
            None => forest.stumps.push(fresh),
        }
        forest.replacements += 1;
    }

    fn prune(&mut self) {
        let bound = hoeffding_bound(self.cfg.delta, self.window.len());
        for forest in self.forests.values_mut() {
            let rated: Vec<f64> =
                forest.stumps.iter().filter(|s| !s.wrong.is_empty()).map(|s| error_rate(&s.wrong)).collect();
            if forest.stumps.len() < 2 || rated.is_empty() {
                continue;
            }
            let mean = rated.iter().sum::<f64>() / rated.len() as f64;
            let keep: Vec<bool> =
                forest.stumps.iter().map(|s| s.wrong.is_empty() || error_rate(&s.wrong) <= mean + bound).collect();
            if keep.iter().any(|&k| k) {
                let mut it = keep.into_iter();
                forest.stumps.retain(|_| it.next().expect("same length"));
            }
        }
    }
}

impl OnlineLearner for Orf3v {
    fn name(&self) -> &'static str {
        "orf3v"
    }

    fn predict(&mut self, x: &HaphazardInstance) -> Prediction {
        let mut votes = [0.0f64; 2];
        for &(id, v) in x.features() {
            if let Some(forest) = self.forests.get(&id) {
                for s in &forest.stumps {
                    votes[s.stump.predict_value(v) as usize] += s.weight;
                }
            }
        }
        if votes[0] + votes[1] > 0.0 {
            weighted_vote(votes)
        } else {
            self.majority.predict()
        }
    }

    fn update(&mut self, x: &HaphazardInstance, label: u8) -> Result<(), LearnerError> {
        self.majority.0[label as usize] += 1;
        let cfg = self.cfg.clone();
        for &(id, v) in x.features() {
            if let Some(forest) = self.forests.get_mut(&id) {
                for s in &mut forest.stumps {
                    let wrong = s.stump.predict_value(v) != label;
                    let factor = if wrong { 1.0 - cfg.alpha } else { 1.0 + cfg.alpha };
                    s.weight = (s.weight * factor).clamp(cfg.min_weight, cfg.max_weight);
                    push_bounded(&mut s.wrong, wrong, cfg.windowsize);
                }
            }
        }
        self.window.push(x.clone());
        self.seen += 1;

        let sudden: Vec<FeatureId> = x.ids().filter(|id| !self.forests.contains_key(id)).collect();
        for id in sudden {
            let stumps = (0..cfg.forestSize).map(|_| self.fresh_stump(id)).collect();
            self.forests.insert(id, Forest { stumps, replacements: 0 });
        }

        if self.seen.is_multiple_of(cfg.replacementInterval as u64) {
            let ids: Vec<FeatureId> = self.forests.keys().copied().collect();
            for id in ids {
                self.replace_one(id);
            }
        }
        self.prune();
        Ok(())
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testutil::separable_stream;
    use proptest::prelude::*;

    fn inst(t: u64, x: &[(u32, f64)], y: u8) -> HaphazardInstance {
        HaphazardInstance::new(t, x.iter().map(|&(i, v)| (FeatureId(i), v)).collect(), y).unwrap()
    }

    fn step<L: OnlineLearner>(l: &mut L, x: &HaphazardInstance) -> Prediction {
        let p = l.predict(x);
        l.update(x, x.label()).unwrap();
        p
    }

    /// Every pair of observed values proposes its midpoint; score both
    /// polarities by counting hits per class.
    fn exhaustive_oracle(pairs: &[(f64, u8)]) -> (f64, f64, Polarity) {
        let mut cands = Vec::new();
        for a in pairs {
            for b in pairs {
                if a.0 < b.0 && !pairs.iter().any(|c| a.0 < c.0 && c.0 < b.0) {
                    cands.push((a.0 + b.0) / 2.0);
                }
            }
        }
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let n1 = pairs.iter().filter(|p| p.1 == 1).count() as f64;
        let n0 = pairs.len() as f64 - n1;
        let mut best = (f64::NEG_INFINITY, 0.0, Polarity::Positive);
        for t in cands {
            let tp = pairs.iter().filter(|p| p.1 == 1 && p.0 > t).count() as f64;
            let tn = pairs.iter().filter(|p| p.1 == 0 && p.0 <= t).count() as f64;
            let pos = (tp / n1 + tn / n0) / 2.0;
            let neg = ((n1 - tp) / n1 + (n0 - tn) / n0) / 2.0;
            if pos > best.0 {
                best = (pos, t, Polarity::Positive);
            }
            if neg > best.0 {
                best = (neg, t, Polarity::Negative);
            }
        }
        best
    }

    fn buffer_of(pairs: &[(f64, u8)]) -> Vec<HaphazardInstance> {
        pairs.iter().enumerate().map(|(t, &(v, y))| inst(t as u64, &[(0, v)], y)).collect()
    }

    #[test]
    fn stump_fit_small_example() {
        let b = buffer_of(&[(1.0, 0), (2.0, 0), (3.0, 1), (4.0, 1)]);
        let s = stump_fit(&b, FeatureId(0));
        assert_eq!(s.threshold, 2.5);
        assert_eq!(s.polarity, Polarity::Positive);
        assert_eq!(s.constant, None);
    }

    #[test]
    fn stump_degenerate_cases() {
        let b = buffer_of(&[(1.0, 1), (7.0, 1), (3.0, 1)]);
        let s = stump_fit(&b, FeatureId(0));
        assert_eq!(s.constant, Some(1));
        assert_eq!(s.predict_value(-100.0), 1);
        // feature never observed: majority of the buffer, still cannot vote
        let s = stump_fit(&b, FeatureId(4));
        assert_eq!(s.predict(&b[0]), None);

        let s = DecisionStump { feature: FeatureId(0), threshold: 3.0, polarity: Polarity::Positive, constant: None };
        assert_eq!(s.predict_value(5.0), 1);
        assert_eq!(s.predict_value(3.0), 0);
    }

    proptest! {
        #[test]
        fn stump_fit_matches_exhaustive_search(
            pairs in prop::collection::vec((-5i32..5, 0u8..2), 2..20)
        ) {
            let pairs: Vec<(f64, u8)> = pairs.into_iter().map(|(v, y)| (v as f64, y)).collect();
            let both = pairs.iter().any(|p| p.1 == 0) && pairs.iter().any(|p| p.1 == 1);
            let distinct = pairs.iter().any(|p| p.0 != pairs[0].0);
            prop_assume!(both && distinct);
            let s = stump_fit(&buffer_of(&pairs), FeatureId(0));
            let (score, t, pol) = exhaustive_oracle(&pairs);
            let got = balanced_accuracy(&pairs, |v| s.predict_value(v));
            prop_assert!((got - score).abs() < 1e-12);
            prop_assert_eq!(s.threshold, t);
            prop_assert_eq!(s.polarity, pol);
        }
    }

    #[test]
    fn buffer_is_fifo_and_bounded() {
        let mut b = InstanceBuffer::new(20);
        for t in 0..50u64 {
            b.push(inst(t, &[], 0));
            assert!(b.len() <= 20);
        }
        let ts: Vec<u64> = b.iter().map(|x| x.t()).collect();
        assert_eq!(ts, (30..50).collect::<Vec<_>>());
    }

    #[test]
    fn hoeffding_closed_form() {
        let direct = (1000f64.ln() / 40.0).sqrt();
        assert!((hoeffding_bound(0.001, 20) - direct).abs() < 1e-15);
        assert!((hoeffding_bound(0.001, 20) - 0.4155).abs() < 1e-4);
    }

    #[test]
    fn dynfo_falls_back_to_majority() {
        let mut m = DynFo::new(DynFoConfig::default(), 0).unwrap();
        assert_eq!(step(&mut m, &inst(0, &[], 1)).class, 0);
        step(&mut m, &inst(1, &[], 1));
        assert_eq!(m.predict(&inst(2, &[], 0)).class, 1);
    }

    #[test]
    fn dynfo_constant_weights_without_steps() {
        let cfg = DynFoConfig { alpha: 0.0, epsilon: 0.0, M: 30, ..Default::default() };
        let mid = (cfg.theta1 + cfg.theta2) / 2.0;
        let mut m = DynFo::new(cfg, 3).unwrap();
        for x in &separable_stream(200, 6, 0.5, 3) {
            step(&mut m, x);
            assert!(m.weights().iter().all(|w| *w == mid));
        }
    }

    #[test]
    fn dynfo_bounds_hold() {
        let cfg = DynFoConfig { M: 25, delta: 0.3, ..Default::default() };
        let mut m = DynFo::new(cfg.clone(), 1).unwrap();
        for x in &separable_stream(300, 10, 0.5, 1) {
            step(&mut m, x);
            assert!(m.learner_count() <= cfg.M);
            assert!(m.buffer_len() <= 20);
            assert!(m.weights().iter().all(|w| (cfg.theta1..=cfg.theta2).contains(w)));
        }
    }

    #[test]
    fn dynfo_and_orf3v_reproducible_per_seed() {
        let stream = separable_stream(200, 6, 0.6, 2);
        let dyn_run = |seed| {
            let mut m = DynFo::new(DynFoConfig { M: 50, ..Default::default() }, seed).unwrap();
            stream.iter().map(|x| step(&mut m, x).score.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(dyn_run(7), dyn_run(7));
        let orf_run = |seed| {
            let cfg = Orf3vConfig { updateStrategy: UpdateStrategy::Random, ..Default::default() };
            let mut m = Orf3v::new(cfg, seed).unwrap();
            stream.iter().map(|x| step(&mut m, x).score.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(orf_run(7), orf_run(7));
    }

    #[test]
    fn dynfo_learns_separable_stream() {
        let stream = separable_stream(1000, 2, 0.75, 4);
        let cfg = DynFoConfig { M: 100, delta: 0.5, ..Default::default() };
        let mut m = DynFo::new(cfg, 0).unwrap();
        let preds: Vec<u8> = stream.iter().map(|x| step(&mut m, x).class).collect();
        let correct = stream[500..].iter().zip(&preds[500..]).filter(|(x, p)| x.label() == **p).count();
        assert!(correct as f64 / 500.0 > 0.7, "{correct}");
    }

    #[test]
    fn orf3v_creates_forest_on_first_sighting() {
        let mut m = Orf3v::new(Orf3vConfig { forestSize: 4, ..Default::default() }, 0).unwrap();
        step(&mut m, &inst(0, &[(0, 1.0)], 1));
        assert_eq!(m.forest_sizes(), BTreeMap::from([(FeatureId(0), 4)]));
        step(&mut m, &inst(1, &[(0, 1.0), (3, 2.0)], 0));
        assert_eq!(m.forest_sizes()[&FeatureId(3)], 4);
    }

    #[test]
    fn orf3v_replacement_schedule() {
        let cfg = Orf3vConfig { replacementInterval: 5, updateStrategy: UpdateStrategy::Oldest, ..Default::default() };
        let mut m = Orf3v::new(cfg, 0).unwrap();
        for x in &separable_stream(10, 3, 1.0, 0) {
            step(&mut m, x);
        }
        assert!(m.replacements().values().all(|&r| r == 2), "{:?}", m.replacements());
        assert!(m.window_len() <= 20);
    }

    #[test]
    fn orf3v_never_empties_a_forest() {
        let mut m = Orf3v::new(Orf3vConfig::default(), 5).unwrap();
        for x in &separable_stream(400, 5, 0.5, 5) {
            step(&mut m, x);
            assert!(m.forest_sizes().values().all(|&n| (1..=5).contains(&n)));
            assert!(m.window_len() <= 20);
        }
    }
}
