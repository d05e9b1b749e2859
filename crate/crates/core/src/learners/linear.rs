//! Linear learners: OLVF and OCDS.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{logistic, signed, LearnerError, OnlineLearner, Prediction};
use crate::feature_space::{FeatureId, HaphazardInstance};

/// Per-feature running z-score over the values seen so far (including the
/// current one).
#[derive(Debug, Clone, Default)]
pub struct RunningStandardizer {
    moments: HashMap<FeatureId, super::bayes::Moments>,
}

impl RunningStandardizer {
    pub fn transform(&mut self, x: &HaphazardInstance) -> Vec<(FeatureId, f64)> {
        x.features()
            .iter()
            .map(|&(id, v)| {
                let m = self.moments.entry(id).or_default();
                m.push(v);
                let z = match m.variance() {
                    Some(var) => (v - m.mean) / var.sqrt().max(1e-6),
                    None => 0.0,
                };
                (id, z)
            })
            .collect()
    }
}

fn prepare(std: &mut Option<RunningStandardizer>, x: &HaphazardInstance) -> Vec<(FeatureId, f64)> {
    match std {
        Some(s) => s.transform(x),
        None => x.features().to_vec(),
    }
}

fn check_finite<'a>(name: &str, mut values: impl Iterator<Item = &'a f64>) -> Result<(), LearnerError> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LearnerError::Diverged(format!("{name} weights are no longer finite")))
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct OlvfConfig {
    /// Cap on the instance classifier step.
    pub C: f64,
    /// Cap on the feature-space classifier step.
    pub C_bar: f64,
    /// Fraction of weights kept by sparsity truncation.
    pub B: f64,
    pub lambda: f64,
    pub standardize: bool,
}

impl Default for OlvfConfig {
    fn default() -> Self {
        Self { C: 1.0, C_bar: 0.01, B: 1.0, lambda: 0.0001, standardize: false }
    }
}

impl OlvfConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.B > 0.0 && self.B <= 1.0) {
            return Err(LearnerError::Config(format!("olvf.B must be in (0, 1], got {}", self.B)));
        }
        if !(self.C > 0.0 && self.C_bar >= 0.0 && self.lambda >= 0.0) {
            return Err(LearnerError::Config("olvf.C must be positive, C_bar and lambda non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct OlvfPending {
    x: Vec<(FeatureId, f64)>,
    margin: f64,
    class: u8,
}

/// Online Learning from Varying Feature spaces. The instance classifier
/// predicts from the shared features; the feature-space classifier follows
/// its published update, which from zero initialization never moves.
#[derive(Debug, Clone)]
pub struct Olvf {
    cfg: OlvfConfig,
    w: BTreeMap<FeatureId, f64>,
    w_bar: BTreeMap<FeatureId, f64>,
    std: Option<RunningStandardizer>,
    pending: Option<OlvfPending>,
}

impl Olvf {
    pub fn new(cfg: OlvfConfig) -> Result<Self, LearnerError> {
        cfg.validate()?;
        let std = cfg.standardize.then(RunningStandardizer::default);
        Ok(Self { cfg, w: BTreeMap::new(), w_bar: BTreeMap::new(), std, pending: None })
    }

    pub fn weights(&self) -> &BTreeMap<FeatureId, f64> {
        &self.w
    }

    pub fn feature_space_weights(&self) -> &BTreeMap<FeatureId, f64> {
        &self.w_bar
    }

    pub fn set_weight(&mut self, id: FeatureId, value: f64) {
        self.w.insert(id, value);
    }

    fn margin(&self, x: &[(FeatureId, f64)]) -> f64 {
        x.iter().filter_map(|(id, v)| self.w.get(id).map(|w| w * v)).sum()
    }

    /// Feature-space classifier step on presence indicators. Returns its
    /// logistic loss before the step.
    fn update_feature_space(&mut self, x: &[(FeatureId, f64)], agree: bool) -> f64 {
        let i = if agree { 1.0 } else { -1.0 };
        let m: f64 = x.iter().map(|(id, _)| self.w_bar.get(id).copied().unwrap_or(0.0)).sum();
        let z = -i * m;
        let loss = softplus(z);
        if x.is_empty() {
            return loss;
        }
        // ln(e^z) / ln(1 + e^z)
        let ratio = z / loss;
        let tau = self.cfg.C_bar.min(loss / x.len() as f64);
        let step = tau * ratio * i;
        for (id, _) in x {
            match self.w_bar.get_mut(id) {
                Some(w) => *w -= step,
                None => {
                    self.w_bar.insert(*id, step);
                }
            }
        }
        loss
    }

    fn truncate(&mut self) {
        let keep = (self.cfg.B * self.w.len() as f64).ceil() as usize;
        let mut nonzero: Vec<(f64, FeatureId)> =
            self.w.iter().filter(|(_, w)| **w != 0.0).map(|(id, w)| (w.abs(), *id)).collect();
        if nonzero.len() <= keep {
            return;
        }
        nonzero.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, id) in &nonzero[keep..] {
            self.w.insert(*id, 0.0);
        }
    }
}

impl OnlineLearner for Olvf {
    fn name(&self) -> &'static str {
        "olvf"
    }

    fn predict(&mut self, x: &HaphazardInstance) -> Prediction {
        let x = prepare(&mut self.std, x);
        let margin = self.margin(&x);
        let class = u8::from(margin > 0.0);
        self.pending = Some(OlvfPending { x, margin, class });
        Prediction { class, score: logistic(margin) }
    }

    fn update(&mut self, _x: &HaphazardInstance, label: u8) -> Result<(), LearnerError> {
        let OlvfPending { x, margin, class } =
            self.pending.take().ok_or_else(|| LearnerError::Protocol("olvf update without prediction".into()))?;
        let y = signed(label);
        let fs_loss = self.update_feature_space(&x, class == label);
        for (id, _) in &x {
            self.w.entry(*id).or_insert(0.0);
        }
        let loss = (1.0 - y * margin).max(0.0);
        let norm2: f64 = x.iter().map(|(_, v)| v * v).sum();
        if loss > 0.0 && norm2 > 0.0 {
            let scale = fs_loss / std::f64::consts::LN_2;
            let tau = self.cfg.C.min(loss * scale / norm2);
            let shrink = 1.0 - self.cfg.lambda * tau;
            for (id, v) in &x {
                let w = self.w.get_mut(id).expect("inserted above");
                *w = shrink * *w + tau * y * v;
            }
            self.truncate();
        }
        check_finite("olvf", self.w.values().chain(self.w_bar.values()))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct OcdsConfig {
    /// Period (instances) between re-estimates of the mixing weight k.
    pub T: usize,
    /// Scale on the reconstructed block.
    pub alpha: f64,
    /// Scale on the least-squares term.
    pub beta0: f64,
    /// ℓ₁ trade-off.
    pub beta1: f64,
    /// Graph-smoothness trade-off.
    pub beta2: f64,
    pub k_init: f64,
    pub decay: f64,
    /// Weights of a newly seen feature start uniform in ±init_scale.
    pub init_scale: f64,
    pub standardize: bool,
}

impl Default for OcdsConfig {
    fn default() -> Self {
        Self {
            T: 8,
            alpha: 0.1,
            beta0: 0.01,
            beta1: 0.0001,
            beta2: 0.0001,
            k_init: 0.5,
            decay: 0.99,
            init_scale: 0.01,
            standardize: false,
        }
    }
}

impl OcdsConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.T == 0 {
            return Err(LearnerError::Config("ocds.T must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.k_init) {
            return Err(LearnerError::Config(format!("ocds.k_init must be in [0, 1], got {}", self.k_init)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(LearnerError::Config("ocds.decay must be in (0, 1]".into()));
        }
        if [self.alpha, self.beta0, self.beta1, self.beta2, self.init_scale].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(LearnerError::Config("ocds scale parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// Decayed co-moment sums over the steps where both features were observed.
#[derive(Debug, Clone, Copy, Default)]
struct CoMoment {
    ab: f64,
    aa: f64,
    bb: f64,
}

#[derive(Debug, Clone)]
struct OcdsPending {
    x: Vec<(FeatureId, f64)>,
    recon: Vec<(FeatureId, f64)>,
    obs_margin: f64,
    rec_margin: f64,
}

/// Online learning from Capricious Data Streams: unobserved features are
/// reconstructed from observed ones through a feature-relatedness graph,
/// and two linear predictors (observed / reconstructed) are mixed by k.
#[derive(Debug, Clone)]
pub struct Ocds {
    cfg: OcdsConfig,
    w: BTreeMap<FeatureId, f64>,
    w_rec: BTreeMap<FeatureId, f64>,
    graph: HashMap<(FeatureId, FeatureId), CoMoment>,
    known: BTreeSet<FeatureId>,
    k: f64,
    period: usize,
    hits: [usize; 2],
    reconstructed_in_period: usize,
    std: Option<RunningStandardizer>,
    pending: Option<OcdsPending>,
    rng: ChaCha8Rng,
}

fn pair(a: FeatureId, b: FeatureId) -> (FeatureId, FeatureId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Ocds {
    pub fn new(cfg: OcdsConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        let std = cfg.standardize.then(RunningStandardizer::default);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            k: cfg.k_init,
            cfg,
            w: BTreeMap::new(),
            w_rec: BTreeMap::new(),
            graph: HashMap::new(),
            known: BTreeSet::new(),
            period: 0,
            hits: [0, 0],
            reconstructed_in_period: 0,
            std,
            pending: None,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn weights(&self) -> &BTreeMap<FeatureId, f64> {
        &self.w
    }

    pub fn reconstructed_weights(&self) -> &BTreeMap<FeatureId, f64> {
        &self.w_rec
    }

    /// Estimates for every known feature absent from `x`. A feature never
    /// co-observed with any of the observed ones is estimated as 0.
    pub fn reconstruct(&self, x: &[(FeatureId, f64)]) -> Vec<(FeatureId, f64)> {
        let observed: BTreeSet<FeatureId> = x.iter().map(|(id, _)| *id).collect();
        self.known
            .iter()
            .filter(|u| !observed.contains(u))
            .map(|&u| {
                let mut sum = 0.0;
                let mut n = 0usize;
                for &(o, v) in x {
                    let Some(c) = self.graph.get(&pair(u, o)) else { continue };
                    let (uo, oo) = if u < o { (c.ab, c.bb) } else { (c.ab, c.aa) };
                    if oo > 0.0 {
                        sum += uo / oo * v;
                        n += 1;
                    }
                }
                (u, if n > 0 { sum / n as f64 } else { 0.0 })
            })
            .collect()
    }

    /// Normalized relatedness |s_ab| / sqrt(s_aa s_bb).
    fn affinity(&self, a: FeatureId, b: FeatureId) -> f64 {
        match self.graph.get(&pair(a, b)) {
            Some(c) if c.aa > 0.0 && c.bb > 0.0 => c.ab.abs() / (c.aa * c.bb).sqrt(),
            _ => 0.0,
        }
    }

    fn absorb_graph(&mut self, x: &[(FeatureId, f64)]) {
        let d = self.cfg.decay;
        for (i, &(a, va)) in x.iter().enumerate() {
            for &(b, vb) in &x[i + 1..] {
                let c = self.graph.entry(pair(a, b)).or_default();
                // x is sorted by id, so a < b
                c.ab = d * c.ab + va * vb;
                c.aa = d * c.aa + va * va;
                c.bb = d * c.bb + vb * vb;
            }
        }
    }

    fn margins(&self, x: &[(FeatureId, f64)], recon: &[(FeatureId, f64)]) -> (f64, f64) {
        let dot = |w: &BTreeMap<FeatureId, f64>, v: &[(FeatureId, f64)], s: f64| -> f64 {
            v.iter().filter_map(|(id, x)| w.get(id).map(|w| w * x * s)).sum()
        };
        (dot(&self.w, x, 1.0), dot(&self.w_rec, recon, self.cfg.alpha))
    }
}

impl OnlineLearner for Ocds {
    fn name(&self) -> &'static str {
        "ocds"
    }

    fn predict(&mut self, x: &HaphazardInstance) -> Prediction {
        let x = prepare(&mut self.std, x);
        let recon = self.reconstruct(&x);
        let (obs_margin, rec_margin) = self.margins(&x, &recon);
        let margin = self.k * obs_margin + (1.0 - self.k) * rec_margin;
        self.pending = Some(OcdsPending { x, recon, obs_margin, rec_margin });
        Prediction { class: u8::from(margin > 0.0), score: logistic(margin) }
    }

    fn update(&mut self, _x: &HaphazardInstance, label: u8) -> Result<(), LearnerError> {
        let OcdsPending { x, recon, obs_margin, rec_margin } =
            self.pending.take().ok_or_else(|| LearnerError::Protocol("ocds update without prediction".into()))?;
        let y = signed(label);
        let alpha = self.cfg.alpha;

        // ψ = [x ; α x̃], with the matching weights from W and W̃
        let psi: Vec<(FeatureId, f64, bool)> = x
            .iter()
            .map(|&(id, v)| (id, v, false))
            .chain(recon.iter().map(|&(id, v)| (id, alpha * v, true)))
            .collect();
        let scale = self.cfg.init_scale;
        for &(id, _, rec) in &psi {
            let map = if rec { &mut self.w_rec } else { &mut self.w };
            if let std::collections::btree_map::Entry::Vacant(e) = map.entry(id) {
                let w0 = if scale > 0.0 { self.rng.gen_range(-scale..scale) } else { 0.0 };
                e.insert(w0);
            }
        }
        let weight = |s: &Self, id: FeatureId, rec: bool| {
            let map = if rec { &s.w_rec } else { &s.w };
            map.get(&id).copied().unwrap_or(0.0)
        };
        let residual = y - (obs_margin + rec_margin);
        let mut grads = Vec::with_capacity(psi.len());
        for &(id, v, rec) in &psi {
            let wi = weight(self, id, rec);
            let mut g = self.cfg.beta0 * (-2.0 * residual * v);
            if wi != 0.0 {
                g += self.cfg.beta1 * wi.signum();
            }
            if self.cfg.beta2 > 0.0 {
                // (L + Lᵀ)w = 2 L w on the active coordinates
                let mut lw = 0.0;
                for &(jd, _, jrec) in &psi {
                    if jd != id {
                        let a = self.affinity(id, jd);
                        lw += a * (wi - weight(self, jd, jrec));
                    }
                }
                g += self.cfg.beta2 * 2.0 * lw;
            }
            grads.push(g);
        }
        for (&(id, _, rec), g) in psi.iter().zip(grads) {
            let map = if rec { &mut self.w_rec } else { &mut self.w };
            *map.get_mut(&id).expect("initialized above") -= g;
        }

        // k from the sub-predictors' accuracy over the last period
        self.hits[0] += usize::from((obs_margin > 0.0) == (label == 1));
        if !recon.is_empty() {
            self.hits[1] += usize::from((rec_margin > 0.0) == (label == 1));
            self.reconstructed_in_period += 1;
        }
        self.period += 1;
        if self.period == self.cfg.T {
            if self.reconstructed_in_period > 0 {
                let a_obs = self.hits[0] as f64 / self.period as f64;
                let a_rec = self.hits[1] as f64 / self.reconstructed_in_period as f64;
                if a_obs + a_rec > 0.0 {
                    self.k = a_obs / (a_obs + a_rec);
                }
            }
            self.period = 0;
            self.hits = [0, 0];
            self.reconstructed_in_period = 0;
        }

        self.absorb_graph(&x);
        self.known.extend(x.iter().map(|(id, _)| *id));
        check_finite("ocds", self.w.values().chain(self.w_rec.values()))
    }

    fn is_deterministic(&self) -> bool {
        self.cfg.init_scale == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testutil::separable_stream;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inst(t: u64, x: &[(u32, f64)], y: u8) -> HaphazardInstance {
        HaphazardInstance::new(t, x.iter().map(|&(i, v)| (FeatureId(i), v)).collect(), y).unwrap()
    }

    fn step<L: OnlineLearner>(l: &mut L, x: &HaphazardInstance) -> Prediction {
        let p = l.predict(x);
        l.update(x, x.label()).unwrap();
        p
    }

    #[test]
    fn olvf_margin_rule() {
        let mut m = Olvf::new(OlvfConfig::default()).unwrap();
        assert_eq!(m.predict(&inst(0, &[(0, 1.5)], 1)).class, 0);
        m.pending = None;
        m.set_weight(FeatureId(0), 2.0);
        let p = m.predict(&inst(0, &[(0, 1.5)], 1));
        assert_eq!(p.class, 1);
        assert!((p.score - logistic(3.0)).abs() < 1e-15);
    }

    #[test]
    fn olvf_passive_step_leaves_weights() {
        let mut m = Olvf::new(OlvfConfig::default()).unwrap();
        m.set_weight(FeatureId(0), 2.0);
        m.set_weight(FeatureId(1), -1.0);
        let before = m.weights().clone();
        step(&mut m, &inst(0, &[(0, 1.0), (1, 0.5)], 1));
        assert_eq!(m.weights(), &before);
    }

    #[test]
    fn olvf_first_step_is_pa() {
        // zero weights, y = +1: loss 1, tau = 1 / |x|², w = tau x
        let mut m = Olvf::new(OlvfConfig { lambda: 0.0, ..Default::default() }).unwrap();
        step(&mut m, &inst(0, &[(0, 1.0), (1, 2.0)], 1));
        assert!((m.weights()[&FeatureId(0)] - 0.2).abs() < 1e-15);
        assert!((m.weights()[&FeatureId(1)] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn olvf_truncation_bounds_nonzeros() {
        let mut m = Olvf::new(OlvfConfig { B: 0.5, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 0..50u64 {
            let x: Vec<(u32, f64)> = (0..10).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
            step(&mut m, &inst(t, &x, u8::from(rng.gen_bool(0.5))));
            assert!(m.weights().values().filter(|w| **w != 0.0).count() <= 5);
        }
    }

    #[test]
    fn olvf_learns_separable_stream() {
        let stream = separable_stream(500, 6, 1.0, 11);
        let mut m = Olvf::new(OlvfConfig::default()).unwrap();
        let preds: Vec<Prediction> = stream.iter().map(|x| step(&mut m, x)).collect();
        let tail = &stream[400..];
        let correct = tail.iter().zip(&preds[400..]).filter(|(x, p)| x.label() == p.class).count();
        assert!(correct as f64 / tail.len() as f64 > 0.9, "{correct}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn olvf_feature_space_weights_stay_zero(seed in any::<u64>(), p in 0.1f64..1.0) {
            let stream = separable_stream(60, 8, p, seed);
            let mut m = Olvf::new(OlvfConfig::default()).unwrap();
            for x in &stream {
                step(&mut m, x);
            }
            prop_assert!(m.feature_space_weights().values().all(|w| *w == 0.0));
        }
    }

    #[test]
    fn olvf_is_deterministic() {
        let stream = separable_stream(300, 10, 0.5, 4);
        let run = || {
            let mut m = Olvf::new(OlvfConfig { B: 0.7, ..Default::default() }).unwrap();
            stream.iter().map(|x| step(&mut m, x).score.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn standardizer_is_causal() {
        let mut s = RunningStandardizer::default();
        assert_eq!(s.transform(&inst(0, &[(0, 10.0)], 0)), vec![(FeatureId(0), 0.0)]);
        let z = s.transform(&inst(1, &[(0, 20.0)], 0))[0].1;
        // mean 15, population sd 5
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ocds_zero_scales_freeze_weights() {
        let cfg = OcdsConfig { beta0: 0.0, beta1: 0.0, beta2: 0.0, init_scale: 0.0, ..Default::default() };
        let mut m = Ocds::new(cfg, 0).unwrap();
        for x in &separable_stream(100, 5, 0.5, 2) {
            step(&mut m, x);
        }
        assert!(m.weights().values().chain(m.reconstructed_weights().values()).all(|w| *w == 0.0));
    }

    #[test]
    fn ocds_scalar_lms_step() {
        let cfg = OcdsConfig { beta0: 0.1, beta1: 0.0, beta2: 0.0, k_init: 1.0, init_scale: 0.0, ..Default::default() };
        let mut m = Ocds::new(cfg, 0).unwrap();
        step(&mut m, &inst(0, &[(0, 2.0)], 1));
        // w = 0 + 0.1 · 2 · (1 − 0) · 2
        assert!((m.weights()[&FeatureId(0)] - 0.4).abs() < 1e-15);
        step(&mut m, &inst(1, &[(0, 2.0)], 0));
        // w = 0.4 + 0.1 · 2 · (−1 − 0.8) · 2
        assert!((m.weights()[&FeatureId(0)] - (0.4 - 0.72)).abs() < 1e-15);
    }

    #[test]
    fn ocds_matches_lms_oracle_at_full_observation() {
        let stream = separable_stream(200, 4, 1.0, 8);
        let cfg = OcdsConfig { beta0: 0.01, beta1: 0.0, beta2: 0.0, k_init: 1.0, init_scale: 0.0, ..Default::default() };
        let mut m = Ocds::new(cfg, 0).unwrap();
        let mut w = [0.0f64; 4];
        for x in &stream {
            let v: Vec<f64> = (0..4).map(|j| x.get(FeatureId(j)).unwrap()).collect();
            let margin: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            let p = step(&mut m, x);
            assert_eq!(p.class, u8::from(margin > 0.0));
            let y = if x.label() == 1 { 1.0 } else { -1.0 };
            for j in 0..4 {
                w[j] += 0.01 * 2.0 * (y - margin) * v[j];
            }
        }
        assert_eq!(m.k(), 1.0);
        for j in 0..4 {
            assert!((m.weights()[&FeatureId(j as u32)] - w[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn ocds_reconstruction() {
        let m = Ocds::new(OcdsConfig::default(), 0).unwrap();
        assert!(m.reconstruct(&[(FeatureId(0), 1.0)]).is_empty());

        // feature 1 = 3 · feature 0; feature 1 masked every fifth step
        let mut m = Ocds::new(OcdsConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut last_err = f64::NAN;
        for t in 0..1000u64 {
            let a: f64 = rng.gen_range(0.5..2.0);
            let x = if t % 5 == 4 { inst(t, &[(0, a)], 0) } else { inst(t, &[(0, a), (1, 3.0 * a)], 0) };
            if t % 5 == 4 {
                let r = m.reconstruct(&[(FeatureId(0), a)]);
                assert_eq!(r.len(), 1);
                last_err = (r[0].1 - 3.0 * a).abs() / (3.0 * a);
            }
            step(&mut m, &x);
        }
        assert!(last_err < 0.1, "{last_err}");

        // no unobserved features: empty reconstruction
        assert!(m.reconstruct(&[(FeatureId(0), 1.0), (FeatureId(1), 3.0)]).is_empty());
        // never co-observed → 0
        step(&mut m, &inst(1000, &[(7, 1.0)], 0));
        let r = m.reconstruct(&[(FeatureId(7), 1.0)]);
        assert!(r.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn ocds_k_one_ignores_reconstruction() {
        let cfg = OcdsConfig { k_init: 1.0, T: usize::MAX, ..Default::default() };
        let mut m = Ocds::new(cfg, 0).unwrap();
        for x in &separable_stream(50, 4, 1.0, 1) {
            step(&mut m, x);
        }
        m.w_rec.values_mut().for_each(|w| *w = 100.0);
        let x = inst(50, &[(0, 0.3)], 0);
        let p = m.predict(&x);
        let expected = m.weights()[&FeatureId(0)] * 0.3;
        assert!((p.score - logistic(expected)).abs() < 1e-12);
    }

    #[test]
    fn ocds_seeded_init() {
        let stream = separable_stream(100, 5, 0.5, 3);
        let run = |seed| {
            let mut m = Ocds::new(OcdsConfig::default(), seed).unwrap();
            stream.iter().map(|x| step(&mut m, x).score.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
        assert!(!Ocds::new(OcdsConfig::default(), 0).unwrap().is_deterministic());
    }

    #[test]
    fn ocds_stays_finite_on_standardized_stream() {
        let cfg = OcdsConfig { beta0: 0.01, beta1: 0.01, beta2: 0.01, alpha: 1.0, standardize: true, ..Default::default() };
        let mut m = Ocds::new(cfg, 0).unwrap();
        for x in &separable_stream(500, 8, 0.5, 6) {
            let p = m.predict(x);
            assert!(p.score.is_finite());
            m.update(x, x.label()).unwrap();
        }
    }
}
