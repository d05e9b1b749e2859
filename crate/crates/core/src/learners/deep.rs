//! Aux-Drop: an online deep network with one output head per hidden layer,
//! mixed by hedge weights. The first hidden layer is an AuxLayer in which
//! every haphazard feature owns one node; nodes of missing features are
//! always dropped and further nodes are dropped at random.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{logistic, LearnerError, OnlineLearner, Prediction};
use crate::feature_space::{FeatureId, HaphazardInstance};

/// Input to one AuxLayer node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    /// Unassigned: output 0, no gradient.
    Dormant,
    /// Receives only its bias.
    Bias,
    /// Aux node fed by one feature value.
    Aux(f64),
}

#[derive(Debug, Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn new(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<f64>>();
        Self { rows, cols, w: draw(rows * cols), b: draw(rows) }
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.w[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + self.b[r]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Head {
    v: Vec<f64>,
    c: f64,
}

/// Network parameters: AuxLayer (per-node input weight and bias), the dense
/// hidden layers after it, and one sigmoid head per hidden layer.
#[derive(Debug, Clone)]
pub struct MlpParams {
    aux_u: Vec<f64>,
    aux_c: Vec<f64>,
    layers: Vec<Dense>,
    heads: Vec<Head>,
}

/// Recorded activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    slots: Vec<Slot>,
    /// Per AuxLayer node: 0 when dropped, else the inverted-dropout scale.
    keep: Vec<f64>,
    pre: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    pub heads: Vec<f64>,
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn bce(o: f64, y: f64) -> f64 {
    let o = o.clamp(1e-15, 1.0 - 1e-15);
    -(y * o.ln() + (1.0 - y) * (1.0 - o).ln())
}

impl MlpParams {
    /// `hidden[0]` is the AuxLayer width; aux inputs start at zero weight
    /// and are drawn when a node is assigned.
    pub fn new(hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(!hidden.is_empty(), "at least the AuxLayer");
        let na = hidden[0];
        let layers = hidden.windows(2).map(|w| Dense::new(w[1], w[0], rng)).collect();
        let heads = hidden
            .iter()
            .map(|&n| {
                let bound = 1.0 / (n as f64).sqrt();
                Head { v: (0..n).map(|_| rng.gen_range(-bound..bound)).collect(), c: rng.gen_range(-bound..bound) }
            })
            .collect();
        Self { aux_u: vec![0.0; na], aux_c: vec![0.0; na], layers, heads }
    }

    pub fn depth(&self) -> usize {
        self.heads.len()
    }

    pub fn aux_width(&self) -> usize {
        self.aux_u.len()
    }

    /// Zero the outgoing weights of AuxLayer node `j` (dense layer and head).
    fn silence_aux(&mut self, j: usize) {
        if let Some(l) = self.layers.first_mut() {
            for r in 0..l.rows {
                l.w[r * l.cols + j] = 0.0;
            }
        }
        self.heads[0].v[j] = 0.0;
    }

    pub fn forward(&self, slots: &[Slot], keep: &[f64]) -> Forward {
        let mut pre = Vec::with_capacity(self.depth());
        let mut hidden = Vec::with_capacity(self.depth());
        let z0: Vec<f64> = slots
            .iter()
            .enumerate()
            .map(|(j, s)| match s {
                Slot::Dormant => 0.0,
                Slot::Bias => self.aux_c[j],
                Slot::Aux(x) => self.aux_u[j] * x + self.aux_c[j],
            })
            .collect();
        let h0: Vec<f64> = z0
            .iter()
            .zip(slots)
            .zip(keep)
            .map(|((z, s), k)| if *s == Slot::Dormant { 0.0 } else { relu(*z) * k })
            .collect();
        pre.push(z0);
        hidden.push(h0);
        for l in &self.layers {
            let z = l.apply(hidden.last().expect("aux layer pushed"));
            hidden.push(z.iter().map(|&v| relu(v)).collect());
            pre.push(z);
        }
        let heads = self
            .heads
            .iter()
            .zip(&hidden)
            .map(|(h, a)| logistic(h.v.iter().zip(a).map(|(x, y)| x * y).sum::<f64>() + h.c))
            .collect();
        Forward { slots: slots.to_vec(), keep: keep.to_vec(), pre, hidden, heads }
    }

    /// Σ α_ℓ · BCE(head_ℓ, y).
    pub fn objective(fwd: &Forward, label: u8, alphas: &[f64]) -> f64 {
        let y = f64::from(label);
        fwd.heads.iter().zip(alphas).map(|(o, a)| a * bce(*o, y)).sum()
    }

    /// Gradient of [`Self::objective`] in the order of [`Self::flat`].
    pub fn gradient(&self, fwd: &Forward, label: u8, alphas: &[f64]) -> Vec<f64> {
        let y = f64::from(label);
        let depth = self.depth();
        let mut g_heads: Vec<(Vec<f64>, f64)> = Vec::with_capacity(depth);
        let mut g_layers: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); self.layers.len()];

        // dJ/dh for the deepest layer first
        let mut dh: Vec<f64> = vec![0.0; fwd.hidden[depth - 1].len()];
        let head_delta: Vec<f64> = fwd.heads.iter().zip(alphas).map(|(o, a)| a * (o - y)).collect();
        for (l, hd) in (0..depth).zip(&head_delta) {
            g_heads.push((fwd.hidden[l].iter().map(|a| hd * a).collect(), *hd));
        }
        for l in (0..depth).rev() {
            for (d, v) in dh.iter_mut().zip(&self.heads[l].v) {
                *d += head_delta[l] * v;
            }
            if l == 0 {
                break;
            }
            let layer = &self.layers[l - 1];
            let delta: Vec<f64> = dh.iter().zip(&fwd.pre[l]).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
            let prev = &fwd.hidden[l - 1];
            let mut gw = vec![0.0; layer.rows * layer.cols];
            let mut dprev = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                if delta[r] == 0.0 {
                    continue;
                }
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                for c in 0..layer.cols {
                    gw[r * layer.cols + c] = delta[r] * prev[c];
                    dprev[c] += delta[r] * row[c];
                }
            }
            g_layers[l - 1] = (gw, delta);
            dh = dprev;
        }

        let na = self.aux_width();
        let mut g_u = vec![0.0; na];
        let mut g_c = vec![0.0; na];
        for j in 0..na {
            let z = fwd.pre[0][j];
            let delta = dh[j] * fwd.keep[j] * if z > 0.0 { 1.0 } else { 0.0 };
            match fwd.slots[j] {
                Slot::Dormant => {}
                Slot::Bias => g_c[j] = delta,
                Slot::Aux(x) => {
                    g_u[j] = delta * x;
                    g_c[j] = delta;
                }
            }
        }

        let mut out = Vec::with_capacity(self.flat().len());
        out.extend(g_u);
        out.extend(g_c);
        for (gw, gb) in g_layers {
            out.extend(gw);
            out.extend(gb);
        }
        for (gv, gc) in g_heads {
            out.extend(gv);
            out.push(gc);
        }
        out
    }

    /// All parameters: aux inputs, aux biases, each dense layer (weights
    /// then biases), each head (weights then bias).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(&self.aux_u);
        out.extend(&self.aux_c);
        for l in &self.layers {
            out.extend(&l.w);
            out.extend(&l.b);
        }
        for h in &self.heads {
            out.extend(&h.v);
            out.push(h.c);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().expect("flat length"));
        fill(&mut self.aux_u);
        fill(&mut self.aux_c);
        for l in &mut self.layers {
            fill(&mut l.w);
            fill(&mut l.b);
        }
        for h in &mut self.heads {
            fill(&mut h.v);
            fill(std::slice::from_mut(&mut h.c));
        }
    }

    /// SGD step `θ ← θ − lr·g`.
    pub fn step(&mut self, grad: &[f64], lr: f64) {
        let flat: Vec<f64> = self.flat().iter().zip(grad).map(|(p, g)| p - lr * g).collect();
        self.set_flat(&flat);
    }
}

/// Hedge update `α_ℓ ← α_ℓ · b^loss_ℓ`, then the closest rescaling that
/// keeps every weight at least `s / L` and the total at one.
pub fn hedge_update(alphas: &mut [f64], losses: &[f64], b: f64, s: f64) {
    for (a, l) in alphas.iter_mut().zip(losses) {
        *a *= b.powf(*l);
    }
    let n = alphas.len();
    let floor = s / n as f64;
    let mut fixed = vec![false; n];
    loop {
        let free_mass: f64 = alphas.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(a, _)| a).sum();
        let budget = 1.0 - floor * fixed.iter().filter(|f| **f).count() as f64;
        let scale = if free_mass > 0.0 { budget / free_mass } else { 0.0 };
        let mut changed = false;
        for i in 0..n {
            if !fixed[i] && alphas[i] * scale < floor {
                fixed[i] = true;
                changed = true;
            }
        }
        if !changed {
            for i in 0..n {
                alphas[i] = if fixed[i] { floor } else { alphas[i] * scale };
            }
            return;
        }
    }
}

fn observed_aux(slots: &[Slot], forced: &[bool]) -> Vec<bool> {
    slots.iter().zip(forced).map(|(s, f)| matches!(s, Slot::Aux(_)) && !f).collect()
}

/// Feature to AuxLayer node assignment.
#[derive(Debug, Clone, Default)]
pub struct AuxLayer {
    pub aux_nodes: BTreeMap<FeatureId, usize>,
    pub non_aux: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxDropConfig {
    /// Hidden layers including the AuxLayer.
    pub max_num_hidden_layers: usize,
    pub neuron_per_hidden_layer: usize,
    pub n_neuron_aux_layer: usize,
    /// AuxLayer nodes that receive only a bias.
    pub n_non_aux: usize,
    /// Hedge discount.
    pub b: f64,
    /// Hedge smoothing.
    pub s: f64,
    pub lr: f64,
    pub dropout_p: f64,
}

impl Default for AuxDropConfig {
    fn default() -> Self {
        Self {
            max_num_hidden_layers: 6,
            neuron_per_hidden_layer: 50,
            n_neuron_aux_layer: 100,
            n_non_aux: 0,
            b: 0.99,
            s: 0.2,
            lr: 0.05,
            dropout_p: 0.3,
        }
    }
}

impl AuxDropConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.max_num_hidden_layers == 0 || self.neuron_per_hidden_layer == 0 {
            return Err(LearnerError::Config("auxdrop needs at least one hidden layer of positive width".into()));
        }
        if self.n_non_aux >= self.n_neuron_aux_layer {
            return Err(LearnerError::Config("auxdrop.n_non_aux must be below n_neuron_aux_layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(LearnerError::Config("auxdrop.dropout_p must be in [0, 1)".into()));
        }
        if !(self.b > 0.0 && self.b <= 1.0) || !(0.0..=1.0).contains(&self.s) {
            return Err(LearnerError::Config("auxdrop needs b in (0, 1] and s in [0, 1]".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(LearnerError::Config("auxdrop.lr must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AuxDrop {
    cfg: AuxDropConfig,
    rng: ChaCha8Rng,
    params: MlpParams,
    alphas: Vec<f64>,
    aux: AuxLayer,
    pending: Option<Forward>,
    error: Option<LearnerError>,
}

impl AuxDrop {
    pub fn new(cfg: AuxDropConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hidden = vec![cfg.n_neuron_aux_layer];
        hidden.extend(std::iter::repeat_n(cfg.neuron_per_hidden_layer, cfg.max_num_hidden_layers - 1));
        let mut params = MlpParams::new(&hidden, &mut rng);
        // unassigned slots stay silent until a feature claims them
        for j in cfg.n_non_aux..cfg.n_neuron_aux_layer {
            params.silence_aux(j);
        }
        for j in 0..cfg.n_non_aux {
            params.aux_c[j] = rng.gen_range(-1.0..1.0);
        }
        let depth = hidden.len();
        let aux = AuxLayer { aux_nodes: BTreeMap::new(), non_aux: cfg.n_non_aux, size: cfg.n_neuron_aux_layer };
        Ok(Self { cfg, rng, params, alphas: vec![1.0 / depth as f64; depth], aux, pending: None, error: None })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn aux_layer(&self) -> &AuxLayer {
        &self.aux
    }

    /// Assign fresh AuxLayer nodes to `features` not yet mapped. Incoming
    /// weights are drawn, outgoing weights stay zero, so outputs do not move.
    pub fn grow_aux_nodes(&mut self, features: &[FeatureId]) -> Result<(), LearnerError> {
        for &f in features {
            if self.aux.aux_nodes.contains_key(&f) {
                continue;
            }
            let j = self.aux.non_aux + self.aux.aux_nodes.len();
            if j >= self.aux.size {
                return Err(LearnerError::CapacityExhausted { feature: f.to_string() });
            }
            self.aux.aux_nodes.insert(f, j);
            self.params.aux_u[j] = self.rng.gen_range(-1.0..1.0);
            self.params.aux_c[j] = 1.0;
        }
        Ok(())
    }

    /// Inputs per AuxLayer node and the forced drop set (assigned nodes of
    /// features missing from `x`).
    fn slots(&self, x: &HaphazardInstance) -> (Vec<Slot>, Vec<bool>) {
        let mut slots = vec![Slot::Dormant; self.aux.size];
        let mut forced = vec![false; self.aux.size];
        for s in slots.iter_mut().take(self.aux.non_aux) {
            *s = Slot::Bias;
        }
        for (&f, &j) in &self.aux.aux_nodes {
            match x.get(f) {
                Some(v) => slots[j] = Slot::Aux(v),
                None => {
                    slots[j] = Slot::Aux(0.0);
                    forced[j] = true;
                }
            }
        }
        (slots, forced)
    }

    /// Drop mask with inverted-dropout scaling: forced drops first, then
    /// uniform extra drops up to ⌈d·size⌉ in total, taken from nodes that
    /// carry no observed feature.
    pub fn drop_mask(&mut self, forced: &[bool], observed: &[bool]) -> Vec<f64> {
        let size = forced.len();
        let target = (self.cfg.dropout_p * size as f64).ceil() as usize;
        let mut dropped = forced.to_vec();
        let n_forced = forced.iter().filter(|f| **f).count();
        if n_forced < target {
            let free: Vec<usize> = (0..size).filter(|&j| !forced[j] && !observed[j]).collect();
            let extra = (target - n_forced).min(free.len());
            for i in sample(&mut self.rng, free.len(), extra) {
                dropped[free[i]] = true;
            }
        }
        let n_dropped = dropped.iter().filter(|d| **d).count();
        let scale = if n_dropped < size { 1.0 / (1.0 - n_dropped as f64 / size as f64) } else { 0.0 };
        dropped.iter().map(|&d| if d { 0.0 } else { scale }).collect()
    }

    fn score(&self, fwd: &Forward) -> f64 {
        fwd.heads.iter().zip(&self.alphas).map(|(h, a)| h * a).sum::<f64>().clamp(0.0, 1.0)
    }
}

impl OnlineLearner for AuxDrop {
    fn name(&self) -> &'static str {
        "auxdrop"
    }

    fn predict(&mut self, x: &HaphazardInstance) -> Prediction {
        let ids: Vec<FeatureId> = x.ids().collect();
        if let Err(e) = self.grow_aux_nodes(&ids) {
            self.error.get_or_insert(e);
        }
        let (slots, forced) = self.slots(x);
        let keep = self.drop_mask(&forced, &observed_aux(&slots, &forced));
        let fwd = self.params.forward(&slots, &keep);
        let score = self.score(&fwd);
        self.pending = Some(fwd);
        Prediction { class: u8::from(score > 0.5), score }
    }

    fn update(&mut self, _x: &HaphazardInstance, label: u8) -> Result<(), LearnerError> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let fwd = self.pending.take().ok_or_else(|| LearnerError::Protocol("auxdrop update without prediction".into()))?;
        let y = f64::from(label);
        let losses: Vec<f64> = fwd.heads.iter().map(|o| bce(*o, y)).collect();
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(LearnerError::Diverged("auxdrop loss is not finite".into()));
        }
        let grad = self.params.gradient(&fwd, label, &self.alphas);
        self.params.step(&grad, self.cfg.lr);
        hedge_update(&mut self.alphas, &losses, self.cfg.b, self.cfg.s);
        if self.params.flat().iter().any(|p| !p.is_finite()) {
            return Err(LearnerError::Diverged("auxdrop parameters are not finite".into()));
        }
        Ok(())
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}
