//! Online learners for haphazard streams.
//!
//! Every learner follows the same prequential contract: [`OnlineLearner::predict`]
//! is called on an instance first, then [`OnlineLearner::update`] with its
//! label. Learners that need the forward pass (Aux-Drop) or the emitted
//! prediction (OLVF) cache it between the two calls.

use thiserror::Error;

use crate::feature_space::HaphazardInstance;

pub mod bayes;
pub mod deep;
pub mod linear;
pub mod stumps;

pub use bayes::{Fae, FaeConfig, Nb3, Nb3Config};
pub use deep::{AuxDrop, AuxDropConfig};
pub use linear::{Ocds, OcdsConfig, Olvf, OlvfConfig};
pub use stumps::{DynFo, DynFoConfig, Orf3v, Orf3vConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("learner diverged: {0}")]
    Diverged(String),
    #[error("aux layer capacity exhausted while adding feature {feature}")]
    CapacityExhausted { feature: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: u8,
    /// Estimated probability of class 1, in `[0, 1]`.
    pub score: f64,
}

impl Prediction {
    pub fn from_score(score: f64) -> Self {
        let score = if score.is_finite() { score.clamp(0.0, 1.0) } else { 0.5 };
        Self { class: u8::from(score > 0.5), score }
    }
}

pub trait OnlineLearner: Send {
    fn name(&self) -> &'static str;

    fn predict(&mut self, x: &HaphazardInstance) -> Prediction;

    fn update(&mut self, x: &HaphazardInstance, label: u8) -> Result<(), LearnerError>;

    /// Same output for every seed.
    fn is_deterministic(&self) -> bool;
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Map {0,1} to {-1,+1}.
pub(crate) fn signed(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Wraps a learner and enforces predict-then-update on each instance,
/// exactly once per instance.
pub struct Prequential<L> {
    inner: L,
    pending: Option<u64>,
    processed: u64,
    last_t: Option<u64>,
}

impl<L: OnlineLearner> Prequential<L> {
    pub fn new(inner: L) -> Self {
        Self { inner, pending: None, processed: 0, last_t: None }
    }

    pub fn predict(&mut self, x: &HaphazardInstance) -> Result<Prediction, LearnerError> {
        if let Some(t) = self.pending {
            return Err(LearnerError::Protocol(format!("instance {t} predicted but never trained")));
        }
        if self.last_t.is_some_and(|last| x.t() <= last) {
            return Err(LearnerError::Protocol(format!("instance {} visited twice or out of order", x.t())));
        }
        self.pending = Some(x.t());
        Ok(self.inner.predict(x))
    }

    pub fn update(&mut self, x: &HaphazardInstance) -> Result<(), LearnerError> {
        match self.pending.take() {
            Some(t) if t == x.t() => {}
            _ => return Err(LearnerError::Protocol(format!("update on {} without prediction", x.t()))),
        }
        self.last_t = Some(x.t());
        self.processed += 1;
        self.inner.update(x, x.label())
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }

    pub fn into_inner(self) -> L {
        self.inner
    }
}

impl OnlineLearner for Box<dyn OnlineLearner> {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn predict(&mut self, x: &HaphazardInstance) -> Prediction {
        (**self).predict(x)
    }
    fn update(&mut self, x: &HaphazardInstance, label: u8) -> Result<(), LearnerError> {
        (**self).update(x, label)
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}
