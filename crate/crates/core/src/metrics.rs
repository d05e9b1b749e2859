//! Prequential metrics for one run, cross-model aggregate comparison
//! metrics, and an energy/carbon estimate from wall time.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("class value must be 0 or 1, got {0}")]
    InvalidClass(u8),
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub predicted: u8,
    pub label: u8,
}

/// Confusion counts plus every (score, prediction, label) triple in arrival order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricAccumulator {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    scored: Vec<Scored>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, score: f64, predicted: u8, label: u8) -> Result<(), MetricError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(MetricError::ScoreOutOfRange(score));
        }
        for c in [predicted, label] {
            if c > 1 {
                return Err(MetricError::InvalidClass(c));
            }
        }
        match (predicted, label) {
            (1, 1) => self.tp += 1,
            (1, 0) => self.fp += 1,
            (0, 0) => self.tn += 1,
            _ => self.fn_ += 1,
        }
        self.scored.push(Scored { score, predicted, label });
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.scored.len() as u64
    }

    pub fn scored(&self) -> &[Scored] {
        &self.scored
    }

    pub fn errors(&self) -> u64 {
        self.fp + self.fn_
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    /// Recount of correct predictions from the stored triples.
    pub fn recount_correct(&self) -> u64 {
        self.scored.iter().filter(|s| s.predicted == s.label).count() as u64
    }

    pub fn accuracy(&self) -> Result<f64, MetricError> {
        if self.n() == 0 {
            return Err(MetricError::Undefined("no instances"));
        }
        Ok(self.correct() as f64 / self.n() as f64)
    }

    /// Only one class occurred, so balanced accuracy is a single rate.
    pub fn is_degenerate(&self) -> bool {
        (self.tp + self.fn_ == 0) != (self.tn + self.fp == 0)
    }

    pub fn balanced_accuracy(&self) -> Result<f64, MetricError> {
        let pos = self.tp + self.fn_;
        let neg = self.tn + self.fp;
        let sensitivity = (pos > 0).then(|| self.tp as f64 / pos as f64);
        let specificity = (neg > 0).then(|| self.tn as f64 / neg as f64);
        match (sensitivity, specificity) {
            (Some(a), Some(b)) => Ok((a + b) / 2.0),
            (Some(a), None) | (None, Some(a)) => Ok(a),
            (None, None) => Err(MetricError::Undefined("no instances")),
        }
    }

    pub fn classification_error_rate(&self) -> Result<f64, MetricError> {
        self.accuracy().map(|a| 1.0 - a)
    }

    pub fn score_label_pairs(&self) -> Vec<(f64, u8)> {
        self.scored.iter().map(|s| (s.score, s.label)).collect()
    }

    pub fn finish(&self, wall_time_s: f64) -> Result<MetricsReport, MetricError> {
        let pairs = self.score_label_pairs();
        Ok(MetricsReport {
            n: self.n(),
            errors: self.errors(),
            accuracy: self.accuracy()?,
            balanced_accuracy: self.balanced_accuracy()?,
            auroc: auroc(&pairs).ok(),
            auprc: auprc(&pairs).ok(),
            degenerate: self.is_degenerate(),
            wall_time_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub errors: u64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// `None` when only one class occurred.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub degenerate: bool,
    pub wall_time_s: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "bAcc,Time,Err,Acc,ROC,PRC";

    /// Table layout: rates in percent, time in seconds.
    pub fn csv_row(&self) -> String {
        let pct = |v: Option<f64>| v.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_else(|| "-".into());
        format!(
            "{},{:.2},{},{},{},{}",
            pct(Some(self.balanced_accuracy)),
            self.wall_time_s,
            self.errors,
            pct(Some(self.accuracy)),
            pct(self.auroc),
            pct(self.auprc)
        )
    }
}

fn check_two_classes(pairs: &[(f64, u8)]) -> Result<(usize, usize), MetricError> {
    let pos = pairs.iter().filter(|p| p.1 == 1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("needs both classes"));
    }
    Ok((pos, neg))
}

fn sorted_desc(pairs: &[(f64, u8)]) -> Vec<(f64, u8)> {
    let mut v = pairs.to_vec();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    v
}

/// Probability that a random positive outscores a random negative, ties half.
pub fn auroc(pairs: &[(f64, u8)]) -> Result<f64, MetricError> {
    let (pos, neg) = check_two_classes(pairs)?;
    let v = sorted_desc(pairs);
    // Walk tie groups from the top; each positive beats all negatives below its group.
    let mut negatives_below = neg as f64;
    let mut wins = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        let (mut p, mut n) = (0.0, 0.0);
        while j < v.len() && v[j].0 == v[i].0 {
            if v[j].1 == 1 {
                p += 1.0;
            } else {
                n += 1.0;
            }
            j += 1;
        }
        negatives_below -= n;
        wins += p * (negatives_below + 0.5 * n);
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Average precision: sum over distinct thresholds of recall increment
/// times precision at that threshold.
pub fn auprc(pairs: &[(f64, u8)]) -> Result<f64, MetricError> {
    let (pos, _) = check_two_classes(pairs)?;
    let v = sorted_desc(pairs);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j].0 == v[i].0 {
            if v[j].1 == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        let recall = tp / pos as f64;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Percentage change from `from` to `to`.
pub fn percent_change(from: f64, to: f64) -> f64 {
    (to - from) / from * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecreasePenalty {
    /// `(1 + |n|)^2`; the form that reproduces the published comparison table.
    #[default]
    ShiftedSquare,
    /// `1 + |n|^2`, as the formula is printed.
    SquarePlusOne,
}

/// `sum_{inc}(1 + p) / sum_{dec} penalty(n)`; numerator 0 with no increases,
/// denominator 1 with no decreases.
pub fn data_scalability_measure(changes: &[f64], penalty: DecreasePenalty) -> f64 {
    let num: f64 = changes.iter().filter(|&&c| c >= 0.0).map(|c| 1.0 + c).sum();
    let decs: Vec<f64> = changes.iter().filter(|&&c| c < 0.0).map(|c| c.abs()).collect();
    if decs.is_empty() {
        return num;
    }
    let den: f64 = decs
        .iter()
        .map(|n| match penalty {
            DecreasePenalty::ShiftedSquare => (1.0 + n).powi(2),
            DecreasePenalty::SquarePlusOne => 1.0 + n * n,
        })
        .sum();
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeGroup {
    Small,
    Medium,
    Large,
}

impl SizeGroup {
    pub const ALL: [SizeGroup; 3] = [SizeGroup::Small, SizeGroup::Medium, SizeGroup::Large];

    /// Below 10k instances is small, below 100k medium.
    pub fn from_instances(n: usize) -> Self {
        match n {
            0..=9_999 => SizeGroup::Small,
            10_000..=99_999 => SizeGroup::Medium,
            _ => SizeGroup::Large,
        }
    }
}

impl std::str::FromStr for SizeGroup {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(Self::Small),
            "medium" => Ok(Self::Medium),
            "large" => Ok(Self::Large),
            _ => Err(format!("unknown size group {s:?}")),
        }
    }
}

/// One model's averages over the datasets of one size group. `mean_std` is
/// `None` for models that ran once per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub mean_bacc: f64,
    pub mean_std: Option<f64>,
    pub mean_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelGroups {
    pub small: Option<GroupSummary>,
    pub medium: Option<GroupSummary>,
    pub large: Option<GroupSummary>,
    /// Wall time on the low- and high-dimensional datasets of equal length
    /// (SUSY and HIGGS at p = 0.5 in the reference benchmark).
    pub low_dim_time: Option<f64>,
    pub high_dim_time: Option<f64>,
}

impl ModelGroups {
    pub fn get(&self, g: SizeGroup) -> Option<&GroupSummary> {
        match g {
            SizeGroup::Small => self.small.as_ref(),
            SizeGroup::Medium => self.medium.as_ref(),
            SizeGroup::Large => self.large.as_ref(),
        }
    }

    pub fn set(&mut self, g: SizeGroup, s: GroupSummary) {
        match g {
            SizeGroup::Small => self.small = Some(s),
            SizeGroup::Medium => self.medium = Some(s),
            SizeGroup::Large => self.large = Some(s),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub performance: Option<f64>,
    /// Percent changes small→medium and medium→large.
    pub changes: Vec<f64>,
    pub data_scalability: Option<f64>,
    pub prediction_consistency: Option<f64>,
    pub average_time: Option<f64>,
    pub speed: Option<f64>,
    pub feature_scalability: Option<f64>,
    pub gaps: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn aggregate_report(groups: &ModelGroups, penalty: DecreasePenalty) -> AggregateReport {
    let mut out = AggregateReport::default();
    let present: Vec<(SizeGroup, &GroupSummary)> =
        SizeGroup::ALL.iter().filter_map(|&g| groups.get(g).map(|s| (g, s))).collect();
    for g in SizeGroup::ALL {
        if groups.get(g).is_none() {
            out.gaps.push(format!("missing {g:?} group"));
        }
    }
    if present.len() == 3 {
        let b: Vec<f64> = present.iter().map(|(_, s)| s.mean_bacc).collect();
        out.performance = Some(mean(&b));
        out.changes = vec![percent_change(b[0], b[1]), percent_change(b[1], b[2])];
        out.data_scalability = Some(data_scalability_measure(&out.changes, penalty));
    }
    if !present.is_empty() {
        let t: Vec<f64> = present.iter().map(|(_, s)| s.mean_time).collect();
        let avg = mean(&t);
        out.average_time = Some(avg);
        out.speed = (avg > 0.0).then(|| 1.0 / avg);
        let stds: Option<Vec<f64>> = present.iter().map(|(_, s)| s.mean_std).collect();
        match stds {
            Some(s) => out.prediction_consistency = Some(mean(&s)),
            None => out.gaps.push("prediction consistency not applicable".into()),
        }
    }
    match (groups.low_dim_time, groups.high_dim_time) {
        (Some(lo), Some(hi)) if lo > 0.0 => out.feature_scalability = Some(hi / lo),
        _ => out.gaps.push("missing feature-scalability timing pair".into()),
    }
    out
}

/// Star ratings, 1 (worst) to 5 (best), using the published bin edges.
pub mod stars {
    /// Five equal-width bins between the worst and best performance.
    pub fn performance(value: f64, worst: f64, best: f64) -> u8 {
        let step = (best - worst) / 5.0;
        if step <= 0.0 {
            return 5;
        }
        // bin edges are quoted to two decimals
        for k in (1..5).rev() {
            let edge = ((worst + k as f64 * step) * 100.0).round() / 100.0;
            if value >= edge - 1e-9 {
                return k as u8 + 1;
            }
        }
        1
    }

    pub fn data_scalability(measure: f64) -> u8 {
        match measure {
            m if m < 0.08 => 1,
            m if m < 0.15 => 2,
            m if m < 0.23 => 3,
            m if m < 0.3 => 4,
            _ => 5,
        }
    }

    /// Lower average std is better.
    pub fn prediction_consistency(avg_std: f64) -> u8 {
        match avg_std {
            s if s < 0.43 => 5,
            s if s < 0.65 => 4,
            s if s < 0.87 => 3,
            s if s < 1.09 => 2,
            _ => 1,
        }
    }

    /// Bins on log10 of the average time in seconds.
    pub fn speed(avg_time_s: f64) -> u8 {
        match avg_time_s.log10() {
            l if l <= 2.0 => 5,
            l if l <= 3.0 => 4,
            l if l <= 4.0 => 3,
            l if l <= 5.0 => 2,
            _ => 1,
        }
    }

    pub fn feature_scalability(ratio: f64) -> u8 {
        match ratio {
            r if r < 1.84 => 5,
            r if r < 2.68 => 4,
            r if r < 3.52 => 3,
            r if r < 4.36 => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub cores: u32,
    pub power_per_core_w: f64,
    pub memory_power_w: f64,
    pub pue: f64,
    pub carbon_intensity_g_per_kwh: f64,
}

impl HardwareProfile {
    /// 128 CPU cores at 12 W, 1 TB of memory at 0.3725 W/GB, local-server
    /// PUE 1.67, Norwegian grid at 7.62 gCO2e/kWh.
    pub fn dgx_a100_cpu() -> Self {
        Self {
            cores: 128,
            power_per_core_w: 12.0,
            memory_power_w: 1024.0 * 0.3725,
            pue: 1.67,
            carbon_intensity_g_per_kwh: 7.62,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [self.power_per_core_w, self.memory_power_w, self.carbon_intensity_g_per_kwh];
        if self.cores == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("hardware profile fields must be positive".into());
        }
        if self.pue.is_nan() || self.pue < 1.0 {
            return Err("pue must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarbonEstimate {
    pub energy_kwh: f64,
    pub carbon_kg: f64,
}

pub fn carbon_estimate(wall_time_s: f64, profile: &HardwareProfile) -> CarbonEstimate {
    let hours = wall_time_s / 3600.0;
    let draw_kw = (profile.cores as f64 * profile.power_per_core_w + profile.memory_power_w) / 1000.0;
    let energy_kwh = hours * draw_kw * profile.pue;
    CarbonEstimate { energy_kwh, carbon_kg: energy_kwh * profile.carbon_intensity_g_per_kwh / 1000.0 }
}
