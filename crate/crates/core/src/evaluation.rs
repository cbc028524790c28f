//! Stratified top-n evaluation: hit rate and reciprocal rank computed
//! separately for positive and negative holdouts, catalog coverage, and the
//! Matthews correlation of the pooled confusion counts.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SplitBundle, Stage};
use crate::error::{Error, Result};
use crate::models::{aggregate_context, topn, user_key, ContextAggregation, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

/// A holdout rating at or above `threshold` is positive feedback.
pub fn classify(rating: u32, recommended: bool, threshold: u32) -> Outcome {
    match (recommended, rating >= threshold) {
        (true, true) => Outcome::TruePositive,
        (true, false) => Outcome::FalsePositive,
        (false, true) => Outcome::FalseNegative,
        (false, false) => Outcome::TrueNegative,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::TruePositive => self.tp += 1,
            Outcome::FalsePositive => self.fp += 1,
            Outcome::TrueNegative => self.tn += 1,
            Outcome::FalseNegative => self.fn_ += 1,
        }
    }
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let factors = [tp + fn_, tp + fp, tn + fp, tn + fn_];
    if factors.contains(&0.0) {
        return 0.0;
    }
    let denom = (factors[0] * factors[1]).sqrt() * (factors[2] * factors[3]).sqrt();
    ((tp * tn - fp * fn_) / denom).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr_pos: f64,
    pub hr_neg: f64,
    pub mrr_pos: f64,
    pub mrr_neg: f64,
    pub coverage: f64,
    pub mcc: f64,
    pub n: usize,
    pub threshold: u32,
    pub counts: ConfusionCounts,
    pub n_positive: u64,
    pub n_negative: u64,
    /// Set when there were no positive holdouts, so HR⁺ and MRR⁺ are 0 by convention.
    pub empty_positive: bool,
    /// Set when there were no negative holdouts, so HR⁻ and MRR⁻ are 0 by convention.
    pub empty_negative: bool,
}

impl MetricsReport {
    /// `(name, value)` pairs in report order.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("hr_pos", self.hr_pos),
            ("hr_neg", self.hr_neg),
            ("mrr_pos", self.mrr_pos),
            ("mrr_neg", self.mrr_neg),
            ("coverage", self.coverage),
            ("mcc", self.mcc),
            ("tp", self.counts.tp as f64),
            ("fp", self.counts.fp as f64),
            ("tn", self.counts.tn as f64),
            ("fn", self.counts.fn_ as f64),
        ]
    }

    /// `metric,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in self.rows() {
            let _ = writeln!(out, "{name},{value}");
        }
        let _ = writeln!(out, "n,{}", self.n);
        let _ = writeln!(out, "threshold,{}", self.threshold);
        out
    }

    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (name, value) in self.rows() {
            let flag = match name {
                "hr_pos" | "mrr_pos" if self.empty_positive => "  (no positive holdouts)",
                "hr_neg" | "mrr_neg" if self.empty_negative => "  (no negative holdouts)",
                _ => "",
            };
            let label = match name {
                "tp" | "fp" | "tn" | "fn" => name.to_string(),
                _ => format!("{name}@{}", self.n),
            };
            let _ = writeln!(out, "{label:<12} {value:>10.6}{flag}");
        }
        out
    }
}

/// One evaluated holdout entry: the recommendation list shown to the user,
/// the held-out item and its rating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub recommended: Vec<usize>,
    pub item: usize,
    pub rating: u32,
}

/// Metrics over precomputed recommendation lists. Reciprocal ranks are
/// accumulated as integer rank histograms, so the result does not depend on
/// the order of `cases`.
pub fn metrics_from_cases(cases: &[Case], n_train_items: usize, n: usize, threshold: u32) -> Result<MetricsReport> {
    if cases.is_empty() {
        return Err(Error::Empty("no holdout entries to evaluate".to_string()));
    }
    let mut counts = ConfusionCounts::default();
    let max_len = cases.iter().map(|c| c.recommended.len()).max().unwrap_or(0);
    let mut hits_pos = vec![0u64; max_len];
    let mut hits_neg = vec![0u64; max_len];
    let mut covered = HashSet::new();
    for case in cases {
        covered.extend(case.recommended.iter().copied());
        let rank = case.recommended.iter().position(|&j| j == case.item);
        let outcome = classify(case.rating, rank.is_some(), threshold);
        counts.record(outcome);
        match (outcome, rank) {
            (Outcome::TruePositive, Some(r)) => hits_pos[r] += 1,
            (Outcome::FalsePositive, Some(r)) => hits_neg[r] += 1,
            _ => {}
        }
    }
    let n_positive = counts.tp + counts.fn_;
    let n_negative = counts.fp + counts.tn;
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let rr = |hist: &[u64], den: u64| {
        if den == 0 {
            return 0.0;
        }
        hist.iter().enumerate().map(|(r, &c)| c as f64 / (r + 1) as f64).sum::<f64>() / den as f64
    };
    Ok(MetricsReport {
        hr_pos: ratio(counts.tp, n_positive),
        hr_neg: ratio(counts.fp, n_negative),
        mrr_pos: rr(&hits_pos, n_positive),
        mrr_neg: rr(&hits_neg, n_negative),
        coverage: ratio(covered.len() as u64, n_train_items as u64),
        mcc: mcc(&counts),
        n,
        threshold,
        counts,
        n_positive,
        n_negative,
        empty_positive: n_positive == 0,
        empty_negative: n_negative == 0,
    })
}

pub fn evaluate(
    model: &TrainedModel,
    bundle: &SplitBundle,
    stage: Stage,
    ctx: &ContextAggregation,
    n: usize,
    threshold: u32,
) -> Result<MetricsReport> {
    let mut reports = evaluate_contexts(model, bundle, stage, std::slice::from_ref(ctx), n, threshold)?;
    Ok(reports.remove(0))
}

/// Evaluates several contexts from a single prediction pass per user.
pub fn evaluate_contexts(
    model: &TrainedModel,
    bundle: &SplitBundle,
    stage: Stage,
    contexts: &[ContextAggregation],
    n: usize,
    threshold: u32,
) -> Result<Vec<MetricsReport>> {
    let holdout = bundle.holdout(stage);
    if holdout.is_empty() {
        return Err(Error::Empty(format!("{stage:?} holdout is empty")));
    }
    if contexts.is_empty() {
        return Err(Error::InvalidConfig("no contexts to evaluate".to_string()));
    }
    let histories = bundle.histories(stage);
    let per_user: Vec<Vec<Case>> = holdout
        .par_iter()
        .zip(histories.par_iter())
        .map(|(entry, history)| {
            let slice = model.predict_slice(user_key(entry.user()), history)?;
            let seen: HashSet<usize> = history.iter().map(|&(j, _)| j).collect();
            contexts
                .iter()
                .map(|ctx| {
                    let scores = aggregate_context(&slice, ctx)?;
                    Ok(Case {
                        recommended: topn(&scores, n, &seen),
                        item: entry.item,
                        rating: entry.interaction.rating,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n_items = bundle.train.n_items();
    (0..contexts.len())
        .map(|c| {
            let cases: Vec<Case> = per_user.iter().map(|cs| cs[c].clone()).collect();
            metrics_from_cases(&cases, n_items, n, threshold)
        })
        .collect()
}
