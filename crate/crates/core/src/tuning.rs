//! Exhaustive grid search over model hyperparameters, scored on the
//! validation holdout.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{build_tensor, SplitBundle, Stage};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_contexts, MetricsReport};
use crate::linalg::hooi::HooiOptions;
use crate::models::{train, ContextAggregation, ContextName, ModelConfig, ModelKind};
use crate::similarity::{DependencyLaw, LawKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Mcc,
    HrPos,
}

impl Target {
    pub fn of(self, r: &MetricsReport) -> f64 {
        match self {
            Target::Mcc => r.mcc,
            Target::HrPos => r.hr_pos,
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcc" => Ok(Target::Mcc),
            "hr" | "hr_pos" | "hr-pos" => Ok(Target::HrPos),
            _ => Err(Error::InvalidConfig(format!("unknown target '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub normalization_factors: Vec<f64>,
    /// Shared user/item rank candidates.
    pub rank_grid: Vec<usize>,
    pub rating_ranks: Vec<usize>,
    pub l2_grid: Vec<f64>,
    pub laws: Vec<DependencyLaw>,
    pub contexts: Vec<ContextAggregation>,
    /// Normalization factor used by tensor models, normally PureSVD's best.
    pub tensor_normalization: f64,
    pub hooi: HooiOptions,
    pub seed: u64,
    pub n: usize,
    pub threshold: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            normalization_factors: (0..=20).map(|i| i as f64 / 10.0).collect(),
            rank_grid: (5..=8).flat_map(|i| [2usize << i, 3usize << i]).collect(),
            rating_ranks: (2..=5).collect(),
            l2_grid: (1..=19).map(|i| 50.0 * i as f64).collect(),
            laws: LawKind::SMOOTHING.iter().map(|&k| k.into()).collect(),
            contexts: ContextName::ALL
                .iter()
                .map(|&c| ContextAggregation::named(c, 5).expect("five-value scale"))
                .collect(),
            tensor_normalization: 1.0,
            hooi: HooiOptions::default(),
            seed: 0,
            n: 10,
            threshold: 3,
        }
    }
}

impl GridSpec {
    /// Grid points for `kind`, in search order.
    pub fn configs(&self, kind: ModelKind) -> Vec<ModelConfig> {
        let tensor_ranks = || {
            self.rank_grid
                .iter()
                .flat_map(move |&r| self.rating_ranks.iter().map(move |&r3| (r, r, r3)))
        };
        match kind {
            ModelKind::Random => vec![ModelConfig::Random { seed: self.seed }],
            ModelKind::MostPopular => vec![ModelConfig::MostPopular],
            ModelKind::PureSvd => self
                .rank_grid
                .iter()
                .flat_map(|&rank| {
                    self.normalization_factors.iter().map(move |&f| ModelConfig::PureSvd {
                        rank,
                        normalization_factor: f,
                        seed: self.seed,
                    })
                })
                .collect(),
            ModelKind::Ease => self.l2_grid.iter().map(|&l2| ModelConfig::Ease { l2 }).collect(),
            ModelKind::Coffee => tensor_ranks()
                .map(|ranks| ModelConfig::Coffee {
                    ranks,
                    normalization_factor: self.tensor_normalization,
                    hooi: HooiOptions { seed: self.seed, ..self.hooi },
                })
                .collect(),
            ModelKind::Latte => self
                .laws
                .iter()
                .flat_map(|&law| {
                    tensor_ranks().map(move |ranks| ModelConfig::Latte {
                        ranks,
                        normalization_factor: self.tensor_normalization,
                        law,
                        hooi: HooiOptions { seed: self.seed, ..self.hooi },
                    })
                })
                .collect(),
        }
    }

    /// Number of trace entries `tune` produces for `kind`.
    pub fn trace_len(&self, kind: ModelKind) -> usize {
        let configs = self.configs(kind).len();
        if kind.is_tensor() {
            configs * self.contexts.len()
        } else {
            configs
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub config: ModelConfig,
    /// `None` for models that score items directly.
    pub context: Option<ContextAggregation>,
    /// Validation metrics, or the reason the grid point failed.
    pub outcome: std::result::Result<MetricsReport, String>,
}

impl TraceEntry {
    pub fn metric(&self, target: Target) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| target.of(r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_config: ModelConfig,
    pub best_context: Option<ContextAggregation>,
    pub best_metric: f64,
    pub best_report: MetricsReport,
    pub target: Target,
    pub trace: Vec<TraceEntry>,
}

/// Trains every grid point for `kind` on the training part and evaluates it on
/// the validation holdout. The best entry maximizes `target`; ties go to the
/// smaller model, then to the earlier grid point.
pub fn tune(kind: ModelKind, grid: &GridSpec, bundle: &SplitBundle, target: Target) -> Result<TuneResult> {
    let configs = grid.configs(kind);
    if configs.is_empty() || (kind.is_tensor() && grid.contexts.is_empty()) {
        return Err(Error::InvalidConfig(format!("empty grid for {kind}")));
    }
    let tensor = build_tensor(&bundle.train);
    let passthrough = [ContextAggregation::custom(Vec::new())];
    let contexts: &[ContextAggregation] = if kind.is_tensor() { &grid.contexts } else { &passthrough };

    let mut trace = Vec::with_capacity(configs.len() * contexts.len());
    for config in configs {
        let reports = train(&config, &bundle.train, &tensor).and_then(|model| {
            evaluate_contexts(&model, bundle, Stage::Validation, contexts, grid.n, grid.threshold)
        });
        match reports {
            Ok(reports) => {
                for (ctx, report) in contexts.iter().zip(reports) {
                    trace.push(TraceEntry {
                        config: config.clone(),
                        context: kind.is_tensor().then(|| ctx.clone()),
                        outcome: Ok(report),
                    });
                }
            }
            Err(e) => {
                for ctx in contexts {
                    trace.push(TraceEntry {
                        config: config.clone(),
                        context: kind.is_tensor().then(|| ctx.clone()),
                        outcome: Err(e.to_string()),
                    });
                }
            }
        }
    }

    let mut best: Option<usize> = None;
    for (i, entry) in trace.iter().enumerate() {
        let Some(m) = entry.metric(target) else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bm = trace[b].metric(target).expect("scored");
                m > bm || (m == bm && entry.config.size_key() < trace[b].config.size_key())
            }
        };
        if better {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        let causes: Vec<String> = trace
            .iter()
            .filter_map(|e| e.outcome.as_ref().err().map(|msg| format!("{}: {msg}", e.config.describe())))
            .collect();
        return Err(Error::AllConfigsFailed(causes.join("\n")));
    };
    let winner = &trace[b];
    let best_report = winner.outcome.clone().expect("scored");
    Ok(TuneResult {
        best_config: winner.config.clone(),
        best_context: winner.context.clone(),
        best_metric: target.of(&best_report),
        best_report,
        target,
        trace,
    })
}
