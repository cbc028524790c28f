//! The model zoo: random, most popular, normalized PureSVD, EASE, CoFFee and
//! LaTTe, all scored by folding a user's history into fixed factors.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SparseTensor3};
use crate::error::{Error, Result};
use crate::linalg::hooi::{hooi_observed, HooiOptions, TuckerFactors};
use crate::linalg::svd::{truncated_svd, SparseMatrix};
use crate::linalg::tensor::FiberTensor;
use crate::similarity::{build_similarity, DependencyLaw, SimilarityMatrix};

/// Accuracy requested from PureSVD's truncated SVD.
const PURE_SVD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Random,
    MostPopular,
    PureSvd,
    Ease,
    Coffee,
    Latte,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Random,
        ModelKind::MostPopular,
        ModelKind::PureSvd,
        ModelKind::Ease,
        ModelKind::Coffee,
        ModelKind::Latte,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Random => "random",
            ModelKind::MostPopular => "most-popular",
            ModelKind::PureSvd => "pure-svd",
            ModelKind::Ease => "ease",
            ModelKind::Coffee => "coffee",
            ModelKind::Latte => "latte",
        }
    }

    pub fn is_tensor(self) -> bool {
        matches!(self, ModelKind::Coffee | ModelKind::Latte)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "mp" && *k == ModelKind::MostPopular))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model '{s}'")))
    }
}

/// Hyperparameters, carrying exactly the fields each model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelConfig {
    Random {
        seed: u64,
    },
    MostPopular,
    PureSvd {
        rank: usize,
        normalization_factor: f64,
        seed: u64,
    },
    Ease {
        l2: f64,
    },
    Coffee {
        ranks: (usize, usize, usize),
        normalization_factor: f64,
        hooi: HooiOptions,
    },
    Latte {
        ranks: (usize, usize, usize),
        normalization_factor: f64,
        law: DependencyLaw,
        hooi: HooiOptions,
    },
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Random { .. } => ModelKind::Random,
            ModelConfig::MostPopular => ModelKind::MostPopular,
            ModelConfig::PureSvd { .. } => ModelKind::PureSvd,
            ModelConfig::Ease { .. } => ModelKind::Ease,
            ModelConfig::Coffee { .. } => ModelKind::Coffee,
            ModelConfig::Latte { .. } => ModelKind::Latte,
        }
    }

    /// Size key used to prefer smaller models on ties.
    pub fn size_key(&self) -> (usize, usize) {
        match self {
            ModelConfig::PureSvd { rank, .. } => (*rank, 0),
            ModelConfig::Coffee { ranks, .. } | ModelConfig::Latte { ranks, .. } => (ranks.0.max(ranks.1), ranks.2),
            _ => (0, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_norm = |f: f64| {
            if (0.0..=2.0).contains(&f) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("normalization factor {f} outside [0, 2]")))
            }
        };
        match self {
            ModelConfig::PureSvd { rank, normalization_factor, .. } => {
                if *rank == 0 {
                    return Err(Error::InvalidConfig("rank must be positive".to_string()));
                }
                check_norm(*normalization_factor)
            }
            ModelConfig::Ease { l2 } if !l2.is_finite() || *l2 < 0.0 => {
                Err(Error::InvalidConfig(format!("l2 must be a non-negative number, got {l2}")))
            }
            ModelConfig::Coffee { normalization_factor, .. } => check_norm(*normalization_factor),
            ModelConfig::Latte { normalization_factor, .. } => check_norm(*normalization_factor),
            _ => Ok(()),
        }
    }

    /// Short human-readable description of the hyperparameters.
    pub fn describe(&self) -> String {
        match self {
            ModelConfig::Random { seed } => format!("random(seed={seed})"),
            ModelConfig::MostPopular => "most-popular".to_string(),
            ModelConfig::PureSvd { rank, normalization_factor, .. } => {
                format!("pure-svd(rank={rank}, f={normalization_factor:.1})")
            }
            ModelConfig::Ease { l2 } => format!("ease(l2={l2})"),
            ModelConfig::Coffee { ranks, normalization_factor, .. } => format!(
                "coffee(ranks={},{},{}, f={normalization_factor:.1})",
                ranks.0, ranks.1, ranks.2
            ),
            ModelConfig::Latte { ranks, normalization_factor, law, .. } => format!(
                "latte(ranks={},{},{}, f={normalization_factor:.1}, law={})",
                ranks.0, ranks.1, ranks.2, law.kind
            ),
        }
    }
}

/// Rating-mode factors of a tensor model plus the fixed `K × K` map applied
/// to a folded-in history (`W Wᵀ` for CoFFee,
/// `K^{1/2} W Wᵀ K^{-1/2}` for LaTTe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorModel {
    pub factors: TuckerFactors,
    /// Rating factors in the original space (`K^{-1/2} Ŵ` for LaTTe).
    pub w: DMatrix<f64>,
    pub similarity: Option<SimilarityMatrix>,
    pub rating_map: DMatrix<f64>,
    /// Per-item history weights `d_j^{f-1}`.
    pub item_scaling: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    Random {
        seed: u64,
        n_items: usize,
        k: usize,
    },
    MostPopular {
        popularity: Vec<f64>,
        k: usize,
    },
    PureSvd {
        v: DMatrix<f64>,
        item_scaling: Vec<f64>,
        rating_values: Vec<f64>,
    },
    Ease {
        b: DMatrix<f64>,
        k: usize,
    },
    Coffee(TensorModel),
    Latte(TensorModel),
}

/// Scores for one user.
#[derive(Debug, Clone, PartialEq)]
pub enum Scores {
    /// One score per item.
    Items(Vec<f64>),
    /// `N × K`: one score per item and rating value.
    ItemsByRating(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSlice {
    pub user: u64,
    pub scores: Scores,
}

/// Stable 64-bit key for an external user id (FNV-1a).
pub fn user_key(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn item_scaling(norms: &[f64], factor: f64) -> Vec<f64> {
    norms
        .iter()
        .map(|&d| if d > 0.0 { d.powf(factor - 1.0) } else { 0.0 })
        .collect()
}

/// Item-column Euclidean norms of the binary tensor, `sqrt(#entries of j)`.
fn tensor_item_norms(t: &SparseTensor3) -> Vec<f64> {
    let mut counts = vec![0.0; t.dims.1];
    for &(_, j, _) in &t.entries {
        counts[j] += 1.0;
    }
    counts.into_iter().map(f64::sqrt).collect()
}

pub fn train(config: &ModelConfig, train: &Dataset, tensor: &SparseTensor3) -> Result<TrainedModel> {
    config.validate()?;
    let (m, n, k) = tensor.dims;
    if (m, n, k) != (train.n_users(), train.n_items(), train.scale().k()) {
        return Err(Error::DimensionMismatch(format!(
            "tensor dims {:?} do not match the training data ({}, {}, {})",
            tensor.dims,
            train.n_users(),
            train.n_items(),
            train.scale().k()
        )));
    }
    match config {
        ModelConfig::Random { seed } => Ok(TrainedModel::Random { seed: *seed, n_items: n, k }),
        ModelConfig::MostPopular => {
            let mut popularity = vec![0.0; n];
            for it in train.interactions() {
                popularity[train.items().get(&it.item).expect("indexed")] += 1.0;
            }
            Ok(TrainedModel::MostPopular { popularity, k })
        }
        ModelConfig::PureSvd { rank, normalization_factor, seed } => {
            let rating_values: Vec<f64> = train.scale().values().iter().map(|&v| v as f64).collect();
            let entries = tensor.entries.iter().map(|&(i, j, kk)| (i, j, rating_values[kk])).collect();
            let r = SparseMatrix::new(m, n, entries)?;
            let item_scaling = item_scaling(&r.column_norms(), *normalization_factor);
            let scaled = r.scale_columns(&item_scaling);
            let svd = truncated_svd(&scaled, *rank, *seed, PURE_SVD_TOL)?;
            Ok(TrainedModel::PureSvd {
                v: svd.v,
                item_scaling,
                rating_values,
            })
        }
        ModelConfig::Ease { l2 } => train_ease(tensor, *l2).map(|b| TrainedModel::Ease { b, k }),
        ModelConfig::Coffee { ranks, normalization_factor, hooi } => {
            let scaling = item_scaling(&tensor_item_norms(tensor), *normalization_factor);
            let x = FiberTensor::from_sparse(tensor, Some(&scaling), None)?;
            let factors = hooi_observed(&x, *ranks, *hooi, |_| {})?;
            let w = factors.w.clone();
            let rating_map = &w * w.transpose();
            Ok(TrainedModel::Coffee(TensorModel {
                factors,
                w,
                similarity: None,
                rating_map,
                item_scaling: scaling,
            }))
        }
        ModelConfig::Latte { ranks, normalization_factor, law, hooi } => {
            let sim = build_similarity(*law, k)?;
            let scaling = item_scaling(&tensor_item_norms(tensor), *normalization_factor);
            let x = FiberTensor::from_sparse(tensor, Some(&scaling), Some(&sim.sqrt))?;
            let factors = hooi_observed(&x, *ranks, *hooi, |_| {})?;
            let w = &sim.inv_sqrt * &factors.w;
            let rating_map = &sim.sqrt * &w * w.transpose() * &sim.inv_sqrt;
            Ok(TrainedModel::Latte(TensorModel {
                factors,
                w,
                similarity: Some(sim),
                rating_map,
                item_scaling: scaling,
            }))
        }
    }
}

/// Closed-form item-item weights on the binarized interaction matrix:
/// `P = (XᵀX + λI)⁻¹`, `B = I - P diag(1 / diag P)`, so `diag B = 0`.
fn train_ease(tensor: &SparseTensor3, l2: f64) -> Result<DMatrix<f64>> {
    let n = tensor.dims.1;
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); tensor.dims.0];
    for &(i, j, _) in &tensor.entries {
        by_user[i].push(j);
    }
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for items in &mut by_user {
        items.sort_unstable();
        items.dedup();
        for &a in items.iter() {
            for &b in items.iter() {
                gram[(a, b)] += 1.0;
            }
        }
    }
    for j in 0..n {
        gram[(j, j)] += l2;
    }
    let p = gram.cholesky().ok_or(Error::SingularSystem(l2))?.inverse();
    let mut b = DMatrix::zeros(n, n);
    for j in 0..n {
        let pjj = p[(j, j)];
        if !(pjj.is_finite() && pjj > 0.0) {
            return Err(Error::SingularSystem(l2));
        }
        for i in 0..n {
            if i != j {
                b[(i, j)] = -p[(i, j)] / pjj;
            }
        }
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSystem(l2));
    }
    Ok(b)
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Random { .. } => ModelKind::Random,
            TrainedModel::MostPopular { .. } => ModelKind::MostPopular,
            TrainedModel::PureSvd { .. } => ModelKind::PureSvd,
            TrainedModel::Ease { .. } => ModelKind::Ease,
            TrainedModel::Coffee(_) => ModelKind::Coffee,
            TrainedModel::Latte(_) => ModelKind::Latte,
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            TrainedModel::Random { n_items, .. } => *n_items,
            TrainedModel::MostPopular { popularity, .. } => popularity.len(),
            TrainedModel::PureSvd { v, .. } => v.nrows(),
            TrainedModel::Ease { b, .. } => b.nrows(),
            TrainedModel::Coffee(t) | TrainedModel::Latte(t) => t.factors.v.nrows(),
        }
    }

    pub fn n_ratings(&self) -> usize {
        match self {
            TrainedModel::Random { k, .. } | TrainedModel::MostPopular { k, .. } | TrainedModel::Ease { k, .. } => *k,
            TrainedModel::PureSvd { rating_values, .. } => rating_values.len(),
            TrainedModel::Coffee(t) | TrainedModel::Latte(t) => t.rating_map.nrows(),
        }
    }

    pub fn tensor(&self) -> Option<&TensorModel> {
        match self {
            TrainedModel::Coffee(t) | TrainedModel::Latte(t) => Some(t),
            _ => None,
        }
    }

    /// Folds a history of `(item, rating position)` pairs into the model.
    ///
    /// Tensor models return `V Vᵀ P M` with `M` the model's rating map,
    /// evaluated as `V ((Vᵀ P) M)`; matrix models return one score per item.
    pub fn predict_slice(&self, user: u64, history: &[(usize, usize)]) -> Result<ScoreSlice> {
        let (n, k) = (self.n_items(), self.n_ratings());
        if let Some(&(j, r)) = history.iter().find(|&&(j, r)| j >= n || r >= k) {
            return Err(Error::DimensionMismatch(format!(
                "history entry ({j}, {r}) outside {n} items × {k} ratings"
            )));
        }
        let scores = match self {
            TrainedModel::Random { seed, n_items, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ user.rotate_left(17));
                Scores::Items((0..*n_items).map(|_| rng.random::<f64>()).collect())
            }
            TrainedModel::MostPopular { popularity, .. } => Scores::Items(popularity.clone()),
            TrainedModel::PureSvd { v, item_scaling, rating_values } => {
                let mut proj = DVector::zeros(v.ncols());
                for &(j, r) in history {
                    proj.axpy(rating_values[r] * item_scaling[j], &v.row(j).transpose(), 1.0);
                }
                Scores::Items((v * proj).iter().copied().collect())
            }
            TrainedModel::Ease { b, .. } => {
                let mut s = vec![0.0; n];
                let items: HashSet<usize> = history.iter().map(|&(j, _)| j).collect();
                let mut items: Vec<usize> = items.into_iter().collect();
                items.sort_unstable();
                for j in items {
                    for (dst, &w) in s.iter_mut().zip(b.row(j).iter()) {
                        *dst += w;
                    }
                }
                Scores::Items(s)
            }
            TrainedModel::Coffee(t) | TrainedModel::Latte(t) => {
                let v = &t.factors.v;
                let mut vp = DMatrix::zeros(v.ncols(), k);
                for &(j, r) in history {
                    let wj = t.item_scaling[j];
                    for b in 0..v.ncols() {
                        vp[(b, r)] += wj * v[(j, b)];
                    }
                }
                Scores::ItemsByRating(v * (vp * &t.rating_map))
            }
        };
        Ok(ScoreSlice { user, scores })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextName {
    Only5,
    FourFive,
    ThreeFourFive,
    ThreeFourFiveMinusTwoOne,
}

impl ContextName {
    pub const ALL: [ContextName; 4] = [
        ContextName::Only5,
        ContextName::FourFive,
        ContextName::ThreeFourFive,
        ContextName::ThreeFourFiveMinusTwoOne,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContextName::Only5 => "only5",
            ContextName::FourFive => "45",
            ContextName::ThreeFourFive => "345",
            ContextName::ThreeFourFiveMinusTwoOne => "345m21",
        }
    }

    /// Weights over the five rating values `1..=5`.
    pub fn weights(self) -> [f64; 5] {
        match self {
            ContextName::Only5 => [0.0, 0.0, 0.0, 0.0, 1.0],
            ContextName::FourFive => [0.0, 0.0, 0.0, 1.0, 1.0],
            ContextName::ThreeFourFive => [0.0, 0.0, 1.0, 1.0, 1.0],
            ContextName::ThreeFourFiveMinusTwoOne => [-1.0, -1.0, 1.0, 1.0, 1.0],
        }
    }
}

impl fmt::Display for ContextName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ContextName::ALL
            .into_iter()
            .find(|c| c.name() == s || (s == "5" && *c == ContextName::Only5))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown context '{s}'")))
    }
}

/// Signed weights collapsing an item's per-rating scores into one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextAggregation {
    pub name: Option<ContextName>,
    pub weights: Vec<f64>,
}

impl ContextAggregation {
    /// Named contexts are defined on the five-value scale.
    pub fn named(name: ContextName, k: usize) -> Result<Self> {
        if k != 5 {
            return Err(Error::InvalidConfig(format!(
                "context '{name}' is defined for 5 rating values, model has {k}"
            )));
        }
        Ok(Self {
            name: Some(name),
            weights: name.weights().to_vec(),
        })
    }

    pub fn custom(weights: Vec<f64>) -> Self {
        Self { name: None, weights }
    }

    pub fn label(&self) -> String {
        match self.name {
            Some(n) => n.name().to_string(),
            None => format!("{:?}", self.weights),
        }
    }
}

/// `score_j = Σ_k weights_k · slice[j, k]`; item-level slices pass through.
pub fn aggregate_context(slice: &ScoreSlice, ctx: &ContextAggregation) -> Result<Vec<f64>> {
    match &slice.scores {
        Scores::Items(s) => Ok(s.clone()),
        Scores::ItemsByRating(m) => {
            if m.ncols() != ctx.weights.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} context weights for {} rating values",
                    ctx.weights.len(),
                    m.ncols()
                )));
            }
            Ok((0..m.nrows())
                .map(|j| m.row(j).iter().zip(&ctx.weights).map(|(x, w)| x * w).sum())
                .collect())
        }
    }
}

/// The `n` highest-scoring items outside `seen`, ties broken by ascending
/// item index.
pub fn topn(scores: &[f64], n: usize, seen: &HashSet<usize>) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|j| !seen.contains(j)).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if n == 0 {
        return Vec::new();
    }
    if candidates.len() > n {
        candidates.select_nth_unstable_by(n - 1, cmp);
        candidates.truncate(n);
    }
    candidates.sort_by(cmp);
    candidates
}
