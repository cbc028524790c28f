//! Rating-similarity matrices built from monotone dependency laws, and their
//! symmetric square-root factors.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LawKind {
    Identity,
    Linear,
    Sigmoid,
    Arctan,
    CubeRoot,
}

impl LawKind {
    pub const ALL: [LawKind; 5] = [
        LawKind::Identity,
        LawKind::Linear,
        LawKind::Sigmoid,
        LawKind::Arctan,
        LawKind::CubeRoot,
    ];

    /// The four smoothing laws (everything except identity).
    pub const SMOOTHING: [LawKind; 4] = [
        LawKind::Linear,
        LawKind::Sigmoid,
        LawKind::Arctan,
        LawKind::CubeRoot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LawKind::Identity => "identity",
            LawKind::Linear => "linear",
            LawKind::Sigmoid => "sigmoid",
            LawKind::Arctan => "arctan",
            LawKind::CubeRoot => "cube-root",
        }
    }
}

impl fmt::Display for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LawKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LawKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "cube_root" && *k == LawKind::CubeRoot))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown law '{s}'")))
    }
}

/// A monotone map onto (roughly) `[0, 1]` over a fixed sampling domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependencyLaw {
    pub kind: LawKind,
    pub lo: f64,
    pub hi: f64,
}

impl DependencyLaw {
    pub fn new(kind: LawKind) -> Self {
        let (lo, hi) = match kind {
            LawKind::Identity | LawKind::Linear => (0.0, 1.0),
            LawKind::Sigmoid => (-6.0, 6.0),
            LawKind::Arctan => (-FRAC_PI_2, FRAC_PI_2),
            LawKind::CubeRoot => (-1.0, 1.0),
        };
        Self { kind, lo, hi }
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        if !(x >= self.lo && x <= self.hi) {
            return Err(Error::OutOfDomain {
                x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(match self.kind {
            LawKind::Identity | LawKind::Linear => x,
            LawKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            LawKind::Arctan => 0.5 * x.atan() + 0.5,
            LawKind::CubeRoot => 0.5 * x.cbrt() + 0.5,
        })
    }

    /// `k` evenly spaced points spanning the domain, endpoints included.
    pub fn sample_points(&self, k: usize) -> Vec<f64> {
        let step = (self.hi - self.lo) / (k - 1) as f64;
        (0..k)
            .map(|i| if i + 1 == k { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

impl From<LawKind> for DependencyLaw {
    fn from(kind: LawKind) -> Self {
        DependencyLaw::new(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub law: DependencyLaw,
    pub entries: DMatrix<f64>,
    /// Symmetric `K^{1/2}`.
    pub sqrt: DMatrix<f64>,
    /// Symmetric `K^{-1/2}`.
    pub inv_sqrt: DMatrix<f64>,
    pub eigen_floor: f64,
}

impl SimilarityMatrix {
    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    /// Comma-separated dump, one row per rating value.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn build_similarity(law: DependencyLaw, k: usize) -> Result<SimilarityMatrix> {
    build_similarity_with_floor(law, k, DEFAULT_EIGEN_FLOOR)
}

/// Entry `(i, j)` is `1 - |f(v_i) - f(v_j)|`, clamped to `[0, 1]`.
pub fn build_similarity_with_floor(law: DependencyLaw, k: usize, eigen_floor: f64) -> Result<SimilarityMatrix> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("similarity needs k >= 2, got {k}")));
    }
    let entries = if law.kind == LawKind::Identity {
        DMatrix::identity(k, k)
    } else {
        let f = law
            .sample_points(k)
            .into_iter()
            .map(|x| law.value(x))
            .collect::<Result<Vec<_>>>()?;
        // arctan overshoots [0, 1] slightly at the domain ends.
        DMatrix::from_fn(k, k, |i, j| (1.0 - (f[i] - f[j]).abs()).clamp(0.0, 1.0))
    };
    let (sqrt, inv_sqrt) = if law.kind == LawKind::Identity {
        // Exact, so that identity smoothing reproduces the unsmoothed model bit for bit.
        (entries.clone(), entries.clone())
    } else {
        sqrt_factors(&entries, eigen_floor)?
    };
    Ok(SimilarityMatrix {
        law,
        entries,
        sqrt,
        inv_sqrt,
        eigen_floor,
    })
}

/// Spectral square root and inverse square root of a symmetric matrix, with
/// eigenvalues raised to at least `eigen_floor`.
pub fn sqrt_factors(m: &DMatrix<f64>, eigen_floor: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 {
        return Err(Error::Asymmetric(asym));
    }
    let eig = SymmetricEigen::new(m.clone());
    let q = &eig.eigenvectors;
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(eigen_floor)).collect();
    let scaled = |p: f64| {
        let mut qs = q.clone();
        for (mut col, &l) in qs.column_iter_mut().zip(&lambda) {
            col *= l.powf(p);
        }
        let r = &qs * q.transpose();
        (&r + r.transpose()) * 0.5
    };
    Ok((scaled(0.5), scaled(-0.5)))
}
