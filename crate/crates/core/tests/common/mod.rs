//! Independent reference implementations used by the acceptance checks.
//! Everything here works on plain `Vec<f64>` buffers.

#![allow(dead_code)]

use std::collections::HashSet;
use std::io::Write;

/// Writes a result line past the test harness's output capture.
pub fn report(criterion: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion}: {status} ({detail})");
}

pub fn skipped(criterion: &str, detail: &str) {
    let _ = writeln!(std::io::stderr(), "criterion {criterion}: SKIP ({detail})");
}

/// Row-major dense matrix.
#[derive(Clone, Debug)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.at(r, c));
            }
        }
        t
    }

    pub fn mul(&self, o: &Mat) -> Mat {
        assert_eq!(self.cols, o.rows);
        let mut out = Mat::zeros(self.rows, o.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                for c in 0..o.cols {
                    out.data[r * o.cols + c] += a * o.at(k, c);
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in decreasing order and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m.at(p, q).powi(2))
            .sum();
        let scale: f64 = m.data.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.at(k, p), m.at(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.at(p, k), m.at(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.at(k, p), v.at(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m.at(y, y).total_cmp(&m.at(x, x)));
    let vals = order.iter().map(|&i| m.at(i, i)).collect();
    let mut vecs = Mat::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs.set(r, c, v.at(r, i));
        }
    }
    (vals, vecs)
}

/// Leading `rank` left singular vectors of `a` via the eigenvectors of `a aᵀ`.
pub fn leading_left(a: &Mat, rank: usize) -> Mat {
    let (_, vecs) = jacobi_eigen(&a.mul(&a.transpose()));
    let mut out = Mat::zeros(a.rows, rank);
    for r in 0..a.rows {
        for c in 0..rank {
            out.set(r, c, vecs.at(r, c));
        }
    }
    out
}

/// Relative gap between the `rank`-th and next eigenvalue of `a aᵀ`; zero
/// when the leading subspace is not unique.
pub fn subspace_gap(a: &Mat, rank: usize) -> f64 {
    let (vals, _) = jacobi_eigen(&a.mul(&a.transpose()));
    if rank >= vals.len() {
        return 1.0;
    }
    (vals[rank - 1] - vals[rank]) / vals[0].max(f64::MIN_POSITIVE)
}

/// Dense 3-way tensor, row-major `(i, j, k)`.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Mode-n unfolding with the remaining indices in lexicographic order.
    pub fn unfold(&self, mode: usize) -> Mat {
        let [d1, d2, d3] = self.dims;
        let (rows, cols) = match mode {
            0 => (d1, d2 * d3),
            1 => (d2, d1 * d3),
            _ => (d3, d1 * d2),
        };
        let mut m = Mat::zeros(rows, cols);
        for i in 0..d1 {
            for j in 0..d2 {
                for k in 0..d3 {
                    let v = self.get(i, j, k);
                    match mode {
                        0 => m.set(i, j * d3 + k, v),
                        1 => m.set(j, i * d3 + k, v),
                        _ => m.set(k, i * d2 + j, v),
                    }
                }
            }
        }
        m
    }

    /// `self ×_mode m` where `m` is `p × dims[mode]`.
    pub fn mode_product(&self, m: &Mat, mode: usize) -> Tensor {
        let mut dims = self.dims;
        assert_eq!(m.cols, dims[mode]);
        dims[mode] = m.rows;
        let mut out = Tensor::zeros(dims);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let mut s = 0.0;
                    for t in 0..m.cols {
                        let x = match mode {
                            0 => self.get(t, j, k),
                            1 => self.get(i, t, k),
                            _ => self.get(i, j, t),
                        };
                        let coef = match mode {
                            0 => m.at(i, t),
                            1 => m.at(j, t),
                            _ => m.at(k, t),
                        };
                        s += coef * x;
                    }
                    let o = out.idx(i, j, k);
                    out.data[o] = s;
                }
            }
        }
        out
    }
}

/// Textbook HOOI on a dense tensor: HOSVD start, then per sweep refresh each
/// factor from the full SVD of the partially contracted unfolding. Returns
/// the fit after initialization and after every sweep.
pub fn dense_hooi(x: &Tensor, ranks: [usize; 3], max_iters: usize, tol: f64) -> Vec<f64> {
    let mut f: Vec<Mat> = (0..3).map(|m| leading_left(&x.unfold(m), ranks[m])).collect();
    let fit_of = |f: &[Mat]| {
        let core = x.mode_product(&f[0].transpose(), 0).mode_product(&f[1].transpose(), 1).mode_product(&f[2].transpose(), 2);
        let recon = core.mode_product(&f[0], 0).mode_product(&f[1], 1).mode_product(&f[2], 2);
        let res: f64 = recon.data.iter().zip(&x.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        1.0 - res / x.norm()
    };
    let mut history = vec![fit_of(&f)];
    for _ in 0..max_iters {
        for mode in 0..3 {
            let mut y = x.clone();
            for other in 0..3 {
                if other != mode {
                    y = y.mode_product(&f[other].transpose(), other);
                }
            }
            f[mode] = leading_left(&y.unfold(mode), ranks[mode]);
        }
        let fit = fit_of(&f);
        let improvement = fit - history.last().unwrap();
        history.push(fit);
        if improvement < tol {
            break;
        }
    }
    history
}

/// Naive per-metric counts over `(recommendations, holdout item, rating)`.
pub struct NaiveMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub hr_pos: f64,
    pub hr_neg: f64,
    pub mrr_pos: f64,
    pub mrr_neg: f64,
    pub coverage: f64,
    pub mcc: f64,
}

pub fn naive_metrics(cases: &[(Vec<usize>, usize, u32)], n_items: usize, threshold: u32) -> NaiveMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    let (mut rr_pos, mut rr_neg) = (0.0, 0.0);
    let mut items = HashSet::new();
    for (recs, item, rating) in cases {
        for r in recs {
            items.insert(*r);
        }
        let mut hit_rank = 0;
        for (pos, r) in recs.iter().enumerate() {
            if r == item {
                hit_rank = pos + 1;
                break;
            }
        }
        let positive = *rating >= threshold;
        if hit_rank > 0 {
            if positive {
                tp += 1;
                rr_pos += 1.0 / hit_rank as f64;
            } else {
                fp += 1;
                rr_neg += 1.0 / hit_rank as f64;
            }
        } else if positive {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    let pos = tp + fn_;
    let neg = fp + tn;
    let div = |a: f64, b: u64| if b == 0 { 0.0 } else { a / b as f64 };
    let denom = ((tp + fn_) * (tp + fp)) as f64 * ((tn + fp) * (tn + fn_)) as f64;
    let mcc = if denom == 0.0 {
        0.0
    } else {
        (tp as f64 * tn as f64 - fp as f64 * fn_ as f64) / denom.sqrt()
    };
    NaiveMetrics {
        tp,
        fp,
        tn,
        fn_,
        hr_pos: div(tp as f64, pos),
        hr_neg: div(fp as f64, neg),
        mrr_pos: div(rr_pos, pos),
        mrr_neg: div(rr_neg, neg),
        coverage: items.len() as f64 / n_items as f64,
        mcc,
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
