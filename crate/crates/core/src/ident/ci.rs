//! Linear conditional-independence tests.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};

/// Ridge added to the standardized Gram matrix when it is singular.
pub const RIDGE: f64 = 1e-8;

/// Least-squares residualizer for a fixed conditioning set `Z` (with an
/// implicit intercept). Factorizes once, then residualizes any column.
pub struct Residualizer {
    n: usize,
    k: usize,
    /// Centered, unit-variance conditioning columns, `n × k`.
    z: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    ridge: bool,
}

impl Residualizer {
    pub fn new(z: &[Vec<f64>], n: usize) -> Result<Self> {
        let k = z.len();
        if z.iter().any(|c| c.len() != n) {
            return Err(Error::contract("conditioning columns differ in length"));
        }
        let mut zm = DMatrix::zeros(n, k);
        for (j, col) in z.iter().enumerate() {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
            for (i, v) in col.iter().enumerate() {
                zm[(i, j)] = (v - mean) / scale;
            }
        }
        if k == 0 {
            return Ok(Self { n, k, z: zm, chol: None, ridge: false });
        }
        let gram = zm.tr_mul(&zm) / n as f64;
        let mut ridge = false;
        let chol = match Cholesky::new(gram.clone()) {
            Some(c) if min_pivot(&c) > 1e-10 => c,
            _ => {
                ridge = true;
                let g = gram + DMatrix::identity(k, k) * RIDGE;
                Cholesky::new(g).ok_or_else(|| Error::numerical("ridge-regularized Gram matrix not positive definite"))?
            }
        };
        Ok(Self { n, k, z: zm, chol: Some(chol), ridge })
    }

    pub fn ridge_used(&self) -> bool {
        self.ridge
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn conditioning_size(&self) -> usize {
        self.k
    }

    /// `y` minus its least-squares fit on `[1, Z]`.
    pub fn residual(&self, y: &[f64]) -> Vec<f64> {
        let mean = y.iter().sum::<f64>() / self.n as f64;
        let yc = DVector::from_iterator(self.n, y.iter().map(|v| v - mean));
        match &self.chol {
            None => yc.iter().copied().collect(),
            Some(ch) => {
                let rhs = self.z.tr_mul(&yc) / self.n as f64;
                let beta = ch.solve(&rhs);
                (yc - &self.z * beta).iter().copied().collect()
            }
        }
    }
}

fn min_pivot(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartialCorr {
    pub r: f64,
    pub p: f64,
    /// The ridge fallback was needed.
    pub ridge: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Correlation of two residual vectors.
pub fn residual_correlation(rx: &[f64], ry: &[f64]) -> f64 {
    let den = (dot(rx, rx) * dot(ry, ry)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (dot(rx, ry) / den).clamp(-1.0, 1.0)
    }
}

/// Two-sided Fisher-z p-value for a partial correlation with `k` conditioners.
pub fn fisher_z_pvalue(r: f64, n: usize, k: usize) -> f64 {
    let rr = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    let z = rr.atanh() * ((n as f64) - (k as f64) - 3.0).sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * std.sf(z.abs())).min(1.0)
}

/// Samples needed for a test with `k` conditioners.
pub fn required_samples(min_samples: usize, k: usize) -> usize {
    min_samples.max(k + 4)
}

/// Partial correlation of `x` and `y` given `z`, with a Fisher-z p-value.
pub fn partial_correlation(x: &[f64], y: &[f64], z: &[Vec<f64>]) -> Result<PartialCorr> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::contract("x and y differ in length"));
    }
    if n < z.len() + 4 {
        return Err(Error::UnderPowered { required: z.len() + 4, available: n });
    }
    let res = Residualizer::new(z, n)?;
    let r = residual_correlation(&res.residual(x), &res.residual(y));
    Ok(PartialCorr { r, p: fisher_z_pvalue(r, n, z.len()), ridge: res.ridge_used() })
}

/// Permutation p-value for residual correlation: the share of `n_perm`
/// shuffles of `rx` whose |r| reaches the observed |r|, with add-one smoothing.
pub fn permutation_pvalue(rx: &[f64], ry: &[f64], n_perm: usize, rng: &mut impl Rng) -> f64 {
    let obs = residual_correlation(rx, ry).abs();
    let mut perm = rx.to_vec();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        perm.shuffle(rng);
        if residual_correlation(&perm, ry).abs() >= obs {
            hits += 1;
        }
    }
    (1 + hits) as f64 / (1 + n_perm) as f64
}

/// p-value of the F-test that the block `xs` adds nothing to a linear
/// regression of `y` on `z`.
pub fn block_f_test(y: &[f64], xs: &[Vec<f64>], z: &[Vec<f64>]) -> Result<(f64, bool)> {
    let n = y.len();
    let k = xs.len();
    if k == 0 {
        return Err(Error::contract("F-test needs at least one tested column"));
    }
    let df2 = n as isize - z.len() as isize - k as isize - 1;
    if df2 < 1 {
        return Err(Error::UnderPowered { required: z.len() + k + 2, available: n });
    }
    let restricted = Residualizer::new(z, n)?;
    let ry = restricted.residual(y);
    let mut all: Vec<Vec<f64>> = z.to_vec();
    all.extend(xs.iter().cloned());
    let full = Residualizer::new(&all, n)?;
    let rf = full.residual(y);
    let rss_r = dot(&ry, &ry);
    let rss_f = dot(&rf, &rf);
    if rss_f <= 0.0 {
        return Ok((0.0, restricted.ridge_used() || full.ridge_used()));
    }
    let f = ((rss_r - rss_f).max(0.0) / k as f64) / (rss_f / df2 as f64);
    let dist = FisherSnedecor::new(k as f64, df2 as f64).map_err(|e| Error::numerical(e.to_string()))?;
    Ok((dist.sf(f), restricted.ridge_used() || full.ridge_used()))
}
