//! Pairwise-distance analysis of learned change factors.

use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};

use crate::error::{Error, Result};

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Symmetric matrix of Euclidean distances.
pub fn distance_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = euclid(&points[i], &points[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side has no spread.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    pearson(&rx, &ry)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Distances between learned factors at sampled steps, and the Spearman
/// correlation of their upper triangle with the distances between the true
/// change values at the same steps.
pub fn theta_distance_matrix(learned: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    if learned.len() < 3 || learned.len() != truth.len() {
        return Err(Error::contract(format!(
            "need at least 3 paired samples, got {} learned and {} true",
            learned.len(),
            truth.len()
        )));
    }
    let dl = distance_matrix(learned);
    let dt = distance_matrix(truth);
    let n = learned.len();
    let mut a = Vec::with_capacity(n * (n - 1) / 2);
    let mut b = Vec::with_capacity(a.capacity());
    for i in 0..n {
        for j in i + 1..n {
            a.push(dl[i][j]);
            b.push(dt[i][j]);
        }
    }
    Ok((dl, spearman(&a, &b)))
}

/// `n` indices spread evenly over `lo..hi`.
pub fn even_sample(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    if hi <= lo || n == 0 {
        return vec![];
    }
    let span = hi - lo;
    if n >= span {
        return (lo..hi).collect();
    }
    (0..n).map(|i| lo + i * (span - 1) / (n - 1).max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_give_zero_matrix() {
        let pts = vec![vec![1.0, 2.0]; 4];
        let (m, rho) = theta_distance_matrix(&pts, &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(m.iter().flatten().all(|&v| v == 0.0));
        assert!(rho.is_nan());
    }

    #[test]
    fn symmetric_with_zero_diagonal() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![(i as f64).sin(), (i * i) as f64]).collect();
        let m = distance_matrix(&pts);
        for i in 0..5 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..5 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    #[test]
    fn monotone_map_has_unit_correlation() {
        let truth: Vec<Vec<f64>> = [0.1, 0.5, 1.7, 2.0, 2.9].iter().map(|&v| vec![v]).collect();
        let learned: Vec<Vec<f64>> = truth.iter().map(|v| vec![3.0 * v[0] - 1.0]).collect();
        let (_, rho) = theta_distance_matrix(&learned, &truth).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        assert!(theta_distance_matrix(&learned[..2], &truth[..2]).is_err());
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn even_sampling() {
        assert_eq!(even_sample(250, 300, 10), vec![250, 255, 260, 266, 271, 277, 282, 288, 293, 299]);
        assert_eq!(even_sample(0, 3, 10), vec![0, 1, 2]);
    }
}
