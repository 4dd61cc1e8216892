use super::EvalError;
use crate::numcore::Tensor;

const TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 10_000;

/// Top-two principal directions and the centred data projected onto them.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection2d {
    pub coords: Vec<[f64; 2]>,
    /// Fraction of total variance along each direction.
    pub explained: [f64; 2],
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
}

fn mat_vec(m: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|i| m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Leading eigenpair of a symmetric PSD matrix, or `None` when it is zero.
fn power_iteration(cov: &[f64], d: usize) -> Option<(f64, Vec<f64>)> {
    // Start from the largest column: nonzero whenever the matrix is.
    let start = (0..d)
        .map(|j| (0..d).map(|i| cov[i * d + j]).collect::<Vec<f64>>())
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))?;
    let n0 = norm(&start);
    if n0 <= f64::EPSILON {
        return None;
    }
    let mut v: Vec<f64> = start.iter().map(|x| x / n0).collect();
    for _ in 0..MAX_ITERATIONS {
        let w = mat_vec(cov, d, &v);
        let nw = norm(&w);
        if nw <= f64::EPSILON {
            return None;
        }
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let delta = norm(&next.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        v = next;
        if delta < TOLERANCE {
            break;
        }
    }
    let lambda = v.iter().zip(mat_vec(cov, d, &v)).map(|(a, b)| a * b).sum();
    Some((lambda, v))
}

fn orient(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// PCA to two dimensions by power iteration with deflation.
///
/// Each direction is oriented so its first nonzero loading is positive. With
/// rank-1 data the second direction is zero.
pub fn pca_project2d(embeddings: &Tensor) -> Result<Projection2d, EvalError> {
    let (n, d) = embeddings.dims2()?;
    if n < 3 || d < 2 {
        return Err(EvalError::InvalidInput(format!(
            "projection needs at least 3 points of dimension >= 2, got {n}×{d}"
        )));
    }
    let mut mean = vec![0f64; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(embeddings.row(i)) {
            *m += f64::from(*x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            embeddings
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(x, m)| f64::from(*x) - m)
                .collect()
        })
        .collect();
    let mut cov = vec![0f64; d * d];
    for row in &centred {
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += row[a] * row[b];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if trace <= f64::EPSILON {
        return Err(EvalError::RankDeficient);
    }

    let (l1, mut v1) = power_iteration(&cov, d).ok_or(EvalError::RankDeficient)?;
    orient(&mut v1);
    for a in 0..d {
        for b in 0..d {
            cov[a * d + b] -= l1 * v1[a] * v1[b];
        }
    }
    let (l2, v2) = match power_iteration(&cov, d) {
        Some((l, mut v)) if l > trace * 1e-12 => {
            orient(&mut v);
            (l, v)
        }
        _ => (0.0, vec![0.0; d]),
    };
    let coords = centred
        .iter()
        .map(|r| {
            let p = |v: &[f64]| r.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            [p(&v1), p(&v2)]
        })
        .collect();
    Ok(Projection2d {
        coords,
        explained: [(l1 / trace).clamp(0.0, 1.0), (l2 / trace).clamp(0.0, 1.0)],
        components: [v1, v2],
        eigenvalues: [l1, l2],
    })
}
