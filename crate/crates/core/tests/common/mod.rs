//! Test-only oracles: dense reference computations that share no code with
//! the spectral paths they check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use oed_core::gaussian::GaussianMeasure;
use oed_core::hilbert::{OpExpr, Space};
use oed_core::inverse::InverseProblem;
use oed_core::models::{self, HeatModelConfig};
use oed_core::rng;
use rand::Rng;

/// Cyclic Jacobi eigenvalues of a symmetric matrix, sorted descending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = (a + a.transpose()) * 0.5;
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * a.norm().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

/// `M^{1/2} K M^{-1/2}`: symmetric whenever `K` is self-adjoint in the M geometry.
pub fn similarity(k: &DMatrix<f64>, space: &Space) -> DMatrix<f64> {
    let r: Vec<f64> = space.mass().iter().map(|m| m.sqrt()).collect();
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| r[i] * k[(i, j)] / r[j])
}

/// Eigenvalues of an M-self-adjoint coefficient array.
pub fn operator_eigenvalues(k: &DMatrix<f64>, space: &Space) -> Vec<f64> {
    jacobi_eigenvalues(&similarity(k, space))
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut a = a.clone();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs())).unwrap();
        if a[(p, c)] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap_rows(p, c);
            det = -det;
        }
        det *= a[(c, c)];
        for r in c + 1..n {
            let f = a[(r, c)] / a[(c, c)];
            for k in c..n {
                a[(r, k)] -= f * a[(c, k)];
            }
        }
    }
    det
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream_rng(seed, 1000);
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

pub fn random_vector(n: usize, seed: u64, stream: u64) -> DVector<f64> {
    rng::normal_vector(&mut rng::stream_rng(seed, 2000 + stream), n)
}

pub fn random_space(n: usize, seed: u64) -> Space {
    let mut r = rng::stream_rng(seed, 3000);
    Space::new((0..n).map(|_| r.random_range(0.2..2.0)).collect()).unwrap()
}

/// Coefficients of a random operator that is self-adjoint and positive
/// definite in the space's geometry: `M^{-1}(A A^T + shift I)`.
pub fn random_spd(space: &Space, seed: u64, shift: f64) -> DMatrix<f64> {
    let n = space.dim();
    let a = random_matrix(n, n, seed);
    let mut s = &a * a.transpose();
    for i in 0..n {
        s[(i, i)] += shift;
    }
    DMatrix::from_fn(n, n, |i, j| s[(i, j)] / space.mass()[i])
}

/// Random problem with a dense prior and an arbitrary non-zero prior mean.
pub fn random_problem(n: usize, q: usize, seed: u64, centered: bool) -> InverseProblem {
    let space = random_space(n, seed);
    let cov = OpExpr::dense_square(random_spd(&space, seed + 1, 0.5), space.clone()).unwrap();
    let mean = if centered {
        space.zeros()
    } else {
        random_vector(n, seed, 7)
    };
    let prior = GaussianMeasure::new(mean, cov).unwrap();
    let g = random_matrix(q, n, seed + 2);
    let fwd = OpExpr::dense(g, space, Space::euclidean(q)).unwrap();
    let mut r = rng::stream_rng(seed, 4000);
    let noise = DVector::from_fn(q, |_, _| r.random_range(0.1..1.0));
    InverseProblem::new(prior, fwd, noise).unwrap()
}

/// Dense `(G^T Gamma^{-1} G + C^{-1})^{-1}` in coefficients, through the
/// explicit prior inverse.
pub fn normal_equations_cpost(p: &InverseProblem) -> DMatrix<f64> {
    let space = p.space();
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(space.mass()));
    let g = p.forward().to_dense().unwrap();
    let xi = p.design().weights();
    let gamma_inv = DMatrix::from_fn(p.q(), p.q(), |i, j| if i == j { xi[i] / p.noise_var()[i] } else { 0.0 });
    let c = p.prior().cov().to_dense().unwrap();
    // operator inverse of C_post in coefficients: M^{-1} G^T Gamma^{-1} G + C^{-1}
    let m_inv = m.clone().try_inverse().unwrap();
    let h = &m_inv * g.transpose() * gamma_inv * &g;
    let prec = h + c.try_inverse().unwrap();
    prec.try_inverse().unwrap()
}

pub fn heat(n: usize) -> HeatModelConfig {
    HeatModelConfig {
        n,
        ..Default::default()
    }
}

pub fn heat_problem(n: usize, seed: u64) -> models::HeatProblem {
    models::build_problem(&heat(n), seed).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
