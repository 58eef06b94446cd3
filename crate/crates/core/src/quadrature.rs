//! Quadrature rules used internally: Gauss–Hermite and Gauss–Legendre nodes
//! via Golub–Welsch, tensor grids, and unit-sphere averaging rules.
//!
//! Golub–Welsch recovers an n-point Gaussian rule from the symmetric
//! tridiagonal Jacobi matrix of the orthogonal polynomial family: the nodes
//! are its eigenvalues and the weight attached to node `i` is
//! `total_mass * q_i[0]^2`, where `q_i` is the normalized eigenvector. Only
//! the recurrence coefficients differ between families:
//!
//! * Hermite (weight `exp(-x^2)` on the line): off-diagonal `sqrt(k/2)`,
//!   total mass `sqrt(pi)`;
//! * Legendre (weight `1` on `[-1, 1]`): off-diagonal `k / sqrt(4k^2 - 1)`,
//!   total mass `2`.
//!
//! Sphere averages come in three flavors depending on the dimension: `d = 1`
//! is the exact two-point rule `{+1, -1}`, `d = 2` uses equally spaced angles
//! (trapezoid rule on the circle, spectrally accurate for smooth integrands),
//! and `d >= 3` falls back to a seeded Monte Carlo node set so results stay
//! reproducible.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KacError, Result};
use crate::kinematics::sample_scattering_angle;

/// Nodes and weights of the n-point Gauss–Hermite rule for the weight
/// `exp(-x^2)`; the weights sum to `sqrt(pi)`.
pub(crate) fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    let offdiag: Vec<f64> = (1..order).map(|k| (k as f64 / 2.0).sqrt()).collect();
    golub_welsch(order, &offdiag, std::f64::consts::PI.sqrt())
}

/// Nodes and weights of the n-point Gauss–Legendre rule on `[-1, 1]`; the
/// weights sum to 2.
pub(crate) fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let offdiag: Vec<f64> = (1..order)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(order, &offdiag, 2.0)
}

/// Rule for integrating against the centered Gaussian with covariance
/// `(1/beta) I` in one dimension: `int f dgamma_beta ~ sum_i w_i f(x_i)`
/// with the weights summing to 1. Obtained from Gauss–Hermite by the
/// substitution `x = t * sqrt(2/beta)`.
pub(crate) fn hermite_gamma(order: usize, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_hermite(order);
    let scale = (2.0 / beta).sqrt();
    let inv_mass = 1.0 / std::f64::consts::PI.sqrt();
    (
        nodes.iter().map(|x| x * scale).collect(),
        weights.iter().map(|w| w * inv_mass).collect(),
    )
}

fn golub_welsch(order: usize, offdiag: &[f64], total_mass: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be at least 1");
    if order == 1 {
        return (vec![0.0], vec![total_mass]);
    }
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for (k, &b) in offdiag.iter().enumerate() {
        jacobi[(k, k + 1)] = b;
        jacobi[(k + 1, k)] = b;
    }
    let eigen = jacobi.symmetric_eigen();
    let mut rule: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let first = eigen.eigenvectors[(0, i)];
            (eigen.eigenvalues[i], total_mass * first * first)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule.into_iter().unzip()
}

/// Full tensor grid of a one-dimensional rule over `dim` coordinates.
/// Weights multiply across factors, so the total mass is preserved to the
/// power `dim`. Node count grows as `order^dim`; callers cap the dimension.
pub(crate) fn tensor_product(
    nodes: &[f64],
    weights: &[f64],
    dim: usize,
) -> Vec<(Vec<f64>, f64)> {
    assert!(dim >= 1);
    let mut grid: Vec<(Vec<f64>, f64)> = vec![(Vec::with_capacity(dim), 1.0)];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(grid.len() * nodes.len());
        for (point, w) in &grid {
            for (x, wx) in nodes.iter().zip(weights) {
                let mut p = point.clone();
                p.push(*x);
                next.push((p, w * wx));
            }
        }
        grid = next;
    }
    grid
}

/// Averaging rule over the unit sphere in `R^d`: pairs of (direction, weight)
/// with weights summing to 1. Exact for `d = 1`, an angular grid for `d = 2`,
/// a seeded Monte Carlo node set for `d >= 3`.
pub(crate) fn sphere_nodes(d: usize, resolution: usize, seed: u64) -> Result<Vec<(Vec<f64>, f64)>> {
    if d == 0 {
        return Err(KacError::ZeroDimension);
    }
    if resolution == 0 {
        return Err(KacError::Empty {
            what: "sphere rule resolution",
        });
    }
    Ok(match d {
        1 => vec![(vec![1.0], 0.5), (vec![-1.0], 0.5)],
        2 => {
            let w = 1.0 / resolution as f64;
            (0..resolution)
                .map(|k| {
                    let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) * w;
                    (vec![theta.cos(), theta.sin()], w)
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = 1.0 / resolution as f64;
            (0..resolution)
                .map(|_| {
                    let sigma = sample_scattering_angle(d, &mut rng)
                        .expect("d >= 3 was checked above");
                    (sigma.components().to_vec(), w)
                })
                .collect()
        }
    })
}
