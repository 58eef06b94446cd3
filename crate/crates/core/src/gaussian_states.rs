//! Exact Gaussian-mixture propagation and functional estimation.
//!
//! Collisions act linearly on velocities, so a Gaussian initial density
//! stays Gaussian along any *fixed* collision history: the mean moves by
//! the reflection matrix and the covariance is conjugated by it. A
//! thermostat interaction stays inside the family too — extend the state
//! with an independent Maxwellian partner block, collide, and marginalize
//! the partner out again, all of which are exact Gaussian operations for a
//! fixed scattering direction.
//!
//! Averaging over histories makes the evolved density a *mixture* of
//! Gaussians. Sampling histories therefore gives an unbiased mixture
//! representation of the evolved state with no density estimation at all:
//! each sampled history contributes one exactly-known component
//! ([`evolve_mixture_thermostat_grid`], [`evolve_mixture_reservoir_grid`]).
//!
//! Relative entropy `int f ln(f/gamma_beta)` and Fisher information
//! `int |grad h|^2 / h dgamma = E_f[ |grad ln f + beta v|^2 ]` of a mixture
//! have no closed form, so they are estimated by Monte Carlo over samples
//! drawn from the mixture itself, with log-sum-exp stabilization and the
//! analytic mixture gradient ([`entropy_mixture_mc`],
//! [`fisher_info_mixture_mc`]). Components whose covariance condition
//! number exceeds [`CONDITION_CAP`] are excluded from evaluation and
//! counted, so a near-degenerate component can never silently poison a
//! log-density.
//!
//! Everything is reported in nats, and all relative functionals are taken
//! with respect to the centered isotropic Gaussian with covariance
//! `(1/beta) I`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{KacError, Result};
use crate::kinematics::{reflect_blocks_unchecked, PairCollision, ScatteringAngle};
use crate::simulators::{
    sample_reservoir_event, sample_thermostat_event, validate_grid, ReservoirParams,
    ThermostatEvent, ThermostatParams,
};

/// Covariance symmetry tolerance accepted at construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Components with covariance condition number above this cap are excluded
/// from Monte Carlo functional evaluation (and counted as rejected).
pub const CONDITION_CAP: f64 = 1e12;

/// Samples per parallel evaluation chunk; fixed so chunk boundaries (and
/// hence RNG substreams) never depend on the worker count.
const MC_CHUNK: usize = 1024;

/// A single Gaussian component: mean and symmetric positive-definite
/// covariance over the flat velocity coordinates.
#[derive(Clone, Debug)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianComponent {
    /// Validates symmetry (within [`SYMMETRY_TOL`], then symmetrized
    /// exactly) and positive-definiteness (a Cholesky factorization must
    /// succeed).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(KacError::ZeroDimension);
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(KacError::DimensionMismatch {
                expected: n,
                got: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().any(|x| !x.is_finite()) || cov.iter().any(|x| !x.is_finite()) {
            return Err(KacError::InvalidParameter {
                name: "component",
                reason: "mean and covariance must be finite".into(),
            });
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((cov[(i, j)] - cov[(j, i)]).abs());
            }
        }
        if worst > SYMMETRY_TOL {
            return Err(KacError::InvalidParameter {
                name: "covariance",
                reason: format!("asymmetry {worst:e} exceeds {SYMMETRY_TOL:e}"),
            });
        }
        let cov = symmetrize(cov);
        if Cholesky::new(cov.clone()).is_none() {
            return Err(KacError::NotPositiveDefinite);
        }
        Ok(Self { mean, cov })
    }

    /// Centered isotropic component `variance * I` in `n` dimensions.
    pub fn isotropic(n: usize, variance: f64) -> Result<Self> {
        if n == 0 {
            return Err(KacError::ZeroDimension);
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(KacError::InvalidParameter {
                name: "variance",
                reason: format!("must be finite and positive, got {variance}"),
            });
        }
        Ok(Self {
            mean: DVector::zeros(n),
            cov: DMatrix::identity(n, n) * variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Mean kinetic energy `E[|v|^2]/2 = (trace Σ + |mean|^2)/2`.
    pub fn energy_mean(&self) -> f64 {
        (self.cov.trace() + self.mean.norm_squared()) / 2.0
    }

    /// Marginal over the first `dims` coordinates.
    pub fn head_marginal(&self, dims: usize) -> Result<GaussianComponent> {
        if dims == 0 || dims > self.dim() {
            return Err(KacError::DimensionMismatch {
                expected: self.dim(),
                got: dims,
            });
        }
        Ok(GaussianComponent {
            mean: DVector::from_fn(dims, |i, _| self.mean[i]),
            cov: self.cov.view((0, 0), (dims, dims)).into_owned(),
        })
    }
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Applies the reflection of `c` (particles of dimension `d`) to the mean
/// and conjugates the covariance: mean -> M mean, cov -> M cov M. The
/// reflection matrix is symmetric orthogonal, so conjugation is two column
/// passes with a transpose in between and no dense matrix is built.
pub fn propagate_component_internal(
    g: &GaussianComponent,
    c: &PairCollision,
    d: usize,
) -> Result<GaussianComponent> {
    if d == 0 {
        return Err(KacError::ZeroDimension);
    }
    let n = g.dim();
    if n % d != 0 {
        return Err(KacError::DimensionMismatch { expected: d, got: n });
    }
    if c.sigma().dim() != d {
        return Err(KacError::DimensionMismatch {
            expected: d,
            got: c.sigma().dim(),
        });
    }
    let particles = n / d;
    let (i, j) = c.pair();
    if j >= particles {
        return Err(KacError::ParticleOutOfRange {
            index: j,
            count: particles,
        });
    }
    let sigma = c.sigma().components();

    let mut mean = g.mean.clone();
    reflect_blocks_unchecked(mean.as_mut_slice(), d, i, j, sigma);

    // T = M Σ: reflect every column (columns are contiguous in memory).
    let mut t = g.cov.clone();
    reflect_columns(&mut t, d, i, j, sigma);
    // M Σ M = (M T^T)^T with M symmetric.
    let mut u = t.transpose();
    reflect_columns(&mut u, d, i, j, sigma);
    let cov = symmetrize(u.transpose());

    Ok(GaussianComponent { mean, cov })
}

fn reflect_columns(m: &mut DMatrix<f64>, d: usize, i: usize, j: usize, sigma: &[f64]) {
    let rows = m.nrows();
    let cols = m.ncols();
    let data = m.as_mut_slice(); // column-major
    for c in 0..cols {
        reflect_blocks_unchecked(&mut data[c * rows..(c + 1) * rows], d, i, j, sigma);
    }
}

/// Thermostat interaction on particle `j` with a fixed scattering
/// direction: the Maxwellian partner is adjoined as an independent
/// `(1/beta) I` block, the pair `(j, partner)` collides, and the partner is
/// marginalized out. Exact for Gaussian input.
pub fn propagate_component_thermostat(
    g: &GaussianComponent,
    j: usize,
    sigma: &ScatteringAngle,
    beta: f64,
) -> Result<GaussianComponent> {
    let d = sigma.dim();
    let n = g.dim();
    if n % d != 0 {
        return Err(KacError::DimensionMismatch { expected: d, got: n });
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(KacError::InvalidParameter {
            name: "beta",
            reason: format!("must be finite and positive, got {beta}"),
        });
    }
    let particles = n / d;
    if j >= particles {
        return Err(KacError::ParticleOutOfRange {
            index: j,
            count: particles,
        });
    }

    // Extended state: original coordinates, then one partner particle.
    let mut mean = DVector::zeros(n + d);
    mean.rows_mut(0, n).copy_from(&g.mean);
    let mut cov = DMatrix::zeros(n + d, n + d);
    cov.view_mut((0, 0), (n, n)).copy_from(&g.cov);
    for k in 0..d {
        cov[(n + k, n + k)] = 1.0 / beta;
    }

    let extended = GaussianComponent { mean, cov };
    let collision = PairCollision::new(j, particles, sigma.clone())?;
    let collided = propagate_component_internal(&extended, &collision, d)?;
    collided.head_marginal(n)
}

/// A convex combination of Gaussian components together with the reference
/// inverse temperature the relative functionals are taken against.
#[derive(Clone, Debug)]
pub struct GaussianMixtureState {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
    beta: f64,
}

impl GaussianMixtureState {
    /// Validates convexity of the weights (non-negative, compensated sum
    /// within 1e-12 of one), equal component dimensions, and `beta > 0`.
    pub fn new(
        weights: Vec<f64>,
        components: Vec<GaussianComponent>,
        beta: f64,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(KacError::Empty {
                what: "mixture components",
            });
        }
        if weights.len() != components.len() {
            return Err(KacError::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(KacError::InvalidParameter {
                name: "beta",
                reason: format!("must be finite and positive, got {beta}"),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(KacError::InvalidParameter {
                name: "weights",
                reason: "must be finite and non-negative".into(),
            });
        }
        let sum = kahan_sum(&weights);
        if (sum - 1.0).abs() > 1e-12 {
            return Err(KacError::InvalidParameter {
                name: "weights",
                reason: format!("must sum to 1, got {sum}"),
            });
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(KacError::DimensionMismatch {
                expected: dim,
                got: components.iter().map(|c| c.dim()).find(|&d| d != dim).unwrap_or(dim),
            });
        }
        Ok(Self {
            weights,
            components,
            beta,
        })
    }

    /// Single-component state.
    pub fn single(component: GaussianComponent, beta: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![component], beta)
    }

    /// Equally weighted components, as produced by history sampling.
    pub fn uniform(components: Vec<GaussianComponent>, beta: f64) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(KacError::Empty {
                what: "mixture components",
            });
        }
        Self::new(vec![1.0 / n as f64; n], components, beta)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a valid mixture always has at least one component
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Mixture mean kinetic energy.
    pub fn energy_mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.energy_mean())
            .sum()
    }

    /// Marginal over the first `dims` coordinates — with system particles
    /// stored first, this is the system marginal of a joint state.
    pub fn head_marginal(&self, dims: usize) -> Result<GaussianMixtureState> {
        let components = self
            .components
            .iter()
            .map(|c| c.head_marginal(dims))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixtureState {
            weights: self.weights.clone(),
            components,
            beta: self.beta,
        })
    }
}

fn kahan_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Relative entropy of the centered isotropic Gaussian with variance `a`
/// against the Maxwellian at `beta`, in `n` total dimensions:
/// `(n/2) (beta a - 1 - ln(beta a))`. Non-negative, zero iff `a = 1/beta`.
pub fn entropy_gaussian_isotropic(a: f64, beta: f64, n: usize) -> Result<f64> {
    check_isotropic_args(a, beta, n)?;
    let x = beta * a;
    Ok(n as f64 / 2.0 * (x - 1.0 - x.ln()))
}

/// Fisher information of the same state relative to the Maxwellian:
/// `n a (1/a - beta)^2`. Non-negative, zero iff `a = 1/beta`.
pub fn fisher_info_gaussian_isotropic(a: f64, beta: f64, n: usize) -> Result<f64> {
    check_isotropic_args(a, beta, n)?;
    let imbalance = 1.0 / a - beta;
    Ok(n as f64 * a * imbalance * imbalance)
}

fn check_isotropic_args(a: f64, beta: f64, n: usize) -> Result<()> {
    if !(a.is_finite() && a > 0.0) {
        return Err(KacError::InvalidParameter {
            name: "a",
            reason: format!("variance must be finite and positive, got {a}"),
        });
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(KacError::InvalidParameter {
            name: "beta",
            reason: format!("must be finite and positive, got {beta}"),
        });
    }
    if n == 0 {
        return Err(KacError::ZeroDimension);
    }
    Ok(())
}

/// Fisher information of the ground-state ratio `h = f/gamma_beta` in terms
/// of the classical information of `f` and its kinetic energy:
/// `I_gamma(h) = I(f) + 2 beta^2 (E - n/beta)`. For `f = gamma_beta`
/// (`I(f) = n beta`, `E = n/(2 beta)`) the right side vanishes exactly.
pub fn info_transform_relation(info_f: f64, e_kin: f64, beta: f64, n: usize) -> f64 {
    info_f + 2.0 * beta * beta * (e_kin - n as f64 / beta)
}

/// A Monte Carlo functional estimate with its standard error and the
/// number of mixture components excluded by the conditioning screen.
#[derive(Clone, Copy, Debug)]
pub struct FunctionalEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub n_rejected: usize,
}

/// Monte Carlo estimate of the relative entropy
/// `E_f[ln f - ln gamma_beta]` of a Gaussian mixture.
pub fn entropy_mixture_mc(
    state: &GaussianMixtureState,
    n_samples: usize,
    seed: u64,
) -> Result<FunctionalEstimate> {
    mixture_functional_mc(state, n_samples, seed, Functional::Entropy)
}

/// Monte Carlo estimate of the Fisher information
/// `E_f[|grad ln f + beta v|^2]` of a Gaussian mixture, using the analytic
/// mixture gradient.
pub fn fisher_info_mixture_mc(
    state: &GaussianMixtureState,
    n_samples: usize,
    seed: u64,
) -> Result<FunctionalEstimate> {
    mixture_functional_mc(state, n_samples, seed, Functional::Fisher)
}

#[derive(Clone, Copy)]
enum Functional {
    Entropy,
    Fisher,
}

/// A component prepared for repeated density evaluation.
struct Prepared {
    ln_weight: f64,
    weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    l_matrix: DMatrix<f64>,
    /// `-(n/2) ln(2 pi) - (1/2) ln det Σ`.
    ln_norm: f64,
}

fn prepare_components(state: &GaussianMixtureState) -> Result<(Vec<Prepared>, usize)> {
    let n = state.dim();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut prepared = Vec::with_capacity(state.len());
    let mut rejected = 0usize;
    for (w, comp) in state.weights.iter().zip(&state.components) {
        if *w == 0.0 {
            continue; // weightless components contribute nothing
        }
        let eigen = comp.cov.clone().symmetric_eigen();
        let lambda_min = eigen.eigenvalues.min();
        let lambda_max = eigen.eigenvalues.max();
        if lambda_min <= 0.0 {
            return Err(KacError::NotPositiveDefinite);
        }
        if lambda_max / lambda_min > CONDITION_CAP {
            rejected += 1;
            continue;
        }
        let chol = Cholesky::new(comp.cov.clone()).ok_or(KacError::NotPositiveDefinite)?;
        let l_matrix = chol.l();
        let ln_det_half: f64 = l_matrix.diagonal().iter().map(|x| x.ln()).sum();
        prepared.push(Prepared {
            ln_weight: 0.0, // filled after renormalization
            weight: *w,
            mean: comp.mean.clone(),
            chol,
            l_matrix,
            ln_norm: -(n as f64) * half_ln_2pi - ln_det_half,
        });
    }
    if prepared.is_empty() {
        return Err(KacError::AllComponentsRejected { total: state.len() });
    }
    // Renormalize the surviving weights; estimates then refer to the
    // renormalized mixture, with `rejected` reported alongside.
    let total: f64 = kahan_sum(&prepared.iter().map(|p| p.weight).collect::<Vec<_>>());
    for p in &mut prepared {
        p.weight /= total;
        p.ln_weight = p.weight.ln();
    }
    Ok((prepared, rejected))
}

fn mixture_functional_mc(
    state: &GaussianMixtureState,
    n_samples: usize,
    seed: u64,
    functional: Functional,
) -> Result<FunctionalEstimate> {
    if n_samples == 0 {
        return Err(KacError::Empty {
            what: "functional sample set",
        });
    }
    let (prepared, n_rejected) = prepare_components(state)?;
    let n = state.dim();
    let beta = state.beta;
    // ln gamma_beta(x) = -(n/2) ln(2 pi / beta) - (beta/2)|x|^2.
    let ln_gamma_norm = -(n as f64) / 2.0 * (2.0 * std::f64::consts::PI / beta).ln();

    // Component-selection CDF over the renormalized weights.
    let mut cdf = Vec::with_capacity(prepared.len());
    let mut acc = 0.0;
    for p in &prepared {
        acc += p.weight;
        cdf.push(acc);
    }
    *cdf.last_mut().expect("at least one component") = 1.0;

    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let sums: Vec<(usize, f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let lo = chunk * MC_CHUNK;
            let hi = ((chunk + 1) * MC_CHUNK).min(n_samples);
            let mut count = 0usize;
            let mut sum = 0.0;
            let mut sq_sum = 0.0;
            let mut z = DVector::zeros(n);
            for _ in lo..hi {
                // Draw x from the mixture.
                let u: f64 = rng.random();
                let pick = cdf.partition_point(|&c| c < u).min(prepared.len() - 1);
                for zi in z.iter_mut() {
                    *zi = rng.sample::<f64, _>(StandardNormal);
                }
                let x = &prepared[pick].mean + &prepared[pick].l_matrix * &z;

                let value = evaluate_at(&prepared, &x, beta, ln_gamma_norm, functional);
                count += 1;
                sum += value;
                sq_sum += value * value;
            }
            (count, sum, sq_sum)
        })
        .collect();

    let mut count = 0usize;
    let mut sum = 0.0;
    let mut sq_sum = 0.0;
    for (c, s, q) in sums {
        count += c;
        sum += s;
        sq_sum += q;
    }
    debug_assert_eq!(count, n_samples);

    Ok(FunctionalEstimate {
        value: sum / count as f64,
        stderr: sample_stderr(sum, sq_sum, count),
        n_samples: count,
        n_rejected,
    })
}

/// Evaluates the selected integrand at one sample point.
fn evaluate_at(
    prepared: &[Prepared],
    x: &DVector<f64>,
    beta: f64,
    ln_gamma_norm: f64,
    functional: Functional,
) -> f64 {
    // Per-component log densities ln(w_k N_k(x)) and, for Fisher, the
    // gradients grad ln N_k = -Σ_k^{-1}(x - mean_k).
    let mut ln_terms = Vec::with_capacity(prepared.len());
    let mut neg_grads: Vec<DVector<f64>> = Vec::with_capacity(prepared.len());
    let mut ln_max = f64::NEG_INFINITY;
    for p in prepared {
        let diff = x - &p.mean;
        let solved = p.chol.solve(&diff);
        let quad = diff.dot(&solved);
        let ln_term = p.ln_weight + p.ln_norm - 0.5 * quad;
        ln_max = ln_max.max(ln_term);
        ln_terms.push(ln_term);
        if matches!(functional, Functional::Fisher) {
            neg_grads.push(solved);
        }
    }
    let mut denom = 0.0;
    for t in &ln_terms {
        denom += (t - ln_max).exp();
    }
    let ln_f = ln_max + denom.ln();

    match functional {
        Functional::Entropy => {
            let ln_gamma = ln_gamma_norm - 0.5 * beta * x.norm_squared();
            ln_f - ln_gamma
        }
        Functional::Fisher => {
            // grad ln f = sum_k softmax_k * grad ln N_k.
            let mut grad = DVector::zeros(x.len());
            for (t, neg_grad) in ln_terms.iter().zip(&neg_grads) {
                let resp = (t - ln_max).exp() / denom;
                grad.axpy(-resp, neg_grad, 1.0);
            }
            grad.axpy(beta, x, 1.0);
            grad.norm_squared()
        }
    }
}

/// Standard error of the mean from plain sums; zero for fewer than two
/// samples or when rounding drives the variance estimate negative.
fn sample_stderr(sum: f64, sq_sum: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let var = (sq_sum - sum * sum / nf) / (nf - 1.0);
    (var.max(0.0) / nf).sqrt()
}

/// Evolves a Gaussian initial state (system isotropic at `1/beta0`) under
/// the thermostat dynamics along `n_histories` sampled collision
/// histories, snapshotting at every grid time. Returns one mixture per
/// grid time; component `h` of every snapshot belongs to history `h`.
///
/// The Maxwellian partner of each thermostat interaction is integrated out
/// exactly rather than sampled, so the mixture is a Rao-Blackwellized (and
/// still unbiased) representation of the evolved density.
pub fn evolve_mixture_thermostat_grid(
    p: &ThermostatParams,
    beta0: f64,
    ts: &[f64],
    n_histories: usize,
    seed: u64,
) -> Result<Vec<GaussianMixtureState>> {
    p.validate()?;
    validate_grid(ts)?;
    if n_histories == 0 {
        return Err(KacError::Empty {
            what: "history ensemble",
        });
    }
    if !(beta0.is_finite() && beta0 > 0.0) {
        return Err(KacError::InvalidParameter {
            name: "beta0",
            reason: format!("must be finite and positive, got {beta0}"),
        });
    }
    let initial = GaussianComponent::isotropic(p.d * p.n, 1.0 / beta0)?;

    let per_history: Vec<Vec<GaussianComponent>> = (0..n_histories)
        .into_par_iter()
        .map(|h| -> Result<Vec<GaussianComponent>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(h as u64);
            let mut comp = initial.clone();
            let mut snapshots = Vec::with_capacity(ts.len());
            let mut t = 0.0;
            let mut g = 0;
            while g < ts.len() {
                match sample_thermostat_event(p, &mut rng)? {
                    None => {
                        for _ in g..ts.len() {
                            snapshots.push(comp.clone());
                        }
                        g = ts.len();
                    }
                    Some((dt, event)) => {
                        let t_next = t + dt;
                        while g < ts.len() && ts[g] < t_next {
                            snapshots.push(comp.clone());
                            g += 1;
                        }
                        if g == ts.len() {
                            break;
                        }
                        comp = match &event {
                            ThermostatEvent::Internal(c) => {
                                propagate_component_internal(&comp, c, p.d)?
                            }
                            // The sampled partner velocity is deliberately
                            // unused: the partner integral is exact.
                            ThermostatEvent::Bath { particle, sigma, .. } => {
                                propagate_component_thermostat(&comp, *particle, sigma, p.beta)?
                            }
                        };
                        t = t_next;
                    }
                }
            }
            Ok(snapshots)
        })
        .collect::<Result<Vec<_>>>()?;

    assemble_grid_mixtures(per_history, ts.len(), p.beta)
}

/// Reservoir analogue of [`evolve_mixture_thermostat_grid`]: the joint
/// state starts as system isotropic at `1/beta0` times reservoir
/// Maxwellian at `1/beta`, and every snapshot is the full joint mixture
/// (use [`GaussianMixtureState::head_marginal`] with `d*N` for the system
/// view).
pub fn evolve_mixture_reservoir_grid(
    p: &ReservoirParams,
    beta0: f64,
    ts: &[f64],
    n_histories: usize,
    seed: u64,
) -> Result<Vec<GaussianMixtureState>> {
    p.validate()?;
    validate_grid(ts)?;
    if n_histories == 0 {
        return Err(KacError::Empty {
            what: "history ensemble",
        });
    }
    if !(beta0.is_finite() && beta0 > 0.0) {
        return Err(KacError::InvalidParameter {
            name: "beta0",
            reason: format!("must be finite and positive, got {beta0}"),
        });
    }
    let dim = p.d * p.n_total();
    let mut cov = DMatrix::identity(dim, dim) * (1.0 / p.beta);
    for k in 0..p.d * p.n {
        cov[(k, k)] = 1.0 / beta0;
    }
    let initial = GaussianComponent::new(DVector::zeros(dim), cov)?;

    let per_history: Vec<Vec<GaussianComponent>> = (0..n_histories)
        .into_par_iter()
        .map(|h| -> Result<Vec<GaussianComponent>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(h as u64);
            let mut comp = initial.clone();
            let mut snapshots = Vec::with_capacity(ts.len());
            let mut t = 0.0;
            let mut g = 0;
            while g < ts.len() {
                match sample_reservoir_event(p, &mut rng)? {
                    None => {
                        for _ in g..ts.len() {
                            snapshots.push(comp.clone());
                        }
                        g = ts.len();
                    }
                    Some((dt, collision)) => {
                        let t_next = t + dt;
                        while g < ts.len() && ts[g] < t_next {
                            snapshots.push(comp.clone());
                            g += 1;
                        }
                        if g == ts.len() {
                            break;
                        }
                        comp = propagate_component_internal(&comp, &collision, p.d)?;
                        t = t_next;
                    }
                }
            }
            Ok(snapshots)
        })
        .collect::<Result<Vec<_>>>()?;

    assemble_grid_mixtures(per_history, ts.len(), p.beta)
}

fn assemble_grid_mixtures(
    per_history: Vec<Vec<GaussianComponent>>,
    n_times: usize,
    beta: f64,
) -> Result<Vec<GaussianMixtureState>> {
    let mut per_time: Vec<Vec<GaussianComponent>> =
        (0..n_times).map(|_| Vec::with_capacity(per_history.len())).collect();
    for history in per_history {
        debug_assert_eq!(history.len(), n_times);
        for (slot, comp) in per_time.iter_mut().zip(history) {
            slot.push(comp);
        }
    }
    per_time
        .into_iter()
        .map(|comps| GaussianMixtureState::uniform(comps, beta))
        .collect()
}
