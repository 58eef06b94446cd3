//! Collision-history expansion of the reservoir dynamics.
//!
//! Conditioned on the number of events, the reservoir jump process is a
//! sequence of independent collisions: a pair `alpha = (i, j)` drawn with
//! weight `lambda_alpha` and a scattering direction drawn uniformly. A
//! *history* is such a sequence; it acts on velocity space as a product of
//! reflection matrices, and averaging the top-left system block of
//! `A^T A` over histories and a Poisson number of events yields the
//! covariance-sum coefficient
//!
//! ```text
//! c(t) = N/(N+M) + (M/(N+M)) exp(-mu (N+M) t / (d M)),
//! ```
//!
//! which this module provides both in closed form
//! ([`k_coefficient_analytic`]) and as a direct Monte Carlo average over
//! sampled histories ([`k_coefficient_mc`]). The two are independent
//! computations meeting at a formula, which is what makes the comparison a
//! meaningful test.
//!
//! The closed form comes from bookkeeping squared column masses per
//! particle class: a collision between particles with class-average masses
//! `m1` (system) and `m2` (reservoir) replaces them, after averaging over
//! the scattering direction, by
//!
//! ```text
//! m1 - (m1 - m2)/d,    m2 - (m2 - m1)/d
//! ```
//!
//! ([`single_step_update`]); weighting over all pairs compresses a whole
//! event into the 2x2 matrix `P` of [`p_matrix`], whose powers under the
//! Poisson average give `c(t)`. [`aggregate_step`] performs that weighting
//! by explicit enumeration of every pair, so the identity
//! `aggregate_step = P` is itself testable rather than assumed.

use nalgebra::DMatrix;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KacError, Result};
use crate::kinematics::{
    reflect_blocks_unchecked, sample_scattering_angle, PairCollision, DENSE_SIDE_CAP,
};
use crate::oracles::reservoir_envelope;
use crate::simulators::{sample_distinct_pair, ReservoirParams};

/// Upper bound accepted for the neglected Poisson tail mass.
pub const POISSON_TAIL_TOL: f64 = 1e-6;

/// Which of the three collision channels a pair belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairClass {
    /// Both particles in the system block `0..n`.
    System,
    /// Both particles in the reservoir block `n..n+m`.
    Reservoir,
    /// One particle in each block.
    Cross,
}

/// Classifies the pair `(i, j)` for a system of `n` particles followed by
/// `m` reservoir particles. Requires `i < j < n + m`.
pub fn pair_class(i: usize, j: usize, n: usize, m: usize) -> Result<PairClass> {
    if i >= j {
        return Err(KacError::BadPair { i, j });
    }
    let total = n + m;
    if j >= total {
        return Err(KacError::ParticleOutOfRange {
            index: j,
            count: total,
        });
    }
    Ok(if j < n {
        PairClass::System
    } else if i >= n {
        PairClass::Reservoir
    } else {
        PairClass::Cross
    })
}

/// Probability that a single event collides exactly the pair `(i, j)`:
/// `lambda_S/(Lambda (N-1))` for system pairs, `lambda_R/(Lambda (M-1))`
/// for reservoir pairs, `mu/(Lambda M)` for cross pairs. The weights of
/// all `(N+M choose 2)` pairs sum to one.
pub fn lambda_alpha(i: usize, j: usize, p: &ReservoirParams) -> Result<f64> {
    p.validate()?;
    let total = p.total_rate();
    if total == 0.0 {
        return Err(KacError::InvalidParameter {
            name: "total_rate",
            reason: "all channel rates vanish; pair weights are undefined".into(),
        });
    }
    Ok(match pair_class(i, j, p.n, p.m)? {
        PairClass::System => p.lambda_s / (total * (p.n as f64 - 1.0)),
        PairClass::Reservoir => p.lambda_r / (total * (p.m as f64 - 1.0)),
        PairClass::Cross => p.mu / (total * p.m as f64),
    })
}

/// A sampled sequence of collisions, in chronological order, acting on the
/// full `n + m` particle state.
#[derive(Clone, Debug)]
pub struct HistoryTerm {
    collisions: Vec<PairCollision>,
}

impl HistoryTerm {
    /// Wraps an explicit collision sequence. The pairs must fit the
    /// `n + m` particles of `p`.
    pub fn new(collisions: Vec<PairCollision>, p: &ReservoirParams) -> Result<Self> {
        p.validate()?;
        for c in &collisions {
            let (i, j) = c.pair();
            pair_class(i, j, p.n, p.m)?;
            if c.sigma().dim() != p.d {
                return Err(KacError::DimensionMismatch {
                    expected: p.d,
                    got: c.sigma().dim(),
                });
            }
        }
        Ok(Self { collisions })
    }

    /// Number of collisions in the history.
    pub fn len(&self) -> usize {
        self.collisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collisions.is_empty()
    }

    /// The collisions in chronological order.
    pub fn collisions(&self) -> &[PairCollision] {
        &self.collisions
    }
}

/// Draws a history of exactly `k` collisions: each pair independently with
/// law `lambda_alpha`, each scattering direction uniform.
pub fn sample_history<R: Rng + ?Sized>(
    k: usize,
    p: &ReservoirParams,
    rng: &mut R,
) -> Result<HistoryTerm> {
    p.validate()?;
    let rs = p.system_rate();
    let rr = p.reservoir_rate();
    let total = p.total_rate();
    if total == 0.0 && k > 0 {
        return Err(KacError::InvalidParameter {
            name: "total_rate",
            reason: "all channel rates vanish; cannot sample a non-empty history".into(),
        });
    }
    let mut collisions = Vec::with_capacity(k);
    for _ in 0..k {
        let pick: f64 = rng.random_range(0.0..total);
        let (i, j) = if pick < rs {
            sample_distinct_pair(p.n, rng)
        } else if pick < rs + rr {
            let (a, b) = sample_distinct_pair(p.m, rng);
            (p.n + a, p.n + b)
        } else {
            (rng.random_range(0..p.n), p.n + rng.random_range(0..p.m))
        };
        collisions.push(PairCollision::new(i, j, sample_scattering_angle(p.d, rng)?)?);
    }
    Ok(HistoryTerm { collisions })
}

/// Top-left `dN x dN` block of the product of the history's reflection
/// matrices (last collision leftmost). Columns are computed by running the
/// collisions over system basis vectors embedded in the full
/// `d(N+M)`-dimensional space, so no full matrix is ever materialized; the
/// [`DENSE_SIDE_CAP`] still applies to the full side as a scale guard.
pub fn block_a(h: &HistoryTerm, p: &ReservoirParams) -> Result<DMatrix<f64>> {
    p.validate()?;
    let d = p.d;
    let full = d * p.n_total();
    if full > DENSE_SIDE_CAP {
        return Err(KacError::DenseSideExceedsCap {
            side: full,
            cap: DENSE_SIDE_CAP,
        });
    }
    let side = d * p.n;
    let mut a = DMatrix::zeros(side, side);
    let mut column = vec![0.0; full];
    for col in 0..side {
        column.fill(0.0);
        column[col] = 1.0;
        for c in &h.collisions {
            let (i, j) = c.pair();
            reflect_blocks_unchecked(&mut column, d, i, j, c.sigma().components());
        }
        for row in 0..side {
            a[(row, col)] = column[row];
        }
    }
    Ok(a)
}

/// The closed-form covariance-sum coefficient at time `t`.
#[derive(Clone, Copy, Debug)]
pub struct KCoefficient {
    pub t: f64,
    pub value: f64,
}

/// `c(t) = N/(N+M) + (M/(N+M)) exp(-mu (N+M) t / (d M))`. Shares its
/// coefficients with [`reservoir_envelope`]: the covariance-sum rate and
/// the entropy-envelope rate are one and the same number.
pub fn k_coefficient_analytic(t: f64, p: &ReservoirParams) -> Result<KCoefficient> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(KacError::InvalidParameter {
            name: "t",
            reason: format!("time must be finite and non-negative, got {t}"),
        });
    }
    let envelope = reservoir_envelope(p)?;
    Ok(KCoefficient {
        t,
        value: envelope.eval(t),
    })
}

/// Monte Carlo estimate of the covariance-sum coefficient, together with
/// the isotropy diagnostics that justify reading the matrix average
/// through its trace.
#[derive(Clone, Debug)]
pub struct KCoefficientEstimate {
    pub t: f64,
    /// Mean of `trace(A^T A)/(dN)` over sampled histories.
    pub value: f64,
    pub stderr: f64,
    /// Largest absolute off-diagonal entry of the averaged `A^T A`; zero in
    /// expectation when the average is a multiple of the identity.
    pub isotropy_residual: f64,
    /// Standard error of that worst entry.
    pub isotropy_stderr: f64,
    pub n_samples: usize,
    /// Poisson cutoff actually used.
    pub k_max: usize,
}

/// Truncated-Poisson event-count law: probabilities for `k = 0..=k_max`,
/// renormalized. Construction fails when the neglected tail mass at
/// `k_max` exceeds `tol`, so the truncation bias (at most the tail mass,
/// since every history observable here is bounded by 1) is always far
/// below Monte Carlo resolution.
#[derive(Clone, Debug)]
struct TruncatedPoisson {
    cdf: Vec<f64>,
}

impl TruncatedPoisson {
    fn new(rate: f64, k_max: usize, tol: f64) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(KacError::InvalidParameter {
                name: "rate",
                reason: format!("Poisson rate must be finite and non-negative, got {rate}"),
            });
        }
        if rate == 0.0 {
            return Ok(Self { cdf: vec![1.0] });
        }
        // Work in log space so large rates cannot underflow the recurrence.
        let mut ln_fact = 0.0;
        let mut mass = 0.0;
        let mut pmf = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            if k > 0 {
                ln_fact += (k as f64).ln();
            }
            let p = (-rate + k as f64 * rate.ln() - ln_fact).exp();
            pmf.push(p);
            mass += p;
        }
        let tail = 1.0 - mass;
        if tail > tol {
            return Err(KacError::PoissonTailTooHeavy {
                rate,
                k_max,
                mass: tail,
                tol,
            });
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p / mass;
            cdf.push(acc);
        }
        // Guard the last bucket against rounding so sampling never falls off
        // the end.
        *cdf.last_mut().expect("k_max + 1 >= 1 entries") = 1.0;
        Ok(Self { cdf })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

/// Smallest cutoff `k_max` whose neglected Poisson tail mass is below
/// `tol`, found by accumulating the pmf.
pub fn poisson_truncation(rate: f64, tol: f64) -> Result<usize> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(KacError::InvalidParameter {
            name: "rate",
            reason: format!("Poisson rate must be finite and non-negative, got {rate}"),
        });
    }
    if !(tol.is_finite() && tol > 0.0 && tol < 1.0) {
        return Err(KacError::InvalidParameter {
            name: "tol",
            reason: format!("tail tolerance must lie in (0, 1), got {tol}"),
        });
    }
    if rate == 0.0 {
        return Ok(0);
    }
    let cap = (10.0 * rate).max(200.0) as usize;
    let mut ln_fact = 0.0;
    let mut mass = 0.0;
    for k in 0..=cap {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        mass += (-rate + k as f64 * rate.ln() - ln_fact).exp();
        if 1.0 - mass < tol {
            return Ok(k);
        }
    }
    Err(KacError::PoissonTailTooHeavy {
        rate,
        k_max: cap,
        mass: 1.0 - mass,
        tol,
    })
}

/// Per-chunk Monte Carlo accumulator: plain sums, merged in chunk order so
/// the result is independent of how chunks are scheduled across workers.
struct ChunkSums {
    n: usize,
    trace_sum: f64,
    trace_sq_sum: f64,
    entry_sum: DMatrix<f64>,
    entry_sq_sum: DMatrix<f64>,
}

/// Samples used per parallel chunk; fixed so that the chunk boundaries (and
/// hence every RNG substream) never depend on the worker count.
const MC_CHUNK: usize = 1024;

/// Monte Carlo average of `trace(A^T A)/(dN)` over histories with a
/// truncated-Poisson number of collisions, plus isotropy diagnostics from
/// the off-diagonal entries of the averaged `A^T A`.
///
/// `k_max` must make the Poisson tail mass smaller than
/// [`POISSON_TAIL_TOL`]; [`poisson_truncation`] computes the smallest such
/// cutoff. Sampling is parallelized over fixed-size chunks with one RNG
/// substream per chunk, so results are byte-identical for any worker
/// count.
pub fn k_coefficient_mc(
    t: f64,
    p: &ReservoirParams,
    n_samples: usize,
    k_max: usize,
    seed: u64,
) -> Result<KCoefficientEstimate> {
    p.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(KacError::InvalidParameter {
            name: "t",
            reason: format!("time must be finite and non-negative, got {t}"),
        });
    }
    if n_samples == 0 {
        return Err(KacError::Empty {
            what: "history sample set",
        });
    }
    let rate = p.total_rate() * t;
    let law = TruncatedPoisson::new(rate, k_max, POISSON_TAIL_TOL)?;
    let side = p.d * p.n;

    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let chunks: Vec<ChunkSums> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| -> Result<ChunkSums> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let lo = chunk * MC_CHUNK;
            let hi = ((chunk + 1) * MC_CHUNK).min(n_samples);
            let mut sums = ChunkSums {
                n: 0,
                trace_sum: 0.0,
                trace_sq_sum: 0.0,
                entry_sum: DMatrix::zeros(side, side),
                entry_sq_sum: DMatrix::zeros(side, side),
            };
            for _ in lo..hi {
                let k = law.sample(&mut rng);
                let h = sample_history(k, p, &mut rng)?;
                let a = block_a(&h, p)?;
                let g = a.transpose() * &a;
                let trace = g.trace() / side as f64;
                sums.n += 1;
                sums.trace_sum += trace;
                sums.trace_sq_sum += trace * trace;
                for col in 0..side {
                    for row in 0..side {
                        let x = g[(row, col)];
                        sums.entry_sum[(row, col)] += x;
                        sums.entry_sq_sum[(row, col)] += x * x;
                    }
                }
            }
            Ok(sums)
        })
        .collect::<Result<Vec<_>>>()?;

    // Deterministic merge in chunk order.
    let mut n = 0usize;
    let mut trace_sum = 0.0;
    let mut trace_sq_sum = 0.0;
    let mut entry_sum = DMatrix::zeros(side, side);
    let mut entry_sq_sum = DMatrix::zeros(side, side);
    for c in chunks {
        n += c.n;
        trace_sum += c.trace_sum;
        trace_sq_sum += c.trace_sq_sum;
        entry_sum += c.entry_sum;
        entry_sq_sum += c.entry_sq_sum;
    }
    debug_assert_eq!(n, n_samples);

    let nf = n as f64;
    let mean = trace_sum / nf;
    let stderr = sample_stderr(trace_sum, trace_sq_sum, n);

    let mut isotropy_residual = 0.0;
    let mut isotropy_stderr = 0.0;
    for col in 0..side {
        for row in 0..side {
            if row == col {
                continue;
            }
            let m = entry_sum[(row, col)] / nf;
            if m.abs() > isotropy_residual {
                isotropy_residual = m.abs();
                isotropy_stderr =
                    sample_stderr(entry_sum[(row, col)], entry_sq_sum[(row, col)], n);
            }
        }
    }

    Ok(KCoefficientEstimate {
        t,
        value: mean,
        stderr,
        isotropy_residual,
        isotropy_stderr,
        n_samples: n,
        k_max,
    })
}

/// Standard error of the mean from plain sums (`sum` of x, `sq_sum` of
/// x^2, `n` samples); zero for fewer than two samples or when rounding
/// drives the variance estimate negative.
fn sample_stderr(sum: f64, sq_sum: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let var = (sq_sum - sum * sum / nf) / (nf - 1.0);
    (var.max(0.0) / nf).sqrt()
}

/// One-event update of the class-average squared column masses for a pair
/// of the given class, averaged over the scattering direction. Same-class
/// pairs see two equal masses and leave them unchanged; a cross pair mixes
/// a fraction `1/d` of the imbalance.
pub fn single_step_update(m1: f64, m2: f64, class: PairClass, d: usize) -> Result<(f64, f64)> {
    if d == 0 {
        return Err(KacError::ZeroDimension);
    }
    Ok(match class {
        PairClass::System | PairClass::Reservoir => (m1, m2),
        PairClass::Cross => {
            let mix = (m1 - m2) / d as f64;
            (m1 - mix, m2 + mix)
        }
    })
}

/// One-event update of `(m1, m2)` aggregated over every pair with its
/// `lambda_alpha` weight, by explicit enumeration. A colliding particle
/// carries its class average into [`single_step_update`], and the result
/// is folded back into the class averages (one particle out of `N`, or
/// out of `M`, changed). Equals `p_matrix * (m1, m2)^T` — but computed
/// without ever writing down `P`.
pub fn aggregate_step(m1: f64, m2: f64, p: &ReservoirParams) -> Result<(f64, f64)> {
    p.validate()?;
    let mut out1 = 0.0;
    let mut out2 = 0.0;
    let mut total_weight = 0.0;
    let n_total = p.n_total();
    for i in 0..n_total {
        for j in (i + 1)..n_total {
            let w = lambda_alpha(i, j, p)?;
            total_weight += w;
            match pair_class(i, j, p.n, p.m)? {
                PairClass::System | PairClass::Reservoir => {
                    out1 += w * m1;
                    out2 += w * m2;
                }
                PairClass::Cross => {
                    let (c1, c2) = single_step_update(m1, m2, PairClass::Cross, p.d)?;
                    out1 += w * (m1 + (c1 - m1) / p.n as f64);
                    out2 += w * (m2 + (c2 - m2) / p.m as f64);
                }
            }
        }
    }
    debug_assert!((total_weight - 1.0).abs() < 1e-12);
    Ok((out1, out2))
}

/// The 2x2 one-event matrix on class-average masses,
/// `P = I - (mu/(d Lambda M)) [[M, -M], [-N, N]]`, acting on columns
/// `(m1, m2)^T`.
pub fn p_matrix(p: &ReservoirParams) -> Result<DMatrix<f64>> {
    p.validate()?;
    let c = p.mu / (p.d as f64 * p.total_rate() * p.m as f64);
    let n = p.n as f64;
    let m = p.m as f64;
    Ok(DMatrix::from_row_slice(
        2,
        2,
        &[1.0 - c * m, c * m, c * n, 1.0 - c * n],
    ))
}

/// Eigenvalues of [`p_matrix`] in closed form: `1` (equal masses are a
/// fixed point) and `1 - mu (N+M) / (d Lambda M)` (the imbalance mode,
/// whose Poisson average produces the exponential in `c(t)`).
pub fn p_matrix_eigenvalues(p: &ReservoirParams) -> Result<(f64, f64)> {
    p.validate()?;
    let n = p.n as f64;
    let m = p.m as f64;
    Ok((
        1.0,
        1.0 - p.mu * (n + m) / (p.d as f64 * p.total_rate() * m),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn params() -> ReservoirParams {
        ReservoirParams {
            d: 2,
            n: 2,
            m: 3,
            lambda_s: 1.0,
            lambda_r: 1.0,
            mu: 1.0,
            beta: 1.0,
        }
    }

    #[test]
    fn pair_weights_match_the_worked_example() {
        // N = 2, M = 2, all rates 1: Lambda = 1 + 1 + 2 = 4, cross weight
        // mu/(Lambda M) = 1/8.
        let p = ReservoirParams {
            d: 3,
            n: 2,
            m: 2,
            lambda_s: 1.0,
            lambda_r: 1.0,
            mu: 1.0,
            beta: 1.0,
        };
        assert_relative_eq!(p.total_rate(), 4.0, max_relative = 1e-15);
        assert_relative_eq!(lambda_alpha(0, 2, &p).unwrap(), 1.0 / 8.0, max_relative = 1e-15);
        // Same-class weights depend only on the class.
        assert_eq!(
            lambda_alpha(0, 1, &p).unwrap(),
            lambda_alpha(2, 3, &p).unwrap()
        );
    }

    #[test]
    fn pair_classes_partition_the_index_set() {
        let p = params();
        let mut counts = [0usize; 3];
        for i in 0..p.n_total() {
            for j in (i + 1)..p.n_total() {
                match pair_class(i, j, p.n, p.m).unwrap() {
                    PairClass::System => counts[0] += 1,
                    PairClass::Reservoir => counts[1] += 1,
                    PairClass::Cross => counts[2] += 1,
                }
            }
        }
        assert_eq!(counts, [1, 3, 6]); // C(2,2), C(3,2), 2*3
        assert!(pair_class(1, 1, 2, 3).is_err());
        assert!(pair_class(0, 5, 2, 3).is_err());
    }

    proptest! {
        #[test]
        fn pair_weights_sum_to_one(
            n in 2usize..6,
            m in 2usize..6,
            d in 1usize..4,
            lambda_s in 0.1f64..5.0,
            lambda_r in 0.1f64..5.0,
            mu in 0.1f64..5.0,
        ) {
            let p = ReservoirParams { d, n, m, lambda_s, lambda_r, mu, beta: 1.0 };
            let mut sum = 0.0;
            for i in 0..p.n_total() {
                for j in (i + 1)..p.n_total() {
                    sum += lambda_alpha(i, j, &p).unwrap();
                }
            }
            prop_assert!((sum - 1.0).abs() < 1e-14, "sum = {sum}");
        }

        #[test]
        fn aggregate_step_equals_the_p_matrix(
            n in 2usize..6,
            m in 2usize..6,
            d in 1usize..4,
            m1 in 0.0f64..2.0,
            m2 in 0.0f64..2.0,
        ) {
            let p = ReservoirParams {
                d, n, m,
                lambda_s: 0.7,
                lambda_r: 1.3,
                mu: 0.9,
                beta: 1.0,
            };
            let (a1, a2) = aggregate_step(m1, m2, &p).unwrap();
            let pm = p_matrix(&p).unwrap();
            let v = &pm * DVector::from_row_slice(&[m1, m2]);
            prop_assert!((a1 - v[0]).abs() < 1e-12, "m1: {a1} vs {}", v[0]);
            prop_assert!((a2 - v[1]).abs() < 1e-12, "m2: {a2} vs {}", v[1]);
        }
    }

    #[test]
    fn p_matrix_eigenstructure_is_exact() {
        let p = params();
        let pm = p_matrix(&p).unwrap();
        let (lam1, lam2) = p_matrix_eigenvalues(&p).unwrap();
        assert_eq!(lam1, 1.0);
        // Lambda = 1*2/2 + 1*3/2 + 1*2 = 4.5; eta = 1 - 1*5/(2*4.5*3).
        assert_relative_eq!(lam2, 1.0 - 5.0 / 27.0, max_relative = 1e-15);
        // Equal masses are fixed exactly.
        let fixed = &pm * DVector::from_row_slice(&[1.0, 1.0]);
        assert_relative_eq!(fixed[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(fixed[1], 1.0, max_relative = 1e-15);
        // The imbalance mode (M, -N) contracts by exactly lam2.
        let v = DVector::from_row_slice(&[p.m as f64, -(p.n as f64)]);
        let pv = &pm * &v;
        assert_relative_eq!(pv[0], lam2 * v[0], max_relative = 1e-12);
        assert_relative_eq!(pv[1], lam2 * v[1], max_relative = 1e-12);
        // Characteristic polynomial roots match the closed form.
        let trace = pm[(0, 0)] + pm[(1, 1)];
        let det = pm[(0, 0)] * pm[(1, 1)] - pm[(0, 1)] * pm[(1, 0)];
        assert_relative_eq!(trace, lam1 + lam2, max_relative = 1e-14);
        assert_relative_eq!(det, lam1 * lam2, max_relative = 1e-14);
    }

    #[test]
    fn p_iteration_reproduces_the_closed_form_coefficient() {
        let p = params();
        let pm = p_matrix(&p).unwrap();
        let (_, eta) = p_matrix_eigenvalues(&p).unwrap();
        let n = p.n as f64;
        let m = p.m as f64;
        let mut v = DVector::from_row_slice(&[1.0, 0.0]);
        for k in 0..12 {
            let expected = n / (n + m) + eta.powi(k) * m / (n + m);
            assert_relative_eq!(v[0], expected, max_relative = 1e-13);
            v = &pm * v;
        }
    }

    #[test]
    fn single_step_is_a_fixed_point_on_equal_masses_and_identity_for_large_d() {
        let (a, b) = single_step_update(0.7, 0.7, PairClass::Cross, 3).unwrap();
        assert_eq!((a, b), (0.7, 0.7));
        let (a, b) = single_step_update(0.9, 0.1, PairClass::System, 2).unwrap();
        assert_eq!((a, b), (0.9, 0.1));
        // 1/d mixing vanishes as d grows.
        let (a, _) = single_step_update(1.0, 0.0, PairClass::Cross, 1_000_000).unwrap();
        assert_relative_eq!(a, 1.0, epsilon = 1e-5);
        // d = 1 swaps the pair outright.
        let (a, b) = single_step_update(1.0, 0.0, PairClass::Cross, 1).unwrap();
        assert_eq!((a, b), (0.0, 1.0));
    }

    #[test]
    fn empty_history_gives_the_identity_block() {
        let p = params();
        let h = HistoryTerm::new(Vec::new(), &p).unwrap();
        let a = block_a(&h, &p).unwrap();
        assert_eq!(a, DMatrix::identity(4, 4));
    }

    #[test]
    fn internal_system_collision_keeps_the_block_orthogonal() {
        // A single system-system collision mixes no reservoir mass, so the
        // block is itself orthogonal: A^T A = I.
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = sample_scattering_angle(p.d, &mut rng).unwrap();
        let h = HistoryTerm::new(vec![PairCollision::new(0, 1, sigma).unwrap()], &p).unwrap();
        let a = block_a(&h, &p).unwrap();
        let g = a.transpose() * &a;
        assert_relative_eq!(g, DMatrix::identity(4, 4), epsilon = 1e-12);
    }

    #[test]
    fn history_blocks_are_contractions() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in [1usize, 2, 5, 8] {
            let h = sample_history(k, &p, &mut rng).unwrap();
            assert_eq!(h.len(), k);
            let a = block_a(&h, &p).unwrap();
            let top = a.singular_values()[0];
            assert!(
                top <= 1.0 + 1e-12,
                "spectral norm {top} exceeds 1 for k = {k}"
            );
        }
    }

    #[test]
    fn history_class_frequencies_match_the_channel_rates() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let draws = 100_000usize;
        let h = sample_history(draws, &p, &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for c in h.collisions() {
            let (i, j) = c.pair();
            match pair_class(i, j, p.n, p.m).unwrap() {
                PairClass::System => counts[0] += 1,
                PairClass::Reservoir => counts[1] += 1,
                PairClass::Cross => counts[2] += 1,
            }
        }
        let total = p.total_rate();
        let probs = [
            p.system_rate() / total,
            p.reservoir_rate() / total,
            p.cross_rate() / total,
        ];
        for (count, prob) in counts.iter().zip(probs) {
            let se = (prob * (1.0 - prob) / draws as f64).sqrt();
            let z = (*count as f64 / draws as f64 - prob) / se;
            assert!(z.abs() < 4.0, "channel frequency off: z = {z}");
        }
    }

    #[test]
    fn truncated_poisson_matches_the_pmf_and_flags_heavy_tails() {
        let rate = 4.5;
        let k_max = poisson_truncation(rate, POISSON_TAIL_TOL).unwrap();
        // The cutoff is minimal: one step earlier the tail is too heavy.
        assert!(TruncatedPoisson::new(rate, k_max, POISSON_TAIL_TOL).is_ok());
        assert!(matches!(
            TruncatedPoisson::new(rate, k_max - 1, POISSON_TAIL_TOL),
            Err(KacError::PoissonTailTooHeavy { .. })
        ));

        // Sampled frequencies match the Poisson pmf.
        let law = TruncatedPoisson::new(rate, k_max, POISSON_TAIL_TOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 200_000usize;
        let mut counts = vec![0usize; k_max + 1];
        for _ in 0..draws {
            counts[law.sample(&mut rng)] += 1;
        }
        let mut pk = (-rate).exp();
        for (k, count) in counts.iter().enumerate() {
            if k > 0 {
                pk *= rate / k as f64;
            }
            let se = (pk * (1.0 - pk) / draws as f64).sqrt();
            let z = (*count as f64 / draws as f64 - pk) / se.max(1e-12);
            assert!(z.abs() < 5.0, "pmf mismatch at k = {k}: z = {z}");
        }

        // Zero rate degenerates to "no collisions".
        assert_eq!(poisson_truncation(0.0, POISSON_TAIL_TOL).unwrap(), 0);
    }

    #[test]
    fn k_coefficient_at_time_zero_is_exactly_one() {
        let p = params();
        let est = k_coefficient_mc(0.0, &p, 2000, 0, 99).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.isotropy_residual, 0.0);
        assert_eq!(est.k_max, 0);
        assert_eq!(k_coefficient_analytic(0.0, &p).unwrap().value, 1.0);
    }

    #[test]
    fn k_coefficient_mc_matches_the_closed_form() {
        let p = params();
        let t = 1.0;
        let k_max = poisson_truncation(p.total_rate() * t, POISSON_TAIL_TOL).unwrap();
        let est = k_coefficient_mc(t, &p, 20_000, k_max, 123).unwrap();
        let exact = k_coefficient_analytic(t, &p).unwrap().value;
        let z = (est.value - exact) / est.stderr;
        assert!(z.abs() < 4.0, "MC {} vs exact {exact}: z = {z}", est.value);
        // Isotropy: the worst off-diagonal entry is noise around zero.
        assert!(
            est.isotropy_residual < 4.0 * est.isotropy_stderr,
            "off-diagonal residual {} vs stderr {}",
            est.isotropy_residual,
            est.isotropy_stderr
        );
    }

    #[test]
    fn k_coefficient_mc_is_reproducible_and_worker_independent() {
        let p = params();
        let k_max = poisson_truncation(p.total_rate() * 0.5, POISSON_TAIL_TOL).unwrap();
        let a = k_coefficient_mc(0.5, &p, 3000, k_max, 7).unwrap();
        let b = k_coefficient_mc(0.5, &p, 3000, k_max, 7).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());

        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| k_coefficient_mc(0.5, &p, 3000, k_max, 7).unwrap());
        assert_eq!(a.value.to_bits(), single.value.to_bits());
        assert_eq!(
            a.isotropy_residual.to_bits(),
            single.isotropy_residual.to_bits()
        );
    }

    #[test]
    fn k_coefficient_variance_shrinks_with_sample_size() {
        let p = params();
        let k_max = poisson_truncation(p.total_rate() * 1.0, POISSON_TAIL_TOL).unwrap();
        let small = k_coefficient_mc(1.0, &p, 2000, k_max, 17).unwrap();
        let large = k_coefficient_mc(1.0, &p, 8000, k_max, 17).unwrap();
        // Quadrupling the samples should halve the standard error, up to
        // sampling noise in the variance estimate itself.
        let ratio = large.stderr / small.stderr;
        assert!(
            (0.35..0.7).contains(&ratio),
            "stderr ratio {ratio} not near 0.5"
        );
    }

    #[test]
    fn analytic_coefficient_has_the_right_floor_and_large_m_limit() {
        let p = params();
        let c_inf = k_coefficient_analytic(1e9, &p).unwrap().value;
        assert_relative_eq!(c_inf, 2.0 / 5.0, max_relative = 1e-12);

        // Large M at fixed t approaches the thermostat decay exp(-mu t/d).
        let big = ReservoirParams {
            m: 200_000,
            ..params()
        };
        let c = k_coefficient_analytic(1.5, &big).unwrap().value;
        let thermostat = (-big.mu * 1.5 / big.d as f64).exp();
        assert_relative_eq!(c, thermostat, max_relative = 1e-4);

        // Monotone nonincreasing on a dense grid, always within
        // [N/(N+M), 1].
        let mut prev = 1.0;
        for k in 0..=200 {
            let c = k_coefficient_analytic(k as f64 * 0.05, &p).unwrap().value;
            assert!(c <= prev + 1e-15);
            assert!((2.0 / 5.0..=1.0).contains(&c));
            prev = c;
        }
    }

    #[test]
    fn tail_mass_violations_are_rejected() {
        let p = params();
        let err = k_coefficient_mc(2.0, &p, 100, 2, 3).unwrap_err();
        assert!(matches!(err, KacError::PoissonTailTooHeavy { .. }));
    }

    #[test]
    fn averaged_gram_matrix_matches_the_p_iteration_prediction() {
        // Brute-force check at desk scale: E[A^T A] after exactly k
        // collisions equals (P^k (1,0)^T)_1 * Identity. This ties the
        // sampled histories to the 2x2 aggregation without the Poisson
        // layer in between.
        let p = ReservoirParams {
            d: 2,
            n: 2,
            m: 2,
            lambda_s: 1.0,
            lambda_r: 0.8,
            mu: 1.2,
            beta: 1.0,
        };
        let k = 3usize;
        let pm = p_matrix(&p).unwrap();
        let mut v = DVector::from_row_slice(&[1.0, 0.0]);
        for _ in 0..k {
            v = &pm * v;
        }
        let predicted = v[0];

        let side = p.d * p.n;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let draws = 30_000usize;
        let mut sum = 0.0;
        let mut sq_sum = 0.0;
        let mut mean_g = DMatrix::zeros(side, side);
        for _ in 0..draws {
            let h = sample_history(k, &p, &mut rng).unwrap();
            let a = block_a(&h, &p).unwrap();
            let g = a.transpose() * &a;
            let tr = g.trace() / side as f64;
            sum += tr;
            sq_sum += tr * tr;
            mean_g += g;
        }
        mean_g /= draws as f64;
        let se = sample_stderr(sum, sq_sum, draws);
        let z = (sum / draws as f64 - predicted) / se;
        assert!(z.abs() < 4.0, "trace readout z = {z}");
        // The averaged matrix is close to predicted * I entrywise.
        for col in 0..side {
            for row in 0..side {
                let target = if row == col { predicted } else { 0.0 };
                assert!(
                    (mean_g[(row, col)] - target).abs() < 0.02,
                    "entry ({row},{col}) = {} vs {target}",
                    mean_g[(row, col)]
                );
            }
        }
    }
}
