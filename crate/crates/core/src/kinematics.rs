//! Collision kinematics: scattering directions, pair reflections, and their
//! dense matrix representation.
//!
//! A binary collision between velocities `v, w` in `R^d` with scattering
//! direction `sigma` on the unit sphere reflects the relative velocity:
//!
//! ```text
//! v* = v - (sigma . (v - w)) sigma
//! w* = w + (sigma . (v - w)) sigma
//! ```
//!
//! The map conserves momentum `v + w` and kinetic energy `|v|^2 + |w|^2`,
//! and is an involution: applying the same collision twice restores the
//! original pair. On the flat phase space `R^{d n}` (particle-major layout:
//! particle `i` owns entries `i*d .. (i+1)*d`) a collision of the pair
//! `(i, j)` acts as a symmetric orthogonal matrix that differs from the
//! identity only in the four `d x d` blocks of that pair:
//!
//! ```text
//! block (i,i) = I - P    block (i,j) = P
//! block (j,i) = P        block (j,j) = I - P      with P = sigma sigma^T.
//! ```
//!
//! Scattering directions are drawn uniformly from the sphere by normalizing
//! a standard Gaussian vector; for `d = 1` this degenerates to a fair coin
//! on `{+1, -1}` and the collision always swaps the two velocities. The
//! second moment of a uniform direction is `E[sigma sigma^T] = I / d`, the
//! identity every sigma-averaged formula in the other modules relies on.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KacError, Result};

/// Tolerance for the unit-norm contract on scattering directions.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Largest side for which dense collision matrices will be materialized.
/// Beyond this, use the block form ([`apply_pair_collision`]) instead.
pub const DENSE_SIDE_CAP: usize = 64;

/// A unit vector in `R^d` along which a collision reflects the relative
/// velocity. Construction enforces the unit norm, so downstream code can
/// rely on it.
#[derive(Clone, Debug)]
pub struct ScatteringAngle {
    components: Vec<f64>,
}

impl ScatteringAngle {
    /// Wraps an already-normalized direction; rejects vectors whose norm
    /// deviates from 1 by more than [`UNIT_NORM_TOL`].
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(KacError::ZeroDimension);
        }
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(KacError::NotAUnitVector { norm });
        }
        Ok(Self { components })
    }

    /// Normalizes an arbitrary non-zero direction.
    pub fn from_direction(direction: &[f64]) -> Result<Self> {
        if direction.is_empty() {
            return Err(KacError::ZeroDimension);
        }
        let norm = direction.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(KacError::ZeroDirection);
        }
        Ok(Self {
            components: direction.iter().map(|c| c / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }
}

/// Draws a direction uniformly from the unit sphere in `R^d` by normalizing
/// a vector of independent standard normals. For `d = 1` the result is a
/// fair sign.
pub fn sample_scattering_angle<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<ScatteringAngle> {
    if d == 0 {
        return Err(KacError::ZeroDimension);
    }
    // A Gaussian sample of negligible length carries no usable direction;
    // redraw. The probability is astronomically small, so the loop is
    // effectively a single pass.
    loop {
        let raw: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm2: f64 = raw.iter().map(|c| c * c).sum();
        if norm2 > 1e-24 {
            let norm = norm2.sqrt();
            return Ok(ScatteringAngle {
                components: raw.into_iter().map(|c| c / norm).collect(),
            });
        }
    }
}

/// Reflects the relative velocity of the pair `(v, w)` along `sigma`,
/// in place.
///
/// ```
/// use kac_core::kinematics::{apply_reflection, ScatteringAngle};
///
/// let mut v = [1.0, 0.0];
/// let mut w = [0.0, 1.0];
/// let sigma = ScatteringAngle::new(vec![1.0, 0.0]).unwrap();
/// apply_reflection(&mut v, &mut w, &sigma).unwrap();
/// assert_eq!(v, [0.0, 0.0]);
/// assert_eq!(w, [1.0, 1.0]);
/// ```
pub fn apply_reflection(v: &mut [f64], w: &mut [f64], sigma: &ScatteringAngle) -> Result<()> {
    let d = sigma.dim();
    if v.len() != d {
        return Err(KacError::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    if w.len() != d {
        return Err(KacError::DimensionMismatch {
            expected: d,
            got: w.len(),
        });
    }
    reflect_unchecked(v, w, sigma.components());
    Ok(())
}

#[inline]
fn reflect_unchecked(v: &mut [f64], w: &mut [f64], sigma: &[f64]) {
    let mut s = 0.0;
    for k in 0..sigma.len() {
        s += sigma[k] * (v[k] - w[k]);
    }
    for k in 0..sigma.len() {
        v[k] -= s * sigma[k];
        w[k] += s * sigma[k];
    }
}

/// Applies the `(i, j)` pair reflection to a flat particle-major buffer.
/// No bounds or norm checks; callers guarantee `i != j`, both blocks in
/// range, and `sigma` of length `d`. This is the hot path shared by the
/// simulators and the Gaussian covariance propagation.
pub(crate) fn reflect_blocks_unchecked(buf: &mut [f64], d: usize, i: usize, j: usize, sigma: &[f64]) {
    let mut s = 0.0;
    for k in 0..d {
        s += sigma[k] * (buf[i * d + k] - buf[j * d + k]);
    }
    for k in 0..d {
        buf[i * d + k] -= s * sigma[k];
        buf[j * d + k] += s * sigma[k];
    }
}

/// One collision event: the (ordered) pair it hits and the scattering
/// direction.
#[derive(Clone, Debug)]
pub struct PairCollision {
    i: usize,
    j: usize,
    sigma: ScatteringAngle,
}

impl PairCollision {
    /// Requires `i < j`; the upper bound is checked against a concrete state
    /// at application time.
    pub fn new(i: usize, j: usize, sigma: ScatteringAngle) -> Result<Self> {
        if i >= j {
            return Err(KacError::BadPair { i, j });
        }
        Ok(Self { i, j, sigma })
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.i, self.j)
    }

    pub fn sigma(&self) -> &ScatteringAngle {
        &self.sigma
    }
}

/// Velocities of `n` particles in `R^d`, stored flat and particle-major:
/// particle `i` owns `v[i*d .. (i+1)*d]`.
#[derive(Clone, Debug)]
pub struct MasterState {
    d: usize,
    n: usize,
    v: Vec<f64>,
}

impl MasterState {
    pub fn new(d: usize, n: usize, velocities: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(KacError::ZeroDimension);
        }
        if n == 0 {
            return Err(KacError::Empty { what: "particle count" });
        }
        if velocities.len() != d * n {
            return Err(KacError::DimensionMismatch {
                expected: d * n,
                got: velocities.len(),
            });
        }
        if velocities.iter().any(|x| !x.is_finite()) {
            return Err(KacError::InvalidParameter {
                name: "velocities",
                reason: "all components must be finite".into(),
            });
        }
        Ok(Self { d, n, v: velocities })
    }

    /// All particles at rest.
    pub fn zeros(d: usize, n: usize) -> Result<Self> {
        Self::new(d, n, vec![0.0; d.checked_mul(n).unwrap_or(0)])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    /// Total number of scalar degrees of freedom, `d * n`.
    pub fn phase_dim(&self) -> usize {
        self.d * self.n
    }

    pub fn velocities(&self) -> &[f64] {
        &self.v
    }

    pub fn particle(&self, i: usize) -> Result<&[f64]> {
        if i >= self.n {
            return Err(KacError::ParticleOutOfRange {
                index: i,
                count: self.n,
            });
        }
        Ok(&self.v[i * self.d..(i + 1) * self.d])
    }

    pub fn particle_mut(&mut self, i: usize) -> Result<&mut [f64]> {
        if i >= self.n {
            return Err(KacError::ParticleOutOfRange {
                index: i,
                count: self.n,
            });
        }
        Ok(&mut self.v[i * self.d..(i + 1) * self.d])
    }

    /// Kinetic energy `sum |v_i|^2 / 2` of the particles in `range`.
    pub fn kinetic_energy_of(&self, range: std::ops::Range<usize>) -> f64 {
        let lo = range.start.min(self.n) * self.d;
        let hi = range.end.min(self.n) * self.d;
        0.5 * self.v[lo..hi].iter().map(|x| x * x).sum::<f64>()
    }

    /// Kinetic energy of the whole state.
    ///
    /// ```
    /// use kac_core::kinematics::MasterState;
    ///
    /// let s = MasterState::new(2, 1, vec![3.0, 4.0]).unwrap();
    /// assert_eq!(s.kinetic_energy(), 12.5);
    /// ```
    pub fn kinetic_energy(&self) -> f64 {
        self.kinetic_energy_of(0..self.n)
    }

    /// Component-wise total momentum of the particles in `range`.
    pub fn momentum_of(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        let mut p = vec![0.0; self.d];
        for i in range.start.min(self.n)..range.end.min(self.n) {
            for k in 0..self.d {
                p[k] += self.v[i * self.d + k];
            }
        }
        p
    }

    pub fn momentum(&self) -> Vec<f64> {
        self.momentum_of(0..self.n)
    }
}

/// Applies one pair collision to the state, in place.
pub fn apply_pair_collision(state: &mut MasterState, collision: &PairCollision) -> Result<()> {
    let (i, j) = collision.pair();
    if j >= state.n {
        return Err(KacError::ParticleOutOfRange {
            index: j,
            count: state.n,
        });
    }
    if collision.sigma.dim() != state.d {
        return Err(KacError::DimensionMismatch {
            expected: state.d,
            got: collision.sigma.dim(),
        });
    }
    reflect_blocks_unchecked(&mut state.v, state.d, i, j, collision.sigma.components());
    Ok(())
}

/// Dense `(d n) x (d n)` matrix of one pair collision: the identity except
/// for the four `d x d` blocks of the colliding pair. Refuses to build
/// matrices with side beyond `cap` (default [`DENSE_SIDE_CAP`]); the block
/// form has no such limit.
pub fn collision_matrix_dense(
    collision: &PairCollision,
    d: usize,
    n_particles: usize,
    cap: Option<usize>,
) -> Result<nalgebra::DMatrix<f64>> {
    if d == 0 {
        return Err(KacError::ZeroDimension);
    }
    let (i, j) = collision.pair();
    if j >= n_particles {
        return Err(KacError::ParticleOutOfRange {
            index: j,
            count: n_particles,
        });
    }
    if collision.sigma.dim() != d {
        return Err(KacError::DimensionMismatch {
            expected: d,
            got: collision.sigma.dim(),
        });
    }
    let side = d * n_particles;
    let cap = cap.unwrap_or(DENSE_SIDE_CAP);
    if side > cap {
        return Err(KacError::DenseSideExceedsCap { side, cap });
    }
    let sigma = collision.sigma.components();
    let mut m = nalgebra::DMatrix::<f64>::identity(side, side);
    for r in 0..d {
        for c in 0..d {
            let p = sigma[r] * sigma[c];
            m[(i * d + r, i * d + c)] -= p;
            m[(i * d + r, j * d + c)] += p;
            m[(j * d + r, i * d + c)] += p;
            m[(j * d + r, j * d + c)] -= p;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state_energy_momentum(state: &MasterState) -> (f64, Vec<f64>) {
        (state.kinetic_energy(), state.momentum())
    }

    #[test]
    fn reflection_along_first_axis_zeroes_the_shared_component() {
        let mut v = [1.0, 0.0];
        let mut w = [0.0, 1.0];
        let sigma = ScatteringAngle::new(vec![1.0, 0.0]).unwrap();
        apply_reflection(&mut v, &mut w, &sigma).unwrap();
        assert_eq!(v, [0.0, 0.0]);
        assert_eq!(w, [1.0, 1.0]);
    }

    #[test]
    fn reflection_along_relative_velocity_swaps_the_pair() {
        let mut v = [1.0, 0.0];
        let mut w = [0.0, 1.0];
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        let sigma = ScatteringAngle::new(vec![inv_sqrt2, -inv_sqrt2]).unwrap();
        apply_reflection(&mut v, &mut w, &sigma).unwrap();
        assert_relative_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn one_dimensional_collisions_always_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..32 {
            let sigma = sample_scattering_angle(1, &mut rng).unwrap();
            assert!(sigma.components()[0].abs() == 1.0);
            let mut v = [1.25];
            let mut w = [-0.5];
            apply_reflection(&mut v, &mut w, &sigma).unwrap();
            assert_relative_eq!(v[0], -0.5, epsilon = 1e-15);
            assert_relative_eq!(w[0], 1.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn long_collision_chains_conserve_energy_and_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [1usize, 2, 3] {
            let n = 6;
            let velocities: Vec<f64> = (0..d * n)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0)
                .collect();
            let mut state = MasterState::new(d, n, velocities).unwrap();
            let (e0, p0) = state_energy_momentum(&state);
            for _ in 0..10_000 {
                let a = rng.random_range(0..n);
                let b = loop {
                    let b = rng.random_range(0..n);
                    if b != a {
                        break b;
                    }
                };
                let (i, j) = (a.min(b), a.max(b));
                let sigma = sample_scattering_angle(d, &mut rng).unwrap();
                let collision = PairCollision::new(i, j, sigma).unwrap();
                apply_pair_collision(&mut state, &collision).unwrap();
            }
            let (e1, p1) = state_energy_momentum(&state);
            assert_relative_eq!(e1, e0, max_relative = 1e-12);
            for k in 0..d {
                assert_relative_eq!(p1[k], p0[k], epsilon = 1e-12 * (1.0 + p0[k].abs()));
            }
        }
    }

    #[test]
    fn dense_matrix_is_a_symmetric_orthogonal_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, n) = (3, 4);
        let sigma = sample_scattering_angle(d, &mut rng).unwrap();
        let collision = PairCollision::new(1, 3, sigma).unwrap();
        let m = collision_matrix_dense(&collision, d, n, None).unwrap();
        let side = d * n;
        assert_relative_eq!(m.clone(), m.transpose(), epsilon = 0.0);
        let prod = &m * &m;
        let id = nalgebra::DMatrix::<f64>::identity(side, side);
        assert!((prod - id).abs().max() < 1e-12);
    }

    #[test]
    fn dense_matrix_side_is_capped() {
        let sigma = ScatteringAngle::new(vec![1.0, 0.0]).unwrap();
        let collision = PairCollision::new(0, 1, sigma).unwrap();
        let err = collision_matrix_dense(&collision, 2, 40, None).unwrap_err();
        match err {
            KacError::DenseSideExceedsCap { side, cap } => {
                assert_eq!(side, 80);
                assert_eq!(cap, DENSE_SIDE_CAP);
            }
            other => panic!("unexpected error: {other}"),
        }
        // An explicit cap overrides the default.
        assert!(collision_matrix_dense(&collision, 2, 40, Some(80)).is_ok());
    }

    #[test]
    fn sampled_directions_are_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 1..=5 {
            for _ in 0..100 {
                let sigma = sample_scattering_angle(d, &mut rng).unwrap();
                let norm: f64 = sigma.components().iter().map(|c| c * c).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() <= UNIT_NORM_TOL);
            }
        }
        assert!(matches!(
            sample_scattering_angle(0, &mut rng),
            Err(KacError::ZeroDimension)
        ));
    }

    #[test]
    fn second_moment_of_directions_is_isotropic() {
        // E[sigma sigma^T] = I/d; checked in max-norm with a 4/sqrt(n) budget.
        let n_samples = 200_000;
        for d in [2usize, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(17 + d as u64);
            let mut acc = vec![0.0; d * d];
            for _ in 0..n_samples {
                let sigma = sample_scattering_angle(d, &mut rng).unwrap();
                let s = sigma.components();
                for r in 0..d {
                    for c in 0..d {
                        acc[r * d + c] += s[r] * s[c];
                    }
                }
            }
            let budget = 4.0 / (n_samples as f64).sqrt();
            for r in 0..d {
                for c in 0..d {
                    let mean = acc[r * d + c] / n_samples as f64;
                    let target = if r == c { 1.0 / d as f64 } else { 0.0 };
                    assert!(
                        (mean - target).abs() < budget,
                        "entry ({r},{c}) of E[sigma sigma^T] off by {} (budget {budget})",
                        (mean - target).abs()
                    );
                }
            }
        }
    }

    #[test]
    fn constructors_enforce_their_contracts() {
        assert!(matches!(
            ScatteringAngle::new(vec![0.5, 0.5]),
            Err(KacError::NotAUnitVector { .. })
        ));
        assert!(matches!(
            ScatteringAngle::from_direction(&[0.0, 0.0]),
            Err(KacError::ZeroDirection)
        ));
        assert!(ScatteringAngle::from_direction(&[3.0, 4.0]).is_ok());
        assert!(matches!(
            PairCollision::new(2, 2, ScatteringAngle::new(vec![1.0]).unwrap()),
            Err(KacError::BadPair { .. })
        ));
        assert!(matches!(
            MasterState::new(2, 3, vec![0.0; 5]),
            Err(KacError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            MasterState::new(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(KacError::InvalidParameter { .. })
        ));
        let state = MasterState::zeros(2, 2).unwrap();
        assert!(state.particle(2).is_err());
    }

    #[test]
    fn collision_rejects_out_of_range_pair_and_mismatched_sigma() {
        let mut state = MasterState::zeros(2, 3).unwrap();
        let sigma2 = ScatteringAngle::new(vec![1.0, 0.0]).unwrap();
        let bad_index = PairCollision::new(1, 3, sigma2.clone()).unwrap();
        assert!(apply_pair_collision(&mut state, &bad_index).is_err());
        let sigma3 = ScatteringAngle::new(vec![1.0, 0.0, 0.0]).unwrap();
        let bad_dim = PairCollision::new(0, 1, sigma3).unwrap();
        assert!(apply_pair_collision(&mut state, &bad_dim).is_err());
    }

    prop_compose! {
        fn arb_pair_and_sigma(d: usize)
            (v in proptest::collection::vec(-10.0f64..10.0, d),
             w in proptest::collection::vec(-10.0f64..10.0, d),
             dir in proptest::collection::vec(-1.0f64..1.0, d)
                .prop_filter("need a usable direction", |dir| {
                    dir.iter().map(|x| x * x).sum::<f64>() > 1e-3
                }))
            -> (Vec<f64>, Vec<f64>, ScatteringAngle)
        {
            (v, w, ScatteringAngle::from_direction(&dir).unwrap())
        }
    }

    proptest! {
        #[test]
        fn reflection_conserves_and_involutes((v0, w0, sigma) in (1usize..=4).prop_flat_map(arb_pair_and_sigma)) {
            let (mut v, mut w) = (v0.clone(), w0.clone());
            apply_reflection(&mut v, &mut w, &sigma).unwrap();

            let e0: f64 = v0.iter().chain(&w0).map(|x| x * x).sum();
            let e1: f64 = v.iter().chain(&w).map(|x| x * x).sum();
            prop_assert!((e1 - e0).abs() <= 1e-12 * (1.0 + e0));
            for k in 0..v0.len() {
                let p0 = v0[k] + w0[k];
                let p1 = v[k] + w[k];
                prop_assert!((p1 - p0).abs() <= 1e-12 * (1.0 + p0.abs()));
            }

            apply_reflection(&mut v, &mut w, &sigma).unwrap();
            for k in 0..v0.len() {
                prop_assert!((v[k] - v0[k]).abs() <= 1e-12 * (1.0 + v0[k].abs()));
                prop_assert!((w[k] - w0[k]).abs() <= 1e-12 * (1.0 + w0[k].abs()));
            }
        }

        #[test]
        fn dense_matrix_agrees_with_block_application(
            seed in 0u64..1000,
            d in 1usize..=3,
            n in 2usize..=4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let velocities: Vec<f64> = (0..d * n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let a = rng.random_range(0..n - 1);
            let b = rng.random_range(a + 1..n);
            let sigma = sample_scattering_angle(d, &mut rng).unwrap();
            let collision = PairCollision::new(a, b, sigma).unwrap();

            let mut state = MasterState::new(d, n, velocities.clone()).unwrap();
            apply_pair_collision(&mut state, &collision).unwrap();

            let m = collision_matrix_dense(&collision, d, n, None).unwrap();
            let dense = &m * nalgebra::DVector::from_vec(velocities);
            for (got, want) in state.velocities().iter().zip(dense.iter()) {
                prop_assert!((got - want).abs() <= 1e-13 * (1.0 + want.abs()));
            }
        }
    }
}
