//! Event-driven Monte Carlo for the two interaction models.
//!
//! Both models are pure jump processes whose event rates do not depend on
//! the state, so Gillespie stepping is exact: waiting times are exponential
//! with the total rate, the event channel is picked proportionally to its
//! rate, and the event itself (pair, scattering direction, bath partner) is
//! drawn fresh each time.
//!
//! * Thermostat model — `N` particles in `R^d`. Internal pair collisions
//!   fire at total rate `lambda * N` (a single particle has no one to
//!   collide with, so this channel is disabled for `N = 1`); thermostat
//!   collisions fire at total rate `mu * N` and reflect one particle against
//!   a fresh Maxwellian partner that is discarded afterwards.
//! * Reservoir model — `N` system plus `M` reservoir particles. The three
//!   pair channels fire at total rates `lambda_S * N / 2` (system–system,
//!   needs `N >= 2`), `lambda_R * M / 2` (reservoir–reservoir, needs
//!   `M >= 2`) and `mu * N` (cross pairs). All reservoir interactions are
//!   honest collisions, so the total energy of system plus reservoir is
//!   conserved along every trajectory.
//!
//! Recording is piecewise constant: sample paths are step functions, and the
//! value reported at a grid time `t` is the state after the last event at or
//! before `t` — never an interpolation. A total rate of zero is not an
//! error; the step functions report an infinite waiting time and the state
//! simply stays put.
//!
//! Reproducibility: trajectory `k` of a run with master seed `s` draws from
//! an independent counter-based substream (ChaCha8, seed `s`, stream `k`),
//! and ensemble statistics are reduced in trajectory order. Results are
//! therefore bitwise identical for any worker count.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KacError, Result};
use crate::kinematics::{
    apply_pair_collision, apply_reflection, sample_scattering_angle, MasterState, PairCollision,
    ScatteringAngle,
};

fn require(cond: bool, name: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(KacError::InvalidParameter {
            name,
            reason: reason.into(),
        })
    }
}

/// Parameters of the thermostat model.
#[derive(Clone, Debug, Serialize)]
pub struct ThermostatParams {
    /// Velocity dimension `d >= 1`.
    pub d: usize,
    /// Number of particles `N >= 1`.
    pub n: usize,
    /// Internal collision strength; total internal rate is `lambda * N`.
    pub lambda: f64,
    /// Thermostat coupling; total thermostat rate is `mu * N`.
    pub mu: f64,
    /// Inverse temperature of the thermostat Maxwellian.
    pub beta: f64,
}

impl ThermostatParams {
    pub fn validate(&self) -> Result<()> {
        require(self.d >= 1, "d", "velocity dimension must be at least 1")?;
        require(self.n >= 1, "n", "particle count must be at least 1")?;
        require(
            self.lambda.is_finite() && self.lambda >= 0.0,
            "lambda",
            "must be finite and non-negative",
        )?;
        require(
            self.mu.is_finite() && self.mu >= 0.0,
            "mu",
            "must be finite and non-negative",
        )?;
        require(
            self.beta.is_finite() && self.beta > 0.0,
            "beta",
            "must be finite and positive",
        )
    }

    /// Total rate of internal pair collisions; zero when there is no pair.
    pub fn internal_rate(&self) -> f64 {
        if self.n >= 2 {
            self.lambda * self.n as f64
        } else {
            0.0
        }
    }

    /// Total rate of thermostat collisions.
    pub fn bath_rate(&self) -> f64 {
        self.mu * self.n as f64
    }

    pub fn total_rate(&self) -> f64 {
        self.internal_rate() + self.bath_rate()
    }
}

/// Parameters of the finite heat-reservoir model.
#[derive(Clone, Debug, Serialize)]
pub struct ReservoirParams {
    /// Velocity dimension `d >= 1`.
    pub d: usize,
    /// System particle count `N >= 1`.
    pub n: usize,
    /// Reservoir particle count `M >= 1`.
    pub m: usize,
    /// System–system collision strength (total rate `lambda_s * N / 2`).
    pub lambda_s: f64,
    /// Reservoir–reservoir collision strength (total rate `lambda_r * M / 2`).
    pub lambda_r: f64,
    /// Cross coupling: each system particle meets the reservoir at rate `mu`
    /// (total rate `mu * N`).
    pub mu: f64,
    /// Inverse temperature the reservoir is prepared at.
    pub beta: f64,
}

impl ReservoirParams {
    pub fn validate(&self) -> Result<()> {
        require(self.d >= 1, "d", "velocity dimension must be at least 1")?;
        require(self.n >= 1, "n", "system particle count must be at least 1")?;
        require(self.m >= 1, "m", "reservoir particle count must be at least 1")?;
        require(
            self.lambda_s.is_finite() && self.lambda_s >= 0.0,
            "lambda_s",
            "must be finite and non-negative",
        )?;
        require(
            self.lambda_r.is_finite() && self.lambda_r >= 0.0,
            "lambda_r",
            "must be finite and non-negative",
        )?;
        require(
            self.mu.is_finite() && self.mu >= 0.0,
            "mu",
            "must be finite and non-negative",
        )?;
        require(
            self.beta.is_finite() && self.beta > 0.0,
            "beta",
            "must be finite and positive",
        )
    }

    pub fn n_total(&self) -> usize {
        self.n + self.m
    }

    /// Total rate of the system–system pair channel.
    pub fn system_rate(&self) -> f64 {
        if self.n >= 2 {
            self.lambda_s * self.n as f64 / 2.0
        } else {
            0.0
        }
    }

    /// Total rate of the reservoir–reservoir pair channel.
    pub fn reservoir_rate(&self) -> f64 {
        if self.m >= 2 {
            self.lambda_r * self.m as f64 / 2.0
        } else {
            0.0
        }
    }

    /// Total rate of the cross (system–reservoir) pair channel.
    pub fn cross_rate(&self) -> f64 {
        self.mu * self.n as f64
    }

    pub fn total_rate(&self) -> f64 {
        self.system_rate() + self.reservoir_rate() + self.cross_rate()
    }
}

/// Which interaction model a run uses.
#[derive(Clone, Debug, Serialize)]
pub enum Model {
    Thermostat(ThermostatParams),
    Reservoir(ReservoirParams),
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Thermostat(p) => p.validate(),
            Model::Reservoir(p) => p.validate(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Model::Thermostat(p) => p.d,
            Model::Reservoir(p) => p.d,
        }
    }

    /// Particles belonging to the system proper (excludes the reservoir).
    pub fn n_system(&self) -> usize {
        match self {
            Model::Thermostat(p) => p.n,
            Model::Reservoir(p) => p.n,
        }
    }

    /// Particles carried by a trajectory state.
    pub fn n_total(&self) -> usize {
        match self {
            Model::Thermostat(p) => p.n,
            Model::Reservoir(p) => p.n_total(),
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            Model::Thermostat(p) => p.beta,
            Model::Reservoir(p) => p.beta,
        }
    }

    pub fn total_rate(&self) -> f64 {
        match self {
            Model::Thermostat(p) => p.total_rate(),
            Model::Reservoir(p) => p.total_rate(),
        }
    }
}

/// One event of the thermostat model.
#[derive(Clone, Debug)]
pub enum ThermostatEvent {
    /// An internal collision of two system particles.
    Internal(PairCollision),
    /// A collision of `particle` with a fresh Maxwellian `partner`; the
    /// partner's post-collision velocity is discarded.
    Bath {
        particle: usize,
        sigma: ScatteringAngle,
        partner: Vec<f64>,
    },
}

pub(crate) fn sample_distinct_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    debug_assert!(n >= 2);
    let a = rng.random_range(0..n);
    let b = loop {
        let b = rng.random_range(0..n);
        if b != a {
            break b;
        }
    };
    (a.min(b), a.max(b))
}

/// Draws the waiting time and the next event of the thermostat model, or
/// `None` when the total rate vanishes (infinite waiting time). The state is
/// not needed: rates and event laws are state-independent.
pub fn sample_thermostat_event<R: Rng + ?Sized>(
    p: &ThermostatParams,
    rng: &mut R,
) -> Result<Option<(f64, ThermostatEvent)>> {
    let internal = p.internal_rate();
    let total = internal + p.bath_rate();
    if total == 0.0 {
        return Ok(None);
    }
    let dt = Exp::new(total)
        .expect("total rate is positive")
        .sample(rng);
    let pick: f64 = rng.random_range(0.0..total);
    let event = if pick < internal {
        let (i, j) = sample_distinct_pair(p.n, rng);
        ThermostatEvent::Internal(PairCollision::new(i, j, sample_scattering_angle(p.d, rng)?)?)
    } else {
        let particle = rng.random_range(0..p.n);
        let sigma = sample_scattering_angle(p.d, rng)?;
        let scale = (1.0 / p.beta).sqrt();
        let partner = (0..p.d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        ThermostatEvent::Bath {
            particle,
            sigma,
            partner,
        }
    };
    Ok(Some((dt, event)))
}

/// Applies one thermostat-model event to the state, in place.
pub fn apply_thermostat_event(state: &mut MasterState, event: &ThermostatEvent) -> Result<()> {
    match event {
        ThermostatEvent::Internal(collision) => apply_pair_collision(state, collision),
        ThermostatEvent::Bath {
            particle,
            sigma,
            partner,
        } => {
            if partner.len() != state.dim() {
                return Err(KacError::DimensionMismatch {
                    expected: state.dim(),
                    got: partner.len(),
                });
            }
            let mut w = partner.clone();
            apply_reflection(state.particle_mut(*particle)?, &mut w, sigma)
        }
    }
}

/// Advances the state by one thermostat-model event and returns the waiting
/// time, or `f64::INFINITY` (state untouched) when the total rate is zero.
pub fn step_thermostat<R: Rng + ?Sized>(
    state: &mut MasterState,
    p: &ThermostatParams,
    rng: &mut R,
) -> Result<f64> {
    match sample_thermostat_event(p, rng)? {
        None => Ok(f64::INFINITY),
        Some((dt, event)) => {
            apply_thermostat_event(state, &event)?;
            Ok(dt)
        }
    }
}

/// Draws the waiting time and the next event of the reservoir model, or
/// `None` when the total rate vanishes. Particles `0..n` are the system,
/// `n..n+m` the reservoir.
pub fn sample_reservoir_event<R: Rng + ?Sized>(
    p: &ReservoirParams,
    rng: &mut R,
) -> Result<Option<(f64, PairCollision)>> {
    let rs = p.system_rate();
    let rr = p.reservoir_rate();
    let total = rs + rr + p.cross_rate();
    if total == 0.0 {
        return Ok(None);
    }
    let dt = Exp::new(total)
        .expect("total rate is positive")
        .sample(rng);
    let pick: f64 = rng.random_range(0.0..total);
    let (i, j) = if pick < rs {
        sample_distinct_pair(p.n, rng)
    } else if pick < rs + rr {
        let (a, b) = sample_distinct_pair(p.m, rng);
        (p.n + a, p.n + b)
    } else {
        (rng.random_range(0..p.n), p.n + rng.random_range(0..p.m))
    };
    let sigma = sample_scattering_angle(p.d, rng)?;
    Ok(Some((dt, PairCollision::new(i, j, sigma)?)))
}

/// Advances the reservoir-model state by one event; `f64::INFINITY` when the
/// total rate is zero.
pub fn step_reservoir<R: Rng + ?Sized>(
    state: &mut MasterState,
    p: &ReservoirParams,
    rng: &mut R,
) -> Result<f64> {
    match sample_reservoir_event(p, rng)? {
        None => Ok(f64::INFINITY),
        Some((dt, collision)) => {
            apply_pair_collision(state, &collision)?;
            Ok(dt)
        }
    }
}

/// Initial law of the system block. The reservoir block (when present) is
/// always drawn from the Maxwellian at the model's `beta`.
#[derive(Clone, Debug, Serialize)]
pub enum InitialCondition {
    /// Every system particle starts at exactly this velocity.
    PointMass { velocity: Vec<f64> },
    /// Independent centered Gaussian components with variance `1/beta0`.
    IsotropicGaussian { beta0: f64 },
    /// Uniform on the sphere of states with total kinetic energy `energy`.
    EnergySphere { energy: f64 },
}

/// Draws one system block of `n` particles in `R^d` from the initial law.
pub fn sample_initial<R: Rng + ?Sized>(
    ic: &InitialCondition,
    d: usize,
    n: usize,
    rng: &mut R,
) -> Result<MasterState> {
    if d == 0 {
        return Err(KacError::ZeroDimension);
    }
    match ic {
        InitialCondition::PointMass { velocity } => {
            if velocity.len() != d {
                return Err(KacError::DimensionMismatch {
                    expected: d,
                    got: velocity.len(),
                });
            }
            let mut v = Vec::with_capacity(d * n);
            for _ in 0..n {
                v.extend_from_slice(velocity);
            }
            MasterState::new(d, n, v)
        }
        InitialCondition::IsotropicGaussian { beta0 } => {
            if !(beta0.is_finite() && *beta0 > 0.0) {
                return Err(KacError::InvalidParameter {
                    name: "beta0",
                    reason: "must be finite and positive".into(),
                });
            }
            let scale = (1.0 / beta0).sqrt();
            let v = (0..d * n)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                .collect();
            MasterState::new(d, n, v)
        }
        InitialCondition::EnergySphere { energy } => {
            if !(energy.is_finite() && *energy > 0.0) {
                return Err(KacError::InvalidParameter {
                    name: "energy",
                    reason: "must be finite and positive".into(),
                });
            }
            // Normalize a Gaussian vector onto the sphere |v|^2 = 2 E.
            let radius = (2.0 * energy).sqrt();
            loop {
                let raw: Vec<f64> = (0..d * n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    let v = raw.into_iter().map(|x| x * radius / norm).collect();
                    return MasterState::new(d, n, v);
                }
            }
        }
    }
}

/// Draws a full initial state for the model: the system block from `ic`,
/// plus — for the reservoir model — `M` Maxwellian reservoir particles.
pub fn initial_state<R: Rng + ?Sized>(
    model: &Model,
    ic: &InitialCondition,
    rng: &mut R,
) -> Result<MasterState> {
    let system = sample_initial(ic, model.d(), model.n_system(), rng)?;
    match model {
        Model::Thermostat(_) => Ok(system),
        Model::Reservoir(p) => {
            let mut v = system.velocities().to_vec();
            let scale = (1.0 / p.beta).sqrt();
            v.extend((0..p.d * p.m).map(|_| rng.sample::<f64, _>(StandardNormal) * scale));
            MasterState::new(p.d, p.n_total(), v)
        }
    }
}

/// Scalar observables of one state, split at the system/reservoir boundary.
#[derive(Clone, Debug, Serialize)]
pub struct Observables {
    /// Kinetic energy of the system block.
    pub e_system: f64,
    /// Kinetic energy of the reservoir block (zero for thermostat states).
    pub e_reservoir: f64,
    /// Total momentum of the system block, one entry per dimension.
    pub momentum: Vec<f64>,
}

/// Reads the standard observables off a state whose first `n_system`
/// particles form the system.
pub fn observables(state: &MasterState, n_system: usize) -> Result<Observables> {
    if n_system > state.n_particles() {
        return Err(KacError::ParticleOutOfRange {
            index: n_system,
            count: state.n_particles(),
        });
    }
    Ok(Observables {
        e_system: state.kinetic_energy_of(0..n_system),
        e_reservoir: state.kinetic_energy_of(n_system..state.n_particles()),
        momentum: state.momentum_of(0..n_system),
    })
}

/// Observable time series of a single trajectory on a fixed grid.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub e_system: Vec<f64>,
    /// Empty for thermostat trajectories.
    pub e_reservoir: Vec<f64>,
    /// System-block momentum, one `d`-vector per grid time.
    pub momentum: Vec<Vec<f64>>,
    /// Cumulative number of events applied up to each grid time.
    pub events_seen: Vec<u64>,
}

pub(crate) fn validate_grid(record_times: &[f64]) -> Result<()> {
    for (k, t) in record_times.iter().enumerate() {
        if !t.is_finite() || *t < 0.0 {
            return Err(KacError::InvalidParameter {
                name: "record_times",
                reason: format!("entry {k} must be finite and non-negative, got {t}"),
            });
        }
        if k > 0 && record_times[k - 1] >= *t {
            return Err(KacError::InvalidParameter {
                name: "record_times",
                reason: format!("entries must be strictly increasing at index {k}"),
            });
        }
    }
    Ok(())
}

enum Event {
    Thermostat(ThermostatEvent),
    Reservoir(PairCollision),
}

/// Runs one trajectory from `state`, recording observables at each grid
/// time. The grid must be strictly increasing; recording is piecewise
/// constant as described in the module docs.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &Model,
    mut state: MasterState,
    record_times: &[f64],
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    model.validate()?;
    validate_grid(record_times)?;
    if state.dim() != model.d() || state.n_particles() != model.n_total() {
        return Err(KacError::DimensionMismatch {
            expected: model.d() * model.n_total(),
            got: state.phase_dim(),
        });
    }
    let n_sys = model.n_system();
    let is_reservoir = matches!(model, Model::Reservoir(_));
    let len = record_times.len();
    let mut rec = TrajectoryRecord {
        times: record_times.to_vec(),
        e_system: Vec::with_capacity(len),
        e_reservoir: Vec::with_capacity(if is_reservoir { len } else { 0 }),
        momentum: Vec::with_capacity(len),
        events_seen: Vec::with_capacity(len),
    };
    let record = |rec: &mut TrajectoryRecord, state: &MasterState, events: u64| {
        let obs = observables(state, n_sys).expect("n_sys <= n by construction");
        rec.e_system.push(obs.e_system);
        if is_reservoir {
            rec.e_reservoir.push(obs.e_reservoir);
        }
        rec.momentum.push(obs.momentum);
        rec.events_seen.push(events);
    };

    let mut t = 0.0;
    let mut events: u64 = 0;
    let mut gi = 0;
    while gi < len {
        let next = match model {
            Model::Thermostat(p) => {
                sample_thermostat_event(p, rng)?.map(|(dt, e)| (dt, Event::Thermostat(e)))
            }
            Model::Reservoir(p) => {
                sample_reservoir_event(p, rng)?.map(|(dt, e)| (dt, Event::Reservoir(e)))
            }
        };
        let Some((dt, event)) = next else {
            // Frozen dynamics: every remaining grid time sees this state.
            while gi < len {
                record(&mut rec, &state, events);
                gi += 1;
            }
            break;
        };
        let t_next = t + dt;
        // Grid times the process passes over before the next event see the
        // current (pre-event) state.
        while gi < len && record_times[gi] < t_next {
            record(&mut rec, &state, events);
            gi += 1;
        }
        if gi >= len {
            break;
        }
        match &event {
            Event::Thermostat(e) => apply_thermostat_event(&mut state, e)?,
            Event::Reservoir(c) => apply_pair_collision(&mut state, c)?,
        }
        events += 1;
        t = t_next;
    }
    Ok(rec)
}

/// A full ensemble run: model, initial law, grid, size, and master seed.
#[derive(Clone, Debug, Serialize)]
pub struct SimulationPlan {
    pub model: Model,
    pub initial: InitialCondition,
    pub record_times: Vec<f64>,
    pub n_trajectories: usize,
    pub seed: u64,
}

/// Mean and standard error of one scalar across the ensemble.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub stderr: f64,
}

/// Ensemble statistics on the recording grid.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub e_system: Vec<MomentSummary>,
    /// Empty for thermostat runs.
    pub e_reservoir: Vec<MomentSummary>,
    /// Empty for thermostat runs: system + reservoir energy, which the
    /// reservoir dynamics conserves trajectory-by-trajectory.
    pub e_total: Vec<MomentSummary>,
    /// `momentum[g][k]`: component `k` of the mean system momentum at grid
    /// time `g`.
    pub momentum: Vec<Vec<MomentSummary>>,
    /// Mean cumulative event count at each grid time.
    pub mean_events: Vec<f64>,
    pub n_trajectories: usize,
}

/// Streaming mean/variance accumulator (Welford). Folding happens in
/// trajectory order so results do not depend on the worker count.
#[derive(Clone, Copy, Default)]
struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn summary(&self) -> MomentSummary {
        let stderr = if self.n >= 2 {
            (self.m2 / (self.n as f64 * (self.n as f64 - 1.0))).sqrt()
        } else {
            0.0
        };
        MomentSummary {
            mean: self.mean,
            stderr,
        }
    }
}

/// Runs the whole ensemble and reduces it to per-grid-time statistics.
/// Trajectories are simulated in parallel; see the module docs for the
/// determinism guarantees.
pub fn simulate(plan: &SimulationPlan) -> Result<EnsembleStats> {
    plan.model.validate()?;
    validate_grid(&plan.record_times)?;
    if plan.n_trajectories == 0 {
        return Err(KacError::Empty {
            what: "trajectory count",
        });
    }
    let records: Vec<TrajectoryRecord> = (0..plan.n_trajectories)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(k as u64);
            let state = initial_state(&plan.model, &plan.initial, &mut rng)?;
            simulate_trajectory(&plan.model, state, &plan.record_times, &mut rng)
        })
        .collect::<Result<_>>()?;

    let len = plan.record_times.len();
    let d = plan.model.d();
    let is_reservoir = matches!(plan.model, Model::Reservoir(_));
    let mut e_system = vec![Running::default(); len];
    let mut e_reservoir = vec![Running::default(); len];
    let mut e_total = vec![Running::default(); len];
    let mut momentum = vec![vec![Running::default(); d]; len];
    let mut events = vec![0.0f64; len];
    for rec in &records {
        for g in 0..len {
            e_system[g].push(rec.e_system[g]);
            if is_reservoir {
                e_reservoir[g].push(rec.e_reservoir[g]);
                e_total[g].push(rec.e_system[g] + rec.e_reservoir[g]);
            }
            for k in 0..d {
                momentum[g][k].push(rec.momentum[g][k]);
            }
            events[g] += rec.events_seen[g] as f64;
        }
    }
    let n = plan.n_trajectories as f64;
    Ok(EnsembleStats {
        times: plan.record_times.clone(),
        e_system: e_system.iter().map(Running::summary).collect(),
        e_reservoir: if is_reservoir {
            e_reservoir.iter().map(Running::summary).collect()
        } else {
            Vec::new()
        },
        e_total: if is_reservoir {
            e_total.iter().map(Running::summary).collect()
        } else {
            Vec::new()
        },
        momentum: momentum
            .iter()
            .map(|per_dim| per_dim.iter().map(Running::summary).collect())
            .collect(),
        mean_events: events.iter().map(|s| s / n).collect(),
        n_trajectories: plan.n_trajectories,
    })
}
