//! Simulation and verification toolkit for Kac-type collision processes
//! coupled to Maxwellian thermostats and finite heat reservoirs.
//!
//! The crate is organized around one physical picture: `N` particles with
//! velocities in `R^d` undergo random binary collisions (reflections of the
//! relative velocity along a uniformly distributed scattering direction),
//! and exchange energy either with an infinite Maxwellian thermostat or with
//! a finite reservoir of `M` particles prepared in equilibrium. Everything
//! else is machinery to predict, simulate, and cross-check the relaxation of
//! that system:
//!
//! * [`kinematics`] — single collisions: scattering directions, pair
//!   reflections, conservation laws, dense matrix form.
//! * [`simulators`] — event-driven Monte Carlo of the full jump process for
//!   both interaction models, with reproducible parallel ensembles.
//! * [`histories`] — collision-history expansions: the weight of a history,
//!   the contraction matrix of velocity averages, and the covariance-sum
//!   coefficient both in closed form and by Monte Carlo.
//! * [`gaussian_states`] — exact propagation of Gaussian components along a
//!   collision history, mixture states, and entropy/Fisher-information
//!   functionals (closed forms and Monte Carlo estimators).
//! * [`ou_semigroup`] — the Ornstein–Uhlenbeck regularization semigroup:
//!   quadrature application, commutation checks against the collision
//!   operators, and the entropy-from-information integral.
//! * [`oracles`] — closed-form reference answers (moment ODEs, decay
//!   envelopes, one-collision moments) that simulations are verified
//!   against, each carrying a provenance tag.
//! * [`checks`] — the named verification battery the CLI exposes as
//!   `verify`.
//!
//! Conventions used everywhere: velocity states are flat and particle-major
//! (particle `i` owns entries `i*d..(i+1)*d`); kinetic energy is
//! `sum |v_i|^2 / 2`; the reference Maxwellian `gamma_beta` has covariance
//! `(1/beta) I`; entropies are in nats. All Monte Carlo entry points take a
//! `u64` seed and use counter-based RNG substreams internally, so results
//! are bitwise independent of the worker count.

pub mod checks;
pub mod error;
pub mod gaussian_states;
pub mod histories;
pub mod kinematics;
pub mod oracles;
pub mod ou_semigroup;
mod quadrature;
pub mod simulators;

pub use error::{KacError, Result};
