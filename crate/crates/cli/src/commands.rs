//! One runner per subcommand. Each builds its entire payload in memory
//! (see [`crate::output`]) and returns it with an exit code; the only
//! side effects are human-oriented progress lines on stderr. Curve
//! commands always emit the oracle next to the measurement, and every
//! data row carries the oracle's provenance string in its final column,
//! so a row remains interpretable after being cut out of the file.

use std::collections::BTreeSet;

use serde::Serialize;

use kac_core::checks::{run_battery, CheckReport, CheckStatus, VerifySettings};
use kac_core::gaussian_states::{
    entropy_gaussian_isotropic, entropy_mixture_mc, evolve_mixture_reservoir_grid,
    evolve_mixture_thermostat_grid, fisher_info_gaussian_isotropic, fisher_info_mixture_mc,
    FunctionalEstimate, GaussianMixtureState,
};
use kac_core::histories::{
    k_coefficient_analytic, k_coefficient_mc, p_matrix_eigenvalues, poisson_truncation,
    POISSON_TAIL_TOL,
};
use kac_core::oracles::{
    classic_kac_exponent, reservoir_energy_ode, reservoir_envelope, thermostat_energy_ode,
    thermostat_envelope, thermostat_momentum_ode, OdeConvention,
};
use kac_core::ou_semigroup::{
    check_commutation, check_marginal_interchange, check_mass, check_self_adjoint,
    check_semigroup, gaussian_ratio_field, KacOperator, QuadratureSpec, ScalarField,
};
use kac_core::simulators::{simulate, InitialCondition, Model, SimulationPlan};
use kac_core::KacError;

use crate::config::{ExperimentConfig, ModelKind, ResolvedModel};
use crate::output::{json_payload, Csv};
use crate::{CliError, Command, Outcome};

fn run_err(e: KacError) -> CliError {
    CliError::Run {
        message: e.to_string(),
    }
}

fn model_err(message: &str) -> CliError {
    CliError::Config {
        field: "model".to_string(),
        message: message.to_string(),
    }
}

/// The built-in config used when `--config` is not given: a small,
/// fast, representative experiment per subcommand.
pub fn default_config(command: &Command) -> ExperimentConfig {
    use crate::config::{GridConfig, InitialConfig, ParamsConfig, SampleConfig, VerifyConfig};

    let thermostat = |d: usize, n: usize| ParamsConfig {
        d,
        n,
        m: None,
        lambda: Some(1.0),
        lambda_s: None,
        lambda_r: None,
        mu: Some(1.0),
        beta: 1.0,
    };
    let base = |model, params, initial| ExperimentConfig {
        model,
        params,
        initial,
        grid: GridConfig::default(),
        samples: SampleConfig::default(),
        seed: 0x6b6163,
        out: None,
        checks: None,
        verify: VerifyConfig::default(),
    };

    match command {
        Command::EnergyDecay | Command::MomentumDecay => {
            let mut cfg = base(
                ModelKind::Thermostat,
                thermostat(3, 50),
                Some(InitialConfig::PointMass {
                    velocity: vec![1.0, -0.5, 0.25],
                }),
            );
            cfg.grid = GridConfig {
                t_max: 5.0,
                points: 11,
                times: None,
            };
            cfg.samples.trajectories = 20_000;
            cfg
        }
        Command::KMatrix => {
            let mut cfg = base(
                ModelKind::Reservoir,
                ParamsConfig {
                    d: 2,
                    n: 2,
                    m: Some(3),
                    lambda: None,
                    lambda_s: Some(1.0),
                    lambda_r: Some(1.0),
                    mu: Some(1.0),
                    beta: 1.0,
                },
                None,
            );
            cfg.grid.times = Some(vec![0.25, 0.5, 1.0, 2.0]);
            cfg
        }
        Command::InfoDecay | Command::EntropyDecay => base(
            ModelKind::Thermostat,
            thermostat(2, 3),
            Some(InitialConfig::IsotropicGaussian { beta0: 2.0 }),
        ),
        Command::OuCheck | Command::Verify => base(ModelKind::Thermostat, thermostat(2, 8), None),
    }
}

pub fn dispatch(command: &Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match command {
        Command::EnergyDecay => energy_decay(cfg),
        Command::MomentumDecay => momentum_decay(cfg),
        Command::KMatrix => k_matrix(cfg),
        Command::OuCheck => ou_check(cfg),
        Command::InfoDecay => functional_decay(cfg, Functional::Information),
        Command::EntropyDecay => functional_decay(cfg, Functional::Entropy),
        Command::Verify => verify(cfg),
    }
}

/// Ensemble mean of the initial system kinetic energy.
fn initial_energy(ic: &InitialCondition, d: usize, n: usize) -> f64 {
    match ic {
        InitialCondition::PointMass { velocity } => {
            n as f64 * velocity.iter().map(|v| v * v).sum::<f64>() / 2.0
        }
        InitialCondition::IsotropicGaussian { beta0 } => (d * n) as f64 / (2.0 * beta0),
        InitialCondition::EnergySphere { energy } => *energy,
    }
}

/// Ensemble mean of the initial system momentum (componentwise).
fn initial_momentum(ic: &InitialCondition, d: usize, n: usize) -> Vec<f64> {
    match ic {
        InitialCondition::PointMass { velocity } => {
            velocity.iter().map(|v| n as f64 * v).collect()
        }
        _ => vec![0.0; d],
    }
}

fn energy_decay(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let resolved = cfg.resolve_model()?;
    let ic = cfg.initial_condition()?;
    let ts = cfg.grid_times();

    let (model, oracle, printed, x0) = match &resolved {
        ResolvedModel::Thermostat(p) => {
            let e0 = initial_energy(&ic, p.d, p.n);
            (
                Model::Thermostat(p.clone()),
                thermostat_energy_ode(p, OdeConvention::Generator).map_err(run_err)?,
                thermostat_energy_ode(p, OdeConvention::Printed).map_err(run_err)?,
                vec![e0],
            )
        }
        ResolvedModel::Reservoir(p) => {
            let e0 = initial_energy(&ic, p.d, p.n);
            let reservoir0 = (p.d * p.m) as f64 / (2.0 * p.beta);
            (
                Model::Reservoir(p.clone()),
                reservoir_energy_ode(p, OdeConvention::Generator).map_err(run_err)?,
                reservoir_energy_ode(p, OdeConvention::Printed).map_err(run_err)?,
                vec![e0, reservoir0],
            )
        }
    };

    let stats = simulate(&SimulationPlan {
        model,
        initial: ic,
        record_times: ts,
        n_trajectories: cfg.samples.trajectories,
        seed: cfg.seed,
    })
    .map_err(run_err)?;

    let mut csv = Csv::with_preamble("energy-decay", &cfg.echo_toml());
    csv.comment(&format!("oracle: {}", oracle.provenance()));
    csv.comment(&format!("printed: {}", printed.provenance()));
    csv.header(&["t", "E_mean", "E_stderr", "E_oracle", "E_paper_printed", "provenance"]);
    for (g, t) in stats.times.iter().enumerate() {
        let predicted = oracle.solve(&x0, *t).map_err(run_err)?[0];
        let as_printed = printed.solve(&x0, *t).map_err(run_err)?[0];
        csv.row(
            &[
                *t,
                stats.e_system[g].mean,
                stats.e_system[g].stderr,
                predicted,
                as_printed,
            ],
            Some(oracle.provenance()),
        );
    }
    Ok(Outcome {
        payload: csv.finish(),
        exit: 0,
    })
}

fn momentum_decay(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = match cfg.resolve_model()? {
        ResolvedModel::Thermostat(p) => p,
        ResolvedModel::Reservoir(_) => {
            return Err(model_err(
                "momentum-decay requires the thermostat model (only its momentum flow has a closed form)",
            ))
        }
    };
    let ic = cfg.initial_condition()?;
    let ts = cfg.grid_times();
    let oracle = thermostat_momentum_ode(&p).map_err(run_err)?;
    let p0 = initial_momentum(&ic, p.d, p.n);

    let stats = simulate(&SimulationPlan {
        model: Model::Thermostat(p.clone()),
        initial: ic,
        record_times: ts,
        n_trajectories: cfg.samples.trajectories,
        seed: cfg.seed,
    })
    .map_err(run_err)?;

    let mut csv = Csv::with_preamble("momentum-decay", &cfg.echo_toml());
    csv.comment(&format!("oracle: {}", oracle.provenance()));
    let mut columns = vec!["t".to_string()];
    for k in 0..p.d {
        columns.push(format!("p{k}_mean"));
        columns.push(format!("p{k}_stderr"));
        columns.push(format!("p{k}_oracle"));
    }
    columns.push("provenance".to_string());
    csv.header(&columns.iter().map(String::as_str).collect::<Vec<_>>());
    for (g, t) in stats.times.iter().enumerate() {
        let mut numbers = vec![*t];
        for k in 0..p.d {
            let predicted = oracle.solve(&[p0[k]], *t).map_err(run_err)?[0];
            numbers.push(stats.momentum[g][k].mean);
            numbers.push(stats.momentum[g][k].stderr);
            numbers.push(predicted);
        }
        csv.row(&numbers, Some(oracle.provenance()));
    }
    Ok(Outcome {
        payload: csv.finish(),
        exit: 0,
    })
}

#[derive(Serialize)]
struct KMatrixRow {
    t: f64,
    c_analytic: f64,
    c_mc: f64,
    stderr: f64,
    isotropy_residual: f64,
}

#[derive(Serialize)]
struct Eigenvalues {
    unit: f64,
    decaying: f64,
}

#[derive(Serialize)]
struct ExponentFraction {
    num: u64,
    den: u64,
}

#[derive(Serialize)]
struct KMatrixPayload<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    provenance: &'a str,
    eigenvalues: Eigenvalues,
    #[serde(skip_serializing_if = "Option::is_none")]
    classic_kac_exponent: Option<ExponentFraction>,
    rows: Vec<KMatrixRow>,
}

fn k_matrix(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = match cfg.resolve_model()? {
        ResolvedModel::Reservoir(p) => p,
        ResolvedModel::Thermostat(_) => {
            return Err(model_err(
                "k-matrix requires the reservoir or classic-kac model",
            ))
        }
    };
    let envelope = reservoir_envelope(&p).map_err(run_err)?;
    let (unit, decaying) = p_matrix_eigenvalues(&p).map_err(run_err)?;

    let mut rows = Vec::new();
    for (g, t) in cfg.grid_times().into_iter().enumerate() {
        let k_max =
            poisson_truncation(p.total_rate() * t, POISSON_TAIL_TOL).map_err(run_err)?;
        let est = k_coefficient_mc(t, &p, cfg.samples.histories, k_max, cfg.seed.wrapping_add(g as u64))
            .map_err(run_err)?;
        let exact = k_coefficient_analytic(t, &p).map_err(run_err)?;
        rows.push(KMatrixRow {
            t,
            c_analytic: exact.value,
            c_mc: est.value,
            stderr: est.stderr,
            isotropy_residual: est.isotropy_residual,
        });
    }

    let classic = if cfg.model == ModelKind::ClassicKac {
        let fraction = classic_kac_exponent(cfg.params.n, cfg.params.m.unwrap_or(0))
            .map_err(run_err)?;
        Some(ExponentFraction {
            num: fraction.num,
            den: fraction.den,
        })
    } else {
        None
    };

    let payload = json_payload(&KMatrixPayload {
        command: "k-matrix",
        config: cfg,
        provenance: envelope.provenance(),
        eigenvalues: Eigenvalues { unit, decaying },
        classic_kac_exponent: classic,
        rows,
    })?;
    Ok(Outcome { payload, exit: 0 })
}

#[derive(Serialize)]
struct OuCheckRow {
    check: &'static str,
    s: f64,
    residual: f64,
    threshold: f64,
    pass: bool,
}

#[derive(Serialize)]
struct OuCheckPayload<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    rows: Vec<OuCheckRow>,
}

fn ou_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let beta = cfg.params.beta;
    let q = QuadratureSpec {
        mc_seed: cfg.seed,
        ..QuadratureSpec::default()
    };
    // Shapes are chosen relative to the equilibrium variance 1/beta so
    // the residual magnitudes do not depend on the configured scale.
    let f = gaussian_ratio_field(1.7 / beta, beta, 2).map_err(run_err)?;
    let g = gaussian_ratio_field(0.6 / beta, beta, 2).map_err(run_err)?;
    let correlated = ScalarField::new(2, move |v| {
        let b = beta;
        (-0.5 * b * (0.4 * v[0] * v[0] + 0.3 * v[0] * v[1] - 0.1 * v[1] * v[1])).exp()
    })
    .map_err(run_err)?;

    let mut rows = Vec::new();
    let mut push = |check: &'static str, s: f64, residual: f64, threshold: f64| {
        rows.push(OuCheckRow {
            check,
            s,
            residual,
            threshold,
            pass: residual.is_finite() && residual <= threshold,
        });
    };

    for s in [0.1, 0.5] {
        push("mass", s, check_mass(&f, s, beta, &q).map_err(run_err)?, 1e-8);
    }
    push(
        "self-adjoint",
        0.3,
        check_self_adjoint(&f, &g, 0.3, beta, &q).map_err(run_err)?,
        1e-8,
    );
    push(
        "composition",
        0.5,
        check_semigroup(&f, 0.2, 0.3, beta, &q).map_err(run_err)?,
        1e-6,
    );
    let pair = KacOperator::PairAverage { d: 1, n: 2 };
    let bath = KacOperator::BathCollision {
        d: 1,
        n: 2,
        particle: 0,
    };
    for s in [0.1, 0.5] {
        push(
            "commutation-pair",
            s,
            check_commutation(&f, s, &pair, beta, &q).map_err(run_err)?,
            1e-6,
        );
        push(
            "commutation-bath",
            s,
            check_commutation(&f, s, &bath, beta, &q).map_err(run_err)?,
            1e-6,
        );
        push(
            "marginal-interchange",
            s,
            check_marginal_interchange(&correlated, 1, s, beta, &q).map_err(run_err)?,
            1e-6,
        );
    }

    let failed = rows.iter().filter(|r| !r.pass).count();
    for row in &rows {
        eprintln!(
            "{} {} (s={}): residual {:.3e} vs {:.0e}",
            if row.pass { "PASS" } else { "FAIL" },
            row.check,
            row.s,
            row.residual,
            row.threshold
        );
    }
    let payload = json_payload(&OuCheckPayload {
        command: "ou-check",
        config: cfg,
        rows,
    })?;
    Ok(Outcome {
        payload,
        exit: if failed > 0 { 2 } else { 0 },
    })
}

enum Functional {
    Information,
    Entropy,
}

fn functional_decay(cfg: &ExperimentConfig, kind: Functional) -> Result<Outcome, CliError> {
    let resolved = cfg.resolve_model()?;
    let beta0 = match cfg.initial_condition()? {
        InitialCondition::IsotropicGaussian { beta0 } => beta0,
        _ => {
            return Err(CliError::Config {
                field: "initial.kind".to_string(),
                message:
                    "functional-decay commands evolve Gaussian mixtures and need an isotropic-gaussian start"
                        .to_string(),
            })
        }
    };
    let ts = cfg.grid_times();
    let histories = cfg.samples.mixture_histories;

    // Evolve the mixture, then reduce each instant to the tagged
    // system's marginal (a no-op for the thermostat, where the bath is
    // never materialized).
    let (states, envelope, system_dim, beta): (Vec<GaussianMixtureState>, _, _, _) =
        match &resolved {
            ResolvedModel::Thermostat(p) => (
                evolve_mixture_thermostat_grid(p, beta0, &ts, histories, cfg.seed)
                    .map_err(run_err)?,
                thermostat_envelope(p).map_err(run_err)?,
                p.d * p.n,
                p.beta,
            ),
            ResolvedModel::Reservoir(p) => {
                let joint = evolve_mixture_reservoir_grid(p, beta0, &ts, histories, cfg.seed)
                    .map_err(run_err)?;
                let marginals = joint
                    .iter()
                    .map(|state| state.head_marginal(p.d * p.n))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(run_err)?;
                (
                    marginals,
                    reservoir_envelope(p).map_err(run_err)?,
                    p.d * p.n,
                    p.beta,
                )
            }
        };

    let a0 = 1.0 / beta0;
    let (command, value_columns, base) = match kind {
        Functional::Information => (
            "info-decay",
            ["I_mc", "I_stderr"],
            fisher_info_gaussian_isotropic(a0, beta, system_dim).map_err(run_err)?,
        ),
        Functional::Entropy => (
            "entropy-decay",
            ["S_mc", "S_stderr"],
            entropy_gaussian_isotropic(a0, beta, system_dim).map_err(run_err)?,
        ),
    };

    let mut csv = Csv::with_preamble(command, &cfg.echo_toml());
    csv.comment(&format!("envelope: {}", envelope.provenance()));
    csv.comment(&format!(
        "envelope column: c(t) times the initial value {base}"
    ));
    csv.header(&["t", value_columns[0], value_columns[1], "envelope", "provenance"]);
    for (g, t) in ts.iter().enumerate() {
        let mc_seed = cfg.seed.wrapping_add(1 + g as u64);
        let est: FunctionalEstimate = match kind {
            Functional::Information => {
                fisher_info_mixture_mc(&states[g], cfg.samples.mc_samples, mc_seed)
                    .map_err(run_err)?
            }
            Functional::Entropy => {
                entropy_mixture_mc(&states[g], cfg.samples.mc_samples, mc_seed)
                    .map_err(run_err)?
            }
        };
        csv.row(
            &[*t, est.value, est.stderr, envelope.eval(*t) * base],
            Some(envelope.provenance()),
        );
    }
    Ok(Outcome {
        payload: csv.finish(),
        exit: 0,
    })
}

#[derive(Serialize)]
struct VerifySummary {
    pass: usize,
    inconclusive: usize,
    fail: usize,
}

#[derive(Serialize)]
struct VerifyPayload<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    summary: VerifySummary,
    reports: Vec<CheckReport>,
}

fn verify(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let settings = VerifySettings {
        seed: cfg.seed,
        scale: cfg.verify.scale,
        overrides: cfg.verify.overrides.clone(),
    };
    let mut reports = run_battery(&settings).map_err(run_err)?;

    if let Some(filter) = &cfg.checks {
        let known: BTreeSet<&str> = reports.iter().map(|r| r.name).collect();
        for (i, name) in filter.iter().enumerate() {
            if !known.contains(name.as_str()) {
                return Err(CliError::Config {
                    field: format!("checks[{i}]"),
                    message: format!(
                        "unknown check `{name}`; known checks: {}",
                        known.into_iter().collect::<Vec<_>>().join(", ")
                    ),
                });
            }
        }
        reports.retain(|r| filter.iter().any(|n| n == r.name));
    }

    let mut summary = VerifySummary {
        pass: 0,
        inconclusive: 0,
        fail: 0,
    };
    for report in &reports {
        let label = match report.status {
            CheckStatus::Pass => {
                summary.pass += 1;
                "PASS"
            }
            CheckStatus::Inconclusive => {
                summary.inconclusive += 1;
                "INCONCLUSIVE"
            }
            CheckStatus::Fail => {
                summary.fail += 1;
                "FAIL"
            }
        };
        eprintln!(
            "{label} {} ({:.3e} vs {:.3e}) -- {}",
            report.name, report.observed, report.threshold, report.provenance
        );
    }
    eprintln!(
        "verify: {} pass, {} inconclusive, {} fail",
        summary.pass, summary.inconclusive, summary.fail
    );

    let exit = if summary.fail > 0 { 2 } else { 0 };
    let payload = json_payload(&VerifyPayload {
        command: "verify",
        config: cfg,
        summary,
        reports,
    })?;
    Ok(Outcome { payload, exit })
}
