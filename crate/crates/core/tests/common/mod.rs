//! Shared helpers for the acceptance suite: an independent quadrature
//! oracle (composite Simpson — deliberately a different method family
//! from the library's Gauss rules), tiny regression fits, and the
//! uniform pass/fail reporting every criterion uses.

use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

/// The criteria share one global gate so their wall-clock budgets are
/// measured without interference from sibling tests.
static GATE: Mutex<()> = Mutex::new(());

pub fn gate() -> MutexGuard<'static, ()> {
    // A failed criterion poisons the mutex; later criteria should still
    // run and report rather than die on the poison.
    GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Prints the criterion's verdict line and panics if anything was
/// violated or the runtime budget was exceeded.
pub fn finish(
    index: usize,
    name: &str,
    started: Instant,
    budget: Duration,
    mut violations: Vec<String>,
    detail: String,
) {
    let elapsed = started.elapsed();
    if elapsed > budget {
        violations.push(format!(
            "runtime {:.1}s exceeded the {:.0}s budget",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        ));
    }
    if violations.is_empty() {
        println!(
            "ACCEPTANCE {index:02} {name}: PASS ({:.1}s; {detail})",
            elapsed.as_secs_f64()
        );
    } else {
        println!(
            "ACCEPTANCE {index:02} {name}: FAIL ({:.1}s; {})",
            elapsed.as_secs_f64(),
            violations.join(" | ")
        );
    }
    assert!(violations.is_empty(), "{name}: {}", violations.join(" | "));
}

/// Composite Simpson rule over `[lo, hi]` with `intervals` subintervals
/// (rounded up to even).
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = intervals.max(2).next_multiple_of(2);
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(lo + k as f64 * h);
    }
    acc * h / 3.0
}

/// Tensor Simpson rule on the square `[lo, hi]^2`.
pub fn simpson2(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    simpson(|x| simpson(|y| f(x, y), lo, hi, intervals), lo, hi, intervals)
}

/// Least-squares decay rate: fits `ln(values) = c - rate * t` and returns
/// `rate`. All values must be positive.
pub fn fit_decay_rate(ts: &[f64], values: &[f64]) -> f64 {
    assert_eq!(ts.len(), values.len());
    assert!(ts.len() >= 2);
    let n = ts.len() as f64;
    let logs: Vec<f64> = values
        .iter()
        .map(|v| {
            assert!(*v > 0.0, "cannot fit a decay rate through {v}");
            v.ln()
        })
        .collect();
    let t_mean = ts.iter().sum::<f64>() / n;
    let y_mean = logs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in ts.iter().zip(&logs) {
        num += (t - t_mean) * (y - y_mean);
        den += (t - t_mean) * (t - t_mean);
    }
    -num / den
}

/// Deviation from `target` in standard-error units, with a floor so exact
/// (zero-spread) estimates compare by absolute tolerance instead.
pub fn z_score(mean: f64, stderr: f64, target: f64) -> f64 {
    (mean - target).abs() / stderr.max(1e-9)
}
