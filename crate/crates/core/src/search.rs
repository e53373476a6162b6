//! Bisection for the smallest noise variance whose privacy loss meets the
//! budget.
//!
//! Probes are restricted to the lattice `floor + j * step` (`j` an integer,
//! `step` half the requested tolerance). The result is therefore the smallest
//! feasible lattice point regardless of where the upper bracket started,
//! which makes calibrated values monotone in the budget exactly rather than
//! up to the tolerance.

use crate::error::{Error, Result};

/// Doublings of the upper bracket before giving up.
const MAX_DOUBLINGS: u32 = 256;
/// Lattice indices are kept below this so they fit comfortably in `u64`.
const MAX_INDEX: u64 = 1 << 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Bisection {
    pub theta_sq: f64,
    pub value: f64,
    pub bracket_width: f64,
    pub probes: u32,
}

/// Finds the smallest lattice point `z > floor` with `loss(z) <= limit`.
///
/// The caller guarantees `loss(floor) > limit`. `upper` is a first guess for
/// a feasible point; it is doubled (measured from `floor`) until feasible.
/// Every probe is checked against the values at the current bracket ends;
/// a loss that increases with `z` by more than a relative `1e-10` aborts with
/// [`Error::NonMonotone`].
pub(crate) fn bisect_min_feasible(
    floor: f64,
    upper: f64,
    tol: f64,
    limit: f64,
    mut loss: impl FnMut(f64) -> Result<f64>,
) -> Result<Bisection> {
    let mut probes = 0u32;
    let mut eval = |z: f64| {
        probes += 1;
        loss(z)
    };

    let mut span = (upper - floor).max(tol);
    let mut upper_value = eval(floor + span)?;
    let mut doublings = 0;
    while upper_value > limit {
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !span.is_finite() {
            return Err(Error::Convergence(format!(
                "no feasible noise variance found below {}",
                floor + span
            )));
        }
        span *= 2.0;
        upper_value = eval(floor + span)?;
    }

    // Half-tolerance steps keep the result within `tol / 2` of the true
    // boundary, leaving room for rounding in whatever it is compared with.
    let mut step = 0.5 * tol;
    while (span / step).ceil() > MAX_INDEX as f64 {
        step *= 2.0;
    }
    let at = |j: u64| floor + j as f64 * step;

    let mut hi = (span / step).ceil() as u64;
    let mut hi_value = eval(at(hi))?;
    while hi_value > limit {
        // `at(hi)` can land a rounding error below `floor + span`.
        hi += 1;
        hi_value = eval(at(hi))?;
    }
    let mut lo = 0u64;
    let mut lo_value = f64::INFINITY;

    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let z = at(mid);
        let v = eval(z)?;
        let slack = |w: f64| 1e-10 * w.abs().max(1.0);
        if v > lo_value + slack(lo_value) || v + slack(v) < hi_value {
            return Err(Error::NonMonotone {
                theta_sq: z,
                detail: format!(
                    "value {v} outside the bracket values [{hi_value}, {lo_value}]"
                ),
            });
        }
        if v > limit {
            lo = mid;
            lo_value = v;
        } else {
            hi = mid;
            hi_value = v;
        }
    }

    Ok(Bisection {
        theta_sq: at(hi),
        value: hi_value,
        bracket_width: step,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_lattice_root_of_decreasing_function() {
        // 1 / (1 + z) <= 0.25  <=>  z >= 3
        let r = bisect_min_feasible(0.0, 0.5, 1e-9, 0.25, |z| Ok(1.0 / (1.0 + z))).unwrap();
        assert!(r.theta_sq >= 3.0 && r.theta_sq - 3.0 <= 1e-9, "{}", r.theta_sq);
        assert!(r.value <= 0.25);
        assert_eq!(r.bracket_width, 5e-10);
    }

    #[test]
    fn result_does_not_depend_on_initial_upper() {
        let f = |z: f64| Ok((-z).exp());
        let a = bisect_min_feasible(0.0, 0.1, 1e-9, 0.3, f).unwrap();
        let b = bisect_min_feasible(0.0, 1e3, 1e-9, 0.3, f).unwrap();
        assert_eq!(a.theta_sq, b.theta_sq);
    }

    #[test]
    fn detects_non_monotone_loss() {
        // Probes land on 4.5, 6.75, then 7.875 inside the bump.
        let f = |z: f64| Ok(if (7.0..8.0).contains(&z) { 0.5 } else { 1.0 / (1.0 + z) });
        let err = bisect_min_feasible(0.0, 9.0, 1e-3, 0.12, f).unwrap_err();
        assert!(matches!(err, Error::NonMonotone { .. }));
    }

    #[test]
    fn coarsens_step_for_huge_spans() {
        let r = bisect_min_feasible(0.0, 1e20, 1e-9, 1e-19, |z| Ok(1.0 / (1.0 + z))).unwrap();
        assert!(r.bracket_width > 5e-10);
        assert!(r.value <= 1e-19);
    }
}
