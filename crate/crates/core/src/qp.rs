//! Effort allocation between switching events.
//!
//! With the active set frozen, the controller solves
//!
//! ```text
//! min 1/2 |u_bar|^2   s.t.   s' u_bar >= r,   u_bar >= 0
//! ```
//!
//! for the compact input `u_bar` of the `n_a` active channels. The program
//! has a closed form: clip `s` at zero and scale it to meet the stability
//! constraint with equality. Infeasibility of this program (`r > 0` while no
//! active channel helps) and the per-channel bound `u_bar_i > u_u` are
//! exactly the two events that trigger a switch.

use nalgebra::DVector;
use thiserror::Error;

/// Effort-program data: active-channel gains `s` and stability margin `r`.
#[derive(Debug, Clone)]
pub struct QpInstance {
    pub s: DVector<f64>,
    pub r: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("effort program infeasible: r = {r:.6} > 0 but max s_i = {max_s:.6} <= 0")]
    Infeasible { r: f64, max_s: f64 },
}

/// Positive part `max(0, x)`.
#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Denominator floor below which the scaling in [`qp_analytic`] is treated as
/// the numerical limit of infeasibility.
const DENOM_GUARD: f64 = 1e-14;

/// Whether the effort program admits no feasible point: a positive margin is
/// required but no active channel has positive gain.
pub fn qp_infeasible(inst: &QpInstance) -> bool {
    inst.r > 0.0 && inst.s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) <= 0.0
}

/// Closed-form minimiser of the effort program.
///
/// For `r <= 0` the zero input is optimal. Otherwise
/// `u_bar_i = max(0, s_i) r / sum_j max(0, s_j)^2`, which meets the
/// stability constraint with equality. Returns the infeasibility error when
/// no channel can supply the required margin (including the `sum < 1e-14`
/// numerical limit).
pub fn qp_analytic(inst: &QpInstance) -> Result<DVector<f64>, QpError> {
    let k = inst.s.len();
    if inst.r <= 0.0 {
        return Ok(DVector::zeros(k));
    }
    let denom: f64 = inst.s.iter().map(|&x| pos(x) * pos(x)).sum();
    if denom < DENOM_GUARD {
        return Err(QpError::Infeasible {
            r: inst.r,
            max_s: inst.s.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    let scale = inst.r / denom;
    Ok(DVector::from_iterator(k, inst.s.iter().map(|&x| pos(x) * scale)))
}

/// Independent KKT oracle: enumerate every complementarity pattern (which
/// coordinates are pinned at zero, whether the stability constraint is
/// active), solve each in closed form, and keep the feasible candidate with
/// the smallest norm. Exponential in the active count; test-scale only.
pub fn qp_oracle(inst: &QpInstance) -> Result<DVector<f64>, QpError> {
    let k = inst.s.len();
    let mut best: Option<DVector<f64>> = None;
    let mut consider = |u: DVector<f64>| {
        if u.iter().all(|&x| x >= -1e-12) && inst.s.dot(&u) >= inst.r - 1e-9 {
            let better = match &best {
                Some(b) => u.norm_squared() < b.norm_squared(),
                None => true,
            };
            if better {
                best = Some(u);
            }
        }
    };
    // Stability constraint inactive: stationarity forces u_bar = 0.
    consider(DVector::zeros(k));
    // Stability constraint active: u_bar = lambda s on the free set F.
    for mask in 1u64..(1 << k) {
        let denom: f64 = (0..k)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| inst.s[i] * inst.s[i])
            .sum();
        if denom < 1e-300 {
            continue;
        }
        let lambda = inst.r / denom;
        if lambda < 0.0 {
            continue;
        }
        // Dual feasibility on the pinned set: mu_i = -lambda s_i >= 0.
        let dual_ok = (0..k)
            .filter(|i| mask & (1 << i) == 0)
            .all(|i| -lambda * inst.s[i] >= -1e-12);
        if !dual_ok {
            continue;
        }
        let u = DVector::from_fn(k, |i, _| {
            if mask & (1 << i) != 0 {
                lambda * inst.s[i]
            } else {
                0.0
            }
        });
        consider(u);
    }
    best.map(|u| u.map(|x| x.max(0.0))).ok_or(QpError::Infeasible {
        r: inst.r,
        max_s: inst.s.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Which events fire for the current instant. Both predicates are always
/// evaluated so traces record the full picture even when the first suffices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventFlags {
    /// The effort program has no feasible point under the current activation.
    pub infeasibility: bool,
    /// Some active channel would need more than `u_u`.
    pub bound: bool,
}

impl EventFlags {
    pub fn any(&self) -> bool {
        self.infeasibility || self.bound
    }
}

/// Evaluate the event predicates for one `(s, r, u_bar)` snapshot.
pub fn check_events(inst: &QpInstance, u_bar: &DVector<f64>, u_u: f64) -> EventFlags {
    let max_s = inst.s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = inst.s.iter().map(|&x| pos(x) * pos(x)).sum();
    let infeasibility = inst.r > 0.0 && (max_s <= 0.0 || denom < DENOM_GUARD);
    let bound = u_bar.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > u_u;
    EventFlags {
        infeasibility,
        bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_core::{RngCore, SeedableRng};

    fn inst(s: &[f64], r: f64) -> QpInstance {
        QpInstance {
            s: DVector::from_row_slice(s),
            r,
        }
    }

    #[test]
    fn scales_positive_gains_to_equality() {
        let u = qp_analytic(&inst(&[1.0, 2.0], 5.0)).unwrap();
        assert_abs_diff_eq!(u, DVector::from_vec(vec![1.0, 2.0]), epsilon = 1e-14);

        let i = inst(&[1.0, -3.0, 2.0], 2.5);
        let u = qp_analytic(&i).unwrap();
        assert_abs_diff_eq!(u, DVector::from_vec(vec![0.5, 0.0, 1.0]), epsilon = 1e-14);
        // Constraint is tight whenever r > 0.
        assert_abs_diff_eq!(i.s.dot(&u), i.r, epsilon = 1e-14);
    }

    #[test]
    fn zero_is_optimal_for_nonpositive_margin() {
        let u = qp_analytic(&inst(&[1.0, -1.0], 0.0)).unwrap();
        assert_eq!(u, DVector::zeros(2));
        let u = qp_analytic(&inst(&[-1.0, -2.0], -3.0)).unwrap();
        assert_eq!(u, DVector::zeros(2));
    }

    #[test]
    fn infeasible_when_no_channel_helps() {
        let e = qp_analytic(&inst(&[-1.0, -2.0], 1.0)).unwrap_err();
        assert!(matches!(e, QpError::Infeasible { .. }));
        assert!(qp_infeasible(&inst(&[-1.0, 0.0], 0.5)));
        assert!(!qp_infeasible(&inst(&[-1.0, 0.1], 0.5)));
        assert!(!qp_infeasible(&inst(&[-1.0, -1.0], -0.5)));
    }

    #[test]
    fn tiny_positive_gain_hits_the_numerical_guard() {
        // The predicate itself is false, but the scaling would blow up;
        // treated as the numerical limit of infeasibility.
        let i = inst(&[1e-8], 1.0);
        assert!(!qp_infeasible(&i));
        assert!(qp_analytic(&i).is_err());
        assert!(check_events(&i, &DVector::zeros(1), 10.0).infeasibility);
    }

    #[test]
    fn oracle_agrees_with_closed_form_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut uniform = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let mut feasible_seen = 0;
        for _ in 0..500 {
            let k = 1 + (uniform() * 5.0) as usize;
            let s = DVector::from_fn(k, |_, _| uniform() * 4.0 - 2.0);
            let r = uniform() * 4.0 - 2.0;
            let i = QpInstance { s, r };
            match (qp_analytic(&i), qp_oracle(&i)) {
                (Ok(a), Ok(o)) => {
                    assert!((a - o).norm() < 1e-9);
                    feasible_seen += 1;
                }
                (Err(_), Err(_)) => {}
                (a, o) => panic!("feasibility disagreement: {a:?} vs {o:?}"),
            }
        }
        assert!(feasible_seen > 100);
    }

    #[test]
    fn kkt_residuals_vanish_at_the_closed_form_solution() {
        let i = inst(&[0.7, -1.2, 2.2, 0.0], 1.9);
        let u = qp_analytic(&i).unwrap();
        let denom: f64 = i.s.iter().map(|&x| x.max(0.0).powi(2)).sum();
        let lambda = i.r / denom;
        for j in 0..i.s.len() {
            let mu = if i.s[j] > 0.0 { 0.0 } else { -lambda * i.s[j] };
            assert!(mu >= 0.0);
            // Stationarity u - lambda s - mu = 0 and complementary slackness.
            assert_abs_diff_eq!(u[j] - lambda * i.s[j] - mu, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(mu * u[j], 0.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(lambda * (i.s.dot(&u) - i.r), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn solution_is_locally_lipschitz_away_from_degeneracy() {
        // Difference quotients stay below a hand-derived gradient bound on a
        // region where the positive-part denominator is bounded away from 0.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut uniform = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let mut tested = 0;
        while tested < 200 {
            let k = 4;
            let s = DVector::from_fn(k, |_, _| uniform() * 4.0 - 2.0);
            let denom: f64 = s.iter().map(|&x| x.max(0.0).powi(2)).sum();
            if denom < 0.3 || s.norm() > 2.0 {
                continue;
            }
            let r = uniform() * 2.0;
            let base = QpInstance { s: s.clone(), r };
            let u0 = match qp_analytic(&base) {
                Ok(u) => u,
                Err(_) => continue,
            };
            let eps = 1e-4;
            let ds = DVector::from_fn(k, |_, _| uniform() * 2.0 - 1.0) * eps;
            let dr = (uniform() * 2.0 - 1.0) * eps;
            let pert = QpInstance {
                s: &s + &ds,
                r: r + dr,
            };
            let u1 = match qp_analytic(&pert) {
                Ok(u) => u,
                Err(_) => continue,
            };
            let dx = (ds.norm_squared() + dr * dr).sqrt();
            let quotient = (u1 - &u0).norm() / dx;
            assert!(quotient < 300.0, "quotient {quotient}");
            tested += 1;
        }
    }

    #[test]
    fn event_flags_cover_both_predicates() {
        let i = inst(&[-1.0, -0.5], 0.2);
        let flags = check_events(&i, &DVector::zeros(2), 1.0);
        assert!(flags.infeasibility && !flags.bound && flags.any());

        let i = inst(&[1.0, 0.5], 2.0);
        let u = qp_analytic(&i).unwrap();
        let flags = check_events(&i, &u, 1.0);
        assert!(!flags.infeasibility && flags.bound);
        let flags = check_events(&i, &u, 10.0);
        assert!(!flags.any());
    }
}
