//! Input-demand constants: how much channel effort keeps tracking feasible.
//!
//! Between events the controller only ever needs bounded effort if the
//! channel geometry leaves no direction uncovered. Two sphere minima measure
//! that coverage: `d1`, the worst-case best single-channel alignment (its
//! positivity is exactly the positive-span condition), and `d`, the
//! worst-case combined alignment of the `n_a` best channels. From them, the
//! instantaneous demand `mu(t)` and its trajectory-wide bound `mu_max`
//! translate tracking errors into the input bound `u_u` that keeps every
//! switching event solvable.

use crate::channel::{self, ChannelConfig, SpanOptions};
use crate::dynamics::{Plant, PlantState, SecondOrderPlant};
use crate::lyapunov::{ControllerGains, ErrorState, ReferenceTrajectory};
use crate::{exec, sphere};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeasibilityError {
    /// Some direction is pushed by no channel; bounded non-negative inputs
    /// cannot cover it.
    #[error(
        "channels do not positively span their space: \
         worst direction has best alignment {min_max_inner:.6e}"
    )]
    NotPositiveSpanning {
        min_max_inner: f64,
        witness: DVector<f64>,
    },
    /// Gains built for one plant family were paired with the other.
    #[error("{gains} gains cannot be used with a {plant} plant")]
    ModelMismatch {
        gains: &'static str,
        plant: &'static str,
    },
    /// The plant declares no state-independent floor for its input matrix,
    /// so no trajectory-wide demand bound can be formed.
    #[error("plant has no state-independent bound on lambda_min(G G')")]
    NoInputMatrixBound,
}

/// Geometric coverage constants of a channel set, from sphere minimisation.
#[derive(Debug, Clone)]
pub struct SpanConstants {
    /// `min over unit e` of `max_i b_i . e`; positive exactly when the
    /// columns positively span their space [column unit].
    pub d1: f64,
    /// `min over unit e` of the sum of the `n_a` largest clipped alignments
    /// `max(0, b_i . e)`; never below `d1` [column unit].
    pub d: f64,
    /// Direction attaining `d1`.
    pub worst_direction_d1: DVector<f64>,
    /// Direction attaining `d`.
    pub worst_direction_d: DVector<f64>,
    /// Sphere samples swept per constant.
    pub samples: usize,
    /// Total polish steps spent across the refined starts.
    pub refine_steps: usize,
}

impl SpanConstants {
    /// Computes both constants with default sampling.
    pub fn compute(config: &ChannelConfig) -> Result<Self, FeasibilityError> {
        Self::compute_with(config, &SpanOptions::default())
    }

    /// Computes both constants with explicit sampling options. Fails when
    /// the columns do not positively span, since neither constant certifies
    /// anything there.
    pub fn compute_with(
        config: &ChannelConfig,
        opts: &SpanOptions,
    ) -> Result<Self, FeasibilityError> {
        let cert = channel::check_positive_span_with(config, opts);
        if !cert.positive_span {
            return Err(FeasibilityError::NotPositiveSpanning {
                min_max_inner: cert.min_max_inner,
                witness: cert.witness,
            });
        }

        let cols = config.columns();
        let n_a = config.n_a();
        let clipped_top_sum = |e: &DVector<f64>| -> f64 {
            let mut vals: Vec<f64> = cols.iter().map(|b| b.dot(e).max(0.0)).collect();
            vals.sort_unstable_by(|a, b| b.total_cmp(a));
            vals[..n_a].iter().sum()
        };
        let subgrad = |e: &DVector<f64>| -> DVector<f64> {
            let vals: Vec<f64> = cols.iter().map(|b| b.dot(e).max(0.0)).collect();
            let mut idx: Vec<usize> = (0..cols.len()).collect();
            idx.sort_unstable_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
            let mut g = DVector::zeros(e.len());
            for &i in &idx[..n_a] {
                if vals[i] > 0.0 {
                    g += &cols[i];
                }
            }
            g
        };
        let samples = opts.samples.unwrap_or_else(|| sphere::default_samples(config.n()));
        let got = sphere::minimize(
            config.n(),
            samples,
            opts.seed,
            opts.refine_starts,
            opts.refine_steps,
            clipped_top_sum,
            subgrad,
        );

        Ok(Self {
            d1: cert.min_max_inner,
            d: got.value,
            worst_direction_d1: cert.witness,
            worst_direction_d: got.direction,
            samples: cert.samples.max(got.samples),
            refine_steps: cert.refine_steps + got.refine_steps,
        })
    }
}

/// Instantaneous input demand: the effort level that would certify decrease
/// from the current state if the worst channel geometry were active.
///
/// Uses the combined constant `d`, the current drift and reference rates at
/// `state.t`, and the Lyapunov value carried by `err`.
pub fn mu_t(
    plant: &Plant,
    state: &PlantState,
    reference: &ReferenceTrajectory,
    err: &ErrorState,
    constants: &SpanConstants,
    gains: &ControllerGains,
) -> Result<f64, FeasibilityError> {
    check_models(plant, gains)?;
    let sqrt_2v = (2.0 * err.v_lyap).sqrt();
    match plant {
        Plant::SecondOrder(p) => {
            let h = p.drift(&state.q, &state.v).norm() + reference.qd_ddot(state.t).norm();
            let lam = p.lambda_min_ggt(&state.q, &state.v);
            Ok((h + gains.lambda_gain_factor() * sqrt_2v) / (constants.d * lam.sqrt()))
        }
        Plant::QuasiStatic(p) => {
            let h = reference.qd_dot(state.t).norm();
            let lam = p.lambda_min_ggt();
            Ok((h + gains.lambda_max_kq() * sqrt_2v) / (constants.d * lam.sqrt()))
        }
    }
}

/// Trajectory-wide input demand bound from the initial Lyapunov value `v0`
/// and the rate bounds `h_a` (reference) and `h_b` (drift over the reachable
/// set; ignored for velocity-level plants).
///
/// An input bound `u_u >= mu_max` keeps every switching event along the
/// trajectory solvable. Uses the single-channel constant `d1`, so it also
/// covers events where only the worst channel helps.
pub fn mu_max(
    plant: &Plant,
    constants: &SpanConstants,
    gains: &ControllerGains,
    v0: f64,
    h_a: f64,
    h_b: f64,
) -> Result<f64, FeasibilityError> {
    check_models(plant, gains)?;
    let lam = plant
        .lambda_min_ggt_bound()
        .ok_or(FeasibilityError::NoInputMatrixBound)?;
    let sqrt_2v0 = (2.0 * v0).sqrt();
    let numerator = if plant.is_second_order() {
        h_a + h_b + gains.lambda_gain_factor() * sqrt_2v0
    } else {
        h_a + gains.lambda_max_kq() * sqrt_2v0
    };
    Ok(numerator / (constants.d1 * lam.sqrt()))
}

fn check_models(plant: &Plant, gains: &ControllerGains) -> Result<(), FeasibilityError> {
    if plant.is_second_order() != gains.is_second_order() {
        let name = |second: bool| {
            if second {
                "second-order"
            } else {
                "velocity-level"
            }
        };
        return Err(FeasibilityError::ModelMismatch {
            gains: name(gains.is_second_order()),
            plant: name(plant.is_second_order()),
        });
    }
    Ok(())
}

/// Estimated bound on the drift magnitude over the states reachable while
/// the Lyapunov value stays below `v0`, by deterministic sampling of the
/// error ball at each of the given reference times (pass `&[0.0]` for
/// set-points).
///
/// An estimate from inside the set, so it never exceeds the true bound;
/// tighten with more samples where it matters.
pub fn estimate_h_b(
    plant: &SecondOrderPlant,
    reference: &ReferenceTrajectory,
    gains: &ControllerGains,
    v0: f64,
    times: &[f64],
    samples: usize,
) -> Result<f64, FeasibilityError> {
    if !gains.is_second_order() {
        return Err(FeasibilityError::ModelMismatch {
            gains: "velocity-level",
            plant: "second-order",
        });
    }
    let n = reference.n();
    let radius = (2.0 * v0).sqrt();
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let k_q = gains.k_q().clone();
    let mut worst = 0.0f64;
    for &t in times {
        let q_d = reference.q_d(t);
        let qd_dot = reference.qd_dot(t);
        // Center of the ball: zero error, drift at the reference itself.
        worst = worst.max(plant.drift(&q_d, &qd_dot).norm());
        let eval = |i: usize| -> f64 {
            let dir = sphere::direction(2 * n, i, samples, 0x5eed);
            // Stratified radii decorrelated from the direction sweep.
            let u = ((i as f64 + 0.5) * golden).fract();
            let scale = radius * u.powf(1.0 / (2 * n) as f64);
            let e_q = dir.rows(0, n) * scale;
            let e_v = dir.rows(n, n) * scale;
            let q = &q_d - &e_q;
            let v = &qd_dot + &k_q * e_q - e_v;
            -plant.drift(&q, &v).norm()
        };
        if let Some((neg_max, _)) = exec::min_by_index(samples, eval) {
            worst = worst.max(-neg_max);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ActivationVector;
    use crate::dynamics::QuasiStaticPlant;
    use crate::lyapunov;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn opts(samples: usize) -> SpanOptions {
        SpanOptions {
            samples: Some(samples),
            ..SpanOptions::default()
        }
    }

    fn plus_minus_axes(n: usize, n_a: usize) -> ChannelConfig {
        let mut cols = Vec::new();
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut c = DVector::zeros(n);
                c[i] = sign;
                cols.push(c);
            }
        }
        ChannelConfig::new(cols, n_a, 1.0).unwrap()
    }

    #[test]
    fn line_pair_has_unit_constants() {
        let config = plus_minus_axes(1, 1);
        let k = SpanConstants::compute_with(&config, &opts(2)).unwrap();
        assert_abs_diff_eq!(k.d1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k.d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn planar_axes_worst_direction_is_the_diagonal() {
        let config = plus_minus_axes(2, 1);
        let k = SpanConstants::compute_with(&config, &opts(20_000)).unwrap();
        assert_abs_diff_eq!(k.d1, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-3);
        assert_abs_diff_eq!(k.d, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-3);
        let w = &k.worst_direction_d1;
        assert_abs_diff_eq!(w[0].abs(), w[1].abs(), epsilon = 1e-3);
        // With two channels admitted the axes become the bottleneck.
        let config = plus_minus_axes(2, 2);
        let k = SpanConstants::compute_with(&config, &opts(20_000)).unwrap();
        assert_abs_diff_eq!(k.d, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn planar_thruster_constants_are_set_by_the_moment_arm() {
        let config = ChannelConfig::square8(0.3, 2, 3.0).unwrap();
        let k = SpanConstants::compute_with(&config, &opts(50_000)).unwrap();
        // Pure-torque directions see only the moment arm.
        assert_abs_diff_eq!(k.d1, 0.3, epsilon = 1e-3);
        assert_abs_diff_eq!(k.d, 0.6, epsilon = 1e-3);
        assert_abs_diff_eq!(k.worst_direction_d1[2].abs(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn missing_coverage_is_reported_with_a_witness() {
        // Only the first quadrant is pushed.
        let cols = vec![
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
        ];
        let config = ChannelConfig::new(cols, 1, 1.0).unwrap();
        match SpanConstants::compute_with(&config, &opts(20_000)) {
            Err(FeasibilityError::NotPositiveSpanning {
                min_max_inner,
                witness,
            }) => {
                assert!(min_max_inner < 0.0);
                assert!(witness[0] < 0.0 && witness[1] < 0.0);
            }
            other => panic!("expected a span failure, got {other:?}"),
        }
    }

    #[test]
    fn combined_constant_dominates_and_grows_with_channel_count() {
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut uniform = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        for _ in 0..20 {
            let n = 2 + (uniform() * 2.0) as usize;
            let mut cols = plus_minus_axes(n, 1).columns().to_vec();
            for _ in 0..3 {
                let c = DVector::from_fn(n, |_, _| uniform() * 2.0 - 1.0);
                if c.norm() > 1e-3 {
                    cols.push(c);
                }
            }
            let m = cols.len();
            let mut prev_d = 0.0;
            for n_a in 1..=m.min(3) {
                let config = ChannelConfig::new(cols.clone(), n_a, 1.0).unwrap();
                let k = SpanConstants::compute_with(&config, &opts(4_000)).unwrap();
                assert!(k.d1 > 0.0);
                assert!(k.d >= k.d1 - 1e-9, "d = {} below d1 = {}", k.d, k.d1);
                assert!(k.d >= prev_d - 1e-9, "d must grow with n_a");
                prev_d = k.d;
            }
        }
    }

    #[test]
    fn constants_scale_with_the_columns() {
        let config = ChannelConfig::square8(0.3, 2, 3.0).unwrap();
        let scaled = ChannelConfig::new(
            config.columns().iter().map(|c| c * 2.5).collect(),
            2,
            3.0,
        )
        .unwrap();
        let a = SpanConstants::compute_with(&config, &opts(10_000)).unwrap();
        let b = SpanConstants::compute_with(&scaled, &opts(10_000)).unwrap();
        assert_abs_diff_eq!(b.d1, 2.5 * a.d1, epsilon = 1e-6);
        assert_abs_diff_eq!(b.d, 2.5 * a.d, epsilon = 1e-6);
    }

    /// Planar free-flyer example used by the demand hand-checks.
    fn square_setup() -> (Plant, ControllerGains, ReferenceTrajectory, SpanConstants) {
        let config = ChannelConfig::square8(0.3, 2, 110.0).unwrap();
        let plant = SecondOrderPlant::square(1.0, 0.1, 0.3, config).unwrap();
        let gains = ControllerGains::second_order(
            DMatrix::identity(3, 3) * 2.0,
            DMatrix::identity(3, 3) * 2.0,
            1.5,
        )
        .unwrap();
        let reference = ReferenceTrajectory::set_point(DVector::from_element(3, 1.0));
        // Exact constants of this geometry, so the hand values are exact.
        let constants = SpanConstants {
            d1: 0.3,
            d: 0.6,
            worst_direction_d1: DVector::from_row_slice(&[0.0, 0.0, 1.0]),
            worst_direction_d: DVector::from_row_slice(&[0.0, 0.0, 1.0]),
            samples: 0,
            refine_steps: 0,
        };
        (Plant::SecondOrder(plant), gains, reference, constants)
    }

    #[test]
    fn demand_hand_values_for_the_planar_example() {
        let (plant, gains, reference, constants) = square_setup();
        let state = PlantState::second_order(DVector::zeros(3), DVector::zeros(3), 0.0);
        let Plant::SecondOrder(p) = &plant else { unreachable!() };
        let err = lyapunov::error_state(&state, &reference, &gains, p).unwrap();
        assert_abs_diff_eq!(err.v_lyap, 7.5, epsilon = 1e-12);

        // Zero drift and a set-point: demand is purely gain-driven.
        let mu = mu_t(&plant, &state, &reference, &err, &constants, &gains).unwrap();
        assert_abs_diff_eq!(mu, 8.0 * 15f64.sqrt() / 0.6, epsilon = 1e-9);

        let mu_bound = mu_max(&plant, &constants, &gains, err.v_lyap, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(mu_bound, 8.0 * 15f64.sqrt() / 0.3, epsilon = 1e-9);
        assert!(mu <= mu_bound);
        // The planned input bound covers the whole trajectory.
        assert!(mu_bound <= 110.0);
    }

    #[test]
    fn demand_hand_values_for_the_pushing_example() {
        let config = ChannelConfig::square8(0.5, 2, 10.0).unwrap();
        let plant = QuasiStaticPlant::new(config, 10.0, 0.1, 9.81, 0.6, 0.55 * 2f64.sqrt())
            .unwrap();
        let gains =
            ControllerGains::quasi_static(DMatrix::identity(3, 3) * 0.29, 0.5).unwrap();
        let reference = ReferenceTrajectory::set_point(DVector::from_element(3, 1.0));
        let constants = SpanConstants {
            d1: 0.5,
            d: 1.0,
            worst_direction_d1: DVector::from_row_slice(&[0.0, 0.0, 1.0]),
            worst_direction_d: DVector::from_row_slice(&[0.0, 0.0, 1.0]),
            samples: 0,
            refine_steps: 0,
        };
        let plant = Plant::QuasiStatic(plant);
        let state = PlantState::quasi_static(DVector::zeros(3), 0.0);
        let Plant::QuasiStatic(p) = &plant else { unreachable!() };
        let err = lyapunov::quasi_static_error_state(&state, &reference, &gains, p).unwrap();
        assert_abs_diff_eq!(err.v_lyap, 1.5, epsilon = 1e-12);

        let mu = mu_t(&plant, &state, &reference, &err, &constants, &gains).unwrap();
        assert_abs_diff_eq!(mu, 0.29 * 3f64.sqrt() * 9.81 / 1.0, epsilon = 1e-9);
        let mu_bound = mu_max(&plant, &constants, &gains, 1.5, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(mu_bound, 0.29 * 3f64.sqrt() * 9.81 / 0.5, epsilon = 1e-9);
        // The pushing scenarios run at u_u = 10, above the demand bound.
        assert!(mu_bound <= 10.0);
    }

    #[test]
    fn mismatched_gain_models_are_rejected() {
        let (plant, _, reference, constants) = square_setup();
        let qs_gains = ControllerGains::quasi_static(DMatrix::identity(3, 3), 1.0).unwrap();
        let got = mu_max(&plant, &constants, &qs_gains, 1.0, 0.0, 0.0);
        assert!(matches!(got, Err(FeasibilityError::ModelMismatch { .. })));
    }

    #[test]
    fn drift_bound_estimate_matches_a_linear_drift() {
        // One-dimensional plant with drift f = -0.5 v: over the error ball
        // of Lyapunov level v0 the velocity reaches |(k_q, -1)| sqrt(2 v0).
        let config = plus_minus_axes(1, 1);
        let plant = SecondOrderPlant::new(
            config,
            |_q: &DVector<f64>, v: &DVector<f64>| -0.5 * v,
            |_q: &DVector<f64>, _v: &DVector<f64>| DMatrix::identity(1, 1),
        );
        let gains = ControllerGains::second_order(
            DMatrix::identity(1, 1) * 2.0,
            DMatrix::identity(1, 1) * 2.0,
            1.0,
        )
        .unwrap();
        let reference = ReferenceTrajectory::set_point(DVector::zeros(1));
        let truth = 0.5 * 5f64.sqrt() * 2.0;
        let got = estimate_h_b(&plant, &reference, &gains, 2.0, &[0.0], 20_000).unwrap();
        assert!(got <= truth + 1e-9, "estimate {got} exceeds the bound {truth}");
        assert!(got >= truth * 0.98, "estimate {got} too loose vs {truth}");

        // Drift-free plants report exactly zero.
        let config = ChannelConfig::square8(0.3, 2, 3.0).unwrap();
        let plant = SecondOrderPlant::square(1.0, 0.1, 0.3, config).unwrap();
        let gains = ControllerGains::second_order(
            DMatrix::identity(3, 3) * 2.0,
            DMatrix::identity(3, 3) * 2.0,
            1.0,
        )
        .unwrap();
        let reference = ReferenceTrajectory::set_point(DVector::from_element(3, 1.0));
        let got = estimate_h_b(&plant, &reference, &gains, 7.5, &[0.0], 1_000).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn demand_certifies_switch_feasibility_on_random_states() {
        // Whenever u_u exceeds mu(t), the event search must stay solvable.
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut uniform = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let base = ChannelConfig::square8(0.3, 2, 1.0).unwrap();
        // The combined constant depends on the activation budget.
        let constants_by_na: Vec<SpanConstants> = (1..=2)
            .map(|n_a| {
                let config = base.with_n_a(n_a).unwrap();
                SpanConstants::compute_with(&config, &opts(50_000)).unwrap()
            })
            .collect();
        let reference = ReferenceTrajectory::set_point(DVector::from_element(3, 1.0));
        for _ in 0..200 {
            let q = DVector::from_fn(3, |_, _| uniform() * 4.0 - 2.0);
            let v = DVector::from_fn(3, |_, _| uniform() * 4.0 - 2.0);
            let state = PlantState::second_order(q, v, 0.0);
            let gains = ControllerGains::second_order(
                DMatrix::identity(3, 3) * (1.0 + uniform() * 2.0),
                DMatrix::identity(3, 3) * (1.0 + uniform() * 2.0),
                0.5,
            )
            .unwrap();
            let n_a = 1 + (uniform() * 2.0) as usize;
            let constants = &constants_by_na[n_a - 1];
            let config = base.with_n_a(n_a).unwrap();
            let plant = SecondOrderPlant::square(1.0, 0.1, 0.3, config.clone()).unwrap();
            let err = lyapunov::error_state(&state, &reference, &gains, &plant).unwrap();
            if err.v_lyap < 1e-9 {
                continue;
            }
            let wrapped = Plant::SecondOrder(plant);
            let mu = mu_t(&wrapped, &state, &reference, &err, constants, &gains).unwrap();
            // Set the bound a hair above the demand and ask for a switch.
            let config = config.with_u_u(mu * (1.0 + uniform())).unwrap();
            let problem = crate::switching::SwitchProblem::from_error_state(&err);
            let got = crate::switching::solve_switch_exact(&config, &problem, None);
            assert!(
                got.is_ok(),
                "demand-covered state must stay switch-feasible: {got:?}"
            );
        }
    }
}
