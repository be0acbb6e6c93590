//! Backstepping control law and the Lyapunov bookkeeping shared by the
//! switching and effort programs.
//!
//! For second-order plants the tracking errors are `e_q = q_d - q` and
//! `e_v = v_d - v` with the virtual velocity `v_d = q_d' + K_q e_q`, and the
//! Lyapunov function is `V = (|e_q|^2 + |e_v|^2) / 2`. The nominal torque
//! `tau` is what a fully actuated plant would apply; the actual input only
//! approximates it through the active channels, and everything downstream
//! (switch selection, effort allocation, event predicates) depends on just
//! three quantities derived here: `s_b`, `r`, and `V`.
//!
//! The quasi-static pusher uses the same structure one order lower: `e_v` is
//! absent, `V = |e_q|^2 / 2`, and the decay constant is `c = 2 lambda_min(K_q)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::channel::{ActivationVector, ChannelConfig, ChannelError};
use crate::dynamics::{PlantState, QuasiStaticPlant, SecondOrderPlant};

#[derive(Debug, Error)]
pub enum LyapunovError {
    #[error("gain matrix {0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("gain matrix {0} must be positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("second-order gains need lambda_min > 1/2 (got c = {c:.6})")]
    DecayNotPositive { c: f64 },
    #[error("c_d = {c_d} must lie strictly inside (0, c) with c = {c:.6}")]
    BadCd { c_d: f64, c: f64 },
    #[error("dimension mismatch: state has n = {state}, {what} has n = {other}")]
    DimensionMismatch {
        state: usize,
        other: usize,
        what: &'static str,
    },
    #[error("input matrix not invertible at t = {t:.6} s")]
    SingularInputMatrix { t: f64 },
    #[error("second-order error state needs velocity gains; use ControllerGains::second_order")]
    MissingVelocityGain,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

type TrajFn = Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Reference `q_d(t)` with consistent first and second derivatives, plus the
/// bound `h_a >= sup_t |q_d''(t)|` used by the input-bound estimates.
pub struct ReferenceTrajectory {
    n: usize,
    q_d: TrajFn,
    qd_dot: TrajFn,
    qd_ddot: TrajFn,
    h_a: f64,
    set_point: bool,
}

impl std::fmt::Debug for ReferenceTrajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceTrajectory")
            .field("n", &self.n)
            .field("h_a", &self.h_a)
            .field("set_point", &self.set_point)
            .finish()
    }
}

impl ReferenceTrajectory {
    /// Constant reference; both derivatives vanish.
    pub fn set_point(q_d: DVector<f64>) -> Self {
        let n = q_d.len();
        let zero = DVector::zeros(n);
        let zero2 = zero.clone();
        Self {
            n,
            q_d: Box::new(move |_| q_d.clone()),
            qd_dot: Box::new(move |_| zero.clone()),
            qd_ddot: Box::new(move |_| zero2.clone()),
            h_a: 0.0,
            set_point: true,
        }
    }

    /// Per-component sinusoid `center_i + amp_i sin(omega_i t + phase_i)`.
    pub fn sinusoid(
        center: DVector<f64>,
        amplitude: DVector<f64>,
        omega: DVector<f64>,
        phase: DVector<f64>,
    ) -> Self {
        let n = center.len();
        assert!(
            amplitude.len() == n && omega.len() == n && phase.len() == n,
            "sinusoid parameter lengths must match"
        );
        let h_a = amplitude
            .iter()
            .zip(omega.iter())
            .map(|(a, w)| (a * w * w).powi(2))
            .sum::<f64>()
            .sqrt();
        let (c1, a1, w1, p1) = (center, amplitude.clone(), omega.clone(), phase.clone());
        let (a2, w2, p2) = (amplitude.clone(), omega.clone(), phase.clone());
        let (a3, w3, p3) = (amplitude, omega, phase);
        Self {
            n,
            q_d: Box::new(move |t| {
                DVector::from_fn(n, |i, _| c1[i] + a1[i] * (w1[i] * t + p1[i]).sin())
            }),
            qd_dot: Box::new(move |t| {
                DVector::from_fn(n, |i, _| a2[i] * w2[i] * (w2[i] * t + p2[i]).cos())
            }),
            qd_ddot: Box::new(move |t| {
                DVector::from_fn(n, |i, _| -a3[i] * w3[i] * w3[i] * (w3[i] * t + p3[i]).sin())
            }),
            h_a,
            set_point: false,
        }
    }

    /// Arbitrary reference from closures; `h_a` must bound `|q_d''|`.
    pub fn from_fns(
        n: usize,
        q_d: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        qd_dot: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        qd_ddot: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        h_a: f64,
    ) -> Self {
        Self {
            n,
            q_d: Box::new(q_d),
            qd_dot: Box::new(qd_dot),
            qd_ddot: Box::new(qd_ddot),
            h_a,
            set_point: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q_d(&self, t: f64) -> DVector<f64> {
        (self.q_d)(t)
    }

    pub fn qd_dot(&self, t: f64) -> DVector<f64> {
        (self.qd_dot)(t)
    }

    pub fn qd_ddot(&self, t: f64) -> DVector<f64> {
        (self.qd_ddot)(t)
    }

    pub fn h_a(&self) -> f64 {
        self.h_a
    }

    pub fn is_set_point(&self) -> bool {
        self.set_point
    }
}

/// Controller gains with the derived decay constants.
///
/// `c` is the guaranteed closed-loop decay rate of `V` under the nominal
/// torque; `c_d < c` is the rate the switching program actually enforces,
/// leaving the difference as margin for the channel constraint.
#[derive(Debug, Clone)]
pub struct ControllerGains {
    k_q: DMatrix<f64>,
    k_v: Option<DMatrix<f64>>,
    pub c: f64,
    pub c_d: f64,
    lam_min_kq: f64,
    lam_max_kq: f64,
    lam_max_kq_plus_kv: f64,
}

impl ControllerGains {
    /// Backstepping gains for a second-order plant. Both matrices must be
    /// symmetric with `lambda_min > 1/2`, which makes
    /// `c = min(2 lambda_min(K_q), 2 lambda_min(K_v)) - 1` positive.
    pub fn second_order(
        k_q: DMatrix<f64>,
        k_v: DMatrix<f64>,
        c_d: f64,
    ) -> Result<Self, LyapunovError> {
        let (min_q, max_q) = spd_bounds(&k_q, "K_q")?;
        let (min_v, max_v) = spd_bounds(&k_v, "K_v")?;
        let c = (2.0 * min_q - 1.0).min(2.0 * min_v - 1.0);
        if c <= 0.0 {
            return Err(LyapunovError::DecayNotPositive { c });
        }
        if !(c_d > 0.0 && c_d < c) {
            return Err(LyapunovError::BadCd { c_d, c });
        }
        // lambda_max(K_q + K_v) <= lambda_max(K_q) + lambda_max(K_v); use the
        // exact value instead.
        let sum = &k_q + &k_v;
        let lam_max_sum = spd_bounds(&sum, "K_q + K_v")?.1;
        let _ = (max_q, max_v);
        Ok(Self {
            k_q,
            k_v: Some(k_v),
            c,
            c_d,
            lam_min_kq: min_q,
            lam_max_kq: max_q,
            lam_max_kq_plus_kv: lam_max_sum,
        })
    }

    /// Same as [`Self::second_order`] with `c_d` given as a fraction of `c`.
    pub fn second_order_fraction(
        k_q: DMatrix<f64>,
        k_v: DMatrix<f64>,
        fraction: f64,
    ) -> Result<Self, LyapunovError> {
        let (min_q, _) = spd_bounds(&k_q, "K_q")?;
        let (min_v, _) = spd_bounds(&k_v, "K_v")?;
        let c = (2.0 * min_q - 1.0).min(2.0 * min_v - 1.0);
        Self::second_order(k_q, k_v, fraction * c)
    }

    /// Proportional gains for the quasi-static pusher: `c = 2 lambda_min(K_q)`.
    pub fn quasi_static(k_q: DMatrix<f64>, c_d: f64) -> Result<Self, LyapunovError> {
        let (min_q, max_q) = spd_bounds(&k_q, "K_q")?;
        let c = 2.0 * min_q;
        if !(c_d > 0.0 && c_d < c) {
            return Err(LyapunovError::BadCd { c_d, c });
        }
        Ok(Self {
            k_q,
            k_v: None,
            c,
            c_d,
            lam_min_kq: min_q,
            lam_max_kq: max_q,
            lam_max_kq_plus_kv: 0.0,
        })
    }

    pub fn quasi_static_fraction(k_q: DMatrix<f64>, fraction: f64) -> Result<Self, LyapunovError> {
        let (min_q, _) = spd_bounds(&k_q, "K_q")?;
        Self::quasi_static(k_q, fraction * 2.0 * min_q)
    }

    pub fn k_q(&self) -> &DMatrix<f64> {
        &self.k_q
    }

    pub fn k_v(&self) -> Option<&DMatrix<f64>> {
        self.k_v.as_ref()
    }

    pub fn lambda_min_kq(&self) -> f64 {
        self.lam_min_kq
    }

    pub fn lambda_max_kq(&self) -> f64 {
        self.lam_max_kq
    }

    /// `lambda_max(K_q + K_v) + lambda_max(K_q^2)`, the gain factor in the
    /// second-order input-bound estimates.
    pub fn lambda_gain_factor(&self) -> f64 {
        self.lam_max_kq_plus_kv + self.lam_max_kq * self.lam_max_kq
    }

    pub fn is_second_order(&self) -> bool {
        self.k_v.is_some()
    }

    fn check_dim(&self, n: usize) -> Result<(), LyapunovError> {
        if self.k_q.nrows() != n {
            return Err(LyapunovError::DimensionMismatch {
                state: n,
                other: self.k_q.nrows(),
                what: "gain matrix",
            });
        }
        Ok(())
    }
}

fn spd_bounds(m: &DMatrix<f64>, name: &'static str) -> Result<(f64, f64), LyapunovError> {
    if m.nrows() != m.ncols() || (m - m.transpose()).norm() > 1e-12 * (1.0 + m.norm()) {
        return Err(LyapunovError::NotSymmetric(name));
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 {
        return Err(LyapunovError::NotPositiveDefinite(name));
    }
    Ok((min, max))
}

/// Everything the switching and effort programs need at one instant.
#[derive(Debug, Clone)]
pub struct ErrorState {
    /// Position error `q_d - q`.
    pub e_q: DVector<f64>,
    /// Velocity error `v_d - v`; empty for quasi-static plants.
    pub e_v: DVector<f64>,
    /// Lyapunov value `V`.
    pub v_lyap: f64,
    /// Nominal (fully actuated) input `tau`.
    pub tau: DVector<f64>,
    /// Channel-side error direction: `G' e_v`, or `G' e_q` quasi-statically.
    pub s_b: DVector<f64>,
    /// Required stability margin: the aggregate wrench must achieve
    /// `s_b' B(delta) u >= r` to decay at rate `c_d`.
    pub r: f64,
}

/// Nominal backstepping input for a fully actuated second-order plant.
pub fn backstepping_tau(
    state: &PlantState,
    reference: &ReferenceTrajectory,
    gains: &ControllerGains,
    plant: &SecondOrderPlant,
) -> Result<DVector<f64>, LyapunovError> {
    Ok(error_state(state, reference, gains, plant)?.tau)
}

/// Tracking errors, Lyapunov value, nominal input and the switching scalars
/// for a second-order plant.
pub fn error_state(
    state: &PlantState,
    reference: &ReferenceTrajectory,
    gains: &ControllerGains,
    plant: &SecondOrderPlant,
) -> Result<ErrorState, LyapunovError> {
    let n = state.q.len();
    if reference.n() != n {
        return Err(LyapunovError::DimensionMismatch {
            state: n,
            other: reference.n(),
            what: "reference",
        });
    }
    gains.check_dim(n)?;
    let k_q = gains.k_q();
    let k_v = gains.k_v.as_ref().ok_or(LyapunovError::MissingVelocityGain)?;

    let t = state.t;
    let e_q = reference.q_d(t) - &state.q;
    let v_d = reference.qd_dot(t) + k_q * &e_q;
    let e_v = v_d - &state.v;
    let v_lyap = 0.5 * (e_q.norm_squared() + e_v.norm_squared());

    // G tau expanded along the closed loop: the velocity-error dynamics give
    // G tau = -f + q_d'' + (K_q + K_v) e_v - K_q^2 e_q, so tau itself needs
    // one linear solve instead of an explicit inverse.
    let f = plant.drift(&state.q, &state.v);
    let g = plant.input_matrix(&state.q, &state.v);
    let g_tau = -f + reference.qd_ddot(t) + (k_q + k_v) * &e_v - k_q * (k_q * &e_q);
    let tau = g
        .clone()
        .lu()
        .solve(&g_tau)
        .ok_or(LyapunovError::SingularInputMatrix { t })?;

    let s_b = g.transpose() * &e_v;
    let r = -(gains.c - gains.c_d) * v_lyap + e_v.dot(&g_tau);
    Ok(ErrorState {
        e_q,
        e_v,
        v_lyap,
        tau,
        s_b,
        r,
    })
}

/// Quasi-static analogue: first-order errors, `V = |e_q|^2 / 2`.
pub fn quasi_static_error_state(
    state: &PlantState,
    reference: &ReferenceTrajectory,
    gains: &ControllerGains,
    plant: &QuasiStaticPlant,
) -> Result<ErrorState, LyapunovError> {
    let n = state.q.len();
    if reference.n() != n {
        return Err(LyapunovError::DimensionMismatch {
            state: n,
            other: reference.n(),
            what: "reference",
        });
    }
    gains.check_dim(n)?;
    let t = state.t;
    let e_q = reference.q_d(t) - &state.q;
    let v_lyap = 0.5 * e_q.norm_squared();
    let g = plant.input_matrix(&state.q);
    let g_tau = reference.qd_dot(t) + gains.k_q() * &e_q;
    let tau = g
        .clone()
        .lu()
        .solve(&g_tau)
        .ok_or(LyapunovError::SingularInputMatrix { t })?;
    let s_b = g.transpose() * &e_q;
    let r = -(gains.c - gains.c_d) * v_lyap + e_q.dot(&g_tau);
    Ok(ErrorState {
        e_q,
        e_v: DVector::zeros(0),
        v_lyap,
        tau,
        s_b,
        r,
    })
}

/// Compact constraint row for the effort program: `s_i = b_j(i)' s_b` over
/// the active channels in ascending index order.
pub fn active_s(
    err: &ErrorState,
    config: &ChannelConfig,
    delta: &ActivationVector,
) -> Result<DVector<f64>, LyapunovError> {
    if delta.len() != config.m() {
        return Err(ChannelError::WrongLength {
            got: delta.len(),
            want: config.m(),
        }
        .into());
    }
    let active = delta.active_indices();
    Ok(DVector::from_iterator(
        active.len(),
        active.iter().map(|&i| config.column(i).dot(&err.s_b)),
    ))
}
