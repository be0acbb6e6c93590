//! Plant models and fixed-step integration.
//!
//! Two families are covered. Second-order plants follow
//! `q'' = f(q, q') + G(q, q') B(delta) u` (planar square body, 3D cube with
//! ZYX Euler attitude). The quasi-static pusher drops inertia entirely:
//! `q' = G(q) B(delta) u` with translational and rotational friction
//! resistances. Inputs are held over each step (zero-order hold) and the
//! state advances with RK4 by default or explicit Euler on request.

use nalgebra::{DMatrix, DVector, Matrix3};
use thiserror::Error;

use crate::channel::{build_b, ActivationVector, ChannelConfig, ChannelError};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state became non-finite at t = {t:.6} s")]
    NonFinite { t: f64 },
    #[error("input matrix is singular at t = {t:.6} s")]
    SingularInputMatrix { t: f64 },
    #[error("Euler pitch {pitch_deg:.1} deg at t = {t:.6} s is too close to the gimbal singularity")]
    EulerSingularity { t: f64, pitch_deg: f64 },
    #[error("plant expects {want} channels of dimension {want_dim}, config has {got} of dimension {got_dim}")]
    ChannelMismatch {
        want: usize,
        want_dim: usize,
        got: usize,
        got_dim: usize,
    },
    #[error("channel columns do not match the plant geometry (arm l = {l})")]
    GeometryMismatch { l: f64 },
    #[error("inertia must be symmetric positive definite")]
    BadInertia,
    #[error("physical parameter out of range: {0}")]
    BadParameter(&'static str),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Configuration-space state at time `t` [s]. `v` is empty for first-order
/// (quasi-static) plants.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
}

impl PlantState {
    pub fn second_order(q: DVector<f64>, v: DVector<f64>, t: f64) -> Self {
        Self { q, v, t }
    }

    pub fn quasi_static(q: DVector<f64>, t: f64) -> Self {
        Self {
            q,
            v: DVector::zeros(0),
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|x| x.is_finite()) && self.v.iter().all(|x| x.is_finite())
    }
}

/// Integration scheme for [`step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

type DriftFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type InputMatrixFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type StateGuard = Box<dyn Fn(&PlantState) -> Result<(), DynamicsError> + Send + Sync>;

/// Plant of the form `q'' = f(q, q') + G(q, q') B(delta) u`.
pub struct SecondOrderPlant {
    config: ChannelConfig,
    drift: DriftFn,
    input_matrix: InputMatrixFn,
    guard: Option<StateGuard>,
    /// Exact `lambda_min(G G')` when the geometry makes it state-independent.
    lambda_min_ggt: Option<f64>,
}

impl std::fmt::Debug for SecondOrderPlant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecondOrderPlant")
            .field("n", &self.config.n())
            .field("m", &self.config.m())
            .finish()
    }
}

impl SecondOrderPlant {
    pub fn new(
        config: ChannelConfig,
        drift: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        input_matrix: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            config,
            drift: Box::new(drift),
            input_matrix: Box::new(input_matrix),
            guard: None,
            lambda_min_ggt: None,
        }
    }

    /// Planar square free-flyer: mass `m_obj` [kg], rotational inertia
    /// `inertia` [kg m^2], thruster arm `l` [m]. `q = [x, y, theta]`, forces
    /// rotate with the body, and there is no drift.
    pub fn square(
        m_obj: f64,
        inertia: f64,
        l: f64,
        config: ChannelConfig,
    ) -> Result<Self, DynamicsError> {
        if !(m_obj > 0.0 && inertia > 0.0) {
            return Err(DynamicsError::BadParameter("mass and inertia must be positive"));
        }
        expect_geometry(&config, &ChannelConfig::square8(l, config.n_a(), config.u_u())?, l)?;
        let lam = (1.0 / (m_obj * m_obj)).min(1.0 / (inertia * inertia));
        let mut plant = Self::new(
            config,
            |_q, _v| DVector::zeros(3),
            move |q, _v| {
                let (s, c) = q[2].sin_cos();
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[
                        c / m_obj,
                        -s / m_obj,
                        0.0,
                        s / m_obj,
                        c / m_obj,
                        0.0,
                        0.0,
                        0.0,
                        1.0 / inertia,
                    ],
                )
            },
        );
        plant.lambda_min_ggt = Some(lam);
        Ok(plant)
    }

    /// Cube free-flyer: `q = [p; eta]` with position `p` [m] and ZYX Euler
    /// angles `eta = [roll, pitch, yaw]` [rad]. Thrust is expressed in the
    /// body frame; the attitude block carries the gyroscopic drift.
    pub fn cube(
        m_obj: f64,
        inertia: Matrix3<f64>,
        l: f64,
        config: ChannelConfig,
    ) -> Result<Self, DynamicsError> {
        if m_obj <= 0.0 {
            return Err(DynamicsError::BadParameter("mass must be positive"));
        }
        if (inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm() {
            return Err(DynamicsError::BadInertia);
        }
        let eig = inertia.symmetric_eigen();
        if eig.eigenvalues.min() <= 0.0 {
            return Err(DynamicsError::BadInertia);
        }
        expect_geometry(&config, &ChannelConfig::cube24(l, config.n_a(), config.u_u())?, l)?;
        let inv_inertia = inertia
            .try_inverse()
            .ok_or(DynamicsError::BadInertia)?;
        let lam = (1.0 / (m_obj * m_obj)).min(1.0 / (eig.eigenvalues.max().powi(2)));
        let inv_for_drift = inv_inertia;
        let mut plant = Self::new(
            config,
            move |q, v| {
                let omega = euler_rate_matrix(q[3], q[4]) * v.rows(3, 3);
                let gyro = omega.cross(&(inertia * omega));
                let ang = -(inv_for_drift * gyro);
                let mut f = DVector::zeros(6);
                f.rows_mut(3, 3).copy_from(&ang);
                f
            },
            move |q, _v| {
                let r = rotation_zyx(q[3], q[4], q[5]);
                let mut g = DMatrix::zeros(6, 6);
                for i in 0..3 {
                    for j in 0..3 {
                        g[(i, j)] = r[(i, j)] / m_obj;
                        g[(i + 3, j + 3)] = inv_inertia[(i, j)];
                    }
                }
                g
            },
        );
        plant.lambda_min_ggt = Some(lam);
        plant.guard = Some(Box::new(|state: &PlantState| {
            let pitch = state.q[4];
            if pitch.abs() >= 85.0_f64.to_radians() {
                Err(DynamicsError::EulerSingularity {
                    t: state.t,
                    pitch_deg: pitch.to_degrees(),
                })
            } else {
                Ok(())
            }
        }));
        Ok(plant)
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    /// Drift acceleration `f(q, v)`.
    pub fn drift(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (self.drift)(q, v)
    }

    /// Input matrix `G(q, v)`.
    pub fn input_matrix(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        (self.input_matrix)(q, v)
    }

    /// Validity check for model-specific state constraints (gimbal guard).
    pub fn check_state(&self, state: &PlantState) -> Result<(), DynamicsError> {
        match &self.guard {
            Some(g) => g(state),
            None => Ok(()),
        }
    }

    /// `lambda_min(G G')` at the given state; exact for the built-in
    /// geometries where it is state-independent.
    pub fn lambda_min_ggt(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        if let Some(lam) = self.lambda_min_ggt {
            return lam;
        }
        let g = self.input_matrix(q, v);
        let sv = g.singular_values();
        let s_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        s_min * s_min
    }
}

/// Quasi-static pusher: `q' = G(q) B(delta) u` with
/// `G(q) = diag(1/d_f, 1/d_f, 1/d_tau) blockdiag(R(theta), 1)`.
#[derive(Debug, Clone)]
pub struct QuasiStaticPlant {
    config: ChannelConfig,
    d_f: f64,
    d_tau: f64,
}

impl QuasiStaticPlant {
    /// Friction model: translational resistance `d_f = mu m g` [N] and
    /// rotational resistance `d_tau = c r d_f` [N m] for a contact patch of
    /// characteristic radius `r` [m] and shape factor `c`.
    pub fn new(
        config: ChannelConfig,
        m_obj: f64,
        mu: f64,
        gravity: f64,
        c_geom: f64,
        r_char: f64,
    ) -> Result<Self, DynamicsError> {
        if !(m_obj > 0.0 && mu > 0.0 && gravity > 0.0 && c_geom > 0.0 && r_char > 0.0) {
            return Err(DynamicsError::BadParameter(
                "mass, friction, gravity, shape factor and radius must be positive",
            ));
        }
        let d_f = mu * m_obj * gravity;
        Ok(Self::from_resistances(config, d_f, c_geom * r_char * d_f)?)
    }

    pub fn from_resistances(
        config: ChannelConfig,
        d_f: f64,
        d_tau: f64,
    ) -> Result<Self, DynamicsError> {
        if config.n() != 3 {
            return Err(DynamicsError::ChannelMismatch {
                want: config.m(),
                want_dim: 3,
                got: config.m(),
                got_dim: config.n(),
            });
        }
        if !(d_f > 0.0 && d_tau > 0.0) {
            return Err(DynamicsError::BadParameter("resistances must be positive"));
        }
        Ok(Self { config, d_f, d_tau })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn d_f(&self) -> f64 {
        self.d_f
    }

    pub fn d_tau(&self) -> f64 {
        self.d_tau
    }

    /// Input matrix `G(q)`.
    pub fn input_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = q[2].sin_cos();
        DMatrix::from_row_slice(
            3,
            3,
            &[
                c / self.d_f,
                -s / self.d_f,
                0.0,
                s / self.d_f,
                c / self.d_f,
                0.0,
                0.0,
                0.0,
                1.0 / self.d_tau,
            ],
        )
    }

    /// Velocity `q' = G(q) B(delta) u` for a full-length input vector.
    pub fn qs_velocity(
        &self,
        q: &DVector<f64>,
        delta: &ActivationVector,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, DynamicsError> {
        let b = build_b(&self.config, delta)?;
        Ok(self.input_matrix(q) * (b * u))
    }

    /// `lambda_min(G G')`, independent of the pose.
    pub fn lambda_min_ggt(&self) -> f64 {
        1.0 / self.d_f.max(self.d_tau).powi(2)
    }
}

/// Either plant family, as configured by a scenario.
#[derive(Debug)]
pub enum Plant {
    SecondOrder(SecondOrderPlant),
    QuasiStatic(QuasiStaticPlant),
}

impl Plant {
    pub fn config(&self) -> &ChannelConfig {
        match self {
            Plant::SecondOrder(p) => p.config(),
            Plant::QuasiStatic(p) => p.config(),
        }
    }

    pub fn is_second_order(&self) -> bool {
        matches!(self, Plant::SecondOrder(_))
    }

    /// State-independent lower bound on `lambda_min(G G')`, when one is
    /// known. `None` for second-order plants with a state-dependent input
    /// matrix and no declared bound.
    pub fn lambda_min_ggt_bound(&self) -> Option<f64> {
        match self {
            Plant::SecondOrder(p) => p.lambda_min_ggt,
            Plant::QuasiStatic(p) => Some(p.lambda_min_ggt()),
        }
    }
}

/// Advance one step with the inputs held constant over `[t, t + dt)`.
pub fn step(
    plant: &Plant,
    state: &PlantState,
    delta: &ActivationVector,
    u: &DVector<f64>,
    dt: f64,
    integrator: Integrator,
) -> Result<PlantState, DynamicsError> {
    match plant {
        Plant::SecondOrder(p) => step_second_order(p, state, delta, u, dt, integrator),
        Plant::QuasiStatic(p) => step_quasi_static(p, state, delta, u, dt, integrator),
    }
}

pub fn step_second_order(
    plant: &SecondOrderPlant,
    state: &PlantState,
    delta: &ActivationVector,
    u: &DVector<f64>,
    dt: f64,
    integrator: Integrator,
) -> Result<PlantState, DynamicsError> {
    plant.check_state(state)?;
    let n = plant.config().n();
    let bu = build_b(plant.config(), delta)? * u;
    let deriv = |y: &DVector<f64>| {
        let q = y.rows(0, n).clone_owned();
        let v = y.rows(n, n).clone_owned();
        let acc = plant.drift(&q, &v) + plant.input_matrix(&q, &v) * &bu;
        let mut dy = DVector::zeros(2 * n);
        dy.rows_mut(0, n).copy_from(&v);
        dy.rows_mut(n, n).copy_from(&acc);
        dy
    };
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(&state.q);
    y.rows_mut(n, n).copy_from(&state.v);
    let y_next = integrate(&y, dt, integrator, deriv);
    let next = PlantState::second_order(
        y_next.rows(0, n).clone_owned(),
        y_next.rows(n, n).clone_owned(),
        state.t + dt,
    );
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite { t: next.t });
    }
    plant.check_state(&next)?;
    Ok(next)
}

pub fn step_quasi_static(
    plant: &QuasiStaticPlant,
    state: &PlantState,
    delta: &ActivationVector,
    u: &DVector<f64>,
    dt: f64,
    integrator: Integrator,
) -> Result<PlantState, DynamicsError> {
    // A zero input freezes the pose exactly; skip the integrator so the
    // state is carried through bit-for-bit.
    if u.iter().all(|&x| x == 0.0) {
        return Ok(PlantState::quasi_static(state.q.clone(), state.t + dt));
    }
    let bu = build_b(plant.config(), delta)? * u;
    let deriv = |q: &DVector<f64>| plant.input_matrix(q) * &bu;
    let q_next = integrate(&state.q, dt, integrator, deriv);
    let next = PlantState::quasi_static(q_next, state.t + dt);
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite { t: next.t });
    }
    Ok(next)
}

fn integrate<F>(y: &DVector<f64>, dt: f64, integrator: Integrator, deriv: F) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    match integrator {
        Integrator::Euler => y + deriv(y) * dt,
        Integrator::Rk4 => {
            let k1 = deriv(y);
            let k2 = deriv(&(y + &k1 * (dt / 2.0)));
            let k3 = deriv(&(y + &k2 * (dt / 2.0)));
            let k4 = deriv(&(y + &k3 * dt));
            y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    }
}

fn expect_geometry(
    got: &ChannelConfig,
    want: &ChannelConfig,
    l: f64,
) -> Result<(), DynamicsError> {
    if got.m() != want.m() || got.n() != want.n() {
        return Err(DynamicsError::ChannelMismatch {
            want: want.m(),
            want_dim: want.n(),
            got: got.m(),
            got_dim: got.n(),
        });
    }
    if got.columns() != want.columns() {
        return Err(DynamicsError::GeometryMismatch { l });
    }
    Ok(())
}

/// Rotation matrix for ZYX Euler angles (roll `phi`, pitch `theta`, yaw `psi`).
fn rotation_zyx(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sphi, cphi) = phi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    let (spsi, cpsi) = psi.sin_cos();
    Matrix3::new(
        cpsi * cth,
        cpsi * sth * sphi - spsi * cphi,
        cpsi * sth * cphi + spsi * sphi,
        spsi * cth,
        spsi * sth * sphi + cpsi * cphi,
        spsi * sth * cphi - cpsi * sphi,
        -sth,
        cth * sphi,
        cth * cphi,
    )
}

/// Map from ZYX Euler rates to body angular velocity.
fn euler_rate_matrix(phi: f64, theta: f64) -> Matrix3<f64> {
    let (sphi, cphi) = phi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    Matrix3::new(
        1.0, 0.0, -sth, //
        0.0, cphi, cth * sphi, //
        0.0, -sphi, cth * cphi,
    )
}
