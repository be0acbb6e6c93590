//! Channel geometry: direction columns, activation vectors, selection
//! matrices, and span certificates.
//!
//! A plant exposes `m` actuation channels. Channel `i` contributes the wrench
//! direction `b_i` scaled by a non-negative scalar input `u_i`, but only
//! `n_a` channels may be active at once. The controller's switching layer
//! works with the activation vector `delta` (which channels are on) and the
//! compact input `u_bar` (the efforts of the active channels); this module
//! holds the shared bookkeeping between those two views.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::sphere;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("channel {0} has a zero direction column")]
    ZeroColumn(usize),
    #[error("channel columns must all have the same dimension")]
    MixedDimensions,
    #[error("no channel columns given")]
    Empty,
    #[error("active-channel count {n_a} outside 1..={m}")]
    BadActiveCount { n_a: usize, m: usize },
    #[error("input bound must be positive and finite, got {0}")]
    BadInputBound(f64),
    #[error("activation vector length {got} does not match channel count {want}")]
    WrongLength { got: usize, want: usize },
    #[error("activation vector has {got} active channels, expected {want}")]
    WrongActiveCount { got: usize, want: usize },
}

/// Channel directions plus the two scalars every solver needs: how many
/// channels may be active and how hard each may be driven.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    columns: Vec<DVector<f64>>,
    n: usize,
    n_a: usize,
    u_u: f64,
}

impl ChannelConfig {
    /// Build a configuration from direction columns `b_i`.
    pub fn new(columns: Vec<DVector<f64>>, n_a: usize, u_u: f64) -> Result<Self, ChannelError> {
        let m = columns.len();
        if m == 0 {
            return Err(ChannelError::Empty);
        }
        let n = columns[0].len();
        for (i, b) in columns.iter().enumerate() {
            if b.len() != n || n == 0 {
                return Err(ChannelError::MixedDimensions);
            }
            if b.norm() == 0.0 {
                return Err(ChannelError::ZeroColumn(i));
            }
        }
        if n_a == 0 || n_a > m {
            return Err(ChannelError::BadActiveCount { n_a, m });
        }
        if !(u_u.is_finite() && u_u > 0.0) {
            return Err(ChannelError::BadInputBound(u_u));
        }
        Ok(Self {
            columns,
            n,
            n_a,
            u_u,
        })
    }

    /// Eight planar thrusters, two per side of a square body with moment arm
    /// `l` [m]. Forces and torques are expressed in the body frame as
    /// `[f_x, f_y, tau]` per unit input.
    pub fn square8(l: f64, n_a: usize, u_u: f64) -> Result<Self, ChannelError> {
        let cols = [
            [0.0, 1.0, -l],
            [0.0, 1.0, l],
            [-1.0, 0.0, -l],
            [-1.0, 0.0, l],
            [0.0, -1.0, -l],
            [0.0, -1.0, l],
            [1.0, 0.0, -l],
            [1.0, 0.0, l],
        ];
        Self::new(
            cols.iter().map(|c| DVector::from_row_slice(c)).collect(),
            n_a,
            u_u,
        )
    }

    /// Twenty-four thrusters on a cube, four per face at corner offsets `l`
    /// [m], each thrusting inward along the face normal. Columns are body
    /// wrenches `[f; tau]` in `R^6` per unit input.
    pub fn cube24(l: f64, n_a: usize, u_u: f64) -> Result<Self, ChannelError> {
        let mut cols = Vec::with_capacity(24);
        // Transverse axes in cyclic order for each face normal.
        let transverse = [(1usize, 2usize), (2, 0), (0, 1)];
        for axis in 0..3 {
            for sign in [1.0f64, -1.0] {
                for (s1, s2) in [(1.0f64, 1.0f64), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut force = [0.0; 3];
                    force[axis] = -sign;
                    let (tb, tc) = transverse[axis];
                    let mut pos = [0.0; 3];
                    pos[tb] = s1 * l;
                    pos[tc] = s2 * l;
                    let torque = [
                        pos[1] * force[2] - pos[2] * force[1],
                        pos[2] * force[0] - pos[0] * force[2],
                        pos[0] * force[1] - pos[1] * force[0],
                    ];
                    cols.push(DVector::from_vec(vec![
                        force[0], force[1], force[2], torque[0], torque[1], torque[2],
                    ]));
                }
            }
        }
        Self::new(cols, n_a, u_u)
    }

    /// Wrench dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Channel count `m`.
    pub fn m(&self) -> usize {
        self.columns.len()
    }

    /// Number of simultaneously active channels.
    pub fn n_a(&self) -> usize {
        self.n_a
    }

    /// Per-channel input upper bound `u_u`.
    pub fn u_u(&self) -> f64 {
        self.u_u
    }

    /// Same geometry with a different active-channel count.
    /// Same columns and activation budget with a different input bound.
    pub fn with_u_u(&self, u_u: f64) -> Result<Self, ChannelError> {
        Self::new(self.columns.clone(), self.n_a, u_u)
    }

    pub fn with_n_a(&self, n_a: usize) -> Result<Self, ChannelError> {
        Self::new(self.columns.clone(), n_a, self.u_u)
    }

    pub fn column(&self, i: usize) -> &DVector<f64> {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[DVector<f64>] {
        &self.columns
    }

    /// All inner products `b_i' x` as a length-`m` vector.
    pub fn inner_products(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.columns.iter().map(|b| b.dot(x)))
    }
}

/// Which channels are on. Entries are booleans, so the 0/1 invariant holds by
/// construction; solvers additionally keep the active count at `n_a`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationVector(Vec<bool>);

impl ActivationVector {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    /// Activation with exactly the given channels on.
    pub fn from_indices(m: usize, active: &[usize]) -> Self {
        let mut flags = vec![false; m];
        for &i in active {
            flags[i] = true;
        }
        Self(flags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|&&f| f).count()
    }

    /// Indices of active channels in ascending order. This ordering defines
    /// the row order of the selection matrix and of every compact vector.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }

    pub fn as_flags(&self) -> &[bool] {
        &self.0
    }
}

impl std::fmt::Display for ActivationVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.0 {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

/// `B(delta)`: channel columns with inactive ones zeroed, `n x m`.
pub fn build_b(config: &ChannelConfig, delta: &ActivationVector) -> Result<DMatrix<f64>, ChannelError> {
    if delta.len() != config.m() {
        return Err(ChannelError::WrongLength {
            got: delta.len(),
            want: config.m(),
        });
    }
    let mut b = DMatrix::zeros(config.n(), config.m());
    for i in 0..config.m() {
        if delta.is_active(i) {
            b.set_column(i, config.column(i));
        }
    }
    Ok(b)
}

/// Selection matrix `E(delta)` of size `n_a x m`: `diag(delta)` with the
/// inactive rows removed, so `E E' = I` and `u = E' u_bar` scatters a compact
/// input back to full channel indexing.
pub fn selection_matrix(delta: &ActivationVector, n_a: usize) -> Result<DMatrix<f64>, ChannelError> {
    let active = delta.active_indices();
    if active.len() != n_a {
        return Err(ChannelError::WrongActiveCount {
            got: active.len(),
            want: n_a,
        });
    }
    let mut e = DMatrix::zeros(n_a, delta.len());
    for (row, &col) in active.iter().enumerate() {
        e[(row, col)] = 1.0;
    }
    Ok(e)
}

/// Tuning for the sphere sweeps behind span certificates and span constants.
#[derive(Debug, Clone)]
pub struct SpanOptions {
    /// Sample count; `None` picks a dimension-dependent default.
    pub samples: Option<usize>,
    /// How many of the worst samples get polished.
    pub refine_starts: usize,
    /// Projected subgradient steps per start.
    pub refine_steps: usize,
    /// Seed for the Gaussian directions used when `n > 3`.
    pub seed: u64,
}

impl Default for SpanOptions {
    fn default() -> Self {
        Self {
            samples: None,
            refine_starts: 10,
            refine_steps: 50,
            seed: 0x5eed,
        }
    }
}

/// Numerical positive-span certificate.
///
/// `min_max_inner` approximates `min_{|e|=1} max_i b_i' e`; the columns
/// positively span the space exactly when that quantity is positive. The
/// check is sampling-based, so the reported margin is an upper bound on the
/// true minimum and `witness` is the worst direction found.
#[derive(Debug, Clone)]
pub struct SpanCertificate {
    pub positive_span: bool,
    pub min_max_inner: f64,
    pub witness: DVector<f64>,
    pub samples: usize,
    pub refine_steps: usize,
}

/// Sweep the unit sphere for a direction no channel pushes along.
pub fn check_positive_span(config: &ChannelConfig) -> SpanCertificate {
    check_positive_span_with(config, &SpanOptions::default())
}

pub fn check_positive_span_with(config: &ChannelConfig, opts: &SpanOptions) -> SpanCertificate {
    let n = config.n();
    let samples = opts.samples.unwrap_or_else(|| sphere::default_samples(n));
    let objective = |e: &DVector<f64>| {
        config
            .columns()
            .iter()
            .map(|b| b.dot(e))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let subgrad = |e: &DVector<f64>| {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, b) in config.columns().iter().enumerate() {
            let v = b.dot(e);
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        config.column(best).clone()
    };
    let found = sphere::minimize(
        n,
        samples,
        opts.seed,
        opts.refine_starts,
        opts.refine_steps,
        objective,
        subgrad,
    );
    SpanCertificate {
        positive_span: found.value > 0.0,
        min_max_inner: found.value,
        witness: found.direction,
        samples: found.samples,
        refine_steps: found.refine_steps,
    }
}

/// Whether the columns span the space linearly (rank `n` via SVD, with a
/// relative singular-value tolerance of 1e-10).
pub fn check_linear_span(config: &ChannelConfig) -> bool {
    let b = DMatrix::from_columns(config.columns());
    let svals = b.singular_values();
    let sigma_max = svals.max();
    if sigma_max <= 0.0 {
        return false;
    }
    let rank = svals.iter().filter(|&&s| s > 1e-10 * sigma_max).count();
    rank == config.n()
}
