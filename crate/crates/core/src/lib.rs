//! Event-triggered switching control for underactuated multi-channel systems.
//!
//! A plant with `m` actuation channels but only `n_a < m` simultaneously
//! active ones (free-flyers with shared thruster valves, robot fleets pushing
//! an object) needs two decisions at every instant: *which* channels to
//! activate and *how hard* to drive them. This crate implements a
//! Lyapunov-based controller that makes the first decision by solving a small
//! mixed-integer program only when an event fires, and the second by an
//! analytic non-negative least-effort program between events.
//!
//! The crate is organised around that split:
//!
//! - [`channel`]: channel geometry, activation vectors, selection matrices,
//!   and positive/linear span certificates.
//! - [`dynamics`]: second-order plants (planar square, 3D cube) and a
//!   quasi-static pushing model, with RK4/Euler stepping.
//! - [`lyapunov`]: backstepping control law, tracking error state, and the
//!   scalars fed to the switching and effort programs.
//! - [`switching`]: the channel-selection program, solved exactly in closed
//!   form and by a big-M branch-and-bound cross-check.
//! - [`qp`]: the analytic effort program, its KKT enumeration oracle, and the
//!   event predicates that trigger switching.
//! - [`feasibility`]: span constants `d`, `d1` and the input-bound estimates
//!   that certify the controller can always make progress.
//! - [`manipulation`]: robot-fleet allocation (Hungarian method), cooperative
//!   space-time pathfinding, and the delayed-switching pushing loop.
//! - [`sim`]: scenario files, the simulation loops, sweeps, CSV traces and
//!   SVG plots.
//!
//! With the default `parallel` feature the sampling-heavy kernels (span
//! certificates, span constants, batch sweeps) run on rayon; disabling the
//! feature selects sequential fallbacks with identical results.

pub mod channel;
pub mod dynamics;
pub mod feasibility;
pub mod lyapunov;
pub mod manipulation;
pub mod qp;
pub mod sim;
pub mod switching;

mod exec;
mod sphere;

pub use channel::{ActivationVector, ChannelConfig, SpanCertificate};
pub use dynamics::{Integrator, Plant, PlantState, QuasiStaticPlant, SecondOrderPlant};
pub use feasibility::SpanConstants;
pub use lyapunov::{ControllerGains, ErrorState, ReferenceTrajectory};
pub use qp::{EventFlags, QpInstance};
pub use sim::{Scenario, SimTrace};
pub use switching::{SwitchDecision, SwitchProblem};
