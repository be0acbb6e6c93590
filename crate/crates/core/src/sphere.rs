//! Minimisation of directional objectives over the unit sphere.
//!
//! Span certificates and span constants all take the form
//! `min_{|e| = 1} f(e)` with `f` built from the channel columns. The sphere
//! is swept with a dense quasi-uniform sample (exact endpoints for n = 1, an
//! angle grid for n = 2, a Fibonacci lattice for n = 3, seeded Gaussian
//! directions beyond), then the worst samples are polished by projected
//! subgradient descent. Everything is deterministic for a fixed seed.

use nalgebra::DVector;
use rand_core::{RngCore, SeedableRng};

use crate::exec;

/// Outcome of a sphere sweep: the minimum found and where it was attained.
#[derive(Debug, Clone)]
pub(crate) struct SphereMin {
    pub value: f64,
    pub direction: DVector<f64>,
    pub samples: usize,
    pub refine_steps: usize,
}

/// Default sample count: dimensions up to 3 are cheap to cover densely;
/// higher dimensions get more samples to compensate for the volume growth.
pub(crate) fn default_samples(n: usize) -> usize {
    if n <= 3 {
        100_000
    } else {
        1_000_000
    }
}

/// The `i`-th sample direction out of `total` on the unit sphere in `R^n`.
pub(crate) fn direction(n: usize, i: usize, total: usize, seed: u64) -> DVector<f64> {
    match n {
        0 => panic!("zero-dimensional sphere"),
        1 => DVector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 }),
        2 => {
            let theta = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / total as f64;
            DVector::from_vec(vec![theta.cos(), theta.sin()])
        }
        3 => {
            // Fibonacci lattice: evenly spread z with a golden-angle azimuth.
            let z = 1.0 - (2.0 * i as f64 + 1.0) / total as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let golden = (5f64.sqrt() - 1.0) / 2.0;
            let az = 2.0 * std::f64::consts::PI * (i as f64 * golden).fract();
            DVector::from_vec(vec![rho * az.cos(), rho * az.sin(), z])
        }
        _ => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut v = DVector::zeros(n);
            let mut j = 0;
            while j < n {
                let (a, b) = gauss_pair(&mut rng);
                v[j] = a;
                j += 1;
                if j < n {
                    v[j] = b;
                    j += 1;
                }
            }
            let norm = v.norm();
            if norm < 1e-300 {
                v[0] = 1.0;
                v.clone_owned()
            } else {
                v / norm
            }
        }
    }
}

/// Minimise `f` over the unit sphere: dense sweep, then projected subgradient
/// descent from the `starts` worst samples. `sub` must return a subgradient
/// of `f` at the given unit vector.
pub(crate) fn minimize<F, G>(
    n: usize,
    samples: usize,
    seed: u64,
    starts: usize,
    steps: usize,
    f: F,
    sub: G,
) -> SphereMin
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let samples = if n == 1 { 2 } else { samples.max(2) };
    let worst = exec::bottom_k(samples, starts.max(1), |i| {
        f(&direction(n, i, samples, seed))
    });
    let mut best_val = f64::INFINITY;
    let mut best_dir = DVector::zeros(n);
    let mut refine_steps = 0;
    for &(sample_val, idx) in &worst {
        let e0 = direction(n, idx, samples, seed);
        let (val, dir, used) = refine(e0, sample_val, &f, &sub, steps);
        refine_steps += used;
        if val < best_val {
            best_val = val;
            best_dir = dir;
        }
    }
    SphereMin {
        value: best_val,
        direction: best_dir,
        samples,
        refine_steps,
    }
}

/// Projected subgradient descent on the sphere with an adaptive arc step.
fn refine<F, G>(
    mut e: DVector<f64>,
    mut fe: f64,
    f: &F,
    sub: &G,
    steps: usize,
) -> (f64, DVector<f64>, usize)
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    if e.len() == 1 {
        return (fe, e, 0);
    }
    let mut alpha = 0.05;
    let mut used = 0;
    for _ in 0..steps {
        used += 1;
        let g = sub(&e);
        let tangential = &g - &e * g.dot(&e);
        let t_norm = tangential.norm();
        if t_norm < 1e-14 || alpha < 1e-14 {
            break;
        }
        let cand = (&e - tangential * (alpha / t_norm)).normalize();
        let fc = f(&cand);
        if fc < fe {
            e = cand;
            fe = fc;
            alpha *= 1.5;
        } else {
            alpha *= 0.5;
        }
    }
    (fe, e, used)
}

/// One standard-normal pair via Box-Muller on raw ChaCha output.
fn gauss_pair(rng: &mut rand_chacha::ChaCha8Rng) -> (f64, f64) {
    let u = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let v = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let mag = (-2.0 * u.ln()).sqrt();
    let ang = 2.0 * std::f64::consts::PI * v;
    (mag * ang.cos(), mag * ang.sin())
}
