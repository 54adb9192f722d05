//! Energy functionals along a trajectory and the dissipation identity check.
//!
//! With `m(t) = ∫_0^t g` and the history seminorm
//! `(g∘u_x)(t) = ∫_0^ell ∫_0^t x g(t-s) |u_x(x,t) - u_x(x,s)|^2 ds dx`, the
//! tracked functionals are
//!
//! ```text
//! I = (1 - m) ||u_x||_H^2 + (g∘u_x) - ∫ x |u|^p
//! J = (1 - m)/2 ||u_x||_H^2 + (g∘u_x)/2 - (1/p) ∫ x |u|^p
//! E = J + ||u_t||_H^2 / 2
//! ```
//!
//! and along solutions `E' = (g'∘u_x)/2 - g(t) ||u_x||_H^2 / 2 - a ||u_t||_H^2`.

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::space::{Field, Grid};

/// Snapshot of every tracked functional at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    pub energy: f64,
    /// The functional whose sign separates the stable and unstable sets.
    pub nehari: f64,
    /// Potential part of the energy.
    pub potential: f64,
    pub kinetic: f64,
    pub gcirc: f64,
    pub norm_h2: f64,
    pub norm_ux_h2: f64,
    pub norm_p_p: f64,
}

/// History seminorm (g∘u_x)(t_k) from gradient snapshots at record times.
///
/// `times` and `snapshots` must cover [0, t_k]; the s-integral is a
/// trapezoidal rule over the snapshot times, the x-integral the grid rule.
pub fn g_circ(
    grid: &Grid,
    kernel: &Kernel,
    times: &[f64],
    snapshots: &[Field],
    k: usize,
) -> Result<f64> {
    if k >= times.len() || snapshots.len() < times.len() {
        return Err(Error::State("history does not cover the requested time".into()));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let t = times[k];
    let current = &snapshots[k];
    let mut inner = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let mut diff = current.clone();
        for i in 0..diff.len() {
            diff[i] -= snapshots[j][i];
        }
        inner.push(kernel.eval(t - times[j])? * grid.norm_h2(&diff));
    }
    Ok(trapz(&times[..=k], &inner))
}

/// Same double quadrature with g' in place of g; the dissipative half of the
/// energy identity.
pub fn g_prime_circ(
    grid: &Grid,
    kernel: &Kernel,
    times: &[f64],
    snapshots: &[Field],
    k: usize,
) -> Result<f64> {
    if k >= times.len() || snapshots.len() < times.len() {
        return Err(Error::State("history does not cover the requested time".into()));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let t = times[k];
    let current = &snapshots[k];
    let mut inner = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let mut diff = current.clone();
        for i in 0..diff.len() {
            diff[i] -= snapshots[j][i];
        }
        inner.push(kernel.derivative(t - times[j])? * grid.norm_h2(&diff));
    }
    Ok(trapz(&times[..=k], &inner))
}

fn trapz(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() - 1 {
        acc += 0.5 * (y[i] + y[i + 1]) * (x[i + 1] - x[i]);
    }
    acc
}

/// Nehari functional I at one instant given the already computed pieces.
pub fn nehari_from_parts(mass: f64, norm_ux_h2: f64, gcirc: f64, norm_p_p: f64) -> f64 {
    (1.0 - mass) * norm_ux_h2 + gcirc - norm_p_p
}

/// Potential functional J from the same pieces.
pub fn potential_from_parts(mass: f64, norm_ux_h2: f64, gcirc: f64, norm_p_p: f64, p: f64) -> f64 {
    0.5 * (1.0 - mass) * norm_ux_h2 + 0.5 * gcirc - norm_p_p / p
}

/// Build the full record at snapshot index `k`.
pub fn record_at(
    grid: &Grid,
    kernel: &Kernel,
    p: f64,
    u: &Field,
    v: &Field,
    times: &[f64],
    snapshots: &[Field],
    k: usize,
) -> Result<EnergyRecord> {
    let t = times[k];
    let mass = kernel.mass_to(t)?;
    let norm_ux_h2 = grid.norm_h2(&snapshots[k]);
    let gcirc = g_circ(grid, kernel, times, snapshots, k)?;
    let norm_p_p = grid.weighted_p_power(u, p);
    let kinetic = 0.5 * grid.norm_h2(v);
    let nehari = nehari_from_parts(mass, norm_ux_h2, gcirc, norm_p_p);
    let potential = potential_from_parts(mass, norm_ux_h2, gcirc, norm_p_p, p);
    Ok(EnergyRecord {
        t,
        energy: potential + kinetic,
        nehari,
        potential,
        kinetic,
        gcirc,
        norm_h2: grid.norm_h2(u),
        norm_ux_h2,
        norm_p_p,
    })
}

/// Functional I for a standalone state (mass and history summarized by
/// `mass` and `gcirc`).
pub fn functional_nehari(grid: &Grid, p: f64, u: &Field, mass: f64, gcirc: f64) -> f64 {
    let ux = grid.derivative(u);
    nehari_from_parts(mass, grid.norm_h2(&ux), gcirc, grid.weighted_p_power(u, p))
}

/// Functional J for a standalone state.
pub fn functional_potential(grid: &Grid, p: f64, u: &Field, mass: f64, gcirc: f64) -> f64 {
    let ux = grid.derivative(u);
    potential_from_parts(mass, grid.norm_h2(&ux), gcirc, grid.weighted_p_power(u, p), p)
}

/// Total energy E for a standalone state.
pub fn functional_energy(
    grid: &Grid,
    p: f64,
    u: &Field,
    v: &Field,
    mass: f64,
    gcirc: f64,
) -> f64 {
    functional_potential(grid, p, u, mass, gcirc) + 0.5 * grid.norm_h2(v)
}

/// Maximum discrepancy between the centered difference of E on the record
/// grid and the dissipation identity's right-hand side.
///
/// Shrinks at second order under simultaneous refinement of the step and the
/// record spacing.
pub fn identity_residual(
    grid: &Grid,
    kernel: &Kernel,
    damping: f64,
    records: &[EnergyRecord],
    times: &[f64],
    snapshots: &[Field],
) -> Result<f64> {
    if records.len() < 3 {
        return Err(Error::State(format!(
            "identity residual needs at least 3 records, got {}",
            records.len()
        )));
    }
    let mut worst = 0.0f64;
    for k in 1..records.len() - 1 {
        let dtm = records[k].t - records[k - 1].t;
        let dtp = records[k + 1].t - records[k].t;
        if (dtp - dtm).abs() > 1e-12 * dtm.max(dtp) {
            continue; // skip the non-uniform closing interval
        }
        let de = (records[k + 1].energy - records[k - 1].energy) / (dtm + dtp);
        let gp = g_prime_circ(grid, kernel, times, snapshots, k)?;
        let rhs = 0.5 * gp - 0.5 * kernel.eval(records[k].t)? * records[k].norm_ux_h2
            - damping * 2.0 * records[k].kinetic;
        worst = worst.max((de - rhs).abs());
    }
    Ok(worst)
}
