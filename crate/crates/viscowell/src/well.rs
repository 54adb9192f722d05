//! Potential-well machinery: the well depth, scaling onto the zero set of
//! the Nehari functional, classification of initial data, the blow-up time
//! bound and the along-trajectory inequality checks.

use crate::energetics::{functional_nehari, EnergyRecord};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::space::{Field, Grid};

/// Constants entering the classification.
#[derive(Debug, Clone, Copy)]
pub struct WellConstants {
    /// Residual stiffness l = 1 - ∫ g.
    pub complement: f64,
    pub c_p: f64,
    pub c_star: f64,
    pub p: f64,
    /// Well depth separating the stable and unstable sets.
    pub d1: f64,
    /// Energy fraction delta < 1 used by the unstable-set test.
    pub delta: f64,
    pub delta_hat: f64,
}

impl WellConstants {
    pub fn new(complement: f64, c_p: f64, c_star: f64, p: f64, delta: f64) -> Result<Self> {
        let d1 = well_depth(complement, c_star, p)?;
        if delta >= 1.0 {
            return Err(Error::Precondition(format!("delta must be < 1, got {delta}")));
        }
        Ok(WellConstants { complement, c_p, c_star, p, d1, delta, delta_hat: delta.max(0.0) })
    }
}

/// Well depth d1 = (p-2)/(2p) (l / C_*^{2/p})^{p/(p-2)}.
pub fn well_depth(complement: f64, c_star: f64, p: f64) -> Result<f64> {
    if !(0.0 < complement && complement <= 1.0) {
        return Err(Error::Precondition(format!("stiffness complement must lie in (0,1], got {complement}")));
    }
    if c_star <= 0.0 {
        return Err(Error::Precondition(format!("embedding constant must be positive, got {c_star}")));
    }
    if !(2.0 < p && p < 3.0) {
        return Err(Error::Precondition(format!("source exponent p must lie in (2,3), got {p}")));
    }
    let base = complement / c_star.powf(2.0 / p);
    Ok((p - 2.0) / (2.0 * p) * base.powf(p / (p - 2.0)))
}

/// Default energy fraction: the tightest admissible choice given E(0).
pub fn resolve_delta(e0: f64, d1: f64, user: Option<f64>) -> f64 {
    match user {
        Some(d) => d,
        None => {
            if e0 <= 0.0 {
                0.0
            } else {
                e0 / d1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Stable,
    UnstableBlowup,
    Indeterminate,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::UnstableBlowup => "unstable_blowup",
            Classification::Indeterminate => "indeterminate",
        }
    }
}

/// Witness values and verdict for one set of initial data.
#[derive(Debug, Clone, Copy)]
pub struct WellReport {
    pub e0: f64,
    pub i0: f64,
    pub d1: f64,
    pub delta: f64,
    pub mass_ok: bool,
    pub classification: Classification,
}

/// Theorem-shaped dichotomy.  Stable needs E(0) < d1 and I(0) > 0; the
/// unstable (blow-up) set needs E(0) < delta d1, I(0) < 0 and the kernel
/// mass condition.  Everything else is outside both theorems.
pub fn classify(e0: f64, i0: f64, constants: &WellConstants, mass_ok: bool) -> Classification {
    if e0 < constants.d1 && i0 > 0.0 {
        Classification::Stable
    } else if e0 < constants.delta * constants.d1 && i0 < 0.0 && mass_ok {
        Classification::UnstableBlowup
    } else {
        Classification::Indeterminate
    }
}

/// The scaling factor placing a nonzero state on the zero set of the Nehari
/// functional:
/// `[ ((1-m)||u_x||^2 + (g∘u_x)) / ∫ x |u|^p ]^{1/(p-2)}`.
pub fn nehari_scale(grid: &Grid, p: f64, u: &Field, mass: f64, gcirc: f64) -> Result<f64> {
    let norm_p = grid.weighted_p_power(u, p);
    if norm_p == 0.0 {
        return Err(Error::Domain("the zero state has no Nehari scaling".into()));
    }
    let x = (1.0 - mass) * grid.norm_h2(&grid.derivative(u)) + gcirc;
    Ok((x / norm_p).powf(1.0 / (p - 2.0)))
}

/// I evaluated at the scaled state, recomputed through the quadratures.
/// Vanishes identically; the returned value measures round-off only.
pub fn nehari_residual(grid: &Grid, p: f64, u: &Field, mass: f64, gcirc: f64) -> Result<f64> {
    let lambda = nehari_scale(grid, p, u, mass, gcirc)?;
    let scaled = u.scaled(lambda);
    Ok(functional_nehari(grid, p, &scaled, mass, lambda * lambda * gcirc))
}

/// sup over scalings of J, in closed form:
/// `(p-2)/(2p) [ ((1-m)||u_x||^2 + gcirc) / (∫x|u|^p)^{2/p} ]^{p/(p-2)}`.
/// Bounded below by the well depth for every nonzero state.
pub fn mountain_pass_level(grid: &Grid, p: f64, u: &Field, mass: f64, gcirc: f64) -> Result<f64> {
    let norm_p = grid.weighted_p_power(u, p);
    if norm_p == 0.0 {
        return Err(Error::Domain("the zero state has no mountain-pass level".into()));
    }
    let x = (1.0 - mass) * grid.norm_h2(&grid.derivative(u)) + gcirc;
    Ok((p - 2.0) / (2.0 * p) * (x / norm_p.powf(2.0 / p)).powf(p / (p - 2.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateBranch {
    /// delta <= 0, i.e. non-positive initial energy.
    NonpositiveEnergy,
    /// 0 < delta < 1: positive energy below the scaled well depth.
    FractionalEnergy,
}

impl CertificateBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            CertificateBranch::NonpositiveEnergy => "delta_nonpositive",
            CertificateBranch::FractionalEnergy => "delta_fractional",
        }
    }
}

/// Data certifying the finite blow-up time bound.
#[derive(Debug, Clone, Copy)]
pub struct BlowupCertificate {
    pub branch: CertificateBranch,
    pub b: f64,
    pub t0: f64,
    /// The auxiliary window length T of the concavity functional.
    pub window: f64,
    pub l0: f64,
    pub lprime0: f64,
    pub tstar_bound: f64,
}

/// Time bound 4 L(0) / ((p-2) L'(0)).
pub fn time_bound(l0: f64, lprime0: f64, p: f64) -> f64 {
    4.0 * l0 / ((p - 2.0) * lprime0)
}

/// Margin applied to the strict-inequality thresholds for T0 and T.
const STRICT_MARGIN: f64 = 1.01;

/// Construct the blow-up certificate for unstable initial data.
///
/// The auxiliary constants follow the proof: `b = -2E(0)` when the energy is
/// non-positive, `b = 2(delta d1 - E(0))` otherwise; T0 and T sit 1% above
/// their strict thresholds, which forces L'(0) > 0 and T > T*.
pub fn blowup_certificate(
    grid: &Grid,
    u0: &Field,
    u1: &Field,
    e0: f64,
    constants: &WellConstants,
    damping: f64,
    mass_ok: bool,
) -> Result<BlowupCertificate> {
    let p = constants.p;
    let i0 = functional_nehari(grid, p, u0, 0.0, 0.0);
    if classify(e0, i0, constants, mass_ok) != Classification::UnstableBlowup {
        return Err(Error::Precondition(
            "blow-up certificate requires initial data classified in the unstable set".into(),
        ));
    }
    let (branch, b) = if constants.delta <= 0.0 {
        (CertificateBranch::NonpositiveEnergy, -2.0 * e0)
    } else {
        (CertificateBranch::FractionalEnergy, 2.0 * (constants.delta * constants.d1 - e0))
    };
    if !(b > 0.0) {
        return Err(Error::Numeric(format!("certificate constant b must be positive, got {b}")));
    }
    let nu0 = grid.norm_h2(u0);
    let nu1 = grid.norm_h2(u1);
    let cross = grid.weighted_inner(u0, u1);
    let pm2 = p - 2.0;
    let t0_threshold = ((pm2 + 4.0 * damping) * nu0 + pm2 * nu1) / (2.0 * pm2 * b);
    let t0 = STRICT_MARGIN * t0_threshold;
    let lprime0 = 2.0 * cross + 2.0 * b * t0;
    if !(lprime0 > 0.0) {
        return Err(Error::Numeric("certificate construction yielded L'(0) <= 0".into()));
    }
    let denom = 2.0 * pm2 * b * t0 - (pm2 + 4.0 * damping) * nu0 - pm2 * nu1;
    if !(denom > 0.0) {
        return Err(Error::Numeric("certificate window threshold is degenerate".into()));
    }
    let window = STRICT_MARGIN * 4.0 * (nu0 + b * t0 * t0) / denom;
    let l0 = (1.0 + damping * window) * nu0 + b * t0 * t0;
    let tstar_bound = time_bound(l0, lprime0, p);
    if window <= tstar_bound {
        return Err(Error::Numeric(format!(
            "certificate window {window} does not dominate the time bound {tstar_bound}"
        )));
    }
    Ok(BlowupCertificate { branch, b, t0, window, l0, lprime0, tstar_bound })
}

/// Minimum of the concavity combination L L'' - (p+2)/4 (L')^2 over a set of
/// sampled L values (central differences on interior samples with uniform
/// spacing), together with the scale max |L L''| for tolerance building.
pub fn concavity_min(times: &[f64], lvals: &[f64], p: f64) -> Result<(f64, f64)> {
    if times.len() < 5 || lvals.len() != times.len() {
        return Err(Error::State(format!(
            "concavity diagnostic needs at least 5 samples, got {}",
            times.len()
        )));
    }
    let mut min_value = f64::INFINITY;
    let mut scale = 0.0f64;
    for k in 1..times.len() - 1 {
        let dm = times[k] - times[k - 1];
        let dp = times[k + 1] - times[k];
        if (dp - dm).abs() > 1e-12 * dm.max(dp) {
            continue;
        }
        let lp = (lvals[k + 1] - lvals[k - 1]) / (dm + dp);
        let lpp = (lvals[k + 1] - 2.0 * lvals[k] + lvals[k - 1]) / (dm * dp);
        let combo = lvals[k] * lpp - 0.25 * (p + 2.0) * lp * lp;
        min_value = min_value.min(combo);
        scale = scale.max((lvals[k] * lpp).abs());
    }
    if !min_value.is_finite() {
        return Err(Error::State("no uniform interior samples for the diagnostic".into()));
    }
    Ok((min_value, scale))
}

/// Result of the along-trajectory concavity check.
#[derive(Debug, Clone, Copy)]
pub struct ConvexityDiagnostic {
    pub min_value: f64,
    /// max |L L''| over the samples, the natural tolerance scale.
    pub scale: f64,
    pub record_spacing: f64,
}

/// Reconstruct the concavity functional along a recorded trajectory and
/// check the differential inequality it satisfies up to discretization.
pub fn convexity_diagnostic(
    records: &[EnergyRecord],
    p: f64,
    damping: f64,
    cert: &BlowupCertificate,
) -> Result<ConvexityDiagnostic> {
    if records.len() < 5 {
        return Err(Error::State(format!(
            "convexity diagnostic needs at least 5 records, got {}",
            records.len()
        )));
    }
    let n0 = records[0].norm_h2;
    let mut cum = 0.0;
    let mut times = Vec::with_capacity(records.len());
    let mut lvals = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        if k > 0 {
            cum += 0.5 * (records[k - 1].norm_h2 + rec.norm_h2) * (rec.t - records[k - 1].t);
        }
        let l = rec.norm_h2
            + damping * cum
            + damping * (cert.window - rec.t) * n0
            + cert.b * (rec.t + cert.t0) * (rec.t + cert.t0);
        times.push(rec.t);
        lvals.push(l);
    }
    let (min_value, scale) = concavity_min(&times, &lvals, p)?;
    Ok(ConvexityDiagnostic { min_value, scale, record_spacing: times[1] - times[0] })
}

/// The purely quadratic component b(t+T0)^2 alone violates the concavity
/// inequality; closed form of its combination, used as a negative control.
pub fn convexity_control(b: f64, t0: f64, p: f64, t: f64) -> f64 {
    -p * b * b * (t + t0) * (t + t0)
}

/// Per-record verdicts of the unstable-set inequality chain.
#[derive(Debug, Clone, Copy)]
pub struct ChainCheck {
    pub t: f64,
    pub nehari_negative: bool,
    /// d1 < (p-2)/(2p) [(1-m)||u_x||^2 + gcirc]
    pub lower_ok: bool,
    /// (p-2)/(2p) [(1-m)||u_x||^2 + gcirc] < (p-2)/(2p) ∫x|u|^p
    pub upper_ok: bool,
    pub pass: bool,
}

const CHAIN_REL_TOL: f64 = 1e-8;

/// Check I < 0 together with the strict two-sided bound at every record.
pub fn check_unstable_chain(
    records: &[EnergyRecord],
    kernel: &Kernel,
    constants: &WellConstants,
) -> Result<Vec<ChainCheck>> {
    let p = constants.p;
    let coeff = (p - 2.0) / (2.0 * p);
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let mass = kernel.mass_to(rec.t)?;
        let mid = coeff * ((1.0 - mass) * rec.norm_ux_h2 + rec.gcirc);
        let upper = coeff * rec.norm_p_p;
        let scale = mid.abs().max(constants.d1.abs()).max(upper.abs());
        let nehari_negative = rec.nehari < 0.0;
        let lower_ok = mid - constants.d1 > -CHAIN_REL_TOL * scale;
        let upper_ok = upper - mid > -CHAIN_REL_TOL * scale;
        out.push(ChainCheck {
            t: rec.t,
            nehari_negative,
            lower_ok,
            upper_ok,
            pass: nehari_negative && lower_ok && upper_ok,
        });
    }
    Ok(out)
}

/// Verdict of the global a-priori gradient bound along a stable run.
#[derive(Debug, Clone)]
pub struct GlobalBoundCheck {
    /// 2p / (l (p-2)).
    pub coefficient: f64,
    /// coefficient * E(0) * (1 + 1e-6).
    pub bound: f64,
    pub worst_ratio: f64,
    pub per_record: Vec<bool>,
    pub all_ok: bool,
}

/// Check ||u_x||^2 <= 2p/(l(p-2)) E(0) at every record.
pub fn check_global_bound(records: &[EnergyRecord], constants: &WellConstants) -> GlobalBoundCheck {
    let coefficient = 2.0 * constants.p / (constants.complement * (constants.p - 2.0));
    let e0 = records.first().map_or(0.0, |r| r.energy);
    let bound = coefficient * e0 * (1.0 + 1e-6);
    let mut per_record = Vec::with_capacity(records.len());
    let mut worst_ratio = 0.0f64;
    for rec in records {
        per_record.push(rec.norm_ux_h2 <= bound);
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(rec.norm_ux_h2 / bound);
        }
    }
    let all_ok = per_record.iter().all(|&b| b);
    GlobalBoundCheck { coefficient, bound, worst_ratio, per_record, all_ok }
}
