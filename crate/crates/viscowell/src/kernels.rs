//! Relaxation kernels g(t) and the auxiliary functions xi(t) that certify
//! their decay structure.
//!
//! A kernel is admissible when it is non-increasing, starts positive and
//! leaves a positive residual stiffness `l = 1 - ∫_0^∞ g`.  The decay
//! structure is certified by a pair `(r, xi)` satisfying
//! `g'(t) <= -xi(t) g(t)^r` with `1 <= r < 3/2`; for the analytic kernel
//! families below the canonical pair turns that inequality into an identity.

use crate::error::{Error, Result};

/// Absolute floor for inequality checks on sampled grids.
pub const CHECK_ABS_TOL: f64 = 1e-10;
/// Relative slack for inequality checks on sampled grids.
pub const CHECK_REL_TOL: f64 = 1e-8;

/// Relaxation kernel variants.
///
/// `Polynomial { c0, power }` is `c0 (1+t)^{-power}`; `LogMixed { r, scale }`
/// is the exact solution of `g' = -xi g^r` for the mixed power/log rate
/// function with `g(0) = scale`.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Exponential { g0: f64, rate: f64 },
    Polynomial { c0: f64, power: f64 },
    LogMixed { r: f64, scale: f64 },
    Tabulated { times: Vec<f64>, values: Vec<f64> },
    Zero,
}

impl Kernel {
    pub fn exponential(g0: f64, rate: f64) -> Result<Self> {
        if g0 <= 0.0 || rate <= 0.0 {
            return Err(Error::InvalidKernel(format!(
                "exponential kernel needs g0 > 0 and rate > 0, got g0={g0}, rate={rate}"
            )));
        }
        Ok(Kernel::Exponential { g0, rate })
    }

    /// `c0 (1+t)^{-power}`.  Any positive exponent is representable; the
    /// stricter gates (`power > 1` for finite mass, `power > 2` for an
    /// admissible decay certificate) are enforced by the operations that
    /// need them.
    pub fn polynomial(c0: f64, power: f64) -> Result<Self> {
        if c0 <= 0.0 || power <= 0.0 {
            return Err(Error::InvalidKernel(format!(
                "polynomial kernel needs c0 > 0 and power > 0, got c0={c0}, power={power}"
            )));
        }
        Ok(Kernel::Polynomial { c0, power })
    }

    pub fn log_mixed(r: f64, scale: f64) -> Result<Self> {
        if !(1.0 < r && r < 1.5) {
            return Err(Error::InvalidKernel(format!(
                "log-mixed kernel needs r in (1, 3/2), got {r}"
            )));
        }
        if scale <= 0.0 {
            return Err(Error::InvalidKernel(format!(
                "log-mixed kernel needs scale > 0, got {scale}"
            )));
        }
        Ok(Kernel::LogMixed { r, scale })
    }

    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::InvalidKernel(
                "tabulated kernel needs at least two (time, value) samples".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidKernel("tabulated times must start at 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidKernel("tabulated times must be strictly increasing".into()));
        }
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidKernel("tabulated values must be finite and non-negative".into()));
        }
        Ok(Kernel::Tabulated { times, values })
    }

    pub fn zero() -> Self {
        Kernel::Zero
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Kernel::Zero)
    }

    /// g(t).  Exact for the analytic variants, linear interpolation for tables.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Domain(format!("kernel evaluated at t = {t}")));
        }
        Ok(match self {
            Kernel::Exponential { g0, rate } => g0 * (-rate * t).exp(),
            Kernel::Polynomial { c0, power } => c0 * (1.0 + t).powf(-power),
            Kernel::LogMixed { r, scale } => {
                log_mixed_base(*r, *scale, t).powf(-1.0 / (r - 1.0))
            }
            Kernel::Tabulated { times, values } => table_interp(times, values, t)?,
            Kernel::Zero => 0.0,
        })
    }

    /// g'(t), closed form for analytic variants, forward differences for tables.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Domain(format!("kernel derivative at t = {t}")));
        }
        Ok(match self {
            Kernel::Exponential { g0, rate } => -rate * g0 * (-rate * t).exp(),
            Kernel::Polynomial { c0, power } => -power * c0 * (1.0 + t).powf(-power - 1.0),
            Kernel::LogMixed { r, scale } => {
                // g' = -xi g^r by construction of the family
                let xi = Xi::log_mixed(*r).expect("constructor validated r").eval(t);
                let g = log_mixed_base(*r, *scale, t).powf(-1.0 / (r - 1.0));
                -xi * g.powf(*r)
            }
            Kernel::Tabulated { times, values } => {
                let last = *times.last().unwrap();
                if t > last {
                    return Err(Error::Range(format!("t = {t} beyond table end {last}")));
                }
                // forward difference on the segment containing t
                let seg = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                    Ok(i) => i.min(times.len() - 2),
                    Err(i) => i - 1,
                };
                (values[seg + 1] - values[seg]) / (times[seg + 1] - times[seg])
            }
            Kernel::Zero => 0.0,
        })
    }

    /// ∫_0^t g(s) ds.
    pub fn mass_to(&self, t: f64) -> Result<f64> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Domain(format!("kernel mass horizon t = {t}")));
        }
        Ok(match self {
            Kernel::Exponential { g0, rate } => g0 / rate * (1.0 - (-rate * t).exp()),
            Kernel::Polynomial { c0, power } => {
                if (power - 1.0).abs() < 1e-14 {
                    c0 * (1.0 + t).ln()
                } else {
                    c0 / (power - 1.0) * (1.0 - (1.0 + t).powf(1.0 - power))
                }
            }
            Kernel::LogMixed { .. } => {
                let f = |s: f64| self.eval(s).unwrap();
                adaptive_simpson(&f, 0.0, t, 1e-12, 40)
            }
            Kernel::Tabulated { times, values } => {
                let last = *times.last().unwrap();
                if t > last {
                    return Err(Error::Range(format!("mass horizon {t} beyond table end {last}")));
                }
                table_trapz(times, values, t)
            }
            Kernel::Zero => 0.0,
        })
    }

    /// ∫_0^∞ g(s) ds.  Errors when the integral diverges or the variant only
    /// covers a finite horizon.
    pub fn mass_infinite(&self) -> Result<f64> {
        match self {
            Kernel::Exponential { g0, rate } => Ok(g0 / rate),
            Kernel::Polynomial { c0, power } => {
                if *power <= 1.0 {
                    Err(Error::InvalidKernel(format!(
                        "polynomial kernel with power {power} <= 1 has divergent mass"
                    )))
                } else {
                    Ok(c0 / (power - 1.0))
                }
            }
            Kernel::LogMixed { r, scale } => {
                // g ~ c (1+t)^{-2} at the tail: integrate a log-substituted
                // integrand to a large horizon and add the analytic tail.
                let horizon = 1e10;
                let f = |u: f64| {
                    let t = u.exp() - 1.0;
                    self.eval(t).unwrap() * (t + 1.0)
                };
                let body = adaptive_simpson(&f, 0.0, (horizon + 1.0f64).ln(), 1e-12, 48);
                let g_end = log_mixed_base(*r, *scale, horizon).powf(-1.0 / (r - 1.0));
                let tail = g_end * (horizon + 1.0); // ∫_T^∞ c(1+t)^{-2} with c matched at T
                Ok(body + tail)
            }
            Kernel::Tabulated { .. } => Err(Error::Unsupported(
                "infinite-horizon mass of a tabulated kernel".into(),
            )),
            Kernel::Zero => Ok(0.0),
        }
    }

    /// Residual stiffness `l = 1 - ∫_0^∞ g`.
    pub fn complement(&self) -> Result<f64> {
        Ok(1.0 - self.mass_infinite()?)
    }

    /// Canonical `(r, xi)` pair turning `g' <= -xi g^r` into an identity.
    pub fn xi_pair(&self) -> Result<(f64, Xi)> {
        match self {
            Kernel::Exponential { rate, .. } => Ok((1.0, Xi::constant(*rate)?)),
            Kernel::Polynomial { c0, power } => {
                if *power <= 2.0 {
                    return Err(Error::Precondition(format!(
                        "polynomial kernel with power {power} <= 2 gives r = (power+1)/power >= 3/2"
                    )));
                }
                let r = (power + 1.0) / power;
                Ok((r, Xi::constant(power * c0.powf(-1.0 / power))?))
            }
            Kernel::LogMixed { r, .. } => Ok((*r, Xi::log_mixed(*r)?)),
            Kernel::Tabulated { .. } | Kernel::Zero => Err(Error::Unsupported(
                "no canonical decay certificate for tabulated or zero kernels".into(),
            )),
        }
    }

    /// Whether ∫_0^∞ g^{2-r} converges (the admissibility criterion behind
    /// the bound r < 3/2).  `None` when not decidable analytically.
    pub fn mass_2mr_finite(&self, r: f64) -> Option<bool> {
        match self {
            Kernel::Exponential { .. } => Some(true),
            Kernel::Polynomial { power, .. } => Some(power * (2.0 - r) > 1.0),
            Kernel::LogMixed { .. } => Some(2.0 * (2.0 - r) > 1.0),
            Kernel::Zero => Some(true),
            Kernel::Tabulated { .. } => None,
        }
    }
}

fn log_mixed_base(r: f64, scale: f64, t: f64) -> f64 {
    // g^{1-r}(t) = scale^{1-r} + (r-1) ∫_0^t xi
    scale.powf(1.0 - r) + (r - 1.0) * log_mixed_xi_primitive(r, t)
}

/// ∫_0^t of the log-mixed rate function `2(r-1)(s+1)^{2r-3} + 1/(s+1)`.
fn log_mixed_xi_primitive(r: f64, t: f64) -> f64 {
    (t + 1.0).powf(2.0 * (r - 1.0)) - 1.0 + (t + 1.0).ln()
}

fn table_interp(times: &[f64], values: &[f64], t: f64) -> Result<f64> {
    let last = *times.last().unwrap();
    if t > last {
        return Err(Error::Range(format!("t = {t} beyond table end {last}")));
    }
    let i = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => return Ok(values[i]),
        Err(i) => i - 1,
    };
    let w = (t - times[i]) / (times[i + 1] - times[i]);
    Ok(values[i] * (1.0 - w) + values[i + 1] * w)
}

fn table_trapz(times: &[f64], values: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..times.len() - 1 {
        if times[i] >= t {
            break;
        }
        let hi = times[i + 1].min(t);
        let vi = values[i];
        let vh = table_interp(times, values, hi).unwrap();
        acc += 0.5 * (vi + vh) * (hi - times[i]);
    }
    acc
}

/// Adaptive Simpson quadrature.
pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(f, a, fa, m, fm, lm, flm);
        let right = simpson(f, m, fm, b, fb, rm, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = simpson(f, a, fa, b, fb, m, fm);
    rec(f, a, fa, b, fb, m, fm, whole, tol, depth)
}

/// Rate functions xi(t) for the decay certificate.
#[derive(Debug, Clone, PartialEq)]
pub enum XiKind {
    Constant(f64),
    /// `(1+t)^{-m}` with `0 < m < 1`.
    PowerLaw(f64),
    /// `2(r-1)/(t+1)^{3-2r} + 1/(t+1)` with `r` matching the kernel.
    LogMixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Xi {
    pub kind: XiKind,
    /// Upper bound L for |xi'/xi|.
    pub ratio_bound: f64,
}

impl Xi {
    pub fn constant(xi0: f64) -> Result<Self> {
        if xi0 <= 0.0 {
            return Err(Error::Precondition(format!("constant xi needs xi0 > 0, got {xi0}")));
        }
        Ok(Xi { kind: XiKind::Constant(xi0), ratio_bound: 0.0 })
    }

    pub fn power_law(m: f64) -> Result<Self> {
        if !(0.0 < m && m < 1.0) {
            return Err(Error::Precondition(format!("power-law xi needs m in (0,1), got {m}")));
        }
        Ok(Xi { kind: XiKind::PowerLaw(m), ratio_bound: m })
    }

    pub fn log_mixed(r: f64) -> Result<Self> {
        if !(1.0 < r && r < 1.5) {
            return Err(Error::Precondition(format!("log-mixed xi needs r in (1,3/2), got {r}")));
        }
        // |xi'| <= xi/(t+1) <= xi, see the term-by-term bound in the tests.
        Ok(Xi { kind: XiKind::LogMixed(r), ratio_bound: 1.0 })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.kind {
            XiKind::Constant(x) => x,
            XiKind::PowerLaw(m) => (1.0 + t).powf(-m),
            XiKind::LogMixed(r) => {
                2.0 * (r - 1.0) * (t + 1.0).powf(2.0 * r - 3.0) + 1.0 / (t + 1.0)
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self.kind {
            XiKind::Constant(_) => 0.0,
            XiKind::PowerLaw(m) => -m * (1.0 + t).powf(-m - 1.0),
            XiKind::LogMixed(r) => {
                2.0 * (r - 1.0) * (2.0 * r - 3.0) * (t + 1.0).powf(2.0 * r - 4.0)
                    - (t + 1.0).powi(-2)
            }
        }
    }

    /// ∫_{t0}^{t} xi(s) ds in closed form.
    pub fn integral(&self, t0: f64, t: f64) -> Result<f64> {
        if t < t0 {
            return Err(Error::Domain(format!("xi integral needs t >= t0, got [{t0}, {t}]")));
        }
        Ok(match self.kind {
            XiKind::Constant(x) => x * (t - t0),
            XiKind::PowerLaw(m) => {
                ((1.0 + t).powf(1.0 - m) - (1.0 + t0).powf(1.0 - m)) / (1.0 - m)
            }
            XiKind::LogMixed(r) => {
                log_mixed_xi_primitive(r, t) - log_mixed_xi_primitive(r, t0)
            }
        })
    }

    /// All supported variants have ∫_0^∞ xi = ∞; kept explicit because the
    /// divergence is required by the decay certificate and cannot be tested
    /// by quadrature.
    pub fn integral_diverges(&self) -> bool {
        match self.kind {
            XiKind::Constant(_) => true,
            XiKind::PowerLaw(m) => m < 1.0,
            XiKind::LogMixed(_) => true,
        }
    }

    /// Whether `t / (1 + ∫_{t0}^t xi)^{1/(2(r-1))}` stays bounded as t grows,
    /// for a certificate exponent `r > 1`.
    pub fn growth_bounded(&self, r: f64) -> bool {
        match self.kind {
            XiKind::Constant(_) => r < 1.5,
            XiKind::PowerLaw(m) => m <= 3.0 - 2.0 * r,
            XiKind::LogMixed(rx) => rx >= r,
        }
    }
}

/// Verification report for the structural kernel hypotheses.
#[derive(Debug, Clone)]
pub struct G1Report {
    pub g_at_zero: f64,
    pub g0_positive: bool,
    pub non_increasing: bool,
    /// Largest observed increase g(t_{k+1}) - g(t_k) over the grid.
    pub worst_increase: f64,
    pub mass: Option<f64>,
    pub complement: Option<f64>,
    pub complement_positive: Option<bool>,
    pub pass: bool,
}

/// Check positivity, monotone decrease and residual stiffness on a sample grid.
pub fn verify_g1(kernel: &Kernel, grid: &[f64]) -> Result<G1Report> {
    if grid.is_empty() {
        return Err(Error::Precondition("verify_g1 needs a non-empty grid".into()));
    }
    let g_at_zero = kernel.eval(0.0)?;
    let g0_positive = g_at_zero > 0.0;
    let mut worst_increase = 0.0f64;
    let mut prev = g_at_zero;
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &t in &sorted {
        let g = kernel.eval(t)?;
        let scale = CHECK_ABS_TOL + CHECK_REL_TOL * prev.abs();
        if g - prev > scale {
            worst_increase = worst_increase.max(g - prev);
        }
        prev = g;
    }
    let non_increasing = worst_increase == 0.0;
    let (mass, complement, complement_positive) = match kernel.mass_infinite() {
        Ok(m) => (Some(m), Some(1.0 - m), Some(1.0 - m > 0.0)),
        Err(_) => (None, None, None),
    };
    let pass = g0_positive && non_increasing && complement_positive.unwrap_or(false);
    Ok(G1Report {
        g_at_zero,
        g0_positive,
        non_increasing,
        worst_increase,
        mass,
        complement,
        complement_positive,
        pass,
    })
}

/// Verification report for the decay certificate `(r, xi)`.
#[derive(Debug, Clone)]
pub struct G2Report {
    pub r: f64,
    pub inequality_ok: bool,
    /// Worst violation of g' + xi g^r <= 0 over the grid.
    pub worst_residual: f64,
    pub xi_positive: bool,
    pub xi_non_increasing: bool,
    pub ratio_bounded: bool,
    pub mass_2mr_finite: Option<bool>,
    pub xi_integral_diverges: bool,
    /// Boundedness of t/(1+∫ xi)^{1/(2(r-1))}; only meaningful for r > 1.
    pub growth_bounded: Option<bool>,
    /// Largest sampled value of the growth ratio (r > 1 only).
    pub growth_sup: Option<f64>,
    pub pass: bool,
}

/// Check the decay certificate clauses on a sample grid.
pub fn verify_g2(kernel: &Kernel, r: f64, xi: &Xi, grid: &[f64]) -> Result<G2Report> {
    if !(1.0 <= r && r < 1.5) {
        return Err(Error::Precondition(format!("decay exponent r must lie in [1, 3/2), got {r}")));
    }
    if grid.is_empty() {
        return Err(Error::Precondition("verify_g2 needs a non-empty grid".into()));
    }
    let mut worst_residual = 0.0f64;
    let mut xi_positive = true;
    let mut xi_non_increasing = true;
    let mut ratio_bounded = true;
    let t0 = 1.0;
    let mut growth_sup = 0.0f64;
    for &t in grid {
        let g = kernel.eval(t)?;
        let gp = kernel.derivative(t)?;
        let x = xi.eval(t);
        let xp = xi.derivative(t);
        let scale = CHECK_ABS_TOL + CHECK_REL_TOL * (gp.abs() + (x * g.powf(r)).abs());
        let resid = gp + x * g.powf(r);
        if resid > scale {
            worst_residual = worst_residual.max(resid);
        }
        if x <= 0.0 {
            xi_positive = false;
        }
        if xp > CHECK_ABS_TOL + CHECK_REL_TOL * x.abs() {
            xi_non_increasing = false;
        }
        if (xp / x).abs() > xi.ratio_bound * (1.0 + CHECK_REL_TOL) + CHECK_ABS_TOL {
            ratio_bounded = false;
        }
        if r > 1.0 && t >= t0 {
            let denom = (1.0 + xi.integral(t0, t)?).powf(1.0 / (2.0 * (r - 1.0)));
            growth_sup = growth_sup.max(t / denom);
        }
    }
    let inequality_ok = worst_residual == 0.0;
    let mass_2mr_finite = kernel.mass_2mr_finite(r);
    let growth_bounded = if r > 1.0 { Some(xi.growth_bounded(r)) } else { None };
    let pass = inequality_ok
        && xi_positive
        && xi_non_increasing
        && ratio_bounded
        && mass_2mr_finite.unwrap_or(false)
        && xi.integral_diverges()
        && growth_bounded.unwrap_or(true);
    Ok(G2Report {
        r,
        inequality_ok,
        worst_residual,
        xi_positive,
        xi_non_increasing,
        ratio_bounded,
        mass_2mr_finite,
        xi_integral_diverges: xi.integral_diverges(),
        growth_bounded,
        growth_sup: if r > 1.0 { Some(growth_sup) } else { None },
        pass,
    })
}

/// Threshold on ∫_0^∞ g required by the blow-up theorem for energy fraction
/// delta, with `delta_hat = max(0, delta)`.
pub fn mass_condition_threshold(p: f64, delta: f64) -> Result<f64> {
    if !(2.0 < p && p < 3.0) {
        return Err(Error::Precondition(format!("source exponent p must lie in (2,3), got {p}")));
    }
    if delta >= 1.0 {
        return Err(Error::Precondition(format!("energy fraction delta must be < 1, got {delta}")));
    }
    let dh = delta.max(0.0);
    Ok((p - 2.0) / (p - 2.0 + 1.0 / ((1.0 - dh) * (1.0 - dh) * p + 2.0 * dh * (1.0 - dh))))
}

/// Whether the kernel mass satisfies the blow-up smallness condition.
pub fn check_mass_condition(kernel: &Kernel, p: f64, delta: f64) -> Result<bool> {
    let threshold = mass_condition_threshold(p, delta)?;
    Ok(kernel.mass_infinite()? <= threshold)
}
