//! Weighted function space on (0, ell): quadrature with weight x, norms,
//! finite differences and the two sharp constants of the problem.
//!
//! All integrals carry the weight x, so the node at x = 0 never contributes
//! to a norm or inner product; it only matters to the solver's stencil.

use crate::error::{Error, Result};
use rand::Rng;

/// Uniform node grid on [0, ell] with the weighted trapezoidal rule
/// for ∫_0^ell x f(x) dx.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    ell: f64,
    n: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl Grid {
    pub fn new(ell: f64, n: usize) -> Result<Self> {
        if ell <= 0.0 || !ell.is_finite() {
            return Err(Error::Precondition(format!("grid length must be positive, got {ell}")));
        }
        if n < 8 {
            return Err(Error::Precondition(format!("grid needs at least 8 cells, got {n}")));
        }
        let h = ell / n as f64;
        let nodes = (0..=n).map(|i| i as f64 * h).collect();
        Ok(Grid { ell, n, h, nodes })
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    /// Number of cells; the grid has n + 1 nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Number of nodes, n + 1.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.n + 1
    }

    /// Trapezoidal weight for node i applied to the product x·f.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// ∫_0^ell x f(x) dx by the trapezoidal rule on x·f.
    pub fn weighted_integral(&self, f: &Field) -> f64 {
        self.check(f);
        let mut acc = 0.0;
        for i in 1..self.n {
            acc += self.h * self.nodes[i] * f[i];
        }
        acc + 0.5 * self.h * self.ell * f[self.n]
    }

    /// Weighted inner product ∫ x u v.
    pub fn weighted_inner(&self, u: &Field, v: &Field) -> f64 {
        self.check(u);
        self.check(v);
        let mut acc = 0.0;
        for i in 1..self.n {
            acc += self.h * self.nodes[i] * u[i] * v[i];
        }
        acc + 0.5 * self.h * self.ell * u[self.n] * v[self.n]
    }

    /// Weighted p-norm (∫ x |u|^p)^{1/p}.
    pub fn weighted_norm_p(&self, u: &Field, p: f64) -> f64 {
        assert!(p >= 1.0, "norm exponent must be >= 1, got {p}");
        self.check(u);
        let mut acc = 0.0;
        for i in 1..=self.n {
            acc += self.weight(i) * self.nodes[i] * u[i].abs().powf(p);
        }
        acc.powf(1.0 / p)
    }

    /// ∫ x |u|^p without the root.
    pub fn weighted_p_power(&self, u: &Field, p: f64) -> f64 {
        self.check(u);
        let mut acc = 0.0;
        for i in 1..=self.n {
            acc += self.weight(i) * self.nodes[i] * u[i].abs().powf(p);
        }
        acc
    }

    /// Squared weighted L2 norm.
    pub fn norm_h2(&self, u: &Field) -> f64 {
        self.weighted_inner(u, u)
    }

    /// Nodal derivative: centered in the interior, second-order one-sided
    /// at both ends (exact on affine fields, exact at the ends on quadratics).
    pub fn derivative(&self, u: &Field) -> Field {
        self.check(u);
        let n = self.n;
        let h = self.h;
        let mut d = vec![0.0; n + 1];
        d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
        for i in 1..n {
            d[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
        }
        d[n] = (3.0 * u[n] - 4.0 * u[n - 1] + u[n - 2]) / (2.0 * h);
        Field(d)
    }

    /// Midpoint differences per cell, (u_{i+1} - u_i)/h for i = 0..n-1.
    pub fn cell_gradient(&self, u: &Field) -> Vec<f64> {
        self.check(u);
        (0..self.n).map(|i| (u[i + 1] - u[i]) / self.h).collect()
    }

    /// ∫ x v_x^2 evaluated on cell midpoints; the natural discrete
    /// Dirichlet energy of the stencil.
    pub fn cell_grad_energy(&self, u: &Field) -> f64 {
        let g = self.cell_gradient(u);
        let mut acc = 0.0;
        for (i, gi) in g.iter().enumerate() {
            let xm = (i as f64 + 0.5) * self.h;
            acc += self.h * xm * gi * gi;
        }
        acc
    }

    /// Remove the weighted mean by subtracting a multiple of (ell - x),
    /// which vanishes at x = ell.  Idempotent; fields that already have zero
    /// weighted mean come back unchanged.
    pub fn project_mean_zero(&self, u: &Field) -> Field {
        self.check(u);
        let mean = self.weighted_integral(u);
        let phi = Field((0..=self.n).map(|i| self.ell - self.nodes[i]).collect());
        let denom = self.weighted_integral(&phi);
        let c = mean / denom;
        if c == 0.0 {
            return u.clone();
        }
        Field((0..=self.n).map(|i| u[i] - c * phi[i]).collect())
    }

    fn check(&self, f: &Field) {
        assert_eq!(f.len(), self.n + 1, "field length does not match grid");
    }
}

/// Nodal values of a scalar field on a `Grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn zeros(len: usize) -> Self {
        Field(vec![0.0; len])
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Field(grid.nodes().iter().map(|&x| f(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field(self.0.iter().map(|v| c * v).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Field {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Best constant of the weighted Poincare inequality
/// ∫ x v^2 <= C_p ∫ x v_x^2 over fields vanishing at x = ell.
///
/// Computed by inverse power iteration on the generalized eigenproblem
/// K v = (1/C_p) D v, where K is the cell-midpoint Dirichlet form and D the
/// weighted lumped mass.  The discrete constant converges to
/// ell^2 / j_{0,1}^2 under refinement (first Bessel J0 zero).
pub fn estimate_cp(grid: &Grid) -> Result<f64> {
    let n = grid.n();
    let h = grid.h();
    // unknowns are nodes 0..n-1 (node n pinned to zero)
    let m = n;
    let xm = |i: usize| (i as f64 + 0.5) * h; // cell midpoints
    // tridiagonal K
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m - 1]; // off[i] couples i and i+1
    diag[0] = xm(0) / h;
    for i in 1..m {
        diag[i] = (xm(i - 1) + xm(i)) / h;
    }
    for i in 0..m - 1 {
        off[i] = -xm(i) / h;
    }
    let mass: Vec<f64> = (0..m).map(|i| grid.weight(i) * grid.node(i)).collect();

    let mut v: Vec<f64> = (0..m).map(|i| 1.0 - grid.node(i) / grid.ell()).collect();
    let mut lambda_prev = 0.0;
    for iter in 0..500 {
        let rhs: Vec<f64> = (0..m).map(|i| mass[i] * v[i]).collect();
        let w = thomas_solve(&diag, &off, &rhs);
        // Rayleigh quotient of the new iterate
        let num: f64 = (0..m).map(|i| mass[i] * w[i] * w[i]).sum();
        let mut den = 0.0;
        for i in 0..m {
            den += diag[i] * w[i] * w[i];
            if i + 1 < m {
                den += 2.0 * off[i] * w[i] * w[i + 1];
            }
        }
        let lambda = num / den;
        let scale = num.sqrt();
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Numeric("power iteration degenerated".into()));
        }
        v = w.iter().map(|x| x / scale).collect();
        if iter > 2 && (lambda - lambda_prev).abs() <= 1e-13 * lambda.abs() {
            return Ok(lambda);
        }
        lambda_prev = lambda;
    }
    Err(Error::Numeric("Poincare constant iteration did not converge".into()))
}

fn thomas_solve(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = off[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / m;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Number of random multi-starts used by `estimate_cstar`.
pub const CSTAR_STARTS: usize = 16;
/// Default RNG seed for the multi-start ascent.
pub const DEFAULT_SEED: u64 = 0x5eed_c57a;

/// Best constant of the weighted embedding ∫ x |v|^p <= C_* ||v_x||_H^p over
/// fields vanishing at x = ell, estimated by multi-start normalized gradient
/// ascent on the scale-invariant ratio.
pub fn estimate_cstar(grid: &Grid, p: f64, seed: u64) -> Result<f64> {
    if !(2.0 < p && p < 4.0) {
        return Err(Error::Precondition(format!("embedding exponent p must lie in (2,4), got {p}")));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..CSTAR_STARTS {
        let start = sample_v0_field(grid, &mut rng);
        let value = ascend_ratio(grid, p, start)?;
        best = best.max(value);
    }
    if best <= 0.0 || !best.is_finite() {
        return Err(Error::Numeric("embedding constant ascent failed".into()));
    }
    Ok(best)
}

/// Ratio ∫x|v|^p / ||v_x||_H^p for a nonzero field (nodal derivative).
pub fn embedding_ratio(grid: &Grid, p: f64, v: &Field) -> f64 {
    let num = grid.weighted_p_power(v, p);
    let den = grid.norm_h2(&grid.derivative(v));
    num / den.powf(0.5 * p)
}

fn ascend_ratio(grid: &Grid, p: f64, mut v: Field) -> Result<f64> {
    let n = grid.n();
    v[n] = 0.0;
    let mut value = embedding_ratio(grid, p, &v);
    let mut step = 0.1;
    let mut stale = 0;
    for _ in 0..4000 {
        let d = grid.derivative(&v);
        let den = grid.norm_h2(&d);
        let num = grid.weighted_p_power(&v, p);
        // gradient of num and of den in the nodal values
        let mut grad = vec![0.0; n + 1];
        for i in 1..=n {
            grad[i] += p * grid.weight(i) * grid.node(i) * v[i].abs().powf(p - 2.0) * v[i];
        }
        // transpose of the difference stencil applied to the weighted
        // derivative; the x = 0 row carries zero weight and drops out
        let h = grid.h();
        let mut dden = vec![0.0; n + 1];
        let w = |i: usize| grid.weight(i) * grid.node(i);
        for i in 1..n {
            let c = w(i) * d[i] / (2.0 * h);
            dden[i + 1] += c;
            dden[i - 1] -= c;
        }
        let cn = w(n) * d[n] / (2.0 * h);
        dden[n] += 3.0 * cn;
        dden[n - 1] -= 4.0 * cn;
        dden[n - 2] += cn;
        let factor = p * num / den;
        for i in 0..=n {
            grad[i] -= factor * dden[i];
        }
        grad[n] = 0.0; // stay in V0
        let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            break;
        }
        // backtracking line search on the scale-invariant ratio
        let mut improved = false;
        for _ in 0..30 {
            let mut trial = v.clone();
            let scale = step / gnorm * den.sqrt();
            for i in 0..=n {
                trial[i] += scale * grad[i];
            }
            let tv = embedding_ratio(grid, p, &trial);
            if tv > value {
                // renormalize to unit gradient energy
                let tden = grid.norm_h2(&grid.derivative(&trial)).sqrt();
                v = trial.scaled(1.0 / tden);
                if tv - value < 1e-13 * value.abs() {
                    stale += 1;
                } else {
                    stale = 0;
                }
                value = tv;
                step = (step * 1.3).min(1.0);
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved || stale > 8 {
            break;
        }
    }
    if !value.is_finite() {
        return Err(Error::Numeric("embedding ratio ascent produced non-finite value".into()));
    }
    Ok(value)
}

/// Random smooth field vanishing at x = ell: a few cosine modes with the
/// free-end shape at the origin, coefficients decaying with frequency.
pub fn sample_v0_field(grid: &Grid, rng: &mut impl Rng) -> Field {
    let ell = grid.ell();
    let modes = 8;
    let coeffs: Vec<f64> =
        (0..modes).map(|k| rng.gen_range(-1.0..1.0) / (k + 1) as f64).collect();
    let mut f = Field::from_fn(grid, |x| {
        let mut acc = 0.0;
        for (k, c) in coeffs.iter().enumerate() {
            let freq = (2 * k + 1) as f64 * std::f64::consts::FRAC_PI_2 / ell;
            acc += c * (freq * x).cos();
        }
        acc
    });
    let n = grid.n();
    f[n] = 0.0;
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const J01: f64 = 2.404825557695773;

    #[test]
    fn quadrature_exact_on_constants() {
        for (ell, n) in [(1.0, 16), (2.0, 64), (0.7, 33)] {
            let g = Grid::new(ell, n).unwrap();
            let one = Field::from_fn(&g, |_| 1.0);
            let q = g.weighted_integral(&one);
            assert!((q - ell * ell / 2.0).abs() <= 1e-12 * ell * ell / 2.0, "{q}");
        }
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(Grid::new(0.0, 16).is_err());
        assert!(Grid::new(1.0, 4).is_err());
    }

    #[test]
    fn weighted_norms_match_closed_forms() {
        let g = Grid::new(1.0, 256).unwrap();
        let one = Field::from_fn(&g, |_| 1.0);
        let n2 = g.weighted_norm_p(&one, 2.0);
        assert!((n2 - 0.5f64.sqrt()).abs() < 1e-12, "{n2}");

        let lin = Field::from_fn(&g, |x| x);
        let n2 = g.weighted_norm_p(&lin, 2.0);
        assert!((n2 - 0.5).abs() < 2e-5, "{n2}"); // trapezoid error O(h^2)

        let z = Field::zeros(g.len());
        assert_eq!(g.weighted_norm_p(&z, 2.0), 0.0);
    }

    #[test]
    fn inner_product_orthogonal_pattern() {
        let g = Grid::new(1.0, 512).unwrap();
        let u = Field::from_fn(&g, |_| 1.0);
        let v = Field::from_fn(&g, |x| x - 2.0 / 3.0);
        assert!(g.weighted_inner(&u, &v).abs() < 1e-6);
        let z = Field::zeros(g.len());
        assert_eq!(g.weighted_inner(&u, &z), 0.0);
        assert!((g.weighted_inner(&u, &u) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn derivative_exact_on_affine_and_second_order() {
        let g = Grid::new(1.0, 64).unwrap();
        let lin = Field::from_fn(&g, |x| 3.0 * x);
        let d = g.derivative(&lin);
        for i in 0..=g.n() {
            assert!((d[i] - 3.0).abs() < 1e-12);
        }
        let c = Field::from_fn(&g, |_| 5.0);
        let dc = g.derivative(&c);
        for i in 0..=g.n() {
            assert!(dc[i].abs() < 1e-12);
        }
        // x^2: exact in the interior and at the ends for the 3-point formulas
        let sq = Field::from_fn(&g, |x| x * x);
        let ds = g.derivative(&sq);
        for i in 0..=g.n() {
            assert!((ds[i] - 2.0 * g.node(i)).abs() < 1e-10, "node {i}");
        }
    }

    #[test]
    fn projection_properties() {
        let g = Grid::new(1.0, 128).unwrap();
        let u = Field::from_fn(&g, |_| 1.0);
        let pu = g.project_mean_zero(&u);
        assert!(g.weighted_integral(&pu).abs() < 1e-12);
        // expected correction coefficient is 3 up to quadrature error
        let c = (u[0] - pu[0]) / g.ell();
        assert!((c - 3.0).abs() < 1e-3, "c = {c}");
        // idempotent and endpoint-preserving
        let ppu = g.project_mean_zero(&pu);
        for i in 0..=g.n() {
            assert!((ppu[i] - pu[i]).abs() < 1e-12);
        }
        assert_eq!(pu[g.n()], u[g.n()]);

        // already balanced quadratic family is (nearly) untouched
        let q = Field::from_fn(&g, |x| (1.0 - x) * (x - 0.5));
        let pq = g.project_mean_zero(&q);
        let shift = (0..=g.n()).map(|i| (pq[i] - q[i]).abs()).fold(0.0, f64::max);
        assert!(shift < 1e-4, "projection moved analytic family by {shift}");
    }

    #[test]
    fn poincare_constant_converges_to_bessel_value() {
        let exact = 1.0 / (J01 * J01);
        let c256 = estimate_cp(&Grid::new(1.0, 256).unwrap()).unwrap();
        let c512 = estimate_cp(&Grid::new(1.0, 512).unwrap()).unwrap();
        assert!((c512 - exact).abs() / exact < 5e-3, "got {c512}, want {exact}");
        assert!((c512 - exact).abs() < (c256 - exact).abs() + 1e-12);
        // ell^2 scaling
        let c2 = estimate_cp(&Grid::new(2.0, 256).unwrap()).unwrap();
        assert!((c2 - 4.0 * c256).abs() < 1e-6 * c2.abs().max(1.0), "{c2} vs {}", 4.0 * c256);
    }

    #[test]
    fn poincare_witness_is_a_lower_bound() {
        let g = Grid::new(1.0, 256).unwrap();
        let cp = estimate_cp(&g).unwrap();
        let v = Field::from_fn(&g, |x| 1.0 - x);
        let ratio = g.norm_h2(&v) / g.norm_h2(&g.derivative(&v));
        assert!((ratio - 1.0 / 6.0).abs() < 1e-3);
        assert!(ratio <= cp);
    }

    #[test]
    fn poincare_inequality_on_random_fields() {
        let g = Grid::new(1.0, 256).unwrap();
        let cp = estimate_cp(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let v = sample_v0_field(&g, &mut rng);
            let lhs = g.norm_h2(&v);
            let rhs = cp * g.norm_h2(&g.derivative(&v));
            assert!(lhs <= rhs * (1.0 + 1e-6), "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn embedding_constant_dominates_test_fields() {
        let g = Grid::new(1.0, 256).unwrap();
        let cstar = estimate_cstar(&g, 2.5, DEFAULT_SEED).unwrap();
        let witness = Field::from_fn(&g, |x| (1.0 - x) * (x - 0.5));
        let ratio = embedding_ratio(&g, 2.5, &witness);
        assert!(cstar > ratio, "cstar {cstar} <= witness {ratio}");
        assert!(cstar > 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v = sample_v0_field(&g, &mut rng);
            let num = g.weighted_p_power(&v, 2.5);
            let den = g.norm_h2(&g.derivative(&v)).powf(1.25);
            assert!(num <= cstar * den * (1.0 + 1e-6));
        }
    }

    #[test]
    fn embedding_constant_stable_under_refinement() {
        let c256 = estimate_cstar(&Grid::new(1.0, 256).unwrap(), 2.5, DEFAULT_SEED).unwrap();
        let c512 = estimate_cstar(&Grid::new(1.0, 512).unwrap(), 2.5, DEFAULT_SEED).unwrap();
        assert!((c512 - c256).abs() / c256 < 0.01, "{c256} vs {c512}");
    }

    #[test]
    fn embedding_rejects_bad_exponent() {
        let g = Grid::new(1.0, 64).unwrap();
        assert!(estimate_cstar(&g, 4.2, 0).is_err());
    }
}
