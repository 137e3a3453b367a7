//! Conformal charts near a node, their metric densities, and meromorphic
//! quadratic differentials stored as finite Laurent series.
//!
//! All densities are rotationally invariant, so they are stored through the
//! flat cylinder coordinate `ζ = log x = ρ + iθ`: a density `λ(x)|dx|` is
//! the same metric as `λ_ζ(ρ)|dζ|` with `λ_ζ = |x| λ(x)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Default highest admissible Laurent degree.
pub const DEFAULT_TRUNCATION: i32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordLabel {
    Z,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartKind {
    /// Plumbing annulus `{ |t|/c < |x| < c }` of `z w = t`.
    Annulus { t: Complex64 },
    /// Cusp neighbourhood `{ 0 < |x| < c }` of a node.
    Cusp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalChart {
    pub kind: ChartKind,
    pub c: f64,
    pub label: CoordLabel,
}

impl ConformalChart {
    pub fn annulus(t: Complex64, c: f64) -> Result<Self> {
        check_c(c)?;
        let m = t.norm();
        if !(m > 0.0 && m < c * c) {
            return Err(LabError::InvalidChart(format!(
                "annulus needs 0 < |t| < c^2, got |t| = {m:e}, c = {c}"
            )));
        }
        Ok(ConformalChart {
            kind: ChartKind::Annulus { t },
            c,
            label: CoordLabel::Z,
        })
    }

    pub fn cusp(c: f64) -> Result<Self> {
        check_c(c)?;
        Ok(ConformalChart {
            kind: ChartKind::Cusp,
            c,
            label: CoordLabel::Z,
        })
    }

    pub fn with_label(mut self, label: CoordLabel) -> Self {
        self.label = label;
        self
    }

    /// Plumbing parameter; zero on a cusp chart.
    pub fn t(&self) -> Complex64 {
        match self.kind {
            ChartKind::Annulus { t } => t,
            ChartKind::Cusp => Complex64::new(0.0, 0.0),
        }
    }

    pub fn is_cusp(&self) -> bool {
        matches!(self.kind, ChartKind::Cusp)
    }

    /// Open interval of `ρ = log|x|` covered by the chart.
    pub fn rho_bounds(&self) -> (f64, f64) {
        let hi = self.c.ln();
        match self.kind {
            ChartKind::Annulus { t } => (t.norm().ln() - hi, hi),
            ChartKind::Cusp => (f64::NEG_INFINITY, hi),
        }
    }

    pub fn contains_rho(&self, rho: f64) -> bool {
        let (lo, hi) = self.rho_bounds();
        rho > lo && rho < hi
    }

    pub fn contains(&self, x: Complex64) -> bool {
        let r = x.norm();
        r > 0.0 && self.contains_rho(r.ln())
    }

    /// Conformal modulus `(1/2π) log(c²/|t|)` of an annulus chart.
    pub fn modulus(&self) -> Option<f64> {
        match self.kind {
            ChartKind::Annulus { t } => Some((self.c * self.c / t.norm()).ln() / (2.0 * PI)),
            ChartKind::Cusp => None,
        }
    }

    /// Constant and positive-degree terms are not admissible on cusp charts:
    /// under `w = t/x` they become poles of order `k + 4 > 2`.
    pub fn admits(&self, q: &QuadDiff) -> Result<()> {
        if self.is_cusp() {
            if let Some((k, _)) = q.coeffs.iter().find(|(k, a)| **k >= 0 && a.norm() != 0.0) {
                return Err(LabError::InvalidDifferential(format!(
                    "degree-{k} term is not admissible on a cusp chart"
                )));
            }
        }
        Ok(())
    }
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(LabError::InvalidChart(format!("chart radius must lie in (0,1), got {c}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityFlavor {
    Hyperbolic,
    Grafting,
    Perturbed,
}

/// A conformal density `λ²|dx|²` on a chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDensity {
    pub chart: ConformalChart,
    pub flavor: DensityFlavor,
    collar: Option<Collar>,
}

/// Band layout of the perturbed metric on an opened node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Collar {
    k: f64,
    log_t: f64,
}

impl MetricDensity {
    pub fn hyperbolic(chart: ConformalChart) -> Self {
        MetricDensity {
            chart,
            flavor: DensityFlavor::Hyperbolic,
            collar: None,
        }
    }

    pub fn grafting(chart: ConformalChart) -> Self {
        MetricDensity {
            chart,
            flavor: DensityFlavor::Grafting,
            collar: None,
        }
    }

    /// Perturbed metric with the collar constant chosen automatically: the
    /// collar branch is used iff `0 < |t| < c^{2π}`.
    pub fn perturbed(chart: ConformalChart) -> Self {
        let collar = match chart.kind {
            ChartKind::Annulus { t } if t.norm() < chart.c.powf(2.0 * PI) => Some(Collar {
                k: collar_k(t, chart.c).expect("range checked"),
                log_t: t.norm().ln(),
            }),
            _ => None,
        };
        MetricDensity {
            chart,
            flavor: DensityFlavor::Perturbed,
            collar,
        }
    }

    /// Perturbed metric with an explicit collar constant `k`.
    pub fn perturbed_with_collar(chart: ConformalChart, k: f64) -> Result<Self> {
        let ChartKind::Annulus { t } = chart.kind else {
            return Err(LabError::InvalidChart("collar branch needs an annulus chart".into()));
        };
        if t.norm() >= chart.c.powf(2.0 * PI) {
            return Err(LabError::InvalidChart(format!(
                "collar branch needs |t| < c^(2π) = {:e}, got {:e}",
                chart.c.powf(2.0 * PI),
                t.norm()
            )));
        }
        let log_t = t.norm().ln();
        if !(k.is_finite() && log_t - k <= k) {
            return Err(LabError::InvalidChart(format!(
                "collar constant {k} leaves an empty flat band"
            )));
        }
        Ok(MetricDensity {
            chart,
            flavor: DensityFlavor::Perturbed,
            collar: Some(Collar { k, log_t }),
        })
    }

    /// Collar constant in use, if the collar branch is active.
    pub fn collar_constant(&self) -> Option<f64> {
        self.collar.map(|c| c.k)
    }

    /// `λ(x)`; errors outside the chart.
    pub fn at(&self, x: Complex64) -> Result<f64> {
        if !self.chart.contains(x) {
            return Err(LabError::OutsideDomain { x });
        }
        Ok(self.zeta_density(x.norm().ln()) / x.norm())
    }

    /// `λ_ζ(ρ) = |x| λ(x)` with `ρ = log|x|`. No domain check.
    pub fn zeta_density(&self, rho: f64) -> f64 {
        match self.flavor {
            DensityFlavor::Hyperbolic => hyperbolic_zeta(&self.chart, rho),
            DensityFlavor::Grafting => grafting_zeta(&self.chart, rho),
            DensityFlavor::Perturbed => self.perturbed_zeta(rho).0,
        }
    }

    /// `d/dρ log λ_ζ(ρ)`.
    pub fn dlog_zeta(&self, rho: f64) -> f64 {
        match self.flavor {
            DensityFlavor::Hyperbolic => hyperbolic_dlog(&self.chart, rho),
            DensityFlavor::Grafting => match self.chart.kind {
                ChartKind::Cusp => hyperbolic_dlog(&self.chart, rho),
                ChartKind::Annulus { .. } => 0.0,
            },
            DensityFlavor::Perturbed => {
                let (v, dv) = self.perturbed_zeta(rho);
                dv / v
            }
        }
    }

    /// Gaussian curvature. Exactly `-1` for the hyperbolic flavor; otherwise
    /// the finite-difference value of `-(log λ_ζ)'' / λ_ζ²`.
    pub fn curvature(&self, rho: f64) -> f64 {
        match self.flavor {
            DensityFlavor::Hyperbolic => -1.0,
            _ => radial_curvature_fd(|r| self.zeta_density(r), rho),
        }
    }

    /// Value and ρ-derivative of the perturbed `λ_ζ`.
    fn perturbed_zeta(&self, rho: f64) -> (f64, f64) {
        let chart = &self.chart;
        let log_c = chart.c.ln();
        let band = -log_c;
        let flat = 1.0 / (2.0 * band);
        match (chart.kind, self.collar) {
            (ChartKind::Cusp, _) => {
                let lower = 2.0 * log_c;
                if rho <= lower {
                    (flat, 0.0)
                } else if rho >= log_c {
                    (hyperbolic_zeta(chart, rho), hyperbolic_zeta(chart, rho) * hyperbolic_dlog(chart, rho))
                } else {
                    let g = hyperbolic_zeta(chart, rho);
                    let dg = g * hyperbolic_dlog(chart, rho);
                    let (s, ds) = smooth_step((rho - lower) / band);
                    let ds = ds / band;
                    ((1.0 - s) * flat + s * g, (g - flat) * ds + s * dg)
                }
            }
            (ChartKind::Annulus { .. }, None) => (grafting_zeta(chart, rho), 0.0),
            (ChartKind::Annulus { .. }, Some(Collar { k, log_t })) => {
                let graft = grafting_zeta(chart, rho);
                let upper = k;
                let lower = log_t - k;
                if rho >= upper + band || rho <= lower - band {
                    (graft, 0.0)
                } else if rho >= lower && rho <= upper {
                    (flat, 0.0)
                } else if rho > upper {
                    let (s, ds) = smooth_step((rho - upper) / band);
                    ((1.0 - s) * flat + s * graft, (graft - flat) * ds / band)
                } else {
                    let (s, ds) = smooth_step((lower - rho) / band);
                    ((1.0 - s) * flat + s * graft, -(graft - flat) * ds / band)
                }
            }
        }
    }
}

fn hyperbolic_zeta(chart: &ConformalChart, rho: f64) -> f64 {
    match chart.kind {
        ChartKind::Cusp => 1.0 / rho.abs(),
        ChartKind::Annulus { t } => {
            // complete hyperbolic metric of { |t| < |x| < 1 }, core at |x| = √|t|
            let log_t = t.norm().ln();
            let l = -log_t;
            (PI / l) / (PI * rho / log_t).sin()
        }
    }
}

fn hyperbolic_dlog(chart: &ConformalChart, rho: f64) -> f64 {
    match chart.kind {
        ChartKind::Cusp => -1.0 / rho,
        ChartKind::Annulus { t } => {
            let l = -t.norm().ln();
            let u = -PI * rho / l;
            (PI / l) / u.tan()
        }
    }
}

fn grafting_zeta(chart: &ConformalChart, rho: f64) -> f64 {
    match chart.kind {
        ChartKind::Cusp => hyperbolic_zeta(chart, rho),
        // flat cylinder, matched to the hyperbolic density at |x| = c
        ChartKind::Annulus { .. } => hyperbolic_zeta(chart, chart.c.ln()),
    }
}

/// Smooth step on [0,1] built from `e^{-1/s}`; returns value and derivative.
pub fn smooth_step(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let psi = |s: f64| (-1.0 / s).exp();
    let dpsi = |s: f64| (-1.0 / s).exp() / (s * s);
    let (a, b) = (psi(u), psi(1.0 - u));
    let (da, db) = (dpsi(u), -dpsi(1.0 - u));
    let den = a + b;
    (a / den, (da * b - a * db) / (den * den))
}

/// Complete hyperbolic density on the chart; see [`MetricDensity::hyperbolic`].
pub fn hyperbolic_density(chart: &ConformalChart, x: Complex64) -> Result<f64> {
    MetricDensity::hyperbolic(*chart).at(x)
}

pub fn grafting_density(chart: &ConformalChart, x: Complex64) -> Result<f64> {
    MetricDensity::grafting(*chart).at(x)
}

/// Perturbed density; `collar = Some(K)` forces the collar branch with an
/// explicit constant.
pub fn perturbed_density(chart: &ConformalChart, x: Complex64, collar: Option<f64>) -> Result<f64> {
    match collar {
        None => MetricDensity::perturbed(*chart).at(x),
        Some(k) => MetricDensity::perturbed_with_collar(*chart, k)?.at(x),
    }
}

/// `(log|t|/π) · arcsin(2π log c / log|t|)` for `0 < |t| < c^{2π}`.
pub fn collar_k(t: Complex64, c: f64) -> Result<f64> {
    check_c(c)?;
    let m = t.norm();
    let limit = c.powf(2.0 * PI);
    if !(m > 0.0 && m <= limit) {
        return Err(LabError::InvalidChart(format!(
            "collar constant needs 0 < |t| < c^(2π) = {limit:e}, got {m:e}"
        )));
    }
    let log_t = m.ln();
    let arg = (2.0 * PI * c.ln() / log_t).min(1.0);
    Ok(log_t / PI * arg.asin())
}

/// Sample of the flat-coordinate curvature `-(log λ)'' / λ²` of a radial
/// density, by a fourth-order central difference.
pub fn radial_curvature_fd(lambda: impl Fn(f64) -> f64, rho: f64) -> f64 {
    let h = 1e-3;
    let f = |r: f64| lambda(r).ln();
    let d2 = (-f(rho + 2.0 * h) + 16.0 * f(rho + h) - 30.0 * f(rho) + 16.0 * f(rho - h)
        - f(rho - 2.0 * h))
        / (12.0 * h * h);
    let l = lambda(rho);
    -d2 / (l * l)
}

/// Curvature `-Δ log λ / λ²` of a density on the x-plane by a fourth-order
/// 2D finite-difference Laplacian with step relative to `|x|`.
pub fn planar_curvature_fd(lambda: impl Fn(Complex64) -> f64, x: Complex64) -> f64 {
    let h = 1e-3 * x.norm();
    let f = |p: Complex64| lambda(p).ln();
    let second = |dir: Complex64| {
        (-f(x + dir * 2.0 * h) + 16.0 * f(x + dir * h) - 30.0 * f(x) + 16.0 * f(x - dir * h)
            - f(x - dir * 2.0 * h))
            / (12.0 * h * h)
    };
    let lap = second(Complex64::new(1.0, 0.0)) + second(Complex64::new(0.0, 1.0));
    let l = lambda(x);
    -lap / (l * l)
}

/// `q = (Σ a_k x^k) dx²` with `-2 ≤ k ≤ truncation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadDiff {
    coeffs: BTreeMap<i32, Complex64>,
    truncation: i32,
}

impl QuadDiff {
    pub fn new(coeffs: impl IntoIterator<Item = (i32, Complex64)>, truncation: i32) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, a) in coeffs {
            if k < -2 {
                return Err(LabError::InvalidDifferential(format!(
                    "degree {k} exceeds pole order 2"
                )));
            }
            if k > truncation {
                return Err(LabError::InvalidDifferential(format!(
                    "degree {k} above truncation degree {truncation}"
                )));
            }
            if !(a.re.is_finite() && a.im.is_finite()) {
                return Err(LabError::InvalidDifferential(format!("non-finite coefficient at degree {k}")));
            }
            *map.entry(k).or_insert(Complex64::new(0.0, 0.0)) += a;
        }
        Ok(QuadDiff {
            coeffs: map,
            truncation,
        })
    }

    pub fn zero() -> Self {
        QuadDiff {
            coeffs: BTreeMap::new(),
            truncation: DEFAULT_TRUNCATION,
        }
    }

    /// `a/x² dx²`.
    pub fn pure_residue(a: Complex64) -> Self {
        QuadDiff {
            coeffs: BTreeMap::from([(-2, a)]),
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn truncation(&self) -> i32 {
        self.truncation
    }

    pub fn coefficient(&self, k: i32) -> Complex64 {
        self.coeffs.get(&k).copied().unwrap_or_default()
    }

    pub fn coefficients(&self) -> impl Iterator<Item = (i32, Complex64)> + '_ {
        self.coeffs.iter().map(|(k, a)| (*k, *a))
    }

    /// Order-(−2) coefficient.
    pub fn residue(&self) -> Complex64 {
        self.coefficient(-2)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|a| a.norm() == 0.0)
    }

    pub fn pole_order(&self) -> i32 {
        self.coeffs
            .iter()
            .find(|(_, a)| a.norm() != 0.0)
            .map(|(k, _)| (-k).max(0))
            .unwrap_or(0)
    }

    /// `f(x) = Σ a_k x^k`.
    pub fn eval(&self, x: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(k, a)| a * x.powi(*k))
            .sum()
    }

    /// Coefficient of `dζ²` in the cylinder coordinate, `f(x) x²`.
    pub fn zeta_coefficient(&self, x: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(k, a)| a * x.powi(k + 2))
            .sum()
    }

    /// `true` when the modulus `|f(x)x²|` depends on `|x|` only.
    pub fn is_radial(&self) -> bool {
        self.coeffs.iter().filter(|(_, a)| a.norm() != 0.0).count() <= 1
    }

    pub fn add(&self, other: &QuadDiff) -> QuadDiff {
        let mut out = self.clone();
        for (k, a) in &other.coeffs {
            *out.coeffs.entry(*k).or_default() += a;
        }
        out.truncation = self.truncation.max(other.truncation);
        out
    }

    pub fn sub(&self, other: &QuadDiff) -> QuadDiff {
        let neg = QuadDiff {
            coeffs: other.coeffs.iter().map(|(k, a)| (*k, -a)).collect(),
            truncation: other.truncation,
        };
        self.add(&neg)
    }

    /// Pullback under the rotation `x ↦ e^{iθ} x`.
    pub fn rotated(&self, theta: f64) -> QuadDiff {
        QuadDiff {
            coeffs: self
                .coeffs
                .iter()
                .map(|(k, a)| (*k, a * Complex64::from_polar(1.0, (k + 2) as f64 * theta)))
                .collect(),
            truncation: self.truncation,
        }
    }
}

/// Laurent coefficients of `q` in the coordinate `w = t/x`, without any
/// pole-order restriction: `a_k x^k dx² = a_k t^{k+2} w^{-k-4} dw²`.
pub fn pushforward_coefficients(q: &QuadDiff, t: Complex64) -> Result<BTreeMap<i32, Complex64>> {
    if t.norm() == 0.0 {
        return Err(LabError::Degenerate("chart change w = t/x needs t ≠ 0".into()));
    }
    Ok(q
        .coeffs
        .iter()
        .map(|(k, a)| (-k - 4, a * t.powi(k + 2)))
        .collect())
}

/// Re-expresses `q` in the opposite node coordinate `w = t/x`. Fails when the
/// result would have a pole of order above 2 at `w = 0`.
pub fn push_chart(q: &QuadDiff, t: Complex64) -> Result<QuadDiff> {
    let pushed = pushforward_coefficients(q, t)?;
    if let Some((k, _)) = pushed.iter().find(|(k, a)| **k < -2 && a.norm() != 0.0) {
        return Err(LabError::PoleOrderExceeded { order: -k });
    }
    Ok(QuadDiff {
        coeffs: pushed,
        truncation: q.truncation,
    })
}

pub fn residue_match(qz: &QuadDiff, qw: &QuadDiff, tol: f64) -> bool {
    (qz.residue() - qw.residue()).norm() <= tol
}

/// `|f(x)|² / λ(x)⁴`.
pub fn q_norm_sq(q: &QuadDiff, density: &MetricDensity, x: Complex64) -> Result<f64> {
    let l = density.at(x)?;
    Ok(q.eval(x).norm_sqr() / l.powi(4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn chart_validation() {
        assert!(ConformalChart::cusp(1.0).is_err());
        assert!(ConformalChart::cusp(0.0).is_err());
        assert!(ConformalChart::annulus(c(0.3, 0.0), 0.5).is_err());
        assert!(ConformalChart::annulus(c(0.0, 0.0), 0.5).is_err());
        let a = ConformalChart::annulus(c(0.01, 0.0), 0.5).unwrap();
        assert!(a.contains(c(0.1, 0.0)));
        assert!(!a.contains(c(0.019, 0.0)));
        assert!(!a.contains(c(0.5, 0.0)));
        let p = ConformalChart::cusp(0.5).unwrap();
        assert!(p.contains(c(1e-30, 0.0)));
        assert!(!p.contains(c(0.0, 0.0)));
    }

    #[test]
    fn cusp_density_at_inverse_e() {
        let chart = ConformalChart::cusp(0.5).unwrap();
        let x = Complex64::from_polar((-1.0f64).exp(), 0.7);
        assert_abs_diff_eq!(hyperbolic_density(&chart, x).unwrap(), 1.0f64.exp(), epsilon = 1e-12);
        assert!(matches!(
            hyperbolic_density(&chart, c(0.6, 0.0)),
            Err(LabError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn annulus_density_has_curvature_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(t, cc) in &[(0.01, 0.5), (1e-4, 0.3), (0.2, 0.9)] {
            let chart = ConformalChart::annulus(c(t, 0.0), cc).unwrap();
            let (lo, hi) = chart.rho_bounds();
            for _ in 0..1000 {
                let rho = lo + (hi - lo) * rng.gen_range(0.05..0.95);
                let x = Complex64::from_polar(rho.exp(), rng.gen_range(0.0..2.0 * PI));
                let k = planar_curvature_fd(|p| hyperbolic_density(&chart, p).unwrap(), x);
                assert!((k + 1.0).abs() < 1e-6, "K = {k} at {x}");
            }
        }
    }

    #[test]
    fn annulus_core_geodesic_location() {
        let t = 1e-3;
        let chart = ConformalChart::annulus(c(t, 0.0), 0.5).unwrap();
        let h = MetricDensity::hyperbolic(chart);
        let core = 0.5 * f64::ln(t);
        assert_abs_diff_eq!(h.dlog_zeta(core), 0.0, epsilon = 1e-12);
        assert!(h.zeta_density(core - 0.1) > h.zeta_density(core));
        assert!(h.zeta_density(core + 0.1) > h.zeta_density(core));
    }

    #[test]
    fn annulus_density_converges_to_cusp_on_compact_sets() {
        let cusp = MetricDensity::hyperbolic(ConformalChart::cusp(0.5).unwrap());
        let mut prev = f64::INFINITY;
        for k in 1..14 {
            let t = 0.25 * 0.5f64.powi(k);
            let h = MetricDensity::hyperbolic(ConformalChart::annulus(c(t, 0.0), 0.5).unwrap());
            let defect = (0..=20)
                .map(|i| -1.3 + 0.02 * i as f64)
                .map(|rho| (h.zeta_density(rho) / cusp.zeta_density(rho) - 1.0).abs())
                .fold(0.0, f64::max);
            assert!(defect < prev);
            prev = defect;
        }
    }

    #[test]
    fn analytic_log_derivatives_match_finite_differences() {
        let charts = [
            ConformalChart::cusp(0.5).unwrap(),
            ConformalChart::annulus(c(1e-3, 0.0), 0.5).unwrap(),
            ConformalChart::annulus(c(1e-6, 1e-6), 0.5).unwrap(),
        ];
        for chart in charts {
            for d in [MetricDensity::hyperbolic(chart), MetricDensity::perturbed(chart), MetricDensity::grafting(chart)] {
                let (lo, hi) = chart.rho_bounds();
                let lo = lo.max(-12.0);
                for i in 1..50 {
                    let rho = lo + (hi - lo) * i as f64 / 50.0;
                    let h = 1e-6;
                    let fd = (d.zeta_density(rho + h).ln() - d.zeta_density(rho - h).ln()) / (2.0 * h);
                    assert!((fd - d.dlog_zeta(rho)).abs() < 1e-6, "{:?} {rho}", d.flavor);
                }
            }
        }
    }

    #[test]
    fn grafting_matches_hyperbolic_on_the_cusp() {
        let chart = ConformalChart::cusp(0.4).unwrap();
        for i in 1..40 {
            let x = Complex64::from_polar(0.4 * i as f64 / 41.0, 0.3 * i as f64);
            assert_eq!(grafting_density(&chart, x).unwrap(), hyperbolic_density(&chart, x).unwrap());
        }
    }

    #[test]
    fn grafting_is_rotationally_invariant_and_comparable() {
        let chart = ConformalChart::annulus(c(1e-3, 2e-3), 0.5).unwrap();
        for i in 0..32 {
            let a = grafting_density(&chart, Complex64::from_polar(0.1, 0.0)).unwrap();
            let b = grafting_density(&chart, Complex64::from_polar(0.1, 0.2 * i as f64)).unwrap();
            assert!((a - b).abs() <= 1e-15 * a);
        }
        assert_abs_diff_eq!(
            grafting_density(&chart, c(0.5 - 1e-12, 0.0)).unwrap(),
            hyperbolic_density(&chart, c(0.5 - 1e-12, 0.0)).unwrap(),
            epsilon = 1e-9
        );
        let (lo, hi) = chart.rho_bounds();
        let ratios: Vec<f64> = (1..100)
            .map(|i| lo + (hi - lo) * i as f64 / 100.0)
            .map(|rho| MetricDensity::grafting(chart).zeta_density(rho) / MetricDensity::hyperbolic(chart).zeta_density(rho))
            .collect();
        // the flat cylinder carries the collar's boundary value, the hyperbolic maximum
        assert!(ratios.iter().all(|r| r.is_finite() && *r >= 1.0 - 1e-12 && *r < 10.0));
    }

    #[test]
    fn perturbed_cusp_branches() {
        let cc: f64 = 0.5;
        let chart = ConformalChart::cusp(cc).unwrap();
        let m = MetricDensity::perturbed(chart);
        let rho = 2.0 * cc.ln() - 0.3;
        let x = Complex64::from_polar(rho.exp(), 1.0);
        let expected = (2.0 * cc.ln()).recip().abs() / x.norm();
        assert_abs_diff_eq!(m.at(x).unwrap(), expected, epsilon = 1e-12 * expected);
        let rho = cc.ln() + 0.05;
        let x = Complex64::from_polar(rho.exp(), 1.0);
        assert!(!chart.contains(x));
        let rho = cc.ln() - 1e-9;
        let x = Complex64::from_polar(rho.exp(), 0.0);
        assert_eq!(m.at(x).unwrap(), grafting_density(&chart, x).unwrap());
    }

    fn max_jump(m: &MetricDensity, at: f64) -> f64 {
        (1..=1000)
            .map(|i| {
                let e = 1e-13 * i as f64;
                (m.zeta_density(at + e) - m.zeta_density(at - e)).abs()
            })
            .fold(0.0, f64::max)
            / 2e-10
    }

    #[test]
    fn perturbed_density_is_continuous_across_bands() {
        let cc: f64 = 0.5;
        let m = MetricDensity::perturbed(ConformalChart::cusp(cc).unwrap());
        for b in [2.0 * cc.ln(), cc.ln() - 1e-10] {
            assert!(max_jump(&m, b) < 10.0);
        }
        let chart = ConformalChart::annulus(c(1e-5, 0.0), cc).unwrap();
        let m = MetricDensity::perturbed(chart);
        let k = m.collar_constant().unwrap();
        let log_t = 1e-5f64.ln();
        for b in [k, k - cc.ln(), log_t - k, log_t - k + cc.ln()] {
            assert!(max_jump(&m, b) < 10.0, "jump at {b}");
        }
    }

    #[test]
    fn perturbed_collar_requests() {
        let cc: f64 = 0.5;
        let big = ConformalChart::annulus(c(0.1, 0.0), cc).unwrap();
        assert!(MetricDensity::perturbed(big).collar_constant().is_none());
        assert!(perturbed_density(&big, c(0.3, 0.0), Some(-1.0)).is_err());
        let small = ConformalChart::annulus(c(1e-4, 0.0), cc).unwrap();
        assert!(perturbed_density(&small, c(0.1, 0.0), Some(-2.0)).is_ok());
        // flat band [log|t| - K, K] empty
        assert!(perturbed_density(&small, c(0.1, 0.0), Some(-6.0)).is_err());
    }

    #[test]
    fn collar_constant_values() {
        let cc: f64 = 0.5;
        let edge = cc.powf(2.0 * PI);
        let k = collar_k(c(edge, 0.0), cc).unwrap();
        assert_abs_diff_eq!(k, PI * cc.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(k, edge.ln() / 2.0, epsilon = 1e-12);
        assert!(collar_k(c(edge * 1.01, 0.0), cc).is_err());
        assert!(collar_k(c(0.0, 0.0), cc).is_err());
        let mut prev = f64::NEG_INFINITY;
        for e in 1..60 {
            let t = edge * 0.5f64.powi(e);
            let k = collar_k(c(t, 0.0), cc).unwrap();
            assert!(k < 0.0 && k <= 2.0 * cc.ln() + 1e-15);
            assert!(k > prev);
            prev = k;
        }
        assert!((prev - 2.0 * cc.ln()).abs() < 5e-3);
    }

    #[test]
    fn quad_diff_rejects_high_poles_and_degrees() {
        assert!(QuadDiff::new([(-3, c(1.0, 0.0))], 8).is_err());
        assert!(QuadDiff::new([(9, c(1.0, 0.0))], 8).is_err());
        let q = QuadDiff::new([(-2, c(1.0, 0.0)), (0, c(2.0, 0.0))], 8).unwrap();
        assert_eq!(q.pole_order(), 2);
        assert!(ConformalChart::cusp(0.5).unwrap().admits(&q).is_err());
        assert!(ConformalChart::annulus(c(0.01, 0.0), 0.5).unwrap().admits(&q).is_ok());
    }

    #[test]
    fn push_chart_monomials() {
        let t = c(0.02, 0.01);
        let a = c(1.0, -0.5);
        let q = QuadDiff::pure_residue(a);
        let p = push_chart(&q, t).unwrap();
        assert_eq!(p.residue(), a);
        assert_eq!(p.pole_order(), 2);
        // b/x dx² → b t w⁻³ dw²: flagged
        let b = c(0.3, 0.2);
        let q = QuadDiff::new([(-1, b)], 8).unwrap();
        assert!(matches!(push_chart(&q, t), Err(LabError::PoleOrderExceeded { order: 3 })));
        let raw = pushforward_coefficients(&q, t).unwrap();
        assert_eq!(raw.len(), 1);
        assert!((raw[&-3] - b * t).norm() < 1e-16);
        // constant → t² w⁻⁴ dw²
        let q = QuadDiff::new([(0, c(1.0, 0.0))], 8).unwrap();
        assert!(matches!(push_chart(&q, t), Err(LabError::PoleOrderExceeded { order: 4 })));
        assert!((pushforward_coefficients(&q, t).unwrap()[&-4] - t * t).norm() < 1e-16);
        assert!(push_chart(&q, c(0.0, 0.0)).is_err());
    }

    #[test]
    fn pushforward_agrees_with_pointwise_expansion() {
        // q(x) dx² evaluated at x = t/w times (dx/dw)² must equal the pushed series at w.
        let t = c(0.03, -0.02);
        let q = QuadDiff::new([(-2, c(1.0, 0.3)), (-1, c(0.2, 0.0)), (0, c(-0.5, 0.1)), (3, c(0.7, 0.7))], 8).unwrap();
        let pushed = pushforward_coefficients(&q, t).unwrap();
        for w in [c(0.1, 0.05), c(-0.2, 0.3), c(0.4, -0.1)] {
            let x = t / w;
            let dxdw = -t / (w * w);
            let direct = q.eval(x) * dxdw * dxdw;
            let series: Complex64 = pushed.iter().map(|(k, a)| a * w.powi(*k)).sum();
            assert!((direct - series).norm() < 1e-12 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn residue_matching() {
        let a = QuadDiff::pure_residue(c(1.0, 2.0));
        assert!(residue_match(&a, &a.clone(), 1e-12));
        let b = QuadDiff::pure_residue(c(1.0 + 1e-3, 0.0));
        assert!(!residue_match(&QuadDiff::pure_residue(c(1.0, 0.0)), &b, 1e-6));
    }

    #[test]
    fn q_norm_examples() {
        let chart = ConformalChart::cusp(0.5).unwrap();
        let h = MetricDensity::hyperbolic(chart);
        let x = Complex64::from_polar((-1.0f64).exp(), 2.0);
        assert_eq!(q_norm_sq(&QuadDiff::zero(), &h, x).unwrap(), 0.0);
        let a = c(0.6, -0.8) * 3.0;
        let n = q_norm_sq(&QuadDiff::pure_residue(a), &h, x).unwrap();
        assert_abs_diff_eq!(n.sqrt(), a.norm(), epsilon = 1e-12);
        // ‖q‖_h = |a| (log|x|)²
        let x = c(0.05, 0.0);
        let n = q_norm_sq(&QuadDiff::pure_residue(a), &h, x).unwrap();
        assert_abs_diff_eq!(n.sqrt(), a.norm() * 0.05f64.ln().powi(2), epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn pure_residue_survives_push_chart_bitwise(
            are in -10.0f64..10.0, aim in -10.0f64..10.0,
            tr in 1e-8f64..0.2, targ in 0.0f64..std::f64::consts::TAU,
        ) {
            let a = Complex64::new(are, aim);
            let q = QuadDiff::pure_residue(a);
            let p = push_chart(&q, Complex64::from_polar(tr, targ)).unwrap();
            prop_assert_eq!(p.residue().re.to_bits(), a.re.to_bits());
            prop_assert_eq!(p.residue().im.to_bits(), a.im.to_bits());
            prop_assert!(residue_match(&q, &p, 0.0));
        }

        #[test]
        fn q_norm_is_rotation_covariant(
            coeffs in prop::collection::vec((-2i32..4, -2.0f64..2.0, -2.0f64..2.0), 1..5),
            theta in 0.0f64..std::f64::consts::TAU, r in 0.05f64..0.45, arg in 0.0f64..std::f64::consts::TAU,
        ) {
            let q = QuadDiff::new(coeffs.iter().map(|(k, re, im)| (*k, Complex64::new(*re, *im))), 8).unwrap();
            let chart = ConformalChart::annulus(Complex64::new(1e-3, 0.0), 0.5).unwrap();
            let h = MetricDensity::hyperbolic(chart);
            let x = Complex64::from_polar(r, arg);
            let lhs = q_norm_sq(&q.rotated(theta), &h, x).unwrap();
            let rhs = q_norm_sq(&q, &h, x * Complex64::from_polar(1.0, theta)).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
        }

        #[test]
        fn density_scaling_divides_norm_by_sixteen(re in -3.0f64..3.0, im in -3.0f64..3.0, r in 0.05f64..0.45) {
            let q = QuadDiff::new([(-2, Complex64::new(re, im)), (1, Complex64::new(im, re))], 8).unwrap();
            let chart = ConformalChart::annulus(Complex64::new(1e-3, 0.0), 0.5).unwrap();
            let h = MetricDensity::hyperbolic(chart);
            let x = Complex64::new(r, 0.0);
            let l = h.at(x).unwrap();
            let n1 = q.eval(x).norm_sqr() / l.powi(4);
            let n2 = q.eval(x).norm_sqr() / (2.0 * l).powi(4);
            prop_assert!((n1 / 16.0 - n2).abs() <= 1e-12 * n1.max(1e-300));
            prop_assert!((q_norm_sq(&q, &h, x).unwrap() - n1).abs() <= 1e-12 * n1.max(1.0));
        }
    }
}
