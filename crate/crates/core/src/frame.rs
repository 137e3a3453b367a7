//! Moving frames of the maximal surface and their holonomy.
//!
//! Work happens in the strip coordinate `ζ = ρ + iθ`, where the deck
//! transformation of the annulus is `ζ ↦ ζ + 2πi`. The frame `F` has columns
//! `(v₁, v₂, N, σ)` and satisfies `F⁻¹ dF = U dζ + V dζ̄` with
//! `I = 2e^{2φ}|dζ|²`, `φ = v + log λ_ζ`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fs;
use std::path::Path;

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ads::{form_matrix, is_isometry, psl2_factors, Isometry22, IsometryReport, Psl2Pair};
use crate::domains::{MetricDensity, QuadDiff};
use crate::error::{LabError, Result};
use crate::gauss::ConformalFactorField;
use crate::grid::Grid;

type CMat = Matrix4<Complex64>;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Natural cubic splines in ρ, trigonometric interpolation in θ.
#[derive(Debug, Clone)]
pub struct Interpolant {
    grid: Grid,
    values: Vec<f64>,
    /// Spline second derivatives in ρ, same layout as `values`.
    second: Vec<f64>,
}

impl Interpolant {
    pub fn new(grid: Grid, v: &[f64]) -> Result<Self> {
        grid.check_field(v)?;
        let (n, nt, h) = (grid.n_rho, grid.n_theta, grid.drho);
        let mut second = vec![0.0; v.len()];
        // Thomas algorithm for M_{i-1} + 4M_i + M_{i+1} = 6 δ²y_i / h², M_0 = M_{n-1} = 0
        for j in 0..nt {
            let y = |i: usize| v[i * nt + j];
            let m = n - 2;
            let mut c = vec![0.0; m];
            let mut d = vec![0.0; m];
            for k in 0..m {
                let i = k + 1;
                let rhs = 6.0 * (y(i + 1) - 2.0 * y(i) + y(i - 1)) / (h * h);
                let denom = 4.0 - if k > 0 { c[k - 1] } else { 0.0 };
                c[k] = 1.0 / denom;
                d[k] = (rhs - if k > 0 { d[k - 1] } else { 0.0 }) / denom;
            }
            for k in (0..m).rev() {
                let next = if k + 1 < m { second[(k + 2) * nt + j] } else { 0.0 };
                second[(k + 1) * nt + j] = d[k] - c[k] * next;
            }
        }
        Ok(Interpolant {
            grid,
            values: v.to_vec(),
            second,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Admissible ρ-range: one spacing away from the Dirichlet rows.
    pub fn rho_range(&self) -> (f64, f64) {
        (self.grid.rho(1), self.grid.rho(self.grid.n_rho - 2))
    }

    /// `(v, ∂_ρ v, ∂_θ v)` at `(ρ, θ)`.
    pub fn eval(&self, rho: f64, theta: f64) -> Result<(f64, f64, f64)> {
        let (lo, hi) = self.rho_range();
        if !(rho >= lo - 1e-12 && rho <= hi + 1e-12) {
            return Err(LabError::StencilOutOfRange { rho, theta });
        }
        let g = &self.grid;
        let (nt, h) = (g.n_theta, g.drho);
        let x = ((rho - g.rho_min()) / h).clamp(0.0, (g.n_rho - 1) as f64);
        let k = (x.floor() as usize).min(g.n_rho - 2);
        let t = x - k as f64;
        let s = 1.0 - t;
        let mut col = vec![0.0; nt];
        let mut dcol = vec![0.0; nt];
        for j in 0..nt {
            let (y0, y1) = (self.values[k * nt + j], self.values[(k + 1) * nt + j]);
            let (m0, m1) = (self.second[k * nt + j], self.second[(k + 1) * nt + j]);
            col[j] = s * y0 + t * y1 + h * h / 6.0 * ((s * s * s - s) * m0 + (t * t * t - t) * m1);
            dcol[j] = (y1 - y0) / h + h / 6.0 * (-(3.0 * s * s - 1.0) * m0 + (3.0 * t * t - 1.0) * m1);
        }
        let (val, dth) = trig_interp(&col, theta);
        let (drho, _) = trig_interp(&dcol, theta);
        Ok((val, drho, dth))
    }
}

/// Trigonometric interpolant of equispaced periodic samples and its
/// θ-derivative; the Nyquist mode enters as a cosine only.
fn trig_interp(s: &[f64], theta: f64) -> (f64, f64) {
    let n = s.len();
    if s.iter().all(|x| *x == s[0]) {
        return (s[0], 0.0);
    }
    let nf = n as f64;
    let mut val = s.iter().sum::<f64>() / nf;
    let mut der = 0.0;
    let half = n / 2;
    for k in 1..=half {
        let kf = k as f64;
        let (mut a, mut b) = (0.0, 0.0);
        for (j, sj) in s.iter().enumerate() {
            let ang = kf * 2.0 * PI * j as f64 / nf;
            a += sj * ang.cos();
            b += sj * ang.sin();
        }
        let (a, b) = (2.0 * a / nf, 2.0 * b / nf);
        let (c, si) = ((kf * theta).cos(), (kf * theta).sin());
        if n.is_multiple_of(2) && k == half {
            val += 0.5 * a * c;
            der -= 0.5 * a * kf * si;
        } else {
            val += a * c + b * si;
            der += kf * (b * c - a * si);
        }
    }
    (val, der)
}

/// The two matrices of the frame equation at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionCoeffs {
    pub u: CMat,
    pub v: CMat,
}

/// Builds `U` and `V` from `φ`, `φ_ζ` and the `dζ²`-coefficient `Q` of `q`.
pub fn connection_from(phi: f64, phi_z: Complex64, qz: Complex64) -> ConnectionCoeffs {
    let ep = Complex64::new(phi.exp(), 0.0);
    let qe = qz * (-phi).exp();
    let phi_zb = phi_z.conj();
    let mut u = CMat::zeros();
    u[(0, 0)] = phi_z;
    u[(0, 3)] = ep;
    u[(1, 1)] = -phi_z;
    u[(1, 2)] = qe;
    u[(2, 0)] = qe;
    u[(3, 1)] = ep;
    let mut v = CMat::zeros();
    v[(0, 0)] = -phi_zb;
    v[(0, 2)] = qe.conj();
    v[(1, 1)] = phi_zb;
    v[(1, 3)] = ep;
    v[(2, 1)] = qe.conj();
    v[(3, 0)] = ep;
    ConnectionCoeffs { u, v }
}

/// Everything needed to evaluate the frame equation on a chart.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub interp: Interpolant,
    pub h: MetricDensity,
    pub q: QuadDiff,
}

impl FrameData {
    pub fn new(field: &ConformalFactorField, h: &MetricDensity) -> Result<Self> {
        if field.chart != h.chart {
            return Err(LabError::GridMismatch("field and density live on different charts".into()));
        }
        Ok(FrameData {
            interp: Interpolant::new(field.grid, &field.v)?,
            h: *h,
            q: field.q.clone(),
        })
    }

    /// `(φ, φ_ζ)` at a strip point.
    pub fn phi(&self, zeta: Complex64) -> Result<(f64, Complex64)> {
        let (v, v_rho, v_theta) = self.interp.eval(zeta.re, zeta.im)?;
        let phi = v + self.h.zeta_density(zeta.re).ln();
        let phi_rho = v_rho + self.h.dlog_zeta(zeta.re);
        Ok((phi, Complex64::new(phi_rho, -v_theta) * 0.5))
    }
}

/// `U`, `V` at the strip point `ζ`.
pub fn connection_at(data: &FrameData, zeta: Complex64) -> Result<ConnectionCoeffs> {
    let (phi, phi_z) = data.phi(zeta)?;
    Ok(connection_from(phi, phi_z, data.q.zeta_coefficient(zeta.exp())))
}

/// A frame and the strip point it sits at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub f: CMat,
    pub zeta: Complex64,
}

impl FrameState {
    /// Columns `(e₁ − ie₂)/√2, (e₁ + ie₂)/√2, e₃, e₄`.
    pub fn standard(zeta: Complex64) -> Self {
        FrameState {
            f: standard_frame(),
            zeta,
        }
    }

    pub fn identity(zeta: Complex64) -> Self {
        FrameState {
            f: CMat::identity(),
            zeta,
        }
    }

    /// Hermitian Gram matrix `⟨col_a, col_b⟩`.
    pub fn gram(&self) -> CMat {
        gram(&self.f)
    }
}

pub fn standard_frame() -> CMat {
    let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let is = Complex64::new(0.0, FRAC_1_SQRT_2);
    let mut p = CMat::zeros();
    p[(0, 0)] = s;
    p[(1, 0)] = -is;
    p[(0, 1)] = s;
    p[(1, 1)] = is;
    p[(2, 2)] = ONE;
    p[(3, 3)] = ONE;
    p
}

/// Reference Gram matrix of the standard frame.
pub fn reference_gram() -> CMat {
    gram(&standard_frame())
}

fn gram(f: &CMat) -> CMat {
    let j = form_matrix().map(|x| Complex64::new(x, 0.0));
    f.transpose() * j * f.map(|z| z.conj())
}

fn cmax(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Step-size control of the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    /// Local error allowed per unit path length.
    pub tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            tol: 1e-10,
            initial_step: 0.05,
            max_step: 0.25,
            min_step: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationReport {
    pub state: FrameState,
    pub length: f64,
    pub steps: usize,
    pub rejected: usize,
    /// `max |Gram(F) − Gram(F₀)|` along the path.
    pub gram_drift: f64,
}

/// Integrates `dF/ds = F (U ζ′ + V ζ̄′)` along the polyline through
/// `path`, starting from `init` at `path[0]`. RK4 with step doubling and
/// local extrapolation.
pub fn integrate_frame(
    data: &FrameData,
    path: &[Complex64],
    init: &FrameState,
    ctrl: &StepControl,
) -> Result<IntegrationReport> {
    let g0 = init.gram();
    let mut report = IntegrationReport {
        state: *init,
        length: 0.0,
        steps: 0,
        rejected: 0,
        gram_drift: 0.0,
    };
    let mut f = init.f;
    let mut h = ctrl.initial_step;
    for seg in path.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = (b - a).norm();
        if len == 0.0 {
            continue;
        }
        let dir = (b - a) / len;
        let rhs = |s: f64, f: &CMat| -> Result<CMat> {
            let c = connection_at(data, a + dir * s)?;
            Ok(f * (c.u * dir + c.v * dir.conj()))
        };
        let rk4 = |s: f64, f: &CMat, h: f64| -> Result<CMat> {
            let k1 = rhs(s, f)?;
            let k2 = rhs(s + h / 2.0, &(f + k1 * Complex64::new(h / 2.0, 0.0)))?;
            let k3 = rhs(s + h / 2.0, &(f + k2 * Complex64::new(h / 2.0, 0.0)))?;
            let k4 = rhs(s + h, &(f + k3 * Complex64::new(h, 0.0)))?;
            Ok(f + (k1 + k2 * Complex64::from(2.0) + k3 * Complex64::from(2.0) + k4) * Complex64::new(h / 6.0, 0.0))
        };
        let mut s = 0.0;
        while s < len {
            let step = h.min(len - s).min(ctrl.max_step);
            let last = step >= len - s;
            let full = rk4(s, &f, step)?;
            let halfway = rk4(s, &f, step / 2.0)?;
            let two = rk4(s + step / 2.0, &halfway, step / 2.0)?;
            let err = cmax(&(two - full)) / 15.0;
            let allowed = ctrl.tol * step * cmax(&f).max(1.0);
            if err <= allowed || step <= ctrl.min_step {
                if err > allowed {
                    return Err(LabError::StepUnderflow { s: report.length + s });
                }
                f = two + (two - full) / Complex64::new(15.0, 0.0);
                s = if last { len } else { s + step };
                report.steps += 1;
                report.gram_drift = report.gram_drift.max(cmax(&(gram(&f) - g0)));
            } else {
                report.rejected += 1;
            }
            let factor = if err == 0.0 {
                4.0
            } else {
                (0.9 * (allowed / err).powf(0.2)).clamp(0.1, 4.0)
            };
            h = (step * factor).max(ctrl.min_step);
        }
        report.length += len;
    }
    report.state = FrameState {
        f,
        zeta: *path.last().unwrap_or(&init.zeta),
    };
    Ok(report)
}

/// `diag(γ′/|γ′|, conj(γ′)/|γ′|, 1, 1)`.
pub fn deck_diag(gamma_prime: Complex64) -> Result<CMat> {
    let r = gamma_prime.norm();
    if !(r > 0.0 && r.is_finite()) {
        return Err(LabError::Degenerate("deck derivative must be nonzero".into()));
    }
    let u = gamma_prime / r;
    Ok(CMat::from_diagonal(&nalgebra::Vector4::new(u, u.conj(), ONE, ONE)))
}

pub const DEFAULT_REALNESS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolonomyResult {
    pub rho: Isometry22,
    pub h: CMat,
    pub d: CMat,
    pub base: Complex64,
    pub periods: u32,
    pub realness_defect: f64,
    pub group: IsometryReport,
    pub loop_length: f64,
    pub gram_drift: f64,
    pub steps: usize,
}

impl HolonomyResult {
    pub fn psl2(&self, tol: f64) -> Result<Psl2Pair> {
        psl2_factors(&self.rho, tol)
    }

    pub fn trace(&self) -> f64 {
        self.rho.matrix().trace()
    }
}

/// Holonomy of the loop `θ ↦ θ + 2π·periods` at the strip point `base`, with
/// the standard frame at the base point: `ρ = P·H·D·P⁻¹`.
pub fn holonomy(
    data: &FrameData,
    base: Complex64,
    periods: u32,
    ctrl: &StepControl,
    realness_tol: f64,
) -> Result<HolonomyResult> {
    let end = base + Complex64::new(0.0, 2.0 * PI * periods as f64);
    let report = integrate_frame(data, &[base, end], &FrameState::identity(base), ctrl)?;
    let h = report.state.f;
    // strip deck map ζ ↦ ζ + 2πi has γ′ = 1
    let d = deck_diag(ONE)?;
    let p = standard_frame();
    let p_inv = p.try_inverse().expect("standard frame is invertible");
    let rho_c = p * h * d * p_inv;
    let realness_defect = rho_c.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if realness_defect > realness_tol {
        return Err(LabError::RealnessDefect {
            defect: realness_defect,
            tol: realness_tol,
        });
    }
    let m = rho_c.map(|z| z.re);
    let group = is_isometry(&m, f64::INFINITY);
    Ok(HolonomyResult {
        rho: Isometry22::from_matrix_unchecked(m),
        h,
        d,
        base,
        periods,
        realness_defect,
        group,
        loop_length: report.length,
        gram_drift: report.gram_drift,
        steps: report.steps,
    })
}

/// Persisted holonomy record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolonomyRecord {
    pub schema_version: u32,
    pub loop_base: [f64; 2],
    pub periods: u32,
    pub rho: [[f64; 4]; 4],
    pub trace: f64,
    pub psl2_traces: Option<[f64; 2]>,
    pub realness_defect: f64,
    pub form_defect: f64,
    pub det_defect: f64,
    pub loop_length: f64,
    pub gram_drift: f64,
    pub steps: usize,
    pub config_hash: Option<String>,
}

pub const HOLONOMY_SCHEMA_VERSION: u32 = 1;

impl HolonomyRecord {
    pub fn new(r: &HolonomyResult, config_hash: Option<&str>) -> Self {
        let m = r.rho.matrix();
        let mut rho = [[0.0; 4]; 4];
        for (i, row) in rho.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = m[(i, j)];
            }
        }
        HolonomyRecord {
            schema_version: HOLONOMY_SCHEMA_VERSION,
            loop_base: [r.base.re, r.base.im],
            periods: r.periods,
            rho,
            trace: r.trace(),
            psl2_traces: r.psl2(1e-6).ok().map(|p| {
                let (a, b) = p.traces();
                [a, b]
            }),
            realness_defect: r.realness_defect,
            form_defect: r.group.form_defect,
            det_defect: r.group.det_defect,
            loop_length: r.loop_length,
            gram_drift: r.gram_drift,
            steps: r.steps,
            config_hash: config_hash.map(str::to_owned),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        fs::write(path, text + "\n").map_err(|e| LabError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| LabError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Length of the closed geodesic of an annulus density: `2π min λ_ζ`,
/// located by golden-section search.
pub fn core_geodesic_length(h: &MetricDensity) -> Option<f64> {
    let (lo, hi) = h.chart.rho_bounds();
    if !lo.is_finite() {
        return None;
    }
    let f = |r: f64| h.zeta_density(r);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo + 1e-9 * (hi - lo), hi - 1e-9 * (hi - lo));
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    Some(2.0 * PI * f(0.5 * (a + b)))
}

/// Largest entry of `ρ(γᵏ) − ρ(γ)ᵏ`.
pub fn homomorphism_defect(one: &HolonomyResult, power: &HolonomyResult) -> f64 {
    (power.rho.matrix() - matrix_power(one, power)).amax()
}

/// [`homomorphism_defect`] divided by the largest entry of `ρ(γ)ᵏ`.
pub fn relative_homomorphism_defect(one: &HolonomyResult, power: &HolonomyResult) -> f64 {
    let m = matrix_power(one, power);
    (power.rho.matrix() - m).amax() / m.amax().max(1.0)
}

fn matrix_power(one: &HolonomyResult, power: &HolonomyResult) -> Matrix4<f64> {
    let k = power.periods / one.periods.max(1);
    let mut m = Matrix4::identity();
    for _ in 0..k {
        m *= one.rho.matrix();
    }
    m
}

/// Closed counter-clockwise rectangle in the strip.
pub fn rectangle(center: Complex64, half_width: f64, half_height: f64) -> Vec<Complex64> {
    let c = |sx: f64, sy: f64| center + Complex64::new(sx * half_width, sy * half_height);
    vec![c(-1.0, -1.0), c(1.0, -1.0), c(1.0, 1.0), c(-1.0, 1.0), c(-1.0, -1.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ads::translation_length;
    use crate::domains::ConformalChart;
    use crate::gauss::{solve_2d, BoundaryCondition, DEFAULT_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fuchsian(t: f64) -> (FrameData, MetricDensity) {
        let h = MetricDensity::hyperbolic(ConformalChart::annulus(c(t, 0.0), 0.5).unwrap());
        let g = Grid::for_chart(&h.chart, 64, 16, -8.0).unwrap();
        let f = solve_2d(&h, &QuadDiff::zero(), &g, BoundaryCondition::Balance, DEFAULT_TOL).unwrap();
        (FrameData::new(&f, &h).unwrap(), h)
    }

    fn with_residue(a: Complex64) -> FrameData {
        let h = MetricDensity::hyperbolic(ConformalChart::cusp(0.5).unwrap());
        let g = Grid::new(-3.0, -0.8, 160, 32).unwrap();
        let q = QuadDiff::new([(-2, a), (-1, c(0.02, 0.01))], 8).unwrap();
        let f = solve_2d(&h, &q, &g, BoundaryCondition::Balance, DEFAULT_TOL).unwrap();
        FrameData::new(&f, &h).unwrap()
    }

    #[test]
    fn interpolant_reproduces_smooth_fields() {
        let g = Grid::new(-2.0, -0.5, 121, 16).unwrap();
        let f = |r: f64, t: f64| (1.3 * r).sin() + 0.4 * (2.0 * t + 0.3).cos() * r;
        let v: Vec<f64> = (0..g.len()).map(|k| f(g.rho(k / 16), g.theta(k % 16))).collect();
        let it = Interpolant::new(g, &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (r, t) = (rng.gen_range(-1.9..-0.6), rng.gen_range(0.0..2.0 * PI));
            let (val, dr, dt) = it.eval(r, t).unwrap();
            assert!((val - f(r, t)).abs() < 1e-7);
            assert!((dr - (1.3 * (1.3 * r).cos() + 0.4 * (2.0 * t + 0.3).cos())).abs() < 1e-5);
            assert!((dt + 0.8 * (2.0 * t + 0.3).sin() * r).abs() < 1e-7);
        }
        assert!(matches!(it.eval(-2.0, 0.0), Err(LabError::StencilOutOfRange { .. })));
    }

    #[test]
    fn fuchsian_connection_has_only_exponential_entries() {
        let cc = connection_from(0.3, Complex64::default(), Complex64::default());
        let e = 0.3f64.exp();
        for (i, j) in [(0, 3), (3, 1)] {
            assert_eq!(cc.u[(i, j)], c(e, 0.0));
        }
        for (i, j) in [(1, 3), (3, 0)] {
            assert_eq!(cc.v[(i, j)], c(e, 0.0));
        }
        let nonzero = |m: &CMat| m.iter().filter(|z| z.norm() != 0.0).count();
        assert_eq!(nonzero(&cc.u), 2);
        assert_eq!(nonzero(&cc.v), 2);
    }

    /// Entry list transcribed independently of `connection_from`.
    fn connection_by_entries(phi: f64, pz: Complex64, q: Complex64) -> (CMat, CMat) {
        let e = Complex64::from(phi.exp());
        let qe = q / phi.exp();
        let u_entries = [(0, 0, pz), (0, 3, e), (1, 1, -pz), (1, 2, qe), (2, 0, qe), (3, 1, e)];
        let v_entries = [(0, 0, -pz.conj()), (0, 2, qe.conj()), (1, 1, pz.conj()), (1, 3, e), (2, 1, qe.conj()), (3, 0, e)];
        let build = |es: &[(usize, usize, Complex64)]| {
            let mut m = CMat::zeros();
            for (i, j, z) in es {
                m[(*i, *j)] = *z;
            }
            m
        };
        (build(&u_entries), build(&v_entries))
    }

    #[test]
    fn connection_matches_second_implementation_and_is_trace_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let phi = rng.gen_range(-2.0..2.0);
            let pz = c(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let q = c(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let cc = connection_from(phi, pz, q);
            let (u, v) = connection_by_entries(phi, pz, q);
            assert!(cmax(&(cc.u - u)) < 1e-14 && cmax(&(cc.v - v)) < 1e-14);
            assert!(cc.u.trace().norm() < 1e-14 && cc.v.trace().norm() < 1e-14);
            // P U P⁻¹ and P V P⁻¹ are complex conjugates, so the holonomy is real
            let p = standard_frame();
            let pi = p.try_inverse().unwrap();
            let a = p * cc.u * pi;
            let b = p * cc.v * pi;
            assert!(cmax(&(a - b.map(|z| z.conj()))) < 1e-13);
        }
    }

    #[test]
    fn standard_frame_gram_is_the_form() {
        let g = reference_gram();
        let j = form_matrix().map(Complex64::from);
        assert!(cmax(&(g - j)) < 1e-15);
    }

    #[test]
    fn zero_length_path_is_identity() {
        let (data, _) = fuchsian(1e-3);
        let z = c(-3.0, 0.4);
        let init = FrameState::standard(z);
        let r = integrate_frame(&data, &[z, z], &init, &StepControl::default()).unwrap();
        assert_eq!(r.state.f, init.f);
        assert_eq!(r.steps, 0);
    }

    #[test]
    fn deck_diag_examples() {
        assert_eq!(deck_diag(ONE).unwrap(), CMat::identity());
        let d = deck_diag(c(0.0, 1.0)).unwrap();
        assert_eq!(d[(0, 0)], c(0.0, 1.0));
        assert_eq!(d[(1, 1)], c(0.0, -1.0));
        assert_eq!(deck_diag(c(0.0, 3.0)).unwrap(), d);
        assert!(deck_diag(Complex64::default()).is_err());
    }

    #[test]
    fn fuchsian_holonomy_traces() {
        for t in [1e-2, 1e-3] {
            let (data, h) = fuchsian(t);
            let ell = core_geodesic_length(&h).unwrap();
            assert!((ell - 2.0 * PI * PI / -f64::ln(t)).abs() < 1e-9);
            let hol = holonomy(&data, c(-2.0, 0.0), 1, &StepControl::default(), DEFAULT_REALNESS_TOL).unwrap();
            assert!(hol.group.form_defect < 1e-8 && hol.group.det_defect < 1e-8);
            let p = hol.psl2(1e-6).unwrap();
            let (ta, tb) = p.traces();
            let expected = 2.0 * (ell / 2.0).cosh();
            assert!((ta.abs() - expected).abs() < 1e-6, "{ta} vs {expected}");
            assert!((tb.abs() - expected).abs() < 1e-6);
            assert!((translation_length(ta) - ell).abs() < 1e-5);
        }
    }

    #[test]
    fn holonomy_is_a_homomorphism_and_conjugation_invariant() {
        let data = with_residue(c(0.3, 0.1));
        let ctrl = StepControl::default();
        let one = holonomy(&data, c(-1.5, 0.0), 1, &ctrl, DEFAULT_REALNESS_TOL).unwrap();
        for k in 2..=4 {
            let pk = holonomy(&data, c(-1.5, 0.0), k, &ctrl, DEFAULT_REALNESS_TOL).unwrap();
            let d = relative_homomorphism_defect(&one, &pk);
            assert!(d < 1e-10, "k = {k}: {d:e}");
        }
        let moved = holonomy(&data, c(-1.5, 1.1), 1, &ctrl, DEFAULT_REALNESS_TOL).unwrap();
        assert!((moved.trace() - one.trace()).abs() < 1e-8);
        let (a, b) = one.psl2(1e-6).unwrap().traces();
        let (a2, b2) = moved.psl2(1e-6).unwrap().traces();
        assert!((a - a2).abs() < 1e-8 && (b - b2).abs() < 1e-8);
        assert!(one.group.form_defect < 1e-8 && one.group.det_defect < 1e-8);
    }

    #[test]
    fn small_holonomy_powers_match_absolutely() {
        let (data, _) = fuchsian(1e-8);
        let ctrl = StepControl::default();
        let one = holonomy(&data, c(-9.0, 0.0), 1, &ctrl, DEFAULT_REALNESS_TOL).unwrap();
        for k in 2..=4 {
            let pk = holonomy(&data, c(-9.0, 0.0), k, &ctrl, DEFAULT_REALNESS_TOL).unwrap();
            assert!(homomorphism_defect(&one, &pk) < 1e-6, "k = {k}");
        }
    }

    #[test]
    fn contractible_loops_are_flat() {
        let data = with_residue(c(0.3, 0.1));
        for k in 1..=3 {
            let path = rectangle(c(-1.7, 1.0), 0.1 * k as f64, 0.3 * k as f64);
            let r = integrate_frame(&data, &path, &FrameState::identity(path[0]), &StepControl::default()).unwrap();
            let e = cmax(&(r.state.f - CMat::identity()));
            assert!(e < 1e-5, "loop {k}: {e}");
            assert!(r.gram_drift < 1e-8 * r.length);
        }
    }

    #[test]
    fn records_round_trip() {
        let (data, _) = fuchsian(1e-2);
        let hol = holonomy(&data, c(-2.0, 0.0), 1, &StepControl::default(), DEFAULT_REALNESS_TOL).unwrap();
        let rec = HolonomyRecord::new(&hol, Some("h"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hol.json");
        rec.write(&p).unwrap();
        assert_eq!(HolonomyRecord::read(&p).unwrap(), rec);
    }
}
