//! The Gauss equation of a maximal surface written for the conformal factor
//! `v` of `I = 2e^{2v} h`:
//!
//! `(1/2) Δ_h v − e^{2v} + e^{−2v} ‖q‖²_h − (1/2) K_h = 0`.
//!
//! Densities are radial, so in the cylinder coordinate `ζ = ρ + iθ` the
//! metric Laplacian is `λ_ζ⁻² (∂²_ρ + ∂²_θ)` and `‖q‖²_h = |f x²|² / λ_ζ⁴`.

use std::f64::consts::LN_2;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{ConformalChart, DensityFlavor, MetricDensity, QuadDiff};
use crate::error::{LabError, Result};
use crate::grid::{BandMatrix, Grid};

/// `−log √2`: the constant sub-solution, and the exact solution when `q = 0`.
pub const LOWER_BOUND: f64 = -0.5 * LN_2;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_NEWTON: usize = 60;
pub const BRACKET_TOL: f64 = 1e-9;
pub const MAX_SUPER_CONSTANT: f64 = 20.0;

/// Dirichlet data on the first and last ρ-rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Constant-balance root `−e^{2v} + e^{−2v}‖q‖² − K_h/2 = 0`.
    Balance,
    Fixed { value: f64 },
}

impl BoundaryCondition {
    fn value(&self, nq: f64, kh: f64) -> f64 {
        match *self {
            BoundaryCondition::Balance => {
                let y = -kh / 4.0 + (kh * kh / 16.0 + nq).sqrt();
                0.5 * y.ln()
            }
            BoundaryCondition::Fixed { value } => value,
        }
    }
}

/// Sampled coefficients of the discrete equation on a tensor grid.
struct Discrete {
    rho: Vec<f64>,
    n_theta: usize,
    drho: f64,
    dtheta: f64,
    /// `λ_ζ` per row.
    lam: Vec<f64>,
    /// `K_h` per row.
    kh: Vec<f64>,
    /// `‖q‖²_h` per point.
    nq: Vec<f64>,
}

impl Discrete {
    fn build(rho: Vec<f64>, n_theta: usize, drho: f64, h: &MetricDensity, q: &QuadDiff) -> Result<Self> {
        let dtheta = 2.0 * std::f64::consts::PI / n_theta as f64;
        let lam: Vec<f64> = rho.iter().map(|r| h.zeta_density(*r)).collect();
        let kh: Vec<f64> = rho
            .iter()
            .map(|r| match h.flavor {
                DensityFlavor::Hyperbolic => -1.0,
                _ => h.curvature(*r),
            })
            .collect();
        let mut nq = Vec::with_capacity(rho.len() * n_theta);
        for (i, r) in rho.iter().enumerate() {
            for j in 0..n_theta {
                let x = Complex64::from_polar(r.exp(), j as f64 * dtheta);
                nq.push(q.zeta_coefficient(x).norm_sqr() / lam[i].powi(4));
            }
        }
        if let Some(bad) = nq.iter().find(|n| !n.is_finite()) {
            return Err(LabError::UnboundedNorm { value: *bad });
        }
        Ok(Discrete {
            rho,
            n_theta,
            drho,
            dtheta,
            lam,
            kh,
            nq,
        })
    }

    fn on_grid(grid: &Grid, h: &MetricDensity, q: &QuadDiff) -> Result<Self> {
        grid.check_inside(&h.chart)?;
        let rho = (0..grid.n_rho).map(|i| grid.rho(i)).collect();
        Discrete::build(rho, grid.n_theta, grid.drho, h, q)
    }

    fn n_rho(&self) -> usize {
        self.rho.len()
    }

    fn len(&self) -> usize {
        self.rho.len() * self.n_theta
    }

    fn theta_second(&self, v: &[f64], i: usize, j: usize) -> f64 {
        let nt = self.n_theta;
        if nt == 1 {
            return 0.0;
        }
        let row = &v[i * nt..(i + 1) * nt];
        (row[(j + 1) % nt] - 2.0 * row[j] + row[(j + nt - 1) % nt]) / (self.dtheta * self.dtheta)
    }

    /// Flat 5-point Laplacian at an interior point.
    fn flat_laplacian(&self, v: &[f64], i: usize, j: usize) -> f64 {
        let nt = self.n_theta;
        let k = i * nt + j;
        (v[k + nt] - 2.0 * v[k] + v[k - nt]) / (self.drho * self.drho) + self.theta_second(v, i, j)
    }

    /// Residual on interior rows; zero on the two Dirichlet rows.
    fn residual(&self, v: &[f64]) -> Vec<f64> {
        let nt = self.n_theta;
        let n = self.n_rho();
        let mut r = vec![0.0; self.len()];
        r.par_chunks_mut(nt).enumerate().for_each(|(i, row)| {
            if i == 0 || i + 1 == n {
                return;
            }
            let l2 = self.lam[i] * self.lam[i];
            for (j, out) in row.iter_mut().enumerate() {
                let k = i * nt + j;
                let e = (2.0 * v[k]).exp();
                *out = 0.5 * self.flat_laplacian(v, i, j) / l2 - e + self.nq[k] / e - 0.5 * self.kh[i];
            }
        });
        r
    }

    fn interior_sup(&self, r: &[f64]) -> f64 {
        let nt = self.n_theta;
        r[nt..r.len() - nt].iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn boundary_values(&self, bc: BoundaryCondition) -> Vec<(usize, f64)> {
        let nt = self.n_theta;
        let last = self.n_rho() - 1;
        [0, last]
            .into_iter()
            .flat_map(|i| (0..nt).map(move |j| (i, j)))
            .map(|(i, j)| (i * nt + j, bc.value(self.nq[i * nt + j], self.kh[i])))
            .collect()
    }

    /// `−λ_ζ² ∂R/∂v` restricted to interior unknowns `u = (i−1)·n_θ + j`.
    fn assemble(&self, v: &[f64]) -> BandMatrix {
        let nt = self.n_theta;
        let n_int = self.n_rho() - 2;
        let mut a = BandMatrix::zeros(n_int * nt, nt);
        let cr = 0.5 / (self.drho * self.drho);
        let ct = if nt > 1 { 0.5 / (self.dtheta * self.dtheta) } else { 0.0 };
        for ii in 0..n_int {
            let i = ii + 1;
            let l2 = self.lam[i] * self.lam[i];
            for j in 0..nt {
                let u = ii * nt + j;
                let k = i * nt + j;
                let e = (2.0 * v[k]).exp();
                a.add(u, u, 2.0 * cr + 2.0 * ct + l2 * (2.0 * e + 2.0 * self.nq[k] / e));
                if ii > 0 {
                    a.add(u, u - nt, -cr);
                }
                if nt > 1 {
                    for jn in [(j + 1) % nt, (j + nt - 1) % nt] {
                        let w = ii * nt + jn;
                        if w < u {
                            a.add(u, w, -ct);
                        }
                    }
                }
            }
        }
        a
    }

    /// Damped Newton from `start`, kept inside `[LOWER_BOUND, upper]`.
    fn newton(&self, start: Vec<f64>, upper: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
        let nt = self.n_theta;
        let mut v = start;
        let in_bracket = |w: &[f64]| {
            w.iter()
                .zip(upper)
                .all(|(x, u)| x.is_finite() && *x >= LOWER_BOUND - BRACKET_TOL && *x <= u + BRACKET_TOL)
        };
        for it in 0..=max_iter {
            let r = self.residual(&v);
            let rs = self.interior_sup(&r);
            if rs < tol {
                return Ok((v, rs, it));
            }
            if it == max_iter {
                return Err(LabError::NonConvergence {
                    iterations: it,
                    residual: rs,
                });
            }
            let rhs: Vec<f64> = (nt..self.len() - nt)
                .map(|k| self.lam[k / nt].powi(2) * r[k])
                .collect();
            let delta = self.assemble(&v).cholesky()?.solve(&rhs);
            let mut alpha = 1.0;
            loop {
                let mut trial = v.clone();
                for (u, d) in delta.iter().enumerate() {
                    trial[nt + u] += alpha * d;
                }
                if in_bracket(&trial) {
                    v = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    return Err(self.bracket_violation(&trial, upper));
                }
            }
        }
        unreachable!()
    }

    fn bracket_violation(&self, v: &[f64], upper: &[f64]) -> LabError {
        let (index, value, up) = v
            .iter()
            .zip(upper)
            .enumerate()
            .map(|(k, (x, u))| (k, *x, *u))
            .find(|(_, x, u)| !(*x >= LOWER_BOUND - BRACKET_TOL && *x <= u + BRACKET_TOL))
            .unwrap_or((0, v[0], upper[0]));
        LabError::BracketViolation {
            index,
            value,
            lower: LOWER_BOUND,
            upper: up,
        }
    }

    /// Super-solution data for comparison density `m`.
    fn super_solution(&self, h: &MetricDensity, m: &MetricDensity) -> Result<SuperSolution> {
        if h.chart != m.chart {
            return Err(LabError::GridMismatch("h and m live on different charts".into()));
        }
        let nt = self.n_theta;
        let phi: Vec<f64> = self
            .rho
            .iter()
            .zip(&self.lam)
            .map(|(r, l)| (m.zeta_density(*r) / l).ln())
            .collect();
        let km: Vec<f64> = self
            .rho
            .iter()
            .map(|r| match m.flavor {
                DensityFlavor::Hyperbolic => -1.0,
                _ => m.curvature(*r),
            })
            .collect();
        let nm: Vec<f64> = (0..self.len()).map(|k| self.nq[k] * (-4.0 * phi[k / nt]).exp()).collect();
        let qnorm_m_sup = nm.iter().fold(0.0f64, |a, b| a.max(*b));
        if !qnorm_m_sup.is_finite() {
            return Err(LabError::UnboundedNorm { value: qnorm_m_sup });
        }
        let mut c = 0.0;
        while c <= MAX_SUPER_CONSTANT {
            let (e, ei) = ((2.0 * c).exp(), (-2.0 * c).exp());
            if (0..self.len()).all(|k| km[k / nt] + e - ei * nm[k] >= 0.0) {
                let v = (0..self.len()).map(|k| phi[k / nt] + c).collect();
                return Ok(SuperSolution {
                    phi: phi.clone(),
                    c,
                    v,
                    qnorm_m_sup,
                });
            }
            c += 0.5;
        }
        Err(LabError::NoSuperSolution {
            max: MAX_SUPER_CONSTANT,
        })
    }

    /// Raises `C` until `V` is also a discrete super-solution lying above
    /// the boundary data and the constant sub-solution.
    fn bracketing_super_solution(
        &self,
        h: &MetricDensity,
        m: &MetricDensity,
        bc: &[(usize, f64)],
    ) -> Result<SuperSolution> {
        let mut s = self.super_solution(h, m)?;
        let nt = self.n_theta;
        while s.c <= MAX_SUPER_CONSTANT {
            let ok_bc = bc.iter().all(|(k, b)| s.v[*k] >= *b);
            let ok_low = s.v.iter().all(|x| *x >= LOWER_BOUND);
            let ok_res = ok_bc && ok_low && self.residual(&s.v).iter().all(|r| *r <= 1e-12);
            if ok_res {
                return Ok(s);
            }
            s.c += 0.5;
            s.v = (0..self.len()).map(|k| s.phi[k / nt] + s.c).collect();
        }
        Err(LabError::NoSuperSolution {
            max: MAX_SUPER_CONSTANT,
        })
    }
}

/// `V = φ + C` for the comparison metric `m = e^{2φ} h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperSolution {
    /// `φ` per ρ-row.
    pub phi: Vec<f64>,
    pub c: f64,
    pub v: Vec<f64>,
    /// `sup ‖q‖²_m` over the grid.
    pub qnorm_m_sup: f64,
}

/// Residual of the Gauss equation on interior rows of `grid` (Dirichlet rows
/// are reported as zero).
pub fn gauss_residual(grid: &Grid, v: &[f64], h: &MetricDensity, q: &QuadDiff) -> Result<Vec<f64>> {
    grid.check_field(v)?;
    Ok(Discrete::on_grid(grid, h, q)?.residual(v))
}

pub fn super_solution(grid: &Grid, h: &MetricDensity, m: &MetricDensity, q: &QuadDiff) -> Result<SuperSolution> {
    Discrete::on_grid(grid, h, q)?.super_solution(h, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalFactorField {
    pub grid: Grid,
    pub chart: ConformalChart,
    pub flavor: DensityFlavor,
    pub q: QuadDiff,
    pub bc: BoundaryCondition,
    pub tol: f64,
    pub v: Vec<f64>,
    /// Super-solution `V` used as the upper bracket.
    pub upper: Vec<f64>,
    pub lower: f64,
    pub super_constant: f64,
    /// `sup ‖q‖²_m` for the comparison metric of the super-solution.
    pub qnorm_m_sup: f64,
    pub residual_sup: f64,
    pub iterations: usize,
}

impl ConformalFactorField {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.v[self.grid.index(i, j)]
    }

    /// Largest violation of `lower ≤ v ≤ V` (zero when the bracket holds).
    pub fn bracket_defect(&self) -> f64 {
        self.v
            .iter()
            .zip(&self.upper)
            .map(|(x, u)| (self.lower - x).max(x - u).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Solves the Gauss equation with the perturbed density of the chart as
/// comparison metric for the super-solution.
pub fn solve_2d(
    h: &MetricDensity,
    q: &QuadDiff,
    grid: &Grid,
    bc: BoundaryCondition,
    tol: f64,
) -> Result<ConformalFactorField> {
    solve_2d_with(h, &MetricDensity::perturbed(h.chart), q, grid, bc, tol, MAX_NEWTON)
}

pub fn solve_2d_with(
    h: &MetricDensity,
    m: &MetricDensity,
    q: &QuadDiff,
    grid: &Grid,
    bc: BoundaryCondition,
    tol: f64,
    max_iter: usize,
) -> Result<ConformalFactorField> {
    if !(tol > 0.0) {
        return Err(LabError::Config(format!("tolerance must be positive, got {tol}")));
    }
    h.chart.admits(q)?;
    let d = Discrete::on_grid(grid, h, q)?;
    let bcv = d.boundary_values(bc);
    let sup = d.bracketing_super_solution(h, m, &bcv)?;
    let mut start = sup.v.clone();
    for (k, b) in &bcv {
        start[*k] = *b;
    }
    let (v, residual_sup, iterations) = d.newton(start, &sup.v, tol, max_iter)?;
    let field = ConformalFactorField {
        grid: *grid,
        chart: h.chart,
        flavor: h.flavor,
        q: q.clone(),
        bc,
        tol,
        v,
        upper: sup.v,
        lower: LOWER_BOUND,
        super_constant: sup.c,
        qnorm_m_sup: sup.qnorm_m_sup,
        residual_sup,
        iterations,
    };
    if field.bracket_defect() > BRACKET_TOL {
        return Err(d.bracket_violation(&field.v, &field.upper));
    }
    Ok(field)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialField {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    pub upper: Vec<f64>,
    pub residual_sup: f64,
    pub iterations: usize,
}

impl RadialField {
    pub fn bracket_defect(&self) -> f64 {
        self.v
            .iter()
            .zip(&self.upper)
            .map(|(x, u)| (LOWER_BOUND - x).max(x - u).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Rotationally symmetric reduction for `q = a/x² dx²`: a two-point boundary
/// value problem in ρ on `n` uniform nodes, solved by Newton with a
/// tridiagonal factorization.
pub fn solve_radial(
    h: &MetricDensity,
    a: Complex64,
    rho_min: f64,
    rho_max: f64,
    n: usize,
    bc: BoundaryCondition,
    tol: f64,
) -> Result<RadialField> {
    if n < 3 || !(rho_max > rho_min) {
        return Err(LabError::Config(format!("radial interval needs n >= 3 nodes, got {n}")));
    }
    let (lo, hi) = h.chart.rho_bounds();
    if !(rho_min > lo && rho_max < hi) {
        return Err(LabError::GridMismatch(format!(
            "radial interval [{rho_min}, {rho_max}] leaves the chart ({lo}, {hi})"
        )));
    }
    let drho = (rho_max - rho_min) / (n - 1) as f64;
    let rho: Vec<f64> = (0..n).map(|i| rho_max - (n - 1 - i) as f64 * drho).collect();
    let q = QuadDiff::pure_residue(a);
    let d = Discrete::build(rho.clone(), 1, drho, h, &q)?;
    let bcv = d.boundary_values(bc);
    let sup = d.bracketing_super_solution(h, &MetricDensity::perturbed(h.chart), &bcv)?;
    let mut start = sup.v.clone();
    for (k, b) in &bcv {
        start[*k] = *b;
    }
    let (v, residual_sup, iterations) = d.newton(start, &sup.v, tol, MAX_NEWTON)?;
    Ok(RadialField {
        rho,
        v,
        upper: sup.v,
        residual_sup,
        iterations,
    })
}

/// Radial oracle sampled at the rows of `grid`: Richardson extrapolation
/// `(4 u_{2r} − u_r) / 3` of the radial solutions on grids `r` and `2r` times
/// finer in ρ. Fourth-order accurate, and keeps the fine grids coarse enough
/// for the residual to stay above the rounding floor.
pub fn radial_on_grid(
    h: &MetricDensity,
    a: Complex64,
    grid: &Grid,
    refine: usize,
    bc: BoundaryCondition,
    tol: f64,
) -> Result<Vec<f64>> {
    let r = refine.max(1);
    let solve = |k: usize| solve_radial(h, a, grid.rho_min(), grid.rho_max, k * (grid.n_rho - 1) + 1, bc, tol);
    let (coarse, fine) = (solve(r)?, solve(2 * r)?);
    Ok((0..grid.n_rho)
        .map(|i| (4.0 * fine.v[2 * r * i] - coarse.v[r * i]) / 3.0)
        .collect())
}

/// Induced metric and shape operator of the maximal surface, in the frame
/// `(∂_ρ, ∂_θ)` of the cylinder coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingData {
    pub grid: Grid,
    /// Density of `I` against `|dζ|`: `√2 e^v λ_ζ`.
    pub i_density: Vec<f64>,
    pub b: Vec<Matrix2<f64>>,
    pub ii: Vec<Matrix2<f64>>,
    /// `‖q‖²_h` per point.
    pub qnorm: Vec<f64>,
    /// `K_I = −1 − det B`.
    pub k_gauss: Vec<f64>,
    /// Finite-difference curvature of `I` on interior rows only.
    pub k_fd: Vec<f64>,
}

impl EmbeddingData {
    pub fn trace_sup(&self) -> f64 {
        self.b.iter().map(|b| b.trace().abs()).fold(0.0, f64::max)
    }

    /// `sup |det B + e^{−4v}‖q‖²_h|`.
    pub fn det_identity_defect(&self, v: &[f64]) -> f64 {
        self.b
            .iter()
            .zip(v)
            .zip(&self.qnorm)
            .map(|((b, v), n)| (b.determinant() + (-4.0 * v).exp() * n).abs())
            .fold(0.0, f64::max)
    }

    /// `sup |K_I(Gauss) − K_I(finite differences)|` over interior rows.
    pub fn curvature_defect(&self) -> f64 {
        let nt = self.grid.n_theta;
        self.k_fd
            .iter()
            .zip(&self.k_gauss[nt..])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn embedding_data(field: &ConformalFactorField, h: &MetricDensity, q: &QuadDiff) -> Result<EmbeddingData> {
    let grid = field.grid;
    grid.check_field(&field.v)?;
    let d = Discrete::on_grid(&grid, h, q)?;
    let nt = grid.n_theta;
    let mut out = EmbeddingData {
        grid,
        i_density: Vec::with_capacity(grid.len()),
        b: Vec::with_capacity(grid.len()),
        ii: Vec::with_capacity(grid.len()),
        qnorm: d.nq.clone(),
        k_gauss: Vec::with_capacity(grid.len()),
        k_fd: Vec::with_capacity(grid.len().saturating_sub(2 * nt)),
    };
    for i in 0..grid.n_rho {
        let lam = d.lam[i];
        for j in 0..nt {
            let k = grid.index(i, j);
            let v = field.v[k];
            let x = Complex64::from_polar(grid.rho(i).exp(), grid.theta(j));
            let qz = q.zeta_coefficient(x);
            let ii = Matrix2::new(2.0 * qz.re, -2.0 * qz.im, -2.0 * qz.im, -2.0 * qz.re);
            let metric = 2.0 * (2.0 * v).exp() * lam * lam;
            let b = ii / metric;
            out.i_density.push(2f64.sqrt() * v.exp() * lam);
            out.k_gauss.push(-1.0 - b.determinant());
            out.b.push(b);
            out.ii.push(ii);
        }
    }
    for i in 1..grid.n_rho - 1 {
        // (log λ)'' = −K_h λ²; a finite difference here loses ~1e-9 to rounding
        let loglam2 = -h.curvature(grid.rho(i)) * d.lam[i].powi(2);
        for j in 0..nt {
            let k = grid.index(i, j);
            let v = field.v[k];
            let lap = d.flat_laplacian(&field.v, i, j) + loglam2;
            out.k_fd.push(-lap / (2.0 * (2.0 * v).exp() * d.lam[i].powi(2)));
        }
    }
    Ok(out)
}

/// Metadata written next to a persisted field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub schema_version: u32,
    pub residual_sup: f64,
    pub iterations: usize,
    pub lower_bound: f64,
    pub super_constant: f64,
    pub upper_min: f64,
    pub upper_max: f64,
    pub config_hash: Option<String>,
}

pub const FIELD_SCHEMA_VERSION: u32 = 1;

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes `v` as a text grid file plus a `.meta.json` companion.
pub fn write_field(path: &Path, field: &ConformalFactorField, config_hash: Option<&str>) -> Result<()> {
    let mut buf = String::new();
    buf.push_str("# adslab conformal-factor field\n");
    buf.push_str(&format!("# format {FIELD_SCHEMA_VERSION}\n"));
    buf.push_str(&format!("# chart {}\n", json(&field.chart)));
    buf.push_str(&format!("# flavor {}\n", json(&field.flavor)));
    buf.push_str(&format!("# q {}\n", json(&field.q)));
    buf.push_str(&format!("# grid {}\n", json(&field.grid)));
    buf.push_str(&format!("# tol {:.16e}\n", field.tol));
    buf.push_str(&format!("# bc {}\n", json(&field.bc)));
    buf.push_str(&format!("# config_hash {}\n", config_hash.unwrap_or("-")));
    for row in field.v.chunks(field.grid.n_theta) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        buf.push_str(&line.join(" "));
        buf.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| LabError::io(path, e))?;
    let meta = FieldMeta {
        schema_version: FIELD_SCHEMA_VERSION,
        residual_sup: field.residual_sup,
        iterations: field.iterations,
        lower_bound: field.lower,
        super_constant: field.super_constant,
        upper_min: field.upper.iter().copied().fold(f64::INFINITY, f64::min),
        upper_max: field.upper.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        config_hash: config_hash.map(str::to_owned),
    };
    let mp = meta_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("serializable");
    fs::write(&mp, text + "\n").map_err(|e| LabError::io(&mp, e))
}

/// Header and values of a persisted field.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredField {
    pub chart: ConformalChart,
    pub flavor: DensityFlavor,
    pub q: QuadDiff,
    pub grid: Grid,
    pub tol: f64,
    pub bc: BoundaryCondition,
    pub config_hash: Option<String>,
    pub v: Vec<f64>,
    pub meta: FieldMeta,
}

pub fn read_field(path: &Path) -> Result<StoredField> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let perr = |m: String| LabError::Parse {
        path: path.to_owned(),
        message: m,
    };
    let mut header = std::collections::HashMap::new();
    let mut v = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, val)) = rest.split_once(' ') {
                header.insert(k.to_owned(), val.to_owned());
            }
        } else if !line.trim().is_empty() {
            for tok in line.split_whitespace() {
                v.push(tok.parse::<f64>().map_err(|e| perr(format!("bad value {tok:?}: {e}")))?);
            }
        }
    }
    let get = |k: &str| header.get(k).ok_or_else(|| perr(format!("missing header {k}")));
    let de = |k: &str| -> Result<serde_json::Value> {
        serde_json::from_str(get(k)?).map_err(|e| perr(format!("header {k}: {e}")))
    };
    let chart: ConformalChart = serde_json::from_value(de("chart")?).map_err(|e| perr(e.to_string()))?;
    let flavor: DensityFlavor = serde_json::from_value(de("flavor")?).map_err(|e| perr(e.to_string()))?;
    let q: QuadDiff = serde_json::from_value(de("q")?).map_err(|e| perr(e.to_string()))?;
    let grid: Grid = serde_json::from_value(de("grid")?).map_err(|e| perr(e.to_string()))?;
    let bc: BoundaryCondition = serde_json::from_value(de("bc")?).map_err(|e| perr(e.to_string()))?;
    let tol: f64 = get("tol")?.parse().map_err(|e| perr(format!("tol: {e}")))?;
    let config_hash = match get("config_hash")?.as_str() {
        "-" => None,
        s => Some(s.to_owned()),
    };
    if v.len() != grid.len() {
        return Err(perr(format!("expected {} values, found {}", grid.len(), v.len())));
    }
    let mp = meta_path(path);
    let meta_text = fs::read_to_string(&mp).map_err(|e| LabError::io(&mp, e))?;
    let meta: FieldMeta = serde_json::from_str(&meta_text).map_err(|e| LabError::Parse {
        path: mp.clone(),
        message: e.to_string(),
    })?;
    Ok(StoredField {
        chart,
        flavor,
        q,
        grid,
        tol,
        bc,
        config_hash,
        v,
        meta,
    })
}

fn json<T: Serialize>(x: &T) -> String {
    serde_json::to_string(x).expect("serializable")
}
