//! Invariant suite: curvature oracles, solver bracket and residual, algebraic
//! identities, oracle equivalence, flatness, group membership and residue
//! invariance, each reported as one pass/fail row.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domains::{collar_k, planar_curvature_fd, push_chart, ConformalChart, MetricDensity, QuadDiff};
use crate::error::Result;
use crate::frame::{
    core_geodesic_length, holonomy, homomorphism_defect, integrate_frame, rectangle, FrameData, FrameState,
    StepControl,
};
use crate::gauss::{
    embedding_data, radial_on_grid, solve_2d, BoundaryCondition, ConformalFactorField, BRACKET_TOL, LOWER_BOUND,
};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub c: f64,
    /// Node parameter of the annulus chart used by the solver checks.
    pub annulus_t: f64,
    pub cusp_depth: f64,
    pub n_rho: usize,
    pub n_theta: usize,
    /// Residues `a` of the radial oracle comparison.
    pub oracle_residues: Vec<f64>,
    pub curvature_samples: usize,
    pub seed: u64,
    pub solver_tol: f64,
    pub integrator_tol: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            c: 0.5,
            annulus_t: 1e-3,
            cusp_depth: -6.0,
            n_rho: 64,
            n_theta: 32,
            oracle_residues: vec![0.5, 1.0, 2.0],
            curvature_samples: 1000,
            seed: 7,
            solver_tol: 1e-10,
            integrator_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    /// Passes iff `value < bound` (NaN fails).
    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            pass: value < bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<w$}  {:>12}  {:>9}  result\n", "check", "value", "bound");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<w$}  {:>12.3e}  {:>9.1e}  {}",
                c.name,
                c.value,
                c.bound,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

fn sup(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) })
}

/// `sup |K + 1|` of the hyperbolic density at random interior points.
pub fn curvature_oracle(chart: &ConformalChart, samples: usize, rng: &mut impl Rng) -> Result<f64> {
    let (lo, hi) = chart.rho_bounds();
    let lo = if lo.is_finite() { lo } else { 4.0 * chart.c.ln() };
    let span = hi - lo;
    let h = MetricDensity::hyperbolic(*chart);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let rho = rng.gen_range(lo + 0.02 * span..hi - 0.02 * span);
        let x = Complex64::from_polar(rho.exp(), rng.gen_range(0.0..2.0 * PI));
        let k = planar_curvature_fd(|y| h.at(y).unwrap_or(f64::NAN), x);
        worst = worst.max((k + 1.0).abs());
    }
    Ok(worst)
}

/// Largest one-sided gap `|λ(b + δ) − λ(b − δ)|`, δ = 1e-13, across the
/// band boundaries of the perturbed density.
pub fn perturbed_band_jump(c: f64, t: f64) -> Result<f64> {
    let lc = c.ln();
    let cusp = MetricDensity::perturbed(ConformalChart::cusp(c)?);
    let ann = MetricDensity::perturbed(ConformalChart::annulus(Complex64::new(t, 0.0), c)?);
    let k = ann.collar_constant().unwrap_or(f64::NAN);
    let lt = t.ln();
    let gap = |m: &MetricDensity, b: f64| (m.zeta_density(b + 1e-13) - m.zeta_density(b - 1e-13)).abs();
    Ok(sup(
        [2.0 * lc, lc - 1e-12].iter().map(|b| gap(&cusp, *b)).chain(
            [k, k - lc, lt - k, lt - k + lc].iter().map(|b| gap(&ann, *b)),
        ),
    ))
}

/// Sup distance between `solve_2d` and the radial oracle on the same rows.
pub fn oracle_gap(h: &MetricDensity, a: f64, grid: &Grid, tol: f64) -> Result<f64> {
    let q = QuadDiff::pure_residue(Complex64::new(a, 0.0));
    let f = solve_2d(h, &q, grid, BoundaryCondition::Balance, tol)?;
    let r = radial_on_grid(h, Complex64::new(a, 0.0), grid, 4, BoundaryCondition::Balance, tol.max(1e-9))?;
    Ok(sup((0..f.v.len()).map(|k| (f.v[k] - r[k / grid.n_theta]).abs())))
}

fn fuchsian_checks(s: &VerifySettings, out: &mut Vec<Check>) -> Result<()> {
    let ann = MetricDensity::hyperbolic(ConformalChart::annulus(Complex64::new(s.annulus_t, 0.0), s.c)?);
    let cusp = MetricDensity::hyperbolic(ConformalChart::cusp(s.c)?);
    let q = QuadDiff::zero();
    let mut dev: f64 = 0.0;
    let mut shape: f64 = 0.0;
    let mut trace_gap: f64 = 0.0;
    for h in [&ann, &cusp] {
        let g = Grid::for_chart(&h.chart, s.n_rho, s.n_theta, s.cusp_depth)?;
        let f = solve_2d(h, &q, &g, BoundaryCondition::Balance, s.solver_tol)?;
        dev = dev.max(sup(f.v.iter().map(|v| (v - LOWER_BOUND).abs())));
        shape = shape.max(sup(embedding_data(&f, h, &q)?.b.iter().map(|b| b.amax())));
        if let Some(ell) = core_geodesic_length(h) {
            let data = FrameData::new(&f, h)?;
            let base = Complex64::new(0.5 * (g.rho(1) + g.rho(g.n_rho - 2)), 0.0);
            let ctrl = StepControl {
                tol: s.integrator_tol,
                ..StepControl::default()
            };
            let hol = holonomy(&data, base, 1, &ctrl, 1e-8)?;
            let (ta, tb) = hol.psl2(1e-6)?.traces();
            let expected = 2.0 * (ell / 2.0).cosh();
            trace_gap = trace_gap.max((ta.abs() - expected).abs()).max((tb.abs() - expected).abs());
        }
    }
    out.push(Check::below("fuchsian: sup |v + log√2|", dev, 1e-9));
    out.push(Check::below("fuchsian: sup |B|", shape, 1e-10));
    out.push(Check::below("fuchsian: psl2 traces vs 2cosh(ℓ/2)", trace_gap, 1e-6));
    Ok(())
}

fn solver_checks(s: &VerifySettings, out: &mut Vec<Check>) -> Result<()> {
    let charts = [
        ConformalChart::annulus(Complex64::new(s.annulus_t, 0.0), s.c)?,
        ConformalChart::cusp(s.c)?,
    ];
    let qs = [
        QuadDiff::new([(-2, Complex64::new(1.0, 0.0)), (-1, Complex64::new(0.3, 0.2))], 8)?,
        QuadDiff::pure_residue(Complex64::new(0.0, 2.0)),
    ];
    let mut fields: Vec<(ConformalFactorField, MetricDensity, QuadDiff)> = Vec::new();
    for chart in charts {
        let h = MetricDensity::hyperbolic(chart);
        let g = Grid::for_chart(&chart, s.n_rho, s.n_theta, s.cusp_depth)?;
        for q in &qs {
            fields.push((solve_2d(&h, q, &g, BoundaryCondition::Balance, s.solver_tol)?, h, q.clone()));
        }
    }
    let bracket = sup(fields.iter().map(|f| f.0.bracket_defect()));
    let residual = sup(fields.iter().map(|f| f.0.residual_sup));
    out.push(Check::below("solver: bracket violation", bracket, BRACKET_TOL * (1.0 + 1e-12)));
    out.push(Check::below("solver: sup residual", residual, s.solver_tol));
    let mut det: f64 = 0.0;
    let mut curv: f64 = 0.0;
    let mut trace: f64 = 0.0;
    for (f, h, q) in &fields {
        let e = embedding_data(f, h, q)?;
        det = det.max(e.det_identity_defect(&f.v));
        curv = curv.max(e.curvature_defect());
        trace = trace.max(e.trace_sup());
    }
    out.push(Check::below("identity: det B + e^{-4v}‖q‖²", det, 1e-8));
    out.push(Check::below("identity: K_I + 1 + det B (finite differences)", curv, 1e-8));
    out.push(Check::below("identity: tr B", trace, 1e-10));
    Ok(())
}

fn oracle_checks(s: &VerifySettings, out: &mut Vec<Check>) -> Result<()> {
    let h = MetricDensity::hyperbolic(ConformalChart::annulus(Complex64::new(s.annulus_t, 0.0), s.c)?);
    let g = Grid::for_chart(&h.chart, s.n_rho, s.n_theta, s.cusp_depth)?;
    for a in &s.oracle_residues {
        out.push(Check::below(
            format!("oracle: 2D vs radial, a = {a}"),
            oracle_gap(&h, *a, &g, s.solver_tol)?,
            1e-4,
        ));
    }
    Ok(())
}

/// Residue field on a cusp with a θ-dependent lower-order term, resolved
/// finely enough for the flatness and homomorphism checks.
fn residue_frame_data(s: &VerifySettings) -> Result<FrameData> {
    let h = MetricDensity::hyperbolic(ConformalChart::cusp(s.c)?);
    let g = Grid::new(-3.0, -0.8, 160, 32)?;
    let q = QuadDiff::new([(-2, Complex64::new(0.3, 0.1)), (-1, Complex64::new(0.02, 0.01))], 8)?;
    let f = solve_2d(&h, &q, &g, BoundaryCondition::Balance, s.solver_tol)?;
    FrameData::new(&f, &h)
}

fn frame_checks(s: &VerifySettings, out: &mut Vec<Check>) -> Result<()> {
    let ctrl = StepControl {
        tol: s.integrator_tol,
        ..StepControl::default()
    };
    let data = residue_frame_data(s)?;
    let mut flat: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for k in 1..=5 {
        let path = rectangle(Complex64::new(-1.7, 1.0), 0.06 * k as f64, 0.2 * k as f64);
        let r = integrate_frame(&data, &path, &FrameState::identity(path[0]), &ctrl)?;
        flat = flat.max((r.state.f - Matrix4::identity()).map(|z| z.norm()).max());
        drift = drift.max(r.gram_drift / r.length);
    }
    out.push(Check::below("flatness: 5 nested loops, |F − I|", flat, 1e-5));
    out.push(Check::below("flatness: Gram drift per unit length", drift, 1e-8));

    let fuchsian = {
        let h = MetricDensity::hyperbolic(ConformalChart::annulus(Complex64::new(s.annulus_t, 0.0), s.c)?);
        let g = Grid::for_chart(&h.chart, s.n_rho, s.n_theta.min(16), s.cusp_depth)?;
        let f = solve_2d(&h, &QuadDiff::zero(), &g, BoundaryCondition::Balance, s.solver_tol)?;
        (FrameData::new(&f, &h)?, Complex64::new(0.5 * (g.rho(1) + g.rho(g.n_rho - 2)), 0.0))
    };
    let mut form: f64 = 0.0;
    let mut hom: f64 = 0.0;
    for (d, base) in [(&fuchsian.0, fuchsian.1), (&data, Complex64::new(-1.5, 0.0))] {
        let one = holonomy(d, base, 1, &ctrl, 1e-8)?;
        let two = holonomy(d, base, 2, &ctrl, 1e-8)?;
        form = form.max(one.group.form_defect).max(one.group.det_defect);
        hom = hom.max(homomorphism_defect(&one, &two));
    }
    out.push(Check::below("group: ρᵀJρ − J and det ρ − 1", form, 1e-8));
    out.push(Check::below("group: ρ(γ²) − ρ(γ)²", hom, 1e-6));
    Ok(())
}

fn domain_checks(s: &VerifySettings, rng: &mut ChaCha8Rng, out: &mut Vec<Check>) -> Result<()> {
    let ann = ConformalChart::annulus(Complex64::new(s.annulus_t, 0.0), s.c)?;
    out.push(Check::below(
        "curvature: annulus hyperbolic density",
        curvature_oracle(&ann, s.curvature_samples, rng)?,
        1e-6,
    ));
    out.push(Check::below(
        "curvature: cusp hyperbolic density",
        curvature_oracle(&ConformalChart::cusp(s.c)?, s.curvature_samples, rng)?,
        1e-6,
    ));
    out.push(Check::below(
        "perturbed density: band continuity",
        perturbed_band_jump(s.c, s.annulus_t.min(s.c.powf(2.0 * PI) / 10.0))?,
        1e-10,
    ));
    let edge = s.c.powf(2.0 * PI);
    let k = collar_k(Complex64::new(edge, 0.0), s.c)?;
    out.push(Check::below("collar constant at |t| = c^{2π}", (k - PI * s.c.ln()).abs(), 1e-12));
    let mut worst = 0u32;
    for _ in 0..100 {
        let a = Complex64::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let t = Complex64::from_polar(rng.gen_range(1e-8..0.2), rng.gen_range(0.0..2.0 * PI));
        let pushed = push_chart(&QuadDiff::pure_residue(a), t)?;
        if pushed.residue().re.to_bits() != a.re.to_bits() || pushed.residue().im.to_bits() != a.im.to_bits() {
            worst += 1;
        }
    }
    out.push(Check::below("push_chart: residue mismatches (bitwise)", worst as f64, 0.5));
    Ok(())
}

/// Runs every check. Numerical failures of a check's own pipeline are
/// returned as errors, not as failing rows.
pub fn run_suite(s: &VerifySettings) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut checks = Vec::new();
    domain_checks(s, &mut rng, &mut checks)?;
    fuchsian_checks(s, &mut checks)?;
    solver_checks(s, &mut checks)?;
    oracle_checks(s, &mut checks)?;
    frame_checks(s, &mut checks)?;
    Ok(VerifyReport { checks })
}
