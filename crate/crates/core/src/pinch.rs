//! Pinching sweeps: open a node with `z w = t`, let `t → 0`, and compare
//! every member with the cusp (limit) member on a fixed compact window.
//!
//! All member grids share the anchor `ρ₊ = log c − dρ` and the spacing, so
//! the rows inside the window coincide bit for bit across the family.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{ConformalChart, MetricDensity, QuadDiff, DEFAULT_TRUNCATION};
use crate::error::{LabError, Result};
use crate::frame::{
    core_geodesic_length, holonomy, homomorphism_defect, relative_homomorphism_defect, FrameData,
    HolonomyResult, StepControl, DEFAULT_REALNESS_TOL,
};
use crate::gauss::{solve_2d, BoundaryCondition, ConformalFactorField, BRACKET_TOL, DEFAULT_TOL};
use crate::grid::Grid;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Extra coefficient `coeff · t^{t_power}` of `x^k dx²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtraCoeff {
    pub k: i32,
    pub coeff: Complex64,
    pub t_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub drho: f64,
    pub n_theta: usize,
    /// Lowest ρ of the limit member's grid.
    pub cusp_depth: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            drho: 0.025,
            n_theta: 16,
            cusp_depth: -10.0,
        }
    }
}

/// Module tolerances a row is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub solver: f64,
    pub integrator: f64,
    pub realness: f64,
    pub group: f64,
    pub homomorphism: f64,
    /// Gram drift allowed per unit loop length.
    pub gram_drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            solver: DEFAULT_TOL,
            integrator: 1e-10,
            realness: DEFAULT_REALNESS_TOL,
            group: 1e-8,
            homomorphism: 1e-6,
            gram_drift: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchFamily {
    pub c: f64,
    pub residue: Complex64,
    pub extras: Vec<ExtraCoeff>,
    /// Strictly decreasing, each in `(0, c²)`.
    pub t_sequence: Vec<f64>,
    /// `[ρ_a, ρ_b]`.
    pub window: (f64, f64),
    pub grid: GridSpec,
    /// Defect columns must decrease for `k ≥ threshold`.
    pub threshold: usize,
    pub tol: Tolerances,
}

/// `t_k = c² 2^{−k}`, `k = 1..=n`.
pub fn default_t_sequence(c: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| c * c * 0.5f64.powi(k as i32)).collect()
}

impl Default for PinchFamily {
    fn default() -> Self {
        PinchFamily {
            c: 0.5,
            residue: Complex64::new(1.0, 0.0),
            extras: Vec::new(),
            t_sequence: default_t_sequence(0.5, 12),
            window: (-1.25, -0.85),
            grid: GridSpec::default(),
            threshold: 6,
            tol: Tolerances::default(),
        }
    }
}

impl PinchFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::InvalidFamily(m));
        if !(self.c > 0.0 && self.c < 1.0) {
            return bad(format!("c must lie in (0,1), got {}", self.c));
        }
        let c2 = self.c * self.c;
        if let Some(t) = self.t_sequence.iter().find(|t| !(**t > 0.0 && **t < c2)) {
            return bad(format!("t = {t} outside (0, c²)"));
        }
        if self.t_sequence.windows(2).any(|w| w[1] >= w[0]) {
            return bad("t sequence must be strictly decreasing".into());
        }
        let (a, b) = self.window;
        if !(a < b) {
            return bad(format!("empty window [{a}, {b}]"));
        }
        for e in &self.extras {
            if e.k < -1 || e.k > DEFAULT_TRUNCATION {
                return bad(format!("extra coefficient degree {} outside [-1, {DEFAULT_TRUNCATION}]", e.k));
            }
            if !(e.t_power >= 0.0) {
                return bad(format!("extra coefficient power {} must be >= 0", e.t_power));
            }
            if e.k >= 0 && e.t_power == 0.0 && e.coeff.norm() != 0.0 {
                return bad(format!(
                    "degree-{} coefficient does not vanish at t = 0; it is not admissible on the cusp",
                    e.k
                ));
            }
        }
        for t in std::iter::once(0.0).chain(self.t_sequence.iter().copied()) {
            let g = self.member_grid(t)?;
            let (lo, hi) = (g.rho(1), g.rho(g.n_rho - 2));
            if !(a >= lo && b <= hi) {
                return bad(format!(
                    "window [{a}, {b}] leaves the interior rows [{lo}, {hi}] of member t = {t:e}"
                ));
            }
        }
        Ok(())
    }

    pub fn chart(&self, t: f64) -> Result<ConformalChart> {
        if t == 0.0 {
            ConformalChart::cusp(self.c)
        } else {
            ConformalChart::annulus(Complex64::new(t, 0.0), self.c)
        }
    }

    pub fn q(&self, t: f64) -> Result<QuadDiff> {
        let mut coeffs = vec![(-2, self.residue)];
        for e in &self.extras {
            let scale = if e.t_power == 0.0 { 1.0 } else { t.powf(e.t_power) };
            coeffs.push((e.k, e.coeff * scale));
        }
        QuadDiff::new(coeffs, DEFAULT_TRUNCATION)
    }

    pub fn member_grid(&self, t: f64) -> Result<Grid> {
        let chart = self.chart(t)?;
        let d = self.grid.drho;
        let top = self.c.ln() - d;
        let (lo, _) = chart.rho_bounds();
        let floor = if lo.is_finite() { lo + d } else { self.grid.cusp_depth };
        let n = ((top - floor) / d * (1.0 + 1e-12)).floor() as usize + 1;
        let g = Grid::anchored(top, d, n, self.grid.n_theta)?;
        g.check_inside(&chart)?;
        Ok(g)
    }

    /// Base point `(ρ_b − 0.1, 0)` of the holonomy loop.
    pub fn base_point(&self) -> Complex64 {
        Complex64::new(self.window.1 - 0.1, 0.0)
    }

    fn step_control(&self) -> StepControl {
        StepControl {
            tol: self.tol.integrator,
            ..StepControl::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub t: f64,
    pub chart: ConformalChart,
    pub h: MetricDensity,
    pub q: QuadDiff,
    pub grid: Grid,
}

pub fn build_member(family: &PinchFamily, t: f64) -> Result<Member> {
    if t != 0.0 && !(t > 0.0 && t < family.c * family.c) {
        return Err(LabError::InvalidFamily(format!("t = {t} outside (0, c²)")));
    }
    let chart = family.chart(t)?;
    let q = family.q(t)?;
    chart.admits(&q)?;
    Ok(Member {
        t,
        chart,
        h: MetricDensity::hyperbolic(chart),
        q,
        grid: family.member_grid(t)?,
    })
}

/// Solution, loop holonomy and its square for one member.
#[derive(Debug, Clone)]
pub struct MemberResult {
    pub t: f64,
    pub field: ConformalFactorField,
    pub hol: HolonomyResult,
    pub hol2: HolonomyResult,
    pub psl2_traces: Option<(f64, f64)>,
    pub core_length: Option<f64>,
}

pub fn solve_member(family: &PinchFamily, t: f64) -> Result<MemberResult> {
    let wrap = |e: LabError| LabError::Member { t, source: Box::new(e) };
    let m = build_member(family, t).map_err(wrap)?;
    let field = solve_2d(&m.h, &m.q, &m.grid, BoundaryCondition::Balance, family.tol.solver).map_err(wrap)?;
    let data = FrameData::new(&field, &m.h).map_err(wrap)?;
    let ctrl = family.step_control();
    let base = family.base_point();
    let hol = holonomy(&data, base, 1, &ctrl, family.tol.realness).map_err(wrap)?;
    let hol2 = holonomy(&data, base, 2, &ctrl, family.tol.realness).map_err(wrap)?;
    let psl2_traces = hol.psl2(1e-6).ok().map(|p| p.traces());
    Ok(MemberResult {
        t,
        field,
        hol,
        hol2,
        psl2_traces,
        core_length: core_geodesic_length(&m.h),
    })
}

/// Limit member plus one result per `t`, in sequence order.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub family: PinchFamily,
    pub limit: MemberResult,
    pub members: Vec<MemberResult>,
}

/// Solves all members in parallel.
pub fn run_sweep(family: &PinchFamily) -> Result<Sweep> {
    family.validate()?;
    let ts: Vec<f64> = std::iter::once(0.0).chain(family.t_sequence.iter().copied()).collect();
    let mut results: Vec<MemberResult> = ts
        .par_iter()
        .map(|t| solve_member(family, *t))
        .collect::<Result<Vec<_>>>()?;
    let limit = results.remove(0);
    Ok(Sweep {
        family: family.clone(),
        limit,
        members: results,
    })
}

fn window_rows(family: &PinchFamily, grid: &Grid) -> Vec<usize> {
    (0..grid.n_rho)
        .filter(|i| {
            let r = grid.rho(*i);
            r >= family.window.0 && r <= family.window.1
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub t: f64,
    /// `sup_window |λ_t/λ_0 − 1|`.
    pub defect: f64,
}

pub fn metric_convergence(family: &PinchFamily) -> Result<Vec<MetricRow>> {
    family.validate()?;
    let h0 = MetricDensity::hyperbolic(family.chart(0.0)?);
    let g0 = family.member_grid(0.0)?;
    let rows = window_rows(family, &g0);
    family
        .t_sequence
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let h = MetricDensity::hyperbolic(family.chart(*t)?);
            let defect = rows
                .iter()
                .map(|r| g0.rho(*r))
                .map(|rho| (h.zeta_density(rho) / h0.zeta_density(rho) - 1.0).abs())
                .fold(0.0, f64::max);
            Ok(MetricRow {
                k: i + 1,
                t: *t,
                defect,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QRow {
    pub k: usize,
    pub t: f64,
    /// `sup_window ‖q_t − q_0‖_{h_t}`.
    pub linf_defect: f64,
    /// `max_k |a_k(t) − a_k(0)|`.
    pub coeff_defect: f64,
}

pub fn q_convergence(family: &PinchFamily) -> Result<Vec<QRow>> {
    family.validate()?;
    let q0 = family.q(0.0)?;
    let g0 = family.member_grid(0.0)?;
    let rows = window_rows(family, &g0);
    family
        .t_sequence
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let h = MetricDensity::hyperbolic(family.chart(*t)?);
            let diff = family.q(*t)?.sub(&q0);
            let mut linf: f64 = 0.0;
            for r in &rows {
                for j in 0..g0.n_theta {
                    let x = Complex64::from_polar(g0.rho(*r).exp(), g0.theta(j));
                    linf = linf.max(diff.eval(x).norm() / h.at(x)?.powi(2));
                }
            }
            let coeff_defect = diff.coefficients().map(|(_, a)| a.norm()).fold(0.0, f64::max);
            Ok(QRow {
                k: i + 1,
                t: *t,
                linf_defect: linf,
                coeff_defect,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VRow {
    pub k: usize,
    pub t: f64,
    /// `sup_window |v_t − v_0|` over matching rows.
    pub defect: f64,
    /// `defect(k−1) / defect(k)`; `None` on the first row.
    pub ratio: Option<f64>,
    pub super_constant: f64,
    pub qnorm_m_sup: f64,
}

/// Sup of `|v_t − v_0|` on window rows, matched by their offset from the
/// common top row.
pub fn window_v_defect(family: &PinchFamily, limit: &ConformalFactorField, member: &ConformalFactorField) -> f64 {
    let (g0, g) = (&limit.grid, &member.grid);
    let nt = g0.n_theta;
    window_rows(family, g0)
        .into_iter()
        .flat_map(|i0| {
            let i = g.n_rho - (g0.n_rho - i0);
            (0..nt).map(move |j| (limit.v[i0 * nt + j] - member.v[i * nt + j]).abs())
        })
        .fold(0.0, f64::max)
}

pub fn v_convergence(sweep: &Sweep) -> Vec<VRow> {
    let defects: Vec<f64> = sweep
        .members
        .iter()
        .map(|m| window_v_defect(&sweep.family, &sweep.limit.field, &m.field))
        .collect();
    sweep
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| VRow {
            k: i + 1,
            t: m.t,
            defect: defects[i],
            ratio: (i > 0).then(|| defects[i - 1] / defects[i]),
            super_constant: m.field.super_constant,
            qnorm_m_sup: m.field.qnorm_m_sup,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolRow {
    pub k: usize,
    pub t: f64,
    pub rho: [[f64; 4]; 4],
    /// Frobenius norm of `ρ_t − ρ_0`.
    pub defect: f64,
    /// Conjugation-invariant cross-check: largest change of the full and
    /// factor traces against the limit member.
    pub aligned_defect: f64,
    pub trace: f64,
    pub psl2_traces: Option<(f64, f64)>,
    pub homomorphism_defect: f64,
    pub homomorphism_defect_rel: f64,
}

fn to_rows(m: &nalgebra::Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = m[(i, j)];
        }
    }
    out
}

pub fn holonomy_convergence(sweep: &Sweep) -> Vec<HolRow> {
    let r0 = sweep.limit.hol.rho.matrix();
    let tr0 = sweep.limit.hol.trace();
    sweep
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let r = m.hol.rho.matrix();
            let mut aligned = (m.hol.trace() - tr0).abs();
            if let (Some((a, b)), Some((a0, b0))) = (m.psl2_traces, sweep.limit.psl2_traces) {
                aligned = aligned.max((a - a0).abs()).max((b - b0).abs());
            }
            HolRow {
                k: i + 1,
                t: m.t,
                rho: to_rows(r),
                defect: (r - r0).norm(),
                aligned_defect: aligned,
                trace: m.hol.trace(),
                psl2_traces: m.psl2_traces,
                homomorphism_defect: homomorphism_defect(&m.hol, &m.hol2),
                homomorphism_defect_rel: relative_homomorphism_defect(&m.hol, &m.hol2),
            }
        })
        .collect()
}

/// One CSV/JSON row of a sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub t: f64,
    pub metric_defect: f64,
    pub q_linf_defect: f64,
    pub q_coeff_defect: f64,
    pub qnorm_m_sup: f64,
    pub v_defect: f64,
    pub v_ratio: Option<f64>,
    pub super_constant: f64,
    pub residual_sup: f64,
    pub newton_iterations: usize,
    pub bracket_defect: f64,
    pub hol_defect: f64,
    pub hol_aligned_defect: f64,
    pub trace: f64,
    pub trace_left: Option<f64>,
    pub trace_right: Option<f64>,
    pub core_length: Option<f64>,
    pub hom_defect: f64,
    pub hom_defect_rel: f64,
    pub form_defect: f64,
    pub det_defect: f64,
    pub realness_defect: f64,
    pub gram_drift: f64,
    pub loop_length: f64,
    pub rho: [[f64; 4]; 4],
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    pub residual_sup: f64,
    pub newton_iterations: usize,
    pub super_constant: f64,
    pub trace: f64,
    pub psl2_traces: Option<(f64, f64)>,
    pub form_defect: f64,
    pub det_defect: f64,
    pub rho: [[f64; 4]; 4],
}

/// Monotonicity of a defect column beyond the threshold index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    /// Strictly decreasing for all rows `k ≥ threshold`.
    pub monotone: bool,
    /// `defect(t_k) < defect(t_threshold)` for all `k > threshold`.
    pub cauchy: bool,
    /// Last row divided by the threshold row.
    pub ratio_last_to_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub metric: ColumnSummary,
    pub v: ColumnSummary,
    pub holonomy: ColumnSummary,
    pub flagged_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub config_hash: Option<String>,
    pub family: PinchFamily,
    pub limit: Option<LimitSummary>,
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

pub fn column_summary(rows: &[(usize, f64)], threshold: usize) -> ColumnSummary {
    let tail: Vec<&(usize, f64)> = rows.iter().filter(|(k, _)| *k >= threshold).collect();
    let monotone = tail.windows(2).all(|w| w[1].1 < w[0].1);
    let base = tail.first().map(|r| r.1);
    let cauchy = base.is_some_and(|b| tail.iter().skip(1).all(|r| r.1 < b));
    let ratio = match (base, tail.last()) {
        (Some(b), Some(l)) if tail.len() > 1 => Some(l.1 / b),
        _ => None,
    };
    ColumnSummary {
        monotone,
        cauchy,
        ratio_last_to_threshold: ratio,
    }
}

/// Assembles all tables and flags rows whose diagnostics exceed module
/// tolerances or whose defect columns fail to decrease beyond the threshold.
pub fn sweep_report(sweep: &Sweep, config_hash: Option<&str>) -> Result<SweepReport> {
    let fam = &sweep.family;
    let metric = metric_convergence(fam)?;
    let qrows = q_convergence(fam)?;
    let vrows = v_convergence(sweep);
    let hrows = holonomy_convergence(sweep);
    let tol = fam.tol;
    let mut rows: Vec<SweepRow> = Vec::with_capacity(sweep.members.len());
    for (i, m) in sweep.members.iter().enumerate() {
        let (mr, qr, vr, hr) = (&metric[i], &qrows[i], &vrows[i], &hrows[i]);
        let mut flags = Vec::new();
        let f = &m.field;
        if !(f.residual_sup < tol.solver) {
            flags.push("residual".to_owned());
        }
        if f.bracket_defect() > BRACKET_TOL {
            flags.push("bracket".to_owned());
        }
        if !(m.hol.group.form_defect < tol.group && m.hol.group.det_defect < tol.group) {
            flags.push("group".to_owned());
        }
        if !(hr.homomorphism_defect < tol.homomorphism) {
            flags.push("homomorphism".to_owned());
        }
        if m.hol.realness_defect > tol.realness {
            flags.push("realness".to_owned());
        }
        if !(m.hol.gram_drift < tol.gram_drift * m.hol.loop_length.max(1.0)) {
            flags.push("gram_drift".to_owned());
        }
        let k = i + 1;
        if k > fam.threshold && i > 0 {
            let prev = &rows[i - 1];
            if !(mr.defect < prev.metric_defect) {
                flags.push("nonmonotone_metric".to_owned());
            }
            if !(vr.defect < prev.v_defect) {
                flags.push("nonmonotone_v".to_owned());
            }
            if !(hr.defect < prev.hol_defect) {
                flags.push("nonmonotone_holonomy".to_owned());
            }
            if vr.defect < tol.solver && hr.defect > prev.hol_defect {
                flags.push("inconsistent_v_holonomy".to_owned());
            }
        }
        rows.push(SweepRow {
            k,
            t: m.t,
            metric_defect: mr.defect,
            q_linf_defect: qr.linf_defect,
            q_coeff_defect: qr.coeff_defect,
            qnorm_m_sup: vr.qnorm_m_sup,
            v_defect: vr.defect,
            v_ratio: vr.ratio,
            super_constant: vr.super_constant,
            residual_sup: f.residual_sup,
            newton_iterations: f.iterations,
            bracket_defect: f.bracket_defect(),
            hol_defect: hr.defect,
            hol_aligned_defect: hr.aligned_defect,
            trace: hr.trace,
            trace_left: hr.psl2_traces.map(|p| p.0),
            trace_right: hr.psl2_traces.map(|p| p.1),
            core_length: m.core_length,
            hom_defect: hr.homomorphism_defect,
            hom_defect_rel: hr.homomorphism_defect_rel,
            form_defect: m.hol.group.form_defect,
            det_defect: m.hol.group.det_defect,
            realness_defect: m.hol.realness_defect,
            gram_drift: m.hol.gram_drift,
            loop_length: m.hol.loop_length,
            rho: hr.rho,
            flags,
        });
    }
    let col = |f: fn(&SweepRow) -> f64| -> Vec<(usize, f64)> { rows.iter().map(|r| (r.k, f(r))).collect() };
    let summary = SweepSummary {
        metric: column_summary(&col(|r| r.metric_defect), fam.threshold),
        v: column_summary(&col(|r| r.v_defect), fam.threshold),
        holonomy: column_summary(&col(|r| r.hol_defect), fam.threshold),
        flagged_rows: rows.iter().filter(|r| !r.flags.is_empty()).count(),
    };
    let l = &sweep.limit;
    Ok(SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: config_hash.map(str::to_owned),
        family: fam.clone(),
        limit: Some(LimitSummary {
            residual_sup: l.field.residual_sup,
            newton_iterations: l.field.iterations,
            super_constant: l.field.super_constant,
            trace: l.hol.trace(),
            psl2_traces: l.psl2_traces,
            form_defect: l.hol.group.form_defect,
            det_defect: l.hol.group.det_defect,
            rho: to_rows(l.hol.rho.matrix()),
        }),
        rows,
        summary,
    })
}

impl SweepReport {
    /// Report with no rows, for an empty `t` sequence.
    pub fn empty(family: &PinchFamily, config_hash: Option<&str>) -> Self {
        let none = ColumnSummary {
            monotone: true,
            cauchy: true,
            ratio_last_to_threshold: None,
        };
        SweepReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash: config_hash.map(str::to_owned),
            family: family.clone(),
            limit: None,
            rows: Vec::new(),
            summary: SweepSummary {
                metric: none,
                v: none,
                holonomy: none,
                flagged_rows: 0,
            },
        }
    }
}

/// CSV schema, in column order.
pub const CSV_COLUMNS: [&str; 42] = [
    "k",
    "t",
    "metric_defect",
    "q_linf_defect",
    "q_coeff_defect",
    "qnorm_m_sup",
    "v_defect",
    "v_ratio",
    "super_constant",
    "residual_sup",
    "newton_iterations",
    "bracket_defect",
    "hol_defect",
    "hol_aligned_defect",
    "trace",
    "trace_left",
    "trace_right",
    "core_length",
    "hom_defect",
    "hom_defect_rel",
    "form_defect",
    "det_defect",
    "realness_defect",
    "gram_drift",
    "loop_length",
    "flagged",
    "rho_00",
    "rho_01",
    "rho_02",
    "rho_03",
    "rho_10",
    "rho_11",
    "rho_12",
    "rho_13",
    "rho_20",
    "rho_21",
    "rho_22",
    "rho_23",
    "rho_30",
    "rho_31",
    "rho_32",
    "rho_33",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

pub fn report_csv(report: &SweepReport) -> String {
    let mut out = String::new();
    if let Some(h) = &report.config_hash {
        out.push_str(&format!("# config_hash {h}\n"));
    }
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for r in &report.rows {
        let mut cells = vec![
            r.k.to_string(),
            fmt(r.t),
            fmt(r.metric_defect),
            fmt(r.q_linf_defect),
            fmt(r.q_coeff_defect),
            fmt(r.qnorm_m_sup),
            fmt(r.v_defect),
            fmt_opt(r.v_ratio),
            fmt(r.super_constant),
            fmt(r.residual_sup),
            r.newton_iterations.to_string(),
            fmt(r.bracket_defect),
            fmt(r.hol_defect),
            fmt(r.hol_aligned_defect),
            fmt(r.trace),
            fmt_opt(r.trace_left),
            fmt_opt(r.trace_right),
            fmt_opt(r.core_length),
            fmt(r.hom_defect),
            fmt(r.hom_defect_rel),
            fmt(r.form_defect),
            fmt(r.det_defect),
            fmt(r.realness_defect),
            fmt(r.gram_drift),
            fmt(r.loop_length),
            u8::from(!r.flags.is_empty()).to_string(),
        ];
        cells.extend(r.rho.iter().flatten().map(|x| fmt(*x)));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes `<stem>.csv` and/or `<stem>.json` into `dir`.
pub fn emit_report(report: &SweepReport, dir: &Path, stem: &str, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut paths = Vec::new();
    for f in formats {
        let (path, text) = match f {
            ReportFormat::Csv => (dir.join(format!("{stem}.csv")), report_csv(report)),
            ReportFormat::Json => (
                dir.join(format!("{stem}.json")),
                serde_json::to_string_pretty(report).expect("serializable") + "\n",
            ),
        };
        let mut file = fs::File::create(&path).map_err(|e| LabError::io(&path, e))?;
        file.write_all(text.as_bytes()).map_err(|e| LabError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_report_json(path: &Path) -> Result<SweepReport> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Modulus `(1/2π) log(c²/t)` of the member annulus.
pub fn member_modulus(c: f64, t: f64) -> f64 {
    (c * c / t).ln() / (2.0 * PI)
}
