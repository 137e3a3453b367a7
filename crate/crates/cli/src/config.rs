//! Run configuration: strict TOML schema, validation and the config hash.

use adslab_core::domains::{ConformalChart, MetricDensity, QuadDiff, DEFAULT_TRUNCATION};
use adslab_core::frame::StepControl;
use adslab_core::gauss::{BoundaryCondition, MAX_NEWTON};
use adslab_core::grid::Grid;
use adslab_core::pinch::{default_t_sequence, ExtraCoeff, GridSpec, PinchFamily, ReportFormat, Tolerances};
use adslab_core::verify::VerifySettings;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Frame,
    Holonomy,
    Sweep,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub chart: ChartSection,
    #[serde(default)]
    pub q: QSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub frame: FrameSection,
    #[serde(default)]
    pub family: FamilySection,
    #[serde(default)]
    pub verify: VerifySettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<ReportFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "adslab-out".into(),
            formats: vec![ReportFormat::Csv, ReportFormat::Json],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKindName {
    Annulus,
    Cusp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlavorName {
    Hyperbolic,
    Grafting,
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChartSection {
    pub kind: ChartKindName,
    pub c: f64,
    /// `[re, im]`; ignored for cusps.
    pub t: [f64; 2],
    /// Background density `h` of the Gauss equation.
    pub flavor: FlavorName,
}

impl Default for ChartSection {
    fn default() -> Self {
        ChartSection {
            kind: ChartKindName::Annulus,
            c: 0.5,
            t: [1e-3, 0.0],
            flavor: FlavorName::Hyperbolic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub k: i32,
    pub coeff: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QSection {
    pub residue: [f64; 2],
    pub terms: Vec<Term>,
}

impl Default for QSection {
    fn default() -> Self {
        QSection {
            residue: [1.0, 0.0],
            terms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub n_rho: usize,
    pub n_theta: usize,
    pub cusp_depth: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            n_rho: 64,
            n_theta: 32,
            cusp_depth: -6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iterations: usize,
    /// Fixed Dirichlet value on both edges; the balance condition when absent.
    pub boundary_value: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-10,
            max_iterations: MAX_NEWTON,
            boundary_value: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSection {
    pub integrator_tol: f64,
    pub realness_tol: f64,
    /// Polyline in the strip `ζ = ρ + iθ` for `frame`.
    pub path: Vec<[f64; 2]>,
    /// Loop base point for `holonomy`.
    pub base: [f64; 2],
    pub periods: u32,
}

impl Default for FrameSection {
    fn default() -> Self {
        FrameSection {
            integrator_tol: 1e-10,
            realness_tol: 1e-8,
            path: vec![[-3.0, 0.0], [-2.5, 0.0], [-2.5, 1.0], [-3.0, 1.0], [-3.0, 0.0]],
            base: [-3.45, 0.0],
            periods: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraTerm {
    pub k: i32,
    pub coeff: [f64; 2],
    pub t_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySection {
    pub c: f64,
    pub residue: [f64; 2],
    pub extras: Vec<ExtraTerm>,
    /// Number of default members `t_k = c² 2^{−k}`; ignored if `t_sequence` is set.
    pub members: usize,
    pub t_sequence: Option<Vec<f64>>,
    pub window: [f64; 2],
    pub drho: f64,
    pub n_theta: usize,
    pub cusp_depth: f64,
    pub threshold: usize,
}

impl Default for FamilySection {
    fn default() -> Self {
        FamilySection {
            c: 0.5,
            residue: [1.0, 0.0],
            extras: Vec::new(),
            members: 12,
            t_sequence: None,
            window: [-1.25, -0.85],
            drho: 0.025,
            n_theta: 16,
            cusp_depth: -10.0,
            threshold: 6,
        }
    }
}

/// Error raised while loading a config, with the offending key if known.
#[derive(Debug)]
pub struct ConfigError {
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            key: Some(key.to_owned()),
            message: format!("{key}: {}", message.into()),
        }
    }
}

fn cx(z: [f64; 2]) -> Complex64 {
    Complex64::new(z[0], z[1])
}

/// Dotted key of a TOML deserialization error: the enclosing table header
/// plus the field named in the message or under the error span.
fn error_key(src: &str, err: &toml::de::Error) -> Option<String> {
    let msg = err.message();
    let field = msg
        .split_once("unknown field `")
        .or_else(|| msg.split_once("missing field `"))
        .and_then(|(_, rest)| rest.split_once('`'))
        .map(|(k, _)| k.to_owned());
    let span = err.span()?;
    let before = &src[..span.start.min(src.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let table = before[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_owned());
    let field = field.or_else(|| {
        src[span.clone()]
            .split(['=', '\n'])
            .next()
            .map(|s| s.trim().trim_matches(|c| c == '[' || c == ']').to_owned())
            .filter(|s| !s.is_empty())
    })?;
    if field.contains('.') || table.as_deref().is_some_and(|t| field == t) {
        return Some(field);
    }
    Some(match table {
        Some(t) if !t.is_empty() => format!("{t}.{field}"),
        _ => field,
    })
}

impl RunConfig {
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| ConfigError {
            key: error_key(src, &e),
            message: e.message().to_owned(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_config() -> Self {
        RunConfig::parse(DEFAULT_CONFIG).expect("shipped default config is valid")
    }

    /// Applies the `--tol` override to every solver tolerance.
    pub fn set_tol(&mut self, tol: f64) {
        self.solver.tol = tol;
        self.verify.solver_tol = tol;
    }

    /// SHA-256 of the canonical JSON form, excluding output settings.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let text = serde_json::to_string(&c).expect("serializable");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |key: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::at(key, format!("must be positive and finite, got {x}")))
            }
        };
        pos("solver.tol", self.solver.tol)?;
        pos("frame.integrator_tol", self.frame.integrator_tol)?;
        pos("frame.realness_tol", self.frame.realness_tol)?;
        pos("verify.solver_tol", self.verify.solver_tol)?;
        pos("verify.integrator_tol", self.verify.integrator_tol)?;
        if self.solver.max_iterations == 0 {
            return Err(ConfigError::at("solver.max_iterations", "must be at least 1"));
        }
        if self.frame.periods == 0 {
            return Err(ConfigError::at("frame.periods", "must be at least 1"));
        }
        if self.frame.path.len() < 2 {
            return Err(ConfigError::at("frame.path", "needs at least two points"));
        }
        let chart = self.chart().map_err(|e| ConfigError::at("chart", e.to_string()))?;
        self.q()
            .and_then(|q| chart.admits(&q))
            .map_err(|e| ConfigError::at("q", e.to_string()))?;
        self.grid_on(&chart).map_err(|e| ConfigError::at("grid", e.to_string()))?;
        self.family()
            .and_then(|f| f.validate().map(|_| f))
            .map_err(|e| ConfigError::at("family", e.to_string()))?;
        Ok(())
    }

    pub fn chart(&self) -> adslab_core::Result<ConformalChart> {
        match self.chart.kind {
            ChartKindName::Annulus => ConformalChart::annulus(cx(self.chart.t), self.chart.c),
            ChartKindName::Cusp => ConformalChart::cusp(self.chart.c),
        }
    }

    pub fn density(&self) -> adslab_core::Result<MetricDensity> {
        let chart = self.chart()?;
        Ok(match self.chart.flavor {
            FlavorName::Hyperbolic => MetricDensity::hyperbolic(chart),
            FlavorName::Grafting => MetricDensity::grafting(chart),
            FlavorName::Perturbed => MetricDensity::perturbed(chart),
        })
    }

    pub fn q(&self) -> adslab_core::Result<QuadDiff> {
        let terms = std::iter::once((-2, cx(self.q.residue))).chain(self.q.terms.iter().map(|t| (t.k, cx(t.coeff))));
        QuadDiff::new(terms, DEFAULT_TRUNCATION)
    }

    fn grid_on(&self, chart: &ConformalChart) -> adslab_core::Result<Grid> {
        let g = Grid::for_chart(chart, self.grid.n_rho, self.grid.n_theta, self.grid.cusp_depth)?;
        g.check_inside(chart)?;
        Ok(g)
    }

    pub fn grid(&self) -> adslab_core::Result<Grid> {
        self.grid_on(&self.chart()?)
    }

    pub fn boundary(&self) -> BoundaryCondition {
        match self.solver.boundary_value {
            Some(value) => BoundaryCondition::Fixed { value },
            None => BoundaryCondition::Balance,
        }
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            tol: self.frame.integrator_tol,
            ..StepControl::default()
        }
    }

    pub fn family(&self) -> adslab_core::Result<PinchFamily> {
        let f = &self.family;
        Ok(PinchFamily {
            c: f.c,
            residue: cx(f.residue),
            extras: f
                .extras
                .iter()
                .map(|e| ExtraCoeff {
                    k: e.k,
                    coeff: cx(e.coeff),
                    t_power: e.t_power,
                })
                .collect(),
            t_sequence: f.t_sequence.clone().unwrap_or_else(|| default_t_sequence(f.c, f.members)),
            window: (f.window[0], f.window[1]),
            grid: GridSpec {
                drho: f.drho,
                n_theta: f.n_theta,
                cusp_depth: f.cusp_depth,
            },
            threshold: f.threshold,
            tol: Tolerances {
                solver: self.solver.tol,
                integrator: self.frame.integrator_tol,
                realness: self.frame.realness_tol,
                ..Tolerances::default()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_matches_defaults() {
        let cfg = RunConfig::default_config();
        assert_eq!(cfg.command, Command::Verify);
        assert_eq!(cfg.chart, ChartSection::default());
        assert_eq!(cfg.grid, GridSection::default());
        assert_eq!(cfg.family, FamilySection::default());
        assert_eq!(cfg.verify, VerifySettings::default());
        assert_eq!(cfg.family().unwrap(), PinchFamily::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::parse("command = \"solve\"\n[grid]\nn_rho = 64\nnrho = 3\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("grid.nrho"));
        let e = RunConfig::parse("command = \"solve\"\nbogus = 1\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("bogus"));
        let e = RunConfig::parse("command = \"solve\"\n[verify]\nseeds = 1\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("verify.seeds"));
    }

    #[test]
    fn invalid_values_are_named() {
        let e = RunConfig::parse("command = \"solve\"\n[solver]\ntol = -1.0\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("solver.tol"));
        let e = RunConfig::parse("command = \"solve\"\n[chart]\nkind = \"cusp\"\n[q]\nterms = [{ k = 0, coeff = [1.0, 0.0] }]\n")
            .unwrap_err();
        assert_eq!(e.key.as_deref(), Some("q"));
        let e = RunConfig::parse("command = \"solve\"\n[family]\nwindow = [-1.0, -0.5]\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("family"));
    }

    #[test]
    fn hash_tracks_content_but_not_output() {
        let a = RunConfig::default_config();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.set_tol(1e-9);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
