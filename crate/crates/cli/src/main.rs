mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adslab_core::domains::MetricDensity;
use adslab_core::frame::{holonomy, integrate_frame, FrameData, FrameState, HolonomyRecord};
use adslab_core::gauss::{solve_2d_with, write_field, ConformalFactorField};
use adslab_core::pinch::{emit_report, run_sweep, sweep_report, SweepReport};
use adslab_core::verify::run_suite;
use adslab_core::{ErrorCategory, LabError};
use clap::Parser;
use num_complex::Complex64;
use serde::Serialize;

use config::{Command, ConfigError, RunConfig};

const EXIT_FAILED_CHECKS: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "adslab", version, about = "Maximal surfaces in AdS³, holonomy and pinching sweeps")]
struct Cli {
    /// Command to run; overrides `command` in the config.
    #[arg(value_enum)]
    command: Option<Command>,
    /// TOML run configuration (the shipped default when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "ADSLAB_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides every solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    schema_version: u32,
    error: &'a str,
    category: &'a str,
    exit_code: u8,
    key: Option<&'a str>,
    message: String,
}

enum Failure {
    Config(ConfigError),
    Lab(LabError),
    Checks(usize),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Lab(e)
    }
}

impl Failure {
    fn report(&self) -> u8 {
        let (kind, category, code, key, message) = match self {
            Failure::Config(e) => ("config", "config", EXIT_CONFIG, e.key.as_deref(), e.message.clone()),
            Failure::Lab(e) => {
                let (cat, code) = match e.category() {
                    ErrorCategory::Config => ("config", EXIT_CONFIG),
                    ErrorCategory::Numeric => ("numeric", EXIT_NUMERIC),
                    ErrorCategory::Io => ("io", EXIT_IO),
                };
                (e.kind(), cat, code, None, e.to_string())
            }
            Failure::Checks(n) => (
                "verification_failed",
                "verification",
                EXIT_FAILED_CHECKS,
                None,
                format!("{n} invariant check(s) failed"),
            ),
        };
        let rec = ErrorRecord {
            schema_version: 1,
            error: kind,
            category,
            exit_code: code,
            key,
            message,
        };
        eprintln!("{}", serde_json::to_string(&rec).expect("serializable"));
        code
    }
}

fn load(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let src = fs::read_to_string(p).map_err(|e| Failure::Lab(LabError::io(p, e)))?;
            RunConfig::parse(&src).map_err(Failure::Config)?
        }
        None => RunConfig::default_config(),
    };
    if let Some(c) = cli.command {
        cfg.command = c;
    }
    if let Some(t) = cli.tol {
        cfg.set_tol(t);
        cfg.validate().map_err(Failure::Config)?;
    }
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct FrameRecord {
    schema_version: u32,
    config_hash: String,
    path: Vec<[f64; 2]>,
    /// Final frame, `[re, im]` per entry, row-major.
    frame: Vec<[[f64; 2]; 4]>,
    length: f64,
    steps: usize,
    rejected: usize,
    gram_drift: f64,
}

#[derive(Debug, Serialize)]
struct VerifyRecord<'a> {
    schema_version: u32,
    config_hash: &'a str,
    all_passed: bool,
    checks: &'a [adslab_core::verify::Check],
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), LabError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn solve(cfg: &RunConfig) -> Result<(ConformalFactorField, MetricDensity), LabError> {
    let h = cfg.density()?;
    let m = MetricDensity::perturbed(h.chart);
    let field = solve_2d_with(
        &h,
        &m,
        &cfg.q()?,
        &cfg.grid()?,
        cfg.boundary(),
        cfg.solver.tol,
        cfg.solver.max_iterations,
    )?;
    Ok((field, h))
}

fn run(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let hash = cfg.hash();
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    match cfg.command {
        Command::Solve => {
            let (field, _) = solve(cfg)?;
            let path = out.join("field.txt");
            write_field(&path, &field, Some(&hash))?;
            println!(
                "solve: {}×{} grid, residual {:.3e}, {} Newton steps, C = {} -> {}",
                field.grid.n_rho,
                field.grid.n_theta,
                field.residual_sup,
                field.iterations,
                field.super_constant,
                path.display()
            );
        }
        Command::Frame => {
            let (field, h) = solve(cfg)?;
            let data = FrameData::new(&field, &h)?;
            let path: Vec<Complex64> = cfg.frame.path.iter().map(|p| Complex64::new(p[0], p[1])).collect();
            let r = integrate_frame(&data, &path, &FrameState::standard(path[0]), &cfg.step_control())?;
            let rec = FrameRecord {
                schema_version: 1,
                config_hash: hash.clone(),
                path: cfg.frame.path.clone(),
                frame: (0..4)
                    .map(|i| {
                        let mut row = [[0.0; 2]; 4];
                        for (j, x) in row.iter_mut().enumerate() {
                            let z = r.state.f[(i, j)];
                            *x = [z.re, z.im];
                        }
                        row
                    })
                    .collect(),
                length: r.length,
                steps: r.steps,
                rejected: r.rejected,
                gram_drift: r.gram_drift,
            };
            let p = out.join("frame.json");
            write_json(&p, &rec)?;
            println!(
                "frame: length {:.4}, {} steps, Gram drift {:.3e} -> {}",
                r.length,
                r.steps,
                r.gram_drift,
                p.display()
            );
        }
        Command::Holonomy => {
            let (field, h) = solve(cfg)?;
            let data = FrameData::new(&field, &h)?;
            let base = Complex64::new(cfg.frame.base[0], cfg.frame.base[1]);
            let hol = holonomy(&data, base, cfg.frame.periods, &cfg.step_control(), cfg.frame.realness_tol)?;
            let rec = HolonomyRecord::new(&hol, Some(&hash));
            let p = out.join("holonomy.json");
            rec.write(&p)?;
            println!(
                "holonomy: trace {:.10e}, psl2 traces {:?}, form defect {:.3e} -> {}",
                rec.trace,
                rec.psl2_traces,
                rec.form_defect,
                p.display()
            );
        }
        Command::Sweep => {
            let family = cfg.family()?;
            let report = if family.t_sequence.is_empty() {
                SweepReport::empty(&family, Some(&hash))
            } else {
                sweep_report(&run_sweep(&family)?, Some(&hash))?
            };
            let paths = emit_report(&report, out, "sweep", &cfg.output.formats)?;
            println!(
                "sweep: {} members, {} flagged, v monotone {}, holonomy monotone {}",
                report.rows.len(),
                report.summary.flagged_rows,
                report.summary.v.monotone,
                report.summary.holonomy.monotone
            );
            for p in paths {
                println!("  {}", p.display());
            }
        }
        Command::Verify => {
            let report = run_suite(&cfg.verify)?;
            print!("{}", report.table());
            let p = out.join("verify.json");
            write_json(
                &p,
                &VerifyRecord {
                    schema_version: 1,
                    config_hash: &hash,
                    all_passed: report.all_passed(),
                    checks: &report.checks,
                },
            )?;
            let failed = report.checks.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(Failure::Checks(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return ExitCode::from(
                Failure::Config(ConfigError {
                    key: Some("threads".into()),
                    message: e.to_string(),
                })
                .report(),
            );
        }
    }
    let result = load(&cli).and_then(|cfg| {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        run(&cfg, &out)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => ExitCode::from(f.report()),
    }
}
