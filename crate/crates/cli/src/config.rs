//! Experiment configuration files (TOML).
//!
//! ```toml
//! [problem]
//! resolution = [65, 65]            # nodes per axis
//! lower = [0.0, 0.0]               # optional, unit box by default
//! upper = [1.0, 1.0]
//! components = 1
//! psi = [{ expr = "parabolic_cap", height = 0.25, curvature = 1.0, center = [0.5, 0.5] }]
//! g = [{ expr = "constant", value = 0.0 }]   # or g_file = "boundary.field"
//!
//! [problem.integrand]
//! kind = "double_phase"            # p_power | p_power_regularized | double_phase | holder_modulated
//! p = 2.0
//! q = 2.5
//! coefficient = { expr = "stripes", frequency = 2.0, amplitude = 1.0 }
//!
//! [solver]
//! method = "lbfgs"
//! ladder = [{ epsilon = 0.1, delta = 0.1 }, { epsilon = 0.01, delta = 0.01 }]
//!
//! [penalty]
//! kappa = "auto"                   # or a number
//! safety = 2.0
//!
//! [diagnostics]
//! seminorms = [[0.45, 2.0]]
//! lavrentiev = { eta_width = 0.2, radii = [0.08, 0.04, 0.02] }
//!
//! [output]
//! dir = "out"
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pqobstacle::diagnostics::{DiagnoseOptions, Eta, LavrentievOptions};
use pqobstacle::grid::read_field;
use pqobstacle::solver::default_ladder;
use pqobstacle::{
    BoxDomain, Coefficient, Expr, Field, Grid, Integrand, KappaChoice, LadderRung, Method,
    ObstacleProblem, PenaltyParams, SolveConfig,
};
use serde::{Deserialize, Serialize};

/// Overrides `[output] dir`.
pub const OUTPUT_DIR_ENV: &str = "PQOBST_OUTPUT_DIR";

/// A problem with the configuration or its inputs; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl fmt::Display) -> anyhow::Error {
    ConfigError(msg.to_string()).into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub resolution: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub components: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_file: Option<PathBuf>,
    /// One expression per component.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub psi: Vec<Expr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub g: Vec<Expr>,
    pub integrand: IntegrandSection,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrandName {
    PPower,
    PPowerRegularized,
    DoublePhase,
    HolderModulated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandSection {
    pub kind: IntegrandName,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<Expr>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: Method,
    pub epsilon: f64,
    pub grad_tol: f64,
    pub energy_tol: f64,
    pub max_iters: usize,
    pub ls_shrink: f64,
    pub ls_slope: f64,
    pub lbfgs_memory: usize,
    pub deterministic: bool,
    pub ladder: Vec<LadderRung>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveConfig::default();
        SolverSection {
            method: d.method,
            epsilon: d.epsilon,
            grad_tol: d.grad_tol,
            energy_tol: d.energy_tol,
            max_iters: d.max_iters,
            ls_shrink: d.ls_shrink,
            ls_slope: d.ls_slope,
            lbfgs_memory: d.lbfgs_memory,
            deterministic: d.deterministic,
            ladder: default_ladder(),
        }
    }
}

/// `"auto"` or a number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSetting {
    Value(f64),
    Word(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySection {
    pub kappa: KappaSetting,
    /// Smoothing width for single-rung solves.
    pub delta: f64,
    pub safety: f64,
    /// Largest final `max (psi - u)_+` accepted as success when `kappa = "auto"`.
    pub violation_tol: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        let d = PenaltyParams::default();
        PenaltySection {
            kappa: KappaSetting::Word("auto".into()),
            delta: d.delta,
            safety: d.safety,
            violation_tol: 1e-3,
        }
    }
}

impl PenaltySection {
    pub fn kappa_choice(&self) -> anyhow::Result<KappaChoice> {
        match &self.kappa {
            KappaSetting::Value(v) => Ok(KappaChoice::Fixed(*v)),
            KappaSetting::Word(w) if w == "auto" => Ok(KappaChoice::Auto),
            KappaSetting::Word(w) => Err(config_error(format!(
                "penalty.kappa must be \"auto\" or a number, got {w:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Run diagnostics on the solution after `solve`.
    pub enabled: bool,
    /// `[s, t]` pairs for Nikolskii seminorms of `u` and `V(Du)`.
    pub seminorms: Vec<[f64; 2]>,
    /// Nodes with `u - psi` at most this count as contact.
    pub contact_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lavrentiev: Option<LavrentievSection>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            enabled: true,
            seminorms: vec![[0.45, 2.0]],
            contact_tol: 1e-3,
            lavrentiev: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LavrentievSection {
    /// Boundary-layer width of the cutoff; mollify everywhere when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_width: Option<f64>,
    pub radii: Vec<f64>,
    #[serde(default = "default_feasibility_tol")]
    pub feasibility_tol: f64,
}

fn default_feasibility_tol() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Per-iteration energy and gradient norm.
    pub history: bool,
    /// Plot-ready CSV copy of the solution field.
    pub field_csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("pqobst-out"),
            history: false,
            field_csv: true,
        }
    }
}

/// A parsed configuration together with the directory relative paths refer to.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Loaded { config, base };
        loaded.solve_config()?;
        loaded.diagnose_options()?;
        Ok(loaded)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Output directory, honoring [`OUTPUT_DIR_ENV`].
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.resolve(&self.config.output.dir),
        }
    }

    /// The resolved configuration as TOML, for artifact headers.
    pub fn provenance(&self) -> Vec<String> {
        let body =
            toml::to_string(&self.config).unwrap_or_else(|e| format!("unserializable config: {e}"));
        vec![
            format!("pqobst {}", env!("CARGO_PKG_VERSION")),
            body.trim_end().to_string(),
        ]
    }

    pub fn grid(&self) -> anyhow::Result<Arc<Grid>> {
        let p = &self.config.problem;
        let n = p.resolution.len();
        let lower = p.lower.clone().unwrap_or_else(|| vec![0.0; n]);
        let upper = p.upper.clone().unwrap_or_else(|| vec![1.0; n]);
        if let Some(m) = p.resolution.iter().find(|m| **m < 3) {
            return Err(config_error(format!(
                "problem.resolution: need at least 3 nodes per axis, got {m}"
            )));
        }
        let domain = BoxDomain::new(lower, upper)
            .map_err(|e| config_error(format!("problem domain: {e}")))?;
        let grid = Grid::new(domain, p.resolution.clone())
            .map_err(|e| config_error(format!("problem grid: {e}")))?;
        Ok(Arc::new(grid))
    }

    fn field(
        &self,
        what: &str,
        exprs: &[Expr],
        file: &Option<PathBuf>,
        grid: &Arc<Grid>,
    ) -> anyhow::Result<Field> {
        let nc = self.config.problem.components;
        let field = match (file, exprs.is_empty()) {
            (Some(_), false) => {
                return Err(config_error(format!(
                    "problem: give either {what} or {what}_file, not both"
                )))
            }
            (None, true) => return Err(config_error(format!("problem: {what} is missing"))),
            (Some(path), true) => {
                let path = self.resolve(path);
                let file = fs::File::open(&path)
                    .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
                read_field(std::io::BufReader::new(file))
                    .map_err(|e| config_error(format!("{}: {e}", path.display())))?
            }
            (None, false) => {
                if exprs.len() != nc {
                    return Err(config_error(format!(
                        "problem.{what}: {} expressions for {nc} components",
                        exprs.len()
                    )));
                }
                Field::sample(grid.clone(), exprs)
                    .map_err(|e| config_error(format!("problem.{what}: {e}")))?
            }
        };
        if **field.grid() != **grid || field.components() != nc {
            return Err(config_error(format!(
                "problem.{what}_file does not match the configured grid"
            )));
        }
        Ok(Field::new(grid.clone(), nc, field.into_values())?)
    }

    pub fn integrand(&self, grid: &Arc<Grid>) -> anyhow::Result<Integrand> {
        let s = &self.config.problem.integrand;
        let coefficient = || -> anyhow::Result<Coefficient> {
            match (&s.coefficient, &s.coefficient_file) {
                (Some(e), None) => {
                    e.validate(grid.dim())
                        .map_err(|e| config_error(format!("integrand coefficient: {e}")))?;
                    Ok(Coefficient::Expr(e.clone()))
                }
                (None, Some(path)) => {
                    let path = self.resolve(path);
                    let file = fs::File::open(&path)
                        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
                    let f = read_field(std::io::BufReader::new(file))
                        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
                    if f.components() != 1 || f.grid().dim() != grid.dim() {
                        return Err(config_error("integrand coefficient_file must be a scalar field of the problem dimension"));
                    }
                    Ok(Coefficient::Field(f))
                }
                (None, None) => Err(config_error(format!(
                    "integrand {:?} needs a coefficient",
                    s.kind
                ))),
                (Some(_), Some(_)) => Err(config_error(
                    "integrand: give coefficient or coefficient_file, not both",
                )),
            }
        };
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| config_error(format!("integrand {:?} needs {name}", s.kind)))
        };
        let built = match s.kind {
            IntegrandName::PPower => Integrand::p_power(s.p),
            IntegrandName::PPowerRegularized => {
                Integrand::p_power_regularized(s.p, need(s.mu, "mu")?)
            }
            IntegrandName::DoublePhase => {
                Integrand::double_phase(s.p, need(s.q, "q")?, coefficient()?)
            }
            IntegrandName::HolderModulated => {
                Integrand::holder_modulated(s.p, need(s.alpha, "alpha")?, coefficient()?)
            }
        };
        let mut f = built.map_err(|e| config_error(format!("integrand: {e}")))?;
        if let (
            Some(q),
            IntegrandName::PPower
            | IntegrandName::PPowerRegularized
            | IntegrandName::HolderModulated,
        ) = (s.q, s.kind)
        {
            let mut params = *f.params();
            params.q = q;
            f = f
                .with_params(params)
                .map_err(|e| config_error(format!("integrand: {e}")))?;
        }
        Ok(f)
    }

    pub fn problem(&self) -> anyhow::Result<ObstacleProblem> {
        let grid = self.grid()?;
        let integrand = self.integrand(&grid)?;
        self.problem_on(grid, integrand)
    }

    /// The configured problem on another grid of the same domain.
    pub fn problem_on(
        &self,
        grid: Arc<Grid>,
        integrand: Integrand,
    ) -> anyhow::Result<ObstacleProblem> {
        let p = &self.config.problem;
        let psi = self.field("psi", &p.psi, &p.psi_file, &grid)?;
        let g = self.field("g", &p.g, &p.g_file, &grid)?;
        ObstacleProblem::new(integrand, psi, g).map_err(|e| config_error(format!("problem: {e}")))
    }

    pub fn solve_config(&self) -> anyhow::Result<SolveConfig> {
        let s = &self.config.solver;
        let pen = &self.config.penalty;
        let cfg = SolveConfig {
            epsilon: s.epsilon,
            penalty: PenaltyParams {
                kappa: pen.kappa_choice()?,
                delta: pen.delta,
                safety: pen.safety,
            },
            ladder: s.ladder.clone(),
            grad_tol: s.grad_tol,
            energy_tol: s.energy_tol,
            max_iters: s.max_iters,
            ls_shrink: s.ls_shrink,
            ls_slope: s.ls_slope,
            method: s.method,
            lbfgs_memory: s.lbfgs_memory,
            deterministic: s.deterministic,
        };
        cfg.validate()
            .map_err(|e| config_error(format!("solver: {e}")))?;
        if !(pen.violation_tol >= 0.0) {
            return Err(config_error("penalty.violation_tol must be >= 0"));
        }
        Ok(cfg)
    }

    pub fn diagnose_options(&self) -> anyhow::Result<DiagnoseOptions> {
        let d = &self.config.diagnostics;
        for [s, t] in &d.seminorms {
            if !(*s > 0.0 && *s <= 1.0 && *t >= 1.0) {
                return Err(config_error(format!(
                    "diagnostics.seminorms: need 0 < s <= 1 and t >= 1, got [{s}, {t}]"
                )));
            }
        }
        if !(d.contact_tol >= 0.0) {
            return Err(config_error("diagnostics.contact_tol must be >= 0"));
        }
        let lavrentiev = d.lavrentiev.as_ref().map(|l| LavrentievOptions {
            eta: l
                .eta_width
                .map_or(Eta::One, |width| Eta::BoundaryLayer { width }),
            radii: l.radii.clone(),
            feasibility_tol: l.feasibility_tol,
        });
        Ok(DiagnoseOptions {
            seminorms: d.seminorms.iter().map(|[s, t]| (*s, *t)).collect(),
            lavrentiev,
        })
    }
}
