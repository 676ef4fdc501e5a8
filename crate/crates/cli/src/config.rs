//! Structured problem configuration for the `solve` command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use musielak::grid::{Domain, GridField, Mesh, SpaceGrid};
use musielak::solver::{Coefficient, FluxPreset, InitialData, Problem, ScalarData, SolveTols};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainConfig,
    pub mesh: MeshConfig,
    pub flux: FluxConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub tolerances: TolConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainConfig {
    pub kind: String,
    #[serde(default)]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default = "one")]
    pub y1: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshConfig {
    pub nx: usize,
    #[serde(default)]
    pub ny: usize,
    pub nt: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluxConfig {
    pub preset: String,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub a_coef: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    /// Expression in t, x (and y in 2D), or a path via `f_csv` / `f_bin`.
    #[serde(default)]
    pub f: Option<String>,
    #[serde(default)]
    pub f_csv: Option<PathBuf>,
    #[serde(default)]
    pub f_bin: Option<PathBuf>,
    /// Expression in x (and y), or sampled from the t = 0 slice of a field.
    #[serde(default)]
    pub u0: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TolConfig {
    #[serde(default = "default_newton_abs")]
    pub newton_abs: f64,
    #[serde(default = "default_max_newton")]
    pub max_newton: usize,
    #[serde(default = "default_apriori_tol")]
    pub apriori: f64,
    #[serde(default = "default_decay_fraction")]
    pub decay_fraction: f64,
}

impl Default for TolConfig {
    fn default() -> Self {
        TolConfig {
            newton_abs: default_newton_abs(),
            max_newton: default_max_newton(),
            apriori: default_apriori_tol(),
            decay_fraction: default_decay_fraction(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    /// Data truncation level of the main solve.
    #[serde(default = "default_level")]
    pub n: f64,
    #[serde(default)]
    pub k_list: Vec<f64>,
    #[serde(default)]
    pub l_list: Vec<f64>,
    /// Optional truncation sweep for the pipeline diagnostic.
    #[serde(default)]
    pub n_list: Vec<f64>,
    /// Level-measure envelope anchor; calibrated from the run when absent.
    #[serde(default)]
    pub level_anchor: Option<f64>,
    /// Radius scale inside the envelope shape l / m(c l).
    #[serde(default = "one")]
    pub level_radius_scale: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn default_newton_abs() -> f64 {
    1e-10
}

fn default_max_newton() -> usize {
    60
}

fn default_apriori_tol() -> f64 {
    0.05
}

fn default_decay_fraction() -> f64 {
    1e-3
}

fn default_level() -> f64 {
    8.0
}

pub fn load(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("reading {path:?}: {e}"))?;
    toml::from_str(&text).map_err(|e| format!("parsing {path:?}: {e}"))
}

impl RunConfig {
    pub fn domain(&self) -> Result<Domain, String> {
        match self.domain.kind.as_str() {
            "interval" => Ok(Domain::Interval { a: self.domain.a, b: self.domain.b }),
            "rect" => Ok(Domain::Rect {
                x0: self.domain.a,
                x1: self.domain.b,
                y0: self.domain.y0,
                y1: self.domain.y1,
            }),
            other => Err(format!("domain.kind: unknown kind {other:?}")),
        }
    }

    pub fn mesh(&self) -> Result<Mesh, String> {
        let domain = self.domain()?;
        let space = match domain.dim() {
            1 => SpaceGrid::new_1d(domain, self.mesh.nx),
            _ => {
                if self.mesh.ny == 0 {
                    return Err("mesh.ny: required for rectangular domains".into());
                }
                SpaceGrid::new_2d(domain, self.mesh.nx, self.mesh.ny)
            }
        };
        Ok(Mesh::new(self.domain.horizon, self.mesh.nt, space))
    }

    pub fn flux(&self) -> Result<FluxPreset, String> {
        let b = Coefficient::constant(self.flux.b);
        let preset = match self.flux.preset.as_str() {
            "laplace" => FluxPreset::Laplace,
            "p_laplace" => FluxPreset::PLaplace { b, p: self.flux.p },
            "variable_exponent" => {
                let (lo, hi) = (self.flux.p, if self.flux.q > 0.0 { self.flux.q } else { self.flux.p });
                let mid = 0.5 * (lo + hi);
                let amp = 0.5 * (hi - lo);
                FluxPreset::VariableExponent {
                    b,
                    p: Coefficient::new(lo, hi, move |t, x| {
                        mid + amp * (2.0 * std::f64::consts::PI * x[0]).sin() * (t * 2.0).cos()
                    }),
                }
            }
            "llog" => FluxPreset::Llog { b, alpha: if self.flux.alpha > 0.0 { self.flux.alpha } else { 1.5 } },
            "double_phase" => FluxPreset::DoublePhase {
                b,
                p: self.flux.p,
                q: if self.flux.q > 0.0 { self.flux.q } else { self.flux.p + 0.2 },
                a: holder_weight(self.flux.a_coef, self.flux.alpha, self.domain.horizon),
            },
            "dp_borderline" => FluxPreset::DpBorderline {
                b,
                p: self.flux.p,
                a: holder_weight(self.flux.a_coef, 1.0, self.domain.horizon),
            },
            other => return Err(format!("flux.preset: unknown preset {other:?}")),
        };
        Ok(preset)
    }

    pub fn problem(&self) -> Result<Problem, String> {
        let domain = self.domain()?;
        let dim = domain.dim();
        let f = if let Some(path) = &self.data.f_csv {
            ScalarData::from_field(GridField::read_csv(path).map_err(|e| e.to_string())?)
        } else if let Some(path) = &self.data.f_bin {
            ScalarData::from_field(GridField::read_binary(path).map_err(|e| e.to_string())?)
        } else if let Some(expr) = &self.data.f {
            compile_space_time(expr, dim)?
        } else {
            ScalarData::zero()
        };
        let u0 = match &self.data.u0 {
            Some(expr) => {
                let st = compile_space_time(expr, dim)?;
                InitialData::from_fn(move |x| st.eval(0.0, x))
            }
            None => InitialData::zero(),
        };
        Ok(Problem::new(domain, self.domain.horizon, self.flux()?, f, u0))
    }

    pub fn tols(&self) -> SolveTols {
        SolveTols { newton_abs: self.tolerances.newton_abs, max_newton: self.tolerances.max_newton }
    }
}

fn holder_weight(coef: f64, alpha: f64, horizon: f64) -> Coefficient {
    let coef = if coef > 0.0 { coef } else { 0.5 };
    let alpha = if alpha > 0.0 { alpha } else { 0.5 };
    Coefficient::new(1e-9, coef * 4.0, move |t, x| {
        let dx: f64 = x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>().sqrt();
        let d = (t - 0.5 * horizon).abs() + dx;
        (coef * d.powf(alpha)).max(1e-9)
    })
}

/// Compiles an expression in t, x (and y) into space-time data.
pub fn compile_space_time(expr: &str, dim: usize) -> Result<ScalarData, String> {
    // Fail fast on syntax errors with a probe evaluation.
    let mut probe: BTreeMap<String, f64> = BTreeMap::new();
    probe.insert("t".into(), 0.1);
    probe.insert("x".into(), 0.1);
    if dim == 2 {
        probe.insert("y".into(), 0.1);
    }
    fasteval::ez_eval(expr, &mut probe).map_err(|e| format!("expression {expr:?}: {e}"))?;
    let expr = expr.to_string();
    Ok(ScalarData::from_fn(move |t, x| {
        let mut vars: BTreeMap<String, f64> = BTreeMap::new();
        vars.insert("t".into(), t);
        vars.insert("x".into(), x[0]);
        if x.len() > 1 {
            vars.insert("y".into(), x[1]);
        }
        fasteval::ez_eval(&expr, &mut vars).unwrap_or(f64::NAN)
    }))
}
