//! Run configuration: strict TOML mapped onto problems, signals and solver knobs.

use rough_rbsde::flow::ExprField;
use rough_rbsde::pde::{Boundary, PdeConfig, Scheme};
use rough_rbsde::problem::{catalog, Formulas, ProblemSpec};
use rough_rbsde::rbsde::{MonteCarlo, SolverConfig};
use rough_rbsde::regression::Basis;
use rough_rbsde::roughpath::{sample_signal, DrivingSignal, SignalKind, TimeGrid};
use rough_rbsde::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalConfig>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeSection>,
    #[serde(default)]
    pub stop: StopSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeSection>,
}

fn default_seed() -> u64 {
    1
}

/// Either `catalog = "<key>"` with optional parameter overrides, or inline formulas.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// H components as formulas in x1..xd and y; overrides the catalog field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_c: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_l: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    /// brownian, fbm or formula.
    pub kind: String,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<Vec<String>>,
    /// Number of cells of the signal grid.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Dyadic level of the approximant used by the solvers (default: the signal grid itself).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx_level: Option<u32>,
    /// Levels reported by `lift` and used by PDE limits.
    #[serde(default)]
    pub levels: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_delta: Option<f64>,
}

fn one() -> usize {
    1
}

fn default_points() -> usize {
    1024
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<String>,
    /// reflected, penalized or unreflected.
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_penalties")]
    pub penalties: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_delta: Option<f64>,
    #[serde(default = "default_iter_max")]
    pub iter_max: usize,
    #[serde(default = "default_tol_picard")]
    pub tol_picard: f64,
}

fn default_steps() -> usize {
    200
}
fn default_paths() -> usize {
    10_000
}
fn default_mode() -> String {
    "reflected".into()
}
fn default_penalties() -> Vec<f64> {
    (0..9).map(|k| (1u32 << k) as f64).collect()
}
fn default_iter_max() -> usize {
    50
}
fn default_tol_picard() -> f64 {
    1e-10
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            paths: default_paths(),
            basis: None,
            mode: default_mode(),
            penalties: default_penalties(),
            split_delta: None,
            iter_max: default_iter_max(),
            tol_picard: default_tol_picard(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    pub n_t: usize,
    /// implicit or explicit.
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// dirichlet or extrapolate.
    #[serde(default = "default_boundary")]
    pub boundary: String,
    /// Points where u(0, x) is compared with Monte Carlo.
    #[serde(default)]
    pub probes: Vec<f64>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_k_stderr")]
    pub k_stderr: f64,
    /// Window for Cauchy differences along `signal.levels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Write every k-th time layer to pde.csv.
    #[serde(default = "default_stride")]
    pub csv_stride: usize,
}

fn default_scheme() -> String {
    "implicit".into()
}
fn default_boundary() -> String {
    "dirichlet".into()
}
fn default_rel_tol() -> f64 {
    0.015
}
fn default_k_stderr() -> f64 {
    3.0
}
fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSection {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_k_stderr")]
    pub k_stderr: f64,
}

impl Default for StopSection {
    fn default() -> Self {
        Self {
            rel_tol: default_rel_tol(),
            k_stderr: default_k_stderr(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    /// signal-levels, driver-shift or constant.
    pub family: String,
    pub levels: Vec<u32>,
    pub reference: u32,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let mut spec = match &p.catalog {
            Some(key) => {
                let inline = [
                    ("dim", p.dim.is_some()),
                    ("driver", p.driver.is_some()),
                    ("drift", p.drift.is_some()),
                    ("diffusion", p.diffusion.is_some()),
                    ("obstacle", p.obstacle.is_some()),
                    ("terminal", p.terminal.is_some()),
                    ("signal_dim", p.signal_dim.is_some()),
                    ("growth_c", p.growth_c.is_some()),
                    ("c0", p.c0.is_some()),
                    ("c_s", p.c_s.is_some()),
                    ("c_xi", p.c_xi.is_some()),
                    ("c_l", p.c_l.is_some()),
                ];
                if let Some((k, _)) = inline.iter().find(|(_, set)| *set) {
                    return Err(cfg_err(format!("problem.{k} only applies to inline problems, not to a catalog entry")));
                }
                let horizon = p.horizon.unwrap_or(1.0);
                let spec = match key.as_str() {
                    "american_put" => {
                        let d = catalog::PutParams::default();
                        catalog::american_put(catalog::PutParams {
                            rate: p.rate.unwrap_or(d.rate),
                            vol: p.vol.unwrap_or(d.vol),
                            strike: p.strike.unwrap_or(d.strike),
                            spot: p.x0.as_ref().and_then(|v| v.first().copied()).unwrap_or(d.spot),
                            horizon,
                        })
                    }
                    "heat_kernel" => catalog::heat_kernel(horizon),
                    "martingale" => catalog::martingale(0.0, horizon),
                    "linear_flow" => catalog::linear_flow(p.eps.unwrap_or(1.0), horizon),
                    "constant" => catalog::constant(p.value.unwrap_or(1.0), horizon),
                    other => catalog::by_name(other)?,
                };
                let unused = match key.as_str() {
                    "american_put" => [p.eps.is_some(), p.value.is_some()],
                    "linear_flow" => [p.rate.or(p.vol).or(p.strike).is_some(), p.value.is_some()],
                    "constant" => [p.rate.or(p.vol).or(p.strike).is_some(), p.eps.is_some()],
                    _ => [p.rate.or(p.vol).or(p.strike).is_some(), p.eps.or(p.value).is_some()],
                };
                if unused.iter().any(|&u| u) {
                    return Err(cfg_err(format!("a parameter in [problem] does not apply to catalog entry '{key}'")));
                }
                spec
            }
            None => {
                let need = |v: &Option<String>, k: &str| v.clone().ok_or_else(|| cfg_err(format!("problem.{k} is required")));
                let dim = p.dim.ok_or_else(|| cfg_err("problem.dim or problem.catalog is required"))?;
                let fm = Formulas {
                    dim,
                    horizon: p.horizon.unwrap_or(1.0),
                    x0: p.x0.clone().unwrap_or_else(|| vec![0.0; dim]),
                    driver: p.driver.clone().unwrap_or_else(|| "0".into()),
                    drift: p.drift.clone().unwrap_or_else(|| vec!["0".into(); dim]),
                    diffusion: p.diffusion.clone().ok_or_else(|| cfg_err("problem.diffusion is required"))?,
                    obstacle: p.obstacle.clone(),
                    terminal: need(&p.terminal, "terminal")?,
                    field: p.field.clone().unwrap_or_default(),
                    signal_dim: p.signal_dim.unwrap_or(1),
                    growth_c: need(&p.growth_c, "growth_c")?,
                    c0: p.c0.unwrap_or(0.0),
                    c_s: p.c_s.unwrap_or(f64::INFINITY),
                    c_xi: p.c_xi.ok_or_else(|| cfg_err("problem.c_xi is required"))?,
                    c_l: p.c_l.unwrap_or(0.0),
                };
                return ProblemSpec::from_formulas("inline", &fm);
            }
        };
        if let Some(x0) = &p.x0 {
            spec = spec.with_x0(x0.clone());
        }
        if let Some(field) = &p.field {
            let refs: Vec<&str> = field.iter().map(String::as_str).collect();
            let field = ExprField::parse(&refs, spec.dim)?;
            spec = spec.with_field(Arc::new(field));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn signal_seed(&self) -> u64 {
        self.signal.as_ref().and_then(|s| s.seed).unwrap_or(self.seed)
    }

    /// The configured signal on [0, horizon], or None.
    pub fn signal(&self, horizon: f64) -> Result<Option<DrivingSignal>> {
        let Some(s) = &self.signal else {
            return Ok(None);
        };
        let grid = TimeGrid::uniform(horizon, s.points)?;
        let kind = match s.kind.as_str() {
            "brownian" => SignalKind::Brownian { dim: s.dim },
            "fbm" => SignalKind::Fractional {
                hurst: s.hurst.ok_or_else(|| cfg_err("signal.hurst is required for fbm"))?,
                dim: s.dim,
            },
            "formula" => {
                let f = s.formula.as_ref().ok_or_else(|| cfg_err("signal.formula is required"))?;
                SignalKind::Formula(
                    f.iter()
                        .map(|e| rough_rbsde::expr::Expr::parse(e))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            other => return Err(cfg_err(format!("unknown signal kind '{other}' (brownian, fbm, formula)"))),
        };
        if s.kind != "fbm" && s.hurst.is_some() {
            return Err(cfg_err("signal.hurst only applies to fbm"));
        }
        let sig = sample_signal(&kind, &grid, self.signal_seed())?;
        Ok(Some(match s.p {
            Some(p) => sig.with_p(p)?,
            None => sig,
        }))
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        Ok(SolverConfig {
            basis: s.basis.as_deref().map(Basis::parse).transpose()?,
            iter_max: s.iter_max,
            tol_picard: s.tol_picard,
            split_delta: s.split_delta.unwrap_or(f64::INFINITY),
            approx_level: self.signal.as_ref().and_then(|g| g.approx_level),
            ..SolverConfig::default()
        })
    }

    pub fn monte_carlo(&self) -> MonteCarlo {
        MonteCarlo {
            steps: self.solver.steps,
            paths: self.solver.paths,
            seed: self.seed,
        }
    }

    pub fn pde(&self) -> Result<(PdeConfig, &PdeSection)> {
        let s = self.pde.as_ref().ok_or_else(|| cfg_err("the [pde] section is required"))?;
        let mut cfg = PdeConfig::new(s.x_lo, s.x_hi, s.n_x, s.n_t);
        cfg.scheme = match s.scheme.as_str() {
            "implicit" => Scheme::ImplicitPolicy,
            "explicit" => Scheme::ExplicitProjected,
            other => return Err(cfg_err(format!("unknown pde.scheme '{other}' (implicit, explicit)"))),
        };
        cfg.boundary = match s.boundary.as_str() {
            "dirichlet" => Boundary::Dirichlet,
            "extrapolate" => Boundary::LinearExtrapolation,
            other => return Err(cfg_err(format!("unknown pde.boundary '{other}' (dirichlet, extrapolate)"))),
        };
        if s.csv_stride == 0 {
            return Err(cfg_err("pde.csv_stride must be positive"));
        }
        Ok((cfg, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[problem]\ncatalog = \"american_put\"\nstrik = 40\n").unwrap_err();
        assert!(err.to_string().contains("strik"), "{err}");
        let err = RunConfig::parse("[problem]\ncatalog = \"constant\"\n[solver]\npath = 3\n").unwrap_err();
        assert!(err.to_string().contains("path"), "{err}");
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = RunConfig::parse(
            "seed = 3\n[problem]\ncatalog = \"american_put\"\nstrike = 44.0\n[signal]\nkind = \"brownian\"\nlevels = [2, 3]\n",
        )
        .unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        let spec = cfg.problem().unwrap();
        assert_eq!(spec.terminal_at(&[40.0]), 4.0);
    }

    #[test]
    fn inline_and_catalog_keys_do_not_mix() {
        let cfg = RunConfig::parse("[problem]\ncatalog = \"constant\"\ndriver = \"y\"\n").unwrap();
        assert!(cfg.problem().is_err());
        let cfg = RunConfig::parse("[problem]\ncatalog = \"constant\"\nstrike = 3.0\n").unwrap();
        assert!(cfg.problem().is_err());
    }

    #[test]
    fn inline_problem_builds() {
        let cfg = RunConfig::parse(
            r#"
[problem]
dim = 1
x0 = [1.0]
diffusion = ["1"]
terminal = "x1"
growth_c = "0"
c_xi = 1e9
"#,
        )
        .unwrap();
        let spec = cfg.problem().unwrap();
        assert_eq!(spec.terminal_at(&[2.5]), 2.5);
    }
}
