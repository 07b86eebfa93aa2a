//! Scenario files: flat TOML with typed lists.

use std::path::Path;

use ordstat_core::distributions::{profile_from_mip, MipSpec};
use ordstat_core::{ComplexityBudget, FadingProfile, McConfig, PartialSumSpec, QuadratureConfig};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Computation {
    Capture,
    Outage,
    Pdf,
    Validate,
}

impl Computation {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "capture" => Computation::Capture,
            "outage" => Computation::Outage,
            "pdf" | "joint-pdf" => Computation::Pdf,
            "validate" => Computation::Validate,
            other => return Err(CliError::Config(format!("unknown computation `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Computation::Capture => "capture",
            Computation::Outage => "outage",
            Computation::Pdf => "pdf",
            Computation::Validate => "validate",
        }
    }
}

/// File layout as written by users; every key is optional here and checked in [`ScenarioConfig::from_raw`].
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub computation: Option<String>,
    pub averages: Option<Vec<f64>>,
    pub mip_gamma1: Option<f64>,
    pub mip_delta: Option<f64>,
    pub mip_n: Option<usize>,
    pub m: Option<Vec<usize>>,
    pub ns: Option<usize>,
    pub shape: Option<String>,
    pub t_start: Option<f64>,
    pub t_stop: Option<f64>,
    pub t_steps: Option<usize>,
    pub alpha: Option<Vec<f64>>,
    pub z_start: Option<Vec<f64>>,
    pub z_stop: Option<Vec<f64>>,
    pub z_points: Option<Vec<usize>>,
    pub mc_trials: Option<u64>,
    pub mc_shards: Option<usize>,
    pub seed: Option<u64>,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub max_subdivisions: Option<usize>,
    pub max_n: Option<usize>,
    pub hist_bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.points)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub computation: Computation,
    pub profile: FadingProfile,
    pub ms: Vec<usize>,
    pub ns: Option<usize>,
    pub shape: Option<PartialSumSpec>,
    pub thresholds: Vec<f64>,
    pub alphas: Vec<f64>,
    pub grid: Vec<GridAxis>,
    /// Monte Carlo settings; `None` disables the Monte Carlo columns.
    pub mc: Option<McConfig>,
    pub quad: QuadratureConfig,
    pub budget: ComplexityBudget,
    pub hist_bins: usize,
}

const DEFAULT_VALIDATE_TRIALS: u64 = 400_000;

fn need<T>(v: Option<T>, key: &str, what: Computation) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("`{key}` is required for {}", what.name())))
}

fn parse_shape(name: &str, m: Option<usize>, ns: Option<usize>) -> Result<PartialSumSpec, CliError> {
    let need_m = || m.ok_or_else(|| CliError::Config(format!("shape `{name}` needs exactly one `m`")));
    let need_ns = || ns.ok_or_else(|| CliError::Config(format!("shape `{name}` needs `ns`")));
    Ok(match name {
        "total_sum" => PartialSumSpec::TotalSum,
        "head_tail" => PartialSumSpec::HeadTail { m: need_m()? },
        "pivot_rest" => PartialSumSpec::PivotRest { m: need_m()? },
        "best_sum" => PartialSumSpec::BestSum { ns: need_ns()? },
        "best_sum_pivot" => PartialSumSpec::BestSumPivot { ns: need_ns()? },
        "best_pivot" => PartialSumSpec::BestPivot {
            m: need_m()?,
            ns: need_ns()?,
        },
        "best_pivot_rest" => PartialSumSpec::BestPivotRest {
            m: need_m()?,
            ns: need_ns()?,
        },
        "best_head_tail" => PartialSumSpec::BestHeadTail {
            m: need_m()?,
            ns: need_ns()?,
        },
        other => return Err(CliError::Config(format!("unknown shape `{other}`"))),
    })
}

impl ScenarioConfig {
    pub fn load(path: &Path, computation: Computation) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, computation)
    }

    pub fn parse(text: &str, computation: Computation) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_raw(raw, computation)
    }

    pub fn from_raw(raw: RawConfig, computation: Computation) -> Result<Self, CliError> {
        if let Some(c) = &raw.computation {
            let declared = Computation::parse(c)?;
            if declared != computation {
                return Err(CliError::Config(format!(
                    "config declares computation `{c}` but `{}` was requested",
                    computation.name()
                )));
            }
        }
        let profile = match (&raw.averages, raw.mip_gamma1, raw.mip_delta, raw.mip_n) {
            (Some(a), None, None, None) => FadingProfile::new(a.clone()),
            (None, Some(g), Some(d), Some(n)) => profile_from_mip(MipSpec::new(g, d, n)),
            _ => {
                return Err(CliError::Config(
                    "give either `averages` or all of `mip_gamma1`, `mip_delta`, `mip_n`".into(),
                ))
            }
        }
        .map_err(|e| CliError::Config(format!("profile rejected: {e}")))?;
        let n = profile.len();
        let budget = ComplexityBudget {
            max_n: raw.max_n.unwrap_or(ComplexityBudget::default().max_n),
        };
        if n > budget.max_n {
            return Err(CliError::Config(format!(
                "N = {n} exceeds the complexity budget N <= {}; raise `max_n` to force it",
                budget.max_n
            )));
        }

        let mut quad = QuadratureConfig::default();
        if let Some(t) = raw.abs_tol {
            quad.abs_tol = t;
        }
        if let Some(t) = raw.rel_tol {
            quad.rel_tol = t;
        }
        if let Some(s) = raw.max_subdivisions {
            quad.max_subdivisions = s;
        }
        quad.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let seed = raw.seed.unwrap_or(McConfig::default().seed);
        let shards = raw.mc_shards.unwrap_or(McConfig::default().shards);
        let trials = match (raw.mc_trials, computation) {
            (Some(0), _) => None,
            (Some(t), _) => Some(t),
            (None, Computation::Validate) => Some(DEFAULT_VALIDATE_TRIALS),
            (None, _) => None,
        };
        let mc = match trials {
            Some(trials) => {
                let mc = McConfig { trials, seed, shards };
                mc.validate().map_err(|e| CliError::Config(e.to_string()))?;
                Some(mc)
            }
            None => None,
        };

        let thresholds = match (raw.t_start, raw.t_stop, raw.t_steps) {
            (Some(a), Some(b), Some(k)) if k >= 1 => linspace(a, b, k),
            (None, None, None) => Vec::new(),
            _ => return Err(CliError::Config("`t_start`, `t_stop` and `t_steps >= 1` go together".into())),
        };
        let ms = raw.m.clone().unwrap_or_default();
        let alphas = raw.alpha.clone().unwrap_or_else(|| vec![0.0]);

        let mut cfg = ScenarioConfig {
            computation,
            profile,
            ms,
            ns: raw.ns,
            shape: None,
            thresholds,
            alphas,
            grid: Vec::new(),
            mc,
            quad,
            budget,
            hist_bins: raw.hist_bins.unwrap_or(12),
        };

        match computation {
            Computation::Capture | Computation::Outage | Computation::Validate => {
                let ms = need(raw.m.as_ref(), "m", computation)?;
                if ms.is_empty() || ms.iter().any(|&m| m < 1 || m >= n) {
                    return Err(CliError::Config(format!("every `m` must satisfy 1 <= m < N = {n}, got {ms:?}")));
                }
                if cfg.thresholds.is_empty() {
                    return Err(CliError::Config(format!(
                        "`t_start`, `t_stop`, `t_steps` are required for {}",
                        computation.name()
                    )));
                }
                let bad_t = match computation {
                    Computation::Capture => cfg.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)),
                    Computation::Validate => cfg.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)),
                    _ => cfg.thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)),
                };
                if bad_t {
                    return Err(CliError::Config(format!("thresholds out of range: {:?}", cfg.thresholds)));
                }
                if cfg.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(CliError::Config(format!("`alpha` values must lie in [0, 1], got {:?}", cfg.alphas)));
                }
            }
            Computation::Pdf => {
                let name = need(raw.shape.as_deref(), "shape", computation)?;
                let m = match raw.m.as_deref() {
                    None => None,
                    Some([m]) => Some(*m),
                    Some(_) => return Err(CliError::Config("pdf takes a single `m`".into())),
                };
                let shape = parse_shape(name, m, raw.ns)?;
                shape.validate(n).map_err(|e| CliError::Config(e.to_string()))?;
                let starts = need(raw.z_start.as_ref(), "z_start", computation)?;
                let stops = need(raw.z_stop.as_ref(), "z_stop", computation)?;
                let points = need(raw.z_points.as_ref(), "z_points", computation)?;
                let d = shape.dimension();
                if starts.len() != d || stops.len() != d || points.len() != d {
                    return Err(CliError::Config(format!(
                        "shape `{name}` is {d}-dimensional; `z_start`, `z_stop`, `z_points` need {d} entries each"
                    )));
                }
                if points.iter().any(|&p| p == 0) {
                    return Err(CliError::Config("`z_points` entries must be positive".into()));
                }
                cfg.grid = (0..d)
                    .map(|k| GridAxis {
                        start: starts[k],
                        stop: stops[k],
                        points: points[k],
                    })
                    .collect();
                cfg.shape = Some(shape);
            }
        }
        Ok(cfg)
    }

    /// Command-line seed wins over the file.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(mc) = &mut self.mc {
            mc.seed = seed;
        }
    }
}
