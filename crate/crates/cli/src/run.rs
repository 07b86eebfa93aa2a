//! Sweep runners. Each returns a CSV table whose rows follow the sweep order.

use std::io::Write;

use log::{error, info};
use ordstat_core::applications::{capture_probability_closed, capture_probability_numeric, outage_probability};
use ordstat_core::distributions::FadingProfile;
use ordstat_core::joint_densities::{pdf_total_sum, HeadTailDensity};
use ordstat_core::kernels::{
    j_above, j_below, j_between, kernel_c, kernel_e, kernel_mu, prod_c_direct, prod_c_expansion, prod_e_direct,
    prod_e_expansion, prod_mu_direct, prod_mu_expansion,
};
use ordstat_core::oracle::{
    brute_nested_integral, compare_histogram, hypoexponential_pdf, mc_capture_sweep, mc_joint_histogram, mc_outage,
    Axis, Binning, NestedStructure,
};
use ordstat_core::{joint_density, CaptureSpec, DensityConfig, IndexSet, OutageSpec, PartialSumSpec};
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::CliError;

/// Full round-trip precision: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Sweep points whose computation failed (their cells are left empty).
    pub failed_points: usize,
    pub failed_checks: usize,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Error matching the worst outcome, if any.
    pub fn status(&self) -> Result<(), CliError> {
        if self.failed_points > 0 {
            return Err(CliError::Numerical {
                failed: self.failed_points,
            });
        }
        if self.failed_checks > 0 {
            return Err(CliError::Validation {
                failed: self.failed_checks,
            });
        }
        Ok(())
    }

    fn cell(&mut self, r: &ordstat_core::Result<f64>, what: &str) -> String {
        match r {
            Ok(v) => num(*v),
            Err(e) => {
                error!("{what}: {e}");
                self.failed_points += 1;
                String::new()
            }
        }
    }
}

pub fn run(cfg: &ScenarioConfig) -> Result<Table, CliError> {
    use crate::config::Computation::*;
    match cfg.computation {
        Capture => Ok(run_capture(cfg)),
        Outage => Ok(run_outage(cfg)),
        Pdf => run_pdf(cfg),
        Validate => Ok(run_validate(cfg)),
    }
}

/// Rows `(T, m, closed, numeric[, mc, mc_se])`.
pub fn run_capture(cfg: &ScenarioConfig) -> Table {
    let mut header = vec!["T", "m", "closed", "numeric"];
    if cfg.mc.is_some() {
        header.extend(["mc", "mc_se"]);
    }
    let mut table = Table::new(&header);
    let points: Vec<(usize, f64)> = cfg
        .ms
        .iter()
        .flat_map(|&m| cfg.thresholds.iter().map(move |&t| (m, t)))
        .collect();
    info!("capture: {} sweep points", points.len());
    let values: Vec<(ordstat_core::Result<f64>, ordstat_core::Result<f64>)> = points
        .par_iter()
        .map(|&(m, t)| {
            // the ratio is a.s. in (0, 1)
            if t <= 0.0 {
                return (Ok(1.0), Ok(1.0));
            }
            if t >= 1.0 {
                return (Ok(0.0), Ok(0.0));
            }
            match CaptureSpec::new(cfg.profile.clone(), m, t) {
                Ok(spec) => (capture_probability_closed(&spec), capture_probability_numeric(&spec, &cfg.quad)),
                Err(e) => (Err(e.clone()), Err(e)),
            }
        })
        .collect();
    let mc: Vec<Option<ordstat_core::Result<(f64, f64)>>> = match &cfg.mc {
        None => vec![None; points.len()],
        Some(mc) => {
            let mut out = Vec::with_capacity(points.len());
            for &m in &cfg.ms {
                let inner: Vec<f64> = cfg.thresholds.iter().copied().filter(|t| *t > 0.0 && *t < 1.0).collect();
                let est = mc_capture_sweep(&cfg.profile, m, &inner, mc);
                let mut k = 0;
                for &t in &cfg.thresholds {
                    out.push(Some(if t <= 0.0 {
                        Ok((1.0, 0.0))
                    } else if t >= 1.0 {
                        Ok((0.0, 0.0))
                    } else {
                        k += 1;
                        est.as_ref().map(|v| (v[k - 1].value, v[k - 1].error)).map_err(|e| e.clone())
                    }));
                }
            }
            out
        }
    };
    for (((m, t), (closed, numeric)), mc) in points.iter().zip(&values).zip(&mc) {
        let what = format!("capture m = {m}, T = {t}");
        let mut row = vec![num(*t), m.to_string(), table.cell(closed, &what), table.cell(numeric, &what)];
        if let Some(r) = mc {
            let v = r.as_ref().map(|p| p.0).map_err(|e| e.clone());
            let se = r.as_ref().map(|p| p.1).map_err(|e| e.clone());
            row.push(table.cell(&v, &what));
            row.push(match se {
                Ok(s) => num(s),
                Err(_) => String::new(),
            });
        }
        table.rows.push(row);
    }
    table
}

/// Rows `(T, m, alpha, numeric[, mc, mc_se])`.
pub fn run_outage(cfg: &ScenarioConfig) -> Table {
    let mut header = vec!["T", "m", "alpha", "numeric"];
    if cfg.mc.is_some() {
        header.extend(["mc", "mc_se"]);
    }
    let mut table = Table::new(&header);
    let points: Vec<(usize, f64, f64)> = cfg
        .ms
        .iter()
        .flat_map(|&m| {
            cfg.alphas
                .iter()
                .flat_map(move |&a| cfg.thresholds.iter().map(move |&t| (m, a, t)))
        })
        .collect();
    info!("outage: {} sweep points", points.len());
    let values: Vec<ordstat_core::Result<f64>> = points
        .par_iter()
        .map(|&(m, a, t)| {
            let spec = OutageSpec::new(cfg.profile.clone(), m, t, a)?;
            outage_probability(&spec, &cfg.quad)
        })
        .collect();
    for (&(m, a, t), v) in points.iter().zip(&values) {
        let what = format!("outage m = {m}, alpha = {a}, T = {t}");
        let mut row = vec![num(t), m.to_string(), num(a), table.cell(v, &what)];
        if let Some(mc) = &cfg.mc {
            let est = OutageSpec::new(cfg.profile.clone(), m, t, a).and_then(|s| mc_outage(&s, mc));
            match est {
                Ok(e) => {
                    row.push(num(e.value));
                    row.push(num(e.error));
                }
                Err(e) => {
                    row.push(table.cell(&Err(e), &what));
                    row.push(String::new());
                }
            }
        }
        table.rows.push(row);
    }
    table
}

/// Rows `(z1, ..., zd, density)` over the configured grid, first axis outermost.
pub fn run_pdf(cfg: &ScenarioConfig) -> Result<Table, CliError> {
    let shape = cfg.shape.ok_or_else(|| CliError::Config("pdf needs a `shape`".into()))?;
    let d = shape.dimension();
    let mut header: Vec<String> = (1..=d).map(|k| format!("z{k}")).collect();
    header.push("density".into());
    let mut table = Table {
        header,
        ..Table::default()
    };
    let dc = DensityConfig {
        quad: cfg.quad,
        budget: cfg.budget,
    };
    let density = match joint_density(&cfg.profile, shape, &dc) {
        Ok(den) => den,
        Err(e) => {
            error!("{}: {e}", shape.name());
            return Err(CliError::Numerical { failed: 1 });
        }
    };
    let axes: Vec<Vec<f64>> = cfg.grid.iter().map(|a| a.values()).collect();
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    info!("pdf {}: {} grid points", shape.name(), points.len());
    let values: Vec<ordstat_core::Result<f64>> = points.par_iter().map(|z| density.density(z)).collect();
    for (z, v) in points.iter().zip(&values) {
        let what = format!("{} at {z:?}", shape.name());
        let mut row: Vec<String> = z.iter().map(|&x| num(x)).collect();
        row.push(table.cell(v, &what));
        table.rows.push(row);
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy)]
enum Tol {
    Rel(f64),
    /// `k` standard errors.
    Sigma(f64, f64),
    /// value must be at least the reference
    AtLeast,
}

struct Check {
    name: &'static str,
    params: String,
    outcome: ordstat_core::Result<(f64, f64)>,
    tol: Tol,
}

/// MC deviations are judged at 4 s.e. so the verdict rarely depends on the seed.
const VALIDATE_SIGMAS: f64 = 4.0;

/// Rounding floor for s.e.-based bounds: an estimate of exactly 0 or 1 has zero s.e.
const ROUNDING_SLACK: f64 = 1e-9;

fn rel_check(name: &'static str, params: String, value: ordstat_core::Result<f64>, reference: ordstat_core::Result<f64>, tol: f64) -> Check {
    Check {
        name,
        params,
        outcome: value.and_then(|v| reference.map(|r| (v, r))),
        tol: Tol::Rel(tol),
    }
}

fn kernel_checks(profile: &FadingProfile, out: &mut Vec<Check>) {
    let q = ordstat_core::QuadratureConfig::with_tolerances(1e-14, 1e-12);
    for l in 0..profile.len() {
        let b = profile.branch(l);
        for &(z, lam) in &[(1.0, -0.5), (0.3, -1.5), (2.0, 0.0)] {
            let p = format!("branch {} z {z} lambda {lam}", l + 1);
            out.push(rel_check("kernel_c", p.clone(), b.c(z, lam), kernel_c(&b, z, lam, &q), 1e-8));
            out.push(rel_check("kernel_e", p.clone(), b.e(z, lam), kernel_e(&b, z, lam, &q), 1e-8));
            out.push(rel_check("kernel_mu", p.clone(), b.mu(z / 2.0, z, lam), kernel_mu(&b, z / 2.0, z, lam, &q), 1e-8));
            let sum = b.c(z, lam).and_then(|c| b.e(z, lam).map(|e| c + e));
            out.push(rel_check("kernel_c_plus_e", p, sum, b.mgf(lam), 1e-10));
        }
    }
}

fn expansion_checks(profile: &FadingProfile, out: &mut Vec<Check>) {
    let g = profile.averages();
    let (z, lam) = (1.0, -0.3);
    out.push(rel_check("expansion_c", format!("z {z} lambda {lam}"), prod_c_expansion(g, z, lam), prod_c_direct(g, z, lam), 1e-9));
    out.push(rel_check("expansion_e", format!("z {z} lambda {lam}"), prod_e_expansion(g, z, lam), prod_e_direct(g, z, lam), 1e-9));
    out.push(rel_check(
        "expansion_mu",
        format!("za 0.5 zb 1.5 lambda {lam}"),
        prod_mu_expansion(g, 0.5, 1.5, lam),
        prod_mu_direct(g, 0.5, 1.5, lam),
        1e-9,
    ));
}

fn total_sum_checks(profile: &FadingProfile, out: &mut Vec<Check>) {
    for &z in &[0.25, 1.0, 2.5, 6.0] {
        out.push(rel_check(
            "total_sum_vs_hypoexponential",
            format!("z {z}"),
            pdf_total_sum(profile, z),
            Ok(hypoexponential_pdf(profile.rates(), z)),
            1e-8,
        ));
    }
}

fn nested_checks(profile: &FadingProfile, out: &mut Vec<Check>) {
    // brute force is capped in size; use the strongest few branches
    let k = profile.len().min(3);
    let sub = match FadingProfile::new(profile.averages()[..k].to_vec()) {
        Ok(p) => p,
        Err(e) => {
            out.push(Check {
                name: "nested",
                params: String::new(),
                outcome: Err(e),
                tol: Tol::Rel(1e-6),
            });
            return;
        }
    };
    let all = IndexSet::full(k);
    let oracle = |s: NestedStructure| brute_nested_integral(&sub, &s).map(|e| e.value);
    let (lam, upper, lower) = (-0.7, 1.3, 0.4);
    out.push(rel_check(
        "nested_below",
        format!("branches 1..{k} upper {upper} lambda {lam}"),
        j_below(&sub, &all, upper, lam),
        oracle(NestedStructure::Below {
            indices: all.clone(),
            upper,
            lambda: lam,
        }),
        1e-6,
    ));
    out.push(rel_check(
        "nested_above",
        format!("branches 1..{k} lower {lower} lambda {lam}"),
        j_above(&sub, &all, lower, lam),
        oracle(NestedStructure::Above {
            indices: all.clone(),
            lower,
            lambda: lam,
        }),
        1e-6,
    ));
    out.push(rel_check(
        "nested_between",
        format!("branches 1..{k} lower {lower} upper {upper} lambda {lam}"),
        j_between(&sub, &all, lower, upper, lam),
        oracle(NestedStructure::Between {
            indices: all.clone(),
            lower,
            upper,
            lambda: lam,
        }),
        1e-6,
    ));
}

fn application_checks(cfg: &ScenarioConfig, out: &mut Vec<Check>) {
    let points: Vec<(usize, f64)> = cfg
        .ms
        .iter()
        .flat_map(|&m| cfg.thresholds.iter().map(move |&t| (m, t)))
        .collect();
    let closed: Vec<_> = points
        .par_iter()
        .map(|&(m, t)| {
            let spec = CaptureSpec::new(cfg.profile.clone(), m, t)?;
            Ok((capture_probability_closed(&spec)?, capture_probability_numeric(&spec, &cfg.quad)?))
        })
        .collect::<Vec<ordstat_core::Result<(f64, f64)>>>();
    for (&(m, t), r) in points.iter().zip(&closed) {
        out.push(Check {
            name: "capture_closed_vs_numeric",
            params: format!("m {m} T {t}"),
            outcome: r.clone(),
            tol: Tol::Rel(1e-4),
        });
    }
    if let Some(mc) = &cfg.mc {
        for &m in &cfg.ms {
            let est = mc_capture_sweep(&cfg.profile, m, &cfg.thresholds, mc);
            for (k, &t) in cfg.thresholds.iter().enumerate() {
                let idx = points.iter().position(|&p| p == (m, t)).unwrap_or(0);
                let outcome = match (&est, &closed[idx]) {
                    (Ok(e), Ok((c, _))) => Ok((*c, e[k].value)),
                    (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                };
                let se = est.as_ref().map(|e| e[k].error).unwrap_or(0.0);
                out.push(Check {
                    name: "capture_closed_vs_monte_carlo",
                    params: format!("m {m} T {t}"),
                    outcome,
                    tol: Tol::Sigma(VALIDATE_SIGMAS, se),
                });
            }
        }
        for &m in &cfg.ms {
            for &a in &cfg.alphas {
                for &t in &cfg.thresholds {
                    let spec = OutageSpec::new(cfg.profile.clone(), m, t, a);
                    let (outcome, se) = match spec {
                        Ok(s) => match (outage_probability(&s, &cfg.quad), mc_outage(&s, mc)) {
                            (Ok(v), Ok(e)) => (Ok((v, e.value)), e.error),
                            (Err(e), _) | (_, Err(e)) => (Err(e), 0.0),
                        },
                        Err(e) => (Err(e), 0.0),
                    };
                    out.push(Check {
                        name: "outage_numeric_vs_monte_carlo",
                        params: format!("m {m} alpha {a} T {t}"),
                        outcome,
                        tol: Tol::Sigma(VALIDATE_SIGMAS, se),
                    });
                }
            }
        }
        histogram_check(cfg, mc, out);
    }
}

fn histogram_check(cfg: &ScenarioConfig, mc: &ordstat_core::McConfig, out: &mut Vec<Check>) {
    let m = cfg.ms[0];
    let n = cfg.profile.len();
    let g = cfg.profile.averages();
    let head: f64 = g[..m].iter().sum();
    let tail: f64 = g[m..].iter().sum();
    let bins = cfg.hist_bins;
    let outcome = (|| {
        let binning = Binning::new(vec![Axis::new(0.0, 3.0 * head, bins)?, Axis::new(0.0, 2.0 * tail, bins)?])?;
        let hist = mc_joint_histogram(&cfg.profile, PartialSumSpec::HeadTail { m }, &binning, mc)?;
        let density = HeadTailDensity::new(&cfg.profile, m)?;
        let cmp = compare_histogram(&hist, &density, &cfg.quad)?;
        if cmp.nonempty_outside_support > 0 || cmp.support_violations > 0 {
            return Ok((0.0, 0.95));
        }
        Ok((cmp.fraction_within(), 0.95))
    })();
    out.push(Check {
        name: "head_tail_histogram_fraction_within_3se",
        params: format!("N {n} m {m} bins {bins}x{bins}"),
        outcome,
        tol: Tol::AtLeast,
    });
}

/// Rows `(check, parameters, value, reference, delta, tolerance, pass)`.
pub fn run_validate(cfg: &ScenarioConfig) -> Table {
    let mut table = Table::new(&["check", "parameters", "value", "reference", "delta", "tolerance", "pass"]);
    let mut checks = Vec::new();
    kernel_checks(&cfg.profile, &mut checks);
    expansion_checks(&cfg.profile, &mut checks);
    total_sum_checks(&cfg.profile, &mut checks);
    nested_checks(&cfg.profile, &mut checks);
    application_checks(cfg, &mut checks);
    for c in checks {
        let row = match &c.outcome {
            Ok((v, r)) => {
                let delta = (v - r).abs();
                let (bound, pass) = match c.tol {
                    Tol::Rel(t) => (t * r.abs(), delta <= t * r.abs()),
                    Tol::Sigma(k, se) => (k * se + ROUNDING_SLACK, delta <= k * se + ROUNDING_SLACK),
                    Tol::AtLeast => (0.0, v >= r),
                };
                if !pass {
                    error!("check {} ({}) failed: {v} vs {r}", c.name, c.params);
                    table.failed_checks += 1;
                }
                vec![
                    c.name.to_string(),
                    c.params.clone(),
                    num(*v),
                    num(*r),
                    num(delta),
                    num(bound),
                    pass.to_string(),
                ]
            }
            Err(e) => {
                error!("check {} ({}) could not run: {e}", c.name, c.params);
                table.failed_checks += 1;
                vec![c.name.to_string(), c.params.clone(), String::new(), String::new(), String::new(), String::new(), "false".into()]
            }
        };
        table.rows.push(row);
    }
    info!("validate: {} checks, {} failed", table.rows.len(), table.failed_checks);
    table
}
