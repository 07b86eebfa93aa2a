//! Independent ground truth: Monte Carlo over ordered samples and brute-force
//! nested quadrature of the defining ordered integrals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::applications::{CaptureSpec, OutageSpec};
use crate::combinatorics::{IndexSet, KahanSum};
use crate::distributions::FadingProfile;
use crate::error::{invalid, Error, Result};
use crate::joint_densities::{JointDensity, PartialSumSpec};
use crate::kernels::BranchModel;
use crate::quadrature::{try_integrate_to_infinity, try_integrate_with_breaks, QuadratureConfig};

/// Largest branch count accepted by [`brute_nested_integral`].
pub const NESTED_MAX_N: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    MonteCarlo,
    Quadrature,
}

/// An oracle value with its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub value: f64,
    /// Standard error for Monte Carlo, error bound for quadrature.
    pub error: f64,
    /// Trials or integrand evaluations.
    pub count: u64,
    pub seed: Option<u64>,
    pub kind: EstimateKind,
}

impl OracleEstimate {
    /// `|x - value| <= k · error`.
    pub fn agrees(&self, x: f64, k: f64) -> bool {
        (x - self.value).abs() <= k * self.error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub trials: u64,
    pub seed: u64,
    /// Independent RNG streams; results depend on this, never on the thread count.
    pub shards: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            trials: 1_000_000,
            seed: 0x5eed,
            shards: 64,
        }
    }
}

impl McConfig {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            trials,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1000 {
            return invalid(format!("Monte Carlo needs at least 1000 trials, got {}", self.trials));
        }
        if self.shards == 0 || self.shards as u64 > self.trials {
            return invalid(format!("shard count {} must lie in 1..=trials", self.shards));
        }
        Ok(())
    }
}

/// Draws one ordered SNR vector into `out` (descending).
pub fn sample_ordered_into<R: Rng + ?Sized>(profile: &FadingProfile, rng: &mut R, out: &mut [f64]) {
    for (x, g) in out.iter_mut().zip(profile.averages()) {
        let u: f64 = rng.random();
        *x = -g * (-u).ln_1p();
    }
    out.sort_unstable_by(|a, b| b.total_cmp(a));
}

pub fn sample_ordered<R: Rng + ?Sized>(profile: &FadingProfile, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; profile.len()];
    sample_ordered_into(profile, rng, &mut out);
    out
}

/// Runs `work(rng, trials)` on every shard in parallel and returns the results in shard order.
fn run_shards<T, F>(cfg: &McConfig, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    let shards = cfg.shards as u64;
    let base = cfg.trials / shards;
    let extra = cfg.trials % shards;
    (0..shards)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k);
            work(&mut rng, base + u64::from(k < extra))
        })
        .collect()
}

fn count_events<P>(profile: &FadingProfile, cfg: &McConfig, event: P) -> Result<OracleEstimate>
where
    P: Fn(&[f64]) -> bool + Sync,
{
    cfg.validate()?;
    let counts = run_shards(cfg, |rng, trials| {
        let mut buf = vec![0.0; profile.len()];
        let mut hits = 0u64;
        for _ in 0..trials {
            sample_ordered_into(profile, rng, &mut buf);
            hits += u64::from(event(&buf));
        }
        hits
    });
    let hits: u64 = counts.iter().sum();
    let n = cfg.trials as f64;
    let p = hits as f64 / n;
    Ok(OracleEstimate {
        value: p,
        error: (p * (1.0 - p) / n).sqrt(),
        count: cfg.trials,
        seed: Some(cfg.seed),
        kind: EstimateKind::MonteCarlo,
    })
}

/// Fraction of trials with `Σ_{n<=m} u_n / Σ_n u_n > T`.
pub fn mc_capture(spec: &CaptureSpec, cfg: &McConfig) -> Result<OracleEstimate> {
    spec.validate()?;
    let (m, t) = (spec.m, spec.threshold);
    count_events(&spec.profile, cfg, |u| {
        let head: f64 = u[..m].iter().sum();
        let tail: f64 = u[m..].iter().sum();
        head > t * (head + tail)
    })
}

/// [`mc_capture`] for many thresholds from one set of samples.
pub fn mc_capture_sweep(profile: &FadingProfile, m: usize, thresholds: &[f64], cfg: &McConfig) -> Result<Vec<OracleEstimate>> {
    cfg.validate()?;
    if m < 1 || m >= profile.len() {
        return invalid(format!("capture needs 1 <= m < N, got m = {m} with N = {}", profile.len()));
    }
    let parts = run_shards(cfg, |rng, trials| {
        let mut buf = vec![0.0; profile.len()];
        let mut hits = vec![0u64; thresholds.len()];
        for _ in 0..trials {
            sample_ordered_into(profile, rng, &mut buf);
            let head: f64 = buf[..m].iter().sum();
            let total = head + buf[m..].iter().sum::<f64>();
            for (h, &t) in hits.iter_mut().zip(thresholds) {
                *h += u64::from(head > t * total);
            }
        }
        hits
    });
    let n = cfg.trials as f64;
    Ok((0..thresholds.len())
        .map(|k| {
            let p = parts.iter().map(|h| h[k]).sum::<u64>() as f64 / n;
            OracleEstimate {
                value: p,
                error: (p * (1.0 - p) / n).sqrt(),
                count: cfg.trials,
                seed: Some(cfg.seed),
                kind: EstimateKind::MonteCarlo,
            }
        })
        .collect())
}

/// Fraction of trials with `Σ_{n<=m} u_n < T (1 + α Σ_{n>m} u_n)`.
pub fn mc_outage(spec: &OutageSpec, cfg: &McConfig) -> Result<OracleEstimate> {
    spec.validate()?;
    let (m, t, alpha) = (spec.m, spec.threshold, spec.alpha);
    count_events(&spec.profile, cfg, |u| {
        let head: f64 = u[..m].iter().sum();
        let tail: f64 = u[m..].iter().sum();
        head < t * (1.0 + alpha * tail)
    })
}

/// Mean of each ordered position with its standard error.
pub fn mc_ordered_means(profile: &FadingProfile, cfg: &McConfig) -> Result<Vec<OracleEstimate>> {
    cfg.validate()?;
    let n = profile.len();
    let parts = run_shards(cfg, |rng, trials| {
        let mut buf = vec![0.0; n];
        let mut s = vec![KahanSum::new(); n];
        let mut s2 = vec![KahanSum::new(); n];
        for _ in 0..trials {
            sample_ordered_into(profile, rng, &mut buf);
            for k in 0..n {
                s[k].add(buf[k]);
                s2[k].add(buf[k] * buf[k]);
            }
        }
        (s, s2)
    });
    let count = cfg.trials as f64;
    Ok((0..n)
        .map(|k| {
            let sum: f64 = parts.iter().map(|p| p.0[k].value()).sum();
            let sq: f64 = parts.iter().map(|p| p.1[k].value()).sum();
            let mean = sum / count;
            let var = (sq / count - mean * mean).max(0.0) * count / (count - 1.0);
            OracleEstimate {
                value: mean,
                error: (var / count).sqrt(),
                count: cfg.trials,
                seed: Some(cfg.seed),
                kind: EstimateKind::MonteCarlo,
            }
        })
        .collect())
}

/// Uniform bins on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || bins == 0 {
            return invalid(format!("axis needs lo < hi and bins > 0, got [{lo}, {hi}) with {bins}"));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn edge(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.width()
    }

    fn locate(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x < self.hi) {
            return None;
        }
        Some((((x - self.lo) / self.width()) as usize).min(self.bins - 1))
    }
}

/// Product grid over the partial-sum vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    pub axes: Vec<Axis>,
}

impl Binning {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return invalid("binning needs at least one axis");
        }
        Ok(Self { axes })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn locate(&self, z: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (a, &x) in self.axes.iter().zip(z) {
            idx = idx * a.bins + a.locate(x)?;
        }
        Some(idx)
    }

    /// Lower and upper corners of bin `idx`.
    pub fn bounds(&self, mut idx: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.axes.len();
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        for k in (0..d).rev() {
            let a = &self.axes[k];
            let j = idx % a.bins;
            idx /= a.bins;
            lo[k] = a.edge(j);
            hi[k] = a.edge(j + 1);
        }
        (lo, hi)
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.width()).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub spec: PartialSumSpec,
    pub binning: Binning,
    pub counts: Vec<u64>,
    pub trials: u64,
    /// Samples falling outside the grid.
    pub outside: u64,
    /// Samples outside the predicted support.
    pub support_violations: u64,
}

impl Histogram {
    /// Empirical probability of bin `idx`.
    pub fn probability(&self, idx: usize) -> f64 {
        self.counts[idx] as f64 / self.trials as f64
    }

    /// Empirical density of bin `idx`.
    pub fn density(&self, idx: usize) -> f64 {
        self.probability(idx) / self.binning.volume()
    }

    /// Binomial standard error of the bin probability; uses `fallback` when the bin is empty.
    pub fn standard_error(&self, idx: usize, fallback: f64) -> f64 {
        let p = if self.counts[idx] == 0 { fallback } else { self.probability(idx) };
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Histograms the partial-sum vector of `spec` over `binning`.
pub fn mc_joint_histogram(
    profile: &FadingProfile,
    spec: PartialSumSpec,
    binning: &Binning,
    cfg: &McConfig,
) -> Result<Histogram> {
    cfg.validate()?;
    spec.validate_mgf(profile.len())?;
    if binning.axes.len() != spec.dimension() {
        return invalid(format!(
            "{} is {}-dimensional but the binning has {} axes",
            spec.name(),
            spec.dimension(),
            binning.axes.len()
        ));
    }
    let constraints = spec.support_constraints(profile.len());
    let bins = binning.len();
    let parts = run_shards(cfg, |rng, trials| {
        let mut buf = vec![0.0; profile.len()];
        let mut counts = vec![0u64; bins];
        let (mut outside, mut violations) = (0u64, 0u64);
        for _ in 0..trials {
            sample_ordered_into(profile, rng, &mut buf);
            let z = spec.project(&buf);
            if !constraints.iter().all(|h| h.holds(&z)) {
                violations += 1;
            }
            match binning.locate(&z) {
                Some(i) => counts[i] += 1,
                None => outside += 1,
            }
        }
        (counts, outside, violations)
    });
    let mut counts = vec![0u64; bins];
    let (mut outside, mut violations) = (0, 0);
    for (c, o, v) in parts {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
        outside += o;
        violations += v;
    }
    Ok(Histogram {
        spec,
        binning: binning.clone(),
        counts,
        trials: cfg.trials,
        outside,
        support_violations: violations,
    })
}

/// Per-bin comparison of a histogram against the predicted bin probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramComparison {
    pub bins: usize,
    /// Bins with `|observed - predicted| <= 3 s.e.`.
    pub within: usize,
    /// Largest deviation in standard errors.
    pub worst_z: f64,
    pub predicted_mass: f64,
    pub observed_mass: f64,
    /// Bins lying wholly outside the support that still received samples.
    pub nonempty_outside_support: usize,
    pub support_violations: u64,
    /// Pearson statistic over bins with predicted count >= 5, and their number.
    pub chi_square: f64,
    pub chi_square_bins: usize,
}

impl HistogramComparison {
    pub fn fraction_within(&self) -> f64 {
        self.within as f64 / self.bins as f64
    }

    /// At least `fraction` of bins within 3 s.e. and the support honoured exactly.
    pub fn passes(&self, fraction: f64) -> bool {
        self.fraction_within() >= fraction && self.nonempty_outside_support == 0 && self.support_violations == 0
    }
}

/// `true` when every corner of the box violates one common support constraint.
fn box_outside_support(spec: PartialSumSpec, n: usize, lo: &[f64], hi: &[f64]) -> bool {
    let d = lo.len();
    spec.support_constraints(n).iter().any(|h| {
        // maximum of the linear form over the box
        let best: f64 = (0..d).map(|k| h.0[k] * if h.0[k] > 0.0 { hi[k] } else { lo[k] }).sum();
        best < 0.0
    })
}

pub fn compare_histogram(hist: &Histogram, density: &dyn JointDensity, quad: &QuadratureConfig) -> Result<HistogramComparison> {
    if density.spec() != hist.spec {
        return invalid(format!("histogram of {:?} compared with density of {:?}", hist.spec, density.spec()));
    }
    let n = density.branches();
    let results: Vec<Result<(f64, bool)>> = (0..hist.binning.len())
        .into_par_iter()
        .map(|idx| {
            let (lo, hi) = hist.binning.bounds(idx);
            let outside = box_outside_support(hist.spec, n, &lo, &hi);
            let p = if outside { 0.0 } else { density.box_probability(&lo, &hi, quad)? };
            Ok((p, outside))
        })
        .collect();
    let mut cmp = HistogramComparison {
        bins: hist.binning.len(),
        within: 0,
        worst_z: 0.0,
        predicted_mass: 0.0,
        observed_mass: 0.0,
        nonempty_outside_support: 0,
        support_violations: hist.support_violations,
        chi_square: 0.0,
        chi_square_bins: 0,
    };
    let trials = hist.trials as f64;
    for (idx, r) in results.into_iter().enumerate() {
        let (p, outside) = r?;
        let observed = hist.probability(idx);
        if outside && hist.counts[idx] > 0 {
            cmp.nonempty_outside_support += 1;
        }
        let se = hist.standard_error(idx, p);
        let dev = (observed - p).abs();
        if dev <= 3.0 * se {
            cmp.within += 1;
        }
        if se > 0.0 {
            cmp.worst_z = cmp.worst_z.max(dev / se);
        } else if dev > 0.0 {
            cmp.worst_z = f64::INFINITY;
        }
        cmp.predicted_mass += p;
        cmp.observed_mass += observed;
        if p * trials >= 5.0 {
            let expected = p * trials;
            cmp.chi_square += (hist.counts[idx] as f64 - expected).powi(2) / expected;
            cmp.chi_square_bins += 1;
        }
    }
    Ok(cmp)
}

/// Upper `1 - α` quantile of χ² with `k` degrees of freedom (Wilson–Hilferty).
pub fn chi_square_critical(k: usize, z_alpha: f64) -> f64 {
    let k = k as f64;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z_alpha * a.sqrt()).powi(3)
}

/// Ordered multiple integrals evaluated directly by recursive quadrature.
#[derive(Debug, Clone, PartialEq)]
pub enum NestedStructure {
    /// `Σ_perm ∫_{upper > x_1 > ... > x_k > 0} Π p(x_i) e^{λ x_i}`.
    Below { indices: IndexSet, upper: f64, lambda: f64 },
    /// `Σ_perm ∫_{x_1 > ... > x_k > lower} Π p(x_i) e^{λ x_i}`.
    Above { indices: IndexSet, lower: f64, lambda: f64 },
    /// `Σ_perm ∫_{upper > x_1 > ... > x_k > lower} Π p(x_i) e^{λ x_i}`.
    Between {
        indices: IndexSet,
        lower: f64,
        upper: f64,
        lambda: f64,
    },
    /// `E[exp(Σ_n λ_n u_n)]` over all `N` ordered branches.
    OrderedMgf { lambdas: Vec<f64> },
}

struct Nested<'a> {
    model: &'a dyn BranchModel,
    lambdas: Vec<f64>,
    lower: f64,
    /// `None` means the outermost variable runs to infinity.
    upper: Option<f64>,
    /// Variables are integrated from the largest when `descending`, else from the smallest.
    descending: bool,
    quad: QuadratureConfig,
    evals: std::cell::Cell<u64>,
}

impl Nested<'_> {
    /// Integral over the remaining `left` branches, ranks from `rank` on.
    fn level(&self, rank: usize, bound: Option<f64>, left: &[usize]) -> Result<f64> {
        if left.is_empty() {
            return Ok(1.0);
        }
        let lambda = self.lambdas[rank];
        let f = |x: f64| -> Result<f64> {
            self.evals.set(self.evals.get() + 1);
            let mut acc = KahanSum::new();
            for (pos, &l) in left.iter().enumerate() {
                let p = self.model.pdf(l, x);
                if p == 0.0 {
                    continue;
                }
                let rest: Vec<usize> = left.iter().enumerate().filter(|&(k, _)| k != pos).map(|(_, &v)| v).collect();
                acc.add(p * (lambda * x).exp() * self.level(rank + 1, Some(x), &rest)?);
            }
            Ok(acc.value())
        };
        let (a, b) = if self.descending { (self.lower, bound) } else { (bound.unwrap_or(self.lower), self.upper) };
        match b {
            Some(b) => {
                if b <= a {
                    return Ok(0.0);
                }
                try_integrate_with_breaks(f, &[a, b], &self.quad).map(|q| q.value)
            }
            None => try_integrate_to_infinity(f, a, self.model.scale(), &self.quad).map(|q| q.value),
        }
    }
}

/// Evaluates `structure` without any product or closed-form identity.
///
/// Each level is an adaptive Gauss–Kronrod integral with relative tolerance `1e-7`.
pub fn brute_nested_integral(model: &dyn BranchModel, structure: &NestedStructure) -> Result<OracleEstimate> {
    let n = model.len();
    let quad = QuadratureConfig::with_tolerances(1e-13, 1e-7);
    let check = |set: &IndexSet| -> Result<Vec<usize>> {
        if set.max_index() > n {
            return invalid(format!("index set {set} exceeds {n} branches"));
        }
        Ok(set.zero_based().collect())
    };
    let (branches, nested) = match structure {
        NestedStructure::Below { indices, upper, lambda } => (
            check(indices)?,
            Nested {
                model,
                lambdas: vec![*lambda; indices.len()],
                lower: 0.0,
                upper: Some(*upper),
                descending: true,
                quad,
                evals: Default::default(),
            },
        ),
        NestedStructure::Above { indices, lower, lambda } => (
            check(indices)?,
            Nested {
                model,
                lambdas: vec![*lambda; indices.len()],
                lower: *lower,
                upper: None,
                descending: false,
                quad,
                evals: Default::default(),
            },
        ),
        NestedStructure::Between {
            indices,
            lower,
            upper,
            lambda,
        } => (
            check(indices)?,
            Nested {
                model,
                lambdas: vec![*lambda; indices.len()],
                lower: *lower,
                upper: Some(*upper),
                descending: true,
                quad,
                evals: Default::default(),
            },
        ),
        NestedStructure::OrderedMgf { lambdas } => {
            if lambdas.len() != n {
                return invalid(format!("ordered MGF needs {n} transform points, got {}", lambdas.len()));
            }
            (
                (0..n).collect(),
                Nested {
                    model,
                    lambdas: lambdas.clone(),
                    lower: 0.0,
                    upper: None,
                    descending: true,
                    quad,
                    evals: Default::default(),
                },
            )
        }
    };
    if branches.len() > NESTED_MAX_N {
        let k = branches.len();
        return Err(Error::Budget {
            n: k,
            terms: (1..=k as u128).product(),
            max_n: NESTED_MAX_N,
        });
    }
    let bound = if nested.descending { nested.upper } else { None };
    let value = nested.level(0, bound, &branches)?;
    Ok(OracleEstimate {
        value,
        error: value.abs() * quad.rel_tol * branches.len() as f64 + quad.abs_tol,
        count: nested.evals.get(),
        seed: None,
        kind: EstimateKind::Quadrature,
    })
}

/// Density of a sum of independent exponentials with distinct rates.
pub fn hypoexponential_pdf(rates: &[f64], z: f64) -> f64 {
    if z < 0.0 {
        return 0.0;
    }
    rates
        .iter()
        .enumerate()
        .map(|(i, &ai)| {
            let w: f64 = rates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &aj)| aj / (aj - ai))
                .product();
            ai * (-ai * z).exp() * w
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{profile_from_mip, MipSpec};
    use crate::joint_densities::TotalSumDensity;
    use crate::kernels::{j_above, j_below, j_between};

    fn mip(n: usize) -> FadingProfile {
        profile_from_mip(MipSpec::new(1.0, 0.5, n)).unwrap()
    }

    #[test]
    fn samples_are_sorted() {
        let p = mip(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let u = sample_ordered(&p, &mut rng);
            assert!(u.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn single_branch_mean() {
        let p = FadingProfile::new(vec![2.5]).unwrap();
        let m = mc_ordered_means(&p, &McConfig::new(400_000, 3)).unwrap();
        assert!((m[0].value - 2.5).abs() < 0.025);
    }

    #[test]
    fn ordered_means_strictly_decrease() {
        let p = mip(4);
        let m = mc_ordered_means(&p, &McConfig::new(1_000_000, 5)).unwrap();
        for w in m.windows(2) {
            assert!(w[0].value - w[1].value > 3.0 * (w[0].error + w[1].error));
        }
    }

    #[test]
    fn capture_mc_edges_and_determinism() {
        let p = mip(3);
        let cfg = McConfig::new(20_000, 9);
        let spec = CaptureSpec::new(p.clone(), 2, 1e-12).unwrap();
        let e = mc_capture(&spec, &cfg).unwrap();
        assert_eq!((e.value, e.error), (1.0, 0.0));
        let steep = profile_from_mip(MipSpec::new(1.0, 3.0, 3)).unwrap();
        let spec = CaptureSpec::new(steep, 2, 0.999).unwrap();
        let e = mc_capture(&spec, &McConfig::new(200_000, 2)).unwrap();
        let exact = crate::applications::capture_probability_closed(&spec).unwrap();
        assert!(e.value > 0.0 && e.agrees(exact, 3.0), "{e:?} vs {exact}");
        let spec = CaptureSpec::new(p, 1, 0.6).unwrap();
        assert_eq!(mc_capture(&spec, &cfg).unwrap(), mc_capture(&spec, &cfg).unwrap());
    }

    #[test]
    fn capture_sweep_matches_single_points() {
        let p = mip(4);
        let cfg = McConfig::new(50_000, 12);
        let ts = [0.3, 0.6];
        let sweep = mc_capture_sweep(&p, 2, &ts, &cfg).unwrap();
        for (e, &t) in sweep.iter().zip(&ts) {
            let single = mc_capture(&CaptureSpec::new(p.clone(), 2, t).unwrap(), &cfg).unwrap();
            assert_eq!(*e, single);
        }
    }

    #[test]
    fn outage_mc_edges() {
        let p = mip(3);
        let cfg = McConfig::new(50_000, 4);
        assert_eq!(mc_outage(&OutageSpec::new(p.clone(), 1, 0.0, 0.5).unwrap(), &cfg).unwrap().value, 0.0);
        let a0 = mc_outage(&OutageSpec::new(p.clone(), 1, 0.8, 0.0).unwrap(), &cfg).unwrap();
        let a1 = mc_outage(&OutageSpec::new(p.clone(), 1, 0.8, 1.0).unwrap(), &cfg).unwrap();
        assert!(a1.value >= a0.value);
        let spec = OutageSpec::new(p, 2, 0.8, 0.3).unwrap();
        assert_eq!(mc_outage(&spec, &cfg).unwrap(), mc_outage(&spec, &cfg).unwrap());
    }

    #[test]
    fn result_independent_of_thread_count() {
        let p = mip(3);
        let spec = CaptureSpec::new(p, 1, 0.55).unwrap();
        let cfg = McConfig::new(100_000, 77);
        let a = mc_capture(&spec, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| mc_capture(&spec, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn doubling_trials_shrinks_error() {
        let p = mip(3);
        let spec = CaptureSpec::new(p, 1, 0.55).unwrap();
        let a = mc_capture(&spec, &McConfig::new(200_000, 1)).unwrap();
        let b = mc_capture(&spec, &McConfig::new(400_000, 1)).unwrap();
        let ratio = a.error / b.error;
        assert!((ratio - 2f64.sqrt()).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn histogram_of_total_sum() {
        let p = FadingProfile::new(vec![1.0, 2.0]).unwrap();
        let binning = Binning::new(vec![Axis::new(0.0, 12.0, 40).unwrap()]).unwrap();
        let h = mc_joint_histogram(&p, PartialSumSpec::TotalSum, &binning, &McConfig::new(1_000_000, 8)).unwrap();
        let d = TotalSumDensity::new(&p).unwrap();
        let quad = QuadratureConfig::default();
        let cmp = compare_histogram(&h, &d, &quad).unwrap();
        assert!(cmp.passes(0.95), "{cmp:?}");
        let total = cmp.observed_mass + h.outside as f64 / h.trials as f64;
        assert!((total - 1.0).abs() < 1e-12);
        let dof = cmp.chi_square_bins - 1;
        assert!(cmp.chi_square < chi_square_critical(dof, 2.326), "{cmp:?}");
    }

    #[test]
    fn histogram_support_region_is_empty() {
        let p = mip(4);
        let spec = PartialSumSpec::HeadTail { m: 2 };
        let binning = Binning::new(vec![Axis::new(0.0, 4.0, 8).unwrap(), Axis::new(0.0, 4.0, 8).unwrap()]).unwrap();
        let h = mc_joint_histogram(&p, spec, &binning, &McConfig::new(200_000, 6)).unwrap();
        assert_eq!(h.support_violations, 0);
        for idx in 0..binning.len() {
            let (lo, hi) = binning.bounds(idx);
            if box_outside_support(spec, 4, &lo, &hi) {
                assert_eq!(h.counts[idx], 0);
            }
        }
    }

    #[test]
    fn nested_matches_kernel_products() {
        let p = FadingProfile::new(vec![1.0, 0.6, 0.3]).unwrap();
        let all = IndexSet::full(3);
        let e = brute_nested_integral(
            &p,
            &NestedStructure::Below {
                indices: all.clone(),
                upper: 1.3,
                lambda: -0.7,
            },
        )
        .unwrap();
        let want = j_below(&p, &all, 1.3, -0.7).unwrap();
        assert!((e.value - want).abs() < 1e-6 * want);
        let e = brute_nested_integral(
            &p,
            &NestedStructure::Above {
                indices: all.clone(),
                lower: 0.4,
                lambda: -0.7,
            },
        )
        .unwrap();
        let want = j_above(&p, &all, 0.4, -0.7).unwrap();
        assert!((e.value - want).abs() < 1e-6 * want);
        let e = brute_nested_integral(
            &p,
            &NestedStructure::Between {
                indices: all.clone(),
                lower: 0.2,
                upper: 1.1,
                lambda: -0.4,
            },
        )
        .unwrap();
        let want = j_between(&p, &all, 0.2, 1.1, -0.4).unwrap();
        assert!((e.value - want).abs() < 1e-6 * want);
    }

    #[test]
    fn nested_ordered_mgf_of_equal_lambdas_is_product() {
        let p = FadingProfile::new(vec![1.0, 0.6, 0.3]).unwrap();
        let l = -0.8;
        let e = brute_nested_integral(&p, &NestedStructure::OrderedMgf { lambdas: vec![l; 3] }).unwrap();
        let want: f64 = p.averages().iter().map(|g| 1.0 / (1.0 - g * l)).product();
        assert!((e.value - want).abs() < 1e-6 * want);
    }

    #[test]
    fn nested_budget() {
        let p = mip(5);
        let r = brute_nested_integral(&p, &NestedStructure::OrderedMgf { lambdas: vec![-1.0; 5] });
        assert!(matches!(r, Err(Error::Budget { .. })));
    }

    #[test]
    fn hypoexponential_two_rates() {
        let v = hypoexponential_pdf(&[1.0, 0.5], 1.0);
        assert!((v - ((-0.5f64).exp() - (-1.0f64).exp())).abs() < 1e-15);
    }
}
