//! Branch distributions and fading profiles.

use rand::{Rng, RngCore};

use crate::combinatorics::IndexSet;
use crate::error::{invalid, Error, Result};

/// Default minimum relative separation between two branch averages.
pub const DEFAULT_SEPARATION: f64 = 1e-6;

/// A non-negative random variable.
pub trait Distribution: Send + Sync {
    fn pdf(&self, x: f64) -> f64;
    fn cdf(&self, x: f64) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> f64;

    /// Characteristic length used to map semi-infinite ranges.
    fn scale(&self) -> f64 {
        1.0
    }
}

fn check_average(gamma_bar: f64) -> Result<()> {
    if !(gamma_bar.is_finite() && gamma_bar > 0.0) {
        return invalid(format!("average must be positive and finite, got {gamma_bar}"));
    }
    Ok(())
}

/// `(1/γ̄) exp(-x/γ̄)` for `x >= 0`, zero for negative `x`.
pub fn exponential_pdf(x: f64, gamma_bar: f64) -> Result<f64> {
    check_average(gamma_bar)?;
    if x < 0.0 {
        return Ok(0.0);
    }
    Ok((-x / gamma_bar).exp() / gamma_bar)
}

/// `1 - exp(-x/γ̄)` for `x >= 0`.
pub fn exponential_cdf(x: f64, gamma_bar: f64) -> Result<f64> {
    check_average(gamma_bar)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(-(-x / gamma_bar).exp_m1())
}

/// Exponential SNR with average `γ̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponential {
    gamma_bar: f64,
}

impl Exponential {
    pub fn new(gamma_bar: f64) -> Result<Self> {
        check_average(gamma_bar)?;
        Ok(Self { gamma_bar })
    }

    pub fn mean(&self) -> f64 {
        self.gamma_bar
    }

    pub fn rate(&self) -> f64 {
        1.0 / self.gamma_bar
    }
}

impl Distribution for Exponential {
    fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            (-x / self.gamma_bar).exp() / self.gamma_bar
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-x / self.gamma_bar).exp_m1()
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let u: f64 = rng.random();
        -self.gamma_bar * (-u).ln_1p()
    }

    fn scale(&self) -> f64 {
        self.gamma_bar
    }
}

/// Per-branch averages `γ̄_1..γ̄_N` of independent exponential SNRs.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingProfile {
    averages: Vec<f64>,
    rates: Vec<f64>,
}

impl FadingProfile {
    pub fn new(averages: Vec<f64>) -> Result<Self> {
        Self::with_separation(averages, DEFAULT_SEPARATION)
    }

    /// Rejects any pair whose relative gap is below `sep`.
    pub fn with_separation(averages: Vec<f64>, sep: f64) -> Result<Self> {
        if averages.is_empty() {
            return invalid("a profile needs at least one branch");
        }
        for &g in &averages {
            check_average(g)?;
        }
        check_separation(&averages, sep)?;
        let rates = averages.iter().map(|g| 1.0 / g).collect();
        Ok(Self { averages, rates })
    }

    pub fn len(&self) -> usize {
        self.averages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.averages.is_empty()
    }

    pub fn averages(&self) -> &[f64] {
        &self.averages
    }

    /// Rates `1/γ̄_l`.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn indices(&self) -> IndexSet {
        IndexSet::full(self.len())
    }

    /// Averages of the branches in `set`, in index order.
    pub fn sub_averages(&self, set: &IndexSet) -> Vec<f64> {
        set.zero_based().map(|l| self.averages[l]).collect()
    }

    pub fn sub_rates(&self, set: &IndexSet) -> Vec<f64> {
        set.zero_based().map(|l| self.rates[l]).collect()
    }

    pub fn rate_sum(&self, set: &IndexSet) -> f64 {
        set.zero_based().map(|l| self.rates[l]).sum()
    }

    pub fn branch(&self, l: usize) -> Exponential {
        Exponential {
            gamma_bar: self.averages[l],
        }
    }

    pub fn max_average(&self) -> f64 {
        self.averages.iter().copied().fold(0.0, f64::max)
    }
}

pub(crate) fn check_separation(averages: &[f64], sep: f64) -> Result<()> {
    for i in 0..averages.len() {
        for j in i + 1..averages.len() {
            let (a, b) = (averages[i], averages[j]);
            if (a - b).abs() < sep * a.abs().max(b.abs()) {
                return Err(Error::IllConditioned {
                    i: i + 1,
                    j: j + 1,
                    first: a,
                    second: b,
                    sep,
                });
            }
        }
    }
    Ok(())
}

/// Exponentially decaying multipath intensity profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MipSpec {
    pub gamma1: f64,
    pub delta: f64,
    pub n: usize,
}

impl MipSpec {
    pub fn new(gamma1: f64, delta: f64, n: usize) -> Self {
        Self { gamma1, delta, n }
    }
}

/// `γ̄_l = γ̄_1 exp(-δ(l-1))`, `l = 1..N`.
pub fn profile_from_mip(spec: MipSpec) -> Result<FadingProfile> {
    check_average(spec.gamma1)?;
    if !(spec.delta.is_finite() && spec.delta >= 0.0) {
        return invalid(format!("decay rate must be finite and non-negative, got {}", spec.delta));
    }
    if spec.n == 0 {
        return invalid("MIP needs at least one path");
    }
    let averages = (0..spec.n)
        .map(|l| spec.gamma1 * (-spec.delta * l as f64).exp())
        .collect();
    FadingProfile::new(averages)
}
