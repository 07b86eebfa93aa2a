//! Truncated MGF kernels `c`, `e`, `μ`, partial fractions and product expansions.
//!
//! For a branch with density `p`:
//!
//! * `c(z, λ) = ∫_0^z p(x) e^{λx} dx`
//! * `e(z, λ) = ∫_z^∞ p(x) e^{λx} dx`
//! * `μ(za, zb, λ) = ∫_za^zb p(x) e^{λx} dx`
//!
//! The generic versions integrate numerically; [`Exponential`] has closed forms.

use crate::combinatorics::{enumerate_nested, power_set, IndexSet, KahanSum};
use crate::distributions::{check_separation, Distribution, Exponential, DEFAULT_SEPARATION};
use crate::error::{invalid, Error, Result};
use crate::quadrature::{try_integrate, try_integrate_to_infinity, QuadratureConfig};

/// `(1 - e^{-xw}) / x`, continuous at `x = 0`.
pub(crate) fn phi(x: f64, w: f64) -> f64 {
    if x == 0.0 {
        w
    } else {
        -(-x * w).exp_m1() / x
    }
}

fn integrand<'a>(dist: &'a dyn Distribution, lambda: f64) -> impl Fn(f64) -> Result<f64> + 'a {
    move |x| {
        let p = dist.pdf(x);
        Ok(if p == 0.0 { 0.0 } else { p * (lambda * x).exp() })
    }
}

fn tail(dist: &dyn Distribution, z: f64, lambda: f64, cfg: &QuadratureConfig) -> Result<f64> {
    try_integrate_to_infinity(integrand(dist, lambda), z, dist.scale(), cfg)
        .map(|q| q.value)
        .map_err(|e| Error::Divergent(format!("tail integral from {z} at λ = {lambda}: {e}")))
}

fn check_z(z: f64) -> Result<()> {
    if z.is_nan() || z < 0.0 {
        return invalid(format!("truncation point must be non-negative, got {z}"));
    }
    Ok(())
}

/// `∫_0^z p(x) e^{λx} dx` by adaptive quadrature; `z` may be infinite.
pub fn kernel_c(dist: &dyn Distribution, z: f64, lambda: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_z(z)?;
    if z.is_infinite() {
        return tail(dist, 0.0, lambda, cfg);
    }
    try_integrate(integrand(dist, lambda), 0.0, z, cfg).map(|q| q.value)
}

/// `∫_z^∞ p(x) e^{λx} dx` by adaptive quadrature.
pub fn kernel_e(dist: &dyn Distribution, z: f64, lambda: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_z(z)?;
    if z.is_infinite() {
        return Ok(0.0);
    }
    tail(dist, z, lambda, cfg)
}

/// `∫_za^zb p(x) e^{λx} dx` by adaptive quadrature.
pub fn kernel_mu(dist: &dyn Distribution, za: f64, zb: f64, lambda: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_z(za)?;
    check_z(zb)?;
    if za > zb {
        return invalid(format!("interval [{za}, {zb}] is reversed"));
    }
    if zb.is_infinite() {
        return kernel_e(dist, za, lambda, cfg);
    }
    try_integrate(integrand(dist, lambda), za, zb, cfg).map(|q| q.value)
}

impl Exponential {
    fn convergent(&self, lambda: f64) -> Result<f64> {
        let gap = self.rate() - lambda;
        if gap > 0.0 {
            Ok(gap)
        } else {
            Err(Error::Divergent(format!(
                "λ = {lambda} is not below the rate {}",
                self.rate()
            )))
        }
    }

    /// `(1 - e^{(λ-1/γ̄)z}) / (1 - γ̄λ)`.
    pub fn c(&self, z: f64, lambda: f64) -> Result<f64> {
        check_z(z)?;
        if z.is_infinite() {
            return self.mgf(lambda);
        }
        Ok(self.rate() * phi(self.rate() - lambda, z))
    }

    /// `e^{(λ-1/γ̄)z} / (1 - γ̄λ)`.
    pub fn e(&self, z: f64, lambda: f64) -> Result<f64> {
        check_z(z)?;
        if z.is_infinite() {
            return Ok(0.0);
        }
        let gap = self.convergent(lambda)?;
        Ok(self.rate() * (-gap * z).exp() / gap)
    }

    /// `(e^{(λ-1/γ̄)za} - e^{(λ-1/γ̄)zb}) / (1 - γ̄λ)`.
    pub fn mu(&self, za: f64, zb: f64, lambda: f64) -> Result<f64> {
        check_z(za)?;
        check_z(zb)?;
        if za > zb {
            return invalid(format!("interval [{za}, {zb}] is reversed"));
        }
        if zb.is_infinite() {
            return self.e(za, lambda);
        }
        let gap = self.rate() - lambda;
        Ok(self.rate() * (-gap * za).exp() * phi(gap, zb - za))
    }

    /// `1 / (1 - γ̄λ)`.
    pub fn mgf(&self, lambda: f64) -> Result<f64> {
        let gap = self.convergent(lambda)?;
        Ok(self.rate() / gap)
    }
}

/// Elementary symmetric polynomial `e_l` of `xs`, summed over nested index tuples.
pub fn elementary_symmetric(xs: &[f64], l: usize) -> f64 {
    if l == 0 {
        return 1.0;
    }
    match enumerate_nested(1, xs.len(), l) {
        Ok(tuples) => tuples
            .map(|t| t.indices().iter().map(|&j| xs[j - 1]).product::<f64>())
            .collect::<KahanSum>()
            .value(),
        Err(_) => 0.0,
    }
}

/// `F'(x)` for `F(x) = Π_l (x - 1/γ̄_l)`, in expanded polynomial form:
/// `Σ_{l=0}^{n-1} (n-l) (-1)^l e_l(1/γ̄) x^{n-1-l}`.
pub fn coeff_f_prime(x: f64, sub_averages: &[f64]) -> Result<f64> {
    if sub_averages.is_empty() {
        return invalid("empty sub-profile");
    }
    check_separation(sub_averages, DEFAULT_SEPARATION)?;
    let rates: Vec<f64> = sub_averages.iter().map(|g| 1.0 / g).collect();
    let n = rates.len();
    Ok((0..n)
        .map(|l| {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            (n - l) as f64 * sign * elementary_symmetric(&rates, l) * x.powi((n - 1 - l) as i32)
        })
        .collect::<KahanSum>()
        .value())
}

/// Residues of `1 / Π_l (1 - γ̄_l λ)` at its poles `λ = 1/γ̄_k`:
/// `1 / Π_l(1 - γ̄_l λ) = Σ_k C_k / (λ - 1/γ̄_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFractionCoeffs {
    poles: Vec<f64>,
    coeffs: Vec<f64>,
}

impl PartialFractionCoeffs {
    pub fn new(sub_averages: &[f64]) -> Result<Self> {
        Self::with_separation(sub_averages, DEFAULT_SEPARATION)
    }

    /// `C_k = 1 / (Π_l(-γ̄_l) F'(1/γ̄_k))`, with `F'` at a root taken as `Π_{l≠k}(a_k - a_l)`.
    pub fn with_separation(sub_averages: &[f64], sep: f64) -> Result<Self> {
        check_separation(sub_averages, sep)?;
        let poles: Vec<f64> = sub_averages.iter().map(|g| 1.0 / g).collect();
        let lead: f64 = sub_averages.iter().map(|g| -g).product();
        let coeffs = poles
            .iter()
            .enumerate()
            .map(|(k, &ak)| {
                let fp: f64 = poles
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != k)
                    .map(|(_, &al)| ak - al)
                    .product();
                1.0 / (lead * fp)
            })
            .collect();
        Ok(Self { poles, coeffs })
    }

    pub fn poles(&self) -> &[f64] {
        &self.poles
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.coeffs.iter().copied().zip(self.poles.iter().copied())
    }

    /// `Σ_k C_k / (λ - a_k)`; the empty product evaluates to 1.
    pub fn evaluate(&self, lambda: f64) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        self.terms().map(|(c, a)| c / (lambda - a)).collect::<KahanSum>().value()
    }
}

fn exps(sub_averages: &[f64]) -> Result<Vec<Exponential>> {
    sub_averages.iter().map(|&g| Exponential::new(g)).collect()
}

/// Direct product of closed-form `c` kernels.
pub fn prod_c_direct(sub_averages: &[f64], z: f64, lambda: f64) -> Result<f64> {
    exps(sub_averages)?.iter().map(|d| d.c(z, lambda)).product()
}

pub fn prod_e_direct(sub_averages: &[f64], z: f64, lambda: f64) -> Result<f64> {
    exps(sub_averages)?.iter().map(|d| d.e(z, lambda)).product()
}

pub fn prod_mu_direct(sub_averages: &[f64], za: f64, zb: f64, lambda: f64) -> Result<f64> {
    exps(sub_averages)?.iter().map(|d| d.mu(za, zb, lambda)).product()
}

/// Signed subset sum `Σ_J (-1)^{|J|} e^{-w Σ_J (a_j - λ)}`, expanded over nested index tuples.
fn signed_subset_sum(rates: &[f64], w: f64, lambda: f64) -> f64 {
    let n = rates.len();
    let mut acc = KahanSum::new();
    acc.add(1.0);
    if w.is_infinite() {
        return acc.value();
    }
    for l in 1..=n {
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        for t in enumerate_nested(1, n, l).expect("depth within range") {
            let s: f64 = t.indices().iter().map(|&j| rates[j - 1]).sum();
            acc.add(sign * (-w * s).exp() * (l as f64 * w * lambda).exp());
        }
    }
    acc.value()
}

/// `Π_l c_l(z, λ)` as `Σ_J (-1)^{|J|} e^{-zΣ_J a} e^{|J|zλ} Σ_k C_k/(λ - a_k)`.
pub fn prod_c_expansion(sub_averages: &[f64], z: f64, lambda: f64) -> Result<f64> {
    check_z(z)?;
    let pf = PartialFractionCoeffs::new(sub_averages)?;
    Ok(signed_subset_sum(pf.poles(), z, lambda) * pf.evaluate(lambda))
}

/// `Π_l e_l(z, λ)` as `e^{nzλ} e^{-zΣa} Σ_k C_k/(λ - a_k)`.
pub fn prod_e_expansion(sub_averages: &[f64], z: f64, lambda: f64) -> Result<f64> {
    check_z(z)?;
    let pf = PartialFractionCoeffs::new(sub_averages)?;
    if z.is_infinite() {
        return Ok(0.0);
    }
    let n = pf.len() as f64;
    let s: f64 = pf.poles().iter().sum();
    Ok((n * z * lambda - z * s).exp() * pf.evaluate(lambda))
}

/// `Π_l μ_l(za, zb, λ)` as
/// `e^{nλza} e^{-zaΣa} Σ_J (-1)^{|J|} e^{-(zb-za)Σ_J a} e^{|J|(zb-za)λ} Σ_k C_k/(λ - a_k)`.
pub fn prod_mu_expansion(sub_averages: &[f64], za: f64, zb: f64, lambda: f64) -> Result<f64> {
    check_z(za)?;
    check_z(zb)?;
    if za > zb {
        return invalid(format!("interval [{za}, {zb}] is reversed"));
    }
    let pf = PartialFractionCoeffs::new(sub_averages)?;
    let n = pf.len() as f64;
    let s: f64 = pf.poles().iter().sum();
    Ok((n * lambda * za - za * s).exp() * signed_subset_sum(pf.poles(), zb - za, lambda) * pf.evaluate(lambda))
}

/// Cache of partial-fraction tables for every subset of a profile.
#[derive(Debug, Clone)]
pub struct CoeffCache {
    tables: std::collections::HashMap<IndexSet, PartialFractionCoeffs>,
}

impl CoeffCache {
    pub fn for_profile(averages: &[f64]) -> Result<Self> {
        let full = IndexSet::full(averages.len());
        let mut tables = std::collections::HashMap::new();
        for s in power_set(&full) {
            let sub: Vec<f64> = s.zero_based().map(|l| averages[l]).collect();
            let pf = PartialFractionCoeffs::new(&sub)?;
            tables.insert(s, pf);
        }
        Ok(Self { tables })
    }

    pub fn get(&self, set: &IndexSet) -> &PartialFractionCoeffs {
        &self.tables[set]
    }
}

/// Per-branch kernels for a set of independent branches.
pub trait BranchModel: Send + Sync {
    fn len(&self) -> usize;
    fn pdf(&self, l: usize, x: f64) -> f64;
    fn c(&self, l: usize, z: f64, lambda: f64) -> Result<f64>;
    fn e(&self, l: usize, z: f64, lambda: f64) -> Result<f64>;
    fn mu(&self, l: usize, za: f64, zb: f64, lambda: f64) -> Result<f64>;
    /// Length scale for semi-infinite integrals.
    fn scale(&self) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn mgf(&self, l: usize, lambda: f64) -> Result<f64> {
        self.e(l, 0.0, lambda)
    }
}

impl BranchModel for crate::distributions::FadingProfile {
    fn len(&self) -> usize {
        self.averages().len()
    }

    fn pdf(&self, l: usize, x: f64) -> f64 {
        self.branch(l).pdf(x)
    }

    fn c(&self, l: usize, z: f64, lambda: f64) -> Result<f64> {
        self.branch(l).c(z, lambda)
    }

    fn e(&self, l: usize, z: f64, lambda: f64) -> Result<f64> {
        self.branch(l).e(z, lambda)
    }

    fn mu(&self, l: usize, za: f64, zb: f64, lambda: f64) -> Result<f64> {
        self.branch(l).mu(za, zb, lambda)
    }

    fn scale(&self) -> f64 {
        self.max_average()
    }
}

/// Arbitrary branch distributions with kernels evaluated by quadrature.
pub struct GenericBranches {
    dists: Vec<Box<dyn Distribution>>,
    quad: QuadratureConfig,
}

impl GenericBranches {
    pub fn new(dists: Vec<Box<dyn Distribution>>, quad: QuadratureConfig) -> Result<Self> {
        if dists.is_empty() {
            return invalid("at least one branch is required");
        }
        quad.validate()?;
        Ok(Self { dists, quad })
    }
}

impl BranchModel for GenericBranches {
    fn len(&self) -> usize {
        self.dists.len()
    }

    fn pdf(&self, l: usize, x: f64) -> f64 {
        self.dists[l].pdf(x)
    }

    fn c(&self, l: usize, z: f64, lambda: f64) -> Result<f64> {
        kernel_c(self.dists[l].as_ref(), z, lambda, &self.quad)
    }

    fn e(&self, l: usize, z: f64, lambda: f64) -> Result<f64> {
        kernel_e(self.dists[l].as_ref(), z, lambda, &self.quad)
    }

    fn mu(&self, l: usize, za: f64, zb: f64, lambda: f64) -> Result<f64> {
        kernel_mu(self.dists[l].as_ref(), za, zb, lambda, &self.quad)
    }

    fn scale(&self) -> f64 {
        self.dists.iter().map(|d| d.scale()).fold(0.0, f64::max)
    }
}

fn check_indices(model: &dyn BranchModel, set: &IndexSet) -> Result<()> {
    if set.max_index() > model.len() {
        return invalid(format!("index set {set} exceeds {} branches", model.len()));
    }
    Ok(())
}

/// Ordered integral of the branches in `set` below `upper`, as `Π_l c_l(upper, λ)`.
pub fn j_below(model: &dyn BranchModel, set: &IndexSet, upper: f64, lambda: f64) -> Result<f64> {
    check_indices(model, set)?;
    set.zero_based().map(|l| model.c(l, upper, lambda)).product()
}

/// Ordered integral of the branches in `set` above `lower`, as `Π_l e_l(lower, λ)`.
pub fn j_above(model: &dyn BranchModel, set: &IndexSet, lower: f64, lambda: f64) -> Result<f64> {
    check_indices(model, set)?;
    set.zero_based().map(|l| model.e(l, lower, lambda)).product()
}

/// Ordered integral of the branches in `set` within `[lower, upper]`, as `Π_l μ_l(lower, upper, λ)`.
pub fn j_between(model: &dyn BranchModel, set: &IndexSet, lower: f64, upper: f64, lambda: f64) -> Result<f64> {
    check_indices(model, set)?;
    set.zero_based().map(|l| model.mu(l, lower, upper, lambda)).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            (a - b).abs() / b.abs()
        }
    }

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::with_tolerances(1e-14, 1e-12)
    }

    #[test]
    fn c_examples() {
        let d2 = Exponential::new(2.0).unwrap();
        assert!(rel(d2.c(f64::INFINITY, -1.0).unwrap(), 1.0 / 3.0) < 1e-15);
        assert!(rel(d2.c(1.3, 0.0).unwrap(), d2.cdf(1.3)) < 1e-15);
        let d1 = Exponential::new(1.0).unwrap();
        let expect = (1.0 - (-1.5f64).exp()) / 1.5;
        let quad = kernel_c(&d1, 1.0, -0.5, &cfg()).unwrap();
        assert!(rel(quad, expect) < 1e-12);
        assert!(rel(d1.c(1.0, -0.5).unwrap(), quad) < 1e-12);
        assert!((expect - 0.51791).abs() < 1e-5);
    }

    #[test]
    fn e_examples() {
        let d2 = Exponential::new(2.0).unwrap();
        assert!(rel(d2.e(0.0, -1.0).unwrap(), 1.0 / 3.0) < 1e-15);
        assert!(rel(d2.e(0.7, 0.0).unwrap(), 1.0 - d2.cdf(0.7)) < 1e-14);
        let d1 = Exponential::new(1.0).unwrap();
        let quad = kernel_e(&d1, 1.0, -0.5, &cfg()).unwrap();
        assert!(rel(quad, (-1.5f64).exp() / 1.5) < 1e-11);
        assert!(rel(d1.e(1.0, -0.5).unwrap(), quad) < 1e-11);
        assert!(((-1.5f64).exp() / 1.5 - 0.14875).abs() < 1e-5);
        assert!(matches!(d1.e(0.0, 1.5), Err(Error::Divergent(_))));
    }

    #[test]
    fn mu_examples() {
        let d1 = Exponential::new(1.0).unwrap();
        assert_eq!(d1.mu(0.4, 0.4, -0.3).unwrap(), 0.0);
        let d2 = Exponential::new(2.0).unwrap();
        assert!(rel(d2.mu(0.0, f64::INFINITY, -1.0).unwrap(), 1.0 / 3.0) < 1e-15);
        let quad = kernel_mu(&d1, 0.5, 1.0, -0.5, &cfg()).unwrap();
        let diff = d1.c(1.0, -0.5).unwrap() - d1.c(0.5, -0.5).unwrap();
        assert!(rel(quad, diff) < 1e-12);
        assert!((quad - 0.166158).abs() < 1e-6);
        assert!(d1.mu(1.0, 0.5, 0.0).is_err());
        assert!(kernel_mu(&d1, 1.0, 0.5, 0.0, &cfg()).is_err());
    }

    #[test]
    fn interval_is_edf_difference() {
        // μ(za, zb) = e(za) - e(zb)
        let d = Exponential::new(0.8).unwrap();
        for &(za, zb, l) in &[(0.1, 0.9, -1.0), (0.0, 3.0, 0.4), (2.0, 2.5, -2.0)] {
            let mu = d.mu(za, zb, l).unwrap();
            let diff = d.e(za, l).unwrap() - d.e(zb, l).unwrap();
            assert!((mu - diff).abs() < 1e-14);
            assert!(mu >= 0.0);
        }
    }

    #[test]
    fn f_prime_cases() {
        assert_eq!(coeff_f_prime(3.7, &[2.0]).unwrap(), 1.0);
        let (ga, gb) = (0.5, 3.0);
        let x = 1.3;
        let got = coeff_f_prime(x, &[ga, gb]).unwrap();
        assert!(rel(got, 2.0 * x - (1.0 / ga + 1.0 / gb)) < 1e-14);

        let g = [1.0, 0.5, 0.25];
        let f = |x: f64| g.iter().map(|gi| x - 1.0 / gi).product::<f64>();
        let x = 1.0 / g[0];
        let h = 1e-6;
        let fd = (f(x + h) - f(x - h)) / (2.0 * h);
        assert!(rel(coeff_f_prime(x, &g).unwrap(), fd) < 1e-5);
    }

    #[test]
    fn partial_fraction_examples() {
        let single = PartialFractionCoeffs::new(&[2.5]).unwrap();
        assert!(rel(single.coeffs()[0], -1.0 / 2.5) < 1e-15);
        let pf = PartialFractionCoeffs::new(&[1.0, 2.0]).unwrap();
        assert!(rel(pf.evaluate(-1.0), 1.0 / 6.0) < 1e-14);
        assert!(rel(1.0 / ((1.0 + 1.0) * (1.0 + 2.0)), 1.0 / 6.0) < 1e-15);
        let err = PartialFractionCoeffs::new(&[1.0, 2.0, 1.0 + 1e-9]).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { i: 1, j: 3, .. }));
    }

    #[test]
    fn f_prime_polynomial_matches_root_product() {
        let g = [1.0, 0.6, 0.35, 0.2, 0.9];
        let rates: Vec<f64> = g.iter().map(|x| 1.0 / x).collect();
        for (k, &ak) in rates.iter().enumerate() {
            let prod: f64 = rates
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != k)
                .map(|(_, &al)| ak - al)
                .product();
            assert!(rel(coeff_f_prime(ak, &g).unwrap(), prod) < 1e-10);
        }
    }

    #[test]
    fn single_factor_expansions() {
        let g = [1.7];
        let d = Exponential::new(1.7).unwrap();
        assert!(rel(prod_c_expansion(&g, 0.9, -0.4).unwrap(), d.c(0.9, -0.4).unwrap()) < 1e-14);
        assert!(rel(prod_e_expansion(&g, 0.9, -0.4).unwrap(), d.e(0.9, -0.4).unwrap()) < 1e-14);
        assert!(rel(prod_mu_expansion(&g, 0.2, 0.9, -0.4).unwrap(), d.mu(0.2, 0.9, -0.4).unwrap()) < 1e-13);
    }

    #[test]
    fn two_factor_expansions() {
        let g = [1.0, 2.0];
        let (z, l) = (1.0, -0.3);
        assert!(rel(prod_c_expansion(&g, z, l).unwrap(), prod_c_direct(&g, z, l).unwrap()) < 1e-10);
        assert!(rel(prod_e_expansion(&g, z, l).unwrap(), prod_e_direct(&g, z, l).unwrap()) < 1e-10);
        let full = prod_mu_expansion(&g, 0.0, f64::INFINITY, l).unwrap();
        let mgf = 1.0 / ((1.0 - l) * (1.0 - 2.0 * l));
        assert!(rel(full, mgf) < 1e-14);
    }

    #[test]
    fn cache_covers_power_set() {
        let cache = CoeffCache::for_profile(&[1.0, 0.5, 0.2]).unwrap();
        assert!(cache.get(&IndexSet::empty()).is_empty());
        let s = IndexSet::new(vec![1, 3]).unwrap();
        assert_eq!(cache.get(&s), &PartialFractionCoeffs::new(&[1.0, 0.2]).unwrap());
    }

    #[test]
    fn elementary_symmetric_small() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(elementary_symmetric(&x, 0), 1.0);
        assert_eq!(elementary_symmetric(&x, 1), 6.0);
        assert_eq!(elementary_symmetric(&x, 2), 11.0);
        assert_eq!(elementary_symmetric(&x, 3), 6.0);
    }
}
