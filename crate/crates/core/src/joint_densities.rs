//! Joint MGFs and joint PDFs of partial sums of ordered branch SNRs.
//!
//! With `u_1 >= u_2 >= ... >= u_N` the ordered SNRs, the supported shapes are
//! listed in [`PartialSumSpec`]. Exponential profiles get exact PDFs built from
//! [`LaplaceTermSum`] inversions; the remaining outer integrals are either done
//! analytically (exponential integrands between linear breakpoints) or by
//! adaptive quadrature.

use std::sync::Arc;

use crate::combinatorics::{check_budget, enumerate_subsets, power_set, ComplexityBudget, IndexSet, KahanSum};
use crate::distributions::FadingProfile;
use crate::error::{invalid, Result};
use crate::kernels::{phi, BranchModel, PartialFractionCoeffs};
use crate::laplace::LaplaceTermSum;
use crate::quadrature::{breaks_within, try_integrate_to_infinity, try_integrate_with_breaks, QuadratureConfig};

/// Which partial sums of the ordered SNRs are considered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartialSumSpec {
    /// `Σ_{n<=N} u_n`.
    TotalSum,
    /// `(Σ_{n<=m} u_n, Σ_{n>m} u_n)`.
    HeadTail { m: usize },
    /// `(u_m, Σ_{n≠m} u_n)`.
    PivotRest { m: usize },
    /// `Σ_{n<=Ns} u_n`.
    BestSum { ns: usize },
    /// `(Σ_{n<Ns} u_n, u_Ns)`.
    BestSumPivot { ns: usize },
    /// `(Σ_{n<m} u_n, u_m, Σ_{m<n<Ns} u_n, u_Ns)`.
    BestPivot { m: usize, ns: usize },
    /// `(u_m, Σ_{n<=Ns, n≠m} u_n)`.
    BestPivotRest { m: usize, ns: usize },
    /// `(Σ_{n<=m} u_n, Σ_{m<n<=Ns} u_n)`.
    BestHeadTail { m: usize, ns: usize },
}

/// Linear constraint `coeffs · z >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace(pub Vec<f64>);

impl HalfSpace {
    pub fn value(&self, z: &[f64]) -> f64 {
        self.0.iter().zip(z).map(|(c, x)| c * x).sum()
    }

    pub fn holds(&self, z: &[f64]) -> bool {
        self.value(z) >= 0.0
    }
}

impl PartialSumSpec {
    pub fn dimension(&self) -> usize {
        match self {
            PartialSumSpec::TotalSum | PartialSumSpec::BestSum { .. } => 1,
            PartialSumSpec::BestPivot { .. } => 4,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PartialSumSpec::TotalSum => "total_sum",
            PartialSumSpec::HeadTail { .. } => "head_tail",
            PartialSumSpec::PivotRest { .. } => "pivot_rest",
            PartialSumSpec::BestSum { .. } => "best_sum",
            PartialSumSpec::BestSumPivot { .. } => "best_sum_pivot",
            PartialSumSpec::BestPivot { .. } => "best_pivot",
            PartialSumSpec::BestPivotRest { .. } => "best_pivot_rest",
            PartialSumSpec::BestHeadTail { .. } => "best_head_tail",
        }
    }

    /// Checks the shape against `n` branches for density evaluation.
    pub fn validate(&self, n: usize) -> Result<()> {
        self.check(n, false)
    }

    /// Checks the shape for MGF evaluation, where empty groups are allowed.
    pub fn validate_mgf(&self, n: usize) -> Result<()> {
        self.check(n, true)
    }

    fn check(&self, n: usize, relaxed: bool) -> Result<()> {
        let ok = match *self {
            PartialSumSpec::TotalSum => n >= 1,
            PartialSumSpec::HeadTail { m } => m >= 1 && m < n,
            PartialSumSpec::PivotRest { m } => n >= 2 && m >= 1 && m <= n,
            PartialSumSpec::BestSum { ns } | PartialSumSpec::BestSumPivot { ns } => ns >= 2 && ns <= n,
            PartialSumSpec::BestPivot { m, ns } | PartialSumSpec::BestPivotRest { m, ns } => {
                ns <= n && if relaxed { m >= 1 && m + 1 <= ns } else { m > 1 && m + 1 < ns }
            }
            PartialSumSpec::BestHeadTail { m, ns } => m >= 1 && m < ns && ns <= n,
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("{self:?} is not valid for N = {n}"))
        }
    }

    /// Maps a descending SNR vector to the partial-sum vector.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        let sum = |r: std::ops::Range<usize>| -> f64 { u[r].iter().sum() };
        match *self {
            PartialSumSpec::TotalSum => vec![sum(0..u.len())],
            PartialSumSpec::HeadTail { m } => vec![sum(0..m), sum(m..u.len())],
            PartialSumSpec::PivotRest { m } => vec![u[m - 1], sum(0..m - 1) + sum(m..u.len())],
            PartialSumSpec::BestSum { ns } => vec![sum(0..ns)],
            PartialSumSpec::BestSumPivot { ns } => vec![sum(0..ns - 1), u[ns - 1]],
            PartialSumSpec::BestPivot { m, ns } => vec![sum(0..m - 1), u[m - 1], sum(m..ns - 1), u[ns - 1]],
            PartialSumSpec::BestPivotRest { m, ns } => vec![u[m - 1], sum(0..m - 1) + sum(m..ns)],
            PartialSumSpec::BestHeadTail { m, ns } => vec![sum(0..m), sum(m..ns)],
        }
    }

    /// Support of the joint density as an intersection of half-spaces through the origin.
    pub fn support_constraints(&self, n: usize) -> Vec<HalfSpace> {
        let f = |v: f64| v;
        match *self {
            PartialSumSpec::TotalSum | PartialSumSpec::BestSum { .. } => vec![HalfSpace(vec![1.0])],
            PartialSumSpec::HeadTail { m } => vec![
                HalfSpace(vec![0.0, 1.0]),
                HalfSpace(vec![f((n - m) as f64), -(m as f64)]),
            ],
            PartialSumSpec::PivotRest { m } => {
                let mut c = vec![HalfSpace(vec![1.0, 0.0]), HalfSpace(vec![-((m - 1) as f64), 1.0])];
                if m == 1 {
                    c.push(HalfSpace(vec![(n - 1) as f64, -1.0]));
                }
                c
            }
            PartialSumSpec::BestSumPivot { ns } => {
                vec![HalfSpace(vec![0.0, 1.0]), HalfSpace(vec![1.0, -((ns - 1) as f64)])]
            }
            PartialSumSpec::BestPivot { m, ns } => {
                let mid = (ns - m - 1) as f64;
                vec![
                    HalfSpace(vec![0.0, 0.0, 0.0, 1.0]),
                    HalfSpace(vec![0.0, 1.0, 0.0, -1.0]),
                    HalfSpace(vec![1.0, -((m - 1) as f64), 0.0, 0.0]),
                    HalfSpace(vec![0.0, 0.0, 1.0, -mid]),
                    HalfSpace(vec![0.0, mid, -1.0, 0.0]),
                ]
            }
            PartialSumSpec::BestPivotRest { m, ns } => {
                let mut c = vec![HalfSpace(vec![1.0, 0.0]), HalfSpace(vec![-((m - 1) as f64), 1.0])];
                if m == 1 {
                    c.push(HalfSpace(vec![(ns - 1) as f64, -1.0]));
                }
                c
            }
            PartialSumSpec::BestHeadTail { m, ns } => vec![
                HalfSpace(vec![0.0, 1.0]),
                HalfSpace(vec![(ns - m) as f64, -(m as f64)]),
            ],
        }
    }
}

/// Evaluated joint density of a [`PartialSumSpec`].
pub trait JointDensity: Send + Sync {
    fn spec(&self) -> PartialSumSpec;

    /// Branch count `N`.
    fn branches(&self) -> usize;

    /// Density at `z`; zero outside the support.
    fn density(&self, z: &[f64]) -> Result<f64>;

    fn dimension(&self) -> usize {
        self.spec().dimension()
    }

    fn in_support(&self, z: &[f64]) -> bool {
        z.iter().all(|x| x.is_finite())
            && self
                .spec()
                .support_constraints(self.branches())
                .iter()
                .all(|h| h.holds(z))
    }

    /// Slopes `c` of rays `z2 = c z1` where a 2-d density may kink or jump.
    fn kink_slopes(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Probability of the axis-aligned box `[lo, hi]`.
    fn box_probability(&self, lo: &[f64], hi: &[f64], quad: &QuadratureConfig) -> Result<f64> {
        generic_box_probability(self, lo, hi, quad)
    }
}

pub type JointDensityResult = Box<dyn JointDensity>;

fn generic_box_probability<D: JointDensity + ?Sized>(
    d: &D,
    lo: &[f64],
    hi: &[f64],
    quad: &QuadratureConfig,
) -> Result<f64> {
    match d.dimension() {
        1 => {
            let pts = breaks_within(lo[0], hi[0], []);
            try_integrate_with_breaks(|x| d.density(&[x]), &pts, quad).map(|q| q.value)
        }
        2 => {
            let mut slopes = d.kink_slopes();
            for h in d.spec().support_constraints(d.branches()) {
                // a z1 + b z2 = 0  →  z2 = -a/b z1
                if h.0[1] != 0.0 {
                    slopes.push(-h.0[0] / h.0[1]);
                }
            }
            slopes.retain(|c| c.is_finite() && *c > 0.0);
            let outer_breaks = breaks_within(
                lo[0],
                hi[0],
                slopes.iter().flat_map(|&c| [lo[1] / c, hi[1] / c]),
            );
            try_integrate_with_breaks(
                |z1| {
                    let pts = breaks_within(lo[1], hi[1], slopes.iter().map(|&c| c * z1));
                    try_integrate_with_breaks(|z2| d.density(&[z1, z2]), &pts, quad).map(|q| q.value)
                },
                &outer_breaks,
                quad,
            )
            .map(|q| q.value)
        }
        k => invalid(format!("no generic box integration in {k} dimensions")),
    }
}

/// Numeric settings shared by the density evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensityConfig {
    pub quad: QuadratureConfig,
    pub budget: ComplexityBudget,
}

fn sub_rates(profile: &FadingProfile, set: &IndexSet) -> Vec<f64> {
    profile.sub_rates(set)
}

fn pf(profile: &FadingProfile, set: &IndexSet) -> Result<PartialFractionCoeffs> {
    PartialFractionCoeffs::new(&profile.sub_averages(set))
}

/// `e^e φ(g, w)` without overflowing when `g w` is large and negative.
fn exp_phi(e: f64, g: f64, w: f64) -> f64 {
    if g >= 0.0 {
        e.exp() * phi(g, w)
    } else {
        (e - g * w).exp() * phi(-g, w)
    }
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Builds the density evaluator for `spec` over an exponential profile.
pub fn joint_density(profile: &FadingProfile, spec: PartialSumSpec, cfg: &DensityConfig) -> Result<JointDensityResult> {
    let n = profile.len();
    spec.validate(n)?;
    check_budget(n, cfg.budget)?;
    cfg.quad.validate()?;
    Ok(match spec {
        PartialSumSpec::TotalSum => Box::new(TotalSumDensity::new(profile)?),
        PartialSumSpec::HeadTail { m } => Box::new(HeadTailDensity::new(profile, m)?),
        PartialSumSpec::PivotRest { m } => Box::new(PivotRestDensity::new(profile, m)?),
        PartialSumSpec::BestSum { ns } => Box::new(BestSumDensity {
            joint: BestSumPivotDensity::new(profile, ns)?,
            quad: cfg.quad,
        }),
        PartialSumSpec::BestSumPivot { ns } => Box::new(BestSumPivotDensity::new(profile, ns)?),
        PartialSumSpec::BestPivot { m, ns } => Box::new(Pivot4Density {
            table: Arc::new(Pivot4Table::new(profile, m, ns)?),
        }),
        PartialSumSpec::BestPivotRest { m, ns } => Box::new(BestPivotRestDensity {
            table: Arc::new(Pivot4Table::new(profile, m, ns)?),
            quad: cfg.quad,
            inner: PivotRestInner::Head,
        }),
        PartialSumSpec::BestHeadTail { m, ns } => Box::new(BestHeadTailDensity {
            table: Arc::new(Pivot4Table::new(profile, m, ns)?),
            quad: cfg.quad,
        }),
    })
}

// ---------------------------------------------------------------- total sum

/// Density of `Σ_{n<=N} u_n`, the inverse of `Π_l c_l(∞, -S)`.
#[derive(Debug, Clone)]
pub struct TotalSumDensity {
    n: usize,
    sum: LaplaceTermSum,
}

impl TotalSumDensity {
    pub fn new(profile: &FadingProfile) -> Result<Self> {
        let all = profile.indices();
        Ok(Self {
            n: profile.len(),
            sum: LaplaceTermSum::prod_c(&pf(profile, &all)?, f64::INFINITY),
        })
    }
}

impl JointDensity for TotalSumDensity {
    fn spec(&self) -> PartialSumSpec {
        PartialSumSpec::TotalSum
    }

    fn branches(&self) -> usize {
        self.n
    }

    fn density(&self, z: &[f64]) -> Result<f64> {
        if !(z[0] >= 0.0) {
            return Ok(0.0);
        }
        self.sum.inverse_regular(z[0])
    }
}

pub fn pdf_total_sum(profile: &FadingProfile, z1: f64) -> Result<f64> {
    TotalSumDensity::new(profile)?.density(&[z1])
}

// ---------------------------------------------------------------- head / tail

#[derive(Debug, Clone, Copy)]
struct HeadTailTerm {
    coef: f64,
    ak: f64,
    aq: f64,
    beta: f64,
    h: usize,
}

#[derive(Debug, Clone)]
enum HeadTailKind {
    /// `m = 1`: the head is `u_1` itself and the outer integral collapses.
    Collapsed(Vec<(f64, PartialFractionCoeffs)>),
    /// `m >= 2`: exponential integrand in the pivot `u_m`, integrated exactly.
    Table(Vec<HeadTailTerm>),
}

/// Joint density of `(Σ_{n<=m} u_n, Σ_{n>m} u_n)`.
#[derive(Debug, Clone)]
pub struct HeadTailDensity {
    n: usize,
    m: usize,
    kind: HeadTailKind,
}

impl HeadTailDensity {
    pub fn new(profile: &FadingProfile, m: usize) -> Result<Self> {
        let n = profile.len();
        PartialSumSpec::HeadTail { m }.validate(n)?;
        let all = profile.indices();
        let rates = profile.rates();
        let kind = if m == 1 {
            let mut entries = Vec::with_capacity(n);
            for i in 1..=n {
                let b = all.difference(&IndexSet::new(vec![i])?);
                entries.push((rates[i - 1], pf(profile, &b)?));
            }
            HeadTailKind::Collapsed(entries)
        } else {
            let mut terms = Vec::new();
            for im in 1..=n {
                let pivot = IndexSet::new(vec![im])?;
                let rest = all.difference(&pivot);
                let a_im = rates[im - 1];
                for a_set in enumerate_subsets(&rest, &IndexSet::empty(), m - 1)? {
                    let b_set = rest.difference(&a_set);
                    let pfa = pf(profile, &a_set)?;
                    let pfb = pf(profile, &b_set)?;
                    let s = a_im + profile.rate_sum(&a_set);
                    let b_rates = sub_rates(profile, &b_set);
                    for (ca, ak) in pfa.terms() {
                        for j in power_set(&IndexSet::full(b_set.len())) {
                            let sj: f64 = j.zero_based().map(|l| b_rates[l]).sum();
                            let h = j.len();
                            for (cb, aq) in pfb.terms() {
                                terms.push(HeadTailTerm {
                                    coef: a_im * ca * cb * sign(h),
                                    ak,
                                    aq,
                                    beta: s - m as f64 * ak + sj - h as f64 * aq,
                                    h,
                                });
                            }
                        }
                    }
                }
            }
            HeadTailKind::Table(terms)
        };
        Ok(Self { n, m, kind })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn eval(&self, z1: f64, z2: f64) -> Result<f64> {
        let (n, m) = (self.n as f64, self.m as f64);
        match &self.kind {
            HeadTailKind::Collapsed(entries) => {
                let mut acc = KahanSum::new();
                for (a, pfb) in entries {
                    let tail = LaplaceTermSum::prod_c(pfb, z1).inverse_regular(z2)?;
                    acc.add(a * (-a * z1).exp() * tail);
                }
                Ok(acc.value())
            }
            HeadTailKind::Table(terms) => {
                let lower = z2 / (n - m);
                let top = z1 / m;
                let mut acc = KahanSum::new();
                for t in terms {
                    let upper = if t.h == 0 { top } else { top.min(z2 / t.h as f64) };
                    if upper <= lower {
                        continue;
                    }
                    let e = -t.ak * z1 - t.aq * z2 - t.beta * lower;
                    acc.add(t.coef * exp_phi(e, t.beta, upper - lower));
                }
                Ok(acc.value())
            }
        }
    }
}

impl JointDensity for HeadTailDensity {
    fn spec(&self) -> PartialSumSpec {
        PartialSumSpec::HeadTail { m: self.m }
    }

    fn branches(&self) -> usize {
        self.n
    }

    fn density(&self, z: &[f64]) -> Result<f64> {
        if !self.in_support(z) {
            return Ok(0.0);
        }
        self.eval(z[0], z[1])
    }

    fn kink_slopes(&self) -> Vec<f64> {
        (1..=self.n - self.m).map(|h| h as f64 / self.m as f64).collect()
    }
}

pub fn joint_pdf_head_tail(profile: &FadingProfile, m: usize, z1: f64, z2: f64) -> Result<f64> {
    HeadTailDensity::new(profile, m)?.density(&[z1, z2])
}

// ---------------------------------------------------------------- pivot / rest

/// Joint density of `(u_m, Σ_{n≠m} u_n)`.
#[derive(Debug, Clone)]
pub struct PivotRestDensity {
    n: usize,
    m: usize,
    entries: Vec<(f64, PartialFractionCoeffs, PartialFractionCoeffs)>,
}

impl PivotRestDensity {
    pub fn new(profile: &FadingProfile, m: usize) -> Result<Self> {
        let n = profile.len();
        PartialSumSpec::PivotRest { m }.validate(n)?;
        let all = profile.indices();
        let mut entries = Vec::new();
        for im in 1..=n {
            let rest = all.difference(&IndexSet::new(vec![im])?);
            for a_set in enumerate_subsets(&rest, &IndexSet::empty(), m - 1)? {
                let b_set = rest.difference(&a_set);
                entries.push((profile.rates()[im - 1], pf(profile, &a_set)?, pf(profile, &b_set)?));
            }
        }
        Ok(Self { n, m, entries })
    }
}

impl JointDensity for PivotRestDensity {
    fn spec(&self) -> PartialSumSpec {
        PartialSumSpec::PivotRest { m: self.m }
    }

    fn branches(&self) -> usize {
        self.n
    }

    fn density(&self, z: &[f64]) -> Result<f64> {
        if !self.in_support(z) {
            return Ok(0.0);
        }
        let (z1, z2) = (z[0], z[1]);
        let mut acc = KahanSum::new();
        for (a, pfa, pfb) in &self.entries {
            let s = LaplaceTermSum::prod_e(pfa, z1).mul(&LaplaceTermSum::prod_c(pfb, z1))?;
            acc.add(a * (-a * z1).exp() * s.inverse_regular(z2)?);
        }
        Ok(acc.value())
    }

    fn kink_slopes(&self) -> Vec<f64> {
        (0..=self.n - self.m).map(|h| (self.m - 1 + h) as f64).collect()
    }
}

pub fn joint_pdf_pivot_rest_all(profile: &FadingProfile, m: usize, z1: f64, z2: f64) -> Result<f64> {
    PivotRestDensity::new(profile, m)?.density(&[z1, z2])
}

// ---------------------------------------------------------------- best Ns

/// Joint density of `(Σ_{n<Ns} u_n, u_Ns)`.
#[derive(Debug, Clone)]
pub struct BestSumPivotDensity {
    n: usize,
    ns: usize,
    entries: Vec<(f64, PartialFractionCoeffs, Vec<f64>)>,
}

impl BestSumPivotDensity {
    pub fn new(profile: &FadingProfile, ns: usize) -> Result<Self> {
        let n = profile.len();
        PartialSumSpec::BestSumPivot { ns }.validate(n)?;
        let all = profile.indices();
        let mut entries = Vec::new();
        for i in 1..=n {
            let rest = all.difference(&IndexSet::new(vec![i])?);
            for a_set in enumerate_subsets(&rest, &IndexSet::empty(), ns - 1)? {
                let r_set = rest.difference(&a_set);
                entries.push((profile.rates()[i - 1], pf(profile, &a_set)?, sub_rates(profile, &r_set)));
            }
        }
        Ok(Self { n, ns, entries })
    }

    fn eval(&self, z1: f64, z2: f64) -> Result<f64> {
        let mut acc = KahanSum::new();
        for (a, pfa, r) in &self.entries {
            let cdfs: f64 = r.iter().map(|ar| -(-ar * z2).exp_m1()).product();
            if cdfs == 0.0 {
                continue;
            }
            let head = LaplaceTermSum::prod_e(pfa, z2).inverse_regular(z1)?;
            acc.add(a * (-a * z2).exp() * cdfs * head);
        }
        Ok(acc.value())
    }
}

impl JointDensity for BestSumPivotDensity {
    fn spec(&self) -> PartialSumSpec {
        PartialSumSpec::BestSumPivot { ns: self.ns }
    }

    fn branches(&self) -> usize {
        self.n
    }

    fn density(&self, z: &[f64]) -> Result<f64> {
        if !self.in_support(z) {
            return Ok(0.0);
        }
        self.eval(z[0], z[1])
    }

    fn kink_slopes(&self) -> Vec<f64> {
        vec![1.0 / (self.ns - 1) as f64]
    }
}

/// Density of `Σ_{n<=Ns} u_n` by integrating the `(Σ_{n<Ns}, u_Ns)` density along `z1 + z2 = x`.
#[derive(Debug, Clone)]
pub struct BestSumDensity {
    joint: BestSumPivotDensity,
    quad: QuadratureConfig,
}

impl BestSumDensity {
    pub fn new(profile: &FadingProfile, ns: usize, quad: QuadratureConfig) -> Result<Self> {
        Ok(Self {
            joint: BestSumPivotDensity::new(profile, ns)?,
            quad,
        })
    }
}

impl JointDensity for BestSumDensity {
    fn spec(&self) -> PartialSumSpec {
        PartialSumSpec::BestSum { ns: self.joint.ns }
    }

    fn branches(&self) -> usize {
        self.joint.n
    }

    fn density(&self, z: &[f64]) -> Result<f64> {
        let x = z[0];
        if !(x > 0.0) {
            return Ok(0.0);
        }
        let top = x / self.joint.ns as f64;
        try_integrate_with_breaks(|z2| self.joint.eval(x - z2, z2), &[0.0, top], &self.quad).map(|q| q.value)
    }
}

pub fn pdf_best_ns_sum(profile: &FadingProfile, ns: usize, x: f64, quad: &QuadratureConfig) -> Result<f64> {
    BestSumDensity {
        joint: BestSumPivotDensity::new(profile, ns)?,
        quad: *quad,
    }
    .density(&[x])
}

// ---------------------------------------------------------------- two pivots

#[derive(Debug, Clone, Copy)]
struct Pivot4Term {
    coef: f64,
    a1: f64,
    a3: f64,
    b2: f64,
    b4: f64,
    h: usize,
}

/// Exact expansion of the density of `(Z1, Z2, Z3, Z4) = (Σ_{n<m}, u_m, Σ_{m<n<Ns}, u_Ns)`:
///
/// `Σ_t coef_t exp(-a1 w1 - a3 w3 - b2 z2 - b4 z4) [w3 >= 0]`, with
/// `w1 = z1 - (m-1) z2` and `w3 = z3 - h z2 - (|M| - h) z4`.
///
/// An empty head group (`m = 1`) makes `Z1 ≡ 0` and an empty middle group
/// (`m = Ns - 1`) makes `Z3 ≡ 0`; the matching factor is then a unit delta.
#[derive(Debug, Clone)]
pub struct Pivot4Table {
    n: usize,
    m: usize,
    ns: usize,
    mid: usize,
    terms: Vec<Pivot4Term>,
}

impl Pivot4Table {
    pub fn new(profile: &FadingProfile, m: usize, ns: usize) -> Result<Self> {
        let n = profile.len();
        if !(m >= 1 && m < ns && ns <= n) {
            return invalid(format!("need 1 <= m < Ns <= N, got m = {m}, Ns = {ns}, N = {n}"));
        }
        let all = profile.indices();
        let rates = profile.rates();
        let mid = ns - m - 1;
        let mut terms = Vec::new();
        for im in 1..=n {
            for is in 1..=n {
                if is == im {
                    continue;
                }
                let rest = all.difference(&IndexSet::new(vec![im, is])?);
                let (a_im, a_is) = (rates[im - 1], rates[is - 1]);
                for a_set in enumerate_subsets(&rest, &IndexSet::empty(), m - 1)? {
                    let rest2 = rest.difference(&a_set);
                    for m_set in enumerate_subsets(&rest2, &IndexSet::empty(), mid)? {
                        let r_set = rest2.difference(&m_set);
                        let head: Vec<(f64, f64)> = if a_set.is_empty() {
                            vec![(1.0, 0.0)]
                        } else {
                            pf(profile, &a_set)?.terms().map(|(c, a)| (-c, a)).collect()
                        };
                        let m_rates = sub_rates(profile, &m_set);
                        let r_rates = sub_rates(profile, &r_set);
                        let pfm = pf(profile, &m_set)?;
                        let sa = profile.rate_sum(&a_set);
                        let sm = profile.rate_sum(&m_set);
                        for k_sub in power_set(&IndexSet::full(r_set.len())) {
                            let sk: f64 = k_sub.zero_based().map(|l| r_rates[l]).sum();
                            let ck = a_im * a_is * sign(k_sub.len());
                            for &(ch, a1) in &head {
                                for j in power_set(&IndexSet::full(m_set.len())) {
                                    let sj: f64 = j.zero_based().map(|l| m_rates[l]).sum();
                                    let b2 = a_im + sa + sj;
                                    let b4 = a_is + sk + sm - sj;
                                    if m_set.is_empty() {
                                        terms.push(Pivot4Term { coef: ck * ch, a1, a3: 0.0, b2, b4, h: 0 });
                                        continue;
                                    }
                                    for (cq, a3) in pfm.terms() {
                                        terms.push(Pivot4Term {
                                            coef: ck * ch * sign(j.len()) * -cq,
                                            a1,
                                            a3,
                                            b2,
                                            b4,
                                            h: j.len(),
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Self { n, m, ns, mid, terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn has_head(&self) -> bool {
        self.m > 1
    }

    fn has_mid(&self) -> bool {
        self.mid > 0
    }

    /// 4-d density, both groups non-empty; the caller checks the support.
    fn eval4(&self, z: &[f64]) -> f64 {
        let (z1, z2, z3, z4) = (z[0], z[1], z[2], z[3]);
        let w1 = z1 - (self.m - 1) as f64 * z2;
        let mut acc = KahanSum::new();
        for t in &self.terms {
            let w3 = z3 - t.h as f64 * z2 - (self.mid - t.h) as f64 * z4;
            if w3 < 0.0 {
                continue;
            }
            acc.add(t.coef * (-t.a1 * w1 - t.a3 * w3 - t.b2 * z2 - t.b4 * z4).exp());
        }
        acc.value()
    }

    /// Inner integral over `z2` of the `(Σ_{n<=m}, Σ_{m<n<=Ns})` density at fixed `z4`.
    fn head_tail_inner(&self, x: f64, y: f64, z4: f64) -> f64 {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let lo = (y - z4) / mid;
        let hi = x / m;
        let mut acc = KahanSum::new();
        for t in &self.terms {
            let h = t.h as f64;
            let span = y - (mid - h + 1.0) * z4;
            let top = if t.h == 0 { hi } else { hi.min(span / h) };
            if top <= lo || span < 0.0 {
                continue;
            }
            let g = t.b2 - m * t.a1 - h * t.a3;
            let c0 = -t.a1 * x - t.a3 * span - t.b4 * z4;
            acc.add(t.coef * exp_phi(c0 - g * lo, g, top - lo));
        }
        acc.value()
    }

    fn head_tail_breaks(&self, x: f64, y: f64, lo: f64, hi: f64) -> Vec<f64> {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let mut pts = vec![y - mid * x / m];
        for h in 1..=self.mid {
            let h = h as f64;
            let d = mid * (mid - h + 1.0) - h;
            if d != 0.0 {
                pts.push(y * (mid - h) / d);
            }
            pts.push((y - h * x / m) / (mid - h + 1.0));
        }
        breaks_within(lo, hi, pts)
    }

    /// `(Σ_{n<=m}, Σ_{m<n<=Ns})` density; `x > m y / (Ns - m)` is the caller's check.
    fn head_tail(&self, x: f64, y: f64, quad: &QuadratureConfig) -> Result<f64> {
        let (m, mid) = (self.m as f64, self.mid as f64);
        match (self.has_head(), self.has_mid()) {
            (true, true) => {
                let lo = (y - mid * x / m).max(0.0);
                let hi = y / (mid + 1.0);
                if hi <= lo {
                    return Ok(0.0);
                }
                let pts = self.head_tail_breaks(x, y, lo, hi);
                try_integrate_with_breaks(|z4| Ok(self.head_tail_inner(x, y, z4)), &pts, quad).map(|q| q.value)
            }
            (false, true) => {
                // u_1 = x exactly; integrate z4 in closed form
                let lo = (y - mid * x).max(0.0);
                let mut acc = KahanSum::new();
                for t in &self.terms {
                    let h = t.h as f64;
                    let top = x.min(y / (mid + 1.0)).min((y - h * x) / (mid - h + 1.0));
                    if top <= lo {
                        continue;
                    }
                    let g = t.b4 - t.a3 * (mid - h + 1.0);
                    let c0 = -t.a3 * (y - h * x) - t.b2 * x;
                    acc.add(t.coef * exp_phi(c0 - g * lo, g, top - lo));
                }
                Ok(acc.value())
            }
            (true, false) => {
                // u_Ns = y exactly; integrate z2 in closed form
                let (lo, hi) = (y, x / m);
                if hi <= lo {
                    return Ok(0.0);
                }
                let mut acc = KahanSum::new();
                for t in &self.terms {
                    let g = t.b2 - m * t.a1;
                    let c0 = -t.a1 * x - t.b4 * y;
                    acc.add(t.coef * exp_phi(c0 - g * lo, g, hi - lo));
                }
                Ok(acc.value())
            }
            (false, false) => {
                if y > x {
                    return Ok(0.0);
                }
                Ok(self.terms.iter().map(|t| t.coef * (-t.b2 * x - t.b4 * y).exp()).collect::<KahanSum>().value())
            }
        }
    }

    /// Inner integral over `z1` of the `(u_m, rest)` density at fixed `z4`.
    fn pivot_rest_inner_z1(&self, x: f64, y: f64, z4: f64) -> f64 {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let lo = ((m - 1.0) * x).max(y - z4 - mid * x);
        let mut acc = KahanSum::new();
        for t in &self.terms {
            let h = t.h as f64;
            let span = y - h * x - (mid - h + 1.0) * z4;
            if span <= lo {
                continue;
            }
            let g = t.a1 - t.a3;
            let c0 = t.a1 * (m - 1.0) * x - t.b2 * x - t.b4 * z4;
            // exponent at z1: c0 - a3 (span - z1) - a1 z1
            acc.add(t.coef * exp_phi(c0 - t.a3 * span - g * lo, g, span - lo));
        }
        acc.value()
    }

    /// Same integral with `z3` as the inner variable.
    fn pivot_rest_inner_z3(&self, x: f64, y: f64, z4: f64) -> f64 {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let hi = (mid * x).min(y - z4 - (m - 1.0) * x);
        let mut acc = KahanSum::new();
        for t in &self.terms {
            let h = t.h as f64;
            let lo = h * x + (mid - h) * z4;
            if hi <= lo {
                continue;
            }
            let g = t.a3 - t.a1;
            let c0 = -t.a1 * (y - z4 - (m - 1.0) * x) - t.b2 * x - t.b4 * z4;
            // exponent at z3: c0 + a1 z3 - a3 (z3 - lo)
            acc.add(t.coef * exp_phi(c0 + t.a1 * lo, g, hi - lo));
        }
        acc.value()
    }

    fn pivot_rest(&self, x: f64, y: f64, inner: PivotRestInner, quad: &QuadratureConfig) -> Result<f64> {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let mut pts = vec![y - (m - 1.0 + mid) * x];
        for h in 0..=self.mid {
            let h = h as f64;
            pts.push((y - (h + m - 1.0) * x) / (mid - h + 1.0));
        }
        let pts = breaks_within(0.0, x, pts);
        let f = |z4: f64| {
            Ok(match inner {
                PivotRestInner::Head => self.pivot_rest_inner_z1(x, y, z4),
                PivotRestInner::Middle => self.pivot_rest_inner_z3(x, y, z4),
            })
        };
        try_integrate_with_breaks(f, &pts, quad).map(|q| q.value)
    }

    /// `∫∫ exp(...)` over `z1 ∈ [l1, u1]`, `z3 ∈ [l3, u3]` at fixed `(z2, z4)`.
    fn box_inner(&self, z2: f64, z4: f64, l1: f64, u1: f64, l3: f64, u3: f64) -> f64 {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let base1 = (m - 1.0) * z2;
        let lo1 = l1.max(base1);
        if u1 <= lo1 {
            return 0.0;
        }
        let top3 = u3.min(mid * z2);
        let floor3 = l3.max(mid * z4);
        let mut acc = KahanSum::new();
        for t in &self.terms {
            let h = t.h as f64;
            let base3 = h * z2 + (mid - h) * z4;
            let lo3 = floor3.max(base3);
            if top3 <= lo3 {
                continue;
            }
            let i1 = (-t.a1 * (lo1 - base1)).exp() * phi(t.a1, u1 - lo1);
            let i3 = (-t.a3 * (lo3 - base3)).exp() * phi(t.a3, top3 - lo3);
            acc.add(t.coef * (-t.b2 * z2 - t.b4 * z4).exp() * i1 * i3);
        }
        acc.value()
    }

    /// `∫∫` over `z1 >= (m-1) z2`, `z3 <= |M| z2`, `c <= z1 + z3 + z4 <= d` at fixed `(z2, z4)`.
    fn strip_inner(&self, z2: f64, z4: f64, c: f64, d: f64) -> f64 {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let b1 = (m - 1.0) * z2;
        let top3 = mid * z2;
        // z1 + z3 window after removing z4; shifted by the z1 floor
        let (lo_s, hi_s) = (c - z4 - b1, d - z4 - b1);
        let width = d - c;
        let mut acc = KahanSum::new();
        for t in &self.terms {
            let h = t.h as f64;
            let b3 = h * z2 + (mid - h) * z4;
            let base = -t.b2 * z2 - t.b4 * z4 + t.a3 * b3;
            let g = t.a3 - t.a1;
            // z1 window fully open: z3 in [b3, min(top3, lo_s)]
            let q1 = top3.min(lo_s);
            if q1 > b3 {
                acc.add(t.coef * phi(t.a1, width) * exp_phi(base - t.a1 * lo_s - g * b3, g, q1 - b3));
            }
            // z1 window cut by its floor: z3 in [max(b3, lo_s), min(top3, hi_s)]
            let p2 = b3.max(lo_s);
            let q2 = top3.min(hi_s);
            if q2 > p2 {
                let w = q2 - p2;
                let full = exp_phi(base - t.a3 * p2, t.a3, w);
                let cut = exp_phi(base - t.a1 * hi_s - g * p2, g, w);
                acc.add(t.coef * (full - cut) / t.a1);
            }
        }
        acc.value()
    }

    /// Box probability of `(Σ_{n<=m}, Σ_{m<n<=Ns})`, both groups non-empty.
    fn head_tail_box(&self, lo: &[f64], hi: &[f64], quad: &QuadratureConfig) -> Result<f64> {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let (a, b, c, d) = (lo[0].max(0.0), hi[0], lo[1].max(0.0), hi[1]);
        let top2 = b / m;
        if top2 <= 0.0 || d <= 0.0 {
            return Ok(0.0);
        }
        let mut outer = vec![a / m, c / (mid + 1.0), d / (mid + 1.0), c / mid, d / mid];
        for h in 1..=self.mid {
            outer.push(c / h as f64);
            outer.push(d / h as f64);
        }
        let outer = breaks_within(0.0, top2, outer);
        let f = |z2: f64| {
            let top = z2.min(d / (mid + 1.0));
            if top <= 0.0 {
                return Ok(0.0);
            }
            let mut pts = vec![c / (mid + 1.0), c - mid * z2, d - mid * z2];
            for h in 0..=self.mid {
                let hh = h as f64;
                pts.push((c - hh * z2) / (mid - hh + 1.0));
                pts.push((d - hh * z2) / (mid - hh + 1.0));
            }
            let pts = breaks_within(0.0, top, pts);
            let g = |z4: f64| Ok(self.box_inner(z2, z4, a - z2, b - z2, c - z4, d - z4));
            try_integrate_with_breaks(g, &pts, quad).map(|q| q.value)
        };
        try_integrate_with_breaks(f, &outer, quad).map(|q| q.value)
    }

    /// Box probability of `(u_m, Σ_{n<=Ns, n≠m})`, both groups non-empty.
    fn pivot_rest_box(&self, lo: &[f64], hi: &[f64], quad: &QuadratureConfig) -> Result<f64> {
        let (m, mid) = (self.m as f64, self.mid as f64);
        let (a, b, c, d) = (lo[0].max(0.0), hi[0], lo[1].max(0.0), hi[1]);
        let top2 = b.min(d / (m - 1.0));
        if top2 <= a {
            return Ok(0.0);
        }
        let mut outer = Vec::new();
        for k in 0..=self.mid + 1 {
            let s = m - 1.0 + k as f64;
            outer.push(c / s);
            outer.push(d / s);
        }
        outer.push(c / (m + mid));
        outer.push(d / (m + mid));
        outer.retain(|x| x.is_finite());
        let outer = breaks_within(a, top2, outer);
        let f = |z2: f64| {
            let top = z2.min((d - (m - 1.0) * z2) / (mid + 1.0));
            if top <= 0.0 {
                return Ok(0.0);
            }
            let mut pts = vec![c - (m - 1.0 + mid) * z2, d - (m - 1.0 + mid) * z2];
            for h in 0..=self.mid {
                let hh = h as f64;
                pts.push((c - (m - 1.0 + hh) * z2) / (mid - hh + 1.0));
                pts.push((d - (m - 1.0 + hh) * z2) / (mid - hh + 1.0));
            }
            let pts = breaks_within(0.0, top, pts);
            try_integrate_with_breaks(|z4| Ok(self.strip_inner(z2, z4, c, d)), &pts, quad).map(|q| q.value)
        };
        try_integrate_with_breaks(f, &outer, quad).map(|q| q.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRestInner {
    /// Integrate the head sum `Z1` innermost.
    Head,
    /// Integrate the middle sum `Z3` innermost.
    Middle,
}

/// 4-d density of `(Σ_{n<m}, u_m, Σ_{m<n<Ns}, u_Ns)`, `1 < m < Ns - 1`.
#[derive(Debug, Clone)]
pub struct Pivot4Density {
    table: Arc<Pivot4Table>,
}

impl Pivot4Density {
    pub fn new(profile: &FadingProfile, m: usize, ns: usize) -> Result<Self> {
        PartialSumSpec::BestPivot { m, ns }.validate(profile.len())?;
        Ok(Self {
            table: Arc::new(Pivot4Table::new(profile, m, ns)?),
        })
    }

    pub fn terms(&self) -> usize {
        self.table.len()
    }
}

impl JointDensity for Pivot4Density {
    fn spec(&self) -> PartialSumSpec {
        PartialSumSpec::BestPivot {
            m: self.table.m,
            ns: self.table.ns,
        }
    }

    fn branches(&self) -> usize {
        self.table.n
    }

    fn density(&self, z: &[f64]) -> Result<f64> {
        if !self.in_support(z) {
            return Ok(0.0);
        }
        Ok(self.table.eval4(z))
    }

    /// Exact in `z1` and `z3`, adaptive in `(z2, z4)` over `z4 <= z2`.
    fn box_probability(&self, lo: &[f64], hi: &[f64], quad: &QuadratureConfig) -> Result<f64> {
        let t = &self.table;
        let (m, mid) = (t.m as f64, t.mid as f64);
        let (l1, u1, l2, u2, l3, u3, l4, u4) = (lo[0], hi[0], lo[1], hi[1], lo[2], hi[2], lo[3], hi[3]);
        let l2 = l2.max(l4).max(0.0);
        if u2 <= l2 {
            return Ok(0.0);
        }
        let mut outer = vec![u1 / (m - 1.0), l3 / mid, u3 / mid, u4, l4];
        outer.retain(|x| x.is_finite());
        let outer = breaks_within(l2, u2, outer);
        let f = |z2: f64| {
            let top = u4.min(z2);
            let bottom = l4.max(0.0);
            if top <= bottom {
                return Ok(0.0);
            }
            let mut pts = vec![l3 / mid, u3 / mid];
            for h in 0..t.mid {
                let hh = h as f64;
                pts.push((l3 - hh * z2) / (mid - hh));
                pts.push((u3 - hh * z2) / (mid - hh));
            }
            let pts = breaks_within(bottom, top, pts);
            try_integrate_with_breaks(|z4| Ok(t.box_inner(z2, z4, l1, u1, l3, u3)), &pts, quad).map(|q| q.value)
        };
        try_integrate_with_breaks(f, &outer, quad).map(|q| q.value)
    }
}

pub fn joint_pdf_4d(profile: &FadingProfile, m: usize, ns: usize, z: [f64; 4]) -> Result<f64> {
    Pivot4Density::new(profile, m, ns)?.density(&z)
}

/// Density of `(u_m, Σ_{n<=Ns, n≠m} u_n)` from the 4-d density, `1 < m < Ns - 1`.
#[derive(Debug, Clone)]
pub struct BestPivotRestDensity {
    table: Arc<Pivot4Table>,
    quad: QuadratureConfig,
    inner: PivotRestInner,
}

impl BestPivotRestDensity {
    pub fn new(profile: &FadingProfile, m: usize, ns: usize, inner: PivotRestInner, quad: QuadratureConfig) -> Result<Self> {
        PartialSumSpec::BestPivotRest { m, ns }.validate(profile.len())?;
        Ok(Self {
            table: Arc::new(Pivot4Table::new(profile, m, ns)?),
            quad,
            inner,
        })
    }
}

impl JointDensity for BestPivotRestDensity {
    fn spec(&self) -> PartialSumSpec {
        PartialSumSpec::BestPivotRest {
            m: self.table.m,
            ns: self.table.ns,
        }
    }

    fn branches(&self) -> usize {
        self.table.n
    }

    fn density(&self, z: &[f64]) -> Result<f64> {
        if !self.in_support(z) || z[0] <= 0.0 {
            return Ok(0.0);
        }
        self.table.pivot_rest(z[0], z[1], self.inner, &self.quad)
    }

    /// Exact in the head and middle sums when both groups are present.
    fn box_probability(&self, lo: &[f64], hi: &[f64], quad: &QuadratureConfig) -> Result<f64> {
        if self.table.has_head() && self.table.has_mid() {
            self.table.pivot_rest_box(lo, hi, quad)
        } else {
            generic_box_probability(self, lo, hi, quad)
        }
    }

    fn kink_slopes(&self) -> Vec<f64> {
        let m = self.table.m;
        (0..=self.table.mid + 1).map(|h| (m - 1 + h) as f64).collect()
    }
}

pub fn joint_pdf_pivot_rest_ns(
    profile: &FadingProfile,
    m: usize,
    ns: usize,
    x: f64,
    y: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    BestPivotRestDensity::new(profile, m, ns, PivotRestInner::Head, *quad)?.density(&[x, y])
}

/// Density of `(Σ_{n<=m} u_n, Σ_{m<n<=Ns} u_n)`, `1 <= m < Ns`.
#[derive(Debug, Clone)]
pub struct BestHeadTailDensity {
    table: Arc<Pivot4Table>,
    quad: QuadratureConfig,
}

impl BestHeadTailDensity {
    pub fn new(profile: &FadingProfile, m: usize, ns: usize, quad: QuadratureConfig) -> Result<Self> {
        PartialSumSpec::BestHeadTail { m, ns }.validate(profile.len())?;
        Ok(Self {
            table: Arc::new(Pivot4Table::new(profile, m, ns)?),
            quad,
        })
    }
}

impl JointDensity for BestHeadTailDensity {
    fn spec(&self) -> PartialSumSpec {
        PartialSumSpec::BestHeadTail {
            m: self.table.m,
            ns: self.table.ns,
        }
    }

    fn branches(&self) -> usize {
        self.table.n
    }

    fn density(&self, z: &[f64]) -> Result<f64> {
        let (x, y) = (z[0], z[1]);
        let (m, ns) = (self.table.m as f64, self.table.ns as f64);
        if !self.in_support(z) || x <= m * y / (ns - m) {
            return Ok(0.0);
        }
        self.table.head_tail(x, y, &self.quad)
    }

    /// Exact in the head and middle sums when both groups are present.
    fn box_probability(&self, lo: &[f64], hi: &[f64], quad: &QuadratureConfig) -> Result<f64> {
        if self.table.has_head() && self.table.has_mid() {
            self.table.head_tail_box(lo, hi, quad)
        } else {
            generic_box_probability(self, lo, hi, quad)
        }
    }

    fn kink_slopes(&self) -> Vec<f64> {
        let (m, mid) = (self.table.m as f64, self.table.mid as f64);
        let mut s = vec![(mid + 1.0) / m];
        for h in 1..=self.table.mid {
            s.push(h as f64 / m);
        }
        s.push(mid / m);
        s
    }
}

pub fn joint_pdf_head_tail_ns(
    profile: &FadingProfile,
    m: usize,
    ns: usize,
    x: f64,
    y: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    BestHeadTailDensity::new(profile, m, ns, *quad)?.density(&[x, y])
}

// ---------------------------------------------------------------- MGFs

fn indices_of(set: &IndexSet) -> Vec<usize> {
    set.zero_based().collect()
}

struct Split {
    pivot: usize,
    above: Vec<usize>,
    below: Vec<usize>,
}

fn single_pivot_splits(n: usize, above: usize) -> Result<Vec<Split>> {
    let all = IndexSet::full(n);
    let mut out = Vec::new();
    for i in 1..=n {
        let rest = all.difference(&IndexSet::new(vec![i])?);
        for a in enumerate_subsets(&rest, &IndexSet::empty(), above)? {
            out.push(Split {
                pivot: i - 1,
                below: indices_of(&rest.difference(&a)),
                above: indices_of(&a),
            });
        }
    }
    Ok(out)
}

fn prod<F: Fn(usize) -> Result<f64>>(ix: &[usize], f: F) -> Result<f64> {
    let mut p = 1.0;
    for &l in ix {
        p *= f(l)?;
    }
    Ok(p)
}

/// `Σ_splits ∫_0^∞ p_pivot(u) e^{λp u} Π_above e(u, λa) Π_below c(u, λb) du`.
fn single_pivot_mgf(
    model: &dyn BranchModel,
    above: usize,
    lp: f64,
    la: f64,
    lb: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let splits = single_pivot_splits(model.len(), above)?;
    let f = |u: f64| -> Result<f64> {
        let mut acc = KahanSum::new();
        for s in &splits {
            let p = model.pdf(s.pivot, u);
            if p == 0.0 {
                continue;
            }
            let head = prod(&s.above, |l| model.e(l, u, la))?;
            let tail = prod(&s.below, |l| model.c(l, u, lb))?;
            acc.add(p * (lp * u).exp() * head * tail);
        }
        Ok(acc.value())
    };
    try_integrate_to_infinity(f, 0.0, model.scale(), quad).map(|q| q.value)
}

/// 4-d MGF of `(Σ_{n<m}, u_m, Σ_{m<n<Ns}, u_Ns)`; empty groups contribute a factor 1.
fn two_pivot_mgf(model: &dyn BranchModel, m: usize, ns: usize, l: [f64; 4], quad: &QuadratureConfig) -> Result<f64> {
    let n = model.len();
    let all = IndexSet::full(n);
    struct Combo {
        im: usize,
        is: usize,
        a: Vec<usize>,
        mid: Vec<usize>,
        r: Vec<usize>,
    }
    let mut combos = Vec::new();
    for im in 1..=n {
        for is in 1..=n {
            if im == is {
                continue;
            }
            let rest = all.difference(&IndexSet::new(vec![im, is])?);
            for a in enumerate_subsets(&rest, &IndexSet::empty(), m - 1)? {
                let rest2 = rest.difference(&a);
                for mm in enumerate_subsets(&rest2, &IndexSet::empty(), ns - m - 1)? {
                    combos.push(Combo {
                        im: im - 1,
                        is: is - 1,
                        a: indices_of(&a),
                        r: indices_of(&rest2.difference(&mm)),
                        mid: indices_of(&mm),
                    });
                }
            }
        }
    }
    let outer = |v1: f64| -> Result<f64> {
        if v1 == 0.0 {
            return Ok(0.0);
        }
        let inner = |v2: f64| -> Result<f64> {
            let mut acc = KahanSum::new();
            for c in &combos {
                let p1 = model.pdf(c.im, v1);
                let p2 = model.pdf(c.is, v2);
                if p1 == 0.0 || p2 == 0.0 {
                    continue;
                }
                let head = prod(&c.a, |k| model.e(k, v1, l[0]))?;
                let middle = prod(&c.mid, |k| model.mu(k, v2, v1, l[2]))?;
                let tail = prod(&c.r, |k| model.c(k, v2, 0.0))?;
                acc.add(p1 * (l[1] * v1).exp() * head * p2 * (l[3] * v2).exp() * middle * tail);
            }
            Ok(acc.value())
        };
        try_integrate_with_breaks(inner, &[0.0, v1], quad).map(|q| q.value)
    };
    try_integrate_to_infinity(outer, 0.0, model.scale(), quad).map(|q| q.value)
}

/// Joint MGF `E[exp(Σ_k λ_k Z_k)]` of the partial sums described by `spec`.
pub fn joint_mgf(model: &dyn BranchModel, spec: PartialSumSpec, lambdas: &[f64], quad: &QuadratureConfig) -> Result<f64> {
    let n = model.len();
    spec.validate_mgf(n)?;
    quad.validate()?;
    if lambdas.len() != spec.dimension() {
        return invalid(format!(
            "{} needs {} transform points, got {}",
            spec.name(),
            spec.dimension(),
            lambdas.len()
        ));
    }
    match spec {
        PartialSumSpec::TotalSum => (0..n).map(|l| model.mgf(l, lambdas[0])).product(),
        PartialSumSpec::HeadTail { m } => single_pivot_mgf(model, m - 1, lambdas[0], lambdas[0], lambdas[1], quad),
        PartialSumSpec::PivotRest { m } => single_pivot_mgf(model, m - 1, lambdas[0], lambdas[1], lambdas[1], quad),
        PartialSumSpec::BestSum { ns } => best_sum_pivot_mgf(model, ns, lambdas[0], lambdas[0], quad),
        PartialSumSpec::BestSumPivot { ns } => best_sum_pivot_mgf(model, ns, lambdas[0], lambdas[1], quad),
        PartialSumSpec::BestPivot { m, ns } => {
            two_pivot_mgf(model, m, ns, [lambdas[0], lambdas[1], lambdas[2], lambdas[3]], quad)
        }
        PartialSumSpec::BestPivotRest { m, ns } => {
            let (lx, ly) = (lambdas[0], lambdas[1]);
            two_pivot_mgf(model, m, ns, [ly, lx, ly, ly], quad)
        }
        PartialSumSpec::BestHeadTail { m, ns } => {
            let (lx, ly) = (lambdas[0], lambdas[1]);
            two_pivot_mgf(model, m, ns, [lx, lx, ly, ly], quad)
        }
    }
}

/// `(Σ_{n<Ns}, u_Ns)` MGF: `Σ ∫ p_i(u) e^{λ2 u} Π_A e(u, λ1) Π_R c(u, 0) du`.
fn best_sum_pivot_mgf(model: &dyn BranchModel, ns: usize, l1: f64, l2: f64, quad: &QuadratureConfig) -> Result<f64> {
    let splits = single_pivot_splits(model.len(), ns - 1)?;
    let f = |u: f64| -> Result<f64> {
        let mut acc = KahanSum::new();
        for s in &splits {
            let p = model.pdf(s.pivot, u);
            if p == 0.0 {
                continue;
            }
            let head = prod(&s.above, |l| model.e(l, u, l1))?;
            let tail = prod(&s.below, |l| model.c(l, u, 0.0))?;
            acc.add(p * (l2 * u).exp() * head * tail);
        }
        Ok(acc.value())
    };
    try_integrate_to_infinity(f, 0.0, model.scale(), quad).map(|q| q.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{profile_from_mip, MipSpec};
    use crate::quadrature::try_integrate;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn quad() -> QuadratureConfig {
        QuadratureConfig::with_tolerances(1e-12, 1e-10)
    }

    fn mip(n: usize) -> FadingProfile {
        profile_from_mip(MipSpec::new(1.0, 0.5, n)).unwrap()
    }

    #[test]
    fn total_sum_examples() {
        let p = FadingProfile::new(vec![1.0, 2.0]).unwrap();
        assert!(pdf_total_sum(&p, 0.0).unwrap().abs() < 1e-15);
        let v = pdf_total_sum(&p, 1.0).unwrap();
        assert!(rel(v, (-0.5f64).exp() - (-1.0f64).exp()) < 1e-14);
        assert!((v - 0.23865).abs() < 1e-5);
        let d = TotalSumDensity::new(&p).unwrap();
        let q = try_integrate_to_infinity(|z| d.density(&[z]), 0.0, 2.0, &quad()).unwrap();
        assert!((q.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn head_tail_support_and_mass() {
        let p = FadingProfile::new(vec![1.0, 2.0, 3.0]).unwrap();
        for m in 1..3 {
            let d = HeadTailDensity::new(&p, m).unwrap();
            let ratio = m as f64 / (3 - m) as f64;
            assert_eq!(d.density(&[0.99 * ratio * 2.0, 2.0]).unwrap(), 0.0);
            let mass = try_integrate_to_infinity(
                |z1| {
                    let top = z1 * (3 - m) as f64 / m as f64;
                    let pts = breaks_within(0.0, top, (1..=3 - m).map(|h| h as f64 * z1 / m as f64));
                    try_integrate_with_breaks(|z2| d.density(&[z1, z2]), &pts, &quad()).map(|q| q.value)
                },
                0.0,
                3.0,
                &quad(),
            )
            .unwrap();
            assert!((mass.value - 1.0).abs() < 1e-7, "m = {m}: {}", mass.value);
        }
    }

    /// Outer pivot integral done numerically on the raw inverse transforms.
    fn head_tail_by_quadrature(p: &FadingProfile, m: usize, z1: f64, z2: f64) -> f64 {
        let n = p.len();
        let all = p.indices();
        let mut total = 0.0;
        for im in 1..=n {
            let rest = all.difference(&IndexSet::new(vec![im]).unwrap());
            let a_im = p.rates()[im - 1];
            for a_set in enumerate_subsets(&rest, &IndexSet::empty(), m - 1).unwrap() {
                let b_set = rest.difference(&a_set);
                let pfa = pf(p, &a_set).unwrap();
                let pfb = pf(p, &b_set).unwrap();
                let f = |u: f64| {
                    let head = LaplaceTermSum::prod_e(&pfa, u).mul(&LaplaceTermSum::delta(1.0, u)).unwrap();
                    let h = head.inverse_regular(z1).unwrap();
                    let t = LaplaceTermSum::prod_c(&pfb, u).inverse_regular(z2).unwrap();
                    a_im * (-a_im * u).exp() * h * t
                };
                let top = z1 / m as f64;
                let pts = breaks_within(0.0, top, (1..=n - m).map(|h| z2 / h as f64));
                total += try_integrate_with_breaks(|u| Ok(f(u)), &pts, &quad()).unwrap().value;
            }
        }
        total
    }

    #[test]
    fn head_tail_exact_pivot_integral() {
        let p = mip(5);
        for m in 2..5 {
            let d = HeadTailDensity::new(&p, m).unwrap();
            for &(z1, z2) in &[(2.0, 0.5), (3.0, 1.2), (1.5, 0.3)] {
                let z2 = z2 * (5 - m) as f64 / m as f64;
                let exact = d.density(&[z1, z2]).unwrap();
                let numeric = head_tail_by_quadrature(&p, m, z1, z2);
                assert!((exact - numeric).abs() < 1e-9 * (1.0 + exact.abs()), "m {m} ({z1},{z2}): {exact} vs {numeric}");
            }
        }
    }

    #[test]
    fn pivot_rest_marginal_is_order_statistic() {
        // density of u_m for N = 3 from the direct i.n.d. order-statistic formula
        let p = FadingProfile::new(vec![1.0, 0.5, 0.3]).unwrap();
        let b: Vec<_> = (0..3).map(|l| p.branch(l)).collect();
        let direct = |m: usize, x: f64| -> f64 {
            use crate::distributions::Distribution;
            let mut s = 0.0;
            for i in 0..3 {
                let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
                let (j, k) = (others[0], others[1]);
                let (fj, fk) = (b[j].cdf(x), b[k].cdf(x));
                let w = match m {
                    1 => fj * fk,
                    2 => fj * (1.0 - fk) + fk * (1.0 - fj),
                    _ => (1.0 - fj) * (1.0 - fk),
                };
                s += b[i].pdf(x) * w;
            }
            s
        };
        for m in 1..=3 {
            let d = PivotRestDensity::new(&p, m).unwrap();
            for &x in &[0.2, 0.7, 1.5] {
                let pts = breaks_within((m - 1) as f64 * x, 40.0, (0..=3).map(|h| (m - 1 + h) as f64 * x));
                let marg = try_integrate_with_breaks(|z2| d.density(&[x, z2]), &pts, &quad()).unwrap().value;
                assert!(rel(marg, direct(m, x)) < 1e-8, "m {m} x {x}");
            }
        }
    }

    #[test]
    fn best_sum_with_all_branches_is_total() {
        let p = mip(4);
        for &x in &[0.3, 1.0, 2.5, 6.0] {
            let a = pdf_best_ns_sum(&p, 4, x, &quad()).unwrap();
            let b = pdf_total_sum(&p, x).unwrap();
            assert!(rel(a, b) < 1e-8, "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn best_sum_normalizes() {
        let p = mip(4);
        let d = BestSumDensity {
            joint: BestSumPivotDensity::new(&p, 2).unwrap(),
            quad: quad(),
        };
        let q = try_integrate_to_infinity(|x| d.density(&[x]), 0.0, 1.0, &quad()).unwrap();
        assert!((q.value - 1.0).abs() < 1e-7);
    }

    #[test]
    fn pivot4_reductions_agree() {
        let p = mip(6);
        let t = Pivot4Table::new(&p, 2, 5).unwrap();
        for &(x, y) in &[(0.8, 1.6), (1.2, 3.0), (0.5, 0.9)] {
            let a = t.pivot_rest(x, y, PivotRestInner::Head, &quad()).unwrap();
            let b = t.pivot_rest(x, y, PivotRestInner::Middle, &quad()).unwrap();
            assert!(rel(a, b) < 1e-8, "({x},{y}): {a} vs {b}");
            assert!(a > 0.0);
        }
    }

    #[test]
    fn pivot4_support_zero() {
        let p = mip(6);
        let d = Pivot4Density::new(&p, 2, 5).unwrap();
        assert_eq!(d.density(&[1.0, 0.5, 0.8, 0.6]).unwrap(), 0.0);
        assert!(d.density(&[1.0, 0.8, 0.9, 0.3]).unwrap() > 0.0);
    }

    #[test]
    fn best_head_tail_all_branches_is_head_tail() {
        let p = mip(5);
        for m in 1..5 {
            let a = BestHeadTailDensity::new(&p, m, 5, quad()).unwrap();
            let b = HeadTailDensity::new(&p, m).unwrap();
            for &(x, y) in &[(2.0, 0.8), (1.0, 0.2), (3.0, 1.5)] {
                let y = y * (5 - m) as f64 / m as f64 / 1.5;
                let va = a.density(&[x, y]).unwrap();
                let vb = b.density(&[x, y]).unwrap();
                assert!((va - vb).abs() < 1e-8 * (1.0 + vb.abs()), "m {m} ({x},{y}): {va} vs {vb}");
            }
        }
    }

    #[test]
    fn mgf_at_origin_is_one() {
        let p = mip(4);
        let specs = [
            (PartialSumSpec::TotalSum, 1),
            (PartialSumSpec::HeadTail { m: 2 }, 2),
            (PartialSumSpec::PivotRest { m: 3 }, 2),
            (PartialSumSpec::BestSum { ns: 3 }, 1),
            (PartialSumSpec::BestSumPivot { ns: 2 }, 2),
            (PartialSumSpec::BestPivot { m: 2, ns: 4 }, 4),
            (PartialSumSpec::BestHeadTail { m: 1, ns: 3 }, 2),
        ];
        for (spec, d) in specs {
            let v = joint_mgf(&p, spec, &vec![0.0; d], &quad()).unwrap();
            assert!((v - 1.0).abs() < 1e-8, "{spec:?}: {v}");
        }
    }

    #[test]
    fn mgf_examples() {
        let p = FadingProfile::new(vec![1.0, 2.0]).unwrap();
        let v = joint_mgf(&p, PartialSumSpec::TotalSum, &[-1.0], &quad()).unwrap();
        assert!(rel(v, 1.0 / 6.0) < 1e-14);
        let p = mip(4);
        for &l in &[-0.7, 0.2] {
            let total = joint_mgf(&p, PartialSumSpec::TotalSum, &[l], &quad()).unwrap();
            for m in 1..4 {
                let ht = joint_mgf(&p, PartialSumSpec::HeadTail { m }, &[l, l], &quad()).unwrap();
                assert!(rel(ht, total) < 1e-8);
            }
        }
    }

    #[test]
    fn head_tail_pdf_reproduces_mgf() {
        let p = FadingProfile::new(vec![1.0, 0.6, 0.3]).unwrap();
        for m in 1..3 {
            let d = HeadTailDensity::new(&p, m).unwrap();
            let (l1, l2) = (-0.6, -1.1);
            let want = joint_mgf(&p, PartialSumSpec::HeadTail { m }, &[l1, l2], &quad()).unwrap();
            let got = try_integrate_to_infinity(
                |z1| {
                    let top = z1 * (3 - m) as f64 / m as f64;
                    let pts = breaks_within(0.0, top, (1..=3 - m).map(|h| h as f64 * z1 / m as f64));
                    let inner = try_integrate_with_breaks(
                        |z2| Ok(d.density(&[z1, z2])? * (l2 * z2).exp()),
                        &pts,
                        &quad(),
                    )?;
                    Ok(inner.value * (l1 * z1).exp())
                },
                0.0,
                1.0,
                &quad(),
            )
            .unwrap()
            .value;
            assert!(rel(got, want) < 1e-7, "m {m}: {got} vs {want}");
        }
    }

    #[test]
    fn pivot_rest_pdf_reproduces_mgf() {
        let p = FadingProfile::new(vec![1.0, 0.6, 0.3]).unwrap();
        for m in 1..=3 {
            let d = PivotRestDensity::new(&p, m).unwrap();
            let (l1, l2) = (-0.4, -0.9);
            let want = joint_mgf(&p, PartialSumSpec::PivotRest { m }, &[l1, l2], &quad()).unwrap();
            let got = try_integrate_to_infinity(
                |z1| {
                    let lo = (m - 1) as f64 * z1;
                    let hi = if m == 1 { 2.0 * z1 } else { lo + 60.0 };
                    let pts = breaks_within(lo, hi, (0..=3).map(|h| (m - 1 + h) as f64 * z1));
                    let inner =
                        try_integrate_with_breaks(|z2| Ok(d.density(&[z1, z2])? * (l2 * z2).exp()), &pts, &quad())?;
                    Ok(inner.value * (l1 * z1).exp())
                },
                0.0,
                1.0,
                &quad(),
            )
            .unwrap()
            .value;
            assert!(rel(got, want) < 1e-7, "m {m}: {got} vs {want}");
        }
    }

    #[test]
    fn best_head_tail_degenerate_groups_reproduce_mgf() {
        let p = FadingProfile::new(vec![1.0, 0.6, 0.35, 0.2]).unwrap();
        let (lx, ly) = (-0.5, -0.8);
        for (m, ns) in [(1, 2), (1, 3), (2, 3), (2, 4), (1, 4), (3, 4)] {
            let d = BestHeadTailDensity::new(&p, m, ns, quad()).unwrap();
            let want = joint_mgf(&p, PartialSumSpec::BestHeadTail { m, ns }, &[lx, ly], &quad()).unwrap();
            let slopes = d.kink_slopes();
            let top_ratio = (ns - m) as f64 / m as f64;
            let got = try_integrate_to_infinity(
                |x| {
                    let pts = breaks_within(0.0, top_ratio * x, slopes.iter().map(|c| c * x));
                    let inner = try_integrate_with_breaks(|y| Ok(d.density(&[x, y])? * (ly * y).exp()), &pts, &quad())?;
                    Ok(inner.value * (lx * x).exp())
                },
                0.0,
                1.0,
                &QuadratureConfig::with_tolerances(1e-10, 1e-8),
            )
            .unwrap()
            .value;
            assert!(rel(got, want) < 1e-6, "m {m} ns {ns}: {got} vs {want}");
        }
    }

    #[test]
    fn generic_model_matches_closed_kernels() {
        use crate::distributions::Exponential;
        use crate::kernels::GenericBranches;
        let g = [1.0, 0.5, 0.3];
        let p = FadingProfile::new(g.to_vec()).unwrap();
        let generic = GenericBranches::new(
            g.iter().map(|&x| Box::new(Exponential::new(x).unwrap()) as Box<dyn crate::Distribution>).collect(),
            QuadratureConfig::with_tolerances(1e-13, 1e-11),
        )
        .unwrap();
        let spec = PartialSumSpec::HeadTail { m: 1 };
        let a = joint_mgf(&p, spec, &[-0.3, -0.7], &quad()).unwrap();
        let b = joint_mgf(&generic, spec, &[-0.3, -0.7], &quad()).unwrap();
        assert!(rel(a, b) < 1e-8);
    }

    #[test]
    fn pivot4_box_mass_and_mgf() {
        let p = FadingProfile::new(vec![1.0, 0.7, 0.45, 0.3, 0.2]).unwrap();
        let d = Pivot4Density::new(&p, 2, 4).unwrap();
        let q = QuadratureConfig::with_tolerances(1e-11, 1e-9);
        let big = 80.0;
        let mass = d.box_probability(&[0.0; 4], &[big; 4], &q).unwrap();
        assert!((mass - 1.0).abs() < 1e-7, "{mass}");
        // P(Z2 <= 0.5) = P(u_2 <= 0.5) via the pivot/rest marginal
        let part = d.box_probability(&[0.0; 4], &[big, 0.5, big, big], &q).unwrap();
        let pr = PivotRestDensity::new(&p, 2).unwrap();
        let want = try_integrate_with_breaks(
            |x| {
                let pts = breaks_within(x, big, (1..=5).map(|h| h as f64 * x));
                try_integrate_with_breaks(|y| pr.density(&[x, y]), &pts, &q).map(|r| r.value)
            },
            &[0.0, 0.5],
            &q,
        )
        .unwrap()
        .value;
        assert!((part - want).abs() < 1e-7, "{part} vs {want}");
    }

    #[test]
    fn best_pivot_rest_normalizes() {
        let p = mip(5);
        let d = BestPivotRestDensity::new(&p, 2, 4, PivotRestInner::Head, quad()).unwrap();
        let slopes = d.kink_slopes();
        let q = QuadratureConfig::with_tolerances(1e-10, 1e-8);
        let mass = try_integrate_to_infinity(
            |x| {
                let pts = breaks_within(x, x + 60.0, slopes.iter().map(|c| c * x));
                try_integrate_with_breaks(|y| d.density(&[x, y]), &pts, &q).map(|r| r.value)
            },
            0.0,
            1.0,
            &q,
        )
        .unwrap()
        .value;
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn reduced_box_probabilities_match_nested_integration() {
        let p = mip(5);
        let q = QuadratureConfig::with_tolerances(1e-11, 1e-9);
        let ht = BestHeadTailDensity::new(&p, 2, 4, q).unwrap();
        let pr = BestPivotRestDensity::new(&p, 2, 4, PivotRestInner::Head, q).unwrap();
        let boxes = [
            ([0.5, 0.2], [1.5, 0.9]),
            ([2.0, 0.0], [3.0, 0.5]),
            ([0.0, 0.0], [6.0, 4.0]),
            ([1.0, 1.0], [1.4, 1.3]),
        ];
        for (lo, hi) in boxes {
            let fast = ht.box_probability(&lo, &hi, &q).unwrap();
            let slow = generic_box_probability(&ht, &lo, &hi, &q).unwrap();
            assert!((fast - slow).abs() < 1e-8, "head/tail {lo:?}: {fast} vs {slow}");
            let fast = pr.box_probability(&lo, &hi, &q).unwrap();
            let slow = generic_box_probability(&pr, &lo, &hi, &q).unwrap();
            assert!((fast - slow).abs() < 1e-8, "pivot/rest {lo:?}: {fast} vs {slow}");
        }
        let far = [0.0, 0.0];
        let big = [60.0, 60.0];
        assert!((ht.box_probability(&far, &big, &q).unwrap() - 1.0).abs() < 1e-8);
        assert!((pr.box_probability(&far, &big, &q).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn projections() {
        let u = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(PartialSumSpec::TotalSum.project(&u), vec![15.0]);
        assert_eq!(PartialSumSpec::HeadTail { m: 2 }.project(&u), vec![9.0, 6.0]);
        assert_eq!(PartialSumSpec::PivotRest { m: 2 }.project(&u), vec![4.0, 11.0]);
        assert_eq!(PartialSumSpec::BestSum { ns: 3 }.project(&u), vec![12.0]);
        assert_eq!(PartialSumSpec::BestSumPivot { ns: 3 }.project(&u), vec![9.0, 3.0]);
        assert_eq!(PartialSumSpec::BestPivot { m: 2, ns: 5 }.project(&u), vec![5.0, 4.0, 5.0, 1.0]);
        assert_eq!(PartialSumSpec::BestPivotRest { m: 2, ns: 4 }.project(&u), vec![4.0, 10.0]);
        assert_eq!(PartialSumSpec::BestHeadTail { m: 2, ns: 4 }.project(&u), vec![9.0, 5.0]);
    }

    #[test]
    fn spec_validation() {
        assert!(PartialSumSpec::HeadTail { m: 3 }.validate(3).is_err());
        assert!(PartialSumSpec::BestPivot { m: 2, ns: 3 }.validate(5).is_err());
        assert!(PartialSumSpec::BestPivot { m: 2, ns: 4 }.validate(5).is_ok());
        assert!(PartialSumSpec::BestPivot { m: 1, ns: 3 }.validate_mgf(5).is_ok());
        let p = mip(3);
        assert!(joint_mgf(&p, PartialSumSpec::HeadTail { m: 1 }, &[0.0], &quad()).is_err());
        let _ = try_integrate(|x| Ok(x), 0.0, 1.0, &quad());
    }
}
