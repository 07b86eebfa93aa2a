//! Capture and outage probabilities of GSC RAKE receivers.
//!
//! Capture: `Pr[Σ_{n<=m} u_n / Σ_{n<=N} u_n > T]`, the share of the total
//! multipath energy collected by the `m` strongest fingers.
//! Outage with imperfect self-interference cancellation:
//! `Pr[Σ_{n<=m} u_n / (1 + α Σ_{n>m} u_n) < T]`.

use rayon::prelude::*;

use crate::combinatorics::{enumerate_subsets, power_set, IndexSet, KahanSum};
use crate::distributions::FadingProfile;
use crate::error::{invalid, Error, Result};
use crate::joint_densities::{HeadTailDensity, JointDensity};
use crate::kernels::PartialFractionCoeffs;
use crate::quadrature::{breaks_within, try_integrate_to_infinity, try_integrate_with_breaks, QuadratureConfig};

/// Below this magnitude a denominator of the closed form is treated as a removable singularity.
const DENOMINATOR_FLOOR: f64 = 1e-9;

/// Tolerated excursion of a probability outside `[0, 1]`.
const RANGE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSpec {
    pub profile: FadingProfile,
    pub m: usize,
    pub threshold: f64,
}

impl CaptureSpec {
    pub fn new(profile: FadingProfile, m: usize, threshold: f64) -> Result<Self> {
        let spec = Self { profile, m, threshold };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.profile.len();
        if self.m < 1 || self.m >= n {
            return invalid(format!("capture needs 1 <= m < N, got m = {} with N = {n}", self.m));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return invalid(format!("capture threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }

    /// `r = (1 - T) / T`: capture happens iff `Σ_{n>m} u_n < r Σ_{n<=m} u_n`.
    pub fn ratio(&self) -> f64 {
        (1.0 - self.threshold) / self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutageSpec {
    pub profile: FadingProfile,
    pub m: usize,
    pub threshold: f64,
    pub alpha: f64,
}

impl OutageSpec {
    pub fn new(profile: FadingProfile, m: usize, threshold: f64, alpha: f64) -> Result<Self> {
        let spec = Self { profile, m, threshold, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.profile.len();
        if self.m < 1 || self.m >= n {
            return invalid(format!("outage needs 1 <= m < N, got m = {} with N = {n}", self.m));
        }
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return invalid(format!("outage threshold must be finite and >= 0, got {}", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        Ok(())
    }
}

/// Exact test of `h T >= m (1 - T)` with `T` taken as the exact binary value it holds.
///
/// Equivalent to `(h + m) T >= m`; with `T = M 2^E` both sides are integers after scaling.
pub fn ratio_at_or_below(h: usize, m: usize, threshold: f64) -> bool {
    if threshold >= 1.0 {
        return true;
    }
    if threshold < 2f64.powi(-60) {
        return false;
    }
    let bits = threshold.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    // normal numbers only: the cutoff above keeps us well clear of subnormals
    let mantissa = frac | (1i128 << 52);
    let shift = 1075 - exp; // T = mantissa / 2^shift
    ((h + m) as i128) * mantissa >= (m as i128) << shift
}

fn check_probability(what: &'static str, value: f64) -> Result<f64> {
    if !value.is_finite() || value < -RANGE_SLACK || value > 1.0 + RANGE_SLACK {
        return Err(Error::OutOfRange { what, value });
    }
    Ok(value)
}

fn nonzero(d: f64, what: &str) -> Result<f64> {
    if d.abs() < DENOMINATOR_FLOOR {
        return Err(Error::Singular(format!(
            "{what} = {d:e} vanishes; perturb the averages to move off this coincidence"
        )));
    }
    Ok(d)
}

/// Capture probability from the six closed-form integral parts.
pub fn capture_probability_closed(spec: &CaptureSpec) -> Result<f64> {
    spec.validate()?;
    let value = if spec.m == 1 {
        capture_single_finger(spec)?
    } else {
        capture_multi_finger(spec)?
    };
    check_probability("capture probability", value)
}

fn capture_multi_finger(spec: &CaptureSpec) -> Result<f64> {
    let p = &spec.profile;
    let (n, m) = (p.len(), spec.m);
    let mf = m as f64;
    let r = spec.ratio();
    let all = p.indices();
    let mut acc = KahanSum::new();
    for im in 1..=n {
        let rest = all.difference(&IndexSet::new(vec![im])?);
        let a_im = p.rates()[im - 1];
        for a_set in enumerate_subsets(&rest, &IndexSet::empty(), m - 1)? {
            let b_set = rest.difference(&a_set);
            let pfa = PartialFractionCoeffs::new(&p.sub_averages(&a_set))?;
            let pfb = PartialFractionCoeffs::new(&p.sub_averages(&b_set))?;
            let s = a_im + p.rate_sum(&a_set);
            let b_rates = p.sub_rates(&b_set);
            let subsets: Vec<(f64, usize)> = power_set(&IndexSet::full(b_set.len()))
                .map(|j| (j.zero_based().map(|l| b_rates[l]).sum(), j.len()))
                .collect();
            for (ck, ak) in pfa.terms() {
                let gk = 1.0 / ak;
                for (cq, aq) in pfb.terms() {
                    let gq = 1.0 / aq;
                    let pre = a_im * ck * cq;
                    for &(sj, h) in &subsets {
                        let part = if h == 0 {
                            let i64_ = gq * gk - gq / (ak + aq * r);
                            let i65 = gq / (s / mf) - gq / (s / mf + aq * r);
                            (i64_ - i65) / nonzero(s - mf * ak, "s - m a_k")?
                        } else {
                            let hf = h as f64;
                            let beyond = !ratio_at_or_below(h, m, spec.threshold);
                            let c = if beyond { hf / mf } else { r };
                            let dp = nonzero(sj + s - mf * ak, "Σ_J + s - m a_k")?;
                            let d = nonzero(dp - hf * aq, "Σ_J + s - m a_k - h a_q")?;
                            let i66 = gq * (gk - 1.0 / (ak + aq * c));
                            let i67 = gk * hf / dp - hf / (dp * (dp * c / hf + ak));
                            let (i68, i69) = if beyond {
                                (
                                    gq * (1.0 / (ak + aq * hf / mf) - 1.0 / (ak + aq * r)),
                                    mf * gq / (sj + s) - mf * gq / (sj + s - hf * aq + mf * aq * r),
                                )
                            } else {
                                (0.0, 0.0)
                            };
                            let sgn = if h % 2 == 0 { 1.0 } else { -1.0 };
                            sgn * (i66 - i67 + i68 - i69) / d
                        };
                        acc.add(pre * part);
                    }
                }
            }
        }
    }
    Ok(acc.value())
}

/// `m = 1`: the pivot is the head, so only the wedge `z2 < r z1` over the tail remains.
fn capture_single_finger(spec: &CaptureSpec) -> Result<f64> {
    let p = &spec.profile;
    let n = p.len();
    let r = spec.ratio();
    let all = p.indices();
    let mut acc = KahanSum::new();
    for i1 in 1..=n {
        let b_set = all.difference(&IndexSet::new(vec![i1])?);
        let a1 = p.rates()[i1 - 1];
        let pfb = PartialFractionCoeffs::new(&p.sub_averages(&b_set))?;
        let b_rates = p.sub_rates(&b_set);
        for j in power_set(&IndexSet::full(b_set.len())) {
            let h = j.len();
            if ratio_at_or_below(h, 1, spec.threshold) {
                continue;
            }
            let sj: f64 = j.zero_based().map(|l| b_rates[l]).sum();
            let sgn = if h % 2 == 0 { -1.0 } else { 1.0 };
            for (cq, aq) in pfb.terms() {
                let alpha = a1 + sj - h as f64 * aq;
                let w = (1.0 / (alpha + aq * h as f64) - 1.0 / (alpha + aq * r)) / aq;
                acc.add(a1 * cq * sgn * w);
            }
        }
    }
    Ok(acc.value())
}

/// Capture probability by double adaptive quadrature of the head/tail joint density.
pub fn capture_probability_numeric(spec: &CaptureSpec, quad: &QuadratureConfig) -> Result<f64> {
    spec.validate()?;
    let (n, m) = (spec.profile.len(), spec.m);
    let density = HeadTailDensity::new(&spec.profile, m)?;
    let slope = spec.ratio().min((n - m) as f64 / m as f64);
    let scale = spec.profile.max_average() * m as f64;
    let q = try_integrate_to_infinity(
        |z1| {
            let pts = breaks_within(0.0, slope * z1, (1..=n - m).map(|h| h as f64 * z1 / m as f64));
            try_integrate_with_breaks(|z2| density.density(&[z1, z2]), &pts, quad).map(|q| q.value)
        },
        0.0,
        scale,
        quad,
    )?;
    check_probability("capture probability", q.value)
}

/// Outage probability by double adaptive quadrature of the head/tail joint density.
pub fn outage_probability(spec: &OutageSpec, quad: &QuadratureConfig) -> Result<f64> {
    spec.validate()?;
    let (n, m) = (spec.profile.len(), spec.m);
    let (t, alpha) = (spec.threshold, spec.alpha);
    if t == 0.0 {
        return Ok(0.0);
    }
    let density = HeadTailDensity::new(&spec.profile, m)?;
    let edge = m as f64 / (n - m) as f64;
    let inner = |z2: f64| -> Result<f64> {
        let lo = edge * z2;
        let hi = t * (1.0 + alpha * z2);
        if hi <= lo {
            return Ok(0.0);
        }
        let pts = breaks_within(lo, hi, (1..=n - m).map(|h| m as f64 * z2 / h as f64));
        try_integrate_with_breaks(|z1| density.density(&[z1, z2]), &pts, quad).map(|q| q.value)
    };
    let value = if edge > t * alpha {
        let top = t / (edge - t * alpha);
        let pts = breaks_within(0.0, top, []);
        try_integrate_with_breaks(inner, &pts, quad)?.value
    } else {
        let scale = spec.profile.max_average() * (n - m) as f64;
        try_integrate_to_infinity(inner, 0.0, scale, quad)?.value
    };
    check_probability("outage probability", value)
}

/// How a capture grid point is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureMethod {
    Closed,
    Numeric,
}

/// Capture probabilities over an `(m, T)` grid, evaluated in parallel, returned row-major in `m`.
pub fn capture_sweep(
    profile: &FadingProfile,
    ms: &[usize],
    thresholds: &[f64],
    method: CaptureMethod,
    quad: &QuadratureConfig,
) -> Vec<Result<f64>> {
    let grid: Vec<(usize, f64)> = ms.iter().flat_map(|&m| thresholds.iter().map(move |&t| (m, t))).collect();
    grid.par_iter()
        .map(|&(m, t)| {
            let spec = CaptureSpec::new(profile.clone(), m, t)?;
            match method {
                CaptureMethod::Closed => capture_probability_closed(&spec),
                CaptureMethod::Numeric => capture_probability_numeric(&spec, quad),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{profile_from_mip, MipSpec};
    use proptest::prelude::*;

    fn mip(n: usize) -> FadingProfile {
        profile_from_mip(MipSpec::new(1.0, 0.5, n)).unwrap()
    }

    fn quad() -> QuadratureConfig {
        QuadratureConfig::with_tolerances(1e-11, 1e-9)
    }

    #[test]
    fn exact_branch_test() {
        // h T >= m (1 - T)  ⇔  T >= m / (h + m)
        assert!(ratio_at_or_below(1, 1, 0.5));
        assert!(!ratio_at_or_below(1, 1, 0.5 - 1e-16));
        assert!(ratio_at_or_below(2, 2, 0.5));
        assert!(ratio_at_or_below(1, 3, 0.75));
        assert!(!ratio_at_or_below(1, 3, f64::from_bits(0.75f64.to_bits() - 1)));
        // 1/3 is not representable; the stored value sits just below it
        assert!(!ratio_at_or_below(2, 1, 1.0 / 3.0));
        assert!(ratio_at_or_below(2, 1, f64::from_bits((1.0f64 / 3.0).to_bits() + 1)));
        assert!(!ratio_at_or_below(5, 5, 1e-30));
    }

    #[test]
    fn closed_matches_numeric() {
        for (n, m) in [(2, 1), (3, 1), (3, 2), (4, 2), (5, 3), (5, 1), (6, 4)] {
            let p = mip(n);
            for &t in &[0.05, 0.3, 0.5, 0.6, 0.75, 0.9, 0.97] {
                let spec = CaptureSpec::new(p.clone(), m, t).unwrap();
                let a = capture_probability_closed(&spec).unwrap();
                let b = capture_probability_numeric(&spec, &quad()).unwrap();
                assert!((a - b).abs() <= 1e-7 * b.abs().max(1e-3), "N {n} m {m} T {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn closed_is_continuous_across_branch_boundaries() {
        // T = m / (h + m) switches the step function for subset size h
        let p = mip(4);
        for (m, h) in [(2, 1), (2, 2), (1, 1), (1, 2), (3, 1)] {
            let t = m as f64 / (h + m) as f64;
            let below = CaptureSpec::new(p.clone(), m, t * (1.0 - 1e-9)).unwrap();
            let at = CaptureSpec::new(p.clone(), m, t).unwrap();
            let a = capture_probability_closed(&below).unwrap();
            let b = capture_probability_closed(&at).unwrap();
            assert!((a - b).abs() < 1e-7, "m {m} h {h}: {a} vs {b}");
        }
    }

    #[test]
    fn capture_limits() {
        let p = mip(4);
        for m in 1..4 {
            let lo = capture_probability_closed(&CaptureSpec::new(p.clone(), m, 1e-6).unwrap()).unwrap();
            let hi = capture_probability_closed(&CaptureSpec::new(p.clone(), m, 1.0 - 1e-6).unwrap()).unwrap();
            assert!((lo - 1.0).abs() < 1e-3 && hi.abs() < 1e-3, "m {m}: {lo}, {hi}");
        }
    }

    #[test]
    fn capture_monotone_in_threshold() {
        for (n, m) in [(3, 1), (4, 2), (5, 3), (6, 2)] {
            let p = mip(n);
            let mut prev = f64::INFINITY;
            for k in 1..=50 {
                let t = k as f64 / 51.0;
                let v = capture_probability_closed(&CaptureSpec::new(p.clone(), m, t).unwrap()).unwrap();
                assert!(v <= prev + 1e-12, "N {n} m {m} T {t}");
                prev = v;
            }
        }
    }

    #[test]
    fn outage_edges_and_monotonicity() {
        let p = mip(4);
        let o = |m, t, a| outage_probability(&OutageSpec::new(p.clone(), m, t, a).unwrap(), &quad()).unwrap();
        assert_eq!(o(2, 0.0, 0.5), 0.0);
        assert!((o(2, 60.0, 0.0) - 1.0).abs() < 1e-9);
        for m in 1..4 {
            let mut prev = 0.0;
            for &t in &[0.2, 0.5, 1.0, 2.0, 4.0] {
                let v0 = o(m, t, 0.0);
                let v1 = o(m, t, 0.5);
                let v2 = o(m, t, 1.0);
                assert!(v0 >= prev - 1e-12);
                assert!(v0 <= v1 + 1e-12 && v1 <= v2 + 1e-12, "m {m} T {t}: {v0} {v1} {v2}");
                prev = v0;
            }
        }
    }

    #[test]
    fn outage_alpha_zero_is_head_cdf() {
        // α = 0: Pr[Σ_{n<=m} u_n < T] from the best-m sum density (m = N gives the total sum)
        let p = mip(3);
        let t = 1.3;
        let v = outage_probability(&OutageSpec::new(p.clone(), 2, t, 0.0).unwrap(), &quad()).unwrap();
        let d = crate::joint_densities::BestSumDensity::new(&p, 2, quad()).unwrap();
        let want = try_integrate_with_breaks(|x| d.density(&[x]), &[0.0, t], &quad()).unwrap().value;
        assert!((v - want).abs() < 1e-8, "{v} vs {want}");
    }

    #[test]
    fn sweep_keeps_order() {
        let p = mip(4);
        let out = capture_sweep(&p, &[1, 2], &[0.3, 0.6], CaptureMethod::Closed, &quad());
        let direct = capture_probability_closed(&CaptureSpec::new(p.clone(), 2, 0.3).unwrap()).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(*out[2].as_ref().unwrap(), direct);
    }

    #[test]
    fn invalid_specs() {
        let p = mip(3);
        assert!(CaptureSpec::new(p.clone(), 3, 0.5).is_err());
        assert!(CaptureSpec::new(p.clone(), 1, 1.0).is_err());
        assert!(OutageSpec::new(p.clone(), 1, -1.0, 0.0).is_err());
        assert!(OutageSpec::new(p, 1, 1.0, 1.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn closed_capture_is_a_probability(
            n in 2usize..=6,
            mfrac in 0.0f64..1.0,
            gamma1 in 0.2f64..5.0,
            delta in 0.05f64..1.5,
            t in 0.01f64..0.99,
        ) {
            let m = 1 + ((n - 1) as f64 * mfrac) as usize;
            let m = m.min(n - 1);
            let p = profile_from_mip(MipSpec::new(gamma1, delta, n)).unwrap();
            let v = capture_probability_closed(&CaptureSpec::new(p, m, t).unwrap()).unwrap();
            prop_assert!((-1e-8..=1.0 + 1e-8).contains(&v), "{}", v);
        }
    }
}
