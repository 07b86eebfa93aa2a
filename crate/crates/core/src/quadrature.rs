//! Globally adaptive Gauss-Kronrod (10/21) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::combinatorics::KahanSum;
use crate::error::{invalid, Error, Result};

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208089269244,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Change of variables used for `[a, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SemiInfiniteMap {
    /// `x = a + s t / (1 - t)`
    #[default]
    Rational,
    /// `x = a - s ln(1 - t)`
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    pub semi_infinite: SemiInfiniteMap,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
            semi_infinite: SemiInfiniteMap::Rational,
        }
    }
}

impl QuadratureConfig {
    pub fn with_tolerances(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return invalid("quadrature tolerances must be positive");
        }
        if self.max_subdivisions == 0 {
            return invalid("max_subdivisions must be positive");
        }
        Ok(())
    }
}

/// Integral estimate with its error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    frozen: bool,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        // frozen panels sink; otherwise largest error first, ties by position
        (!self.frozen)
            .cmp(&!other.frozen)
            .then(self.error.total_cmp(&other.error))
            .then(other.a.total_cmp(&self.a))
    }
}

fn gk21<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kron = fc * WGK[10];
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx)?;
        let f2 = f(c + dx)?;
        if !(f1.is_finite() && f2.is_finite()) {
            return Err(Error::Singular(format!("non-finite integrand near {c}")));
        }
        kron += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    if !fc.is_finite() {
        return Err(Error::Singular(format!("non-finite integrand at {c}")));
    }
    Ok((kron * h, ((kron - gauss) * h).abs()))
}

/// Adaptive integral of a fallible integrand over `[a, b]` with interior break points.
pub fn try_integrate_with_breaks<F>(mut f: F, points: &[f64], cfg: &QuadratureConfig) -> Result<Quadrature>
where
    F: FnMut(f64) -> Result<f64>,
{
    cfg.validate()?;
    if points.len() < 2 {
        return invalid("need at least two points");
    }
    let (a, b) = (points[0], points[points.len() - 1]);
    if !(a.is_finite() && b.is_finite()) {
        return invalid("finite limits required; use integrate_to_infinity");
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evals: 0 });
    }
    let mut heap = BinaryHeap::new();
    let mut evals = 0;
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi < lo {
            return invalid(format!("break points out of order: {lo} > {hi}"));
        }
        if hi == lo {
            continue;
        }
        let (value, error) = gk21(&mut f, lo, hi)?;
        evals += 21;
        heap.push(Panel { a: lo, b: hi, value, error, frozen: false });
    }
    let min_width = 64.0 * f64::EPSILON * (b - a).abs().max(f64::MIN_POSITIVE);
    let mut splits = 0;
    loop {
        let total: f64 = heap.iter().map(|p| p.value).collect::<KahanSum>().value();
        let err: f64 = heap.iter().map(|p| p.error).sum();
        let tol = cfg.abs_tol.max(cfg.rel_tol * total.abs());
        let worst = match heap.peek() {
            Some(p) => *p,
            None => return Ok(Quadrature { value: 0.0, error: 0.0, evals }),
        };
        if err <= tol || worst.frozen {
            if err <= tol || err <= 1e3 * tol {
                return Ok(Quadrature { value: total, error: err, evals });
            }
            return Err(Error::Quadrature { a, b, value: total, error: err, evals });
        }
        if splits >= cfg.max_subdivisions {
            return Err(Error::Quadrature { a, b, value: total, error: err, evals });
        }
        heap.pop();
        let mid = 0.5 * (worst.a + worst.b);
        if worst.b - worst.a < min_width || mid <= worst.a || mid >= worst.b {
            heap.push(Panel { frozen: true, ..worst });
            continue;
        }
        let (v1, e1) = gk21(&mut f, worst.a, mid)?;
        let (v2, e2) = gk21(&mut f, mid, worst.b)?;
        evals += 42;
        splits += 1;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1, frozen: false });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2, frozen: false });
    }
}

pub fn try_integrate<F>(f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<Quadrature>
where
    F: FnMut(f64) -> Result<f64>,
{
    if b < a {
        let q = try_integrate_with_breaks(f, &[b, a], cfg)?;
        return Ok(Quadrature { value: -q.value, ..q });
    }
    try_integrate_with_breaks(f, &[a, b], cfg)
}

pub fn integrate<F>(mut f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<Quadrature>
where
    F: FnMut(f64) -> f64,
{
    try_integrate(|x| Ok(f(x)), a, b, cfg)
}

/// Sorts, deduplicates and clips break points into `[a, b]`.
pub fn breaks_within(a: f64, b: f64, interior: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut pts: Vec<f64> = interior
        .into_iter()
        .filter(|x| x.is_finite() && *x > a && *x < b)
        .collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Integral over `[a, ∞)` after mapping to `[0, 1)`; `scale` sets the map's length unit.
pub fn try_integrate_to_infinity<F>(mut f: F, a: f64, scale: f64, cfg: &QuadratureConfig) -> Result<Quadrature>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(scale > 0.0 && scale.is_finite()) {
        return invalid("semi-infinite scale must be positive");
    }
    let map = cfg.semi_infinite;
    let g = move |t: f64| -> Result<f64> {
        let (x, jac) = match map {
            SemiInfiniteMap::Rational => {
                let d = 1.0 - t;
                (a + scale * t / d, scale / (d * d))
            }
            SemiInfiniteMap::Exponential => (a - scale * (-t).ln_1p(), scale / (1.0 - t)),
        };
        if !x.is_finite() {
            return Ok(0.0);
        }
        let y = f(x)?;
        Ok(if y == 0.0 { 0.0 } else { y * jac })
    };
    // a few fixed panels help integrands concentrated near a
    try_integrate_with_breaks(g, &[0.0, 0.25, 0.5, 0.75, 1.0], cfg)
}

pub fn integrate_to_infinity<F>(mut f: F, a: f64, scale: f64, cfg: &QuadratureConfig) -> Result<Quadrature>
where
    F: FnMut(f64) -> f64,
{
    try_integrate_to_infinity(|x| Ok(f(x)), a, scale, cfg)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
