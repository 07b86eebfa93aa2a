//! Symbolic sums of shifted pole and delta terms in the Laplace variable `S`,
//! with exact inverse transforms.
//!
//! With `λ = -S`, the kernel products of exponential branches are finite sums of
//!
//! * `c e^{-sS} / (-S - a)`, inverting to `-c e^{-a(z-s)} U(z-s)`
//! * `c e^{-sS} / ((-S - a)(-S - b))`, inverting to `c (e^{-at} - e^{-bt}) / (b - a)`, `t = z - s >= 0`
//! * `c e^{-sS}`, a delta at `z = s` that collapses an enclosing integral.

use crate::combinatorics::{power_set, IndexSet, KahanSum};
use crate::error::{invalid, Error, Result};
use crate::kernels::PartialFractionCoeffs;

/// Relative separation below which two poles count as coincident.
const POLE_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaplaceTerm {
    Pole { coeff: f64, pole: f64, shift: f64 },
    DoublePole { coeff: f64, first: f64, second: f64, shift: f64 },
    Delta { coeff: f64, shift: f64 },
}

impl LaplaceTerm {
    pub fn shift(&self) -> f64 {
        match *self {
            LaplaceTerm::Pole { shift, .. }
            | LaplaceTerm::DoublePole { shift, .. }
            | LaplaceTerm::Delta { shift, .. } => shift,
        }
    }

    pub fn coeff(&self) -> f64 {
        match *self {
            LaplaceTerm::Pole { coeff, .. }
            | LaplaceTerm::DoublePole { coeff, .. }
            | LaplaceTerm::Delta { coeff, .. } => coeff,
        }
    }

    fn scaled(self, k: f64, ds: f64) -> Self {
        match self {
            LaplaceTerm::Pole { coeff, pole, shift } => LaplaceTerm::Pole { coeff: coeff * k, pole, shift: shift + ds },
            LaplaceTerm::DoublePole { coeff, first, second, shift } => LaplaceTerm::DoublePole {
                coeff: coeff * k,
                first,
                second,
                shift: shift + ds,
            },
            LaplaceTerm::Delta { coeff, shift } => LaplaceTerm::Delta { coeff: coeff * k, shift: shift + ds },
        }
    }

    fn times(self, other: LaplaceTerm) -> Result<LaplaceTerm> {
        use LaplaceTerm::*;
        match (self, other) {
            (Delta { coeff, shift }, t) | (t, Delta { coeff, shift }) => Ok(t.scaled(coeff, shift)),
            (Pole { coeff: c1, pole: a, shift: s1 }, Pole { coeff: c2, pole: b, shift: s2 }) => {
                if (a - b).abs() <= POLE_SEPARATION * a.abs().max(b.abs()) {
                    return Err(Error::Singular(format!("repeated pole {a} in product")));
                }
                Ok(DoublePole { coeff: c1 * c2, first: a, second: b, shift: s1 + s2 })
            }
            _ => Err(Error::Unsupported("pole of order three or more".into())),
        }
    }

    /// Value of the term at real `S`.
    pub fn evaluate_s(&self, s: f64) -> f64 {
        match *self {
            LaplaceTerm::Pole { coeff, pole, shift } => coeff * (-shift * s).exp() / (-s - pole),
            LaplaceTerm::DoublePole { coeff, first, second, shift } => {
                coeff * (-shift * s).exp() / ((-s - first) * (-s - second))
            }
            LaplaceTerm::Delta { coeff, shift } => coeff * (-shift * s).exp(),
        }
    }
}

/// Delta left over by an inverse transform: weight `coeff` at `z = at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaDirective {
    pub coeff: f64,
    pub at: f64,
}

/// Inverse transform at a point: a regular density value plus any delta directives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InverseLaplace {
    pub value: f64,
    pub deltas: Vec<DeltaDirective>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaplaceTermSum {
    terms: Vec<LaplaceTerm>,
}

impl LaplaceTermSum {
    pub fn new(terms: Vec<LaplaceTerm>) -> Result<Self> {
        for t in &terms {
            if !(t.shift() >= 0.0) {
                return invalid(format!("negative shift in {t:?}"));
            }
            if let LaplaceTerm::DoublePole { first, second, .. } = *t {
                if (first - second).abs() <= POLE_SEPARATION * first.abs().max(second.abs()) {
                    return Err(Error::Singular(format!("double pole with a = b = {first}")));
                }
            }
        }
        Ok(Self { terms })
    }

    /// `c e^{-shift S}`.
    pub fn delta(coeff: f64, shift: f64) -> Self {
        Self {
            terms: vec![LaplaceTerm::Delta { coeff, shift }],
        }
    }

    pub fn terms(&self) -> &[LaplaceTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Π_l c_l(z, -S)` for the branches behind `pf`.
    pub fn prod_c(pf: &PartialFractionCoeffs, z: f64) -> Self {
        if pf.is_empty() {
            return Self::delta(1.0, 0.0);
        }
        let rates = pf.poles();
        let local = IndexSet::full(rates.len());
        let mut terms = Vec::new();
        for j in power_set(&local) {
            if z.is_infinite() && !j.is_empty() {
                break;
            }
            let sj: f64 = j.zero_based().map(|l| rates[l]).sum();
            let sign = if j.len() % 2 == 0 { 1.0 } else { -1.0 };
            let w = if j.is_empty() { 1.0 } else { sign * (-z * sj).exp() };
            let shift = if j.is_empty() { 0.0 } else { j.len() as f64 * z };
            terms.extend(pf.terms().map(|(c, a)| LaplaceTerm::Pole { coeff: w * c, pole: a, shift }));
        }
        Self { terms }
    }

    /// `Π_l e_l(z, -S)`.
    pub fn prod_e(pf: &PartialFractionCoeffs, z: f64) -> Self {
        if pf.is_empty() {
            return Self::delta(1.0, 0.0);
        }
        let s: f64 = pf.poles().iter().sum();
        let w = (-z * s).exp();
        let shift = pf.len() as f64 * z;
        Self {
            terms: pf.terms().map(|(c, a)| LaplaceTerm::Pole { coeff: w * c, pole: a, shift }).collect(),
        }
    }

    /// `Π_l μ_l(za, zb, -S)`.
    pub fn prod_mu(pf: &PartialFractionCoeffs, za: f64, zb: f64) -> Result<Self> {
        if za > zb {
            return invalid(format!("interval [{za}, {zb}] is reversed"));
        }
        if pf.is_empty() {
            return Ok(Self::delta(1.0, 0.0));
        }
        let rates = pf.poles();
        let n = rates.len();
        let s: f64 = rates.iter().sum();
        let base = (-za * s).exp();
        let width = zb - za;
        let local = IndexSet::full(n);
        let mut terms = Vec::new();
        for j in power_set(&local) {
            if width.is_infinite() && !j.is_empty() {
                break;
            }
            let sj: f64 = j.zero_based().map(|l| rates[l]).sum();
            let sign = if j.len() % 2 == 0 { 1.0 } else { -1.0 };
            let w = if j.is_empty() { base } else { sign * base * (-width * sj).exp() };
            let shift = n as f64 * za + if j.is_empty() { 0.0 } else { j.len() as f64 * width };
            terms.extend(pf.terms().map(|(c, a)| LaplaceTerm::Pole { coeff: w * c, pole: a, shift }));
        }
        Ok(Self { terms })
    }

    /// Product of two sums, distributing term by term.
    pub fn mul(&self, other: &LaplaceTermSum) -> Result<LaplaceTermSum> {
        let mut terms = Vec::with_capacity(self.len() * other.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(a.times(*b)?);
            }
        }
        Ok(Self { terms })
    }

    pub fn scale(&self, k: f64) -> LaplaceTermSum {
        Self {
            terms: self.terms.iter().map(|t| t.scaled(k, 0.0)).collect(),
        }
    }

    pub fn evaluate_s(&self, s: f64) -> f64 {
        self.terms.iter().map(|t| t.evaluate_s(s)).collect::<KahanSum>().value()
    }

    /// Exact inverse transform at `z`; delta terms come back as directives.
    pub fn inverse(&self, z: f64) -> Result<InverseLaplace> {
        let mut value = KahanSum::new();
        let mut deltas = Vec::new();
        for t in &self.terms {
            match *t {
                LaplaceTerm::Pole { coeff, pole, shift } => {
                    let tt = z - shift;
                    if tt >= 0.0 {
                        value.add(-coeff * (-pole * tt).exp());
                    }
                }
                LaplaceTerm::DoublePole { coeff, first, second, shift } => {
                    if (first - second).abs() <= POLE_SEPARATION * first.abs().max(second.abs()) {
                        return Err(Error::Singular(format!("double pole with a = b = {first}")));
                    }
                    let tt = z - shift;
                    if tt >= 0.0 {
                        value.add(coeff * ((-first * tt).exp() - (-second * tt).exp()) / (second - first));
                    }
                }
                LaplaceTerm::Delta { coeff, shift } => deltas.push(DeltaDirective { coeff, at: shift }),
            }
        }
        Ok(InverseLaplace {
            value: value.value(),
            deltas,
        })
    }

    /// Inverse transform of a sum known to be free of delta terms.
    pub fn inverse_regular(&self, z: f64) -> Result<f64> {
        let inv = self.inverse(z)?;
        if !inv.deltas.is_empty() {
            return Err(Error::Unsupported("pointwise value of a delta term".into()));
        }
        Ok(inv.value)
    }
}

/// Standalone primitive: inverse of a single sum at `z`.
pub fn inverse_laplace(sum: &LaplaceTermSum, z: f64) -> Result<InverseLaplace> {
    sum.inverse(z)
}
