//! Index sets, subset enumeration and compensated summation.
//!
//! Every closed form in this crate is a sum over subsets of branch indices.
//! Enumeration order is fixed (lexicographic) so that floating-point results
//! are reproducible bit for bit.

use std::fmt;

use crate::error::{invalid, Result};

/// Sorted set of distinct 1-based branch indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct IndexSet {
    members: Vec<usize>,
}

impl IndexSet {
    /// Builds a set from arbitrary indices; duplicates and zero are rejected.
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        if members.first() == Some(&0) {
            return invalid("branch indices are 1-based");
        }
        if members.windows(2).any(|w| w[0] == w[1]) {
            return invalid(format!("duplicate index in {members:?}"));
        }
        Ok(Self { members })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// `{1, ..., n}`.
    pub fn full(n: usize) -> Self {
        Self {
            members: (1..=n).collect(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn difference(&self, other: &IndexSet) -> IndexSet {
        IndexSet {
            members: self
                .members
                .iter()
                .copied()
                .filter(|&i| !other.contains(i))
                .collect(),
        }
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut members: Vec<usize> = self.members.iter().chain(&other.members).copied().collect();
        members.sort_unstable();
        members.dedup();
        IndexSet { members }
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        self.members.iter().all(|&i| !other.contains(i))
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.members.iter().all(|&i| other.contains(i))
    }

    /// Zero-based positions, handy for slicing profiles.
    pub fn zero_based(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|&i| i - 1)
    }

    pub fn max_index(&self) -> usize {
        self.members.last().copied().unwrap_or(0)
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.members.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Lexicographic k-combinations of a sorted pool.
#[derive(Debug, Clone)]
struct Combinations {
    pool: Vec<usize>,
    positions: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(pool: Vec<usize>, k: usize) -> Self {
        let done = k > pool.len();
        Self {
            positions: (0..k).collect(),
            pool,
            done,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out: Vec<usize> = self.positions.iter().map(|&p| self.pool[p]).collect();
        let k = self.positions.len();
        let n = self.pool.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.positions[i] < n - k + i {
                self.positions[i] += 1;
                for j in i + 1..k {
                    self.positions[j] = self.positions[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Stream of the `k`-subsets of `universe - excluded`.
#[derive(Debug, Clone)]
pub struct SubsetEnumerator {
    inner: Combinations,
}

impl Iterator for SubsetEnumerator {
    type Item = IndexSet;

    fn next(&mut self) -> Option<IndexSet> {
        self.inner.next().map(|members| IndexSet { members })
    }
}

/// Yields every `k`-subset of `universe - excluded` exactly once, lexicographically.
pub fn enumerate_subsets(
    universe: &IndexSet,
    excluded: &IndexSet,
    k: usize,
) -> Result<SubsetEnumerator> {
    let pool = universe.difference(excluded).members;
    if k > pool.len() {
        return invalid(format!(
            "cannot choose {k} indices from {} available",
            pool.len()
        ));
    }
    Ok(SubsetEnumerator {
        inner: Combinations::new(pool, k),
    })
}

/// Every subset of `set`, by increasing size and lexicographically within a size.
pub fn power_set(set: &IndexSet) -> impl Iterator<Item = IndexSet> + '_ {
    (0..=set.len()).flat_map(move |k| {
        Combinations::new(set.members.clone(), k).map(|members| IndexSet { members })
    })
}

/// Strictly increasing index tuple `j_1 < ... < j_l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestedIndexTuple(pub Vec<usize>);

impl NestedIndexTuple {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

/// Stream of the strictly increasing `l`-tuples drawn from `[n1, n2]`.
pub fn enumerate_nested(
    n1: usize,
    n2: usize,
    l: usize,
) -> Result<impl Iterator<Item = NestedIndexTuple>> {
    if n2 < n1 || l == 0 || l > n2 - n1 + 1 {
        return invalid(format!("depth {l} out of range for [{n1}, {n2}]"));
    }
    Ok(Combinations::new((n1..=n2).collect(), l).map(NestedIndexTuple))
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Upper limit on branch count for the exact enumerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityBudget {
    pub max_n: usize,
}

impl Default for ComplexityBudget {
    fn default() -> Self {
        Self { max_n: 12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardOutcome {
    Accepted { terms: u128 },
    Refused { terms: u128, max_n: usize },
}

impl GuardOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, GuardOutcome::Accepted { .. })
    }

    pub fn terms(&self) -> u128 {
        match *self {
            GuardOutcome::Accepted { terms } | GuardOutcome::Refused { terms, .. } => terms,
        }
    }
}

/// Estimated term count of the largest enumeration for `n` branches.
///
/// The two-pivot densities dominate: a pivot pair, a head subset and the
/// signed subsets of the remaining groups, about `n^2 * 3^n` terms.
pub fn estimated_terms(n: usize) -> u128 {
    let n = n as u128;
    n.saturating_mul(n).saturating_mul(3u128.saturating_pow(n as u32))
}

pub fn complexity_guard(n: usize, budget: ComplexityBudget) -> GuardOutcome {
    let terms = estimated_terms(n);
    if n <= budget.max_n {
        GuardOutcome::Accepted { terms }
    } else {
        GuardOutcome::Refused {
            terms,
            max_n: budget.max_n,
        }
    }
}

pub(crate) fn check_budget(n: usize, budget: ComplexityBudget) -> Result<()> {
    match complexity_guard(n, budget) {
        GuardOutcome::Accepted { .. } => Ok(()),
        GuardOutcome::Refused { terms, max_n } => Err(crate::Error::Budget { n, terms, max_n }),
    }
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

impl std::iter::Sum<f64> for KahanSum {
    fn sum<I: Iterator<Item = f64>>(iter: I) -> Self {
        iter.collect()
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(v: &[usize]) -> IndexSet {
        IndexSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn pairs_of_three() {
        let got: Vec<_> = enumerate_subsets(&IndexSet::full(3), &IndexSet::empty(), 2)
            .unwrap()
            .collect();
        assert_eq!(got, vec![set(&[1, 2]), set(&[1, 3]), set(&[2, 3])]);
    }

    #[test]
    fn single_remaining_subset() {
        let got: Vec<_> = enumerate_subsets(&IndexSet::full(4), &set(&[2]), 3)
            .unwrap()
            .collect();
        assert_eq!(got, vec![set(&[1, 3, 4])]);
    }

    #[test]
    fn pairs_of_six_minus_one() {
        let n = enumerate_subsets(&IndexSet::full(6), &set(&[3]), 2)
            .unwrap()
            .count();
        // brute force over all ordered pairs
        let mut brute = 0;
        for a in 1..=6 {
            for b in a + 1..=6 {
                if a != 3 && b != 3 {
                    brute += 1;
                }
            }
        }
        assert_eq!(n, brute);
        assert_eq!(n, 10);
    }

    #[test]
    fn too_many_requested() {
        assert!(enumerate_subsets(&IndexSet::full(3), &set(&[1]), 3).is_err());
    }

    #[test]
    fn zero_subset_is_empty_set() {
        let got: Vec<_> = enumerate_subsets(&IndexSet::full(3), &IndexSet::empty(), 0)
            .unwrap()
            .collect();
        assert_eq!(got, vec![IndexSet::empty()]);
    }

    #[test]
    fn nested_small_cases() {
        let got: Vec<_> = enumerate_nested(1, 3, 2).unwrap().map(|t| t.0).collect();
        assert_eq!(got, vec![vec![1, 2], vec![1, 3], vec![2, 3]]);
        let got: Vec<_> = enumerate_nested(2, 2, 1).unwrap().map(|t| t.0).collect();
        assert_eq!(got, vec![vec![2]]);
        assert_eq!(enumerate_nested(1, 5, 3).unwrap().count(), 10);
        assert!(enumerate_nested(1, 3, 0).is_err());
        assert!(enumerate_nested(1, 3, 4).is_err());
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(IndexSet::new(vec![0, 1]).is_err());
        assert!(IndexSet::new(vec![2, 2]).is_err());
        assert_eq!(IndexSet::new(vec![3, 1]).unwrap().members(), &[1, 3]);
    }

    #[test]
    fn guard_defaults() {
        assert!(complexity_guard(8, ComplexityBudget::default()).is_accepted());
        let refused = complexity_guard(20, ComplexityBudget::default());
        assert!(!refused.is_accepted());
        assert!(refused.terms() > 0);
        assert!(complexity_guard(12, ComplexityBudget { max_n: 16 }).is_accepted());
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut xs = vec![1.0e16];
        xs.extend(std::iter::repeat(1.0).take(1000));
        xs.push(-1.0e16);
        assert_eq!(kahan_sum(xs), 1000.0);
    }

    #[test]
    fn power_set_sizes() {
        let s = set(&[2, 4, 7]);
        let all: Vec<_> = power_set(&s).collect();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], IndexSet::empty());
        assert_eq!(all[7], s);
    }

    proptest! {
        #[test]
        fn subset_count_matches_binomial(n in 1usize..10, ex in proptest::collection::vec(1usize..10, 0..4), k in 0usize..10) {
            let universe = IndexSet::full(n);
            let mut ex = ex;
            ex.sort_unstable();
            ex.dedup();
            let excluded = IndexSet::new(ex).unwrap();
            let avail = universe.difference(&excluded).len();
            prop_assume!(k <= avail);
            let subsets: Vec<_> = enumerate_subsets(&universe, &excluded, k).unwrap().collect();
            prop_assert_eq!(subsets.len() as u128, binomial(avail, k));
            for (i, s) in subsets.iter().enumerate() {
                prop_assert_eq!(s.len(), k);
                prop_assert!(s.is_disjoint(&excluded));
                prop_assert!(s.is_subset(&universe));
                if i > 0 {
                    prop_assert!(subsets[i - 1] < *s);
                }
            }
        }

        #[test]
        fn nested_matches_subsets(n1 in 1usize..5, width in 1usize..6, l in 1usize..6) {
            let n2 = n1 + width - 1;
            prop_assume!(l <= width);
            let nested: Vec<Vec<usize>> = enumerate_nested(n1, n2, l).unwrap().map(|t| t.0).collect();
            let range = IndexSet::new((n1..=n2).collect()).unwrap();
            let subsets: Vec<Vec<usize>> = enumerate_subsets(&range, &IndexSet::empty(), l)
                .unwrap()
                .map(|s| s.members().to_vec())
                .collect();
            prop_assert_eq!(nested, subsets);
        }
    }
}
