//! Set functions over (member, query) pairs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::population::{MemberId, QueryId};
use crate::predictive::{posterior_update, LatentClassModel, PosteriorState};

/// Most pairs a [`PairSet`] can hold.
pub const MAX_PAIRS: usize = 128;

/// Bit set over pair indices `member * n_queries + query`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PairSet(pub u128);

impl PairSet {
    pub const EMPTY: PairSet = PairSet(0);

    #[inline]
    pub fn with(self, i: usize) -> Self {
        PairSet(self.0 | (1u128 << i))
    }

    #[inline]
    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    #[inline]
    pub fn union(self, o: Self) -> Self {
        PairSet(self.0 | o.0)
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn is_subset(self, o: Self) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }
}

/// Utility over subsets of `V × X` with `f(∅) = 0`.
pub trait SetFunctionOracle: Sync {
    fn n_members(&self) -> usize;
    fn n_queries(&self) -> usize;
    fn value(&self, s: PairSet) -> f64;
    /// Monotone submodularity established by construction or exhaustive check.
    fn certified(&self) -> bool;
    fn label(&self) -> &'static str;

    fn n_pairs(&self) -> usize {
        self.n_members() * self.n_queries()
    }

    #[inline]
    fn pair(&self, m: MemberId, q: QueryId) -> usize {
        m * self.n_queries() + q
    }

    /// `R × {x}` as a pair set; `members` is a bit set over member ids.
    fn block(&self, members: u64, q: QueryId) -> PairSet {
        let mut s = PairSet::EMPTY;
        let mut bits = members;
        while bits != 0 {
            let m = bits.trailing_zeros() as usize;
            s = s.with(self.pair(m, q));
            bits &= bits - 1;
        }
        s
    }

    fn gain(&self, add: PairSet, base: PairSet) -> f64 {
        self.value(add.union(base)) - self.value(base)
    }
}

fn check_size(n_members: usize, n_queries: usize) -> Result<()> {
    if n_members == 0 || n_queries == 0 || n_members * n_queries > MAX_PAIRS || n_members > 64 {
        return Err(Error::Scale(format!(
            "{n_members} members × {n_queries} queries does not fit a {MAX_PAIRS}-pair lab instance"
        )));
    }
    Ok(())
}

/// `f(S) = |⋃_{p ∈ S} cover(p)|`; monotone submodular by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageOracle {
    n_members: usize,
    n_queries: usize,
    /// Per pair, bit set over a universe of at most 64 elements.
    covers: Vec<u64>,
}

impl CoverageOracle {
    /// `covers[m][q]` lists the universe elements (< 64) covered by `(m, q)`.
    pub fn new(covers: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        let n_members = covers.len();
        let n_queries = covers.first().map_or(0, Vec::len);
        check_size(n_members, n_queries)?;
        let mut flat = Vec::with_capacity(n_members * n_queries);
        for row in &covers {
            if row.len() != n_queries {
                return Err(Error::Shape("ragged coverage table".into()));
            }
            for elems in row {
                let mut bits = 0u64;
                for &e in elems {
                    if e >= 64 {
                        return Err(Error::Parameter(format!("universe element {e} exceeds 63")));
                    }
                    bits |= 1 << e;
                }
                flat.push(bits);
            }
        }
        Ok(Self {
            n_members,
            n_queries,
            covers: flat,
        })
    }

    pub fn from_masks(n_members: usize, n_queries: usize, covers: Vec<u64>) -> Result<Self> {
        check_size(n_members, n_queries)?;
        if covers.len() != n_members * n_queries {
            return Err(Error::Shape("one coverage mask per pair".into()));
        }
        Ok(Self {
            n_members,
            n_queries,
            covers,
        })
    }

    pub fn masks(&self) -> &[u64] {
        &self.covers
    }
}

impl SetFunctionOracle for CoverageOracle {
    fn n_members(&self) -> usize {
        self.n_members
    }
    fn n_queries(&self) -> usize {
        self.n_queries
    }
    fn value(&self, s: PairSet) -> f64 {
        s.iter()
            .fold(0u64, |acc, i| acc | self.covers[i])
            .count_ones() as f64
    }
    fn certified(&self) -> bool {
        true
    }
    fn label(&self) -> &'static str {
        "coverage"
    }
}

/// Additive utility with non-negative pair weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModularOracle {
    n_members: usize,
    n_queries: usize,
    weights: Vec<f64>,
}

impl ModularOracle {
    pub fn new(n_members: usize, n_queries: usize, weights: Vec<f64>) -> Result<Self> {
        check_size(n_members, n_queries)?;
        if weights.len() != n_members * n_queries || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Parameter("one non-negative weight per pair".into()));
        }
        Ok(Self {
            n_members,
            n_queries,
            weights,
        })
    }
}

impl SetFunctionOracle for ModularOracle {
    fn n_members(&self) -> usize {
        self.n_members
    }
    fn n_queries(&self) -> usize {
        self.n_queries
    }
    fn value(&self, s: PairSet) -> f64 {
        s.iter().map(|i| self.weights[i]).sum()
    }
    fn certified(&self) -> bool {
        true
    }
    fn label(&self) -> &'static str {
        "modular"
    }
}

/// `f(S) = |S|²`: monotone but supermodular. A negative fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareOracle {
    n_members: usize,
    n_queries: usize,
}

impl SquareOracle {
    pub fn new(n_members: usize, n_queries: usize) -> Result<Self> {
        check_size(n_members, n_queries)?;
        Ok(Self {
            n_members,
            n_queries,
        })
    }
}

impl SetFunctionOracle for SquareOracle {
    fn n_members(&self) -> usize {
        self.n_members
    }
    fn n_queries(&self) -> usize {
        self.n_queries
    }
    fn value(&self, s: PairSet) -> f64 {
        (s.len() * s.len()) as f64
    }
    fn certified(&self) -> bool {
        false
    }
    fn label(&self) -> &'static str {
        "square"
    }
}

/// `f(S) = Σ_v [H(U_v) - H(U_v | Y_S^v)]`: each member carries an independent
/// latent class with the model's prior; the conditional entropy is an exact
/// expectation over every joint answer to the member's queries in `S`.
#[derive(Debug, Clone)]
pub struct EntropyGainOracle {
    model: LatentClassModel<f64>,
    n_members: usize,
    queries: Vec<QueryId>,
    certified: bool,
}

impl EntropyGainOracle {
    /// Certification runs the exhaustive lattice check when the instance has
    /// at most 12 pairs; larger instances stay uncertified.
    pub fn new(
        model: LatentClassModel<f64>,
        n_members: usize,
        queries: Vec<QueryId>,
    ) -> Result<Self> {
        check_size(n_members, queries.len())?;
        for &q in &queries {
            if q >= model.n_queries() {
                return Err(Error::Parameter(format!("query {q} not in the model")));
            }
        }
        let mut o = Self {
            model,
            n_members,
            queries,
            certified: false,
        };
        if o.n_pairs() <= super::MAX_CHECK_PAIRS {
            o.certified = super::check_assumption1(&o)?.holds();
        }
        Ok(o)
    }

    fn member_gain(&self, qs: &[QueryId]) -> f64 {
        let prior = self.model.initial_state();
        let h0 = prior.entropy();
        let mut expected = 0.0;
        // Depth-first over joint answers, carrying the unnormalized joint.
        fn walk(
            m: &LatentClassModel<f64>,
            s: &PosteriorState<f64>,
            mass: f64,
            qs: &[QueryId],
            acc: &mut f64,
        ) {
            let Some((&q, rest)) = qs.split_first() else {
                *acc += mass * s.entropy();
                return;
            };
            for c in 0..m.n_choices(q) {
                let pc: f64 = m
                    .likelihood(q, c)
                    .iter()
                    .zip(&s.0)
                    .map(|(l, p)| l * p)
                    .sum();
                if pc <= 0.0 {
                    continue;
                }
                let next = posterior_update(m, s, (q, c)).expect("positive evidence");
                walk(m, &next, mass * pc, rest, acc);
            }
        }
        walk(&self.model, &prior, 1.0, qs, &mut expected);
        h0 - expected
    }
}

impl SetFunctionOracle for EntropyGainOracle {
    fn n_members(&self) -> usize {
        self.n_members
    }
    fn n_queries(&self) -> usize {
        self.queries.len()
    }
    fn value(&self, s: PairSet) -> f64 {
        let nq = self.queries.len();
        (0..self.n_members)
            .map(|m| {
                let qs: Vec<QueryId> = (0..nq)
                    .filter(|&j| s.contains(m * nq + j))
                    .map(|j| self.queries[j])
                    .collect();
                if qs.is_empty() {
                    0.0
                } else {
                    self.member_gain(&qs)
                }
            })
            .sum()
    }
    fn certified(&self) -> bool {
        self.certified
    }
    fn label(&self) -> &'static str {
        "entropy-gain"
    }
}
