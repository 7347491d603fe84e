//! Treatment assignment: seeded draws, exhaustive enumeration, and the
//! bookkeeping that turns a science table plus an assignment into observed
//! data.
//!
//! Complete randomization assigns exactly r units to each of the 2^K
//! treatments. Matched-pair randomization assigns, independently within each
//! block of 2^K units, one unit to each treatment. Draws use a seeded
//! ChaCha8 stream with Fisher-Yates shuffles, so uniformity holds by
//! construction. Enumeration walks treatment-label sequences in
//! lexicographic order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::population::{check_pairing, Pairing, ScienceTable};

/// Default ceiling on enumerated assignment spaces.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// A treatment assignment: unit index -> 0-based treatment index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    treatment_of: Vec<usize>,
}

impl Assignment {
    pub fn new(treatment_of: Vec<usize>) -> Self {
        Assignment { treatment_of }
    }

    pub fn treatment_of(&self, unit: usize) -> usize {
        self.treatment_of[unit]
    }

    pub fn labels(&self) -> &[usize] {
        &self.treatment_of
    }

    pub fn n(&self) -> usize {
        self.treatment_of.len()
    }

    /// Checks both marginal constraints: r units per treatment, one
    /// treatment per unit (implicit in the representation), and the per-pair
    /// bijection when a pairing is given.
    pub fn validate(&self, n: usize, k: usize, pairing: Option<&Pairing>) -> Result<()> {
        let cells = 1usize << k;
        if self.n() != n {
            return Err(Error::InvalidAssignment(format!(
                "assignment covers {} units, expected {}",
                self.n(),
                n
            )));
        }
        if !n.is_multiple_of(cells) {
            return Err(Error::UnitCount { n, k });
        }
        let r = n / cells;
        let mut counts = vec![0usize; cells];
        for &l in &self.treatment_of {
            if l >= cells {
                return Err(Error::InvalidAssignment(format!(
                    "treatment index {} out of range for 2^{} design",
                    l + 1,
                    k
                )));
            }
            counts[l] += 1;
        }
        if counts.iter().any(|&c| c != r) {
            return Err(Error::InvalidAssignment(format!(
                "treatment counts {counts:?} are not all {r}"
            )));
        }
        if let Some(p) = pairing {
            for (j, block) in p.blocks().iter().enumerate() {
                let mut seen = vec![false; cells];
                for &i in block {
                    let l = self.treatment_of[i];
                    if seen[l] {
                        return Err(Error::InvalidAssignment(format!(
                            "pair {} assigns treatment {} twice",
                            j + 1,
                            l + 1
                        )));
                    }
                    seen[l] = true;
                }
            }
        }
        Ok(())
    }
}

/// Number of complete-randomization assignments, n! / (r!)^{2^k}.
/// `None` when the count overflows u128.
pub fn cr_assignment_count(n: usize, k: usize) -> Option<u128> {
    let cells = 1usize << k;
    if n == 0 || !n.is_multiple_of(cells) {
        return None;
    }
    let r = n / cells;
    // product over treatments of C(remaining, r)
    let mut count: u128 = 1;
    let mut remaining = n;
    for _ in 0..cells {
        count = count.checked_mul(binomial(remaining, r)?)?;
        remaining -= r;
    }
    Some(count)
}

/// Number of matched-pair assignments, (2^k!)^r.
pub fn mp_assignment_count(r: usize, k: usize) -> Option<u128> {
    let cells = 1usize << k;
    let per_block = factorial(cells)?;
    let mut count: u128 = 1;
    for _ in 0..r {
        count = count.checked_mul(per_block)?;
    }
    Some(count)
}

fn factorial(n: usize) -> Option<u128> {
    let mut f: u128 = 1;
    for i in 2..=n as u128 {
        f = f.checked_mul(i)?;
    }
    Some(f)
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.checked_mul((n - i) as u128)?;
        c /= (i + 1) as u128;
    }
    Some(c)
}

/// Uniform draw from all complete-randomization assignments, by shuffling
/// the multiset of r copies of each treatment label.
pub fn draw_complete(n: usize, k: usize, seed: u64) -> Result<Assignment> {
    let cells = 1usize << k;
    if n == 0 || !n.is_multiple_of(cells) {
        return Err(Error::UnitCount { n, k });
    }
    let r = n / cells;
    let mut labels: Vec<usize> = (0..cells).flat_map(|l| std::iter::repeat_n(l, r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    Ok(Assignment::new(labels))
}

/// Uniform draw of independent per-pair bijections between units and
/// treatments.
pub fn draw_matched_pair(p: &Pairing, k: usize, seed: u64) -> Result<Assignment> {
    let cells = 1usize << k;
    let n: usize = p.blocks().iter().map(|b| b.len()).sum();
    if p.blocks().iter().any(|b| b.len() != cells) {
        return Err(Error::InvalidPairing(format!(
            "matched-pair draw needs blocks of size {cells}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut treatment_of = vec![0usize; n];
    for block in p.blocks() {
        let mut labels: Vec<usize> = (0..cells).collect();
        labels.shuffle(&mut rng);
        for (&unit, &l) in block.iter().zip(labels.iter()) {
            treatment_of[unit] = l;
        }
    }
    Ok(Assignment::new(treatment_of))
}

// Lexicographic next permutation; returns false once the sequence is the
// last (descending) one.
fn next_permutation(a: &mut [usize]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Streams every complete-randomization assignment exactly once, in
/// lexicographic order over treatment-label sequences.
#[derive(Debug)]
pub struct CompleteEnumeration {
    current: Option<Vec<usize>>,
}

impl Iterator for CompleteEnumeration {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        let current = self.current.take()?;
        let out = Assignment::new(current.clone());
        let mut next = current;
        if next_permutation(&mut next) {
            self.current = Some(next);
        }
        Some(out)
    }
}

pub fn enumerate_complete(n: usize, k: usize, cap: u64) -> Result<CompleteEnumeration> {
    let cells = 1usize << k;
    if n == 0 || !n.is_multiple_of(cells) {
        return Err(Error::UnitCount { n, k });
    }
    let states = cr_assignment_count(n, k).unwrap_or(u128::MAX);
    if states > cap as u128 {
        return Err(Error::CapExceeded { states, cap });
    }
    let r = n / cells;
    let start: Vec<usize> = (0..cells).flat_map(|l| std::iter::repeat_n(l, r)).collect();
    Ok(CompleteEnumeration {
        current: Some(start),
    })
}

/// Streams every matched-pair assignment exactly once: the product over
/// pairs of all 2^K! within-pair bijections, with the last pair varying
/// fastest.
#[derive(Debug)]
pub struct MatchedPairEnumeration {
    blocks: Vec<Vec<usize>>,
    // all permutations of 0..2^K in lexicographic order
    perms: Vec<Vec<usize>>,
    n: usize,
    state: Option<Vec<usize>>,
}

impl Iterator for MatchedPairEnumeration {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        let state = self.state.take()?;
        let mut treatment_of = vec![0usize; self.n];
        for (block, &perm_idx) in self.blocks.iter().zip(state.iter()) {
            for (&unit, &l) in block.iter().zip(self.perms[perm_idx].iter()) {
                treatment_of[unit] = l;
            }
        }
        // odometer increment, last block fastest
        let mut next = state;
        let mut pos = next.len();
        while pos > 0 {
            pos -= 1;
            if next[pos] + 1 < self.perms.len() {
                next[pos] += 1;
                for slot in next[pos + 1..].iter_mut() {
                    *slot = 0;
                }
                self.state = Some(next);
                break;
            }
        }
        Some(Assignment::new(treatment_of))
    }
}

pub fn enumerate_matched_pair(p: &Pairing, k: usize, cap: u64) -> Result<MatchedPairEnumeration> {
    let cells = 1usize << k;
    if p.blocks().iter().any(|b| b.len() != cells) {
        return Err(Error::InvalidPairing(format!(
            "matched-pair enumeration needs blocks of size {cells}"
        )));
    }
    let states = mp_assignment_count(p.len(), k).unwrap_or(u128::MAX);
    if states > cap as u128 {
        return Err(Error::CapExceeded { states, cap });
    }
    let mut perms = Vec::new();
    let mut perm: Vec<usize> = (0..cells).collect();
    loop {
        perms.push(perm.clone());
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let n: usize = p.blocks().iter().map(|b| b.len()).sum();
    Ok(MatchedPairEnumeration {
        blocks: p.blocks().to_vec(),
        perms,
        n,
        state: Some(vec![0; p.len()]),
    })
}

/// Observed data: the one revealed potential outcome per unit, grouped the
/// way the estimators consume it. Estimators only ever see this type, never
/// the science table.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservedData {
    /// Per-treatment lists of observed outcomes, each of length r.
    Complete { k: usize, per_treatment: Vec<Vec<f64>> },
    /// Per-pair observed outcome vectors: `pair_outcomes[j][l]` is the
    /// outcome of the unit in pair j that received treatment l.
    MatchedPair { k: usize, pair_outcomes: Vec<Vec<f64>> },
}

impl ObservedData {
    pub fn k(&self) -> usize {
        match self {
            ObservedData::Complete { k, .. } | ObservedData::MatchedPair { k, .. } => *k,
        }
    }

    /// Replicates per treatment (CR) or number of pairs (MP); both equal
    /// N / 2^K.
    pub fn replicates(&self) -> usize {
        match self {
            ObservedData::Complete { per_treatment, .. } => per_treatment[0].len(),
            ObservedData::MatchedPair { pair_outcomes, .. } => pair_outcomes.len(),
        }
    }

    pub fn n(&self) -> usize {
        self.replicates() << self.k()
    }
}

/// Applies an assignment to a science table, revealing exactly one
/// potential outcome per unit. With a pairing the result is grouped per
/// pair, otherwise per treatment.
pub fn observe(
    st: &ScienceTable,
    a: &Assignment,
    pairing: Option<&Pairing>,
) -> Result<ObservedData> {
    a.validate(st.n(), st.k(), pairing)?;
    let cells = st.cells();
    match pairing {
        None => {
            let mut per_treatment: Vec<Vec<f64>> = vec![Vec::new(); cells];
            for i in 0..st.n() {
                let l = a.treatment_of(i);
                per_treatment[l].push(st.outcome(i, l));
            }
            Ok(ObservedData::Complete {
                k: st.k(),
                per_treatment,
            })
        }
        Some(p) => {
            check_pairing(st, p)?;
            let pair_outcomes: Vec<Vec<f64>> = p
                .blocks()
                .iter()
                .map(|block| {
                    let mut row = vec![0.0; cells];
                    for &i in block {
                        row[a.treatment_of(i)] = st.outcome(i, a.treatment_of(i));
                    }
                    row
                })
                .collect();
            Ok(ObservedData::MatchedPair {
                k: st.k(),
                pair_outcomes,
            })
        }
    }
}
