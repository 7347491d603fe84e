//! The finite-population science table and its summaries.
//!
//! A science table holds every potential outcome `Y_i(z_l)` for N units under
//! all 2^K treatment combinations. Estimators never see it; it feeds the
//! closed-form covariances and the enumeration oracle.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model_matrix::ModelMatrix;

/// A length-2^K vector of factorial effects: entry 0 is the null effect,
/// entries 1..=K the main effects, the rest interactions.
pub type EffectVector = DVector<f64>;

/// Full potential-outcome matrix for a finite population: `outcome(i, l)` is
/// `Y_i(z_l)` with columns in model-matrix row order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScienceTable {
    k: usize,
    outcomes: Vec<Vec<f64>>,
    unit_ids: Vec<String>,
}

impl ScienceTable {
    pub fn new(k: usize, outcomes: Vec<Vec<f64>>, unit_ids: Vec<String>) -> Result<Self> {
        let cells = 1usize << k;
        if outcomes.is_empty() {
            return Err(Error::DimensionMismatch("science table has no units".into()));
        }
        if unit_ids.len() != outcomes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} unit ids for {} outcome rows",
                unit_ids.len(),
                outcomes.len()
            )));
        }
        for (i, row) in outcomes.iter().enumerate() {
            if row.len() != cells {
                return Err(Error::DimensionMismatch(format!(
                    "unit {} has {} outcomes, expected {}",
                    unit_ids[i],
                    row.len(),
                    cells
                )));
            }
            if let Some(bad) = row.iter().find(|y| !y.is_finite()) {
                return Err(Error::Format(format!(
                    "unit {} has non-finite outcome {bad}",
                    unit_ids[i]
                )));
            }
        }
        Ok(ScienceTable {
            k,
            outcomes,
            unit_ids,
        })
    }

    /// Convenience constructor with unit ids "1".."N".
    pub fn with_default_ids(k: usize, outcomes: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (1..=outcomes.len()).map(|i| i.to_string()).collect();
        ScienceTable::new(k, outcomes, ids)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Treatment count 2^K.
    pub fn cells(&self) -> usize {
        1 << self.k
    }

    pub fn outcome(&self, unit: usize, treatment: usize) -> f64 {
        self.outcomes[unit][treatment]
    }

    pub fn unit_outcomes(&self, unit: usize) -> &[f64] {
        &self.outcomes[unit]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Replicates per treatment r = N / 2^K; errors unless N is a positive
    /// multiple of 2^K.
    pub fn replicates(&self) -> Result<usize> {
        let cells = self.cells();
        if self.n() == 0 || !self.n().is_multiple_of(cells) {
            return Err(Error::UnitCount {
                n: self.n(),
                k: self.k,
            });
        }
        Ok(self.n() / cells)
    }

    /// Mean potential outcome for treatment `l` over all units.
    pub fn treatment_mean(&self, l: usize) -> f64 {
        self.outcomes.iter().map(|row| row[l]).sum::<f64>() / self.n() as f64
    }
}

/// A partition of the unit indices into r blocks ("pairs") of size 2^K.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    blocks: Vec<Vec<usize>>,
}

impl Pairing {
    /// Validates that `blocks` is a partition of 0..n into blocks of size
    /// 2^k exactly. Blocks are canonicalized (sorted within and across) so
    /// two pairings are equal iff they define the same partition.
    pub fn new(mut blocks: Vec<Vec<usize>>, n: usize, k: usize) -> Result<Self> {
        for block in &mut blocks {
            block.sort_unstable();
        }
        blocks.sort();
        let cells = 1usize << k;
        let mut seen = vec![false; n];
        for (j, block) in blocks.iter().enumerate() {
            if block.len() != cells {
                return Err(Error::InvalidPairing(format!(
                    "pair {} has size {}, expected {}",
                    j + 1,
                    block.len(),
                    cells
                )));
            }
            for &i in block {
                if i >= n {
                    return Err(Error::InvalidPairing(format!(
                        "pair {} references unit index {} beyond N={}",
                        j + 1,
                        i + 1,
                        n
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidPairing(format!(
                        "unit index {} appears in more than one pair",
                        i + 1
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::InvalidPairing(
                "pairs do not cover every unit".into(),
            ));
        }
        Ok(Pairing { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Number of pairs r.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// tau_i = 2^{-(K-1)} H_K' Y_i, computed from a vector of cell means or
/// observed cell values.
pub fn effect_from_cells(m: &ModelMatrix, cells: &[f64]) -> Result<EffectVector> {
    let side = m.side();
    if cells.len() != side {
        return Err(Error::DimensionMismatch(format!(
            "{} cell values for a 2^{} design",
            cells.len(),
            m.k()
        )));
    }
    let scale = 1.0 / (1u64 << (m.k() - 1)) as f64;
    let values: Vec<f64> = (0..side)
        .map(|c| {
            let dot: f64 = (0..side).map(|r| m.entry(r, c) as f64 * cells[r]).sum();
            scale * dot
        })
        .collect();
    Ok(EffectVector::from_vec(values))
}

/// Individual factorial effect vectors tau_i for every unit.
pub fn unit_effects(st: &ScienceTable, m: &ModelMatrix) -> Result<Vec<EffectVector>> {
    check_compatible(st, m)?;
    (0..st.n())
        .map(|i| effect_from_cells(m, st.unit_outcomes(i)))
        .collect()
}

/// Population factorial effect vector tau, the mean of the unit effects.
pub fn population_effect(st: &ScienceTable, m: &ModelMatrix) -> Result<EffectVector> {
    check_compatible(st, m)?;
    let means: Vec<f64> = (0..st.cells()).map(|l| st.treatment_mean(l)).collect();
    effect_from_cells(m, &means)
}

/// Finite-population variance S^2(z_l) with divisor N-1.
pub fn treatment_variance(st: &ScienceTable, l: usize) -> Result<f64> {
    if st.n() < 2 {
        return Err(Error::Estimator(
            "treatment variance requires at least 2 units".into(),
        ));
    }
    if l >= st.cells() {
        return Err(Error::IndexOutOfRange {
            index: l + 1,
            max: st.cells(),
        });
    }
    let mean = st.treatment_mean(l);
    let ss: f64 = (0..st.n()).map(|i| (st.outcome(i, l) - mean).powi(2)).sum();
    Ok(ss / (st.n() - 1) as f64)
}

/// Per-pair per-treatment means: row j holds the mean of `Y_i(z_l)` over the
/// units of pair j.
pub fn pair_means(st: &ScienceTable, p: &Pairing) -> Result<Vec<Vec<f64>>> {
    check_pairing(st, p)?;
    let cells = st.cells();
    Ok(p.blocks()
        .iter()
        .map(|block| {
            (0..cells)
                .map(|l| {
                    block.iter().map(|&i| st.outcome(i, l)).sum::<f64>() / block.len() as f64
                })
                .collect()
        })
        .collect())
}

/// Per-pair factorial effect vectors tau_{j.}.
pub fn pair_effects(
    st: &ScienceTable,
    p: &Pairing,
    m: &ModelMatrix,
) -> Result<Vec<EffectVector>> {
    check_compatible(st, m)?;
    pair_means(st, p)?
        .iter()
        .map(|means| effect_from_cells(m, means))
        .collect()
}

fn check_compatible(st: &ScienceTable, m: &ModelMatrix) -> Result<()> {
    if st.k() != m.k() {
        return Err(Error::DimensionMismatch(format!(
            "science table has k={} but model matrix has k={}",
            st.k(),
            m.k()
        )));
    }
    Ok(())
}

pub(crate) fn check_pairing(st: &ScienceTable, p: &Pairing) -> Result<()> {
    let covered: usize = p.blocks().iter().map(|b| b.len()).sum();
    if covered != st.n() {
        return Err(Error::InvalidPairing(format!(
            "pairing covers {} units but table has {}",
            covered,
            st.n()
        )));
    }
    for block in p.blocks() {
        if block.len() != st.cells() {
            return Err(Error::InvalidPairing(format!(
                "pair size {} does not match 2^K = {}",
                block.len(),
                st.cells()
            )));
        }
        if block.iter().any(|&i| i >= st.n()) {
            return Err(Error::InvalidPairing("unit index beyond table".into()));
        }
    }
    Ok(())
}
