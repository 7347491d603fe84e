//! Construction of the 2^K factorial model matrix.
//!
//! The model matrix `H_K` is a 2^K x 2^K matrix of +-1 entries. Column 0 is
//! all ones (the null effect), columns 1..=K hold the main-effect contrasts,
//! and the remaining columns hold interaction contrasts, one per factor
//! subset of size >= 2 ordered first by cardinality and then
//! lexicographically. The rows of the main-effect columns enumerate the 2^K
//! treatment combinations.

use crate::error::{Error, Result};

/// Largest supported factor count.
pub const MAX_FACTORS: usize = 20;

/// The 2^K x 2^K factorial model matrix with +-1 integer entries.
///
/// Entries are integers so orthogonality checks are exact. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMatrix {
    k: usize,
    // row-major, side() x side()
    entries: Vec<Vec<i32>>,
    // factor subset per column (empty for column 0), 0-based factor indices
    column_subsets: Vec<Vec<usize>>,
}

/// Builds `H_k` by the three-step construction: all-ones column, main-effect
/// columns from sign blocks of length 2^{k-c}, then interaction columns as
/// entry-wise products of the main-effect columns in each subset.
pub fn build_model_matrix(k: usize) -> Result<ModelMatrix> {
    if !(1..=MAX_FACTORS).contains(&k) {
        return Err(Error::FactorCount(k));
    }
    let side = 1usize << k;

    let mut columns: Vec<Vec<i32>> = Vec::with_capacity(side);
    columns.push(vec![1; side]);
    for c in 1..=k {
        let block = 1usize << (k - c);
        let col: Vec<i32> = (0..side)
            .map(|row| if (row / block).is_multiple_of(2) { -1 } else { 1 })
            .collect();
        columns.push(col);
    }

    let mut column_subsets: Vec<Vec<usize>> = Vec::with_capacity(side);
    column_subsets.push(Vec::new());
    for f in 0..k {
        column_subsets.push(vec![f]);
    }
    for subset in interaction_subsets(k) {
        let mut col = vec![1i32; side];
        for &f in &subset {
            for (e, &m) in col.iter_mut().zip(columns[f + 1].iter()) {
                *e *= m;
            }
        }
        columns.push(col);
        column_subsets.push(subset);
    }

    let entries: Vec<Vec<i32>> = (0..side)
        .map(|row| columns.iter().map(|col| col[row]).collect())
        .collect();

    Ok(ModelMatrix {
        k,
        entries,
        column_subsets,
    })
}

// All subsets of {0,..,k-1} with >= 2 elements, ordered by cardinality then
// lexicographically on the sorted member lists.
fn interaction_subsets(k: usize) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = (0u32..(1u32 << k))
        .filter(|mask| mask.count_ones() >= 2)
        .map(|mask| (0..k).filter(|f| mask & (1 << f) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
}

impl ModelMatrix {
    /// Factor count K.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Matrix side 2^K, which is both the row and column count.
    pub fn side(&self) -> usize {
        1 << self.k
    }

    /// Entry at 0-based (row, col).
    pub fn entry(&self, row: usize, col: usize) -> i32 {
        self.entries[row][col]
    }

    /// The 0-based row `lambda_j`.
    pub fn row(&self, j: usize) -> Result<&[i32]> {
        self.entries
            .get(j)
            .map(|r| r.as_slice())
            .ok_or(Error::IndexOutOfRange {
                index: j + 1,
                max: self.side(),
            })
    }

    /// Factor subset defining each column (empty for the null-effect column).
    pub fn column_subsets(&self) -> &[Vec<usize>] {
        &self.column_subsets
    }

    /// Effect labels: "I" for the null effect, factors named "A", "B", ... by
    /// position, interactions by concatenation ("AB", "ABC", ...).
    pub fn column_labels(&self) -> Vec<String> {
        self.column_subsets
            .iter()
            .map(|subset| {
                if subset.is_empty() {
                    "I".to_string()
                } else {
                    subset.iter().map(|&f| factor_name(f)).collect()
                }
            })
            .collect()
    }

    /// The 2^K treatment combinations: rows of the main-effect columns, in
    /// row order.
    pub fn treatment_combinations(&self) -> Vec<Vec<i32>> {
        self.entries
            .iter()
            .map(|row| row[1..=self.k].to_vec())
            .collect()
    }

    /// The z-pattern string for 0-based treatment index `l`, e.g. "(-1,+1)".
    pub fn z_pattern(&self, l: usize) -> String {
        format_z_pattern(&self.entries[l][1..=self.k])
    }
}

fn factor_name(f: usize) -> char {
    // 20-factor guard keeps this in A..=T
    (b'A' + f as u8) as char
}

/// Formats a sign vector as "(-1,+1,...)".
pub fn format_z_pattern(signs: &[i32]) -> String {
    let parts: Vec<&str> = signs.iter().map(|&s| if s < 0 { "-1" } else { "+1" }).collect();
    format!("({})", parts.join(","))
}

/// Parses a "(-1,+1,...)" pattern back into a sign vector.
pub fn parse_z_pattern(s: &str) -> Result<Vec<i32>> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("z-pattern {s:?} is not parenthesized")))?;
    inner
        .split(',')
        .map(|tok| match tok.trim() {
            "-1" => Ok(-1),
            "+1" | "1" => Ok(1),
            other => Err(Error::Format(format!(
                "z-pattern {s:?} has invalid level {other:?}"
            ))),
        })
        .collect()
}
