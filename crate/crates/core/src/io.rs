//! CSV and JSON serialization for science tables, observed data,
//! assignments and reports.
//!
//! Treatment cells are labeled by z-pattern strings like "(-1,+1)" so file
//! column order never matters; everything is normalized to model-matrix row
//! order on parse. Parsers reject rather than coerce. Numbers are rendered
//! with 17 significant digits, which round-trips f64 exactly.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::estimators::EstimateReport;
use crate::model_matrix::{build_model_matrix, parse_z_pattern, ModelMatrix};
use crate::oracle::{PrecisionReport, VerificationReport};
use crate::population::{Pairing, ScienceTable};
use crate::randomization::{Assignment, ObservedData};
use crate::estimators::DesignTag;

/// 17 significant digits; parses back to the identical f64.
pub fn fmt_g17(x: f64) -> String {
    format!("{:.16e}", x)
}

fn parse_num(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} {tok:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{what} {tok:?} is not finite"),
        });
    }
    Ok(v)
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Parses a science-table CSV with header `unit[,pair],Y(z),...`. Returns
/// the table and, when a `pair` column is present and non-empty, the
/// pairing it defines. Y columns may appear in any order.
pub fn parse_science_table<R: Read>(reader: R) -> Result<(ScienceTable, Option<Pairing>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut unit_col = None;
    let mut pair_col = None;
    let mut outcome_cols: Vec<(usize, Vec<i32>)> = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        match name {
            "unit" => unit_col = Some(idx),
            "pair" => pair_col = Some(idx),
            other if other.starts_with('Y') => {
                let pattern = parse_z_pattern(other.trim_start_matches('Y')).map_err(|_| {
                    Error::Parse {
                        line: 1,
                        msg: format!("column {other:?} is not a Y(z) cell label"),
                    }
                })?;
                outcome_cols.push((idx, pattern));
            }
            other => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unexpected column {other:?}"),
                })
            }
        }
    }
    let unit_col = unit_col.ok_or(Error::Parse {
        line: 1,
        msg: "missing 'unit' column".into(),
    })?;
    if outcome_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no Y(z) outcome columns".into(),
        });
    }

    let k = outcome_cols[0].1.len();
    let cells = 1usize << k;
    if outcome_cols.iter().any(|(_, p)| p.len() != k) || outcome_cols.len() != cells {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected {cells} Y(z) columns with {k}-factor patterns, found {}",
                outcome_cols.len()
            ),
        });
    }
    let m = build_model_matrix(k)?;
    let index_of: HashMap<Vec<i32>, usize> = m
        .treatment_combinations()
        .into_iter()
        .enumerate()
        .map(|(l, z)| (z, l))
        .collect();
    // column index in the file for each treatment, in model-matrix row order
    let mut file_col_of = vec![usize::MAX; cells];
    for (idx, pattern) in &outcome_cols {
        let l = *index_of.get(pattern).ok_or(Error::Parse {
            line: 1,
            msg: format!("duplicate or unknown z-pattern in column {}", idx + 1),
        })?;
        if file_col_of[l] != usize::MAX {
            return Err(Error::Parse {
                line: 1,
                msg: format!("treatment {} labeled by two columns", l + 1),
            });
        }
        file_col_of[l] = *idx;
    }

    let mut unit_ids = Vec::new();
    let mut outcomes = Vec::new();
    let mut pair_labels: Vec<Option<String>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record_line(&record);
        unit_ids.push(record.get(unit_col).unwrap_or("").to_string());
        let row: Vec<f64> = file_col_of
            .iter()
            .map(|&c| parse_num(record.get(c).unwrap_or(""), line, "outcome"))
            .collect::<Result<_>>()?;
        outcomes.push(row);
        pair_labels.push(
            pair_col
                .and_then(|c| record.get(c))
                .filter(|s| !s.is_empty())
                .map(|s| s.to_string()),
        );
    }

    let st = ScienceTable::new(k, outcomes, unit_ids)?;
    let pairing = build_pairing_from_labels(&pair_labels, st.n(), k)?;
    Ok((st, pairing))
}

// Groups unit indices by pair label (order of first appearance). All-empty
// labels mean no pairing; a mix of empty and non-empty is rejected.
fn build_pairing_from_labels(
    labels: &[Option<String>],
    n: usize,
    k: usize,
) -> Result<Option<Pairing>> {
    if labels.iter().all(|l| l.is_none()) {
        return Ok(None);
    }
    if labels.iter().any(|l| l.is_none()) {
        return Err(Error::InvalidPairing(
            "some units have a pair label and some do not".into(),
        ));
    }
    let mut order: Vec<String> = Vec::new();
    let mut blocks: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, label) in labels.iter().enumerate() {
        let label = label.as_ref().unwrap();
        if !blocks.contains_key(label) {
            order.push(label.clone());
        }
        blocks.entry(label.clone()).or_default().push(i);
    }
    let cells = 1usize << k;
    for label in &order {
        let size = blocks[label].len();
        if size != cells {
            return Err(Error::InvalidPairing(format!(
                "pair {label} has size {size}, expected {cells}"
            )));
        }
    }
    let blocks: Vec<Vec<usize>> = order.into_iter().map(|l| blocks.remove(&l).unwrap()).collect();
    Ok(Some(Pairing::new(blocks, n, k)?))
}

/// Writes a science table (and optional pairing) back to CSV in canonical
/// column order.
pub fn write_science_table<W: Write>(
    w: W,
    st: &ScienceTable,
    pairing: Option<&Pairing>,
) -> Result<()> {
    let m = build_model_matrix(st.k())?;
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["unit".to_string(), "pair".to_string()];
    header.extend((0..st.cells()).map(|l| format!("Y{}", m.z_pattern(l))));
    wtr.write_record(&header)?;

    let mut pair_of = vec![String::new(); st.n()];
    if let Some(p) = pairing {
        for (j, block) in p.blocks().iter().enumerate() {
            for &i in block {
                pair_of[i] = (j + 1).to_string();
            }
        }
    }
    for (i, pair) in pair_of.iter().enumerate() {
        let mut record = vec![st.unit_ids()[i].clone(), pair.clone()];
        record.extend(st.unit_outcomes(i).iter().map(|&y| fmt_g17(y)));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parses an external pairing CSV with header `unit,pair`, resolving unit
/// ids against the science table's order.
pub fn parse_pairing_file<R: Read>(reader: R, st: &ScienceTable) -> Result<Pairing> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let unit_col = headers.iter().position(|h| h == "unit").ok_or(Error::Parse {
        line: 1,
        msg: "pairing file missing 'unit' column".into(),
    })?;
    let pair_col = headers.iter().position(|h| h == "pair").ok_or(Error::Parse {
        line: 1,
        msg: "pairing file missing 'pair' column".into(),
    })?;
    let index_of: HashMap<&str, usize> = st
        .unit_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut labels: Vec<Option<String>> = vec![None; st.n()];
    for record in rdr.records() {
        let record = record?;
        let line = record_line(&record);
        let unit = record.get(unit_col).unwrap_or("");
        let &i = index_of.get(unit).ok_or(Error::Parse {
            line,
            msg: format!("unknown unit {unit:?}"),
        })?;
        if labels[i].is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("unit {unit:?} listed twice"),
            });
        }
        labels[i] = Some(record.get(pair_col).unwrap_or("").to_string());
    }
    build_pairing_from_labels(&labels, st.n(), st.k())?
        .ok_or_else(|| Error::InvalidPairing("pairing file is empty".into()))
}

/// Parses observed-data CSV with header `unit,pair,z_pattern,y_obs` (pair
/// blank in CR mode).
pub fn parse_observed<R: Read>(reader: R, design: DesignTag) -> Result<ObservedData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or(Error::Parse {
            line: 1,
            msg: format!("observed-data file missing {name:?} column"),
        })
    };
    let pattern_col = col("z_pattern")?;
    let y_col = col("y_obs")?;
    let pair_col = headers.iter().position(|h| h == "pair");

    struct Row {
        pair: Option<String>,
        treatment: usize,
        y: f64,
        line: usize,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut k: Option<usize> = None;
    let mut index_of: HashMap<Vec<i32>, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record_line(&record);
        let pattern_str = record.get(pattern_col).unwrap_or("");
        let pattern = parse_z_pattern(pattern_str).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let k = *k.get_or_insert_with(|| {
            let k = pattern.len();
            index_of = build_model_matrix(k)
                .map(|m| {
                    m.treatment_combinations()
                        .into_iter()
                        .enumerate()
                        .map(|(l, z)| (z, l))
                        .collect()
                })
                .unwrap_or_default();
            k
        });
        if pattern.len() != k {
            return Err(Error::Parse {
                line,
                msg: format!("z-pattern {pattern_str:?} has wrong factor count"),
            });
        }
        let treatment = *index_of.get(&pattern).ok_or(Error::Parse {
            line,
            msg: format!("unknown z-pattern {pattern_str:?}"),
        })?;
        rows.push(Row {
            pair: pair_col
                .and_then(|c| record.get(c))
                .filter(|s| !s.is_empty())
                .map(|s| s.to_string()),
            treatment,
            y: parse_num(record.get(y_col).unwrap_or(""), line, "y_obs")?,
            line,
        });
    }
    let k = k.ok_or(Error::Parse {
        line: 1,
        msg: "observed-data file has no rows".into(),
    })?;
    let cells = 1usize << k;

    match design {
        DesignTag::Cr => {
            let mut per_treatment: Vec<Vec<f64>> = vec![Vec::new(); cells];
            for row in &rows {
                per_treatment[row.treatment].push(row.y);
            }
            let r = per_treatment[0].len();
            if r == 0 || per_treatment.iter().any(|ys| ys.len() != r) {
                return Err(Error::Format(format!(
                    "unequal replication across treatments: {:?}",
                    per_treatment.iter().map(|ys| ys.len()).collect::<Vec<_>>()
                )));
            }
            Ok(ObservedData::Complete { k, per_treatment })
        }
        DesignTag::Mp => {
            let mut order: Vec<String> = Vec::new();
            let mut cells_of: HashMap<String, Vec<Option<f64>>> = HashMap::new();
            for row in &rows {
                let pair = row.pair.clone().ok_or(Error::Parse {
                    line: row.line,
                    msg: "matched-pair observation without a pair label".into(),
                })?;
                if !cells_of.contains_key(&pair) {
                    order.push(pair.clone());
                }
                let slot = &mut cells_of.entry(pair.clone()).or_insert(vec![None; cells])
                    [row.treatment];
                if slot.is_some() {
                    return Err(Error::Parse {
                        line: row.line,
                        msg: format!(
                            "pair {pair} has two observations for treatment index {}",
                            row.treatment + 1
                        ),
                    });
                }
                *slot = Some(row.y);
            }
            let mut pair_outcomes = Vec::new();
            for pair in order {
                let slots = cells_of.remove(&pair).unwrap();
                let full: Option<Vec<f64>> = slots.into_iter().collect();
                pair_outcomes.push(full.ok_or(Error::Format(format!(
                    "pair {pair} is missing an observation for some treatment"
                )))?);
            }
            Ok(ObservedData::MatchedPair { k, pair_outcomes })
        }
    }
}

/// Writes an assignment CSV with header `unit,treatment_index,z_pattern`;
/// treatment indices are 1-based.
pub fn write_assignment<W: Write>(
    w: W,
    a: &Assignment,
    unit_ids: &[String],
    m: &ModelMatrix,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["unit", "treatment_index", "z_pattern"])?;
    for (i, id) in unit_ids.iter().enumerate() {
        let l = a.treatment_of(i);
        wtr.write_record([id.as_str(), &(l + 1).to_string(), &m.z_pattern(l)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the model matrix as CSV with effect labels and 1-based row index.
pub fn write_design_csv<W: Write>(w: W, m: &ModelMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["row".to_string(), "z_pattern".to_string()];
    header.extend(m.column_labels());
    wtr.write_record(&header)?;
    for j in 0..m.side() {
        let mut record = vec![(j + 1).to_string(), m.z_pattern(j)];
        record.extend(m.row(j)?.iter().map(|e| format!("{e:+}")));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// JSON form of the model matrix.
pub fn design_json(m: &ModelMatrix) -> serde_json::Value {
    serde_json::json!({
        "k": m.k(),
        "labels": m.column_labels(),
        "z_patterns": (0..m.side()).map(|l| m.z_pattern(l)).collect::<Vec<_>>(),
        "entries": (0..m.side())
            .map(|j| m.row(j).unwrap().to_vec())
            .collect::<Vec<_>>(),
    })
}

/// Writes an estimate (or truth) report as CSV: point estimate rows, then
/// the covariance matrix row-major with effect labels.
pub fn write_estimate_csv<W: Write>(w: W, report: &EstimateReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["section", "effect", "values"])?;
    for (label, value) in report.labels.iter().zip(report.point.iter()) {
        wtr.write_record(["point", label, &fmt_g17(*value)])?;
    }
    for (label, row) in report.labels.iter().zip(report.covariance.iter()) {
        let joined = row.iter().map(|v| fmt_g17(*v)).collect::<Vec<_>>().join(" ");
        wtr.write_record(["covariance", label, &joined])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One line per identity, then a verdict line. The human-readable form of a
/// verification report.
pub fn format_verification_text(report: &VerificationReport) -> String {
    let mut out = format!(
        "design={} assignments={}\n",
        report.design, report.assignment_count
    );
    for check in &report.checks {
        let status = match (&check.skipped, check.passed) {
            (Some(reason), _) => format!("SKIP ({reason})"),
            (None, true) => "PASS".to_string(),
            (None, false) => "FAIL".to_string(),
        };
        out.push_str(&format!(
            "  [{status}] {} (max abs error {:.3e}, tol {:.1e})\n",
            check.name, check.max_abs_error, check.tolerance
        ));
    }
    out
}

/// Human-readable precision comparison.
pub fn format_precision_text(report: &PrecisionReport) -> String {
    let mut out = String::from("effect,var_cr,var_mp,ratio_mp_over_cr\n");
    for (e, label) in report.labels.iter().enumerate() {
        let ratio = match report.variance_ratio_mp_over_cr[e] {
            crate::oracle::RatioValue::Finite(v) => fmt_g17(v),
            crate::oracle::RatioValue::Infinite => "inf".to_string(),
            crate::oracle::RatioValue::Undefined => "undefined".to_string(),
        };
        out.push_str(&format!(
            "{label},{},{},{ratio}\n",
            fmt_g17(report.cov_cr[e][e]),
            fmt_g17(report.cov_mp[e][e]),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "\
unit,pair,\"Y(-1,-1)\",\"Y(-1,+1)\",\"Y(+1,-1)\",\"Y(+1,+1)\"
1,1,1,1,1,1
2,1,2,2,2,2
3,1,3,3,3,3
4,1,4,4,4,4
5,2,5,5,5,5
6,2,6,6,6,6
7,2,7,7,7,7
8,2,8,8,8,8
";

    #[test]
    fn parses_paired_table() {
        let (st, pairing) = parse_science_table(TABLE.as_bytes()).unwrap();
        assert_eq!(st.k(), 2);
        assert_eq!(st.n(), 8);
        assert_eq!(st.replicates().unwrap(), 2);
        let p = pairing.unwrap();
        assert_eq!(p.blocks(), &[vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
    }

    #[test]
    fn shuffled_columns_parse_identically() {
        let shuffled = "\
unit,\"Y(+1,+1)\",\"Y(-1,-1)\",pair,\"Y(+1,-1)\",\"Y(-1,+1)\"
1,1,1,1,1,1
2,2,2,1,2,2
3,3,3,1,3,3
4,4,4,1,4,4
5,5,5,2,5,5
6,6,6,2,6,6
7,7,7,2,7,7
8,8,8,2,8,8
";
        let (a, pa) = parse_science_table(TABLE.as_bytes()).unwrap();
        let (b, pb) = parse_science_table(shuffled.as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn bad_pair_size_is_diagnosed() {
        let bad = "\
unit,pair,Y(-1),Y(+1)
1,1,0,1
2,1,0,1
3,2,0,1
";
        let err = parse_science_table(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("pair 2 has size 1, expected 2"), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let bad = "\
unit,Y(-1),Y(+1)
1,0,1
2,zero,1
";
        match parse_science_table(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn science_table_round_trip() {
        let (st, pairing) = parse_science_table(TABLE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_science_table(&mut buf, &st, pairing.as_ref()).unwrap();
        let (st2, pairing2) = parse_science_table(buf.as_slice()).unwrap();
        assert_eq!(st, st2);
        assert_eq!(pairing, pairing2);
    }

    #[test]
    fn parses_observed_mp() {
        let obs = "\
unit,pair,z_pattern,y_obs
1,1,\"(-1,-1)\",1.5
2,1,\"(-1,+1)\",2.5
3,1,\"(+1,-1)\",3.5
4,1,\"(+1,+1)\",4.5
5,2,\"(-1,-1)\",5.5
6,2,\"(-1,+1)\",6.5
7,2,\"(+1,-1)\",7.5
8,2,\"(+1,+1)\",8.5
";
        match parse_observed(obs.as_bytes(), DesignTag::Mp).unwrap() {
            ObservedData::MatchedPair { k, pair_outcomes } => {
                assert_eq!(k, 2);
                assert_eq!(pair_outcomes.len(), 2);
                assert_eq!(pair_outcomes[0], vec![1.5, 2.5, 3.5, 4.5]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn duplicate_mp_cell_is_rejected() {
        let obs = "\
unit,pair,z_pattern,y_obs
1,1,(-1),1.0
2,1,(-1),2.0
";
        let err = parse_observed(obs.as_bytes(), DesignTag::Mp).unwrap_err();
        assert!(err.to_string().contains("pair 1"), "{err}");
    }

    #[test]
    fn parses_observed_cr() {
        let obs = "\
unit,pair,z_pattern,y_obs
1,,(-1),1.0
2,,(+1),2.0
3,,(-1),3.0
4,,(+1),4.0
";
        match parse_observed(obs.as_bytes(), DesignTag::Cr).unwrap() {
            ObservedData::Complete { per_treatment, .. } => {
                assert_eq!(per_treatment, vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn unknown_z_pattern_is_rejected() {
        let obs = "\
unit,pair,z_pattern,y_obs
1,,(-2),1.0
";
        assert!(parse_observed(obs.as_bytes(), DesignTag::Cr).is_err());
    }

    #[test]
    fn g17_round_trips() {
        for x in [0.0, 5.0 / 6.0, -1.0 / 3.0, 1e-300, 123456.789] {
            assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn estimate_report_json_round_trip() {
        let report = EstimateReport {
            design: DesignTag::Mp,
            k: 1,
            n: 4,
            r: 2,
            labels: vec!["I".into(), "A".into()],
            point: vec![5.0 / 6.0, -0.1],
            covariance: vec![vec![0.25, 0.0], vec![0.0, 1.0 / 3.0]],
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: EstimateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }
}
