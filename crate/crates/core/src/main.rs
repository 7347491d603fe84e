//! `pairfact` command-line interface.

use std::fs::File;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Deserialize;

use pairfact::error::Error;
use pairfact::estimators::{
    cov_estimator_mp, estimate_cr, estimate_mp, neyman_cov_cr, true_cov_cr, true_cov_mp,
    matrix_rows, DesignTag, EstimateReport,
};
use pairfact::io::{
    design_json, format_precision_text, format_verification_text, parse_observed,
    parse_pairing_file, parse_science_table, write_assignment, write_design_csv,
    write_estimate_csv,
};
use pairfact::model_matrix::build_model_matrix;
use pairfact::oracle::{compare_designs, relative_error, verify_cr, verify_mp, IdentityCheck};
use pairfact::population::{population_effect, Pairing, ScienceTable};
use pairfact::randomization::{draw_complete, draw_matched_pair, DEFAULT_ENUMERATION_CAP};

#[derive(Parser)]
#[command(
    name = "pairfact",
    about = "2^K factorial designs: complete and matched-pair randomization, \
             effect estimation, and exact-enumeration verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Cr,
    Mp,
}

impl From<DesignArg> for DesignTag {
    fn from(d: DesignArg) -> DesignTag {
        match d {
            DesignArg::Cr => DesignTag::Cr,
            DesignArg::Mp => DesignTag::Mp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the 2^K factorial model matrix with effect labels.
    Design {
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Draw a treatment assignment for the units of a science table.
    Assign {
        #[arg(long)]
        table: PathBuf,
        /// Randomize within the table's pairs instead of completely.
        #[arg(long)]
        paired: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Point estimate and covariance estimate from observed data only.
    Estimate {
        #[arg(long)]
        obs: PathBuf,
        #[arg(long, value_enum)]
        design: DesignArg,
        #[arg(long)]
        json: bool,
    },
    /// Population effects and true covariances from a full science table.
    Truth {
        #[arg(long)]
        table: PathBuf,
        /// External pairing CSV (unit,pair); defaults to the table's pair column.
        #[arg(long)]
        pairing: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Check the closed-form results against exhaustive enumeration.
    Verify {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        pairing: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, env = "PAIRFACT_CAP", default_value_t = DEFAULT_ENUMERATION_CAP)]
        cap: u64,
        /// JSON fixture with expected tau / cov_cr / cov_mp to compare against.
        #[arg(long)]
        expect: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Compare complete-randomization and matched-pair precision numerically.
    Compare {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        pairing: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// Expected values for `verify --expect`.
#[derive(Deserialize)]
struct ExpectedFixture {
    #[serde(default)]
    tau: Option<Vec<f64>>,
    #[serde(default)]
    cov_cr: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    cov_mp: Option<Vec<Vec<f64>>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_table(
    table: &PathBuf,
    pairing_file: Option<&PathBuf>,
) -> Result<(ScienceTable, Option<Pairing>), Error> {
    let (st, column_pairing) = parse_science_table(File::open(table)?)?;
    let pairing = match pairing_file {
        Some(path) => Some(parse_pairing_file(File::open(path)?, &st)?),
        None => column_pairing,
    };
    Ok((st, pairing))
}

fn nested(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, rows.first().map_or(0, |r| r.len()), |i, j| rows[i][j])
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let stdout = std::io::stdout();
    match cli.command {
        Command::Design { k, format } => {
            let m = build_model_matrix(k)?;
            match format {
                Format::Csv => write_design_csv(stdout.lock(), &m)?,
                Format::Json => println!("{}", serde_json::to_string_pretty(&design_json(&m))?),
            }
        }
        Command::Assign {
            table,
            paired,
            seed,
            out,
        } => {
            let (st, pairing) = load_table(&table, None)?;
            let m = build_model_matrix(st.k())?;
            let assignment = if paired {
                let p = pairing.ok_or(Error::InvalidPairing(
                    "--paired requires a pair column in the table".into(),
                ))?;
                draw_matched_pair(&p, st.k(), seed)?
            } else {
                st.replicates()?;
                draw_complete(st.n(), st.k(), seed)?
            };
            match out {
                Some(path) => write_assignment(File::create(path)?, &assignment, st.unit_ids(), &m)?,
                None => write_assignment(stdout.lock(), &assignment, st.unit_ids(), &m)?,
            }
        }
        Command::Estimate { obs, design, json } => {
            let design = DesignTag::from(design);
            let data = parse_observed(File::open(obs)?, design)?;
            let m = build_model_matrix(data.k())?;
            let (point, covariance) = match design {
                DesignTag::Cr => (estimate_cr(&data, &m)?, neyman_cov_cr(&data, &m)?),
                DesignTag::Mp => (estimate_mp(&data, &m)?, cov_estimator_mp(&data, &m)?),
            };
            let report = EstimateReport::new(design, &m, &data, &point, &covariance);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                write_estimate_csv(stdout.lock(), &report)?;
            }
        }
        Command::Truth {
            table,
            pairing,
            json,
        } => {
            let (st, pairing) = load_table(&table, pairing.as_ref())?;
            let m = build_model_matrix(st.k())?;
            let tau = population_effect(&st, &m)?;
            let cov_cr = true_cov_cr(&st, &m)?;
            let cov_mp = pairing
                .as_ref()
                .map(|p| true_cov_mp(&st, p, &m))
                .transpose()?;
            let value = serde_json::json!({
                "k": st.k(),
                "n": st.n(),
                "labels": m.column_labels(),
                "tau": tau.as_slice(),
                "cov_cr": matrix_rows(&cov_cr),
                "cov_mp": cov_mp.as_ref().map(matrix_rows),
            });
            if json {
                println!("{}", serde_json::to_string_pretty(&value)?);
            } else {
                let report = EstimateReport {
                    design: DesignTag::Cr,
                    k: st.k(),
                    n: st.n(),
                    r: st.replicates()?,
                    labels: m.column_labels(),
                    point: tau.as_slice().to_vec(),
                    covariance: matrix_rows(&cov_cr),
                };
                write_estimate_csv(stdout.lock(), &report)?;
                if let Some(cov_mp) = cov_mp {
                    let report = EstimateReport {
                        design: DesignTag::Mp,
                        covariance: matrix_rows(&cov_mp),
                        ..report
                    };
                    write_estimate_csv(stdout.lock(), &report)?;
                }
            }
        }
        Command::Verify {
            table,
            pairing,
            tol,
            cap,
            expect,
            json,
        } => {
            let (st, pairing) = load_table(&table, pairing.as_ref())?;
            let m = build_model_matrix(st.k())?;
            let mut reports = vec![verify_cr(&st, &m, tol, cap)?];
            if let Some(p) = pairing.as_ref() {
                reports.push(verify_mp(&st, p, &m, tol, cap)?);
            }
            if let Some(path) = expect {
                let fixture: ExpectedFixture = serde_json::from_reader(File::open(path)?)?;
                let mut checks = Vec::new();
                if let Some(expected) = fixture.tau {
                    let actual = population_effect(&st, &m)?;
                    checks.push(fixture_check(
                        "population effect matches fixture",
                        &DMatrix::from_column_slice(actual.len(), 1, actual.as_slice()),
                        &nested(&expected.iter().map(|&v| vec![v]).collect::<Vec<_>>()),
                        tol,
                    ));
                }
                if let Some(expected) = fixture.cov_cr {
                    checks.push(fixture_check(
                        "true CR covariance matches fixture",
                        &true_cov_cr(&st, &m)?,
                        &nested(&expected),
                        tol,
                    ));
                }
                if let Some(expected) = fixture.cov_mp {
                    let p = pairing.as_ref().ok_or(Error::InvalidPairing(
                        "fixture has cov_mp but no pairing is available".into(),
                    ))?;
                    checks.push(fixture_check(
                        "true MP covariance matches fixture",
                        &true_cov_mp(&st, p, &m)?,
                        &nested(&expected),
                        tol,
                    ));
                }
                for check in checks {
                    reports[0].push_check(check);
                }
            }
            let all_passed = reports.iter().all(|r| r.all_passed());
            if json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            } else {
                for report in &reports {
                    print!("{}", format_verification_text(report));
                }
                println!("verdict: {}", if all_passed { "PASS" } else { "FAIL" });
            }
            if !all_passed {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Compare {
            table,
            pairing,
            json,
        } => {
            let (st, pairing) = load_table(&table, pairing.as_ref())?;
            let p = pairing.ok_or(Error::InvalidPairing(
                "compare needs a pairing (pair column or --pairing file)".into(),
            ))?;
            let m = build_model_matrix(st.k())?;
            let report = compare_designs(&st, &p, &m)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                let mut out = stdout.lock();
                out.write_all(format_precision_text(&report).as_bytes())?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fixture_check(name: &str, actual: &DMatrix<f64>, expected: &DMatrix<f64>, tol: f64) -> IdentityCheck {
    let err = if actual.shape() == expected.shape() {
        relative_error(actual, expected)
    } else {
        f64::INFINITY
    };
    IdentityCheck {
        name: name.to_string(),
        max_abs_error: err,
        tolerance: tol,
        passed: err <= tol,
        skipped: None,
    }
}
