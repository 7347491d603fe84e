//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Tolerances are pinned in code; run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pairfact::estimators::{
    cr_bias, estimate_cr, estimate_mp, is_psd, mp_bias, true_cov_mp, true_var_mp_k1,
};
use pairfact::model_matrix::build_model_matrix;
use pairfact::oracle::{relative_error, verify_cr, verify_mp};
use pairfact::population::{
    pair_effects, pair_means, population_effect, treatment_variance, unit_effects, Pairing,
    ScienceTable,
};
use pairfact::randomization::{
    draw_complete, draw_matched_pair, enumerate_complete, enumerate_matched_pair, observe,
    DEFAULT_ENUMERATION_CAP,
};

const TOL: f64 = 1e-10;

fn verdict(criterion: &str, passed: bool) {
    println!(
        "acceptance {criterion}: {}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion failed: {criterion}");
}

fn random_table(rng: &mut ChaCha8Rng, k: usize, n: usize) -> ScienceTable {
    let cells = 1usize << k;
    let outcomes = (0..n)
        .map(|_| (0..cells).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    ScienceTable::with_default_ids(k, outcomes).unwrap()
}

fn random_pairing(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Pairing {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let blocks = idx.chunks(1 << k).map(|c| c.to_vec()).collect();
    Pairing::new(blocks, n, k).unwrap()
}

fn ladder_table() -> ScienceTable {
    ScienceTable::with_default_ids(2, (1..=8).map(|i| vec![i as f64; 4]).collect()).unwrap()
}

/// The 20 desk-scale instances shared by criteria 2, 3 and 7.
fn desk_instances() -> Vec<(usize, usize, ScienceTable)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20260823);
    let mut out = Vec::new();
    for (k, n) in [(1, 2), (1, 4), (1, 6), (2, 4), (2, 8)] {
        for _ in 0..4 {
            out.push((k, n, random_table(&mut rng, k, n)));
        }
    }
    out
}

#[test]
fn criterion_1_model_matrix() {
    let start = Instant::now();
    let m = build_model_matrix(2).unwrap();
    let mut ok = m.row(0).unwrap() == [1, -1, -1, 1]
        && m.row(1).unwrap() == [1, -1, 1, -1]
        && m.row(2).unwrap() == [1, 1, -1, -1]
        && m.row(3).unwrap() == [1, 1, 1, 1];
    for k in 1..=6 {
        let m = build_model_matrix(k).unwrap();
        let side = m.side();
        for a in 0..side {
            for b in 0..side {
                let dot: i64 = (0..side)
                    .map(|r| m.entry(r, a) as i64 * m.entry(r, b) as i64)
                    .sum();
                ok &= dot == if a == b { side as i64 } else { 0 };
            }
        }
    }
    ok &= start.elapsed().as_secs_f64() < 1.0;
    verdict("1 (model matrix, H'H = 2^k I, < 1 s)", ok);
}

#[test]
fn criterion_2_cr_unbiasedness_and_covariance() {
    let start = Instant::now();
    let m1 = build_model_matrix(1).unwrap();
    let m2 = build_model_matrix(2).unwrap();
    let mut ok = true;
    for (k, _n, st) in desk_instances() {
        let m = if k == 1 { &m1 } else { &m2 };
        let report = verify_cr(&st, m, TOL, DEFAULT_ENUMERATION_CAP).unwrap();
        ok &= report.checks[0].passed && report.checks[1].passed;
    }
    ok &= start.elapsed().as_secs_f64() < 30.0;
    verdict("2 (CR enumeration mean = tau, covariance = closed form, < 30 s)", ok);
}

#[test]
fn criterion_3_cr_neyman_bias() {
    let m1 = build_model_matrix(1).unwrap();
    let m2 = build_model_matrix(2).unwrap();
    let mut ok = true;
    let mut checked = 0;
    for (k, n, st) in desk_instances() {
        if n / (1 << k) < 2 {
            continue;
        }
        let m = if k == 1 { &m1 } else { &m2 };
        let report = verify_cr(&st, m, TOL, DEFAULT_ENUMERATION_CAP).unwrap();
        ok &= report.checks[2].passed && report.checks[2].skipped.is_none();
        ok &= is_psd(&cr_bias(&st, m).unwrap(), 1e-10);
        checked += 1;
    }
    ok &= checked >= 12;
    verdict("3 (Neymanian CR bias identity and PSD bias)", ok);
}

#[test]
fn criterion_4_mp_covariance_closed_forms() {
    let m = build_model_matrix(2).unwrap();
    let st = ladder_table();
    let mut ok = true;
    for (blocks, diag) in [
        (vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]], 5.0 / 6.0),
        (vec![vec![0, 1, 6, 7], vec![2, 3, 4, 5]], 3.5),
    ] {
        let p = Pairing::new(blocks, 8, 2).unwrap();
        let expected =
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, diag, diag, diag]));
        ok &= relative_error(&true_cov_mp(&st, &p, &m).unwrap(), &expected) <= TOL;
        let report = verify_mp(&st, &p, &m, TOL, DEFAULT_ENUMERATION_CAP).unwrap();
        ok &= report.assignment_count == 576 && report.checks[1].passed;
    }
    verdict("4 (MP covariance diag 5/6 and 7/2, 576-assignment enumeration)", ok);
}

#[test]
fn criterion_5_decomposition_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    for _ in 0..100 {
        let k = rng.gen_range(1..=2usize);
        let r = rng.gen_range(1..=3usize);
        let cells = 1usize << k;
        let n = cells * r;
        let st = random_table(&mut rng, k, n);
        let p = random_pairing(&mut rng, n, k);
        let m = build_model_matrix(k).unwrap();
        let means = pair_means(&st, &p).unwrap();

        if n >= 2 {
            for l in 0..cells {
                let within: f64 = p
                    .blocks()
                    .iter()
                    .zip(means.iter())
                    .map(|(block, row)| {
                        block
                            .iter()
                            .map(|&i| (st.outcome(i, l) - row[l]).powi(2))
                            .sum::<f64>()
                            / (cells - 1) as f64
                    })
                    .sum();
                let grand = st.treatment_mean(l);
                let between: f64 = means.iter().map(|row| (row[l] - grand).powi(2)).sum();
                let lhs = (cells - 1) as f64 * within + cells as f64 * between;
                let rhs = (n as f64 - 1.0) * treatment_variance(&st, l).unwrap();
                ok &= (lhs - rhs).abs() <= TOL * lhs.abs().max(rhs.abs()).max(1.0);
            }
        }

        let tau = population_effect(&st, &m).unwrap();
        let taus = unit_effects(&st, &m).unwrap();
        let pair_taus = pair_effects(&st, &p, &m).unwrap();
        let mut lhs = DMatrix::zeros(cells, cells);
        for (block, tau_j) in p.blocks().iter().zip(pair_taus.iter()) {
            for &i in block {
                let d = &taus[i] - tau_j;
                lhs += &d * d.transpose();
            }
            let d = tau_j - &tau;
            lhs += (&d * d.transpose()) * cells as f64;
        }
        let mut rhs = DMatrix::zeros(cells, cells);
        for tau_i in &taus {
            let d = tau_i - &tau;
            rhs += &d * d.transpose();
        }
        ok &= relative_error(&lhs, &rhs) <= TOL;
    }
    verdict("5 (variance and effect decomposition identities, 100 instances)", ok);
}

#[test]
fn criterion_6_k1_reduction() {
    let m = build_model_matrix(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = true;
    for _ in 0..100 {
        let r = rng.gen_range(1..=5usize);
        let n = 2 * r;
        let st = random_table(&mut rng, 1, n);
        let p = random_pairing(&mut rng, n, 1);
        let direct = true_var_mp_k1(&st, &p).unwrap();
        let general = true_cov_mp(&st, &p, &m).unwrap()[(1, 1)];
        ok &= (direct - general).abs() <= TOL * direct.abs().max(general.abs()).max(1.0);
    }
    verdict("6 (K=1 reduction of the MP covariance, 100 instances)", ok);
}

#[test]
fn criterion_7_mp_cov_estimator_bias() {
    let m1 = build_model_matrix(1).unwrap();
    let m2 = build_model_matrix(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ok = true;
    let mut checked = 0;
    for (k, n, st) in desk_instances() {
        let m = if k == 1 { &m1 } else { &m2 };
        let p = random_pairing(&mut rng, n, k);
        let report = verify_mp(&st, &p, m, TOL, DEFAULT_ENUMERATION_CAP).unwrap();
        ok &= report.all_passed();
        if report.checks[2].skipped.is_none() {
            checked += 1;
        }
    }
    ok &= checked >= 12;

    // all pair effects equal: the bias vanishes and the estimator is unbiased
    let st = ladder_table();
    let balanced = Pairing::new(vec![vec![0, 1, 6, 7], vec![2, 3, 4, 5]], 8, 2).unwrap();
    let bias = mp_bias(&st, &balanced, &m2).unwrap();
    ok &= bias.iter().all(|&v| v.abs() <= 1e-12);
    let report = verify_mp(&st, &balanced, &m2, TOL, DEFAULT_ENUMERATION_CAP).unwrap();
    ok &= report.all_passed();
    verdict("7 (MP covariance-estimator bias identity; zero for equal pair effects)", ok);
}

// |MC mean - exact| <= 5 sigma per covariance entry, with sigma estimated
// from the i.i.d. centered-outer-product terms.
fn sampling_matches_enumeration(
    exact_mean: &DVector<f64>,
    exact_cov: &DMatrix<f64>,
    estimates: impl Iterator<Item = DVector<f64>>,
) -> bool {
    let side = exact_mean.len();
    let mut sum: DMatrix<f64> = DMatrix::zeros(side, side);
    let mut sum_sq: DMatrix<f64> = DMatrix::zeros(side, side);
    let mut draws = 0u64;
    for est in estimates {
        let c = est - exact_mean;
        for a in 0..side {
            for b in 0..side {
                let t = c[a] * c[b];
                sum[(a, b)] += t;
                sum_sq[(a, b)] += t * t;
            }
        }
        draws += 1;
    }
    let d = draws as f64;
    let mut ok = true;
    for a in 0..side {
        for b in 0..side {
            let mean = sum[(a, b)] / d;
            let var = f64::max((sum_sq[(a, b)] - d * mean * mean) / (d - 1.0), 0.0);
            let sigma = (var / d).sqrt();
            ok &= (mean - exact_cov[(a, b)]).abs() <= 5.0 * sigma + 1e-9;
        }
    }
    ok
}

#[test]
fn criterion_8_sampling_consistency() {
    let start = Instant::now();
    let m = build_model_matrix(2).unwrap();
    let st = ladder_table();
    let draws = 100_000u64;

    let cr_mean = {
        let mut acc = DVector::zeros(4);
        let mut count = 0u64;
        for a in enumerate_complete(8, 2, DEFAULT_ENUMERATION_CAP).unwrap() {
            acc += estimate_cr(&observe(&st, &a, None).unwrap(), &m).unwrap();
            count += 1;
        }
        acc / count as f64
    };
    let mut cr_cov = DMatrix::zeros(4, 4);
    let mut count = 0u64;
    for a in enumerate_complete(8, 2, DEFAULT_ENUMERATION_CAP).unwrap() {
        let c = estimate_cr(&observe(&st, &a, None).unwrap(), &m).unwrap() - &cr_mean;
        cr_cov += &c * c.transpose();
        count += 1;
    }
    cr_cov /= count as f64;
    let mut ok = sampling_matches_enumeration(
        &cr_mean,
        &cr_cov,
        (0..draws).map(|seed| {
            let a = draw_complete(8, 2, seed).unwrap();
            estimate_cr(&observe(&st, &a, None).unwrap(), &m).unwrap()
        }),
    );

    let p = Pairing::new(vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]], 8, 2).unwrap();
    let mp_mean = population_effect(&st, &m).unwrap();
    let mp_cov = {
        let mut acc = DMatrix::zeros(4, 4);
        let mut count = 0u64;
        for a in enumerate_matched_pair(&p, 2, DEFAULT_ENUMERATION_CAP).unwrap() {
            let c = estimate_mp(&observe(&st, &a, Some(&p)).unwrap(), &m).unwrap() - &mp_mean;
            acc += &c * c.transpose();
            count += 1;
        }
        acc / count as f64
    };
    ok &= sampling_matches_enumeration(
        &mp_mean,
        &mp_cov,
        (0..draws).map(|seed| {
            let a = draw_matched_pair(&p, 2, seed).unwrap();
            estimate_mp(&observe(&st, &a, Some(&p)).unwrap(), &m).unwrap()
        }),
    );

    ok &= start.elapsed().as_secs_f64() < 60.0;
    verdict("8 (100k seeded draws within 5-sigma of enumeration, < 60 s)", ok);
}

#[test]
fn criterion_9_cli_verify_exit_codes() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let table = data.join("example_table.csv");
    let expect = data.join("example_expected.json");

    let out = std::process::Command::new(env!("CARGO_BIN_EXE_pairfact"))
        .args([
            "verify",
            "--table",
            table.to_str().unwrap(),
            "--expect",
            expect.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let mut ok = out.status.code() == Some(0);
    let text = String::from_utf8_lossy(&out.stdout);
    ok &= text.contains("verdict: PASS") && !text.contains("FAIL");

    // corrupt one potential outcome; the fixture no longer matches
    let dir = tempfile::tempdir().unwrap();
    let corrupted = dir.path().join("corrupted.csv");
    let contents = std::fs::read_to_string(&table)
        .unwrap()
        .replace("8,2,8,8,8,8", "8,2,8,8,8,9");
    std::fs::write(&corrupted, contents).unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_pairfact"))
        .args([
            "verify",
            "--table",
            corrupted.to_str().unwrap(),
            "--expect",
            expect.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok &= out.status.code() == Some(2);

    verdict("9 (CLI verify exits 0 on the example, 2 after corruption)", ok);
}
