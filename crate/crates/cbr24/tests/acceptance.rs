//! Acceptance gates for the whole pipeline. Each test checks one numbered
//! criterion and prints a single pass/fail line; tolerances and time gates
//! are pinned as constants here.

use cbr24::codec;
use cbr24::domain::{enumerate_puzzles, solve_general, solve_restricted, Puzzle};
use cbr24::evaluation::{
    metrics_at_k, run_generation_experiment, run_retrieval_experiment, ExperimentSettings,
    GenerationSettings, Mode, Scheme,
};
use cbr24::features::{encode_labels, extract_features, model_input};
use cbr24::network::{backprop, loss, Example, LatentModel};
use cbr24::provider::{NullProvider, OracleProvider, RemoteConfig, RemoteProvider, TipFollowerProvider};
use cbr24::query::{build_query, QueryKind};
use cbr24::repository::Repository;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

const BUILD_REPO_GATE: Duration = Duration::from_secs(5);
const GENERAL_SOLVE_GATE: Duration = Duration::from_secs(60);
const CODEC_GATE: Duration = Duration::from_secs(30);
const EXPERIMENT_GATE: Duration = Duration::from_secs(600);
const METRIC_TOL: f64 = 1e-9;
const GRADIENT_REL_TOL: f64 = 1e-4;
const GRADIENT_PROBES_PER_TENSOR: usize = 32;
const GRADIENT_STEP: f64 = 1e-5;
const RANDOM_RANKINGS: usize = 1000;
/// Reported (not gated) band around the reference aggregate table,
/// in percentage points.
const SOFT_BAND_PP: f64 = 15.0;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {word} - {detail}");
    assert!(pass, "criterion {criterion}: {word} - {detail}");
}

static REPO: OnceLock<(tempfile::TempDir, Repository, Duration)> = OnceLock::new();

/// Repository built once through the same code path as the CLI command.
fn built_repo() -> &'static (tempfile::TempDir, Repository, Duration) {
    REPO.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let start = Instant::now();
        let repo = Repository::build(dir.path()).expect("build repository");
        let elapsed = start.elapsed();
        (dir, repo, elapsed)
    })
}

#[test]
fn criterion_01_restricted_family_count() {
    let (_, repo, elapsed) = built_repo();
    let pass = repo.len() == 466 && *elapsed < BUILD_REPO_GATE;
    verdict(
        "1 (restricted-family repository count)",
        pass,
        &format!(
            "build-repo produced {} cases in {:.2}s (need exactly 466 in < {}s)",
            repo.len(),
            elapsed.as_secs_f64(),
            BUILD_REPO_GATE.as_secs()
        ),
    );
}

#[test]
fn criterion_02_general_solvability_count() {
    let start = Instant::now();
    let solvable = enumerate_puzzles()
        .iter()
        .filter(|p| !solve_general(p).is_empty())
        .count();
    let elapsed = start.elapsed();
    let pass = solvable == 1362 && elapsed < GENERAL_SOLVE_GATE;
    verdict(
        "2 (general solvability count)",
        pass,
        &format!(
            "{solvable} of 1820 puzzles solvable in {:.2}s (need exactly 1362 in < {}s)",
            elapsed.as_secs_f64(),
            GENERAL_SOLVE_GATE.as_secs()
        ),
    );
}

#[test]
fn criterion_03_codec_round_trip() {
    let start = Instant::now();
    let mut failures = 0usize;
    for p in enumerate_puzzles() {
        match codec::recognize(&codec::render(&p)) {
            Ok(q) if q == p => {}
            _ => failures += 1,
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && elapsed < CODEC_GATE;
    verdict(
        "3 (codec round trip)",
        pass,
        &format!(
            "{} of 1820 renders recognized exactly in {:.2}s (need 1820 in < {}s)",
            1820 - failures,
            elapsed.as_secs_f64(),
            CODEC_GATE.as_secs()
        ),
    );
}

#[test]
fn criterion_04_feature_worked_example() {
    let p = Puzzle::new([4, 5, 9, 10]).unwrap();
    let f = extract_features(&p);
    // two pairs make the value 1 (5-4 and 10-9); position 1 joins one of them
    let pass = f.global[0] == 2 && f.per_position[0][0] == 1;
    verdict(
        "4 (feature worked example)",
        pass,
        &format!(
            "(4,5,9,10): global count for value 1 = {}, position-1 count = {} (need 2 and 1)",
            f.global[0], f.per_position[0][0]
        ),
    );
}

#[test]
fn criterion_05_label_worked_example() {
    let p = Puzzle::new([4, 5, 9, 10]).unwrap();
    let labels = encode_labels(&solve_restricted(&p));
    let expected: [f64; 20] = [
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0,
        0.0, 0.0, 1.0,
    ];
    let pass = labels == expected;
    verdict(
        "5 (label worked example)",
        pass,
        &format!("(4,5,9,10) labels {labels:?} (need final batch [1,1,0,0,1], all other bits 0)"),
    );
}

#[test]
fn criterion_06_query_text_byte_fidelity() {
    let test = Puzzle::new([1, 3, 7, 12]).unwrap();
    let retrieved = {
        let p = Puzzle::new([1, 3, 6, 7]).unwrap();
        cbr24::repository::Case {
            id: p.id(),
            puzzle: p,
            image_path: String::new(),
            solutions: solve_restricted(&p),
            results: Vec::new(),
            features: None,
            latent: None,
        }
    };
    let nc = build_query(&test, QueryKind::NoContext, None).unwrap();
    let gc = build_query(&test, QueryKind::GeneralContext, None).unwrap();
    let tc = build_query(&test, QueryKind::TopContext, Some(&retrieved)).unwrap();

    let nc_expected = "START QUESTION\nSolve the following Math-24 puzzle: \n1 3 7 12\nEND QUESTION";
    let gc_expected = "START QUESTION\nSolve the following Math-24 puzzle:\n1 3 7 12\nEND QUESTION\n\nSTART CONTEXT\nTo help you answer the question, below is a tip that may help:\na) use a pair of numbers to make 24, 12, 8 or 6\nb) use the remaining pair of numbers to make 1, 2, 3 or 4 respectively\nc) then the product of step a) and step b) equals 24\nEND CONTEXT";
    let tc_expected = "START QUESTION\nSolve the following Math-24 puzzle:\n1 3 7 12\nEND QUESTION\n\nSTART CONTEXT\nTo help you answer the question, below is a tip that may help:\na) use the pair (1, 7) to make 6. If this is impossible, try to make 6 using some other pair\nb) then use the remaining pair to make 4\nc) then 6 * 4 = 24\nOR\na) use the pair (1, 12) to make 8. If this is impossible, try to make 8 using some other pair\nb) then use the remaining pair to make 3\nc) then 8 * 3 = 24\nEND CONTEXT";

    let pass = nc.user == nc_expected && gc.user == gc_expected && tc.user == tc_expected;
    verdict(
        "6 (query text byte fidelity)",
        pass,
        &format!(
            "NC match {}, GC match {}, TC match {}",
            nc.user == nc_expected,
            gc.user == gc_expected,
            tc.user == tc_expected
        ),
    );
}

#[test]
fn criterion_07_gradient_check() {
    let (_, repo, _) = built_repo();
    let data: Vec<Example> = [0usize, 100, 200, 300, 400]
        .iter()
        .map(|&i| {
            let c = &repo.cases()[i];
            let f = extract_features(&c.puzzle);
            (model_input(&c.puzzle, &f), encode_labels(&c.solutions))
        })
        .collect();
    let model = LatentModel::init(77);
    let (_, grads) = backprop(&model, &data);

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst = 0.0f64;
    let mut probes = 0usize;
    let tensors: [(&str, usize); 4] = [
        ("w1", model.w1.len()),
        ("b1", model.b1.len()),
        ("w2", model.w2.len()),
        ("b2", model.b2.len()),
    ];
    for (name, len) in tensors {
        for _ in 0..GRADIENT_PROBES_PER_TENSOR {
            let idx = rng.random_range(0..len);
            let analytic = match name {
                "w1" => grads.w1[idx],
                "b1" => grads.b1[idx],
                "w2" => grads.w2[idx],
                _ => grads.b2[idx],
            };
            let probe = |delta: f64| {
                let mut m = model.clone();
                match name {
                    "w1" => m.w1[idx] += delta,
                    "b1" => m.b1[idx] += delta,
                    "w2" => m.w2[idx] += delta,
                    _ => m.b2[idx] += delta,
                }
                loss(&m, &data)
            };
            let numeric = (probe(GRADIENT_STEP) - probe(-GRADIENT_STEP)) / (2.0 * GRADIENT_STEP);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            probes += 1;
        }
    }
    let pass = probes >= 100 && worst < GRADIENT_REL_TOL;
    verdict(
        "7 (gradient check)",
        pass,
        &format!(
            "max relative error {worst:.3e} over {probes} probes (need < {GRADIENT_REL_TOL:.0e} over >= 100)"
        ),
    );
}

#[test]
fn criterion_08_metric_unit_suite() {
    // frozen worked values: flags (1,0,1), 10 relevant in pool, k=3
    let m = metrics_at_k(&[true, false, true], 10, 3);
    let expected_ndcg = 1.5 / (1.0 + 1.0 / 3f64.log2());
    let exact = (m.precision - 2.0 / 3.0).abs() < METRIC_TOL
        && (m.recall - 0.2).abs() < METRIC_TOL
        && (m.f1 - 4.0 / 13.0).abs() < METRIC_TOL
        && (m.ndcg - expected_ndcg).abs() < METRIC_TOL
        && (m.mrr - 1.0).abs() < METRIC_TOL;

    // properties over random rankings
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut property_failures = 0usize;
    for _ in 0..RANDOM_RANKINGS {
        let len = rng.random_range(1..=10usize);
        let flags: Vec<bool> = (0..len).map(|_| rng.random::<bool>()).collect();
        let hits_total = flags.iter().filter(|&&f| f).count();
        let relevant_total = hits_total + rng.random_range(0..=40usize);
        let mut prev_recall = 0.0f64;
        for k in 1..=len {
            let mk = metrics_at_k(&flags, relevant_total, k);
            if mk.recall + 1e-12 < prev_recall {
                property_failures += 1;
            }
            prev_recall = mk.recall;
            for v in [mk.precision, mk.recall, mk.f1, mk.ndcg, mk.mrr] {
                if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                    property_failures += 1;
                }
            }
            // a window with every hit packed at the top is ideal
            let ideal: Vec<bool> = (0..len).map(|i| i < relevant_total.min(len)).collect();
            let mi = metrics_at_k(&ideal, relevant_total, k);
            let expected = if relevant_total == 0 { 0.0 } else { 1.0 };
            if (mi.ndcg - expected).abs() > 1e-12 {
                property_failures += 1;
            }
        }
    }
    let pass = exact && property_failures == 0;
    verdict(
        "8 (metric unit suite)",
        pass,
        &format!(
            "worked values within {METRIC_TOL:.0e}: {exact}; property violations over {RANDOM_RANKINGS} rankings: {property_failures}"
        ),
    );
}

#[test]
fn criterion_09_harness_partition_check() {
    let (_, repo, _) = built_repo();
    let settings = GenerationSettings::default();

    let tips = run_generation_experiment(repo, &settings, &TipFollowerProvider, None).unwrap();
    let tc = tips.aggregate_for(QueryKind::TopContext).unwrap();
    let partitions_populated = tc.counts.admissible > 0 && tc.counts.inadmissible > 0;
    let tip_ok = tc.metrics.faithfulness == Some(1.0)
        && tc.metrics.negative_rejection == Some(0.0)
        && partitions_populated;

    let oracle = run_generation_experiment(repo, &settings, &OracleProvider, None).unwrap();
    let oracle_ok = QueryKind::ALL
        .iter()
        .all(|&k| oracle.aggregate_for(k).unwrap().metrics.accuracy == 1.0);

    let null = run_generation_experiment(repo, &settings, &NullProvider, None).unwrap();
    let null_ok = QueryKind::ALL
        .iter()
        .all(|&k| null.aggregate_for(k).unwrap().metrics.accuracy == 0.0);

    let pass = tip_ok && oracle_ok && null_ok;
    verdict(
        "9 (harness partition check)",
        pass,
        &format!(
            "tip-follower TC faithfulness {:?} / negative rejection {:?} over {}+{} cases; oracle all-kinds accuracy 1.0: {oracle_ok}; null all-kinds accuracy 0.0: {null_ok}",
            tc.metrics.faithfulness,
            tc.metrics.negative_rejection,
            tc.counts.admissible,
            tc.counts.inadmissible
        ),
    );
}

#[test]
fn criterion_10_directional_table_reproduction() {
    let (_, repo, _) = built_repo();
    let settings = ExperimentSettings::default();
    let start = Instant::now();
    let report = run_retrieval_experiment(repo, &settings).unwrap();
    let elapsed = start.elapsed();

    let ndcg = |scheme, mode| report.aggregate_for(scheme, mode).unwrap().mean.ndcg * 100.0;
    let sco_f = ndcg(Scheme::Sco, Mode::Features);
    let sco_l = ndcg(Scheme::Sco, Mode::Latent);
    let scd_f = ndcg(Scheme::Scd, Mode::Features);
    let scd_l = ndcg(Scheme::Scd, Mode::Latent);
    let directional = sco_l > sco_f && scd_l > scd_f;
    let in_time = elapsed < EXPERIMENT_GATE;

    // reference aggregate (percent): precision, recall, f1, ndcg, mrr
    let reference = [
        (Scheme::Sco, Mode::Features, [71.9, 1.5, 2.9, 72.6, 81.5]),
        (Scheme::Sco, Mode::Latent, [82.0, 1.8, 3.4, 82.4, 87.2]),
        (Scheme::Scd, Mode::Features, [45.4, 4.2, 7.1, 46.5, 58.1]),
        (Scheme::Scd, Mode::Latent, [64.2, 6.5, 10.9, 65.1, 73.4]),
    ];
    let mut soft_misses = Vec::new();
    for (scheme, mode, expected) in reference {
        let m = report.aggregate_for(scheme, mode).unwrap().mean;
        let got = [m.precision, m.recall, m.f1, m.ndcg, m.mrr].map(|v| v * 100.0);
        for (name, g, e) in ["precision", "recall", "f1", "ndcg", "mrr"]
            .iter()
            .zip(got)
            .map(|(n, g)| (n, g, 0.0))
            .zip(expected)
            .map(|((n, g, _), e)| (n, g, e))
        {
            if (g - e).abs() > SOFT_BAND_PP {
                soft_misses.push(format!("{scheme} {mode} {name} {g:.1} vs {e:.1}"));
            }
        }
    }
    let soft_note = if soft_misses.is_empty() {
        format!("all 20 means within ±{SOFT_BAND_PP}pp of the reference table")
    } else {
        format!(
            "soft (non-gating) ±{SOFT_BAND_PP}pp check: {} of 20 means outside band [{}]",
            soft_misses.len(),
            soft_misses.join("; ")
        )
    };

    let pass = directional && in_time;
    verdict(
        "10 (directional retrieval reproduction)",
        pass,
        &format!(
            "NDCG latent vs features: SCO {sco_l:.2} vs {sco_f:.2}, SCD {scd_l:.2} vs {scd_f:.2} (need latent strictly higher in both) in {:.1}s (< {}s); {soft_note}",
            elapsed.as_secs_f64(),
            EXPERIMENT_GATE.as_secs()
        ),
    );
}

#[test]
fn criterion_11_live_endpoint_report() {
    // report-only: never fails regardless of endpoint behavior
    let endpoint = std::env::var("CBR24_ENDPOINT").unwrap_or_default();
    if endpoint.is_empty() {
        verdict(
            "11 (live endpoint report)",
            true,
            "report-only; no live endpoint configured (set CBR24_ENDPOINT to enable), skipped",
        );
        return;
    }
    let (_, repo, _) = built_repo();
    let provider = match RemoteProvider::new(RemoteConfig {
        endpoint,
        model: std::env::var("CBR24_MODEL").unwrap_or_default(),
        api_key_env: std::env::var("CBR24_API_KEY_ENV").unwrap_or_default(),
        temperature: 0.0,
        timeout_secs: 30,
        retries: 2,
    }) {
        Ok(p) => p,
        Err(e) => {
            verdict(
                "11 (live endpoint report)",
                true,
                &format!("report-only; client construction failed: {e}"),
            );
            return;
        }
    };
    let settings = GenerationSettings {
        runs: 1,
        kinds: vec![QueryKind::NoContext, QueryKind::TopContext],
        ..GenerationSettings::default()
    };
    match run_generation_experiment(repo, &settings, &provider, None) {
        Ok(report) => {
            let acc = |k| {
                report
                    .aggregate_for(k)
                    .map(|a| (a.metrics.accuracy, a.metrics.errored_count))
                    .unwrap_or((0.0, 0))
            };
            let (nc, nc_err) = acc(QueryKind::NoContext);
            let (tc, tc_err) = acc(QueryKind::TopContext);
            verdict(
                "11 (live endpoint report)",
                true,
                &format!(
                    "report-only; one seeded run: TC accuracy {:.1}% ({} errored) vs NC accuracy {:.1}% ({} errored); TC >= NC: {}",
                    tc * 100.0,
                    tc_err,
                    nc * 100.0,
                    nc_err,
                    tc >= nc
                ),
            );
        }
        Err(e) => verdict(
            "11 (live endpoint report)",
            true,
            &format!("report-only; experiment failed: {e}"),
        ),
    }
}
