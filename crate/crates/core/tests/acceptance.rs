//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 9 and 10 need six 5k-step training runs, far beyond a test
//! budget; they are produced by `asymtrans protocol` into
//! `results/protocol_summary.json` and re-checked here from that file. They
//! are reported but do not fail the test run. Criterion 8 trains on
//! Colorized MNIST and is likewise only reported when MNIST is absent; every
//! other criterion is computed in-process and must pass.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use asymtrans::cmnist::rng::DetRng;
use asymtrans::cmnist::{self, PairedDataset, Split};
use asymtrans::colormetrics::{self, Channel};
use asymtrans::losses::Mode;
use asymtrans::m21gan::ModelConfig;
use asymtrans::trainer::protocol::ProtocolSummary;
use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            o.pass = false;
            o.detail = format!("{}; over the {:.0} s limit", o.detail, limit.as_secs_f64());
        }
    }
    (o, elapsed)
}

fn criterion_1() -> Outcome {
    let mut rng = DetRng::new(1);
    let mut worst = 0f64;
    let mut unique_mismatch = 0;
    for _ in 0..200 {
        let c = random_metric_case(&mut rng);
        let (r, g) = (slices(&c.real), slices(&c.generated));
        for (k, ch) in Channel::ALL.into_iter().enumerate() {
            let got = colormetrics::color_recall(&r, &g, ch, c.n).unwrap();
            worst = worst.max((got - oracle_recall(&c.real, &c.generated, k, c.n)).abs());
        }
        if colormetrics::unique_color_count(&g).unwrap() != oracle_unique(&c.generated) {
            unique_mismatch += 1;
        }
    }
    outcome(
        worst < 1e-12 && unique_mismatch == 0,
        format!("200 datasets, max recall diff {worst:e}, unique-count mismatches {unique_mismatch}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = DetRng::new(2);
    let mut ok = true;
    for _ in 0..50 {
        let c = random_metric_case(&mut rng);
        let r = slices(&c.real);
        for ch in Channel::ALL {
            ok &= colormetrics::color_recall(&r, &r, ch, c.n).unwrap() == 1.0;
        }
        let distinct = oracle_unique(&c.real);
        for k in 2..=4 {
            let dup: Vec<Vec<u8>> = c.real.iter().cycle().take(c.real.len() * k).cloned().collect();
            ok &= colormetrics::unique_color_count(&slices(&dup)).unwrap() == distinct;
        }
    }
    outcome(
        ok,
        "50 datasets: self-recall 1.0 on every channel; k=2..4 duplicates keep the distinct count",
    )
}

fn criterion_3() -> Outcome {
    let mut ok = true;
    let mut seen = Vec::new();
    for n in [2usize, 4, 8, 16] {
        let real: Vec<Vec<u8>> = (0..n * 5)
            .map(|i| {
                let v = (((i % n) * 256) / n) as u8;
                vec![v, v, v, 0, 0, 0]
            })
            .collect();
        let gen: Vec<Vec<u8>> = (0..n * 5).map(|_| vec![255, 255, 255, 0, 0, 0]).collect();
        for ch in Channel::ALL {
            let r = colormetrics::color_recall(&slices(&real), &slices(&gen), ch, n).unwrap();
            ok &= r == 1.0 / n as f64;
            seen.push(r);
        }
    }
    outcome(
        ok,
        format!("n=2,4,8,16 recall {:?}", seen.iter().step_by(3).collect::<Vec<_>>()),
    )
}

fn criterion_4(mnist: &Option<Vec<(cmnist::GrayImage, u8)>>) -> Outcome {
    let (digits, source) = match mnist {
        Some(m) => (m.clone(), "MNIST train"),
        None => (synthetic_digits(60_000, 4), "synthetic digits (MNIST not found)"),
    };
    let count = 60_000.min(digits.len());
    let gen = || cmnist::encode_dataset(&cmnist::generate_dataset(&digits, 4, count, Split::Train).unwrap()).unwrap();
    let start = Instant::now();
    let a = gen();
    let once = start.elapsed();
    let b = gen();
    let ds = cmnist::decode_dataset(&a).unwrap();
    let mut bad = 0usize;
    for (i, s) in ds.samples.iter().enumerate() {
        let ok = s.gray == digits[i].0
            && &s.color_image[..] == oracle_colorize(s.gray.pixels(), s.color.channels()).as_slice();
        bad += usize::from(!ok);
    }
    outcome(
        a == b && bad == 0 && count == 60_000,
        format!(
            "{count} samples from {source}, identical bytes: {}, oracle mismatches {bad}, one generation {:.2} s",
            a == b,
            once.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut failures = Vec::new();
    let mut worst = 0f64;
    for &op in OPS {
        let r = check_op(op);
        worst = worst.max(r.max_rel_err);
        if !r.passes(GRAD_TOL) {
            failures.push(op.name());
        }
    }
    for &term in TERMS {
        let r = check_term(term);
        worst = worst.max(r.max_rel_err);
        if !r.passes(GRAD_TOL) {
            failures.push(term.name().to_string());
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} ops + {} loss terms x {GRAD_INSTANCES} instances, worst rel err {worst:.2e}{}",
            OPS.len(),
            TERMS.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!(", failing: {failures:?}")
            }
        ),
    )
}

fn criterion_6() -> Outcome {
    let g = zero_style_gating(
        &ModelConfig {
            zero_style_gating: true,
            ..ModelConfig::default()
        },
        3,
    );
    outcome(
        g.perturbation_invariant && g.latent_invariant && g.latent_rejected && g.max_gated_grad == 0.0,
        format!(
            "bit-identical under E/F/demod-weight perturbation: {}, across latents: {}, latent rejected: {}, max gated |grad| {}, max demod-bias |grad| {:.2e}",
            g.perturbation_invariant, g.latent_invariant, g.latent_rejected, g.max_gated_grad, g.max_bias_grad
        ),
    )
}

fn criterion_7() -> Outcome {
    let hmu: Vec<f64> = (0..5).map(|s| unimodal_diversity(Mode::Hmu, s)).collect();
    let base: Vec<f64> = (0..5).map(|s| unimodal_diversity(Mode::Baseline, s)).collect();
    outcome(
        hmu.iter().all(|&d| d == 0.0) && base.iter().all(|&d| d != 0.0),
        format!(
            "HMU ds {hmu:?}; BASELINE ds {:?}",
            base.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_8(mnist: &Option<Vec<(cmnist::GrayImage, u8)>>) -> Outcome {
    let Some(mnist) = mnist else {
        return outcome(
            false,
            "not run: needs Colorized MNIST and MNIST was not found (set MNIST_DIR)",
        );
    };
    let data = cmnist::generate_dataset(mnist, 11, 2000, Split::Train).unwrap();
    let run = train_mappers(&data, 1000, 0.01, 8);
    outcome(
        run.round_trip_a < 0.01 && run.round_trip_b < 0.01,
        format!(
            "random mappers on Colorized MNIST, {} steps: round-trip L1 A {:.5}, B {:.5}",
            run.steps, run.round_trip_a, run.round_trip_b
        ),
    )
}

fn summary_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../results/protocol_summary.json")
}

fn load_summary() -> Result<ProtocolSummary, String> {
    let path = summary_path();
    let text =
        std::fs::read_to_string(&path).map_err(|_| "not run: results/protocol_summary.json missing".to_string())?;
    ProtocolSummary::from_json(&text).map_err(|e| e.to_string())
}

fn protocol_shape(s: &ProtocolSummary) -> Result<(), String> {
    if s.steps != 5000 || s.batch_size != 16 {
        return Err(format!(
            "protocol ran {} steps at batch {}, expected 5000 at 16",
            s.steps, s.batch_size
        ));
    }
    for mode in [Mode::Hmu, Mode::Baseline] {
        let n = s.runs_of(mode).count();
        if n < 3 {
            return Err(format!("{mode} has {n} runs, expected 3 seeds"));
        }
    }
    Ok(())
}

fn criterion_9(summary: &Result<ProtocolSummary, String>) -> Outcome {
    let s = match summary {
        Ok(s) => s,
        Err(e) => return outcome(false, e.clone()),
    };
    if let Err(e) = protocol_shape(s) {
        return outcome(false, e);
    }
    let (hmu, base) = (s.median_mse(Mode::Hmu), s.median_mse(Mode::Baseline));
    outcome(
        hmu <= 0.5 * base,
        format!(
            "median uni-modal MSE HMU {hmu:.5} vs BASELINE {base:.5} (ratio {:.3}), 3 seeds, 5k steps, batch 16",
            hmu / base
        ),
    )
}

fn criterion_10(summary: &Result<ProtocolSummary, String>) -> Outcome {
    let s = match summary {
        Ok(s) => s,
        Err(e) => return outcome(false, e.clone()),
    };
    if let Err(e) = protocol_shape(s) {
        return outcome(false, e);
    }
    if s.test_count != 10_000 {
        return outcome(
            false,
            format!("scored on {} test samples, expected 10000", s.test_count),
        );
    }
    let runs: Vec<_> = s.runs_of(Mode::Hmu).collect();
    let ok = runs
        .iter()
        .all(|r| r.last.n_bins == 8 && r.last.recall_avg >= 0.3 && r.last.unique_color_count >= 500);
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: recall {:.4}, unique {}",
                r.seed, r.last.recall_avg, r.last.unique_color_count
            )
        })
        .collect();
    outcome(ok, format!("HMU n=8 on 10k test: {}", per_seed.join("; ")))
}

fn criterion_11(data: &PairedDataset) -> Outcome {
    let mut ok = true;
    for mode in [Mode::Hmu, Mode::Baseline, Mode::Hms] {
        let (a, b) = resume_pair(mode, data, 5, 15);
        ok &= a == b;
    }
    outcome(
        ok,
        "HMU, BASELINE, HMS: checkpoint after 5 + resumed 10 steps equals 15 uninterrupted steps byte for byte",
    )
}

fn trainer_example(summary: &Result<ProtocolSummary, String>) -> Outcome {
    let s = match summary {
        Ok(s) => s,
        Err(e) => return outcome(false, e.clone()),
    };
    let runs: Vec<_> = s.runs_of(Mode::Hmu).collect();
    let ok = !runs.is_empty()
        && runs
            .iter()
            .all(|r| matches!((r.early.mse, r.last.mse), (Some(e), Some(l)) if l < e));
    let detail: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: {:.5} -> {:.5}",
                r.seed,
                r.early.mse.unwrap_or(f64::NAN),
                r.mse()
            )
        })
        .collect();
    outcome(ok, format!("HMU uni-modal MSE step 100 -> 5k: {}", detail.join("; ")))
}

#[test]
fn acceptance() {
    let mnist = mnist_train();
    let small = match &mnist {
        Some(m) => cmnist::generate_dataset(m, 11, 200, Split::Train).unwrap(),
        None => synthetic_dataset(200, 11),
    };
    let summary = load_summary();
    let secs = |s: u64| Some(Duration::from_secs(s));

    let results: Vec<(u32, &str, bool, (Outcome, Duration))> = vec![
        (1, "metric oracle equivalence", true, timed(secs(10), criterion_1)),
        (
            2,
            "self-recall and duplicate invariance",
            true,
            timed(None, criterion_2),
        ),
        (3, "uniform vs single-bin recall is 1/n", true, timed(None, criterion_3)),
        (
            4,
            "byte-stable 60k generation",
            true,
            timed(secs(30), || criterion_4(&mnist)),
        ),
        (
            5,
            "finite-difference gradient checks",
            true,
            timed(secs(120), criterion_5),
        ),
        (6, "zero-style gating", true, timed(secs(60), criterion_6)),
        (7, "diversity on uni-modal targets", true, timed(None, criterion_7)),
        (
            8,
            "channel mapper round trips",
            mnist.is_some(),
            timed(secs(60), || criterion_8(&mnist)),
        ),
        (
            9,
            "HMU vs BASELINE uni-modal MSE",
            false,
            timed(None, || criterion_9(&summary)),
        ),
        (10, "HMU color diversity", false, timed(None, || criterion_10(&summary))),
        (11, "bitwise resume", true, timed(None, || criterion_11(&small))),
    ];

    let mut failed = Vec::new();
    for (n, title, required, (o, elapsed)) in &results {
        println!(
            "criterion {n:>2}: {} - {title}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
        if *required && !o.pass {
            failed.push(*n);
        }
    }
    let example = trainer_example(&summary);
    println!(
        "trainer example: {} - {}",
        if example.pass { "PASS" } else { "FAIL" },
        example.detail
    );
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
