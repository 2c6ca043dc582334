//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! Run with `cargo test -p entangle-cli --test acceptance`.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entangle_core::audit::{run_audit, Level};
use entangle_core::bei::{bei_pair, compute_bei, signflip_pvalue, AuditConfig, PairContribution, TestMode};
use entangle_core::bias::{bias_report, PairScores};
use entangle_core::cig::{cig_pair, distractor_profiles, null_collision_prob, CollisionEvent, DistractorProfile};
use entangle_core::difficulty::{compute_difficulty, compute_residuals, fit_calibration, FitConfig};
use entangle_core::ensemble::{
    compare_strategies, competence, verifier_weights, EnsembleInputs, Hyperparams, Strategy,
};
use entangle_core::pairs::{unordered_pairs, Alternative};
use entangle_core::synthgen::{generate_judgments, generate_responses, split_by_task_parity, Preset, SynthConfig};

const ALPHA: f64 = 0.05;

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn audit_cfg(seed: u64) -> AuditConfig {
    AuditConfig {
        seed,
        ..AuditConfig::default()
    }
}

fn within_budget(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed < Duration::from_secs(limit_secs)
}

/// Enumerate all 2^T sign vectors by bitmask; ties count as at least as extreme.
fn brute_force_p(xi: &[f64]) -> f64 {
    let observed: f64 = xi.iter().sum();
    let tol = 1e-10 * xi.iter().map(|x| x.abs()).sum::<f64>();
    let total = 1u64 << xi.len();
    let hits = (0..total)
        .filter(|mask| {
            let s: f64 = xi
                .iter()
                .enumerate()
                .map(|(k, &x)| if mask >> k & 1 == 1 { -x } else { x })
                .sum();
            s >= observed - tol
        })
        .count();
    hits as f64 / total as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let b = 100_000u64;
    let mut gen = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut agree = 0;
    for case in 0..50u64 {
        let t = gen.random_range(1..=12usize);
        let ri: Vec<f64> = (0..t).map(|_| gen.random_range(-1.0..1.0)).collect();
        let rj: Vec<f64> = (0..t).map(|_| gen.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..t).map(|_| gen.random::<f64>()).collect();
        let contrib = PairContribution::new(&ri, &rj, &a).unwrap();
        let exact = brute_force_p(&contrib.values);
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let mc = signflip_pvalue(&contrib, b, TestMode::MonteCarlo, Alternative::Greater, &mut rng)
            .unwrap()
            .p_value;
        let tol = 3.0 * (exact * (1.0 - exact) / b as f64).sqrt();
        let gap = (mc - exact).abs();
        worst = worst.max(if tol > 0.0 { gap / tol } else { gap });
        agree += usize::from(gap <= tol);
    }
    let elapsed = start.elapsed();
    check(
        agree == 50 && within_budget(elapsed, 30),
        format!("{agree}/50 cases within 3 sd (worst gap {worst:.2} sd), {elapsed:.1?}"),
    )
}

fn criterion_2() -> Outcome {
    let bei = compute_bei(&[0.5, -0.5], &[0.5, 0.5], &[1.0, 0.5]).unwrap();
    let event = CollisionEvent::new(0, "t".into(), true, 0.5);
    let profile = DistractorProfile::from_selections(&[1, 1, 2]);
    let c = null_collision_prob(&profile, 2).unwrap();
    let ok = (bei - 0.0625).abs() <= 1e-12
        && (event.contribution - 0.346574).abs() <= 1e-6
        && (event.contribution - 0.5 * 2f64.ln()).abs() <= 1e-9
        && (c - 5.0 / 9.0).abs() <= 1e-12;
    check(
        ok,
        format!("BEI {bei}, CIG event {:.9}, c_null {c:.15}", event.contribution),
    )
}

fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(|a, b| a.total_cmp(b));
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

fn false_positive_rate(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x < ALPHA).count() as f64 / p.len() as f64
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let (mut bei_p, mut cig_p) = (Vec::new(), Vec::new());
    for seed in 0..14 {
        let (ds, _) = generate_responses(&Preset::Null.config(seed)).unwrap();
        let out = run_audit(&ds, Level::Both, &audit_cfg(seed), &FitConfig::default()).unwrap();
        bei_p.extend(out.bei.as_ref().unwrap().iter().map(|s| s.p_raw));
        cig_p.extend(out.cig_stats().unwrap().iter().map(|s| s.p_raw));
    }
    let elapsed = start.elapsed();
    let (fb, fc) = (false_positive_rate(&bei_p), false_positive_rate(&cig_p));
    let (kb, kc) = (ks_uniform(bei_p.clone()), ks_uniform(cig_p.clone()));
    let in_band = |f: f64| (0.02..=0.09).contains(&f);
    check(
        in_band(fb) && in_band(fc) && kb < 0.08 && kc < 0.08 && within_budget(elapsed, 60),
        format!(
            "{} tests; BEI FPR {fb:.3} KS {kb:.3}; CIG FPR {fc:.3} KS {kc:.3}; {elapsed:.1?}",
            bei_p.len()
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (mut bei_hits, mut cig_hits) = (0, 0);
    for seed in 0..100 {
        let cfg = audit_cfg(seed);
        let (ds, _) = generate_responses(&Preset::BeiPair.config(seed)).unwrap();
        let profile = compute_difficulty(&ds);
        let cal = fit_calibration(&ds, &profile, &FitConfig::default()).unwrap();
        let residuals = compute_residuals(&ds, &cal, &profile).unwrap();
        let (_, test, _) = bei_pair(&residuals, &profile, 0, 1, &cfg).unwrap();
        bei_hits += usize::from(test.p_value < ALPHA);

        let (ds, _) = generate_responses(&Preset::CigPair.config(seed)).unwrap();
        let (stat, _) = cig_pair(&ds, &distractor_profiles(&ds), 0, 1, &cfg).unwrap();
        cig_hits += usize::from(stat.p_raw < ALPHA);
    }
    let elapsed = start.elapsed();
    check(
        bei_hits >= 90 && cig_hits >= 90 && within_budget(elapsed, 120),
        format!("BEI {bei_hits}/100, CIG {cig_hits}/100 planted pairs at p < 0.05; {elapsed:.1?}"),
    )
}

fn criterion_5() -> Outcome {
    let mut hits = 0;
    for seed in 0..100 {
        let (ds, _) = generate_responses(&Preset::Level1Only.config(seed)).unwrap();
        let (stat, _) = cig_pair(&ds, &distractor_profiles(&ds), 0, 1, &audit_cfg(seed)).unwrap();
        hits += usize::from(stat.p_raw < ALPHA);
    }
    let rate = hits as f64 / 100.0;
    check(
        rate <= 0.09,
        format!("CIG fires on {hits}/100 co-failure-only pairs (rate {rate:.2})"),
    )
}

fn criterion_6() -> Outcome {
    let fit = FitConfig::default();
    let mut min_auc: f64 = 1.0;
    for seed in 0..20 {
        let (ds, _) = generate_responses(&SynthConfig::new(6, 500, 4, seed)).unwrap();
        let profile = compute_difficulty(&ds);
        let cal = fit_calibration(&ds, &profile, &fit).unwrap();
        for f in &cal.fits {
            min_auc = min_auc.min(f.auc.unwrap_or(0.0));
        }
    }
    let coins = [18, 19];
    let mut total = 0.0;
    let mut inside = 0;
    for seed in 0..100 {
        let mut cfg = SynthConfig::new(20, 500, 4, seed);
        let (mut alpha, mut beta) = (cfg.alphas(), cfg.betas());
        for &c in &coins {
            alpha[c] = 0.0;
            beta[c] = 0.0;
        }
        cfg.alpha = alpha;
        cfg.beta = beta;
        let (ds, _) = generate_responses(&cfg).unwrap();
        let profile = compute_difficulty(&ds);
        let cal = fit_calibration(&ds, &profile, &fit).unwrap();
        for &c in &coins {
            let auc = cal.fits[c].auc.unwrap();
            total += auc;
            inside += usize::from((auc - 0.5).abs() <= 0.1);
        }
    }
    let mean = total / 200.0;
    check(
        min_auc >= 0.8 && (mean - 0.5).abs() <= 0.1,
        format!(
            "min monotone AUC {min_auc:.3}; coin-flip mean AUC {mean:.3} ({inside}/200 fits inside 0.5 +/- 0.1)"
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut hits = 0;
    let mut rhos = Vec::new();
    for seed in 0..100 {
        let cfg = Preset::JudgePanel.config(seed);
        let (ds, _) = generate_responses(&cfg).unwrap();
        let js = generate_judgments(&cfg, &ds).unwrap();
        let profile = compute_difficulty(&ds);
        let cal = fit_calibration(&ds, &profile, &FitConfig::default()).unwrap();
        let residuals = compute_residuals(&ds, &cal, &profile).unwrap();
        let bei: PairScores = unordered_pairs(ds.n_models())
            .into_iter()
            .map(|(i, j)| {
                let score = compute_bei(residuals.model(i), residuals.model(j), &profile.easiness).unwrap();
                (ds.models()[i].as_str(), ds.models()[j].as_str(), score)
            })
            .collect();
        let report = bias_report(&js, &bei, &PairScores::default(), false);
        let row = report
            .correlations
            .iter()
            .find(|c| c.judge == "m00" && c.metric == "bei")
            .expect("judge row");
        if let Some(a) = &row.association {
            rhos.push(a.rho);
            hits += usize::from(a.rho > 0.5 && a.p_value < ALPHA);
        }
    }
    rhos.sort_by(|a, b| a.total_cmp(b));
    let median = rhos.get(rhos.len() / 2).copied().unwrap_or(f64::NAN);
    check(
        hits >= 80,
        format!("{hits}/100 seeds with rho > 0.5 and p < 0.05 (median rho {median:.3})"),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut acc = [0.0; 3];
    for seed in 0..50 {
        let cfg = Preset::VerifierClique.config(seed);
        let (ds, _) = generate_responses(&cfg).unwrap();
        let js = generate_judgments(&cfg, &ds).unwrap();
        let (calibration, evaluation) = split_by_task_parity(&js, &ds);
        let out = run_audit(&ds, Level::Both, &audit_cfg(seed), &FitConfig::default()).unwrap();
        let bei = out.bei.clone().unwrap();
        let cig = out.cig_stats().unwrap();
        let verifiers = evaluation.judges();
        let q = competence(&calibration, &verifiers).unwrap();
        let targets = evaluation.models();
        let inputs = EnsembleInputs {
            bei: &bei,
            cig: &cig,
            alpha: ALPHA,
            significant_only: true,
            verifiers: &verifiers,
            competence: &q,
            targets: &targets,
        };
        let cmp = compare_strategies(&evaluation, &inputs, &Hyperparams::default()).unwrap();
        for o in &cmp.outcomes {
            let k = Strategy::ALL.iter().position(|s| *s == o.strategy).unwrap();
            acc[k] += o.metrics.accuracy / 50.0;
        }
    }
    let elapsed = start.elapsed();
    let [majority, accuracy, entangle] = acc;
    check(
        entangle >= accuracy && accuracy >= majority && entangle - majority >= 0.02 && within_budget(elapsed, 60),
        format!(
            "mean acc majority {majority:.4}, accuracy_reweight {accuracy:.4}, entangle_reweight {entangle:.4} (gain {:+.4}); {elapsed:.1?}",
            entangle - majority
        ),
    )
}

fn run_cli(args: &[&str], threads: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_entangle"))
        .args(args)
        .env("ENTANGLE_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn criterion_9() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let d = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    run_cli(&["synth", "--preset", "verifier-clique", "--seed", "11", "--out-dir", &d("")], "1");
    let responses = d("responses.jsonl");
    let report = d("report.json");
    let audit = |format: &str, threads: &str| {
        run_cli(
            &["audit", "--responses", &responses, "--seed", "11", "--replicates", "2000", "--format", format],
            threads,
        )
    };
    let mut identical = 0;
    let mut total = 0;
    let mut compare = |a: Vec<u8>, b: Vec<u8>| {
        total += 1;
        identical += usize::from(a == b);
    };
    for format in ["json", "md", "csv"] {
        compare(audit(format, "1"), audit(format, "8"));
        compare(audit(format, "8"), audit(format, "8"));
    }
    fs::write(&report, audit("json", "8")).unwrap();
    let bias = |threads| run_cli(&["bias", "--judgments", &d("judgments.jsonl"), "--report", &report, "--format", "json"], threads);
    compare(bias("1"), bias("8"));
    let ensemble = |threads| {
        run_cli(
            &["ensemble", "--judgments", &d("evaluation.jsonl"), "--calibration", &d("calibration.jsonl"), "--report", &report, "--format", "json"],
            threads,
        )
    };
    compare(ensemble("1"), ensemble("8"));
    let other = tempfile::TempDir::new().unwrap();
    run_cli(&["synth", "--preset", "verifier-clique", "--seed", "11", "--out-dir", other.path().to_str().unwrap()], "8");
    for f in ["responses.jsonl", "judgments.jsonl", "truth.json"] {
        compare(fs::read(d(f)).unwrap(), fs::read(other.path().join(f)).unwrap());
    }
    check(
        identical == total,
        format!("{identical}/{total} output pairs byte-identical across reruns and 1 vs 8 threads"),
    )
}

fn criterion_10() -> Outcome {
    let mut gen = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_prop, mut worst_sum): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = gen.random_range(1..=16usize);
        let q: Vec<f64> = (0..n).map(|_| gen.random_range(1e-3..=1.0)).collect();
        let din: Vec<f64> = (0..n).map(|_| gen.random::<f64>()).collect();
        let dtar: Vec<f64> = (0..n).map(|_| gen.random::<f64>()).collect();
        let w = verifier_weights(&q, &din, &dtar, 1.0, 0.0, 0.0);
        let total: f64 = q.iter().sum();
        for (wi, qi) in w.iter().zip(&q) {
            worst_prop = worst_prop.max((wi - qi / total).abs());
        }
        let (kappa, eta1, eta2) = (
            gen.random_range(0.1..4.0),
            gen.random_range(0.0..4.0),
            gen.random_range(0.0..4.0),
        );
        let w = verifier_weights(&q, &din, &dtar, kappa, eta1, eta2);
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    check(
        worst_prop <= 1e-12 && worst_sum <= 1e-12,
        format!("max |w - q/sum q| {worst_prop:.2e}, max |sum w - 1| {worst_sum:.2e} over 1000 pools"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exact-oracle equivalence", criterion_1),
        ("hand values", criterion_2),
        ("null calibration", criterion_3),
        ("power", criterion_4),
        ("level separation", criterion_5),
        ("calibration sanity", criterion_6),
        ("bias association", criterion_7),
        ("ensemble gain", criterion_8),
        ("determinism", criterion_9),
        ("softmax identities", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        failed += usize::from(!outcome.passed);
        println!(
            "{} criterion {} ({name}): {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            k + 1,
            outcome.detail
        );
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
