//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the table is always printed; exits non-zero if any fails.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use facelock::attacks::*;
use facelock::backends::{make_toy_bundle, BackendBundle, FaceMask};
use facelock::harness::*;
use facelock::metrics::{self, Metric, MetricDirection};
use facelock::purification::PurifySpec;
use facelock::synthetic::{noise, portrait};
use facelock::{ImageTensor, RngState};
use rand::Rng;

mod common;
use common::naive_ssim;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn bundle() -> BackendBundle {
    make_toy_bundle(0, 32).unwrap()
}

/// Smooth random image: a few random sinusoids per channel.
fn random_image(seed: u64) -> ImageTensor {
    let mut r = RngState::new(seed, "acceptance/image").rng();
    let p: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut data = Vec::with_capacity(32 * 32 * 3);
    for y in 0..32 {
        for x in 0..32 {
            for c in 0..3 {
                let (fy, fx) = (y as f64 / 32.0, x as f64 / 32.0);
                let v = 0.5 + 0.3 * (6.0 * p[c] * fy + 5.0 * p[c + 3] * fx + 3.0 * p[c + 6]).sin()
                    + 0.15 * (9.0 * p[c + 9] * fx * fy).cos();
                data.push(v);
            }
        }
    }
    ImageTensor::clamped(32, 32, data).unwrap()
}

fn probe(i: u64) -> ImageTensor {
    match i % 3 {
        0 => portrait(32, 32, 100 + i),
        1 => random_image(i),
        _ => noise(32, 32, 200 + i),
    }
}

/// Endpoint comparison of the reported objective. The EOT objective is an
/// expectation over random rotations, so both endpoints are scored on the same
/// 32 transform draws instead of the single draw each trace entry used.
fn improved(b: &BackendBundle, x: &ImageTensor, m: AttackMethod, r: &ProtectionResult) -> bool {
    let (first, last) = if m == AttackMethod::EotEncoder {
        let cfg = AttackConfig::default();
        let t = &cfg.eot_transforms;
        let start = protect(b, m, x, &AttackConfig { steps: 0, ..cfg.clone() }).unwrap().protected;
        let draws = RngState::new(0, "acceptance/eot");
        (
            eot_expected_objective(b, x, &start, &cfg, t, 32, &draws).unwrap(),
            eot_expected_objective(b, x, &r.protected, &cfg, t, 32, &draws).unwrap(),
        )
    } else {
        (r.initial_losses().objective, r.final_losses.objective)
    };
    // FaceLock must also improve on the recognizer and feature terms alone.
    let core_terms = |s: &StepLosses| s.term(LossName::Fr).unwrap_or(0.0) + s.term(LossName::Fe).unwrap_or(0.0);
    let facelock_core = m != AttackMethod::Facelock || core_terms(&r.final_losses) >= core_terms(r.initial_losses());
    facelock_core
        && match m.direction() {
            Direction::Ascend => last >= first,
            Direction::Descend => last <= first,
        }
}

fn budget_suite(b: &BackendBundle) -> (Outcome, Vec<(AttackMethod, ProtectionResult)>) {
    let cfg = AttackConfig::default();
    let start = Instant::now();
    let mut runs = Vec::new();
    let mut bad = Vec::new();
    for i in 0..3 {
        let x = probe(i);
        for m in AttackMethod::ALL {
            let r = protect(b, m, &x, &cfg).unwrap();
            let in_range = r.protected.data().iter().all(|v| (0.0..=1.0).contains(v));
            if r.linf() > cfg.epsilon || !in_range {
                bad.push(format!("{m}@{i}: linf {}", r.linf()));
            }
            runs.push((m, r));
        }
    }
    let elapsed = start.elapsed();
    let pass = bad.is_empty() && elapsed < Duration::from_secs(120);
    let detail = format!("27 runs, max linf {:.6}, {:.1}s {}", runs.iter().map(|(_, r)| r.linf()).fold(0.0, f64::max), elapsed.as_secs_f64(), bad.join("; "));
    (
        Outcome {
            id: 1,
            name: "budget invariant, 9 attacks x 3 images, < 2 min",
            pass,
            detail,
        },
        runs,
    )
}

fn reductions(b: &BackendBundle) -> Outcome {
    let x = probe(0);
    let cfg = AttackConfig::default();
    // Same iterates, same objective at every step, same value for every term
    // both runs report. cvl_dp additionally reports its (zero) pixel term.
    let same = |a: &ProtectionResult, c: &ProtectionResult| {
        let steps = a.loss_trace.iter().chain([&a.final_losses]).zip(c.loss_trace.iter().chain([&c.final_losses]));
        a.protected == c.protected
            && a.perturbation.delta == c.perturbation.delta
            && a.loss_trace.len() == c.loss_trace.len()
            && steps.into_iter().all(|(p, q)| {
                p.objective == q.objective
                    && p.terms.iter().all(|(k, v)| q.terms.get(k).is_none_or(|w| w == v) || (*v == 0.0 && !q.terms.contains_key(k)))
            })
    };
    let fr_only = AttackConfig {
        loss_toggles: LossToggles::FR_ONLY,
        lambda_latent: 0.0,
        ..cfg.clone()
    };
    let cvl_d = cvl_d_attack(b, &x, &cfg).unwrap();
    let one = same(&cvl_d, &facelock_protect(b, &x, &fr_only).unwrap());

    let no_penalty = AttackConfig {
        eot_beta: 0.0,
        ..cfg.clone()
    };
    let eot = eot_encoder_attack(b, &x, &no_penalty, &[EotTransform::Identity]).unwrap();
    let two = same(&eot, &encoder_attack_untargeted(b, &x, &cfg).unwrap());

    let dp = cvl_dp_attack_with_mask(b, &x, &cfg, &FaceMask::zeros(32, 32)).unwrap();
    let three = same(&dp, &cvl_d) && dp.loss_trace.iter().all(|s| s.term(LossName::Pixel) == Some(0.0));
    Outcome {
        id: 2,
        name: "reduction identities bit-exact",
        pass: one && two && three,
        detail: format!("cvl_d=facelock(fr only): {one}, eot(identity, beta=0)=untargeted: {two}, cvl_dp(zero mask)=cvl_d: {three}"),
    }
}

fn gradient_oracle(b: &BackendBundle) -> Outcome {
    let x = probe(0);
    let cfg = AttackConfig::default();
    let xp = facelock_protect(b, &x, &AttackConfig { steps: 7, ..cfg.clone() }).unwrap().protected;
    let (_, grad) = facelock_objective(b, &x, &xp, &cfg).unwrap();
    let mut r = RngState::new(11, "acceptance/pixels").rng();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let idx = r.random_range(0..xp.len());
        let at = |d: f64| {
            let mut data = xp.data().to_vec();
            data[idx] += d;
            facelock_objective(b, &x, &ImageTensor::new(32, 32, data).unwrap(), &cfg).unwrap().0.objective
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max((fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-12));
    }
    Outcome {
        id: 3,
        name: "facelock gradient vs central differences (h=1e-4)",
        pass: worst < 1e-3,
        detail: format!("worst relative error {worst:.2e} over 5 pixels"),
    }
}

fn endpoint_improvement(b: &BackendBundle, first_three: &[(AttackMethod, ProtectionResult)]) -> Outcome {
    let cfg = AttackConfig::default();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(7);
    let probes: Vec<u64> = (3..10).collect();
    let mut failures: Vec<String> = first_three
        .iter()
        .enumerate()
        .filter(|(i, (m, r))| !improved(b, &probe(*i as u64 / 9), *m, r))
        .map(|(i, (m, _))| format!("{m}@{}", i / 9))
        .collect();
    let chunks: Vec<Vec<u64>> = (0..workers).map(|w| probes.iter().copied().skip(w).step_by(workers).collect()).collect();
    let more: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                let cfg = &cfg;
                s.spawn(move || {
                    let mut f = Vec::new();
                    for &i in chunk {
                        let x = probe(i);
                        for m in AttackMethod::ALL {
                            if !improved(b, &x, m, &protect(b, m, &x, cfg).unwrap()) {
                                f.push(format!("{m}@{i}"));
                            }
                        }
                    }
                    f
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    failures.extend(more);
    let probes_passed = (0..10u64)
        .filter(|i| !failures.iter().any(|f| f.ends_with(&format!("@{i}"))))
        .count();
    Outcome {
        id: 4,
        name: "objective endpoint improvement at defaults",
        pass: failures.is_empty(),
        detail: format!("{probes_passed}/10 probes pass all 9 attacks {}", failures.join(" ")),
    }
}

fn metric_identities(b: &BackendBundle) -> Outcome {
    let mut worst = [0.0f64; 4];
    let mut psnr_ok = true;
    for i in 0..20 {
        let x = probe(i);
        let p = metrics::psnr(&x, &x).unwrap();
        psnr_ok &= p.value == metrics::PSNR_CAP && p.fallback;
        worst[0] = worst[0].max((metrics::ssim(&x, &x).unwrap() - 1.0).abs());
        worst[1] = worst[1].max(metrics::lpips(b, &x, &x).unwrap().abs());
        worst[2] = worst[2].max((metrics::clip_i(b, &x, &x).unwrap() - 1.0).abs());
        worst[3] = worst[3].max((metrics::fr_score(b, &x, &x).unwrap() - 1.0).abs());
    }
    let mut ssim_gap: f64 = 0.0;
    for i in 0..10 {
        let (a, c) = (probe(i), probe(i + 37));
        ssim_gap = ssim_gap.max((metrics::ssim(&a, &c).unwrap() - naive_ssim(&a, &c)).abs());
    }
    let pass = psnr_ok && worst[0] <= 1e-6 && worst[1] == 0.0 && worst[2] <= 1e-5 && worst[3] <= 1e-5 && ssim_gap <= 1e-4;
    Outcome {
        id: 5,
        name: "metric self-identities and SSIM reference",
        pass,
        detail: format!(
            "psnr capped: {psnr_ok}; |ssim-1| {:.1e}, lpips {:.1e}, |clip_i-1| {:.1e}, |fr-1| {:.1e}; ssim vs reference {ssim_gap:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    }
}

fn cw_reparam(b: &BackendBundle) -> Outcome {
    let cfg = AttackConfig::default();
    let mut pass = true;
    let mut steps_seen = 0;
    for i in 0..3 {
        let mut iterates: Vec<Vec<f64>> = Vec::new();
        let r = cw_l2_attack_observed(b, &probe(i), &cfg, |xp| iterates.push(xp.to_vec())).unwrap();
        steps_seen += iterates.len();
        pass &= iterates[0].iter().all(|v| *v == 0.5);
        pass &= iterates.iter().flatten().all(|v| *v > 0.0 && *v < 1.0);
        pass &= r.linf() <= cfg.epsilon;
    }
    Outcome {
        id: 6,
        name: "CW reparametrisation",
        pass,
        detail: format!("{steps_seen} iterates over 3 images"),
    }
}

fn plan(methods: &[AttackMethod]) -> ExperimentPlan {
    let images = (0..2).map(|i| (format!("img{i}"), portrait(32, 32, 300 + i))).collect();
    let prompts = PromptCatalog::default().select(&["facial_04".into(), "accessory_05".into()]).unwrap();
    let mut p = ExperimentPlan::new(images, prompts, methods.to_vec());
    p.seeds = vec![0, 1];
    p
}

fn zero_budget(b: &BackendBundle) -> Outcome {
    let (_, records) = budget_sweep(b, &plan(&[AttackMethod::Facelock]), &[0.0]).unwrap();
    let baseline: HashMap<(String, String, u64), f64> = records
        .iter()
        .filter(|r| r.is_baseline())
        .map(|r| ((r.image_id.clone(), r.prompt_id.clone(), r.seed), r.metric(Metric::Fr).unwrap()))
        .collect();
    let defended: Vec<_> = records.iter().filter(|r| !r.is_baseline()).collect();
    let worst = defended
        .iter()
        .map(|r| (r.metric(Metric::Fr).unwrap() - baseline[&(r.image_id.clone(), r.prompt_id.clone(), r.seed)]).abs())
        .fold(0.0, f64::max);
    Outcome {
        id: 7,
        name: "zero-budget sweep FR equals unprotected FR",
        pass: !defended.is_empty() && worst <= 1e-6,
        detail: format!("{} defense records, max |dFR| {worst:.1e}", defended.len()),
    }
}

fn determinism_and_schema(b: &BackendBundle) -> (Outcome, Outcome) {
    let mut p = plan(&[AttackMethod::Facelock, AttackMethod::Photoguard]);
    p.purifications = vec![PurifySpec::None, PurifySpec::Jpeg { quality: 75 }];
    let first = run_plan(b, &p).unwrap();
    p.jobs = 4;
    let second = run_plan(b, &p).unwrap();
    let (j1, j2) = (records_to_jsonl(&first), records_to_jsonl(&second));
    let report = Report::build(&first, Grouping::Method);
    let csv_same = report.to_csv() == Report::build(&second, Grouping::Method).to_csv();
    let det = Outcome {
        id: 8,
        name: "pipeline determinism, 2x2x2x2x{none,jpeg75}",
        pass: j1 == j2 && csv_same && first.len() == 48,
        detail: format!("{} records, jsonl identical: {}, csv identical: {csv_same}", first.len(), j1 == j2),
    };

    let arrows: Vec<(String, String)> = report.metrics.iter().map(|h| (h.name.clone(), h.arrow.clone())).collect();
    let expected: Vec<(String, String)> = ["clip_s", "psnr", "ssim", "lpips", "clip_sd", "clip_i", "fr"]
        .iter()
        .map(|n| (n.to_string(), if *n == "lpips" { "↑" } else { "↓" }.to_string()))
        .collect();
    let directions_ok = report.metrics.iter().all(|h| {
        (h.name == "lpips") == (h.direction == MetricDirection::HigherBetterForDefense)
    });
    let baseline_nulls = [Metric::Psnr, Metric::Ssim, Metric::Lpips]
        .iter()
        .all(|m| report.cell(&[NO_DEFENSE], *m).is_none());
    let csv_nulls = report.to_csv().lines().nth(1).is_some_and(|l| l.starts_with("no_defense,") && l.contains(",,,,,,"));
    let round_trip = Report::from_json(&report.to_json()).is_ok_and(|r| r == report);
    let schema = Outcome {
        id: 9,
        name: "report schema: seven metrics, arrows, baseline nulls",
        pass: arrows == expected && directions_ok && baseline_nulls && csv_nulls && round_trip,
        detail: format!(
            "{} metrics, arrows ok: {}, baseline nulls: {baseline_nulls}/{csv_nulls}, json round-trip: {round_trip}",
            arrows.len(),
            arrows == expected && directions_ok
        ),
    };
    (det, schema)
}

fn main() {
    let b = bundle();
    let (c1, runs) = budget_suite(&b);
    let mut outcomes = vec![c1, reductions(&b), gradient_oracle(&b), endpoint_improvement(&b, &runs)];
    outcomes.push(metric_identities(&b));
    outcomes.push(cw_reparam(&b));
    outcomes.push(zero_budget(&b));
    let (c8, c9) = determinism_and_schema(&b);
    outcomes.extend([c8, c9]);

    println!();
    for o in &outcomes {
        println!("[{}] {:>2}. {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail.trim());
    }
    println!("[SKIP] 10. full-scale recipe with real backends (documented, not run)");
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
