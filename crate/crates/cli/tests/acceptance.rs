//! Acceptance checks for the readout model, one line per criterion.
//!
//! Tolerances are fixed here. A criterion the model cannot meet is reported
//! as `FAIL (documented)` with the reason and does not abort the run; any
//! other failure exits non-zero.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use tweezer_readout::atomic::{DLineConstants, TransitionTable};
use tweezer_readout::counts::{
    count_distribution_vec, error_report, optimal_threshold, r_from_eps_bright, ChannelRates,
    DetectionParams, ErrorReport, Prepared,
};
use tweezer_readout::depump::{
    probe_depump_rate, raman_depump_probability, raman_terms, trap_depump_rate,
};
use tweezer_readout::inference::{fit_depump, wilson_interval, CountHistogram, FitOptions, Z_95};
use tweezer_readout::montecarlo::{
    detection_loss, run_summary, sample_change_model, wait_time_histogram, AdaptiveProtocol,
    BatchSummary,
};
use tweezer_readout::presets;
use tweezer_readout::scenario::ScenarioConfig;

#[derive(PartialEq)]
enum Verdict {
    Pass,
    Fail,
    /// Fails only for known, recorded reasons.
    Documented(Vec<&'static str>),
}

struct Outcome {
    verdict: Verdict,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            verdict: Verdict::Pass,
            details: Vec::new(),
        }
    }

    /// Record a sub-check; a hard failure wins over a documented one.
    fn check(&mut self, ok: bool, detail: String) {
        self.details
            .push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
        if !ok {
            self.verdict = Verdict::Fail;
        }
    }

    fn check_documented(&mut self, ok: bool, detail: String, reason: &'static str) {
        self.details
            .push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
        if ok {
            return;
        }
        match &mut self.verdict {
            Verdict::Pass => self.verdict = Verdict::Documented(vec![reason]),
            Verdict::Documented(reasons) if !reasons.contains(&reason) => reasons.push(reason),
            _ => {}
        }
    }

    fn info(&mut self, detail: String) {
        self.details.push(format!("     {detail}"));
    }
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let constants = DLineConstants::cesium_default();
    let table = TransitionTable::cesium();
    let trap = presets::trap_sigma();
    let terms = raman_terms(&trap, &constants, &table).unwrap();
    let total = raman_depump_probability(&trap, &constants, &table).unwrap();
    let r_sigma = ScenarioConfig::preset("paper-sigma")
        .unwrap()
        .budget()
        .unwrap()
        .r_raman;
    for (name, got, want) in [
        ("population ratio (4,3)", terms[0].population_ratio, 5.6e-6),
        ("per-scatter depump (4,3)", terms[0].depump_prob, 2.3e-6),
        ("per-scatter depump (3,3)", terms[1].depump_prob, 3.6e-6),
        ("per-scatter depump total", total, 6e-6),
        ("normalized Raman rate", r_sigma, 1.6e-3),
    ] {
        o.check(
            rel(got, want) <= 0.2,
            format!("{name} {got:.3e} vs {want:.1e} (20%)"),
        );
    }
    o
}

fn criterion_2() -> Outcome {
    let mut o = Outcome::new();
    let rate = trap_depump_rate(11.9e6).unwrap();
    let t1 = 1.0 / rate;
    o.check(
        (t1 - 0.34).abs() <= 0.01,
        format!("T1 {t1:.4} s vs 0.34(1) s"),
    );
    let r_trap = rate / presets::BRIGHT_RATE;
    // Printed to two figures.
    o.check(
        (r_trap - 1.5e-4).abs() < 0.05e-4,
        format!("normalized trap rate {r_trap:.4e} vs 1.5e-4"),
    );
    o
}

fn criterion_3() -> Outcome {
    let mut o = Outcome::new();
    let constants = DLineConstants::cesium_default();
    let probe = ScenarioConfig::preset("paper-pi").unwrap().probe;
    o.check(
        (probe.pol_fraction_sigma_minus - 0.1).abs() < 1e-12
            && (probe.pol_fraction_pi - 0.1).abs() < 1e-12,
        format!(
            "impurity fractions {} / {}",
            probe.pol_fraction_sigma_minus, probe.pol_fraction_pi
        ),
    );
    let rate =
        probe_depump_rate(&probe, TransitionTable::cesium().rows(), constants.gamma).unwrap();
    o.check(rate <= 5.0, format!("probe depump rate {rate:.3} 1/s <= 5"));
    let r = rate / presets::BRIGHT_RATE;
    o.check(r <= 2e-4, format!("normalized probe rate {r:.3e} <= 2e-4"));
    o
}

/// Photon-by-photon sampler: exponential waits between photons and the state
/// change, racing each other until the window closes.
fn event_level_histogram(rates: &ChannelRates, t_d: f64, n: u64, seed: u64) -> Vec<u64> {
    const CHUNK: u64 = 100_000;
    (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ c.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut h = vec![0u64; 64];
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let (mut t, mut changed, mut count) = (0.0, false, 0usize);
                loop {
                    let photon = if changed { rates.r_np } else { rates.r_p };
                    let change = if changed { 0.0 } else { rates.r_dep };
                    let total = photon + change;
                    if total == 0.0 {
                        break;
                    }
                    let wait: f64 = rng.sample(Exp1);
                    t += wait / total;
                    if t > t_d {
                        break;
                    }
                    if rng.random::<f64>() * total < change {
                        changed = true;
                    } else {
                        count += 1;
                    }
                }
                if count >= h.len() {
                    h.resize(count + 1, 0);
                }
                h[count] += 1;
            }
            h
        })
        .reduce(Vec::new, |mut a, b| {
            if a.len() < b.len() {
                a.resize(b.len(), 0);
            }
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        })
}

fn criterion_4() -> Outcome {
    let mut o = Outcome::new();
    const N: u64 = 10_000_000;
    let example = DetectionParams {
        t_d: 5e-4,
        r_bright: 2e4,
        r_background: 60.0,
        r_dep_bright: 25.0,
        r_dep_dark: 0.0,
        threshold: 2,
        ce: presets::COLLECTION_EFFICIENCY,
    };
    let final_params = presets::detection_paper_final();
    for (i, (name, params, prepared)) in [
        ("example bright", example, Prepared::Bright),
        ("final bright", final_params, Prepared::Bright),
        ("final dark", final_params, Prepared::Dark),
    ]
    .into_iter()
    .enumerate()
    {
        let hist = event_level_histogram(
            &params.rates(prepared),
            params.t_d,
            N,
            0xACCE_0000 + i as u64,
        );
        let model =
            count_distribution_vec(&params, prepared, hist.len().max(params.count_cutoff()))
                .unwrap();
        let (mut worst, mut bins) = (0.0f64, 0);
        for (n, &p) in model.iter().enumerate() {
            let expected = N as f64 * p;
            if expected < 10.0 {
                continue;
            }
            let observed = hist.get(n).copied().unwrap_or(0) as f64;
            let z = (observed - expected) / (expected * (1.0 - p)).sqrt();
            worst = worst.max(z.abs());
            bins += 1;
        }
        o.check(
            worst < 4.0,
            format!("{name}: {bins} bins, max |z| {worst:.2} < 4"),
        );
    }
    o
}

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    let params = presets::detection_paper_final();
    let (m, _) = optimal_threshold(&params, 1..=6).unwrap();
    o.check(m == 2, format!("optimal threshold {m}"));
    let brute = (1..=6u32)
        .map(|k| {
            (
                k,
                error_report(&params.with_threshold(k)).unwrap().infidelity,
            )
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .unwrap();
    o.check(
        brute.0 == m,
        format!(
            "exhaustive search over 1..=6 gives {} ({:.4e})",
            brute.0, brute.1
        ),
    );
    o
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let r =
        ErrorReport::from_errors(presets::MEASURED_EPS_BRIGHT, presets::MEASURED_EPS_DARK).unwrap();
    let pct = r.infidelity * 100.0;
    o.check(
        (pct - 0.1555).abs() < 1e-9 && format!("{pct:.2}") == "0.16",
        format!("infidelity {pct:.4}% (0.156% to three figures, prints {pct:.2}%)"),
    );
    let fid = r.fidelity * 100.0;
    o.check(
        format!("{fid:.2}") == "99.84",
        format!("fidelity {fid:.3}%"),
    );
    let rate = r_from_eps_bright(presets::MEASURED_EPS_BRIGHT, 2).unwrap();
    let formula = 1.0 - (1.0 - presets::MEASURED_EPS_BRIGHT).sqrt();
    o.check(
        rate == formula,
        format!("normalized rate from bright error {rate:.5e} = 1 - sqrt(1 - eps)"),
    );
    o.check_documented(
        (rate - 7.5e-4).abs() < 0.05e-4,
        format!("{rate:.3e} vs the printed 7.5e-4 (two figures)"),
        "1 - sqrt(1 - 0.00152) = 7.60e-4; 7.5e-4 corresponds to eps = 0.15%",
    );
    o.info(format!(
        "eps = 0.0015 gives {:.4e}",
        r_from_eps_bright(0.0015, 2).unwrap()
    ));
    o
}

fn summary(cfg: &ScenarioConfig, prepared: Prepared, n: u64, seed: u64) -> BatchSummary {
    run_summary(
        &cfg.detection,
        &cfg.protocol,
        &cfg.heating,
        prepared,
        n,
        seed,
    )
    .unwrap()
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    const N: u64 = 100_000;
    let adaptive_cfg = ScenarioConfig::preset("paper-final").unwrap();
    let mut fixed_cfg = adaptive_cfg.clone();
    let t_fixed = 9.23 / presets::BRIGHT_RATE;
    fixed_cfg.protocol = AdaptiveProtocol::fixed_time(t_fixed, t_fixed / 100.0, 2);
    fixed_cfg.detection.t_d = t_fixed;
    let fixed = summary(&fixed_cfg, Prepared::Bright, N, 7);
    let adaptive = summary(&adaptive_cfg, Prepared::Bright, N, 7);
    let mean_counts: f64 = fixed
        .count_histogram
        .iter()
        .enumerate()
        .map(|(n, &c)| n as f64 * c as f64)
        .sum::<f64>()
        / N as f64;
    o.info(format!(
        "fixed-time window {:.1} us, mean collected {mean_counts:.3}",
        t_fixed * 1e6
    ));
    o.check(
        rel(fixed.mean_scattered, 2500.0) <= 0.05,
        format!(
            "fixed-time scattered {:.1} vs 2500 (5%)",
            fixed.mean_scattered
        ),
    );
    let e_fixed = fixed.mean_energy_temp * 1e3;
    o.check(
        rel(e_fixed, 1.0) <= 0.1,
        format!("fixed-time energy {e_fixed:.3} mK vs 1.0 (10%)"),
    );
    o.check(
        rel(adaptive.mean_scattered, 540.0) <= 0.1,
        format!(
            "adaptive scattered {:.1} vs 540 (10%)",
            adaptive.mean_scattered
        ),
    );
    let e_adaptive = adaptive.mean_energy_temp * 1e3;
    let depth = adaptive_cfg.heating.trap_depth_temp * 1e3;
    o.check(
        e_adaptive < depth,
        format!("adaptive energy {e_adaptive:.3} mK < depth {depth:.3} mK"),
    );
    let ratio = adaptive.mean_scattered / fixed.mean_scattered;
    o.check(
        rel(ratio, 2.0 / 9.23) <= 0.3,
        format!("scattered ratio {ratio:.4} vs {:.4} (30%)", 2.0 / 9.23),
    );
    o
}

fn criterion_8() -> Outcome {
    let mut o = Outcome::new();
    let mut cfg = ScenarioConfig::preset("paper-final").unwrap();
    cfg.detection = presets::detection_depump_free();
    cfg.detection.t_d = cfg.protocol.max_total_time;
    let s = summary(&cfg, Prepared::Bright, 1_000_000, 8);
    let d = &cfg.detection;
    let lit = d.r_bright + d.r_background;
    let hist = wait_time_histogram(&s.pulse_histogram, &cfg.protocol, lit).unwrap();
    o.check(
        hist.ks_distance < 2e-3,
        format!(
            "KS distance {:.2e} < 2e-3 against Erlang(2, {lit} /s)",
            hist.ks_distance
        ),
    );
    let bright_only = wait_time_histogram(&s.pulse_histogram, &cfg.protocol, d.r_bright).unwrap();
    o.info(format!(
        "against Erlang(2, {} /s) without background: {:.2e}",
        d.r_bright, bright_only.ks_distance
    ));
    o
}

struct FitStats {
    mean_estimate: f64,
    mean_half_width: f64,
    coverage: f64,
}

fn fit_replicas(p_scatter: f64, replicas: u64, shots: u64, seed: u64) -> FitStats {
    let params = presets::detection_fit(p_scatter);
    let fits: Vec<_> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let bins =
                sample_change_model(&params.rates(Prepared::Bright), params.t_d, shots, seed + r)
                    .unwrap();
            let hist = CountHistogram::from_bins(bins, Prepared::Bright);
            fit_depump(&hist, &params, params.ce, FitOptions::default()).unwrap()
        })
        .collect();
    let n = fits.len() as f64;
    FitStats {
        mean_estimate: fits.iter().map(|f| f.depump_prob_per_scatter).sum::<f64>() / n,
        mean_half_width: fits
            .iter()
            .map(|f| f.depump_prob_interval.width() / 2.0)
            .sum::<f64>()
            / n,
        coverage: fits
            .iter()
            .filter(|f| f.depump_prob_interval.contains(p_scatter))
            .count() as f64
            / n,
    }
}

fn criterion_9() -> Outcome {
    let mut o = Outcome::new();
    for (i, (truth, quoted)) in [(50e-6, 5e-6), (7e-6, 4e-6)].into_iter().enumerate() {
        let s = fit_replicas(truth, 50, 10_000, 9_000 + 1_000 * i as u64);
        let tag = format!("{:.0}e-6", truth * 1e6);
        o.check(
            (s.mean_estimate - truth).abs() <= s.mean_half_width,
            format!(
                "{tag}: mean estimate {:.3e} within mean 1-sigma half-width {:.2e} of truth",
                s.mean_estimate, s.mean_half_width
            ),
        );
        o.check_documented(
            s.coverage >= 0.6,
            format!("{tag}: coverage {:.0}% >= 60%", s.coverage * 100.0),
            "50-replica coverage is a noisy statistic; 1000 replicas give 65% and 70%",
        );
        let ratio = s.mean_half_width / quoted;
        o.check_documented(
            (1.0 / 3.0..=3.0).contains(&ratio),
            format!("{tag}: half-width / quoted {quoted:.0e} = {ratio:.3} (within a factor 3)"),
            "statistical widths of a 1e4-shot fit are well below the quoted errors",
        );
    }
    o
}

fn criterion_10() -> Outcome {
    let mut o = Outcome::new();
    let cfg = ScenarioConfig::preset("paper-final").unwrap();
    let run = cfg.simulate(200_000, 10, false).unwrap();
    let measured = run.infidelity.unwrap();
    let errors = (presets::MEASURED_EPS_BRIGHT + presets::MEASURED_EPS_DARK) * 1e5;
    let target = wilson_interval(errors.round() as u64, 200_000, Z_95).unwrap();
    o.check_documented(
        target.contains(measured),
        format!(
            "simulated infidelity {:.4}% vs Wilson 95% [{:.4}%, {:.4}%] of the measured 0.16%",
            measured * 100.0,
            target.low * 100.0,
            target.high * 100.0
        ),
        "the rate inverted from the bright error already holds the Poisson threshold miss, which the model adds again",
    );
    let analytic = error_report(&cfg.detection).unwrap();
    o.info(format!(
        "analytic at this config {:.4}% (bright {:.4}%, dark {:.4}%)",
        analytic.infidelity * 100.0,
        analytic.eps_bright * 100.0,
        analytic.eps_dark * 100.0
    ));
    // Normalized rate at which the full model reproduces the measured bright error.
    let (mut lo, mut hi) = (0.0, 2e-3);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let eps = error_report(&presets::detection_with_normalized_rate(mid))
            .unwrap()
            .eps_bright;
        if eps < presets::MEASURED_EPS_BRIGHT {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    o.info(format!(
        "normalized rate {:.3e} reproduces the bright error; analytic infidelity there {:.4}%",
        lo,
        error_report(&presets::detection_with_normalized_rate(lo))
            .unwrap()
            .infidelity
            * 100.0
    ));
    let mut probe_rate = cfg.clone();
    probe_rate.detection.r_bright = presets::BRIGHT_RATE_PROBE_IMPLIED;
    o.info(format!(
        "analytic with the 2.5e4 /s bright rate {:.4}%",
        error_report(&probe_rate.detection).unwrap().infidelity * 100.0
    ));
    o
}

fn loss(cfg: &ScenarioConfig, n: u64, seed: u64) -> (f64, f64) {
    let b = summary(cfg, Prepared::Bright, n, seed);
    let d = summary(cfg, Prepared::Dark, n, seed);
    let l = detection_loss(b.lost, b.n_shots, d.lost, d.n_shots).unwrap();
    (l.loss, l.std_error)
}

fn criterion_11() -> Outcome {
    let mut o = Outcome::new();
    const N: u64 = 100_000;
    let full = ScenarioConfig::preset("paper-final").unwrap();
    let low = ScenarioConfig::preset("paper-lowdepth").unwrap();
    let mut fixed = full.clone();
    fixed.protocol = AdaptiveProtocol::fixed_time(
        full.protocol.max_total_time,
        full.protocol.pulse_duration,
        2,
    );
    let (l_full, e_full) = loss(&full, N, 11);
    let (l_low, e_low) = loss(&low, N, 11);
    let (l_fixed, e_fixed) = loss(&fixed, N, 11);
    o.check(
        l_low > l_full,
        format!(
            "loss rises as depth falls: {:.2}% -> {:.2}%",
            l_full * 100.0,
            l_low * 100.0
        ),
    );
    o.check(
        l_full < l_fixed,
        format!(
            "adaptive {:.2}% < fixed-time {:.2}%",
            l_full * 100.0,
            l_fixed * 100.0
        ),
    );
    o.info(format!(
        "11.9 MHz: model {:.2}({:.0})%, measured 2.6(2)%",
        l_full * 100.0,
        e_full * 1e4
    ));
    o.info(format!(
        "5.9 MHz: model {:.1}({:.0})%, measured 14.1(3)%",
        l_low * 100.0,
        e_low * 1e3
    ));
    o.info(format!(
        "fixed-time 11.9 MHz: model {:.1}({:.1})%",
        l_fixed * 100.0,
        e_fixed * 100.0
    ));
    o.info(format!(
        "infidelity 11.9 MHz {:.3}%, 5.9 MHz {:.3}% (measured 0.16%, 0.11%)",
        error_report(&full.detection).unwrap().infidelity * 100.0,
        error_report(&low.detection).unwrap().infidelity * 100.0
    ));
    o
}

fn criterion_12() -> Outcome {
    let mut o = Outcome::new();
    let dir =
        std::env::temp_dir().join(format!("tweezer-readout-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let run = |tag: &str, extra: &[&str]| -> Vec<Vec<u8>> {
        let sub = dir.join(tag);
        let out = sub.join("summary.json");
        let rec = sub.join("records.csv");
        let hist = sub.join("hist");
        std::fs::create_dir_all(&sub).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_tweezer-readout"))
            .args(extra)
            .args(["--seed", "12", "simulate", "--shots", "20000"])
            .arg("--out")
            .arg(&out)
            .arg("--records")
            .arg(&rec)
            .arg("--histograms")
            .arg(&hist)
            .status()
            .unwrap();
        assert!(status.success());
        [
            out,
            rec,
            hist.join("counts.csv"),
            hist.join("wait_times.csv"),
        ]
        .iter()
        .map(|p| std::fs::read(p).unwrap())
        .collect()
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--threads", "1"]);
    o.check(
        a == b,
        "two runs with the same seed are byte-identical".into(),
    );
    o.check(a == c, "one worker thread gives the same bytes".into());
    std::fs::remove_dir_all(&dir).ok();
    o
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        (1, "Raman chain", Duration::from_secs(1), criterion_1),
        (2, "trap channel", Duration::from_secs(1), criterion_2),
        (3, "probe channel", Duration::from_secs(1), criterion_3),
        (
            4,
            "count model vs event-level sampler",
            Duration::from_secs(120),
            criterion_4,
        ),
        (
            5,
            "threshold optimality",
            Duration::from_secs(10),
            criterion_5,
        ),
        (
            6,
            "fidelity bookkeeping",
            Duration::from_secs(1),
            criterion_6,
        ),
        (7, "heating budget", Duration::from_secs(60), criterion_7),
        (
            8,
            "Erlang wait times",
            Duration::from_secs(120),
            criterion_8,
        ),
        (9, "fit round trip", Duration::from_secs(300), criterion_9),
        (
            10,
            "end-to-end infidelity",
            Duration::from_secs(60),
            criterion_10,
        ),
        (11, "loss direction", Duration::from_secs(60), criterion_11),
        (12, "determinism", Duration::from_secs(60), criterion_12),
    ];
    let mut hard_failures = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let mut outcome = f();
        let elapsed = start.elapsed();
        outcome.check(
            elapsed <= limit,
            format!(
                "runtime {:.2} s <= {} s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            ),
        );
        let verdict = match &outcome.verdict {
            Verdict::Pass => "PASS".to_string(),
            Verdict::Fail => {
                hard_failures += 1;
                "FAIL".to_string()
            }
            Verdict::Documented(reasons) => format!("FAIL (documented: {})", reasons.join("; ")),
        };
        println!("criterion {id:>2} {verdict} - {name}");
        for d in &outcome.details {
            println!("      {d}");
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
