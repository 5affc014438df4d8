//! Acceptance gate: one line per criterion, non-zero exit on any failure.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use timebin_relay::channels::{coherence_time_fs, hom_dip_fwhm_um, thermal_length_drift_mm, FiberSpec, FilterSpec};
use timebin_relay::detection::{CoincidenceRule, OutcomeTable};
use timebin_relay::exec::Execution;
use timebin_relay::experiments::*;
use timebin_relay::fock::TimeBinQubit;

const MC_PULSES: u64 = 1_000_000;
const MC_SEED: u64 = 20_040_301;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn visibility(r: &ScanResult, analytic: bool) -> f64 {
    let s = if analytic { &r.analytic } else { &r.sampled };
    s.as_ref().and_then(|s| s.visibility).map_or(f64::NAN, |v| v.value)
}

fn teleportation_identity() -> Outcome {
    let mut worst_amp: f64 = 0.0;
    let mut worst_fid: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let q = TimeBinQubit::from_angles(PI * i as f64 / 9.0, 2.0 * PI * j as f64 / 10.0);
            let t = match teleport_ideal(&q) {
                Ok(t) => t,
                Err(e) => return check(false, format!("error: {e}")),
            };
            // iσ_y (c0, c1) = (c1, -c0)
            let [c0, c1] = q.amplitudes();
            let expected = [c1, -c0];
            for (b, e) in t.bob.iter().zip(expected) {
                worst_amp = worst_amp.max((b - e).norm());
            }
            worst_fid = worst_fid.max((t.corrected_fidelity - 1.0).abs());
        }
    }
    check(
        worst_amp <= 1e-10 && worst_fid <= 1e-10,
        format!("100 inputs: max |Bob - iσ_y ψ| = {worst_amp:.1e}, max |F - 1| = {worst_fid:.1e}"),
    )
}

fn hom_cap() -> Outcome {
    let quiet = ExperimentConfig {
        detectors: DetectorSet::ideal(),
        ..ExperimentConfig::default()
    };
    let mut noiseless = ExperimentConfig::default();
    noiseless.detectors.set_dark_prob_per_ns(0.0);
    let (Ok(v_ideal), Ok(v_lossy)) = (hom_visibility(&quiet, 1.0), hom_visibility(&noiseless, 1.0)) else {
        return check(false, "analytic visibility failed");
    };

    // Sampled: coincidences at perfect and zero overlap.
    let mc = ExperimentConfig {
        qubit_pair_probability: 0.1,
        ..quiet.clone()
    };
    let counts = |overlap: f64| -> Option<(f64, f64)> {
        let t = hom_table(&mc, overlap).ok()?;
        let n = t
            .simulate(&[hom_rule()], MC_PULSES, MC_SEED, Execution::default())
            .ok()?
            .counts[0] as f64;
        let p = t.probabilities(&[hom_rule()]).ok()?[0];
        Some((n, p))
    };
    let (Some((n_dip, p_dip)), Some((n_far, p_far))) = (counts(1.0), counts(0.0)) else {
        return check(false, "sampling failed");
    };
    let v_mc = 1.0 - n_dip / n_far;
    let v_exact = 1.0 - p_dip / p_far;
    let sigma = (n_dip / n_far) * (1.0 / n_dip + 1.0 / n_far).sqrt();

    let first = ExperimentConfig {
        pair_order: PairOrder::FirstOrder,
        ..quiet.clone()
    };
    let v_first = hom_visibility(&first, 1.0).unwrap_or(f64::NAN);
    let dip_floor = hom_coincidence_probability(&first, 1.0).unwrap_or(f64::NAN);

    check(
        within(v_ideal, 1.0 / 3.0, 1e-3)
            && within(v_lossy, 1.0 / 3.0, 1e-3)
            && within(v_exact, 1.0 / 3.0, 1e-3)
            && (v_mc - v_exact).abs() <= 5.0 * sigma
            && within(v_first, 1.0, 1e-12)
            && dip_floor.abs() <= 1e-15,
        format!(
            "analytic V = {v_ideal:.6} (ideal), {v_lossy:.6} (lossy); sampled V = {v_mc:.4} ± {sigma:.4} \
             vs {v_exact:.6}; first-order V = {v_first:.6}, dip floor {dip_floor:.1e}"
        ),
    )
}

/// Two photons on a balanced splitter, every path summed by hand.
fn enumerated_coincidence(z: f64) -> f64 {
    let alice = [(0usize, z), (1usize, (1.0 - z * z).sqrt())];
    let t = Complex64::new(0.5f64.sqrt(), 0.0);
    let r = Complex64::new(0.0, 0.5f64.sqrt());
    let paths = |input: usize| [(input, t), (1 - input, r)];
    let mut amps: BTreeMap<[(usize, usize); 2], Complex64> = BTreeMap::new();
    for &(ia, ca) in &alice {
        for (pa, aa) in paths(0) {
            for (pc, ac) in paths(1) {
                let mut key = [(pa, ia), (pc, 0)];
                key.sort();
                *amps.entry(key).or_default() += aa * ac * ca;
            }
        }
    }
    amps.iter()
        .filter(|(k, _)| k[0].0 != k[1].0)
        .map(|(_, a)| a.norm_sqr())
        .sum()
}

fn distinguishability_law() -> Outcome {
    let mut worst: f64 = 0.0;
    for z in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let Ok(p) = two_photon_coincidence(z) else {
            return check(false, "simulation failed");
        };
        worst = worst.max((p - (1.0 - z * z) / 2.0).abs());
        worst = worst.max((p - enumerated_coincidence(z)).abs());
    }
    check(worst <= 1e-12, format!("max deviation over ζ grid {worst:.1e}"))
}

fn fringe_law() -> Outcome {
    let grid = phase_grid(12);
    let mut vs = Vec::new();
    for alpha in [0.0, PI / 3.0, 1.2 * PI] {
        let config = ExperimentConfig {
            alpha,
            ..ExperimentConfig::ideal()
        };
        match run_teleportation_equator(&config, &grid, &RunMode::analytic()) {
            Ok(r) => {
                let phase = match r.analytic.as_ref().and_then(|s| s.fit) {
                    Some(FitDetail::Sinusoid(f)) => f.phase,
                    _ => f64::NAN,
                };
                let d = (phase - alpha).rem_euclid(2.0 * PI);
                vs.push((visibility(&r, true), d.min(2.0 * PI - d)));
            }
            Err(e) => return check(false, format!("error: {e}")),
        }
    }
    let flat = ExperimentConfig {
        mode_overlap: 0.0,
        ..ExperimentConfig::ideal()
    };
    let v0 = run_teleportation_equator(&flat, &grid, &RunMode::analytic())
        .map(|r| visibility(&r, true))
        .unwrap_or(f64::NAN);
    let ok = vs.iter().all(|&(v, dphi)| within(v, 1.0, 1e-9) && dphi < 1e-9) && within(v0, 0.0, 1e-9);
    check(
        ok,
        format!(
            "V(α) = {:?}, phase offsets {:?}, V(ζ=0) = {v0:.1e}",
            vs.iter().map(|v| format!("{:.12}", v.0)).collect::<Vec<_>>(),
            vs.iter().map(|v| format!("{:.1e}", v.1)).collect::<Vec<_>>()
        ),
    )
}

fn operating_point() -> Outcome {
    let Ok(v_bsm) = v_bsm_from_fidelity(0.775, 0.96) else {
        return check(false, "inversion failed");
    };
    let f_eq = fidelity_from_components(v_bsm, 0.96);
    let f_total = total_fidelity(f_eq, f_eq);

    // Same numbers through the simulated chain.
    let chain = ExperimentConfig {
        mode_overlap: v_bsm.sqrt(),
        analyzer_visibility: 0.96,
        ..ExperimentConfig::ideal()
    };
    let f_chain = run_teleportation_equator(&chain, &phase_grid(8), &RunMode::analytic())
        .ok()
        .and_then(|r| r.analytic.and_then(|s| s.fidelity))
        .map_or(f64::NAN, |f| f.value);
    let f_poles = run_teleportation_poles(
        &ExperimentConfig::operating_point(),
        &[Pole::Early, Pole::Late],
        &RunMode::analytic(),
    )
    .ok()
    .and_then(|r| r.analytic.and_then(|s| s.fidelity))
    .map_or(f64::NAN, |f| f.value);

    check(
        within(v_bsm, 0.573, 1e-3)
            && within(f_total, 0.775, 5e-3)
            && f_total > CLASSICAL_FIDELITY_BOUND
            && within(f_chain, 0.775, 5e-3)
            && within(f_poles, 0.775, 0.03),
        format!(
            "V_BSM = {v_bsm:.5}, F_total = {f_total:.5} (> {:.4}), simulated F_equator = {f_chain:.5}, \
             F_poles at operating point = {f_poles:.4}",
            CLASSICAL_FIDELITY_BOUND
        ),
    )
}

fn coherence_calibration() -> Outcome {
    let filter = FilterSpec::default();
    let tc = coherence_time_fs(&filter);
    let fwhm = hom_dip_fwhm_um(&filter);
    let drift = thermal_length_drift_mm(&FiberSpec::with_length(2.0), 1.0);
    check(
        (tc - 250.0).abs() <= 0.05 * 250.0 && (fwhm - 140.0).abs() <= 0.3 * 140.0 && drift == 8.0,
        format!("τc = {tc:.2} fs, dip FWHM = {fwhm:.2} μm, drift = {drift} mm/K"),
    )
}

fn relay_curves() -> Outcome {
    let base = RelayModelParams::default();
    let grid: Vec<f64> = (0..=300).map(|k| k as f64).collect();
    let segments = [1, 2, 3, 4];
    let Ok(curve) = relay_fidelity_curve(&base, &segments, &grid) else {
        return check(false, "curve failed");
    };
    let monotone = (0..segments.len()).all(|k| curve.fidelity.windows(2).all(|w| w[1][k] < w[0][k]));
    let silent = RelayModelParams {
        dark_prob_per_ns: 0.0,
        ..base
    };
    let start: Vec<f64> = segments
        .iter()
        .map(|&n| relay_fidelity(&RelayModelParams { segments: n, ..silent }).unwrap_or(f64::NAN))
        .collect();
    let equal_start = start.iter().all(|f| (f - start[0]).abs() < 1e-15);
    let reach: Vec<f64> = segments
        .iter()
        .map(|&n| {
            distance_at_fidelity(&RelayModelParams { segments: n, ..base }, 0.9, 5000.0)
                .ok()
                .flatten()
                .unwrap_or(f64::NAN)
        })
        .collect();
    let increasing = reach.windows(2).all(|w| w[1] > w[0]);
    check(
        monotone && equal_start && increasing,
        format!(
            "F(0) noiseless = {:.3}, monotone = {monotone}, 0.9-distance by n = [{}] km",
            start[0],
            reach.iter().map(|l| format!("{l:.1}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

struct Regression {
    name: &'static str,
    table: OutcomeTable,
    rules: Vec<CoincidenceRule>,
}

fn regression_set() -> timebin_relay::Result<Vec<Regression>> {
    let bright = ExperimentConfig {
        qubit_pair_probability: 0.2,
        pump_ratio: 1.0,
        ..ExperimentConfig::default()
    };
    let mut noisy = ExperimentConfig {
        qubit_pair_probability: 0.1,
        ..ExperimentConfig::default()
    };
    noisy.detectors.set_dark_prob_per_ns(1e-2);
    let ideal = ExperimentConfig {
        alpha: 0.4,
        qubit_pair_probability: 0.2,
        pump_ratio: 1.0,
        ..ExperimentConfig::ideal()
    };
    Ok(vec![
        Regression {
            name: "equator bright β=0",
            table: equator_table(&bright, 0.0)?,
            rules: equator_rules(),
        },
        Regression {
            name: "equator bright β=π/2",
            table: equator_table(&bright, PI / 2.0)?,
            rules: equator_rules(),
        },
        Regression {
            name: "equator noisy β=π",
            table: equator_table(&noisy, PI)?,
            rules: equator_rules(),
        },
        Regression {
            name: "equator ideal β=1",
            table: equator_table(&ideal, 1.0)?,
            rules: equator_rules(),
        },
        Regression {
            name: "pole bright early",
            table: pole_table(&bright, Pole::Early)?,
            rules: pole_rules(),
        },
        Regression {
            name: "pole noisy late",
            table: pole_table(&noisy, Pole::Late)?,
            rules: pole_rules(),
        },
    ])
}

fn monte_carlo_agreement() -> Outcome {
    let set = match regression_set() {
        Ok(s) => s,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    let mut fewest = f64::INFINITY;
    for (i, reg) in set.iter().enumerate() {
        let (Ok(exact), Ok(rates)) = (
            reg.table.probabilities(&reg.rules),
            reg.table
                .simulate(&reg.rules, MC_PULSES, MC_SEED + i as u64, Execution::default()),
        ) else {
            return check(false, format!("{}: evaluation failed", reg.name));
        };
        for (k, p) in exact.iter().enumerate() {
            let sigma = (p * (1.0 - p) / MC_PULSES as f64).sqrt();
            let dev = (rates.rate(k) - p).abs();
            let z = if sigma > 0.0 {
                dev / sigma
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
            checks += 1;
            fewest = fewest.min(p * MC_PULSES as f64);
        }
    }

    let first = &set[0];
    let a = first.table.simulate(&first.rules, 200_000, 7, Execution::Sequential);
    let b = first.table.simulate(&first.rules, 200_000, 7, Execution::Parallel);
    let c = first.table.simulate(&first.rules, 200_000, 7, Execution::Parallel);
    let r1 = first.table.sample_records(0..20_000, 7);
    let r2 = first.table.sample_records(0..20_000, 7);
    let identical = a.is_ok() && a == b && b == c && r1.is_ok() && r1 == r2;
    check(
        worst <= 5.0 && identical,
        format!(
            "{checks} rule checks (smallest expected count {fewest:.0}), worst deviation {worst:.2}σ, \
             reruns identical = {identical}"
        ),
    )
}

fn franson() -> Outcome {
    let grid = phase_grid(12);
    let ideal = run_teleportation_franson(&ExperimentConfig::ideal(), &grid);
    let calibrated = run_teleportation_franson(
        &ExperimentConfig {
            analyzer_visibility: 0.96,
            ..ExperimentConfig::ideal()
        },
        &grid,
    );
    check(
        within(ideal, 1.0, 1e-9) && within(calibrated, 0.96, 0.01),
        format!("ideal V = {ideal:.12}, calibrated V = {calibrated:.6}"),
    )
}

fn run_teleportation_franson(config: &ExperimentConfig, grid: &[f64]) -> f64 {
    run_franson_scan(config, grid, &RunMode::analytic())
        .map(|r| visibility(&r, true))
        .unwrap_or(f64::NAN)
}

fn pump_ratio() -> Outcome {
    let base = ExperimentConfig::operating_point();
    let mut totals = Vec::new();
    // EPR over qubit pair probability 1, 1/3, 1/7 at fixed total.
    for ratio in [1.0, 3.0, 7.0] {
        let config = SweepParameter::PumpRatio.apply(&base, ratio);
        match teleportation_fidelity(&config, &RunMode::analytic()) {
            Ok(p) => totals.push(p.analytic.map_or(f64::NAN, |r| r.total.value)),
            Err(e) => return check(false, format!("error: {e}")),
        }
    }
    check(
        totals.windows(2).all(|w| w[1] > w[0]),
        format!("F_total for μ_E/μ_A = 1, 1/3, 1/7: {totals:.4?}"),
    )
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            1,
            "teleportation identity",
            Some(Duration::from_secs(10)),
            teleportation_identity,
        ),
        (
            2,
            "two-photon dip capped at 1/3",
            Some(Duration::from_secs(120)),
            hom_cap,
        ),
        (
            3,
            "distinguishability law",
            Some(Duration::from_secs(1)),
            distinguishability_law,
        ),
        (4, "fringe law", None, fringe_law),
        (5, "operating point consistency", None, operating_point),
        (6, "coherence and overlap calibration", None, coherence_calibration),
        (7, "relay curves", Some(Duration::from_secs(1)), relay_curves),
        (8, "sampled vs exact rates", None, monte_carlo_agreement),
        (9, "Franson visibility", None, franson),
        (10, "pump ratio", None, pump_ratio),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = budget.map_or(String::new(), |b| format!(" / {:.0?}", b));
        println!(
            "criterion {id:>2} {} {name}: {} [{:.2?}{limit}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
