use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use timebin_relay::detection::{DetectorLabel, DetectorSpec};
use timebin_relay::experiments::*;
use timebin_relay::fock::{Band, FockBasisState, FockSpace, ModeId, Spatial, StateVector, TimeBinQubit};
use timebin_relay::optics::{analyze_qubit, propagate, InterferometerSpec, TimeBinDevice};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn mode(spatial: Spatial, bin: u8) -> ModeId {
    ModeId::new(spatial, bin, Band::Nm1310)
}

/// Up to four kets with at most two photons spread over Alice and Charlie.
fn two_port_state() -> impl Strategy<Value = StateVector> {
    let ket = (0u8..3, 0u8..3, 0u8..2, 0u8..2, -1.0f64..1.0, -1.0f64..1.0);
    proptest::collection::vec(ket, 1..5).prop_filter_map("null state", |kets| {
        let space = FockSpace::standard();
        let entries: Vec<_> = kets
            .into_iter()
            .map(|(na, nc, ta, tc, re, im)| {
                let mut counts = vec![];
                if na > 0 {
                    counts.push((mode(Spatial::Alice, ta), na.min(2)));
                }
                if nc > 0 {
                    counts.push((mode(Spatial::Charlie, tc), nc.min(2)));
                }
                (FockBasisState::from_counts(counts), c(re, im))
            })
            .collect();
        StateVector::new(&space, entries).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beam_splitter_is_unitary(a in two_port_state(), b in two_port_state(), t in 0.0f64..=1.0) {
        let ua = a.beam_splitter(Spatial::Alice, Spatial::Charlie, t).unwrap();
        let ub = b.beam_splitter(Spatial::Alice, Spatial::Charlie, t).unwrap();
        prop_assert!((ua.norm_sqr() - 1.0).abs() < 1e-12);
        prop_assert!((ua.inner(&ub) - a.inner(&b)).norm() < 1e-12);
    }

    #[test]
    fn distinguishability_rotation_is_unitary(a in two_port_state(), b in two_port_state(), z in 0.0f64..=1.0) {
        let on_alice = |m: &ModeId| m.spatial == Spatial::Alice;
        let ra = a.rotate_distinguishability(on_alice, z).unwrap();
        let rb = b.rotate_distinguishability(on_alice, z).unwrap();
        prop_assert!((ra.inner(&rb) - a.inner(&b)).norm() < 1e-12);
    }

    #[test]
    fn postselection_is_complete(a in two_port_state(), t in 0.0f64..=1.0) {
        let s = a.beam_splitter(Spatial::Alice, Spatial::Charlie, t).unwrap();
        let scope = |m: &ModeId| m.spatial == Spatial::Charlie;
        let patterns: BTreeSet<Vec<(ModeId, u8)>> = s
            .iter()
            .map(|(b, _)| b.iter().filter(|(m, _)| scope(m)).copied().collect())
            .collect();
        let total: f64 = patterns
            .iter()
            .map(|p| s.postselect(&p.iter().copied().collect::<BTreeMap<_, _>>(), scope).probability)
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interferometer_conserves_probability(theta in 0.0f64..PI, alpha in 0.0f64..(2.0 * PI),
                                            phase in 0.0f64..(2.0 * PI), coupling in 0.0f64..=1.0,
                                            vis in 0.0f64..=1.0) {
        let space = FockSpace::standard();
        let q = TimeBinQubit::from_angles(theta, alpha);
        let bob = (ModeId::new(Spatial::Bob, 0, Band::Nm1550), ModeId::new(Spatial::Bob, 1, Band::Nm1550));
        let input = q.to_state(&space, bob.0, bob.1).unwrap();
        let device = TimeBinDevice::Interferometer(
            InterferometerSpec::balanced(phase).with_coupling(coupling).with_visibility(vis),
        );
        let out = propagate(&input, &device, Spatial::Bob).unwrap();
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        let analyzed = analyze_qubit(&device, &input, Spatial::Bob).unwrap();
        let seen: f64 = analyzed.slots.values().map(|s| s.probability).sum();
        prop_assert!((seen + analyzed.discarded - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_teleportation_is_perfect(theta in 0.0f64..=PI, alpha in 0.0f64..(2.0 * PI)) {
        let q = TimeBinQubit::from_angles(theta, alpha);
        let t = teleport_ideal(&q).unwrap();
        prop_assert!((t.corrected_fidelity - 1.0).abs() < 1e-10);
        prop_assert!((t.probability - 0.125).abs() < 1e-10);
    }

    #[test]
    fn coincidence_matches_enumeration(z in 0.0f64..=1.0) {
        prop_assert!((two_photon_coincidence(z).unwrap() - brute_force_coincidence(z)).abs() < 1e-12);
    }

    #[test]
    fn hom_visibility_is_capped(z in 0.0f64..=1.0, mu in 1e-4f64..0.25, eta in 0.05f64..=1.0) {
        let mut detectors = DetectorSet::ideal();
        detectors.c1.efficiency = eta;
        detectors.c2.efficiency = eta;
        let config = ExperimentConfig {
            qubit_pair_probability: mu,
            detectors,
            ..ExperimentConfig::default()
        };
        let v = hom_visibility(&config, z).unwrap();
        prop_assert!(v <= 1.0 / 3.0 + 1e-6, "v = {}", v);
        prop_assert!(v >= -1e-12);
    }

    #[test]
    fn sinusoid_fit_is_unbiased(offset in 0.1f64..100.0, v in 0.0f64..=1.0, x0 in 0.0f64..(2.0 * PI), n in 4usize..16) {
        let pts: Vec<_> = phase_grid(n)
            .into_iter()
            .map(|x| DataPoint::exact(x, offset * (1.0 + v * (x + x0).cos())))
            .collect();
        let f = fit_sinusoid(&pts).unwrap();
        prop_assert!((f.visibility - v).abs() < 1e-9);
        prop_assert!((f.offset - offset).abs() < 1e-9 * offset);
    }

    #[test]
    fn dip_fit_is_unbiased(base in 1.0f64..100.0, v in 0.05f64..=1.0, x0 in -30.0f64..30.0, fwhm in 60.0f64..200.0) {
        let w = fwhm / fit::GAUSSIAN_FWHM_PER_SIGMA;
        let pts: Vec<_> = (-25..=25)
            .map(|k| {
                let x = k as f64 * 12.0;
                DataPoint::exact(x, base * (1.0 - v * (-(x - x0).powi(2) / (2.0 * w * w)).exp()))
            })
            .collect();
        let f = fit_gaussian_dip(&pts).unwrap();
        prop_assert!((f.visibility - v).abs() < 1e-9, "{:?}", f);
        prop_assert!((f.center - x0).abs() < 1e-7);
        prop_assert!((f.fwhm - fwhm).abs() < 1e-7 * fwhm);
    }

    #[test]
    fn relay_start_point(d in 0.0f64..1e-2, eta in 0.01f64..=1.0, v in 0.0f64..=1.0) {
        let at = |n: u32, dark: f64| relay_fidelity(&RelayModelParams {
            segments: n,
            dark_prob_per_ns: dark,
            efficiency: eta,
            visibility: v,
            ..Default::default()
        }).unwrap();
        for n in 1..4 {
            prop_assert!((at(n, 0.0) - at(n + 1, 0.0)).abs() < 1e-15);
            prop_assert!(at(n + 1, d) <= at(n, d) + 1e-15);
        }
    }
}

/// Coincidence probability of two photons on a balanced splitter by summing
/// over every path of every photon, with the internal mode written out.
fn brute_force_coincidence(z: f64) -> f64 {
    // internal labels: 0 = shared, 1 = Alice-only
    let alice = [(0usize, z), (1usize, (1.0 - z * z).sqrt())];
    let charlie = [(0usize, 1.0)];
    let t = c(0.5f64.sqrt(), 0.0);
    let r = c(0.0, 0.5f64.sqrt());
    // Alice enters port 0, Charlie port 1; output port = input port when transmitted.
    let paths = |input: usize| [(input, t), (1 - input, r)];
    let mut amps: BTreeMap<Vec<(usize, usize)>, Complex64> = BTreeMap::new();
    for &(ia, ca) in &alice {
        for &(ic, cc) in &charlie {
            for (pa, aa) in paths(0) {
                for (pc, ac) in paths(1) {
                    let mut key = vec![(pa, ia), (pc, ic)];
                    key.sort();
                    *amps.entry(key).or_default() += aa * ac * ca * cc;
                }
            }
        }
    }
    amps.iter()
        .filter(|(k, _)| k[0].0 != k[1].0)
        .map(|(_, a)| a.norm_sqr())
        .sum()
}

fn equator_fidelity(config: &ExperimentConfig) -> f64 {
    run_teleportation_equator(config, &phase_grid(8), &RunMode::analytic())
        .unwrap()
        .analytic
        .unwrap()
        .fidelity
        .unwrap()
        .value
}

#[test]
fn equator_fidelity_falls_with_dark_counts() {
    let base = ExperimentConfig::default();
    let f: Vec<f64> = [0.0, 1e-4, 1e-3]
        .iter()
        .map(|&d| equator_fidelity(&SweepParameter::DarkProbPerNs.apply(&base, d)))
        .collect();
    assert!(f[0] >= f[1] && f[1] >= f[2], "{f:?}");
}

#[test]
fn equator_fidelity_falls_with_delay() {
    let base = ExperimentConfig::default();
    let f: Vec<f64> = [0.0, 50.0, 150.0]
        .iter()
        .map(|&d| equator_fidelity(&SweepParameter::DelayUm.apply(&base, d)))
        .collect();
    assert!(f[0] >= f[1] && f[1] >= f[2], "{f:?}");
    let back = equator_fidelity(&SweepParameter::DelayUm.apply(&base, -50.0));
    assert!((back - f[1]).abs() < 1e-12);
}

#[test]
fn equator_fidelity_rises_with_overlap() {
    let base = ExperimentConfig::default();
    let f: Vec<f64> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&z| equator_fidelity(&SweepParameter::ModeOverlap.apply(&base, z)))
        .collect();
    assert!(f[0] <= f[1] && f[1] <= f[2], "{f:?}");
}

#[test]
fn poincare_grid_total_fidelity() {
    for i in 0..10 {
        for j in 0..10 {
            let q = TimeBinQubit::from_angles(PI * i as f64 / 9.0, 2.0 * PI * j as f64 / 10.0);
            let t = teleport_ideal(&q).unwrap();
            assert!((t.corrected_fidelity - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn noisy_gated_detectors_stay_consistent() {
    let mut config = ExperimentConfig::default();
    config.detectors.b = DetectorSpec {
        dark_prob_per_ns: 1e-2,
        ..DetectorSpec::ingaas(DetectorLabel::B)
    };
    let r = run_teleportation_poles(&config, &[Pole::Early], &RunMode::analytic()).unwrap();
    let f = r.analytic.unwrap().fidelity.unwrap().value;
    assert!(f > 0.5 && f < 1.0);
}
