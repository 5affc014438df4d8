//! End-to-end drivers: teleportation fringe and pole measurements, the
//! two-photon dip, the Franson test and parameter sweeps.
//!
//! Every driver builds the optical state for each scan point, hands it to
//! the detector model and reports exact rates, sampled counts or both.

pub mod fit;
pub mod relay;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channels::{overlap_from_delay, survival_probability, FiberSpec, FilterSpec};
use crate::detection::{
    CoincidenceRule, DetectorBank, DetectorLabel, DetectorSpec, OutcomeTable, SlotMatch, Station, DEFAULT_WINDOW_NS,
};
use crate::error::{check_range, Error, Result};
use crate::exec::{self, Execution};
use crate::fock::{qubit_fidelity, Band, FockSpace, ModeId, Spatial, StateVector, TimeBinQubit};
use crate::optics::{
    pauli_correction, prepare_qubit, propagate, single_pairs, spdc_emit_joint, InterferometerSpec, Pauli, PumpBin,
    SourceSpec, TimeBinDevice, MAX_PAIR_AMPLITUDE,
};

pub use fit::{fit_gaussian_dip, fit_sinusoid, DataPoint, DipFit, SinusoidFit};
pub use relay::{distance_at_fidelity, relay_fidelity, relay_fidelity_curve, RelayCurve, RelayModelParams};

/// Best average fidelity reachable by measure-and-prepare strategies.
pub const CLASSICAL_FIDELITY_BOUND: f64 = 2.0 / 3.0;

/// Qubit-source pair probability per pulse at which the default chain (pump
/// ratio 7, default detectors and fibers) gives a pole fidelity of 0.775.
pub const OPERATING_QUBIT_PAIR_PROBABILITY: f64 = 2.669e-3;

/// Number of analyzer phases used when a fidelity needs a fringe fit.
pub const FRINGE_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrder {
    /// Exactly one pair per active source.
    FirstOrder,
    /// Full emission expanded to two pairs in total.
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSet {
    pub c1: DetectorSpec,
    pub c2: DetectorSpec,
    pub b: DetectorSpec,
}

impl Default for DetectorSet {
    fn default() -> Self {
        Self {
            c1: DetectorSpec::germanium(DetectorLabel::C1),
            c2: DetectorSpec::ingaas(DetectorLabel::C2),
            b: DetectorSpec::ingaas(DetectorLabel::B),
        }
    }
}

impl DetectorSet {
    pub fn ideal() -> Self {
        let d = Self::default();
        Self {
            c1: d.c1.ideal(),
            c2: d.c2.ideal(),
            b: d.b.ideal(),
        }
    }

    pub fn set_dark_prob_per_ns(&mut self, value: f64) {
        for d in [&mut self.c1, &mut self.c2, &mut self.b] {
            d.dark_prob_per_ns = value;
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (spec, label) in [
            (&self.c1, DetectorLabel::C1),
            (&self.c2, DetectorLabel::C2),
            (&self.b, DetectorLabel::B),
        ] {
            if spec.label != label {
                return Err(Error::Config(format!(
                    "detector slot {label:?} holds a {:?} spec",
                    spec.label
                )));
            }
            spec.validate()?;
        }
        if self.c1.gated {
            return Err(Error::Config("C1 triggers the gates and cannot be gated".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Pair probability per pulse of the qubit source, λ_A².
    pub qubit_pair_probability: f64,
    /// Qubit-source over EPR-source pair probability per pulse.
    pub pump_ratio: f64,
    /// Pump-interferometer phase φ, radians.
    pub pump_phase: f64,
    pub pair_order: PairOrder,
    /// Alice's preparation phase α, radians.
    pub alpha: f64,
    /// Fringe visibility of Bob's analyzer.
    pub analyzer_visibility: f64,
    pub analyzer_insertion_loss: f64,
    /// Intrinsic overlap of the photons meeting at the beam splitter.
    pub mode_overlap: f64,
    /// Path-length mismatch at the beam splitter, μm.
    pub delay_um: f64,
    /// Qubit-source over EPR-source pair probability in the dip measurement.
    pub hom_pump_ratio: f64,
    pub fiber_alice: FiberSpec,
    pub fiber_charlie: FiberSpec,
    pub fiber_bob: FiberSpec,
    pub filter: FilterSpec,
    pub detectors: DetectorSet,
    pub pulses: u64,
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            qubit_pair_probability: 0.05,
            pump_ratio: 7.0,
            pump_phase: 0.0,
            pair_order: PairOrder::Truncated,
            alpha: 0.0,
            analyzer_visibility: 0.96,
            analyzer_insertion_loss: 0.0,
            mode_overlap: 1.0,
            delay_um: 0.0,
            hom_pump_ratio: 1.0,
            fiber_alice: FiberSpec::with_length(2.0),
            fiber_charlie: FiberSpec::with_length(2.0),
            fiber_bob: FiberSpec {
                dispersion_ps_per_nm_km: 0.0,
                ..FiberSpec::with_length(2.2)
            },
            filter: FilterSpec::default(),
            detectors: DetectorSet::default(),
            pulses: 1_000_000,
            seed: None,
        }
    }
}

impl ExperimentConfig {
    /// Single pairs, lossless fibers, perfect detectors and analyzers.
    pub fn ideal() -> Self {
        Self {
            pair_order: PairOrder::FirstOrder,
            analyzer_visibility: 1.0,
            fiber_alice: FiberSpec::with_length(0.0),
            fiber_charlie: FiberSpec::with_length(0.0),
            fiber_bob: FiberSpec::with_length(0.0),
            detectors: DetectorSet::ideal(),
            ..Self::default()
        }
    }

    pub fn operating_point() -> Self {
        Self {
            qubit_pair_probability: OPERATING_QUBIT_PAIR_PROBABILITY,
            ..Self::default()
        }
    }

    pub fn epr_pair_probability(&self) -> f64 {
        self.qubit_pair_probability / self.pump_ratio
    }

    pub fn qubit_source(&self) -> SourceSpec {
        SourceSpec::qubit_source(self.qubit_pair_probability.sqrt())
    }

    /// Two pump bins sharing the EPR pair probability.
    pub fn epr_source(&self) -> SourceSpec {
        SourceSpec::epr_source((self.epr_pair_probability() / 2.0).sqrt(), self.pump_phase)
    }

    /// Overlap at the beam splitter including the path mismatch.
    pub fn effective_overlap(&self) -> f64 {
        self.mode_overlap * overlap_from_delay(self.delay_um, &self.filter)
    }

    /// Survival to the BSM detectors, averaged over the two input links.
    pub fn bsm_survival(&self) -> f64 {
        0.5 * (survival_probability(&self.fiber_alice) + survival_probability(&self.fiber_charlie))
    }

    pub fn bob_survival(&self) -> f64 {
        survival_probability(&self.fiber_bob) * (1.0 - self.analyzer_insertion_loss)
    }

    pub fn validate(&self) -> Result<()> {
        let max_prob = MAX_PAIR_AMPLITUDE * MAX_PAIR_AMPLITUDE;
        check_range(
            "qubit_pair_probability",
            self.qubit_pair_probability,
            0.0,
            max_prob,
            "[0, 0.25]",
        )?;
        if !(self.pump_ratio.is_finite() && self.pump_ratio > 0.0) {
            return Err(Error::OutOfRange {
                name: "pump_ratio",
                value: self.pump_ratio,
                range: "> 0",
            });
        }
        if !(self.hom_pump_ratio.is_finite() && self.hom_pump_ratio > 0.0) {
            return Err(Error::OutOfRange {
                name: "hom_pump_ratio",
                value: self.hom_pump_ratio,
                range: "> 0",
            });
        }
        check_range(
            "epr_pair_probability",
            self.epr_pair_probability(),
            0.0,
            2.0 * max_prob,
            "[0, 0.5]",
        )?;
        check_range("pump_phase", self.pump_phase, f64::MIN, f64::MAX, "finite")?;
        check_range("alpha", self.alpha, f64::MIN, f64::MAX, "finite")?;
        check_range("analyzer_visibility", self.analyzer_visibility, 0.0, 1.0, "[0, 1]")?;
        check_range(
            "analyzer_insertion_loss",
            self.analyzer_insertion_loss,
            0.0,
            1.0,
            "[0, 1]",
        )?;
        check_range("mode_overlap", self.mode_overlap, 0.0, 1.0, "[0, 1]")?;
        check_range("delay_um", self.delay_um, f64::MIN, f64::MAX, "finite")?;
        self.fiber_alice.validate()?;
        self.fiber_charlie.validate()?;
        self.fiber_bob.validate()?;
        self.filter.validate()?;
        self.detectors.validate()?;
        if self.pulses == 0 {
            return Err(Error::Config("pulses must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub pulses: u64,
    pub seed: u64,
}

/// Which estimates to produce and how to schedule them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunMode {
    pub analytic: bool,
    pub sampling: Option<Sampling>,
    pub exec: Execution,
}

impl RunMode {
    pub fn analytic() -> Self {
        Self {
            analytic: true,
            sampling: None,
            exec: Execution::default(),
        }
    }

    pub fn monte_carlo(pulses: u64, seed: u64) -> Self {
        Self {
            analytic: false,
            sampling: Some(Sampling { pulses, seed }),
            exec: Execution::default(),
        }
    }

    pub fn both(pulses: u64, seed: u64) -> Self {
        Self {
            analytic: true,
            ..Self::monte_carlo(pulses, seed)
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDetail {
    Sinusoid(SinusoidFit),
    Dip(DipFit),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub visibility: Option<Estimate>,
    pub fidelity: Option<Estimate>,
    pub fit: Option<FitDetail>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub x: f64,
    /// Exact probability per pulse for each rule.
    pub analytic: Option<Vec<f64>>,
    pub counts: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub axis: String,
    pub rules: Vec<String>,
    pub pulses: Option<u64>,
    pub rows: Vec<ScanRow>,
    pub analytic: Option<Summary>,
    pub sampled: Option<Summary>,
}

impl ScanResult {
    pub fn rule_index(&self, name: &str) -> Option<usize> {
        self.rules.iter().position(|r| r == name)
    }

    /// Exact rates of one rule along the axis.
    pub fn analytic_rates(&self, rule: usize) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.analytic.as_ref().map(|a| a[rule])).collect()
    }

    pub fn counts(&self, rule: usize) -> Option<Vec<u64>> {
        self.rows.iter().map(|r| r.counts.as_ref().map(|c| c[rule])).collect()
    }

    fn analytic_points(&self, rule: usize) -> Option<Vec<DataPoint>> {
        let rates = self.analytic_rates(rule)?;
        Some(
            self.rows
                .iter()
                .zip(rates)
                .map(|(r, y)| DataPoint::exact(r.x, y))
                .collect(),
        )
    }

    fn sampled_points(&self, rule: usize) -> Option<Vec<DataPoint>> {
        let counts = self.counts(rule)?;
        Some(
            self.rows
                .iter()
                .zip(counts)
                .map(|(r, n)| DataPoint::new(r.x, n as f64, (n as f64).sqrt()))
                .collect(),
        )
    }
}

fn point_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Evaluates every scan point, in parallel when allowed, keeping axis order.
fn scan<F>(axis: &str, xs: &[f64], rules: &[CoincidenceRule], mode: &RunMode, table_at: F) -> Result<ScanResult>
where
    F: Fn(f64) -> Result<OutcomeTable> + Sync + Send,
{
    if !mode.analytic && mode.sampling.is_none() {
        return Err(Error::Config("nothing to compute: enable analytic or sampling".into()));
    }
    let rows = exec::map_indexed(mode.exec, xs.len(), |i| -> Result<ScanRow> {
        let table = table_at(xs[i])?;
        let analytic = if mode.analytic {
            Some(table.probabilities(rules)?)
        } else {
            None
        };
        let counts = match mode.sampling {
            Some(s) => Some(
                table
                    .simulate(rules, s.pulses, point_seed(s.seed, i), mode.exec)?
                    .counts,
            ),
            None => None,
        };
        Ok(ScanRow {
            x: xs[i],
            analytic,
            counts,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult {
        axis: axis.to_string(),
        rules: rules.iter().map(|r| r.name.clone()).collect(),
        pulses: mode.sampling.map(|s| s.pulses),
        rows,
        analytic: None,
        sampled: None,
    })
}

fn emission(config: &ExperimentConfig, sources: &[SourceSpec], space: &Arc<FockSpace>) -> Result<StateVector> {
    match config.pair_order {
        PairOrder::FirstOrder => single_pairs(sources, space),
        PairOrder::Truncated => spdc_emit_joint(sources, space, 2),
    }
}

fn analyzer(phase: f64, config: &ExperimentConfig) -> TimeBinDevice {
    TimeBinDevice::Interferometer(InterferometerSpec::balanced(phase).with_visibility(config.analyzer_visibility))
}

/// Alice's preparation interferometer for a given qubit.
pub fn preparation_device(qubit: &TimeBinQubit) -> TimeBinDevice {
    TimeBinDevice::Interferometer(InterferometerSpec::balanced(qubit.alpha).with_coupling(qubit.a0 * qubit.a0))
}

/// Optical state just before the detectors of the teleportation setup.
///
/// Alice's photon passes `alice`, is made partially distinguishable by
/// `overlap` and meets Charlie's photon on the beam splitter; Bob's photon
/// passes `bob` when given.
pub fn teleportation_state(
    config: &ExperimentConfig,
    alice: &TimeBinDevice,
    bob: Option<&TimeBinDevice>,
    overlap: f64,
) -> Result<StateVector> {
    let space = FockSpace::standard();
    let state = emission(config, &[config.qubit_source(), config.epr_source()], &space)?;
    let state = propagate(&state, alice, Spatial::Alice)?;
    let state = state.rotate_distinguishability(|m| m.spatial == Spatial::Alice, overlap)?;
    let state = state
        .beam_splitter(Spatial::Alice, Spatial::Charlie, 0.5)?
        .relabel_port(Spatial::Alice, Spatial::BsmOut1)?
        .relabel_port(Spatial::Charlie, Spatial::BsmOut2)?;
    match bob {
        Some(device) => propagate(&state, device, Spatial::Bob),
        None => Ok(state),
    }
}

fn teleportation_bank(config: &ExperimentConfig, bob_slots: std::ops::Range<u8>) -> Result<DetectorBank> {
    let bsm = config.bsm_survival();
    let d = &config.detectors;
    DetectorBank::new(
        vec![
            Station::new(d.c1, Spatial::BsmOut1, bsm, 0..2),
            Station::new(d.c2, Spatial::BsmOut2, bsm, 0..2),
            Station::new(d.b, Spatial::Bob, config.bob_survival(), bob_slots),
        ],
        Some(DetectorLabel::C1),
    )
}

/// Bob's analyzer phase with the `iσ_y` correction folded in: on the equator
/// the correction is a π phase shift.
fn corrected_analyzer_phase(beta: f64) -> f64 {
    beta + PI
}

pub const THREEFOLD: &str = "threefold";
pub const FOURFOLD: &str = "fourfold";

/// Three-fold and four-fold rules with Bob in the middle slot.
pub fn equator_rules() -> Vec<CoincidenceRule> {
    vec![
        CoincidenceRule::threefold(THREEFOLD, 1),
        CoincidenceRule::fourfold(FOURFOLD, 1),
    ]
}

/// Detector-level outcomes for an equatorial input of phase α and analyzer
/// phase β.
pub fn equator_table(config: &ExperimentConfig, beta: f64) -> Result<OutcomeTable> {
    let alice = preparation_device(&TimeBinQubit::equator(config.alpha));
    let bob = analyzer(corrected_analyzer_phase(beta), config);
    let state = teleportation_state(config, &alice, Some(&bob), config.effective_overlap())?;
    Ok(OutcomeTable::from_state(&state, &teleportation_bank(config, 0..3)?))
}

/// Scans Bob's analyzer phase β with an equatorial input of phase α.
///
/// The four-fold rate follows `c·(1 + V cos(α + β))`; the fidelity is
/// `(1 + V)/2`. The three-fold rate carries no phase information.
pub fn run_teleportation_equator(config: &ExperimentConfig, betas: &[f64], mode: &RunMode) -> Result<ScanResult> {
    config.validate()?;
    let mut result = scan("beta", betas, &equator_rules(), mode, |beta| {
        equator_table(config, beta)
    })?;
    let four = 1;
    if let Some(points) = result.analytic_points(four) {
        result.analytic = Some(exact_summary(fringe_summary(&points)?));
    }
    if let Some(points) = result.sampled_points(four) {
        result.sampled = Some(fringe_summary(&points)?);
    }
    Ok(result)
}

/// Analytic curves are exact; only the fit detail keeps its residual spread.
fn exact_summary(mut s: Summary) -> Summary {
    for e in [&mut s.visibility, &mut s.fidelity].into_iter().flatten() {
        e.error = 0.0;
    }
    s
}

fn fringe_summary(points: &[DataPoint]) -> Result<Summary> {
    if points.iter().all(|p| p.y == 0.0) {
        return Err(Error::Fit("all rates are zero".into()));
    }
    let fit = fit_sinusoid(points)?;
    Ok(Summary {
        visibility: Some(Estimate {
            value: fit.visibility,
            error: fit.visibility_err,
        }),
        fidelity: Some(Estimate {
            value: (1.0 + fit.visibility) / 2.0,
            error: fit.visibility_err / 2.0,
        }),
        fit: Some(FitDetail::Sinusoid(fit)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pole {
    Early,
    Late,
}

impl Pole {
    pub fn slot(self) -> u8 {
        match self {
            Pole::Early => 0,
            Pole::Late => 1,
        }
    }

    /// Slot where Bob's photon should arrive: the teleported pole is bit
    /// flipped.
    pub fn correct_bob_slot(self) -> u8 {
        1 - self.slot()
    }
}

/// Four-fold rules with Bob in slot 0 and in slot 1.
pub fn pole_rules() -> Vec<CoincidenceRule> {
    vec![
        CoincidenceRule::fourfold("fourfold_b0", 0),
        CoincidenceRule::fourfold("fourfold_b1", 1),
    ]
}

/// Detector-level outcomes for a pole input read through a plain fiber.
pub fn pole_table(config: &ExperimentConfig, pole: Pole) -> Result<OutcomeTable> {
    let alice = TimeBinDevice::Fiber {
        delay_slots: pole.slot(),
    };
    let bob = TimeBinDevice::Fiber { delay_slots: 0 };
    let state = teleportation_state(config, &alice, Some(&bob), config.effective_overlap())?;
    Ok(OutcomeTable::from_state(&state, &teleportation_bank(config, 0..2)?))
}

/// Sends pole states and reads Bob's arrival time through a plain fiber.
///
/// Rows are indexed by the input slot; rules count four-folds with Bob in
/// slot 0 and slot 1. The fidelity is the mean over inputs of
/// `R_correct / (R_correct + R_wrong)`.
pub fn run_teleportation_poles(config: &ExperimentConfig, inputs: &[Pole], mode: &RunMode) -> Result<ScanResult> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::Config("no pole inputs".into()));
    }
    let xs: Vec<f64> = inputs.iter().map(|p| p.slot() as f64).collect();
    let mut result = scan("input_slot", &xs, &pole_rules(), mode, |x| {
        pole_table(config, if x == 0.0 { Pole::Early } else { Pole::Late })
    })?;

    let split = |pole: Pole, v: &[f64]| {
        let c = pole.correct_bob_slot() as usize;
        (v[c], v[1 - c])
    };
    let n = inputs.len() as f64;
    if mode.analytic {
        let mut total = 0.0;
        for (row, &pole) in result.rows.iter().zip(inputs) {
            let (c, w) = split(pole, row.analytic.as_deref().unwrap_or(&[0.0, 0.0]));
            if c + w <= 0.0 {
                return Err(Error::Fit("no four-fold events".into()));
            }
            total += c / (c + w);
        }
        result.analytic = Some(pole_summary(total / n, 0.0));
    }
    if mode.sampling.is_some() {
        let (mut total, mut var) = (0.0, 0.0);
        for (row, &pole) in result.rows.iter().zip(inputs) {
            let counts: Vec<f64> = row.counts.iter().flatten().map(|&c| c as f64).collect();
            let (c, w) = split(pole, &counts);
            if c + w <= 0.0 {
                return Err(Error::Fit("no four-fold events".into()));
            }
            let f = c / (c + w);
            total += f;
            var += f * (1.0 - f) / (c + w);
        }
        result.sampled = Some(pole_summary(total / n, var.sqrt() / n));
    }
    Ok(result)
}

fn pole_summary(fidelity: f64, error: f64) -> Summary {
    Summary {
        visibility: None,
        fidelity: Some(Estimate { value: fidelity, error }),
        fit: None,
    }
}

/// `F_poles/3 + 2·F_equator/3`, the average over the Bloch sphere.
pub fn total_fidelity(f_poles: f64, f_equator: f64) -> f64 {
    f_poles / 3.0 + 2.0 * f_equator / 3.0
}

/// Fidelity of equatorial states from the beam-splitter and analyzer
/// visibilities.
pub fn fidelity_from_components(v_bsm: f64, v_int: f64) -> f64 {
    v_bsm * (1.0 + v_int) / 2.0 + (1.0 - v_bsm) / 2.0
}

/// Inverse of [`fidelity_from_components`] in `v_bsm`.
pub fn v_bsm_from_fidelity(fidelity: f64, v_int: f64) -> Result<f64> {
    check_range("v_int", v_int, 0.0, 1.0, "[0, 1]")?;
    if v_int == 0.0 {
        return Err(Error::Config("fidelity does not depend on v_bsm when v_int = 0".into()));
    }
    Ok((2.0 * fidelity - 1.0) / v_int)
}

/// Ideal teleportation of one qubit through the single-pair chain.
#[derive(Clone, Debug, PartialEq)]
pub struct IdealTeleportation {
    /// Probability of the BSM pattern with C2 early and C1 late.
    pub probability: f64,
    /// Bob's conditional (early, late) amplitudes.
    pub bob: [Complex64; 2],
    /// Fidelity to the input after the `iσ_y` correction.
    pub corrected_fidelity: f64,
}

pub fn teleport_ideal(qubit: &TimeBinQubit) -> Result<IdealTeleportation> {
    let config = ExperimentConfig::ideal();
    let space = FockSpace::standard();
    let photon = single_pairs(&[config.qubit_source()], &space)?;
    let prepared = prepare_qubit(&preparation_device(qubit), &photon, Spatial::Alice)?;
    let epr = single_pairs(&[config.epr_source()], &space)?;
    let state = prepared
        .state
        .tensor(&epr)?
        .beam_splitter(Spatial::Alice, Spatial::Charlie, 0.5)?
        .relabel_port(Spatial::Alice, Spatial::BsmOut1)?
        .relabel_port(Spatial::Charlie, Spatial::BsmOut2)?;
    let pattern = BTreeMap::from([
        (ModeId::new(Spatial::BsmOut1, 1, Band::Nm1310), 1),
        (ModeId::new(Spatial::BsmOut2, 0, Band::Nm1310), 1),
    ]);
    let selected = state.postselect(&pattern, |m| matches!(m.spatial, Spatial::BsmOut1 | Spatial::BsmOut2));
    let conditional = selected.conditional.ok_or(Error::NullState)?;
    let (early, late) = bob_modes();
    // Alice's twin photon factors out; read Bob's amplitudes beside it.
    let mut bob = [Complex64::new(0.0, 0.0); 2];
    for (basis, amp) in conditional.iter() {
        let mut rest = basis.iter().filter(|(m, _)| m.spatial != Spatial::Bob);
        if rest.any(|(m, _)| m.spatial != Spatial::AliceTwin) {
            return Err(Error::Config("unexpected photon beside Bob's qubit".into()));
        }
        if basis.count(&early) == 1 {
            bob[0] += amp;
        } else if basis.count(&late) == 1 {
            bob[1] += amp;
        }
    }
    let corrected = pauli_correction(&conditional, Pauli::Both, (early, late))?;
    Ok(IdealTeleportation {
        probability: selected.probability,
        bob,
        corrected_fidelity: qubit_fidelity(&corrected, qubit, (early, late))?,
    })
}

fn bob_modes() -> (ModeId, ModeId) {
    (
        ModeId::new(Spatial::Bob, 0, Band::Nm1550),
        ModeId::new(Spatial::Bob, 1, Band::Nm1550),
    )
}

/// Probability that two single photons with overlap `overlap` leave a
/// balanced beam splitter by different ports.
pub fn two_photon_coincidence(overlap: f64) -> Result<f64> {
    let space = FockSpace::standard();
    let a = ModeId::new(Spatial::Alice, 0, Band::Nm1310);
    let c = ModeId::new(Spatial::Charlie, 0, Band::Nm1310);
    let state = StateVector::new(
        &space,
        [(
            crate::fock::FockBasisState::from_counts([(a, 1), (c, 1)]),
            Complex64::new(1.0, 0.0),
        )],
    )?
    .rotate_distinguishability(|m| m.spatial == Spatial::Alice, overlap)?
    .beam_splitter(Spatial::Alice, Spatial::Charlie, 0.5)?;
    Ok(state.probability_where(|b| {
        let on = |p: Spatial| {
            b.iter()
                .filter(|(m, _)| m.spatial == p)
                .map(|&(_, n)| n as u32)
                .sum::<u32>()
        };
        on(Spatial::Alice) == 1 && on(Spatial::Charlie) == 1
    }))
}

pub const HOM_RULE: &str = "coincidence";

/// Both sources pumped in a single bin; Alice's photon is delayed by δ and
/// C1·C2 coincidences in that bin are counted.
pub fn hom_state(config: &ExperimentConfig, overlap: f64) -> Result<StateVector> {
    let space = FockSpace::standard();
    let qubit = config.qubit_source();
    let epr = SourceSpec {
        pair_amplitude: (config.qubit_pair_probability / config.hom_pump_ratio).sqrt(),
        pump_bins: vec![PumpBin {
            time_bin: 0,
            phase: 0.0,
        }],
        ..config.epr_source()
    };
    emission(config, &[qubit, epr], &space)?
        .rotate_distinguishability(|m| m.spatial == Spatial::Alice, overlap)?
        .beam_splitter(Spatial::Alice, Spatial::Charlie, 0.5)?
        .relabel_port(Spatial::Alice, Spatial::BsmOut1)?
        .relabel_port(Spatial::Charlie, Spatial::BsmOut2)
}

fn hom_bank(config: &ExperimentConfig) -> Result<DetectorBank> {
    let bsm = config.bsm_survival();
    let d = &config.detectors;
    DetectorBank::new(
        vec![
            Station::new(d.c1, Spatial::BsmOut1, bsm, 0..1),
            Station::new(d.c2, Spatial::BsmOut2, bsm, 0..1),
        ],
        Some(DetectorLabel::C1),
    )
}

pub fn hom_rule() -> CoincidenceRule {
    CoincidenceRule::new(
        HOM_RULE,
        vec![
            (DetectorLabel::C1, SlotMatch::Exactly(0)),
            (DetectorLabel::C2, SlotMatch::Exactly(0)),
        ],
        DEFAULT_WINDOW_NS,
    )
    .expect("default window is valid")
}

pub fn hom_table(config: &ExperimentConfig, overlap: f64) -> Result<OutcomeTable> {
    Ok(OutcomeTable::from_state(
        &hom_state(config, overlap)?,
        &hom_bank(config)?,
    ))
}

/// Exact coincidence probability per pulse at a given overlap.
pub fn hom_coincidence_probability(config: &ExperimentConfig, overlap: f64) -> Result<f64> {
    config.validate()?;
    Ok(hom_table(config, overlap)?.probabilities(&[hom_rule()])?[0])
}

/// Dip visibility `1 - R(overlap)/R(0)` from exact rates.
pub fn hom_visibility(config: &ExperimentConfig, overlap: f64) -> Result<f64> {
    let far = hom_coincidence_probability(config, 0.0)?;
    if far <= 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - hom_coincidence_probability(config, overlap)? / far)
}

/// Scans the path mismatch δ (μm) and fits a Gaussian dip.
pub fn run_hom_scan(config: &ExperimentConfig, delays_um: &[f64], mode: &RunMode) -> Result<ScanResult> {
    config.validate()?;
    let mut result = scan("delay_um", delays_um, &[hom_rule()], mode, |delay| {
        hom_table(config, config.mode_overlap * overlap_from_delay(delay, &config.filter))
    })?;
    if let Some(points) = result.analytic_points(0) {
        result.analytic = Some(exact_summary(dip_summary(&points)?));
    }
    if let Some(points) = result.sampled_points(0) {
        result.sampled = Some(dip_summary(&points)?);
    }
    Ok(result)
}

fn dip_summary(points: &[DataPoint]) -> Result<Summary> {
    let fit = fit_gaussian_dip(points)?;
    Ok(Summary {
        visibility: Some(Estimate {
            value: fit.visibility,
            error: fit.visibility_err,
        }),
        fidelity: None,
        fit: Some(FitDetail::Dip(fit)),
    })
}

pub const FRANSON_RULE: &str = "middle_middle";

/// Entangled photons only, each through its own analyzer; Bob's analyzer
/// carries the configured visibility.
pub fn franson_state(config: &ExperimentConfig, alpha: f64, beta: f64) -> Result<StateVector> {
    let space = FockSpace::standard();
    let state = emission(config, &[config.epr_source()], &space)?;
    let charlie = TimeBinDevice::Interferometer(InterferometerSpec::balanced(alpha));
    let state = propagate(&state, &charlie, Spatial::Charlie)?;
    propagate(&state, &analyzer(beta, config), Spatial::Bob)
}

fn franson_bank(config: &ExperimentConfig) -> Result<DetectorBank> {
    let d = &config.detectors;
    DetectorBank::new(
        vec![
            Station::new(
                d.c1,
                Spatial::Charlie,
                survival_probability(&config.fiber_charlie),
                0..3,
            ),
            Station::new(d.b, Spatial::Bob, config.bob_survival(), 0..3),
        ],
        Some(DetectorLabel::C1),
    )
}

pub fn franson_rule() -> CoincidenceRule {
    CoincidenceRule::new(
        FRANSON_RULE,
        vec![
            (DetectorLabel::C1, SlotMatch::Exactly(1)),
            (DetectorLabel::B, SlotMatch::Exactly(1)),
        ],
        DEFAULT_WINDOW_NS,
    )
    .expect("default window is valid")
}

/// Detector-level outcomes with analyzer phases α (configured) and
/// `phase_sum - α`.
pub fn franson_table(config: &ExperimentConfig, phase_sum: f64) -> Result<OutcomeTable> {
    let state = franson_state(config, config.alpha, phase_sum - config.alpha)?;
    Ok(OutcomeTable::from_state(&state, &franson_bank(config)?))
}

/// Scans `α + β` with α fixed at the configured value. The middle-slot
/// coincidence rate follows `c·(1 + V cos(α + β - φ))`.
pub fn run_franson_scan(config: &ExperimentConfig, phase_sums: &[f64], mode: &RunMode) -> Result<ScanResult> {
    config.validate()?;
    let mut result = scan("alpha_plus_beta", phase_sums, &[franson_rule()], mode, |sum| {
        franson_table(config, sum)
    })?;
    let visibility_only = |mut s: Summary| {
        s.fidelity = None;
        s
    };
    if let Some(points) = result.analytic_points(0) {
        result.analytic = Some(exact_summary(visibility_only(fringe_summary(&points)?)));
    }
    if let Some(points) = result.sampled_points(0) {
        result.sampled = Some(visibility_only(fringe_summary(&points)?));
    }
    Ok(result)
}

/// `n` phases evenly spread over one period.
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Qubit over EPR pair probability, total pair probability held fixed.
    PumpRatio,
    DelayUm,
    ModeOverlap,
    /// Applied to all three detectors.
    DarkProbPerNs,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::PumpRatio => "pump_ratio",
            SweepParameter::DelayUm => "delay_um",
            SweepParameter::ModeOverlap => "mode_overlap",
            SweepParameter::DarkProbPerNs => "dark_prob_per_ns",
        }
    }

    pub fn apply(self, config: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = config.clone();
        match self {
            SweepParameter::PumpRatio => {
                let total = config.qubit_pair_probability + config.epr_pair_probability();
                c.pump_ratio = value;
                c.qubit_pair_probability = total * value / (1.0 + value);
            }
            SweepParameter::DelayUm => c.delay_um = value,
            SweepParameter::ModeOverlap => c.mode_overlap = value,
            SweepParameter::DarkProbPerNs => c.detectors.set_dark_prob_per_ns(value),
        }
        c
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pump_ratio" => Ok(Self::PumpRatio),
            "delay_um" => Ok(Self::DelayUm),
            "mode_overlap" => Ok(Self::ModeOverlap),
            "dark_prob_per_ns" => Ok(Self::DarkProbPerNs),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub poles: Estimate,
    pub equator: Estimate,
    pub visibility: Estimate,
    pub total: Estimate,
}

impl FidelityReport {
    fn combine(poles: Estimate, equator: Estimate, visibility: Estimate) -> Self {
        let total = Estimate {
            value: total_fidelity(poles.value, equator.value),
            error: ((poles.error / 3.0).powi(2) + (2.0 * equator.error / 3.0).powi(2)).sqrt(),
        };
        Self {
            poles,
            equator,
            visibility,
            total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub analytic: Option<FidelityReport>,
    pub sampled: Option<FidelityReport>,
}

/// Pole, equator and total fidelities of one configuration.
pub fn teleportation_fidelity(config: &ExperimentConfig, mode: &RunMode) -> Result<SweepPoint> {
    let poles = run_teleportation_poles(config, &[Pole::Early, Pole::Late], mode)?;
    let equator = run_teleportation_equator(config, &phase_grid(FRINGE_POINTS), mode)?;
    let report = |p: &Option<Summary>, e: &Option<Summary>| -> Option<FidelityReport> {
        let (p, e) = (p.as_ref()?, e.as_ref()?);
        Some(FidelityReport::combine(p.fidelity?, e.fidelity?, e.visibility?))
    };
    Ok(SweepPoint {
        value: f64::NAN,
        analytic: report(&poles.analytic, &equator.analytic),
        sampled: report(&poles.sampled, &equator.sampled),
    })
}

pub fn run_sweep(
    config: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[f64],
    mode: &RunMode,
) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = parameter.apply(config, v);
            c.validate()?;
            let m = RunMode {
                sampling: mode.sampling.map(|s| Sampling {
                    seed: point_seed(s.seed ^ 0x5DEE_CE66_D1CE_5EED, i),
                    ..s
                }),
                ..*mode
            };
            Ok(SweepPoint {
                value: v,
                ..teleportation_fidelity(&c, &m)?
            })
        })
        .collect()
}
