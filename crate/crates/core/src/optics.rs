//! Pair sources, unbalanced interferometers and the canonical two-qubit states.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::smallvec;

use crate::error::{check_range, Error, Result};
use crate::fock::{raise, Band, FockBasisState, FockSpace, Ket, ModeId, Ortho, Spatial, StateVector};

/// Upper bound on the per-bin pair amplitude λ.
pub const MAX_PAIR_AMPLITUDE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpBin {
    pub time_bin: u8,
    /// Phase relative to the first bin, radians.
    pub phase: f64,
}

/// Down-conversion source pumped in one or more time bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// λ per pump bin; the one-pair probability per bin is ≈ λ².
    pub pair_amplitude: f64,
    pub pump_bins: Vec<PumpBin>,
    pub signal: (Spatial, Band),
    pub idler: (Spatial, Band),
}

impl SourceSpec {
    /// Single-bin source feeding Alice's photon; the idler is never detected.
    pub fn qubit_source(pair_amplitude: f64) -> Self {
        Self {
            pair_amplitude,
            pump_bins: vec![PumpBin {
                time_bin: 0,
                phase: 0.0,
            }],
            signal: (Spatial::Alice, Band::Nm1310),
            idler: (Spatial::AliceTwin, Band::Nm1550),
        }
    }

    /// Source behind the pump interferometer: two bins with relative phase φ.
    pub fn epr_source(pair_amplitude: f64, pump_phase: f64) -> Self {
        Self {
            pair_amplitude,
            pump_bins: vec![
                PumpBin {
                    time_bin: 0,
                    phase: 0.0,
                },
                PumpBin {
                    time_bin: 1,
                    phase: pump_phase,
                },
            ],
            signal: (Spatial::Charlie, Band::Nm1310),
            idler: (Spatial::Bob, Band::Nm1550),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range(
            "pair_amplitude",
            self.pair_amplitude,
            0.0,
            MAX_PAIR_AMPLITUDE,
            "[0, 0.5]",
        )?;
        if self.pump_bins.is_empty() {
            return Err(Error::Config("source needs at least one pump bin".into()));
        }
        Ok(())
    }

    /// (signal mode, idler mode, λ e^{iφ}) for every pump bin.
    fn pair_terms(&self) -> impl Iterator<Item = (ModeId, ModeId, Complex64)> + '_ {
        self.pump_bins.iter().map(move |bin| {
            (
                ModeId::new(self.signal.0, bin.time_bin, self.signal.1),
                ModeId::new(self.idler.0, bin.time_bin, self.idler.1),
                Complex64::from_polar(self.pair_amplitude, bin.phase),
            )
        })
    }
}

/// Applies Σ c s† i† to a ket.
fn apply_pair_creation(ket: &Ket, terms: &[(ModeId, ModeId, Complex64)]) -> Ket {
    let mut out = Ket::new();
    for &(s, i, c) in terms {
        for (b, a) in raise(&raise(ket, s), i) {
            *out.entry(b).or_default() += a * c;
        }
    }
    out
}

/// Output of one source: `exp(Σ λ e^{iφ_t} s_t† i_t†)|0⟩` truncated at two
/// pairs and renormalized.
pub fn spdc_emit(spec: &SourceSpec, space: &Arc<FockSpace>) -> Result<StateVector> {
    spdc_emit_joint(std::slice::from_ref(spec), space, 2)
}

/// Joint output of several independent sources, expanded to `max_pairs`
/// pairs in total. Dropped terms are O(λ^(2·max_pairs+2)) in probability.
pub fn spdc_emit_joint(specs: &[SourceSpec], space: &Arc<FockSpace>, max_pairs: u8) -> Result<StateVector> {
    let needed = 2 * max_pairs as u32;
    if needed > space.max_photons() as u32 {
        return Err(Error::TruncationExceeded {
            photons: needed,
            max: space.max_photons(),
        });
    }
    let mut terms = Vec::new();
    for spec in specs {
        spec.validate()?;
        terms.extend(spec.pair_terms());
    }
    check_modes(space, &terms)?;

    let mut total = Ket::new();
    let mut order = Ket::new();
    order.insert(FockBasisState::vacuum(), Complex64::new(1.0, 0.0));
    for k in 0..=max_pairs {
        if k > 0 {
            // X^k/k! = X · X^(k-1)/(k-1)! / k
            order = apply_pair_creation(&order, &terms);
            for a in order.values_mut() {
                *a /= k as f64;
            }
        }
        for (b, a) in &order {
            *total.entry(b.clone()).or_default() += a;
        }
    }
    StateVector::from_ket(space.clone(), total)
}

/// Exactly one pair from each source, normalized.
pub fn single_pairs(specs: &[SourceSpec], space: &Arc<FockSpace>) -> Result<StateVector> {
    let mut state = StateVector::vacuum(space);
    for spec in specs {
        spec.validate()?;
        let terms: Vec<_> = spec.pair_terms().collect();
        check_modes(space, &terms)?;
        let mut vac = Ket::new();
        vac.insert(FockBasisState::vacuum(), Complex64::new(1.0, 0.0));
        let pair = StateVector::from_ket(space.clone(), apply_pair_creation(&vac, &terms))?;
        state = state.tensor(&pair)?;
    }
    Ok(state)
}

fn check_modes(space: &Arc<FockSpace>, terms: &[(ModeId, ModeId, Complex64)]) -> Result<()> {
    for (s, i, _) in terms {
        for m in [s, i] {
            if !space.has_port(m.spatial) {
                return Err(Error::UnknownPort(m.spatial));
            }
            if m.time_bin >= space.slots() {
                return Err(Error::SlotOutOfRange {
                    bin: m.time_bin as i64,
                    slots: space.slots(),
                });
            }
        }
    }
    Ok(())
}

/// Unbalanced two-path interferometer with one monitored output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferometerSpec {
    /// Long-arm delay in time bins.
    pub delay_slots: u8,
    /// Phase of the long-path amplitude relative to the short path at the
    /// monitored output, radians in [0, 2π).
    pub phase: f64,
    pub insertion_loss: f64,
    /// Intensity transmissivity of the input coupler into the short arm.
    pub coupling: f64,
    /// Mode overlap between the two arms at recombination.
    pub visibility: f64,
}

impl InterferometerSpec {
    pub fn balanced(phase: f64) -> Self {
        Self {
            delay_slots: 1,
            phase: phase.rem_euclid(2.0 * PI),
            insertion_loss: 0.0,
            coupling: 0.5,
            visibility: 1.0,
        }
    }

    pub fn with_visibility(mut self, visibility: f64) -> Self {
        self.visibility = visibility;
        self
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay_slots < 1 {
            return Err(Error::Config("interferometer delay must be at least one slot".into()));
        }
        check_range("insertion_loss", self.insertion_loss, 0.0, 1.0, "[0, 1]")?;
        check_range("coupling", self.coupling, 0.0, 1.0, "[0, 1]")?;
        check_range("visibility", self.visibility, 0.0, 1.0, "[0, 1]")?;
        Ok(())
    }
}

/// Either an interferometer or a plain fiber of fixed delay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimeBinDevice {
    Interferometer(InterferometerSpec),
    Fiber { delay_slots: u8 },
}

/// Internal long-arm port paired with a monitored port.
pub fn arm_port(port: Spatial) -> Result<Spatial> {
    match port {
        Spatial::Alice => Ok(Spatial::AliceArm),
        Spatial::Charlie => Ok(Spatial::CharlieArm),
        Spatial::Bob => Ok(Spatial::BobArm),
        other => Err(Error::Config(format!("no interferometer arm for port {other:?}"))),
    }
}

/// Runs `state` through the device on `port`. Photons leaving by the
/// unmonitored output stay in the arm port, where no detector sees them.
pub fn propagate(state: &StateVector, device: &TimeBinDevice, port: Spatial) -> Result<StateVector> {
    match device {
        TimeBinDevice::Fiber { delay_slots } => state.time_shift(|m| m.spatial == port, *delay_slots as i32),
        TimeBinDevice::Interferometer(spec) => {
            spec.validate()?;
            let arm = arm_port(port)?;
            if state.iter().any(|(b, _)| b.iter().any(|(m, _)| m.spatial == arm)) {
                return Err(Error::Config(format!("interferometer arm {arm:?} is occupied")));
            }
            let on_arm = move |m: &ModeId| m.spatial == arm;
            // The two reflections on the long path contribute i·i = -1.
            state
                .beam_splitter(port, arm, spec.coupling)?
                .time_shift(on_arm, spec.delay_slots as i32)?
                .phase_shift(on_arm, spec.phase + PI)?
                .rotate_distinguishability(on_arm, spec.visibility)?
                .beam_splitter(port, arm, 0.5)
        }
    }
}

fn single_photon_on(state: &StateVector, port: Spatial) -> Result<()> {
    for (basis, _) in state.iter() {
        let found: u32 = basis
            .iter()
            .filter(|(m, _)| m.spatial == port)
            .map(|&(_, n)| n as u32)
            .sum();
        if found != 1 {
            let modes = basis.iter().map(|(m, _)| *m).collect();
            return Err(Error::PhotonNumber {
                expected: 1,
                found,
                modes,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub state: StateVector,
    /// Probability lost to the unmonitored port and insertion loss.
    pub discarded: f64,
}

/// Encodes a single photon on `port` as a time-bin qubit.
pub fn prepare_qubit(device: &TimeBinDevice, input: &StateVector, port: Spatial) -> Result<Prepared> {
    single_photon_on(input, port)?;
    let out = propagate(input, device, port)?;
    match device {
        TimeBinDevice::Fiber { .. } => Ok(Prepared {
            state: out,
            discarded: 0.0,
        }),
        TimeBinDevice::Interferometer(spec) => {
            let arm = arm_port(port)?;
            let kept = out.postselect(&BTreeMap::new(), |m| m.spatial == arm);
            let state = kept.conditional.ok_or(Error::NullState)?;
            Ok(Prepared {
                state,
                discarded: 1.0 - kept.probability * (1.0 - spec.insertion_loss),
            })
        }
    }
}

/// Monitored-output content of one arrival slot.
#[derive(Clone, Debug)]
pub struct SlotOutcome {
    pub probability: f64,
    /// Sub-normalized kets with the analyzed photon in this slot.
    pub amplitudes: Vec<(FockBasisState, Complex64)>,
}

#[derive(Clone, Debug)]
pub struct AnalyzerOutput {
    pub slots: BTreeMap<u8, SlotOutcome>,
    pub discarded: f64,
}

impl AnalyzerOutput {
    pub fn probability(&self, slot: u8) -> f64 {
        self.slots.get(&slot).map_or(0.0, |s| s.probability)
    }
}

/// Analyzes a one-photon time-bin qubit on `port`, returning per-slot
/// detection amplitudes at the monitored output.
pub fn analyze_qubit(device: &TimeBinDevice, state: &StateVector, port: Spatial) -> Result<AnalyzerOutput> {
    single_photon_on(state, port)?;
    let bins: Vec<u8> = state
        .iter()
        .flat_map(|(b, _)| b.iter().filter(|(m, _)| m.spatial == port).map(|(m, _)| m.time_bin))
        .collect();
    let first = *bins.iter().min().ok_or(Error::NullState)?;
    if let Some(&bad) = bins.iter().find(|&&t| t > first + 1) {
        return Err(Error::UnexpectedSlot(bad));
    }

    let out = propagate(state, device, port)?;
    let loss = match device {
        TimeBinDevice::Interferometer(spec) => spec.insertion_loss,
        TimeBinDevice::Fiber { .. } => 0.0,
    };
    let mut slots: BTreeMap<u8, SlotOutcome> = BTreeMap::new();
    let mut monitored = 0.0;
    for (basis, amp) in out.iter() {
        let Some((mode, _)) = basis.iter().find(|(m, _)| m.spatial == port) else {
            continue;
        };
        let p = amp.norm_sqr() * (1.0 - loss);
        monitored += p;
        let entry = slots.entry(mode.time_bin).or_insert(SlotOutcome {
            probability: 0.0,
            amplitudes: Vec::new(),
        });
        entry.probability += p;
        entry.amplitudes.push((basis.clone(), amp * (1.0 - loss).sqrt()));
    }
    Ok(AnalyzerOutput {
        slots,
        discarded: 1.0 - monitored,
    })
}

#[derive(Clone, Debug)]
pub struct BellStates {
    pub phi_plus: StateVector,
    pub phi_minus: StateVector,
    pub psi_plus: StateVector,
    pub psi_minus: StateVector,
}

/// The four Bell states on two time-bin qubits given as (early, late) modes.
pub fn bell_states(space: &Arc<FockSpace>, first: (ModeId, ModeId), second: (ModeId, ModeId)) -> Result<BellStates> {
    let pair = |x: ModeId, y: ModeId| FockBasisState::from_counts([(x, 1), (y, 1)]);
    let ee = pair(first.0, second.0);
    let ll = pair(first.1, second.1);
    let el = pair(first.0, second.1);
    let le = pair(first.1, second.0);
    let one = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let make = |a: &FockBasisState, b: &FockBasisState, sign: f64| {
        StateVector::new(space, [(a.clone(), one), (b.clone(), one * sign)])
    };
    Ok(BellStates {
        phi_plus: make(&ee, &ll, 1.0)?,
        phi_minus: make(&ee, &ll, -1.0)?,
        psi_plus: make(&el, &le, 1.0)?,
        psi_minus: make(&el, &le, -1.0)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pauli {
    Identity,
    BitFlip,
    PhaseFlip,
    /// Bit flip followed by phase flip, i.e. `iσ_y`.
    Both,
}

/// Applies a Pauli correction on the time-bin qubit carried by `modes`.
pub fn pauli_correction(state: &StateVector, which: Pauli, modes: (ModeId, ModeId)) -> Result<StateVector> {
    let (early, late) = modes;
    let strip = |m: &ModeId| m.with_ortho(Ortho::Matched);
    for (basis, _) in state.iter() {
        let found: u32 = basis
            .iter()
            .filter(|(m, _)| strip(m) == early || strip(m) == late)
            .map(|&(_, n)| n as u32)
            .sum();
        if found != 1 {
            return Err(Error::PhotonNumber {
                expected: 1,
                found,
                modes: vec![early, late],
            });
        }
    }
    let bit_flip = |s: &StateVector| {
        s.transform(|m| {
            let target = if strip(m) == early {
                late
            } else if strip(m) == late {
                early
            } else {
                return Ok(None);
            };
            Ok(Some(smallvec![(target.with_ortho(m.ortho), Complex64::new(1.0, 0.0))]))
        })
    };
    let phase_flip = |s: &StateVector| s.phase_shift(|m| strip(m) == late, PI);
    match which {
        Pauli::Identity => Ok(state.clone()),
        Pauli::BitFlip => bit_flip(state),
        Pauli::PhaseFlip => phase_flip(state),
        Pauli::Both => phase_flip(&bit_flip(state)?),
    }
}
