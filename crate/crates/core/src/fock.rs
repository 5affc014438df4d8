//! Truncated bosonic Fock space over labelled optical modes.
//!
//! Every optical element in the simulator is a linear map on creation
//! operators. A [`StateVector`] is a sparse superposition of occupation-number
//! kets; elements act on it by substituting each creation operator with a
//! linear combination of output creation operators and re-expanding the
//! product. Photon number is conserved by every such map, so truncation can
//! only be exceeded when states are built or combined, and that is an error.
//!
//! Beam splitters use the symmetric convention with a factor `i` on
//! reflection:
//!
//! ```text
//! a† -> √T a† + i√(1-T) b†
//! b† -> i√(1-T) a† + √T b†
//! ```

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};

use crate::error::{check_range, Error, Result};

/// Amplitudes below this magnitude are dropped after every transformation.
const PRUNE: f64 = 1e-15;

pub const DEFAULT_NORM_TOLERANCE: f64 = 1e-12;

/// Spatial channel of a mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Spatial {
    /// Photon to be teleported, on its way to the Bell-state measurement.
    Alice,
    /// Twin of Alice's photon; never detected.
    AliceTwin,
    AliceArm,
    /// EPR photon sent to the Bell-state measurement.
    Charlie,
    CharlieArm,
    /// EPR photon sent to the receiver.
    Bob,
    BobArm,
    BsmOut1,
    BsmOut2,
    Aux(u8),
}

/// Carrier wavelength tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    Nm1310,
    Nm1550,
}

/// Distinguishability label. Each physical mode has one orthogonal companion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ortho {
    Matched,
    Orthogonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeId {
    pub spatial: Spatial,
    /// Arrival slot in units of the interferometer delay.
    pub time_bin: u8,
    pub band: Band,
    pub ortho: Ortho,
}

impl ModeId {
    pub fn new(spatial: Spatial, time_bin: u8, band: Band) -> Self {
        Self {
            spatial,
            time_bin,
            band,
            ortho: Ortho::Matched,
        }
    }

    pub fn with_ortho(self, ortho: Ortho) -> Self {
        Self { ortho, ..self }
    }

    pub fn companion(self) -> Self {
        let ortho = match self.ortho {
            Ortho::Matched => Ortho::Orthogonal,
            Ortho::Orthogonal => Ortho::Matched,
        };
        Self { ortho, ..self }
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let band = match self.band {
            Band::Nm1310 => 1310,
            Band::Nm1550 => 1550,
        };
        let ortho = match self.ortho {
            Ortho::Matched => "",
            Ortho::Orthogonal => "'",
        };
        write!(f, "{:?}{}[t{}@{}]", self.spatial, ortho, self.time_bin, band)
    }
}

/// Truncation and port registry shared by all states of one simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct FockSpace {
    max_photons: u8,
    slots: u8,
    ports: Vec<Spatial>,
}

impl FockSpace {
    pub fn new(max_photons: u8, slots: u8, ports: &[Spatial]) -> Result<Arc<Self>> {
        if slots < 2 {
            return Err(Error::Config(format!("need at least 2 time slots, got {slots}")));
        }
        if max_photons == 0 {
            return Err(Error::Config("photon truncation must be at least 1".into()));
        }
        let mut ports = ports.to_vec();
        ports.sort();
        ports.dedup();
        Ok(Arc::new(Self {
            max_photons,
            slots,
            ports,
        }))
    }

    /// All named ports, 4 photons, 4 slots.
    pub fn standard() -> Arc<Self> {
        Self::with_truncation(4).expect("static space parameters are valid")
    }

    pub fn with_truncation(max_photons: u8) -> Result<Arc<Self>> {
        use Spatial::*;
        Self::new(
            max_photons,
            4,
            &[
                Alice, AliceTwin, AliceArm, Charlie, CharlieArm, Bob, BobArm, BsmOut1, BsmOut2,
            ],
        )
    }

    pub fn max_photons(&self) -> u8 {
        self.max_photons
    }

    pub fn slots(&self) -> u8 {
        self.slots
    }

    pub fn has_port(&self, port: Spatial) -> bool {
        self.ports.binary_search(&port).is_ok()
    }

    fn check_port(&self, port: Spatial) -> Result<()> {
        if self.has_port(port) {
            Ok(())
        } else {
            Err(Error::UnknownPort(port))
        }
    }

    fn check_mode(&self, mode: &ModeId) -> Result<()> {
        self.check_port(mode.spatial)?;
        if mode.time_bin >= self.slots {
            return Err(Error::SlotOutOfRange {
                bin: mode.time_bin as i64,
                slots: self.slots,
            });
        }
        Ok(())
    }
}

/// Occupation-number ket in canonical form: sorted by mode, no zero entries.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FockBasisState(Vec<(ModeId, u8)>);

impl FockBasisState {
    pub fn vacuum() -> Self {
        Self(Vec::new())
    }

    pub fn single(mode: ModeId) -> Self {
        Self(vec![(mode, 1)])
    }

    pub fn from_counts<I: IntoIterator<Item = (ModeId, u8)>>(counts: I) -> Self {
        let mut map: BTreeMap<ModeId, u8> = BTreeMap::new();
        for (mode, n) in counts {
            *map.entry(mode).or_default() += n;
        }
        Self(map.into_iter().filter(|&(_, n)| n > 0).collect())
    }

    pub fn count(&self, mode: &ModeId) -> u8 {
        self.0
            .binary_search_by(|(m, _)| m.cmp(mode))
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.0.iter().map(|&(_, n)| n as u32).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ModeId, u8)> {
        self.0.iter()
    }

    pub fn is_vacuum(&self) -> bool {
        self.0.is_empty()
    }

    fn with_added(&self, mode: ModeId) -> Self {
        let mut entries = self.0.clone();
        match entries.binary_search_by(|(m, _)| m.cmp(&mode)) {
            Ok(i) => entries[i].1 += 1,
            Err(i) => entries.insert(i, (mode, 1)),
        }
        Self(entries)
    }

    /// Splits into (entries matching `scope`, the rest).
    fn partition(&self, scope: impl Fn(&ModeId) -> bool) -> (Self, Self) {
        let (inside, outside) = self.0.iter().partition(|(m, _)| scope(m));
        (Self(inside), Self(outside))
    }

    /// Π n_k! over occupied modes.
    fn factorial_product(&self) -> f64 {
        self.0.iter().map(|&(_, n)| factorial(n)).product()
    }
}

impl fmt::Display for FockBasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "|vac>");
        }
        write!(f, "|")?;
        for (i, (m, n)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{m}:{n}")?;
        }
        write!(f, ">")
    }
}

fn factorial(n: u8) -> f64 {
    (1..=n as u32).map(f64::from).product()
}

pub(crate) type Ket = BTreeMap<FockBasisState, Complex64>;

/// Image of one creation operator under a linear-optical map.
pub(crate) type ModeImage = SmallVec<[(ModeId, Complex64); 2]>;

/// Result of projecting onto a detection pattern.
#[derive(Clone, Debug)]
pub struct PostSelection {
    pub probability: f64,
    /// Renormalized remainder; `None` when the pattern has zero probability.
    pub conditional: Option<StateVector>,
}

/// Normalized sparse state on a truncated Fock space.
#[derive(Clone, Debug)]
pub struct StateVector {
    space: Arc<FockSpace>,
    amplitudes: Ket,
    norm_tolerance: f64,
}

impl StateVector {
    /// Normalized superposition of the given kets. Repeated kets are summed.
    pub fn new(space: &Arc<FockSpace>, entries: impl IntoIterator<Item = (FockBasisState, Complex64)>) -> Result<Self> {
        let mut amplitudes = Ket::new();
        for (basis, amp) in entries {
            for (mode, _) in basis.iter() {
                space.check_mode(mode)?;
            }
            let photons = basis.total();
            if photons > space.max_photons as u32 {
                return Err(Error::TruncationExceeded {
                    photons,
                    max: space.max_photons,
                });
            }
            *amplitudes.entry(basis).or_default() += amp;
        }
        Self::from_ket(space.clone(), amplitudes)
    }

    pub fn vacuum(space: &Arc<FockSpace>) -> Self {
        let mut amplitudes = Ket::new();
        amplitudes.insert(FockBasisState::vacuum(), Complex64::new(1.0, 0.0));
        Self {
            space: space.clone(),
            amplitudes,
            norm_tolerance: DEFAULT_NORM_TOLERANCE,
        }
    }

    /// Normalizes an unnormalized ket whose entries are already validated.
    pub(crate) fn from_ket(space: Arc<FockSpace>, mut amplitudes: Ket) -> Result<Self> {
        amplitudes.retain(|_, a| a.norm() > PRUNE);
        let norm = amplitudes.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NullState);
        }
        for a in amplitudes.values_mut() {
            *a /= norm;
        }
        Ok(Self {
            space,
            amplitudes,
            norm_tolerance: DEFAULT_NORM_TOLERANCE,
        })
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn amplitude(&self, basis: &FockBasisState) -> Complex64 {
        self.amplitudes.get(basis).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FockBasisState, &Complex64)> {
        self.amplitudes.iter()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm_tolerance(&self) -> f64 {
        self.norm_tolerance
    }

    pub fn with_norm_tolerance(mut self, tol: f64) -> Self {
        self.norm_tolerance = tol;
        self
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= self.norm_tolerance
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes.iter().map(|(b, a)| a.conj() * other.amplitude(b)).sum()
    }

    /// Probability mass on kets satisfying `pred`.
    pub fn probability_where(&self, pred: impl Fn(&FockBasisState) -> bool) -> f64 {
        self.amplitudes
            .iter()
            .filter(|(b, _)| pred(b))
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Applies a linear map on creation operators. Modes for which `image`
    /// returns `None` are left untouched.
    pub(crate) fn transform<F>(&self, mut image: F) -> Result<StateVector>
    where
        F: FnMut(&ModeId) -> Result<Option<ModeImage>>,
    {
        let mut cache: HashMap<ModeId, Option<ModeImage>> = HashMap::new();
        let mut out = Ket::new();
        for (basis, &amp) in &self.amplitudes {
            let mut terms: Vec<(FockBasisState, Complex64)> =
                vec![(FockBasisState::vacuum(), Complex64::new(1.0, 0.0))];
            for &(mode, n) in basis.iter() {
                if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(mode) {
                    slot.insert(image(&mode)?);
                }
                let img = match &cache[&mode] {
                    Some(img) => img.clone(),
                    None => smallvec![(mode, Complex64::new(1.0, 0.0))],
                };
                for _ in 0..n {
                    let mut next = BTreeMap::new();
                    for (b, c) in &terms {
                        for &(m2, c2) in &img {
                            *next.entry(b.with_added(m2)).or_insert(Complex64::default()) += c * c2;
                        }
                    }
                    terms = next.into_iter().collect();
                }
            }
            let input_norm = basis.factorial_product().sqrt();
            for (b, c) in terms {
                let scale = b.factorial_product().sqrt() / input_norm;
                *out.entry(b).or_default() += amp * c * scale;
            }
        }
        out.retain(|_, a| a.norm() > PRUNE);
        Ok(StateVector {
            space: self.space.clone(),
            amplitudes: out,
            norm_tolerance: self.norm_tolerance,
        })
    }

    /// Mixes `port_a` and `port_b` on a beam splitter of the given intensity
    /// transmissivity. Acts on every (time bin, band, label) sub-mode pair.
    pub fn beam_splitter(&self, port_a: Spatial, port_b: Spatial, transmissivity: f64) -> Result<Self> {
        self.space.check_port(port_a)?;
        self.space.check_port(port_b)?;
        if port_a == port_b {
            return Err(Error::SamePort(port_a));
        }
        check_range("transmissivity", transmissivity, 0.0, 1.0, "[0, 1]")?;
        let t = Complex64::new(transmissivity.sqrt(), 0.0);
        let r = Complex64::new(0.0, (1.0 - transmissivity).sqrt());
        self.transform(|m| {
            let other = if m.spatial == port_a {
                port_b
            } else if m.spatial == port_b {
                port_a
            } else {
                return Ok(None);
            };
            let partner = ModeId { spatial: other, ..*m };
            Ok(Some(smallvec![(*m, t), (partner, r)]))
        })
    }

    /// Multiplies each photon in a matching mode by `e^{i phase}`.
    pub fn phase_shift(&self, pred: impl Fn(&ModeId) -> bool, phase: f64) -> Result<Self> {
        let factor = Complex64::from_polar(1.0, phase);
        self.transform(|m| Ok(pred(m).then(|| smallvec![(*m, factor)])))
    }

    /// Moves matching modes by `slots` time bins.
    pub fn time_shift(&self, pred: impl Fn(&ModeId) -> bool, slots: i32) -> Result<Self> {
        let bound = self.space.slots;
        self.transform(|m| {
            if !pred(m) || slots == 0 {
                return Ok(None);
            }
            let bin = m.time_bin as i64 + slots as i64;
            if bin < 0 || bin >= bound as i64 {
                return Err(Error::SlotOutOfRange { bin, slots: bound });
            }
            let moved = ModeId {
                time_bin: bin as u8,
                ..*m
            };
            Ok(Some(smallvec![(moved, Complex64::new(1.0, 0.0))]))
        })
    }

    /// Renames a spatial port. The target must be empty.
    pub fn relabel_port(&self, from: Spatial, to: Spatial) -> Result<Self> {
        self.space.check_port(from)?;
        self.space.check_port(to)?;
        if from != to && self.amplitudes.keys().any(|b| b.iter().any(|(m, _)| m.spatial == to)) {
            return Err(Error::Config(format!("relabel target {to:?} is occupied")));
        }
        self.transform(|m| {
            Ok((m.spatial == from).then(|| smallvec![(ModeId { spatial: to, ..*m }, Complex64::new(1.0, 0.0))]))
        })
    }

    /// Partially moves matching modes onto their orthogonal companions.
    ///
    /// A matched creation operator becomes `ζ·matched + √(1-ζ²)·orthogonal`;
    /// the companion rotates the other way so the map is unitary on the pair.
    /// The predicate is evaluated on the matched member of each pair.
    pub fn rotate_distinguishability(&self, pred: impl Fn(&ModeId) -> bool, overlap: f64) -> Result<Self> {
        check_range("overlap", overlap, 0.0, 1.0, "[0, 1]")?;
        if overlap == 1.0 {
            return Ok(self.clone());
        }
        let c = Complex64::new(overlap, 0.0);
        let s = Complex64::new((1.0 - overlap * overlap).sqrt(), 0.0);
        self.transform(|m| {
            let matched = m.with_ortho(Ortho::Matched);
            if !pred(&matched) {
                return Ok(None);
            }
            let img = match m.ortho {
                Ortho::Matched => smallvec![(*m, c), (m.companion(), s)],
                Ortho::Orthogonal => smallvec![(m.companion(), -s), (*m, c)],
            };
            Ok(Some(img))
        })
    }

    /// Projects onto an exact photon-count pattern on the scoped modes.
    ///
    /// Kets match when every scoped mode carries exactly the count given in
    /// `pattern` (zero when absent). The conditional state has the scoped
    /// modes removed.
    pub fn postselect(&self, pattern: &BTreeMap<ModeId, u8>, scope: impl Fn(&ModeId) -> bool) -> PostSelection {
        let wanted = FockBasisState::from_counts(pattern.iter().map(|(m, n)| (*m, *n)));
        let mut kept = Ket::new();
        let mut probability = 0.0;
        for (basis, amp) in &self.amplitudes {
            let (scoped, rest) = basis.partition(&scope);
            if scoped == wanted {
                probability += amp.norm_sqr();
                *kept.entry(rest).or_default() += amp;
            }
        }
        let conditional = if probability > 0.0 {
            Self::from_ket(self.space.clone(), kept).ok()
        } else {
            None
        };
        PostSelection {
            probability,
            conditional,
        }
    }

    /// Tensor product, dropping cross terms above `max_photons`.
    ///
    /// Used only for perturbative expansions where the discarded terms are
    /// higher order; the result is renormalized.
    pub fn tensor_truncated(&self, other: &StateVector, max_photons: u8) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        if max_photons > self.space.max_photons {
            return Err(Error::TruncationExceeded {
                photons: max_photons as u32,
                max: self.space.max_photons,
            });
        }
        let mut out = Ket::new();
        for (b1, a1) in &self.amplitudes {
            for (b2, a2) in &other.amplitudes {
                if b1.total() + b2.total() > max_photons as u32 {
                    continue;
                }
                let (merged, factor) = merge_kets(b1, b2);
                *out.entry(merged).or_default() += a1 * a2 * factor;
            }
        }
        Self::from_ket(self.space.clone(), out)
    }

    /// Exact tensor product; any term above the truncation is an error.
    pub fn tensor(&self, other: &StateVector) -> Result<Self> {
        let max = self.space.max_photons;
        for b1 in self.amplitudes.keys() {
            for b2 in other.amplitudes.keys() {
                let photons = b1.total() + b2.total();
                if photons > max as u32 {
                    return Err(Error::TruncationExceeded { photons, max });
                }
            }
        }
        self.tensor_truncated(other, max)
    }
}

/// Combines two kets into one, returning the bosonic enhancement
/// √((n+m)!/(n! m!)) for shared modes.
fn merge_kets(a: &FockBasisState, b: &FockBasisState) -> (FockBasisState, f64) {
    let merged = FockBasisState::from_counts(a.iter().chain(b.iter()).copied());
    let factor = (merged.factorial_product() / (a.factorial_product() * b.factorial_product())).sqrt();
    (merged, factor)
}

/// Applies a creation operator: a†|n⟩ = √(n+1)|n+1⟩.
pub(crate) fn raise(ket: &Ket, mode: ModeId) -> Ket {
    let mut out = Ket::new();
    for (basis, amp) in ket {
        let n = basis.count(&mode) as f64;
        *out.entry(basis.with_added(mode)).or_default() += amp * (n + 1.0).sqrt();
    }
    out
}

/// Time-bin qubit `a0|early⟩ + a1 e^{iα}|late⟩` with real non-negative `a0`, `a1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBinQubit {
    pub a0: f64,
    pub a1: f64,
    pub alpha: f64,
}

impl TimeBinQubit {
    pub fn new(a0: f64, a1: f64, alpha: f64) -> Result<Self> {
        check_range("a0", a0, 0.0, 1.0, "[0, 1]")?;
        check_range("a1", a1, 0.0, 1.0, "[0, 1]")?;
        let norm = a0 * a0 + a1 * a1;
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::OutOfRange {
                name: "a0^2 + a1^2",
                value: norm,
                range: "1 ± 1e-12",
            });
        }
        Ok(Self {
            a0,
            a1,
            alpha: alpha.rem_euclid(2.0 * PI),
        })
    }

    /// Point on the Poincaré sphere: polar angle θ from the early-bin pole.
    pub fn from_angles(theta: f64, alpha: f64) -> Self {
        let theta = theta.clamp(0.0, PI);
        Self {
            a0: (theta / 2.0).cos(),
            a1: (theta / 2.0).sin(),
            alpha: alpha.rem_euclid(2.0 * PI),
        }
    }

    pub fn equator(alpha: f64) -> Self {
        Self::from_angles(PI / 2.0, alpha)
    }

    pub fn early() -> Self {
        Self {
            a0: 1.0,
            a1: 0.0,
            alpha: 0.0,
        }
    }

    pub fn late() -> Self {
        Self {
            a0: 0.0,
            a1: 1.0,
            alpha: 0.0,
        }
    }

    /// Complex amplitudes on (early, late).
    pub fn amplitudes(&self) -> [Complex64; 2] {
        [Complex64::new(self.a0, 0.0), Complex64::from_polar(self.a1, self.alpha)]
    }

    /// Single photon in this qubit state on the given early/late modes.
    pub fn to_state(&self, space: &Arc<FockSpace>, early: ModeId, late: ModeId) -> Result<StateVector> {
        let [c0, c1] = self.amplitudes();
        StateVector::new(
            space,
            [(FockBasisState::single(early), c0), (FockBasisState::single(late), c1)]
                .into_iter()
                .filter(|(_, a)| a.norm() > 0.0),
        )
    }
}

/// |⟨target|ρ⟩|² for the qubit carried on `bob_modes`, tracing out every
/// other mode and the distinguishability label.
pub fn qubit_fidelity(conditional: &StateVector, target: &TimeBinQubit, bob_modes: (ModeId, ModeId)) -> Result<f64> {
    let (early, late) = bob_modes;
    let strip = |m: &ModeId| m.with_ortho(Ortho::Matched);
    let in_qubit = |m: &ModeId| strip(m) == early || strip(m) == late;
    let [t0, t1] = target.amplitudes();

    // (label, environment) -> overlap with target
    let mut groups: BTreeMap<(Ortho, FockBasisState), Complex64> = BTreeMap::new();
    for (basis, amp) in conditional.iter() {
        let (qubit, rest) = basis.partition(in_qubit);
        let entries: Vec<_> = qubit.iter().copied().collect();
        let photons = qubit.total();
        if photons != 1 {
            return Err(Error::PhotonNumber {
                expected: 1,
                found: photons,
                modes: vec![early, late],
            });
        }
        let (mode, _) = entries[0];
        let weight = if strip(&mode) == early { t0 } else { t1 };
        *groups.entry((mode.ortho, rest)).or_default() += weight.conj() * amp;
    }
    let norm = conditional.norm_sqr();
    Ok(groups.values().map(|c| c.norm_sqr()).sum::<f64>() / norm)
}
