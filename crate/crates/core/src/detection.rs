//! Threshold detectors, coincidence logic and click statistics.
//!
//! A final optical state is reduced to an [`OutcomeTable`]: the probability of
//! each photon-count pattern over (detector, time slot). Both the exact rate
//! computation and the Monte Carlo sampler work from that table with the same
//! click model, so the two must agree within counting noise:
//!
//! * a slot holding `n` photons fires with `1 - (1 - p·η·s)^n` where `p` is the
//!   per-photon arrival probability, `η` the efficiency and `s` the fiber
//!   survival, combined with an independent dark click of probability
//!   `dark_prob_per_ns · gate_width_ns`;
//! * each detector reports only its earliest click;
//! * gated detectors are armed only when the trigger detector fired (the
//!   laser clock is present on every pulse).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::exec::{self, Execution};
use crate::fock::{Spatial, StateVector};

/// Time-bin spacing in ns.
pub const SLOT_NS: f64 = 1.2;

/// Pulses per work unit in the sampler.
const CHUNK: u64 = 8192;

/// Word offset between per-detector streams inside one pulse stream.
const STREAM_STRIDE: u128 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DetectorLabel {
    C1,
    C2,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub label: DetectorLabel,
    pub efficiency: f64,
    pub dark_prob_per_ns: f64,
    pub gated: bool,
    /// Exposure per time slot in ns.
    pub gate_width_ns: f64,
}

impl DetectorSpec {
    /// Passively quenched Ge APD: η = 10 %, 40 kHz dark rate, exposed for a
    /// full slot.
    pub fn germanium(label: DetectorLabel) -> Self {
        Self {
            label,
            efficiency: 0.10,
            dark_prob_per_ns: 40e3 * 1e-9,
            gated: false,
            gate_width_ns: SLOT_NS,
        }
    }

    /// Peltier-cooled InGaAs APD in gated mode: η = 30 %, 1e-4 per ns.
    pub fn ingaas(label: DetectorLabel) -> Self {
        Self {
            label,
            efficiency: 0.30,
            dark_prob_per_ns: 1e-4,
            gated: true,
            gate_width_ns: 1.0,
        }
    }

    /// Same detector with unit efficiency and no dark counts.
    pub fn ideal(self) -> Self {
        Self {
            efficiency: 1.0,
            dark_prob_per_ns: 0.0,
            ..self
        }
    }

    pub fn dark_prob_per_slot(&self) -> f64 {
        self.dark_prob_per_ns * self.gate_width_ns
    }

    pub fn validate(&self) -> Result<()> {
        check_range("efficiency", self.efficiency, 0.0, 1.0, "[0, 1]")?;
        check_range("dark_prob_per_ns", self.dark_prob_per_ns, 0.0, f64::MAX, ">= 0")?;
        check_range("gate_width_ns", self.gate_width_ns, 0.0, f64::MAX, ">= 0")?;
        let dark = self.dark_prob_per_slot();
        if dark > 1.0 {
            return Err(Error::ProbabilityOverflow(dark));
        }
        Ok(())
    }
}

/// A detector placed behind a port, with the fiber survival in front of it
/// and the time slots it watches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub spec: DetectorSpec,
    pub port: Spatial,
    pub survival: f64,
    pub first_slot: u8,
    pub slot_count: u8,
}

impl Station {
    pub fn new(spec: DetectorSpec, port: Spatial, survival: f64, slots: std::ops::Range<u8>) -> Self {
        Self {
            spec,
            port,
            survival,
            first_slot: slots.start,
            slot_count: slots.end.saturating_sub(slots.start),
        }
    }

    fn detection_prob(&self) -> f64 {
        self.spec.efficiency * self.survival
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorBank {
    stations: Vec<Station>,
    trigger: Option<DetectorLabel>,
}

impl DetectorBank {
    pub fn new(stations: Vec<Station>, trigger: Option<DetectorLabel>) -> Result<Self> {
        for (i, st) in stations.iter().enumerate() {
            st.spec.validate()?;
            check_range("survival", st.survival, 0.0, 1.0, "[0, 1]")?;
            let p = st.detection_prob();
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ProbabilityOverflow(p));
            }
            if stations[..i].iter().any(|o| o.spec.label == st.spec.label) {
                return Err(Error::Config(format!("duplicate detector {:?}", st.spec.label)));
            }
        }
        let bank = Self { stations, trigger };
        if let Some(t) = trigger {
            let idx = bank
                .index_of(t)
                .ok_or_else(|| Error::Config(format!("trigger {t:?} is not in the bank")))?;
            if bank.stations[idx].spec.gated {
                return Err(Error::Config("the trigger detector cannot itself be gated".into()));
            }
        } else if bank.stations.iter().any(|s| s.spec.gated) {
            return Err(Error::Config("gated detectors need a trigger".into()));
        }
        Ok(bank)
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn trigger(&self) -> Option<DetectorLabel> {
        self.trigger
    }

    pub fn index_of(&self, label: DetectorLabel) -> Option<usize> {
        self.stations.iter().position(|s| s.spec.label == label)
    }

    fn trigger_index(&self) -> Option<usize> {
        self.trigger.and_then(|t| self.index_of(t))
    }
}

/// Light reaching one detector slot.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SlotLight {
    pub photons: u8,
    /// Probability that each photon is actually present.
    pub arrival: f64,
}

/// Per-station, per-slot light for one pulse; `slots[k][j]` is slot
/// `first_slot + j` of station `k`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Illumination {
    pub slots: Vec<Vec<SlotLight>>,
}

impl Illumination {
    pub fn dark(bank: &DetectorBank) -> Self {
        Self {
            slots: bank
                .stations
                .iter()
                .map(|s| vec![SlotLight::default(); s.slot_count as usize])
                .collect(),
        }
    }

    fn from_counts(bank: &DetectorBank, counts: &[u8]) -> Self {
        let mut out = Self::dark(bank);
        let mut k = 0;
        for row in out.slots.iter_mut() {
            for cell in row.iter_mut() {
                *cell = SlotLight {
                    photons: counts[k],
                    arrival: 1.0,
                };
                k += 1;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Photon,
    Dark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Click {
    pub slot: u8,
    /// Diagnostic only; coincidence logic never looks at it.
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub pulse: u64,
    pub clicks: Vec<(DetectorLabel, Option<Click>)>,
}

impl ClickRecord {
    pub fn slot_of(&self, label: DetectorLabel) -> Option<u8> {
        self.clicks
            .iter()
            .find(|(l, _)| *l == label)
            .and_then(|(_, c)| c.map(|c| c.slot))
    }
}

/// Independent random streams for one pulse, derived from the master seed.
#[derive(Clone)]
pub struct PulseStreams {
    base: ChaCha8Rng,
}

impl PulseStreams {
    pub fn new(master: &ChaCha8Rng, pulse: u64) -> Self {
        let mut base = master.clone();
        base.set_stream(pulse);
        base.set_word_pos(0);
        Self { base }
    }

    fn stream(&self, index: u128) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_word_pos(index * STREAM_STRIDE);
        rng
    }

    /// Stream that picks the optical outcome.
    pub fn outcome(&self) -> ChaCha8Rng {
        self.stream(0)
    }

    /// Stream owned by the station at `index`.
    pub fn detector(&self, index: usize) -> ChaCha8Rng {
        self.stream(index as u128 + 1)
    }
}

fn photon_click_prob(light: SlotLight, station: &Station) -> Result<f64> {
    let per_photon = light.arrival * station.detection_prob();
    if !(0.0..=1.0).contains(&per_photon) || !per_photon.is_finite() {
        return Err(Error::ProbabilityOverflow(per_photon));
    }
    Ok(1.0 - (1.0 - per_photon).powi(light.photons as i32))
}

fn sample_station(station: &Station, lights: &[SlotLight], rng: &mut ChaCha8Rng) -> Result<Option<Click>> {
    let dark = station.spec.dark_prob_per_slot();
    for (j, &light) in lights.iter().enumerate() {
        let photon = photon_click_prob(light, station)?;
        let by_photon = rng.random::<f64>() < photon;
        let by_dark = rng.random::<f64>() < dark;
        if by_photon || by_dark {
            return Ok(Some(Click {
                slot: station.first_slot + j as u8,
                origin: if by_photon { Origin::Photon } else { Origin::Dark },
            }));
        }
    }
    Ok(None)
}

/// Samples the clicks of one pulse. At most one click per detector (the
/// earliest); gated detectors stay silent unless the trigger fired.
pub fn sample_pulse(
    pulse: u64,
    light: &Illumination,
    bank: &DetectorBank,
    streams: &PulseStreams,
) -> Result<ClickRecord> {
    if light.slots.len() != bank.stations.len() {
        return Err(Error::Config("illumination does not match the detector bank".into()));
    }
    let trigger = bank.trigger_index();
    let mut clicks: Vec<(DetectorLabel, Option<Click>)> = bank.stations.iter().map(|s| (s.spec.label, None)).collect();
    let armed = match trigger {
        Some(t) => {
            let mut rng = streams.detector(t);
            clicks[t].1 = sample_station(&bank.stations[t], &light.slots[t], &mut rng)?;
            clicks[t].1.is_some()
        }
        None => true,
    };
    for (k, station) in bank.stations.iter().enumerate() {
        if Some(k) == trigger || (station.spec.gated && !armed) {
            continue;
        }
        let mut rng = streams.detector(k);
        clicks[k].1 = sample_station(station, &light.slots[k], &mut rng)?;
    }
    Ok(ClickRecord { pulse, clicks })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotMatch {
    Any,
    Exactly(u8),
}

impl SlotMatch {
    fn accepts(self, slot: u8) -> bool {
        match self {
            SlotMatch::Any => true,
            SlotMatch::Exactly(s) => s == slot,
        }
    }
}

/// Required time separation between two detectors, in slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOffset {
    pub first: DetectorLabel,
    pub second: DetectorLabel,
    pub slots: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceRule {
    pub name: String,
    pub required: Vec<(DetectorLabel, SlotMatch)>,
    /// Must be shorter than the slot spacing; matching is therefore by slot.
    pub window_ns: f64,
    pub pair_offset: Option<PairOffset>,
}

/// Default coincidence window of the fast electronics, ns.
pub const DEFAULT_WINDOW_NS: f64 = 0.8;

impl CoincidenceRule {
    pub fn new(name: &str, required: Vec<(DetectorLabel, SlotMatch)>, window_ns: f64) -> Result<Self> {
        if !(window_ns > 0.0 && window_ns < SLOT_NS) {
            return Err(Error::OutOfRange {
                name: "window_ns",
                value: window_ns,
                range: "(0, 1.2)",
            });
        }
        Ok(Self {
            name: name.to_string(),
            required,
            window_ns,
            pair_offset: None,
        })
    }

    pub fn with_pair_offset(mut self, first: DetectorLabel, second: DetectorLabel, slots: u8) -> Self {
        self.pair_offset = Some(PairOffset { first, second, slots });
        self
    }

    /// C1 + C2 + t0 separated by one slot: the singlet signature.
    pub fn bsm() -> Self {
        Self::new(
            "bsm",
            vec![(DetectorLabel::C1, SlotMatch::Any), (DetectorLabel::C2, SlotMatch::Any)],
            DEFAULT_WINDOW_NS,
        )
        .expect("default window is valid")
        .with_pair_offset(DetectorLabel::C1, DetectorLabel::C2, 1)
    }

    /// BSM plus Bob's detector in `bob`.
    pub fn fourfold(name: &str, bob: u8) -> Self {
        let mut rule = Self::bsm();
        rule.name = name.to_string();
        rule.required.push((DetectorLabel::B, SlotMatch::Exactly(bob)));
        rule
    }

    /// C1 + B + t0 without the second BSM detector.
    pub fn threefold(name: &str, bob: u8) -> Self {
        Self::new(
            name,
            vec![
                (DetectorLabel::C1, SlotMatch::Any),
                (DetectorLabel::B, SlotMatch::Exactly(bob)),
            ],
            DEFAULT_WINDOW_NS,
        )
        .expect("default window is valid")
    }

    fn matches(&self, slot_of: impl Fn(DetectorLabel) -> Option<u8>) -> bool {
        let all = self
            .required
            .iter()
            .all(|&(label, want)| slot_of(label).is_some_and(|s| want.accepts(s)));
        if !all {
            return false;
        }
        match self.pair_offset {
            None => true,
            Some(off) => match (slot_of(off.first), slot_of(off.second)) {
                (Some(a), Some(b)) => a.abs_diff(b) == off.slots,
                _ => false,
            },
        }
    }
}

pub fn evaluate_coincidence(record: &ClickRecord, rule: &CoincidenceRule) -> bool {
    rule.matches(|l| record.slot_of(l))
}

/// Per-rule counts over a run of pulses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateTable {
    pub names: Vec<String>,
    pub pulses: u64,
    pub counts: Vec<u64>,
}

impl RateTable {
    pub fn rate(&self, i: usize) -> f64 {
        if self.pulses == 0 {
            0.0
        } else {
            self.counts[i] as f64 / self.pulses as f64
        }
    }

    /// Poisson error on the rate, √N / pulses.
    pub fn rate_error(&self, i: usize) -> f64 {
        if self.pulses == 0 {
            0.0
        } else {
            (self.counts[i] as f64).sqrt() / self.pulses as f64
        }
    }
}

pub fn accumulate_rates<'a, I>(records: I, rules: &[CoincidenceRule]) -> RateTable
where
    I: IntoIterator<Item = &'a ClickRecord>,
{
    let mut counts = vec![0u64; rules.len()];
    let mut pulses = 0;
    for rec in records {
        pulses += 1;
        for (c, rule) in counts.iter_mut().zip(rules) {
            *c += evaluate_coincidence(rec, rule) as u64;
        }
    }
    RateTable {
        names: rules.iter().map(|r| r.name.clone()).collect(),
        pulses,
        counts,
    }
}

/// Probability of every photon-count pattern seen by a detector bank.
#[derive(Clone, Debug)]
pub struct OutcomeTable {
    bank: DetectorBank,
    /// (probability, counts flattened station-major over watched slots)
    entries: Vec<(f64, Vec<u8>)>,
    cumulative: Vec<f64>,
}

impl OutcomeTable {
    /// Sums |amplitude|² over kets that look identical to the detectors.
    /// Band and distinguishability labels are invisible; photons outside a
    /// station's watched slots are not seen.
    pub fn from_state(state: &StateVector, bank: &DetectorBank) -> Self {
        let width: usize = bank.stations.iter().map(|s| s.slot_count as usize).sum();
        let mut offsets = Vec::with_capacity(bank.stations.len());
        let mut acc = 0;
        for s in &bank.stations {
            offsets.push(acc);
            acc += s.slot_count as usize;
        }
        let mut merged: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (basis, amp) in state.iter() {
            let mut key = vec![0u8; width];
            for &(mode, n) in basis.iter() {
                for (k, st) in bank.stations.iter().enumerate() {
                    if mode.spatial == st.port
                        && mode.time_bin >= st.first_slot
                        && mode.time_bin < st.first_slot + st.slot_count
                    {
                        key[offsets[k] + (mode.time_bin - st.first_slot) as usize] += n;
                    }
                }
            }
            *merged.entry(key).or_default() += amp.norm_sqr();
        }
        Self::from_entries(bank.clone(), merged.into_iter().map(|(k, p)| (p, k)).collect())
    }

    fn from_entries(bank: DetectorBank, entries: Vec<(f64, Vec<u8>)>) -> Self {
        let mut cumulative = Vec::with_capacity(entries.len());
        let mut run = 0.0;
        for (p, _) in &entries {
            run += p;
            cumulative.push(run);
        }
        Self {
            bank,
            entries,
            cumulative,
        }
    }

    pub fn bank(&self) -> &DetectorBank {
        &self.bank
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_probability(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    fn pick(&self, u: f64) -> usize {
        let target = u * self.total_probability();
        self.cumulative
            .partition_point(|&c| c <= target)
            .min(self.entries.len().saturating_sub(1))
    }

    /// Exact per-pulse probability of each rule.
    pub fn probabilities(&self, rules: &[CoincidenceRule]) -> Result<Vec<f64>> {
        let bank = &self.bank;
        let n = bank.stations.len();
        let trigger = bank.trigger_index();
        let labels: Vec<DetectorLabel> = bank.stations.iter().map(|s| s.spec.label).collect();
        let mut out = vec![0.0; rules.len()];
        let mut records = vec![None; n];
        for (p, counts) in &self.entries {
            let light = Illumination::from_counts(bank, counts);
            let dists = bank
                .stations
                .iter()
                .zip(&light.slots)
                .map(|(st, row)| first_click_distribution(st, row))
                .collect::<Result<Vec<_>>>()?;
            enumerate_records(bank, trigger, &dists, 0, true, *p, &mut records, &mut |prob, recs| {
                for (o, rule) in out.iter_mut().zip(rules) {
                    let slot_of = |l: DetectorLabel| labels.iter().position(|&x| x == l).and_then(|i| recs[i]);
                    if rule.matches(slot_of) {
                        *o += prob;
                    }
                }
            });
        }
        Ok(out)
    }

    /// Samples one pulse.
    pub fn sample(&self, pulse: u64, master: &ChaCha8Rng) -> Result<ClickRecord> {
        let streams = PulseStreams::new(master, pulse);
        let u: f64 = streams.outcome().random();
        let idx = self.pick(u);
        let light = Illumination::from_counts(&self.bank, &self.entries[idx].1);
        sample_pulse(pulse, &light, &self.bank, &streams)
    }

    pub fn sample_records(&self, pulses: std::ops::Range<u64>, seed: u64) -> Result<Vec<ClickRecord>> {
        let master = ChaCha8Rng::seed_from_u64(seed);
        pulses.map(|k| self.sample(k, &master)).collect()
    }

    /// Monte Carlo counts for `rules` over `pulses` pulses.
    pub fn simulate(&self, rules: &[CoincidenceRule], pulses: u64, seed: u64, exec: Execution) -> Result<RateTable> {
        let master = ChaCha8Rng::seed_from_u64(seed);
        let counts = exec::sum_counts(exec, pulses, CHUNK, rules.len(), |start, end| {
            let mut c = vec![0u64; rules.len()];
            for k in start..end {
                let rec = self.sample(k, &master)?;
                for (ci, rule) in c.iter_mut().zip(rules) {
                    *ci += evaluate_coincidence(&rec, rule) as u64;
                }
            }
            Ok(c)
        })?;
        Ok(RateTable {
            names: rules.iter().map(|r| r.name.clone()).collect(),
            pulses,
            counts,
        })
    }
}

/// Exact per-pulse probability of the four-fold rule with Bob in `bob_slot`,
/// including events where dark counts stand in for photons.
pub fn analytic_fourfold_probability(state: &StateVector, bank: &DetectorBank, bob_slot: u8) -> Result<f64> {
    let table = OutcomeTable::from_state(state, bank);
    Ok(table.probabilities(&[CoincidenceRule::fourfold("fourfold", bob_slot)])?[0])
}

/// (first click slot or none, probability) for one station.
fn first_click_distribution(station: &Station, lights: &[SlotLight]) -> Result<Vec<(Option<u8>, f64)>> {
    let dark = station.spec.dark_prob_per_slot();
    let mut silent = 1.0;
    let mut out = Vec::with_capacity(lights.len() + 1);
    for (j, &light) in lights.iter().enumerate() {
        let photon = photon_click_prob(light, station)?;
        let q = 1.0 - (1.0 - photon) * (1.0 - dark);
        out.push((Some(station.first_slot + j as u8), silent * q));
        silent *= 1.0 - q;
    }
    out.push((None, silent));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_records(
    bank: &DetectorBank,
    trigger: Option<usize>,
    dists: &[Vec<(Option<u8>, f64)>],
    // stations are visited trigger first, then in order
    depth: usize,
    armed: bool,
    prob: f64,
    records: &mut Vec<Option<u8>>,
    visit: &mut dyn FnMut(f64, &[Option<u8>]),
) {
    let n = dists.len();
    if depth == n {
        visit(prob, records);
        return;
    }
    let order = |d: usize| -> usize {
        match trigger {
            None => d,
            Some(t) => {
                if d == 0 {
                    t
                } else if d <= t {
                    d - 1
                } else {
                    d
                }
            }
        }
    };
    let k = order(depth);
    if bank.stations[k].spec.gated && !armed {
        records[k] = None;
        enumerate_records(bank, trigger, dists, depth + 1, armed, prob, records, visit);
        return;
    }
    for &(rec, p) in &dists[k] {
        if p == 0.0 {
            continue;
        }
        records[k] = rec;
        let now_armed = if Some(k) == trigger { rec.is_some() } else { armed };
        enumerate_records(bank, trigger, dists, depth + 1, now_armed, prob * p, records, visit);
    }
    records[k] = None;
}
