//! Fidelity of a relay chain limited by detector noise.
//!
//! The line of length `l` is cut into `n` segments. Every segment ends in a
//! detection whose true-click probability is `p = η·10^(-a·(l/n)/10)` and
//! whose noise-click probability is `d = D·w`. Conditioned on all `n`
//! detectors clicking, any noise click leaves a fully mixed qubit:
//!
//! `F(l) = 1/2 + (V/2)·Π p/(p + d)`.
//!
//! Numbers from this model are model-derived, not measured.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelayModelParams {
    pub segments: u32,
    pub total_length_km: f64,
    pub dark_prob_per_ns: f64,
    pub gate_ns: f64,
    pub attenuation_db_per_km: f64,
    pub efficiency: f64,
    pub visibility: f64,
}

impl Default for RelayModelParams {
    fn default() -> Self {
        Self {
            segments: 1,
            total_length_km: 0.0,
            dark_prob_per_ns: 1e-4,
            gate_ns: 1.0,
            attenuation_db_per_km: 0.25,
            efficiency: 0.1,
            visibility: 1.0,
        }
    }
}

impl RelayModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.segments < 1 {
            return Err(Error::Config("relay needs at least one segment".into()));
        }
        check_range("total_length_km", self.total_length_km, 0.0, f64::MAX, ">= 0")?;
        check_range("dark_prob_per_ns", self.dark_prob_per_ns, 0.0, f64::MAX, ">= 0")?;
        check_range("gate_ns", self.gate_ns, 0.0, f64::MAX, ">= 0")?;
        check_range(
            "attenuation_db_per_km",
            self.attenuation_db_per_km,
            0.0,
            f64::MAX,
            ">= 0",
        )?;
        check_range("efficiency", self.efficiency, 0.0, 1.0, "[0, 1]")?;
        check_range("visibility", self.visibility, 0.0, 1.0, "[0, 1]")?;
        let d = self.noise_prob();
        if d > 1.0 {
            return Err(Error::ProbabilityOverflow(d));
        }
        Ok(())
    }

    pub fn noise_prob(&self) -> f64 {
        self.dark_prob_per_ns * self.gate_ns
    }

    /// True-click probability of one station.
    pub fn click_prob(&self) -> f64 {
        let span = self.total_length_km / self.segments as f64;
        self.efficiency * 10f64.powf(-self.attenuation_db_per_km * span / 10.0)
    }
}

pub fn relay_fidelity(params: &RelayModelParams) -> Result<f64> {
    params.validate()?;
    let p = params.click_prob();
    let d = params.noise_prob();
    let signal = if p + d > 0.0 { p / (p + d) } else { 0.0 };
    Ok(0.5 + 0.5 * params.visibility * signal.powi(params.segments as i32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelayCurve {
    pub segments: Vec<u32>,
    pub length_km: Vec<f64>,
    /// `fidelity[i][k]` at `length_km[i]` for `segments[k]`.
    pub fidelity: Vec<Vec<f64>>,
}

/// Evaluates the model over a length grid for each segment count.
pub fn relay_fidelity_curve(base: &RelayModelParams, segments: &[u32], grid: &[f64]) -> Result<RelayCurve> {
    if grid.is_empty() {
        return Err(Error::Config("length grid is empty".into()));
    }
    let fidelity = grid
        .iter()
        .map(|&l| {
            segments
                .iter()
                .map(|&n| {
                    relay_fidelity(&RelayModelParams {
                        segments: n,
                        total_length_km: l,
                        ..*base
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelayCurve {
        segments: segments.to_vec(),
        length_km: grid.to_vec(),
        fidelity,
    })
}

/// Length at which the fidelity first drops to `target`, by bisection.
/// `None` when the target is reached already at zero length or never within
/// `max_km`.
pub fn distance_at_fidelity(base: &RelayModelParams, target: f64, max_km: f64) -> Result<Option<f64>> {
    let at = |l: f64| {
        relay_fidelity(&RelayModelParams {
            total_length_km: l,
            ..*base
        })
    };
    if at(0.0)? <= target || at(max_km)? > target {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, max_km);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * max_km {
            break;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_limit() {
        for n in 1..=4 {
            let p = RelayModelParams {
                segments: n,
                dark_prob_per_ns: 0.0,
                visibility: 0.9,
                ..Default::default()
            };
            assert!((relay_fidelity(&p).unwrap() - 0.95).abs() < 1e-15);
        }
    }

    #[test]
    fn decreases_to_one_half() {
        for n in 1..=4 {
            let base = RelayModelParams {
                segments: n,
                ..Default::default()
            };
            let grid: Vec<f64> = (0..=60).map(|k| k as f64 * 5.0).collect();
            let c = relay_fidelity_curve(&base, &[n], &grid).unwrap();
            for w in c.fidelity.windows(2) {
                assert!(w[1][0] < w[0][0]);
            }
            let far = relay_fidelity(&RelayModelParams {
                total_length_km: 1e5,
                ..base
            })
            .unwrap();
            assert!((far - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_distances() {
        // Closed form: l = -(10 n / a) log10(d r / (η (1 - r))), r = 0.8^(1/n).
        let oracle = |n: f64| {
            let r = 0.8f64.powf(1.0 / n);
            let p = 1e-4 * r / (1.0 - r);
            -(10.0 * n / 0.25) * (p / 0.1).log10()
        };
        for n in 1..=4 {
            let base = RelayModelParams {
                segments: n,
                ..Default::default()
            };
            let l = distance_at_fidelity(&base, 0.9, 2000.0).unwrap().unwrap();
            assert!((l - oracle(n as f64)).abs() < 1e-6, "n={n}: {l}");
        }
        assert!((oracle(1.0) - 95.9).abs() < 0.1);
    }

    #[test]
    fn invalid_inputs() {
        assert!(relay_fidelity(&RelayModelParams {
            segments: 0,
            ..Default::default()
        })
        .is_err());
        assert!(relay_fidelity_curve(&RelayModelParams::default(), &[1], &[]).is_err());
    }
}
