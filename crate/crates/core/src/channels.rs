//! Fiber and filter models: loss, coherence time, delay-dependent mode
//! overlap and slow thermal drift of the path difference.
//!
//! Spectra are taken to be Gaussian. Loss is not applied to amplitudes here;
//! the detection layer turns [`survival_probability`] into a Bernoulli
//! survival factor per photon.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Result};

pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Time-bandwidth product of a transform-limited Gaussian pulse, 2 ln2 / π.
pub const GAUSSIAN_TIME_BANDWIDTH: f64 = 2.0 * std::f64::consts::LN_2 / std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberSpec {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub thermal_coeff_mm_per_k_per_km: f64,
}

impl Default for FiberSpec {
    fn default() -> Self {
        Self {
            length_km: 2.0,
            attenuation_db_per_km: 0.25,
            dispersion_ps_per_nm_km: 2.0,
            thermal_coeff_mm_per_k_per_km: 4.0,
        }
    }
}

impl FiberSpec {
    pub fn with_length(length_km: f64) -> Self {
        Self {
            length_km,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("length_km", self.length_km, 0.0, f64::MAX, ">= 0")?;
        check_range(
            "attenuation_db_per_km",
            self.attenuation_db_per_km,
            0.0,
            f64::MAX,
            ">= 0",
        )?;
        check_range(
            "dispersion_ps_per_nm_km",
            self.dispersion_ps_per_nm_km,
            f64::MIN,
            f64::MAX,
            "finite",
        )?;
        check_range(
            "thermal_coeff_mm_per_k_per_km",
            self.thermal_coeff_mm_per_k_per_km,
            f64::MIN,
            f64::MAX,
            "finite",
        )
    }

    pub fn loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.length_km
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub center_wavelength_nm: f64,
    pub bandwidth_fwhm_nm: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            center_wavelength_nm: 1310.0,
            bandwidth_fwhm_nm: 10.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        check_range(
            "center_wavelength_nm",
            self.center_wavelength_nm,
            f64::MIN_POSITIVE,
            f64::MAX,
            "> 0",
        )?;
        check_range(
            "bandwidth_fwhm_nm",
            self.bandwidth_fwhm_nm,
            f64::MIN_POSITIVE,
            f64::MAX,
            "> 0",
        )
    }
}

/// Transmission through the fiber, `10^(-αL/10)`.
pub fn survival_probability(fiber: &FiberSpec) -> f64 {
    10f64.powf(-fiber.loss_db() / 10.0)
}

/// Coherence time in femtoseconds, `K λ₀² / (c Δλ)`.
pub fn coherence_time_fs(filter: &FilterSpec) -> f64 {
    let lambda = filter.center_wavelength_nm * 1e-9;
    let width = filter.bandwidth_fwhm_nm * 1e-9;
    GAUSSIAN_TIME_BANDWIDTH * lambda * lambda / (SPEED_OF_LIGHT_M_PER_S * width) * 1e15
}

/// Gaussian rms width of the amplitude overlap, as a path length in μm.
pub fn overlap_sigma_um(filter: &FilterSpec) -> f64 {
    let coherence_length_um = SPEED_OF_LIGHT_M_PER_S * coherence_time_fs(filter) * 1e-15 * 1e6;
    coherence_length_um / (2.0 * std::f64::consts::LN_2).sqrt()
}

/// Mode overlap ζ of two wave packets offset by `delay_um` of path.
pub fn overlap_from_delay(delay_um: f64, filter: &FilterSpec) -> f64 {
    let sigma = overlap_sigma_um(filter);
    (-(delay_um * delay_um) / (2.0 * sigma * sigma)).exp()
}

/// FWHM in μm of the two-photon dip, whose depth follows ζ².
pub fn hom_dip_fwhm_um(filter: &FilterSpec) -> f64 {
    2.0 * overlap_sigma_um(filter) * std::f64::consts::LN_2.sqrt()
}

/// Length change in mm of the whole fiber for a temperature change.
pub fn thermal_length_drift_mm(fiber: &FiberSpec, delta_t_k: f64) -> f64 {
    fiber.thermal_coeff_mm_per_k_per_km * fiber.length_km * delta_t_k
}

/// Dispersion-stretched wave-packet duration in ps. Informational: both BSM
/// fibers share the same dispersion, so this does not enter the overlap.
pub fn dispersed_length_ps(fiber: &FiberSpec, filter: &FilterSpec) -> f64 {
    fiber.dispersion_ps_per_nm_km.abs() * fiber.length_km * filter.bandwidth_fwhm_nm
}

/// Linear ramp of the path difference during an acquisition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub rate_um_per_hour: f64,
    pub duration_h: f64,
    pub start_um: f64,
}

impl DriftSchedule {
    pub fn new(rate_um_per_hour: f64, duration_h: f64) -> Result<Self> {
        check_range("rate_um_per_hour", rate_um_per_hour, 0.0, f64::MAX, ">= 0")?;
        check_range("duration_h", duration_h, 0.0, f64::MAX, ">= 0")?;
        Ok(Self {
            rate_um_per_hour,
            duration_h,
            start_um: 0.0,
        })
    }

    pub fn starting_at(mut self, start_um: f64) -> Self {
        self.start_um = start_um;
        self
    }

    pub fn delay_at(&self, hours: f64) -> f64 {
        self.start_um + self.rate_um_per_hour * hours.clamp(0.0, self.duration_h)
    }

    pub fn endpoint_um(&self) -> f64 {
        self.delay_at(self.duration_h)
    }

    /// `(hours, delay_um)` at `steps + 1` evenly spaced times.
    pub fn trajectory(&self, steps: usize) -> Vec<(f64, f64)> {
        let steps = steps.max(1);
        (0..=steps)
            .map(|k| {
                let t = self.duration_h * k as f64 / steps as f64;
                (t, self.delay_at(t))
            })
            .collect()
    }

    /// Time-averaged ζ² over the run, the factor by which drift scales a
    /// two-photon interference visibility.
    pub fn mean_overlap_sq(&self, filter: &FilterSpec, steps: usize) -> f64 {
        let traj = self.trajectory(steps);
        // trapezoid rule
        let vals: Vec<f64> = traj
            .iter()
            .map(|&(_, d)| overlap_from_delay(d, filter).powi(2))
            .collect();
        let n = vals.len() - 1;
        let inner: f64 = vals[1..n].iter().sum();
        (0.5 * (vals[0] + vals[n]) + inner) / n as f64
    }
}
