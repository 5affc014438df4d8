//! Least-squares estimators for fringes and dips.
//!
//! Points carry a standard error; when any error is non-positive the fit is
//! unweighted and the covariance is scaled by the residual variance.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

impl DataPoint {
    pub fn new(x: f64, y: f64, sigma: f64) -> Self {
        Self { x, y, sigma }
    }

    pub fn exact(x: f64, y: f64) -> Self {
        Self { x, y, sigma: 0.0 }
    }
}

/// `y = offset·(1 + visibility·cos(x + phase))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub offset: f64,
    pub amplitude: f64,
    /// In [0, 2π).
    pub phase: f64,
    pub visibility: f64,
    pub visibility_err: f64,
    /// Covariance of the linear coefficients (offset, cos, sin).
    pub covariance: [[f64; 3]; 3],
}

/// `y = baseline·(1 - visibility·exp(-(x - center)² / 2 width²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipFit {
    pub baseline: f64,
    pub depth: f64,
    pub center: f64,
    pub width: f64,
    pub fwhm: f64,
    pub visibility: f64,
    pub visibility_err: f64,
}

/// 2√(2 ln 2).
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

fn weights(points: &[DataPoint]) -> (Vec<f64>, bool) {
    let weighted = points.iter().all(|p| p.sigma > 0.0 && p.sigma.is_finite());
    let w = points
        .iter()
        .map(|p| if weighted { 1.0 / (p.sigma * p.sigma) } else { 1.0 })
        .collect();
    (w, weighted)
}

fn check_finite(points: &[DataPoint]) -> Result<()> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Fit("non-finite data".into()));
    }
    Ok(())
}

pub fn fit_sinusoid(points: &[DataPoint]) -> Result<SinusoidFit> {
    check_finite(points)?;
    if points.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", points.len())));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.x), h.max(p.x)));
    if hi - lo < std::f64::consts::PI - 1e-12 {
        return Err(Error::Fit("points span less than half a period".into()));
    }
    let (w, weighted) = weights(points);
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (p, &wi) in points.iter().zip(&w) {
        let row = Vector3::new(1.0, p.x.cos(), p.x.sin());
        ata += row * row.transpose() * wi;
        atb += row * (p.y * wi);
    }
    let inv = ata
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Fit("singular design matrix".into()))?;
    let beta = inv * atb;
    let (b0, b1, b2) = (beta[0], beta[1], beta[2]);
    if b0 == 0.0 {
        return Err(Error::Fit("zero offset".into()));
    }

    let cov = if weighted {
        inv
    } else {
        let rss: f64 = points
            .iter()
            .map(|p| {
                let r = p.y - (b0 + b1 * p.x.cos() + b2 * p.x.sin());
                r * r
            })
            .sum();
        let dof = (points.len() - 3).max(1) as f64;
        inv * (rss / dof)
    };

    let amplitude = b1.hypot(b2);
    let visibility = amplitude / b0;
    let visibility_err = if amplitude > 0.0 {
        let g = Vector3::new(-visibility / b0, b1 / (amplitude * b0), b2 / (amplitude * b0));
        (g.transpose() * cov * g)[0].max(0.0).sqrt()
    } else {
        ((cov[(1, 1)] + cov[(2, 2)]) / 2.0).max(0.0).sqrt() / b0.abs()
    };
    let phase = (-b2).atan2(b1).rem_euclid(2.0 * std::f64::consts::PI);
    let mut covariance = [[0.0; 3]; 3];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cov[(i, j)];
        }
    }
    Ok(SinusoidFit {
        offset: b0,
        amplitude,
        phase,
        visibility,
        visibility_err,
        covariance,
    })
}

fn dip_model(p: &Vector4<f64>, x: f64) -> (f64, Vector4<f64>) {
    let (b, v, c, w) = (p[0], p[1], p[2], p[3]);
    let u = (x - c) / w;
    let g = (-0.5 * u * u).exp();
    let y = b * (1.0 - v * g);
    let grad = Vector4::new(1.0 - v * g, -b * g, -b * v * g * u / w, -b * v * g * u * u / w);
    (y, grad)
}

pub fn fit_gaussian_dip(points: &[DataPoint]) -> Result<DipFit> {
    check_finite(points)?;
    if points.len() < 5 {
        return Err(Error::Fit(format!("need at least 5 points, got {}", points.len())));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    let (lo_y, hi_y) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.y), h.max(p.y)));
    let mean_y = pts.iter().map(|p| p.y).sum::<f64>() / pts.len() as f64;
    if hi_y - lo_y <= 1e-12 * hi_y.abs().max(f64::MIN_POSITIVE) {
        return Ok(DipFit {
            baseline: mean_y,
            depth: 0.0,
            center: pts[pts.len() / 2].x,
            width: 0.0,
            fwhm: 0.0,
            visibility: 0.0,
            visibility_err: 0.0,
        });
    }
    let imin = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.y.total_cmp(&b.1.y))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if imin == 0 || imin == pts.len() - 1 {
        return Err(Error::Fit("minimum lies at the edge of the scan".into()));
    }

    // Starting point from the half-depth crossings.
    let base0 = pts[0].y.max(pts[pts.len() - 1].y);
    let half = (base0 + pts[imin].y) / 2.0;
    let left = pts[..imin].iter().rev().find(|p| p.y >= half).map_or(pts[0].x, |p| p.x);
    let right = pts[imin..]
        .iter()
        .find(|p| p.y >= half)
        .map_or(pts[pts.len() - 1].x, |p| p.x);
    let w0 = ((right - left) / GAUSSIAN_FWHM_PER_SIGMA).max(1e-9 * (pts[pts.len() - 1].x - pts[0].x));
    let mut p = Vector4::new(base0, 1.0 - pts[imin].y / base0, pts[imin].x, w0);

    let (w, weighted) = weights(&pts);
    let chi2 = |p: &Vector4<f64>| -> f64 {
        pts.iter()
            .zip(&w)
            .map(|(pt, wi)| {
                let r = pt.y - dip_model(p, pt.x).0;
                wi * r * r
            })
            .sum()
    };
    let normal = |p: &Vector4<f64>| {
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (pt, wi) in pts.iter().zip(&w) {
            let (y, g) = dip_model(p, pt.x);
            jtj += g * g.transpose() * *wi;
            jtr += g * ((pt.y - y) * wi);
        }
        (jtj, jtr)
    };

    let mut lambda = 1e-3;
    let mut current = chi2(&p);
    for _ in 0..500 {
        let (jtj, jtr) = normal(&p);
        let mut damped = jtj;
        for i in 0..4 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(f64::MIN_POSITIVE);
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = p + step;
        trial[3] = trial[3].abs();
        let next = chi2(&trial);
        if next.is_finite() && next <= current {
            let converged = step
                .iter()
                .zip(p.iter())
                .all(|(s, v)| s.abs() <= 1e-14 * v.abs().max(1e-300));
            p = trial;
            current = next;
            lambda = (lambda / 10.0).max(1e-15);
            if converged || current == 0.0 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
        }
    }

    let (jtj, _) = normal(&p);
    let cov = jtj.try_inverse().unwrap_or_else(Matrix4::zeros);
    let cov = if weighted {
        cov
    } else {
        cov * (current / (pts.len() - 4).max(1) as f64)
    };
    let (baseline, visibility, center, width) = (p[0], p[1], p[2], p[3].abs());
    Ok(DipFit {
        baseline,
        depth: baseline * visibility,
        center,
        width,
        fwhm: GAUSSIAN_FWHM_PER_SIGMA * width,
        visibility,
        visibility_err: cov[(1, 1)].max(0.0).sqrt(),
    })
}
