//! Helmholtz kernel, direct summation and error norms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::Point3;
use crate::C64;

/// Relative singular radius, scaled by the root box side.
pub const SINGULAR_RELATIVE: f64 = 1e-12;

/// `G(x, y) = exp(i k |x - y|) / (4 pi |x - y|)`, zero below `singular_radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelmholtzKernel {
    pub kappa: f64,
    pub singular_radius: f64,
}

impl HelmholtzKernel {
    pub fn new(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(FmmError::InvalidParameter(format!("wavenumber must be finite and non-negative, got {kappa}")));
        }
        Ok(Self { kappa, singular_radius: 0.0 })
    }

    /// Kernel whose singular radius is relative to a domain of size `d`.
    pub fn for_domain(kappa: f64, d: f64) -> Result<Self> {
        let mut k = Self::new(kappa)?;
        k.singular_radius = SINGULAR_RELATIVE * d;
        Ok(k)
    }

    #[inline]
    pub fn eval_r(&self, r: f64) -> C64 {
        if r <= self.singular_radius || r == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let s = 1.0 / (4.0 * PI * r);
        if self.kappa == 0.0 {
            C64::new(s, 0.0)
        } else {
            let (sin, cos) = (self.kappa * r).sin_cos();
            C64::new(cos * s, sin * s)
        }
    }

    #[inline]
    pub fn eval(&self, x: Point3, y: Point3) -> C64 {
        self.eval_r((x - y).norm())
    }
}

/// Kernel value with only exact coincidence suppressed.
pub fn kernel_eval(kappa: f64, x: Point3, y: Point3) -> C64 {
    HelmholtzKernel { kappa, singular_radius: 0.0 }.eval(x, y)
}

/// Adds `sum_y G(x, y) q(y)` for every target into `out`.
pub fn p2p_accumulate(kernel: &HelmholtzKernel, targets: &[Point3], sources: &[Point3], charges: &[C64], out: &mut [C64]) {
    for (x, o) in targets.iter().zip(out.iter_mut()) {
        let mut acc = C64::new(0.0, 0.0);
        for (y, q) in sources.iter().zip(charges) {
            acc += kernel.eval(*x, *y) * q;
        }
        *o += acc;
    }
}

/// Exact `O(N M)` evaluation of the potentials.
pub fn direct_sum(kernel: &HelmholtzKernel, targets: &[Point3], sources: &[Point3], charges: &[C64]) -> Result<Vec<C64>> {
    if sources.len() != charges.len() {
        return Err(FmmError::LengthMismatch { expected: sources.len(), got: charges.len() });
    }
    let mut out = vec![C64::new(0.0, 0.0); targets.len()];
    p2p_accumulate(kernel, targets, sources, charges, &mut out);
    Ok(out)
}

/// Relative errors `|p - p~| / |p|` in three norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    #[serde(rename = "linf")]
    pub rel_linf: f64,
    #[serde(rename = "l1")]
    pub rel_l1: f64,
    #[serde(rename = "l2")]
    pub rel_l2: f64,
}

pub fn relative_errors(reference: &[C64], approx: &[C64]) -> Result<ErrorReport> {
    if reference.len() != approx.len() {
        return Err(FmmError::LengthMismatch { expected: reference.len(), got: approx.len() });
    }
    let (mut dinf, mut d1, mut d2, mut rinf, mut r1, mut r2) = (0.0f64, 0.0, 0.0, 0.0f64, 0.0, 0.0);
    for (p, a) in reference.iter().zip(approx) {
        let d = (p - a).norm();
        let r = p.norm();
        dinf = dinf.max(d);
        d1 += d;
        d2 += d * d;
        rinf = rinf.max(r);
        r1 += r;
        r2 += r * r;
    }
    if rinf == 0.0 {
        return Err(FmmError::ZeroReference);
    }
    Ok(ErrorReport { rel_linf: dinf / rinf, rel_l1: d1 / r1, rel_l2: (d2 / r2).sqrt() })
}
