//! Closed-form Type-1 SDT statistics on rating counts.

pub mod gaussian;

pub use gaussian::{gaussian_cdf, gaussian_pdf, gaussian_quantile, gaussian_sf, z};

use serde::{Deserialize, Serialize};

use crate::binning::RatingCounts;
use crate::error::{Error, Result};

/// Below this |d'| the M-ratio denominator is treated as unstable.
pub const UNSTABLE_D_PRIME: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Type1Stats {
    /// P(rating > K | correct)
    pub hr: f64,
    /// P(rating > K | incorrect)
    pub far: f64,
    pub d_prime: f64,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
}

/// Hit and false-alarm rates for the boundary after rating `j` (1-based).
fn rates_above(counts: &RatingCounts, j: usize) -> (f64, f64) {
    let n2 = counts.n_correct();
    let n1 = counts.n_incorrect();
    let hits: f64 = counts.n_r_s2[j..].iter().sum();
    let fas: f64 = counts.n_r_s1[j..].iter().sum();
    (hits / n2, fas / n1)
}

fn require_corrected(counts: &RatingCounts) -> Result<()> {
    if !counts.corrected {
        return Err(Error::NotCorrected);
    }
    Ok(())
}

/// Equal-variance d' and criterion at the Type-1 boundary.
pub fn compute_type1(counts: &RatingCounts) -> Result<Type1Stats> {
    compute_type1_with_s(counts, 1.0)
}

/// Type-1 statistics when the correct-class evidence has standard
/// deviation `1/s` (incorrect class fixed at 1):
/// `d' = z(HR)/s - z(FAR)`, `c = -(z(HR)/s + z(FAR)) / 2`.
pub fn compute_type1_with_s(counts: &RatingCounts, s: f64) -> Result<Type1Stats> {
    require_corrected(counts)?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!("variance ratio s must be positive, got {s}")));
    }
    let (hr, far) = rates_above(counts, counts.k);
    let zh = z(hr)? / s;
    let zf = z(far)?;
    Ok(Type1Stats {
        hr,
        far,
        d_prime: zh - zf,
        c: -0.5 * (zh + zf),
        s: if s == 1.0 { None } else { Some(s) },
    })
}

/// Slope of the zROC: ordinary least squares of z(hit rate) on
/// z(false-alarm rate) over the 2K-1 rating boundaries.
pub fn estimate_s(counts: &RatingCounts) -> Result<f64> {
    require_corrected(counts)?;
    let mut pts = Vec::with_capacity(2 * counts.k - 1);
    for j in 1..2 * counts.k {
        let (hr, far) = rates_above(counts, j);
        if hr > 0.0 && hr < 1.0 && far > 0.0 && far < 1.0 {
            pts.push((z(far)?, z(hr)?));
        }
    }
    if pts.len() < 2 {
        return Err(Error::InvalidInput("fewer than 2 usable zROC points".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidInput("zROC points have no spread".into()));
    }
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(Error::InvalidInput(format!("non-positive zROC slope {slope}")));
    }
    Ok(slope)
}
