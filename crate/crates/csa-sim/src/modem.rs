//! 16-ary constellations, Gray mapping, hard-decision demapping, and
//! Monte-Carlo SER estimation with an analytic 16PSK oracle.

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;
use std::f64::consts::{PI, TAU};

use crate::error::SimError;
use crate::rng::Rng;

pub const SYMBOLS: usize = 16;
pub const BITS_PER_SYMBOL: u32 = 4;

/// A 16-point constellation with unit average symbol energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub name: String,
    /// Geometric symbol positions, indexed by position on the ring(s).
    pub points: [Complex64; SYMBOLS],
    /// Data index -> point position. A bijection on 0..16.
    pub gray_map: [usize; SYMBOLS],
}

impl Constellation {
    /// Largest |point|^2; the numerator of the PSNR convention.
    pub fn peak_symbol_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn mean_symbol_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / SYMBOLS as f64
    }
}

/// 16PSK: points at e^{j*2*pi*k/16}, Gray-coded index order.
pub fn build_16psk() -> Constellation {
    let mut points = [Complex64::new(0.0, 0.0); SYMBOLS];
    for (k, p) in points.iter_mut().enumerate() {
        *p = Complex64::from_polar(1.0, TAU * k as f64 / SYMBOLS as f64);
    }
    // position k carries Gray label k ^ (k >> 1); gray_map inverts that
    let mut gray_map = [0usize; SYMBOLS];
    for pos in 0..SYMBOLS {
        gray_map[pos ^ (pos >> 1)] = pos;
    }
    Constellation { name: "16psk".into(), points, gray_map }
}

/// 16APSK with a 4+12 ring layout: inner ring at 45 deg + k*90 deg, outer at
/// k*30 deg, outer/inner radius ratio gamma, normalized to unit mean energy.
pub fn build_16apsk(gamma: f64) -> Result<Constellation, SimError> {
    if !(gamma > 1.0) {
        return Err(SimError::InvalidParameter(format!("apsk ring ratio must be > 1, got {gamma}")));
    }
    let r1 = (SYMBOLS as f64 / (4.0 + 12.0 * gamma * gamma)).sqrt();
    let r2 = gamma * r1;
    let mut points = [Complex64::new(0.0, 0.0); SYMBOLS];
    for k in 0..4 {
        points[k] = Complex64::from_polar(r1, (45.0 + 90.0 * k as f64).to_radians());
    }
    for k in 0..12 {
        points[4 + k] = Complex64::from_polar(r2, (30.0 * k as f64).to_radians());
    }
    let mut gray_map = [0usize; SYMBOLS];
    for (i, g) in gray_map.iter_mut().enumerate() {
        *g = i;
    }
    Ok(Constellation { name: "16apsk".into(), points, gray_map })
}

/// Named constellation builder; `gamma` only affects APSK layouts.
pub fn build_constellation(name: &str, gamma: f64) -> Result<Constellation, SimError> {
    match name {
        "16psk" => Ok(build_16psk()),
        "16apsk" => build_16apsk(gamma),
        other => Err(SimError::UnknownStrategy {
            kind: "constellation",
            name: other.to_string(),
            known: constellation_kinds(),
        }),
    }
}

pub fn constellation_kinds() -> Vec<&'static str> {
    vec!["16psk", "16apsk"]
}

/// Map data indices to symbols through the Gray map.
pub fn modulate(indices: &[u8], c: &Constellation) -> Result<Vec<Complex64>, SimError> {
    indices
        .iter()
        .map(|&i| {
            if (i as usize) < SYMBOLS {
                Ok(c.points[c.gray_map[i as usize]])
            } else {
                Err(SimError::InvalidParameter(format!("symbol index {i} out of range 0..16")))
            }
        })
        .collect()
}

/// Nearest-neighbor hard decision; equidistant ties go to the lowest index.
pub fn demodulate_hard(block: &[Complex64], c: &Constellation) -> Vec<u8> {
    // inverse of gray_map: point position -> data index
    let mut label_of = [0u8; SYMBOLS];
    for (idx, &pos) in c.gray_map.iter().enumerate() {
        label_of[pos] = idx as u8;
    }
    block
        .iter()
        .map(|y| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (pos, p) in c.points.iter().enumerate() {
                let d = (y - p).norm_sqr();
                let label = label_of[pos];
                // tie rule compares data indices, not ring positions
                if d < best_d || (d == best_d && (label as usize) < label_of[best] as usize) {
                    best = pos;
                    best_d = d;
                }
            }
            label_of[best]
        })
        .collect()
}

/// Gaussian tail Q(x).
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard 16PSK AWGN symbol-error approximation 2*Q(sqrt(2*snr)*sin(pi/16)).
pub fn ser_16psk_analytic(snr_db: f64) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    (2.0 * q_function((2.0 * snr).sqrt() * (PI / 16.0).sin())).min(1.0)
}

/// Monte-Carlo symbol error rate over an AWGN channel at Es/N0 = snr_db.
pub fn ser_monte_carlo(c: &Constellation, snr_db: f64, n_trials: usize, rng: &mut Rng) -> Result<f64, SimError> {
    if n_trials == 0 {
        return Err(SimError::InvalidParameter("n_trials must be >= 1".into()));
    }
    let es = c.mean_symbol_power();
    let n0 = es / 10f64.powf(snr_db / 10.0);
    let sigma = (n0 / 2.0).sqrt();
    let mut errors = 0usize;
    for _ in 0..n_trials {
        let idx: u8 = rng.gen_range(0..SYMBOLS as u8);
        let x = c.points[c.gray_map[idx as usize]];
        let nr: f64 = rng.sample(StandardNormal);
        let ni: f64 = rng.sample(StandardNormal);
        let y = x + Complex64::new(nr, ni) * sigma;
        if demodulate_hard(&[y], c)[0] != idx {
            errors += 1;
        }
    }
    Ok(errors as f64 / n_trials as f64)
}
