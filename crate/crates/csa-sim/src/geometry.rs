//! Orbital geometry: slant range between satellite and ground terminal, and
//! Doppler helpers feeding the channel phase response.

use crate::error::SimError;

/// Mean Earth radius in km used throughout the link geometry.
pub const EARTH_RADIUS_KM: f64 = 6378.0;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Geometry of a single satellite-terminal look.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParams {
    /// Satellite altitude above ground in km.
    pub altitude_km: f64,
    /// Elevation angle in radians, 0 (horizon) to pi/2 (zenith).
    pub elevation_rad: f64,
    /// Radial velocity in m/s, positive toward the receiver.
    pub radial_velocity_mps: f64,
}

impl GeometryParams {
    pub fn new(altitude_km: f64, elevation_rad: f64, radial_velocity_mps: f64) -> Result<Self, SimError> {
        if !(altitude_km >= 0.0) {
            return Err(SimError::InvalidParameter(format!(
                "altitude_km must be >= 0, got {altitude_km}"
            )));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&elevation_rad) {
            return Err(SimError::InvalidParameter(format!(
                "elevation_rad must be in [0, pi/2], got {elevation_rad}"
            )));
        }
        Ok(Self { altitude_km, elevation_rad, radial_velocity_mps })
    }
}

/// Which closed form the pipeline uses for slant range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlantRangeMode {
    /// Literal published form; does not satisfy d(90 deg) = altitude.
    Paper,
    /// Corrected standard form satisfying the nadir-look identity.
    Geometric,
}

impl SlantRangeMode {
    pub fn slant_range_km(self, params: &GeometryParams) -> f64 {
        match self {
            SlantRangeMode::Paper => slant_range_paper(params),
            SlantRangeMode::Geometric => slant_range_geometric(params),
        }
    }
}

/// Slant range in km, evaluating the published formula verbatim:
/// sqrt(Re^2 sin^2(th) + h^2 + 2 Re h - 2 Re h sin(th)).
pub fn slant_range_paper(params: &GeometryParams) -> f64 {
    let re = EARTH_RADIUS_KM;
    let h = params.altitude_km;
    let s = params.elevation_rad.sin();
    let arg = re * re * s * s + h * h + 2.0 * re * h - 2.0 * re * h * s;
    debug_assert!(arg >= 0.0, "slant range radicand went negative: {arg}");
    arg.sqrt()
}

/// Slant range in km in the standard corrected form:
/// sqrt(Re^2 sin^2(th) + h^2 + 2 Re h) - Re sin(th).
///
/// Satisfies d(th = 90 deg) = altitude exactly.
pub fn slant_range_geometric(params: &GeometryParams) -> f64 {
    let re = EARTH_RADIUS_KM;
    let h = params.altitude_km;
    let s = params.elevation_rad.sin();
    let arg = re * re * s * s + h * h + 2.0 * re * h;
    debug_assert!(arg >= 0.0);
    arg.sqrt() - re * s
}

/// Classical Doppler shift f * v / c in Hz; sign follows the velocity sign.
pub fn doppler_shift_hz(carrier_hz: f64, radial_velocity_mps: f64) -> f64 {
    debug_assert!(carrier_hz > 0.0);
    carrier_hz * radial_velocity_mps / SPEED_OF_LIGHT_M_S
}
