//! Large-scale loss terms: free-space path loss, gas/scintillation
//! attenuations, log-normal shadow fading, and the antenna-gain-adjusted
//! large-scale channel gain.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::rng::Rng;

/// Link-budget inputs. Defaults follow the standard Ka-band downlink setup
/// used by the shipped configs (28 GHz carrier, 35 dBi satellite antenna,
/// 37 dBi user antenna, 0.3 dB gas loss, 0.5 dB scintillation loss).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetParams {
    pub carrier_ghz: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub gas_loss_db: f64,
    pub scint_loss_db: f64,
    pub shadow_sigma_db: f64,
}

impl Default for LinkBudgetParams {
    fn default() -> Self {
        Self {
            carrier_ghz: 28.0,
            tx_gain_dbi: 35.0,
            rx_gain_dbi: 37.0,
            gas_loss_db: 0.3,
            scint_loss_db: 0.5,
            shadow_sigma_db: 0.0,
        }
    }
}

impl LinkBudgetParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.carrier_ghz > 0.0) {
            return Err(SimError::InvalidParameter("carrier_ghz must be > 0".into()));
        }
        if self.gas_loss_db < 0.0 || self.scint_loss_db < 0.0 || self.shadow_sigma_db < 0.0 {
            return Err(SimError::InvalidParameter(
                "gas_loss_db, scint_loss_db, shadow_sigma_db must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-term decomposition of a path loss, all in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossBreakdown {
    pub fspl_db: f64,
    pub shadow_db: f64,
    pub gas_db: f64,
    pub scint_db: f64,
    pub total_db: f64,
}

/// Free-space path loss in dB with range in meters and carrier in GHz:
/// 32.45 + 20 log10(f_GHz) + 20 log10(d_m).
pub fn fspl_db(distance_m: f64, carrier_ghz: f64) -> Result<f64, SimError> {
    if !(distance_m > 0.0) {
        return Err(SimError::InvalidParameter(format!("distance_m must be > 0, got {distance_m}")));
    }
    if !(carrier_ghz > 0.0) {
        return Err(SimError::InvalidParameter(format!("carrier_ghz must be > 0, got {carrier_ghz}")));
    }
    Ok(32.45 + 20.0 * carrier_ghz.log10() + 20.0 * distance_m.log10())
}

/// One draw of log-normal shadow fading in dB: Normal(0, sigma^2).
/// sigma = 0 returns exactly 0 without consuming randomness.
pub fn sample_shadow_fading_db(sigma_db: f64, rng: &mut Rng) -> f64 {
    debug_assert!(sigma_db >= 0.0);
    if sigma_db == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    sigma_db * z
}

/// Total ground-link path loss: FSPL + shadow fading + gas + scintillation.
pub fn ground_path_loss(
    distance_m: f64,
    params: &LinkBudgetParams,
    rng: &mut Rng,
) -> Result<PathLossBreakdown, SimError> {
    params.validate()?;
    let fspl = fspl_db(distance_m, params.carrier_ghz)?;
    let shadow = sample_shadow_fading_db(params.shadow_sigma_db, rng);
    let total = fspl + shadow + params.gas_loss_db + params.scint_loss_db;
    Ok(PathLossBreakdown {
        fspl_db: fspl,
        shadow_db: shadow,
        gas_db: params.gas_loss_db,
        scint_db: params.scint_loss_db,
        total_db: total,
    })
}

/// Inter-satellite link path loss: free-space only.
pub fn isl_path_loss(distance_m: f64, params: &LinkBudgetParams) -> Result<PathLossBreakdown, SimError> {
    params.validate()?;
    let fspl = fspl_db(distance_m, params.carrier_ghz)?;
    Ok(PathLossBreakdown { fspl_db: fspl, shadow_db: 0.0, gas_db: 0.0, scint_db: 0.0, total_db: fspl })
}

/// Large-scale gain zeta in dB, stored as a loss: total path loss minus the
/// transmit antenna gain.
pub fn large_scale_gain_db(total_loss_db: f64, tx_gain_dbi: f64) -> f64 {
    total_loss_db - tx_gain_dbi
}

/// Convert a dB loss to the linear power gain used inside the fading model.
pub fn loss_db_to_linear_gain(zeta_db: f64) -> f64 {
    10f64.powf(-zeta_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn fspl_reference_point() {
        assert_relative_eq!(fspl_db(1.0, 1.0).unwrap(), 32.45, epsilon = 1e-12);
        assert_relative_eq!(fspl_db(600_000.0, 28.0).unwrap(), 176.96, epsilon = 0.01);
    }

    #[test]
    fn fspl_doubling_distance_adds_6db() {
        for (d, f) in [(1.0e3, 2.0), (600e3, 28.0), (2_000e3, 12.5)] {
            let delta = fspl_db(2.0 * d, f).unwrap() - fspl_db(d, f).unwrap();
            assert_relative_eq!(delta, 20.0 * 2f64.log10(), epsilon = 1e-9);
        }
    }

    #[test]
    fn fspl_rejects_nonpositive() {
        assert!(fspl_db(0.0, 28.0).is_err());
        assert!(fspl_db(-1.0, 28.0).is_err());
        assert!(fspl_db(1.0, 0.0).is_err());
    }

    #[test]
    fn shadow_zero_sigma_is_zero() {
        let mut rng = crate::rng::stream(1, &[]);
        for _ in 0..32 {
            assert_eq!(sample_shadow_fading_db(0.0, &mut rng), 0.0);
        }
    }

    #[test]
    fn shadow_moments() {
        let mut rng = crate::rng::stream(7, &[]);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = sample_shadow_fading_db(4.0, &mut rng);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 4.0).abs() < 0.04, "std {std}");
    }

    #[test]
    fn shadow_deterministic_per_seed() {
        let mut a = crate::rng::stream(9, &[3]);
        let mut b = crate::rng::stream(9, &[3]);
        for _ in 0..16 {
            assert_eq!(sample_shadow_fading_db(2.5, &mut a), sample_shadow_fading_db(2.5, &mut b));
        }
    }

    #[test]
    fn ground_loss_table_values() {
        let params = LinkBudgetParams { shadow_sigma_db: 0.0, ..Default::default() };
        let mut rng = crate::rng::stream(0, &[]);
        let bd = ground_path_loss(600_000.0, &params, &mut rng).unwrap();
        assert_relative_eq!(bd.total_db, 177.76, epsilon = 0.01);
        assert_relative_eq!(bd.total_db, bd.fspl_db + bd.shadow_db + bd.gas_db + bd.scint_db, epsilon = 1e-12);
    }

    #[test]
    fn ground_loss_reduces_to_fspl() {
        let params = LinkBudgetParams {
            gas_loss_db: 0.0,
            scint_loss_db: 0.0,
            shadow_sigma_db: 0.0,
            ..Default::default()
        };
        let mut rng = crate::rng::stream(0, &[]);
        let bd = ground_path_loss(600_000.0, &params, &mut rng).unwrap();
        assert_eq!(bd.total_db, bd.fspl_db);
    }

    #[test]
    fn isl_is_fspl_only() {
        let params = LinkBudgetParams::default();
        let bd = isl_path_loss(1_000_000.0, &params).unwrap();
        assert_eq!(bd.total_db, fspl_db(1_000_000.0, 28.0).unwrap());
        assert_eq!(bd.gas_db, 0.0);
        assert_eq!(bd.scint_db, 0.0);
        assert_eq!(bd.shadow_db, 0.0);
        assert_relative_eq!(bd.total_db, 181.39, epsilon = 0.01);
    }

    #[test]
    fn isl_below_ground_at_equal_distance() {
        let params = LinkBudgetParams { shadow_sigma_db: 0.0, ..Default::default() };
        let mut rng = crate::rng::stream(0, &[]);
        let g = ground_path_loss(750_000.0, &params, &mut rng).unwrap();
        let i = isl_path_loss(750_000.0, &params).unwrap();
        assert!(i.total_db < g.total_db);
    }

    #[test]
    fn zeta_examples() {
        assert_relative_eq!(large_scale_gain_db(177.76, 35.0), 142.76, epsilon = 1e-12);
        assert_eq!(large_scale_gain_db(123.4, 0.0), 123.4);
        assert_relative_eq!(loss_db_to_linear_gain(10.0), 0.1, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn fspl_strictly_increasing(d in 1.0f64..1e8, f in 0.1f64..100.0, k in 1.001f64..10.0) {
            prop_assert!(fspl_db(d * k, f).unwrap() > fspl_db(d, f).unwrap());
            prop_assert!(fspl_db(d, f * k).unwrap() > fspl_db(d, f).unwrap());
        }

        #[test]
        fn breakdown_sums(d in 1.0f64..1e8, sigma in 0.0f64..8.0) {
            let params = LinkBudgetParams { shadow_sigma_db: sigma, ..Default::default() };
            let mut rng = crate::rng::stream(11, &[d.to_bits()]);
            let bd = ground_path_loss(d, &params, &mut rng).unwrap();
            let sum = bd.fspl_db + bd.shadow_db + bd.gas_db + bd.scint_db;
            prop_assert!((bd.total_db - sum).abs() < 1e-9);
            prop_assert!(bd.gas_db >= 0.0 && bd.scint_db >= 0.0 && bd.fspl_db > 0.0);
        }
    }
}
