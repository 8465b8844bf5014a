//! TOML configuration with sections mirroring the simulator modules. Every
//! tunable default is explicit in the shipped example configs.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dtjscc::Equalization;
use crate::error::SimError;
use crate::geometry::SlantRangeMode;
use crate::linkbudget::LinkBudgetParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub altitude_km: f64,
    pub elevation_deg: f64,
    pub radial_velocity_mps: f64,
    pub slant_range_mode: SlantRangeMode,
    pub isl_distance_km: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            altitude_km: 600.0,
            elevation_deg: 50.0,
            radial_velocity_mps: 7000.0,
            slant_range_mode: SlantRangeMode::Geometric,
            isl_distance_km: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub downlink: String,
    pub isl: String,
    pub rician_k: f64,
    pub los_phase_rad: f64,
    pub equalize: Equalization,
    pub symbol_period_s: f64,
    pub delay_s: f64,
    /// Fold the link-budget zeta into fading and the PSNR noise reference.
    /// Under perfect equalization the two applications cancel, so this only
    /// affects reported absolute levels.
    pub apply_zeta: bool,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            downlink: "leo_rician".into(),
            isl: "isl_los".into(),
            rician_k: 2.8,
            los_phase_rad: 0.0,
            equalize: Equalization::Perfect,
            symbol_period_s: 1e-6,
            delay_s: 2e-3,
            apply_zeta: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemSection {
    pub constellation: String,
    pub apsk_gamma: f64,
}

impl Default for ModemSection {
    fn default() -> Self {
        Self { constellation: "16psk".into(), apsk_gamma: 2.85 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub noise_level: f64,
    /// When set, load `<dir>/<class>/<id>.msim` instead of generating.
    pub dataset_dir: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 40,
            height: 64,
            width: 64,
            bands: 3,
            noise_level: 0.1,
            dataset_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub lambda_sa: f64,
    pub index_flip_prob: f64,
    pub hidden: usize,
    pub l_books: usize,
    pub a_sub: usize,
    pub codebook_size: usize,
}

impl Default for CodecSection {
    fn default() -> Self {
        let d = crate::dtjscc::TrainConfig::default();
        Self {
            epochs: d.epochs,
            lr: d.lr,
            momentum: d.momentum,
            batch_size: d.batch_size,
            lambda_sa: d.lambda_sa,
            index_flip_prob: d.index_flip_prob,
            hidden: d.hidden,
            l_books: d.l_books,
            a_sub: d.a_sub,
            codebook_size: d.codebook_size,
        }
    }
}

impl CodecSection {
    pub fn to_train_config(&self) -> crate::dtjscc::TrainConfig {
        crate::dtjscc::TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            lambda_sa: self.lambda_sa,
            index_flip_prob: self.index_flip_prob,
            hidden: self.hidden,
            l_books: self.l_books,
            a_sub: self.a_sub,
            codebook_size: self.codebook_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub psnr_db: f64,
    pub csa_enabled: bool,
    pub n_timesteps: usize,
    pub lambda_sa: f64,
    /// Blend weight between predictor output and the empirical bank.
    pub blend: f64,
    pub adapt_lr: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            psnr_db: 12.0,
            csa_enabled: true,
            n_timesteps: 100,
            lambda_sa: 0.5,
            blend: 0.5,
            adapt_lr: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub psnr_list: Vec<f64>,
    pub kq_list: Vec<usize>,
    pub channel_kinds: Vec<String>,
    pub constellations: Vec<String>,
    pub seeds: Vec<u64>,
    /// Es/N0 grid for the SER curve command.
    pub snr_list_db: Vec<f64>,
    pub ser_symbols: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            psnr_list: vec![4.0, 8.0, 12.0, 16.0, 20.0],
            kq_list: vec![32, 64, 128],
            channel_kinds: vec!["awgn".into(), "rician".into()],
            constellations: vec!["16psk".into()],
            seeds: vec![1, 2, 3, 4, 5],
            snr_list_db: vec![6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0],
            ser_symbols: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareCsaSection {
    pub psnr_db: f64,
    pub n_seeds: usize,
    /// Fractions of the dataset used for codec training and online
    /// adaptation; the remainder is the evaluation split.
    pub train_fraction: f64,
    pub adapt_fraction: f64,
}

impl Default for CompareCsaSection {
    fn default() -> Self {
        Self { psnr_db: 4.0, n_seeds: 5, train_fraction: 0.5, adapt_fraction: 0.25 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub geometry: GeometrySection,
    pub linkbudget: LinkBudgetSection,
    pub channel: ChannelSection,
    pub modem: ModemSection,
    pub data: DataSection,
    pub dtjscc: CodecSection,
    pub pipeline: PipelineSection,
    pub sweep: SweepSection,
    pub compare_csa: CompareCsaSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudgetSection {
    pub carrier_ghz: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub gas_loss_db: f64,
    pub scint_loss_db: f64,
    pub shadow_sigma_db: f64,
}

impl Default for LinkBudgetSection {
    fn default() -> Self {
        let d = LinkBudgetParams::default();
        Self {
            carrier_ghz: d.carrier_ghz,
            tx_gain_dbi: d.tx_gain_dbi,
            rx_gain_dbi: d.rx_gain_dbi,
            gas_loss_db: d.gas_loss_db,
            scint_loss_db: d.scint_loss_db,
            shadow_sigma_db: d.shadow_sigma_db,
        }
    }
}

impl LinkBudgetSection {
    pub fn to_params(&self) -> LinkBudgetParams {
        LinkBudgetParams {
            carrier_ghz: self.carrier_ghz,
            tx_gain_dbi: self.tx_gain_dbi,
            rx_gain_dbi: self.rx_gain_dbi,
            gas_loss_db: self.gas_loss_db,
            scint_loss_db: self.scint_loss_db,
            shadow_sigma_db: self.shadow_sigma_db,
        }
    }
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SimError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| SimError::Config(format!("parse error in {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml();
        let back: SimConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.sweep.psnr_list, cfg.sweep.psnr_list);
        assert_eq!(back.channel.downlink, cfg.channel.downlink);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<SimConfig>("[modem]\nconstellation = \"16psk\"\nbogus = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn missing_file_error_names_path() {
        let err = SimConfig::load(Path::new("/nonexistent/x.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.toml"));
    }
}
