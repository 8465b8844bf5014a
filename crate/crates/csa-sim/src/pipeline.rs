//! Two-satellite relay protocol: Sat1 encodes an observation, relays it over
//! the inter-satellite link to Sat2 and onward over the downlink to the user
//! terminal. With cognitive adaptation enabled, Sat2 and the terminal run
//! online decoder updates on the features they actually receive.

use crate::channel::{build_fading, noise_sigma_from_psnr, FadingModel, FadingParams};
use crate::config::SimConfig;
use crate::data::{generate_synthetic, LabeledDataset};
use crate::dtjscc::{
    decode, encode, transmit, ClassifierDecoder, Codec, Equalization, Link, SemanticMessage,
};
use crate::error::SimError;
use crate::geometry::{doppler_shift_hz, GeometryParams};
use crate::linkbudget::{
    ground_path_loss, isl_path_loss, large_scale_gain_db, loss_db_to_linear_gain,
};
use crate::metrics::{argmax, index_error_rate, ConfusionMatrix};
use crate::modem::{build_constellation, Constellation};
use crate::rng::{derive_seed, stream};
use crate::semaug::{sa_decoder_step, ClassCovarianceBank, CovariancePredictor};

/// One physical hop, fully resolved from config.
pub struct LinkSetup {
    pub fading: Box<dyn FadingModel>,
    pub noise_sigma: f64,
    pub zeta_db: f64,
}

/// Everything needed to run an episode except the models and data.
pub struct Scenario {
    pub constellation: Constellation,
    pub isl: LinkSetup,
    pub downlink: LinkSetup,
    pub equalize: Equalization,
    pub symbol_period_s: f64,
    pub csa_enabled: bool,
    pub lambda_sa: f64,
    pub blend: f64,
    pub adapt_lr: f64,
}

/// Mean received power for a fading kind with the given large-scale gain.
/// The AWGN strategy has unit gain and ignores zeta.
fn expected_power_gain(kind: &str, zeta_lin: f64) -> f64 {
    if kind == "awgn" {
        1.0
    } else {
        zeta_lin
    }
}

impl Scenario {
    /// Resolve links from the config at a given PSNR. The PSNR references the
    /// mean received peak-symbol power, so the large-scale gain scales signal
    /// and noise together and accuracy depends on PSNR alone.
    pub fn from_config(cfg: &SimConfig, psnr_db: f64, csa_enabled: bool) -> Result<Self, SimError> {
        let constellation = build_constellation(&cfg.modem.constellation, cfg.modem.apsk_gamma)?;
        let geo = GeometryParams::new(
            cfg.geometry.altitude_km,
            cfg.geometry.elevation_deg.to_radians(),
            cfg.geometry.radial_velocity_mps,
        )?;
        let lb = cfg.linkbudget.to_params();
        let doppler = doppler_shift_hz(cfg.linkbudget.carrier_ghz * 1e9, geo.radial_velocity_mps);

        let mut shadow_rng = stream(cfg.seed, &[0x51]);
        let down_dist_m = cfg.geometry.slant_range_mode.slant_range_km(&geo) * 1e3;
        let down_loss = ground_path_loss(down_dist_m, &lb, &mut shadow_rng)?;
        let down_zeta_db = large_scale_gain_db(down_loss.total_db, lb.tx_gain_dbi);
        let isl_loss = isl_path_loss(cfg.geometry.isl_distance_km * 1e3, &lb)?;
        let isl_zeta_db = large_scale_gain_db(isl_loss.total_db, lb.tx_gain_dbi);

        let peak = constellation.peak_symbol_power();
        let make = |kind: &str, zeta_db: f64| -> Result<LinkSetup, SimError> {
            let zeta_lin =
                if cfg.channel.apply_zeta { loss_db_to_linear_gain(zeta_db) } else { 1.0 };
            let fading = build_fading(
                kind,
                &FadingParams {
                    k_factor: cfg.channel.rician_k,
                    zeta_lin,
                    los_phase_rad: cfg.channel.los_phase_rad,
                    doppler_hz: doppler,
                    delay_s: cfg.channel.delay_s,
                },
            )?;
            let reference = peak * expected_power_gain(kind, zeta_lin);
            let noise_sigma = noise_sigma_from_psnr(psnr_db, reference)?;
            Ok(LinkSetup { fading, noise_sigma, zeta_db })
        };
        let isl = make(&cfg.channel.isl, isl_zeta_db)?;
        let downlink = make(&cfg.channel.downlink, down_zeta_db)?;

        Ok(Self {
            constellation,
            isl,
            downlink,
            equalize: cfg.channel.equalize,
            symbol_period_s: cfg.channel.symbol_period_s,
            csa_enabled,
            lambda_sa: cfg.pipeline.lambda_sa,
            blend: cfg.pipeline.blend,
            adapt_lr: cfg.pipeline.adapt_lr,
        })
    }

    fn link<'a>(&'a self, setup: &'a LinkSetup) -> Link<'a> {
        Link {
            constellation: &self.constellation,
            fading: setup.fading.as_ref(),
            noise_sigma: setup.noise_sigma,
            equalize: self.equalize,
            symbol_period_s: self.symbol_period_s,
        }
    }
}

/// Receiver-side state for the relay run: one shared codec and independent
/// decoders plus adaptation state per receiver.
pub struct EpisodeModels {
    pub codec: Codec,
    pub sat2_decoder: ClassifierDecoder,
    pub ut_decoder: ClassifierDecoder,
    pub sat2_bank: ClassCovarianceBank,
    pub ut_bank: ClassCovarianceBank,
    pub sat2_g: CovariancePredictor,
    pub ut_g: CovariancePredictor,
}

impl EpisodeModels {
    pub fn from_codec(codec: Codec, seed: u64) -> Self {
        let dims = codec.dims;
        let mut rng = stream(seed, &[0x90]);
        Self {
            sat2_decoder: codec.decoder.clone(),
            ut_decoder: codec.decoder.clone(),
            sat2_bank: ClassCovarianceBank::new(dims.n_classes, dims.feature_dim()),
            ut_bank: ClassCovarianceBank::new(dims.n_classes, dims.feature_dim()),
            sat2_g: CovariancePredictor::seeded(dims.feature_dim(), &mut rng),
            ut_g: CovariancePredictor::seeded(dims.feature_dim(), &mut rng),
            codec,
        }
    }
}

/// One relay timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepRecord {
    pub t: usize,
    pub label: usize,
    pub sat2_pred: usize,
    pub ut_pred: usize,
    pub isl_index_error: f64,
    pub downlink_index_error: f64,
}

/// Episode summary plus the per-timestep trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub records: Vec<TimestepRecord>,
    pub sat2_top1: f64,
    pub ut_top1: f64,
    pub mean_isl_index_error: f64,
    pub mean_downlink_index_error: f64,
}

impl EpisodeReport {
    pub fn to_csv(&self) -> String {
        let v = crate::CSV_SCHEMA_VERSION;
        let mut out = String::from(
            "schema_version,t,label,sat2_pred,ut_pred,isl_index_error,downlink_index_error\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{v},{},{},{},{},{:.6},{:.6}\n",
                r.t, r.label, r.sat2_pred, r.ut_pred, r.isl_index_error, r.downlink_index_error
            ));
        }
        out
    }
}

fn adapt_step(
    decoder: &mut ClassifierDecoder,
    predictor: &mut CovariancePredictor,
    bank: &mut ClassCovarianceBank,
    codec: &Codec,
    msg: &SemanticMessage,
    label: usize,
    lambda: f64,
    blend: f64,
    lr: f64,
) -> Result<(), SimError> {
    let features = codec.codebook.dequantize(&msg.indices)?;
    sa_decoder_step(
        &mut decoder.layer,
        Some(predictor),
        bank,
        &[features],
        &[label],
        lambda,
        blend,
        lr,
        0.0,
    )?;
    Ok(())
}

/// Run the relay protocol for `n_timesteps` over a cyclic stream of labeled
/// images. Deterministic per seed; prediction at each step uses the decoder
/// state adapted through the previous steps.
pub fn run_episode(
    scenario: &Scenario,
    models: &mut EpisodeModels,
    dataset: &LabeledDataset,
    n_timesteps: usize,
    seed: u64,
) -> Result<EpisodeReport, SimError> {
    if dataset.items.is_empty() {
        return Err(SimError::InvalidParameter("episode dataset is empty".into()));
    }
    let dims = models.codec.dims;
    let mut records = Vec::with_capacity(n_timesteps);
    let mut sat2_correct = 0usize;
    let mut ut_correct = 0usize;
    let mut isl_err_sum = 0.0;
    let mut down_err_sum = 0.0;
    for t in 0..n_timesteps {
        let (image, label) = &dataset.items[t % dataset.items.len()];
        let msg = encode(image, &models.codec.extractor, &models.codec.codebook, &dims)?;

        let mut isl_rng = stream(seed, &[0x45, t as u64, 0]);
        let isl_out = transmit(&msg, &scenario.link(&scenario.isl), &dims, &mut isl_rng)?;
        let sat2_pred = argmax(&decode(&isl_out.message, &models.codec.codebook, &models.sat2_decoder)?);

        let mut down_rng = stream(seed, &[0x45, t as u64, 1]);
        let down_out =
            transmit(&isl_out.message, &scenario.link(&scenario.downlink), &dims, &mut down_rng)?;
        let ut_pred = argmax(&decode(&down_out.message, &models.codec.codebook, &models.ut_decoder)?);

        if scenario.csa_enabled {
            adapt_step(
                &mut models.sat2_decoder,
                &mut models.sat2_g,
                &mut models.sat2_bank,
                &models.codec,
                &isl_out.message,
                *label,
                scenario.lambda_sa,
                scenario.blend,
                scenario.adapt_lr,
            )?;
            adapt_step(
                &mut models.ut_decoder,
                &mut models.ut_g,
                &mut models.ut_bank,
                &models.codec,
                &down_out.message,
                *label,
                scenario.lambda_sa,
                scenario.blend,
                scenario.adapt_lr,
            )?;
        }

        let isl_err = index_error_rate(&isl_out.sent_symbols, &isl_out.received_symbols)?;
        let down_err = index_error_rate(&down_out.sent_symbols, &down_out.received_symbols)?;
        sat2_correct += (sat2_pred == *label) as usize;
        ut_correct += (ut_pred == *label) as usize;
        isl_err_sum += isl_err;
        down_err_sum += down_err;
        records.push(TimestepRecord {
            t,
            label: *label,
            sat2_pred,
            ut_pred,
            isl_index_error: isl_err,
            downlink_index_error: down_err,
        });
    }
    let n = n_timesteps.max(1) as f64;
    Ok(EpisodeReport {
        records,
        sat2_top1: sat2_correct as f64 / n,
        ut_top1: ut_correct as f64 / n,
        mean_isl_index_error: isl_err_sum / n,
        mean_downlink_index_error: down_err_sum / n,
    })
}

/// Paired per-class comparison between adaptive and fixed receivers. All
/// accuracies are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct CsaComparison {
    pub class_names: Vec<String>,
    pub csa_per_class: Vec<f64>,
    pub baseline_per_class: Vec<f64>,
    pub csa_mean: f64,
    pub baseline_mean: f64,
    pub n_seeds: usize,
}

impl CsaComparison {
    pub fn classes_improved(&self) -> usize {
        self.csa_per_class
            .iter()
            .zip(&self.baseline_per_class)
            .filter(|(c, b)| c >= b)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let v = crate::CSV_SCHEMA_VERSION;
        let mut out = String::from("schema_version,class,baseline_accuracy,csa_accuracy,delta\n");
        for ((name, c), b) in
            self.class_names.iter().zip(&self.csa_per_class).zip(&self.baseline_per_class)
        {
            out.push_str(&format!("{v},{name},{b:.6},{c:.6},{:.6}\n", c - b));
        }
        out.push_str(&format!(
            "{v},__mean__,{:.6},{:.6},{:.6}\n",
            self.baseline_mean,
            self.csa_mean,
            self.csa_mean - self.baseline_mean
        ));
        out
    }
}

/// Downlink evaluation summary for a fixed decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownlinkEval {
    /// Fraction of correct terminal predictions.
    pub top1: f64,
    /// Mean per-message index error rate.
    pub mean_index_error: f64,
}

/// Send every dataset item over the downlink once and score the decoder.
pub fn evaluate_downlink(
    scenario: &Scenario,
    codec: &Codec,
    decoder: &ClassifierDecoder,
    dataset: &LabeledDataset,
    seed: u64,
) -> Result<DownlinkEval, SimError> {
    if dataset.items.is_empty() {
        return Err(SimError::InvalidParameter("evaluation dataset is empty".into()));
    }
    let mut correct = 0usize;
    let mut ier = 0.0;
    for (j, (image, label)) in dataset.items.iter().enumerate() {
        let msg = encode(image, &codec.extractor, &codec.codebook, &codec.dims)?;
        let mut rng = stream(seed, &[0xE7, j as u64]);
        let out = transmit(&msg, &scenario.link(&scenario.downlink), &codec.dims, &mut rng)?;
        let pred = argmax(&decode(&out.message, &codec.codebook, decoder)?);
        correct += (pred == *label) as usize;
        ier += index_error_rate(&out.sent_symbols, &out.received_symbols)?;
    }
    let n = dataset.items.len() as f64;
    Ok(DownlinkEval { top1: correct as f64 / n, mean_index_error: ier / n })
}

/// Send every dataset item over the downlink once and record per-class
/// outcomes into a confusion matrix. Same channel stream per (seed, item),
/// so two decoders scored with equal seeds see identical realizations.
pub fn evaluate_downlink_confusion(
    scenario: &Scenario,
    codec: &Codec,
    decoder: &ClassifierDecoder,
    eval: &LabeledDataset,
    confusion: &mut ConfusionMatrix,
    seed: u64,
) -> Result<(), SimError> {
    for (j, (image, label)) in eval.items.iter().enumerate() {
        let msg = encode(image, &codec.extractor, &codec.codebook, &codec.dims)?;
        let mut rng = stream(seed, &[0xEE, j as u64]);
        let out = transmit(&msg, &scenario.link(&scenario.downlink), &codec.dims, &mut rng)?;
        let pred = argmax(&decode(&out.message, &codec.codebook, decoder)?);
        confusion.record(*label, pred)?;
    }
    Ok(())
}

/// Train one codec per seed, adapt a copy of its decoder online under the
/// noisy downlink, and evaluate both decoders on held-out data with a shared
/// per-item channel realization so the comparison is paired.
pub fn compare_csa(cfg: &SimConfig) -> Result<CsaComparison, SimError> {
    let section = &cfg.compare_csa;
    if section.n_seeds == 0 {
        return Err(SimError::InvalidParameter("n_seeds must be >= 1".into()));
    }
    if !(section.train_fraction > 0.0
        && section.adapt_fraction > 0.0
        && section.train_fraction + section.adapt_fraction < 1.0)
    {
        return Err(SimError::InvalidParameter(
            "train_fraction and adapt_fraction must be positive and sum below 1".into(),
        ));
    }
    let scenario = Scenario::from_config(cfg, section.psnr_db, true)?;
    let mut csa_conf: Option<ConfusionMatrix> = None;
    let mut base_conf: Option<ConfusionMatrix> = None;
    for s in 0..section.n_seeds {
        let seed = derive_seed(cfg.seed, &[0x7C, s as u64]);
        let mut dataset = generate_synthetic(
            cfg.data.classes,
            cfg.data.per_class,
            cfg.data.height,
            cfg.data.width,
            cfg.data.bands,
            cfg.data.noise_level,
            seed,
        )?;
        let mut shuffle_rng = stream(seed, &[0x10]);
        dataset.shuffle(&mut shuffle_rng);
        let total = dataset.items.len();
        let n_train = ((total as f64) * section.train_fraction).round() as usize;
        let n_adapt = ((total as f64) * section.adapt_fraction).round() as usize;
        let (train_set, rest) = dataset.split_at(n_train);
        let (adapt_set, eval_set) = rest.split_at(n_adapt);

        let mut train_rng = stream(seed, &[0x11]);
        let (codec, _) = crate::dtjscc::train(&train_set, &cfg.dtjscc.to_train_config(), &mut train_rng)?;

        if csa_conf.is_none() {
            csa_conf = Some(ConfusionMatrix::new(train_set.class_names.clone()));
            base_conf = Some(ConfusionMatrix::new(train_set.class_names.clone()));
        }

        let mut models = EpisodeModels::from_codec(codec, seed);
        for (t, (image, label)) in adapt_set.items.iter().enumerate() {
            let msg =
                encode(image, &models.codec.extractor, &models.codec.codebook, &models.codec.dims)?;
            let mut rng = stream(seed, &[0xAD, t as u64]);
            let out =
                transmit(&msg, &scenario.link(&scenario.downlink), &models.codec.dims, &mut rng)?;
            adapt_step(
                &mut models.ut_decoder,
                &mut models.ut_g,
                &mut models.ut_bank,
                &models.codec,
                &out.message,
                *label,
                scenario.lambda_sa,
                scenario.blend,
                scenario.adapt_lr,
            )?;
        }

        let baseline_decoder = models.codec.decoder.clone();
        evaluate_downlink_confusion(
            &scenario,
            &models.codec,
            &models.ut_decoder,
            &eval_set,
            csa_conf.as_mut().expect("initialized"),
            seed,
        )?;
        evaluate_downlink_confusion(
            &scenario,
            &models.codec,
            &baseline_decoder,
            &eval_set,
            base_conf.as_mut().expect("initialized"),
            seed,
        )?;
    }
    let csa_conf = csa_conf.expect("at least one seed");
    let base_conf = base_conf.expect("at least one seed");
    let csa_per_class = csa_conf.per_class_accuracy();
    let baseline_per_class = base_conf.per_class_accuracy();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(CsaComparison {
        class_names: csa_conf.class_names.clone(),
        csa_mean: mean(&csa_per_class),
        baseline_mean: mean(&baseline_per_class),
        csa_per_class,
        baseline_per_class,
        n_seeds: section.n_seeds,
    })
}
