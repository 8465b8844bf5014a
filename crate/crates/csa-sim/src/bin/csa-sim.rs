//! Command-line front end: configuration loading, training, experiment
//! sweeps, SER curves, the adaptive-versus-fixed comparison, and fading
//! statistics dumps. Every command is deterministic per seed and emits
//! byte-identical artifacts on rerun.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use csa_sim::channel::{build_fading, fading_kinds, FadingParams};
use csa_sim::config::SimConfig;
use csa_sim::data::{generate_synthetic, load_dataset_dir, LabeledDataset};
use csa_sim::dtjscc::{save_checkpoint, train};
use csa_sim::geometry::{doppler_shift_hz, GeometryParams};
use csa_sim::modem::{build_constellation, ser_16psk_analytic, ser_monte_carlo};
use csa_sim::pipeline::{compare_csa, evaluate_downlink, Scenario};
use csa_sim::rng::{derive_seed, stream};
use csa_sim::{SimError, CSV_SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "csa-sim", version, about = "LEO semantic-communication simulator")]
struct Cli {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Replace existing artifacts instead of refusing.
    #[arg(long, global = true)]
    overwrite: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the codec; writes a checkpoint and a training-trace CSV.
    Train,
    /// PSNR x K_q x channel sweep; writes raw and aggregated CSVs.
    Sweep,
    /// Monte-Carlo SER versus Es/N0 with the analytic 16PSK overlay.
    SerCurve,
    /// Adaptive versus fixed receiver comparison table.
    CompareCsa,
    /// Dump fading statistics and link-budget losses.
    ChannelProbe,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SimError::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), SimError> {
    let mut cfg = match &cli.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Train => cmd_train(&cfg, &cli),
        Command::Sweep => cmd_sweep(&cfg, &cli),
        Command::SerCurve => cmd_ser_curve(&cfg, &cli),
        Command::CompareCsa => cmd_compare_csa(&cfg, &cli),
        Command::ChannelProbe => cmd_channel_probe(&cfg, &cli),
    }
}

/// Resolve an artifact path, refusing to clobber without --overwrite.
fn target(cli: &Cli, name: &str) -> Result<PathBuf, SimError> {
    let path = cli.out.join(name);
    if path.exists() && !cli.overwrite {
        return Err(SimError::Config(format!(
            "{} already exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(path)
}

fn load_data(cfg: &SimConfig, seed: u64) -> Result<LabeledDataset, SimError> {
    match &cfg.data.dataset_dir {
        Some(dir) => load_dataset_dir(Path::new(dir)),
        None => generate_synthetic(
            cfg.data.classes,
            cfg.data.per_class,
            cfg.data.height,
            cfg.data.width,
            cfg.data.bands,
            cfg.data.noise_level,
            seed,
        ),
    }
}

fn cmd_train(cfg: &SimConfig, cli: &Cli) -> Result<(), SimError> {
    let checkpoint_path = target(cli, "codec.dtjc")?;
    let trace_path = target(cli, "training_trace.csv")?;
    let dataset = load_data(cfg, cfg.seed)?;
    let mut rng = stream(cfg.seed, &[0x11]);
    let (codec, trace) = train(&dataset, &cfg.dtjscc.to_train_config(), &mut rng)?;
    save_checkpoint(&codec, &checkpoint_path)?;
    let mut csv = String::from("schema_version,epoch,loss,train_top1\n");
    for (epoch, (loss, acc)) in trace.epoch_loss.iter().zip(&trace.epoch_accuracy).enumerate() {
        csv.push_str(&format!("{CSV_SCHEMA_VERSION},{epoch},{loss:.6},{acc:.6}\n"));
    }
    std::fs::write(&trace_path, csv)?;
    let final_acc = trace.epoch_accuracy.last().copied().unwrap_or(0.0);
    println!("trained {} epochs, final train top1 {:.4}", trace.epoch_loss.len(), final_acc);
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

#[derive(Debug, Clone)]
struct SweepPoint {
    channel: String,
    constellation: String,
    psnr_db: f64,
    k_q: usize,
    seed: u64,
}

#[derive(Debug, Clone)]
struct SweepRow {
    point: SweepPoint,
    top1: f64,
    index_error_rate: f64,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Train and evaluate one sweep point. Deterministic in (config, point).
fn sweep_point(cfg: &SimConfig, point: &SweepPoint) -> Result<SweepRow, SimError> {
    let mut c = cfg.clone();
    c.channel.downlink = point.channel.clone();
    c.modem.constellation = point.constellation.clone();
    c.dtjscc.codebook_size = point.k_q;
    let scenario = Scenario::from_config(&c, point.psnr_db, false)?;
    let point_seed = derive_seed(cfg.seed, &[0x5E, point.seed]);
    let mut dataset = load_data(&c, point_seed)?;
    let mut shuffle_rng = stream(point_seed, &[0x10]);
    dataset.shuffle(&mut shuffle_rng);
    let (train_set, eval_set) = dataset.split_at(cfg.data.classes * cfg.data.per_class / 2);
    let mut train_rng = stream(point_seed, &[0x11]);
    let (codec, _) = train(&train_set, &c.dtjscc.to_train_config(), &mut train_rng)?;
    let eval = evaluate_downlink(&scenario, &codec, &codec.decoder, &eval_set, point_seed)?;
    Ok(SweepRow {
        point: point.clone(),
        top1: round6(eval.top1),
        index_error_rate: round6(eval.mean_index_error),
    })
}

fn run_pool<T: Send>(
    jobs: usize,
    n: usize,
    work: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                *results[i].lock().expect("result slot") = Some(work(i));
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("worker filled slot"))
        .collect()
}

fn cmd_sweep(cfg: &SimConfig, cli: &Cli) -> Result<(), SimError> {
    let raw_path = target(cli, "sweep.csv")?;
    let agg_path = target(cli, "sweep_agg.csv")?;
    let sw = &cfg.sweep;
    if sw.psnr_list.is_empty()
        || sw.kq_list.is_empty()
        || sw.channel_kinds.is_empty()
        || sw.constellations.is_empty()
        || sw.seeds.is_empty()
    {
        return Err(SimError::Config("sweep lists must be nonempty".into()));
    }
    let mut points = Vec::new();
    for channel in &sw.channel_kinds {
        for constellation in &sw.constellations {
            for &psnr_db in &sw.psnr_list {
                for &k_q in &sw.kq_list {
                    for &seed in &sw.seeds {
                        points.push(SweepPoint {
                            channel: channel.clone(),
                            constellation: constellation.clone(),
                            psnr_db,
                            k_q,
                            seed,
                        });
                    }
                }
            }
        }
    }
    let results = run_pool(cli.jobs, points.len(), |i| sweep_point(cfg, &points[i]));
    let mut rows = Vec::with_capacity(points.len());
    for r in results {
        rows.push(r?);
    }

    let mut raw = String::from(
        "schema_version,run_id,channel,constellation,psnr_db,k_q,rician_k,seed,top1,index_error_rate\n",
    );
    for row in &rows {
        let p = &row.point;
        let run_id =
            format!("{}_{}_p{:.1}_k{}_s{}", p.channel, p.constellation, p.psnr_db, p.k_q, p.seed);
        raw.push_str(&format!(
            "{CSV_SCHEMA_VERSION},{run_id},{},{},{:.2},{},{:.2},{},{:.6},{:.6}\n",
            p.channel,
            p.constellation,
            p.psnr_db,
            p.k_q,
            cfg.channel.rician_k,
            p.seed,
            row.top1,
            row.index_error_rate
        ));
    }
    std::fs::write(&raw_path, raw)?;

    let mut agg = String::from(
        "schema_version,channel,constellation,psnr_db,k_q,n_seeds,top1_mean,top1_std,index_error_rate_mean,index_error_rate_std\n",
    );
    let stats = |values: &[f64]| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    for chunk in rows.chunks(sw.seeds.len()) {
        let p = &chunk[0].point;
        let (t_mean, t_std) = stats(&chunk.iter().map(|r| r.top1).collect::<Vec<_>>());
        let (e_mean, e_std) =
            stats(&chunk.iter().map(|r| r.index_error_rate).collect::<Vec<_>>());
        agg.push_str(&format!(
            "{CSV_SCHEMA_VERSION},{},{},{:.2},{},{},{:.9},{:.9},{:.9},{:.9}\n",
            p.channel,
            p.constellation,
            p.psnr_db,
            p.k_q,
            chunk.len(),
            t_mean,
            t_std,
            e_mean,
            e_std
        ));
    }
    std::fs::write(&agg_path, agg)?;
    println!("{} sweep points -> {}", rows.len(), raw_path.display());
    println!("aggregated -> {}", agg_path.display());
    Ok(())
}

fn cmd_ser_curve(cfg: &SimConfig, cli: &Cli) -> Result<(), SimError> {
    let path = target(cli, "ser_curve.csv")?;
    let sw = &cfg.sweep;
    if sw.snr_list_db.is_empty() || sw.constellations.is_empty() {
        return Err(SimError::Config("snr_list_db and constellations must be nonempty".into()));
    }
    let mut csv = String::from("schema_version,constellation,snr_db,ser,analytic_16psk\n");
    for (ci, name) in sw.constellations.iter().enumerate() {
        let constellation = build_constellation(name, cfg.modem.apsk_gamma)?;
        for (si, &snr_db) in sw.snr_list_db.iter().enumerate() {
            let mut rng = stream(cfg.seed, &[0x5E9, ci as u64, si as u64]);
            let ser = ser_monte_carlo(&constellation, snr_db, sw.ser_symbols, &mut rng)?;
            csv.push_str(&format!(
                "{CSV_SCHEMA_VERSION},{name},{snr_db:.2},{ser:.8},{:.8}\n",
                ser_16psk_analytic(snr_db)
            ));
        }
    }
    std::fs::write(&path, csv)?;
    println!("SER curve -> {}", path.display());
    Ok(())
}

fn cmd_compare_csa(cfg: &SimConfig, cli: &Cli) -> Result<(), SimError> {
    let path = target(cli, "compare_csa.csv")?;
    let cmp = compare_csa(cfg)?;
    std::fs::write(&path, cmp.to_csv())?;
    println!(
        "baseline mean {:.2}%, adaptive mean {:.2}%, {} of {} classes improved",
        cmp.baseline_mean,
        cmp.csa_mean,
        cmp.classes_improved(),
        cmp.class_names.len()
    );
    println!("table -> {}", path.display());
    Ok(())
}

/// Moment-based Rician K estimate from |H|^2 samples.
fn estimate_k(powers: &[f64]) -> f64 {
    let n = powers.len() as f64;
    let m2 = powers.iter().sum::<f64>() / n;
    let m4 = powers.iter().map(|p| p * p).sum::<f64>() / n;
    let los = (2.0 * m2 * m2 - m4).max(0.0).sqrt();
    let scatter = m2 - los;
    if scatter <= 0.0 {
        f64::INFINITY
    } else {
        los / scatter
    }
}

fn cmd_channel_probe(cfg: &SimConfig, cli: &Cli) -> Result<(), SimError> {
    let path = target(cli, "channel_probe.csv")?;
    let geo = GeometryParams::new(
        cfg.geometry.altitude_km,
        cfg.geometry.elevation_deg.to_radians(),
        cfg.geometry.radial_velocity_mps,
    )?;
    let doppler = doppler_shift_hz(cfg.linkbudget.carrier_ghz * 1e9, geo.radial_velocity_mps);
    let scenario = Scenario::from_config(cfg, cfg.pipeline.psnr_db, false)?;
    println!(
        "slant range {:.2} km, doppler {:.1} kHz, downlink zeta {:.2} dB, ISL zeta {:.2} dB",
        cfg.geometry.slant_range_mode.slant_range_km(&geo),
        doppler / 1e3,
        scenario.downlink.zeta_db,
        scenario.isl.zeta_db
    );

    let params = FadingParams {
        k_factor: cfg.channel.rician_k,
        zeta_lin: 1.0,
        los_phase_rad: cfg.channel.los_phase_rad,
        doppler_hz: doppler,
        delay_s: cfg.channel.delay_s,
    };
    let draws = 100_000usize;
    let mut csv = String::from("schema_version,kind,mean_power,mean_re,mean_im,k_estimate\n");
    for (i, kind) in fading_kinds().iter().enumerate() {
        let model = build_fading(kind, &params)?;
        let mut rng = stream(cfg.seed, &[0xCB, i as u64]);
        let mut powers = Vec::with_capacity(draws);
        let (mut re, mut im) = (0.0, 0.0);
        for _ in 0..draws {
            let h = model.sample_gain(&mut rng);
            powers.push(h.norm_sqr());
            re += h.re;
            im += h.im;
        }
        let mean_power = powers.iter().sum::<f64>() / draws as f64;
        let k = estimate_k(&powers);
        let k_text = if k.is_finite() { format!("{k:.4}") } else { "inf".to_string() };
        csv.push_str(&format!(
            "{CSV_SCHEMA_VERSION},{kind},{mean_power:.6},{:.6},{:.6},{k_text}\n",
            re / draws as f64,
            im / draws as f64
        ));
    }
    std::fs::write(&path, csv)?;
    println!("fading statistics -> {}", path.display());
    Ok(())
}
