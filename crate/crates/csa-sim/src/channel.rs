//! Small-scale fading and the Y = H*X + N channel application.
//!
//! Each fading variant lives behind the [`FadingModel`] trait and is
//! registered by name, so configs pick channels at runtime
//! ("awgn", "rician", "rayleigh", "leo_rician", "leo_rayleigh", "isl_los").

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

use crate::error::SimError;
use crate::rng::Rng;

/// A block of complex baseband samples.
pub type ComplexBlock = Vec<Complex64>;

/// One fading realization plus the noise level applied alongside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelInstance {
    /// Channel gain H.
    pub gain: Complex64,
    /// Per-component (real/imag) standard deviation of the complex noise.
    pub noise_sigma: f64,
}

/// Doppler/delay pair driving the time-frequency phase response.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseRotation {
    pub doppler_hz: f64,
    pub delay_s: f64,
}

/// Inputs shared by all fading strategies. Fields a given strategy does not
/// use are ignored by its factory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingParams {
    /// Rician K-factor (LoS over scattered power).
    pub k_factor: f64,
    /// Linear large-scale power gain (1.0 for normalized studies).
    pub zeta_lin: f64,
    /// Phase of the deterministic LoS phasor.
    pub los_phase_rad: f64,
    /// Doppler shift for LEO variants, Hz.
    pub doppler_hz: f64,
    /// Propagation delay for LEO variants, s.
    pub delay_s: f64,
}

impl Default for FadingParams {
    fn default() -> Self {
        Self { k_factor: 2.8, zeta_lin: 1.0, los_phase_rad: 0.0, doppler_hz: 0.0, delay_s: 0.0 }
    }
}

/// One small-scale fading strategy. Implementations are immutable after
/// construction; sampling takes an explicit stream.
pub trait FadingModel: Send + Sync {
    fn name(&self) -> &'static str;
    /// Draw one channel gain realization.
    fn sample_gain(&self, rng: &mut Rng) -> Complex64;
    /// Per-symbol phase rotation, when the variant models Doppler/delay.
    fn rotation(&self) -> Option<PhaseRotation> {
        None
    }
}

fn complex_normal(rng: &mut Rng) -> Complex64 {
    // CN(0,1): each component N(0, 1/2)
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

struct Awgn;

impl FadingModel for Awgn {
    fn name(&self) -> &'static str {
        "awgn"
    }
    fn sample_gain(&self, _rng: &mut Rng) -> Complex64 {
        Complex64::new(1.0, 0.0)
    }
}

struct Rician {
    k_factor: f64,
    zeta_lin: f64,
    los: Complex64,
    rotation: Option<PhaseRotation>,
    name: &'static str,
}

impl FadingModel for Rician {
    fn name(&self) -> &'static str {
        self.name
    }
    fn sample_gain(&self, rng: &mut Rng) -> Complex64 {
        let k = self.k_factor;
        let los_amp = (k * self.zeta_lin / (k + 1.0)).sqrt();
        let nlos_amp = (self.zeta_lin / (k + 1.0)).sqrt();
        self.los * los_amp + complex_normal(rng) * nlos_amp
    }
    fn rotation(&self) -> Option<PhaseRotation> {
        self.rotation
    }
}

struct Rayleigh {
    zeta_lin: f64,
    rotation: Option<PhaseRotation>,
    name: &'static str,
}

impl FadingModel for Rayleigh {
    fn name(&self) -> &'static str {
        self.name
    }
    fn sample_gain(&self, rng: &mut Rng) -> Complex64 {
        complex_normal(rng) * self.zeta_lin.sqrt()
    }
    fn rotation(&self) -> Option<PhaseRotation> {
        self.rotation
    }
}

/// LoS-only fading (inter-satellite link): the scattered term is absent.
struct LosOnly {
    k_factor: f64,
    zeta_lin: f64,
    los: Complex64,
}

impl FadingModel for LosOnly {
    fn name(&self) -> &'static str {
        "isl_los"
    }
    fn sample_gain(&self, _rng: &mut Rng) -> Complex64 {
        let k = self.k_factor;
        self.los * (k * self.zeta_lin / (k + 1.0)).sqrt()
    }
}

/// Named factory for a fading strategy.
pub struct FadingFactory {
    pub name: &'static str,
    pub build: fn(&FadingParams) -> Result<Box<dyn FadingModel>, SimError>,
}

fn check_common(p: &FadingParams) -> Result<(), SimError> {
    if p.k_factor < 0.0 {
        return Err(SimError::InvalidParameter(format!("k_factor must be >= 0, got {}", p.k_factor)));
    }
    if !(p.zeta_lin > 0.0) || !p.zeta_lin.is_finite() {
        return Err(SimError::InvalidParameter(format!("zeta_lin must be finite and > 0, got {}", p.zeta_lin)));
    }
    Ok(())
}

fn los_phasor(p: &FadingParams) -> Complex64 {
    Complex64::from_polar(1.0, p.los_phase_rad)
}

static FADING_REGISTRY: &[FadingFactory] = &[
    FadingFactory {
        name: "awgn",
        build: |_p| Ok(Box::new(Awgn)),
    },
    FadingFactory {
        name: "rician",
        build: |p| {
            check_common(p)?;
            Ok(Box::new(Rician {
                k_factor: p.k_factor,
                zeta_lin: p.zeta_lin,
                los: los_phasor(p),
                rotation: None,
                name: "rician",
            }))
        },
    },
    FadingFactory {
        name: "rayleigh",
        build: |p| {
            check_common(p)?;
            Ok(Box::new(Rayleigh { zeta_lin: p.zeta_lin, rotation: None, name: "rayleigh" }))
        },
    },
    FadingFactory {
        name: "leo_rician",
        build: |p| {
            check_common(p)?;
            Ok(Box::new(Rician {
                k_factor: p.k_factor,
                zeta_lin: p.zeta_lin,
                los: los_phasor(p),
                rotation: Some(PhaseRotation { doppler_hz: p.doppler_hz, delay_s: p.delay_s }),
                name: "leo_rician",
            }))
        },
    },
    FadingFactory {
        name: "leo_rayleigh",
        build: |p| {
            check_common(p)?;
            Ok(Box::new(Rayleigh {
                zeta_lin: p.zeta_lin,
                rotation: Some(PhaseRotation { doppler_hz: p.doppler_hz, delay_s: p.delay_s }),
                name: "leo_rayleigh",
            }))
        },
    },
    FadingFactory {
        name: "isl_los",
        build: |p| {
            check_common(p)?;
            Ok(Box::new(LosOnly { k_factor: p.k_factor, zeta_lin: p.zeta_lin, los: los_phasor(p) }))
        },
    },
];

/// Names of all registered fading strategies.
pub fn fading_kinds() -> Vec<&'static str> {
    FADING_REGISTRY.iter().map(|f| f.name).collect()
}

/// Build a fading strategy by registered name.
pub fn build_fading(name: &str, params: &FadingParams) -> Result<Box<dyn FadingModel>, SimError> {
    FADING_REGISTRY
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| SimError::UnknownStrategy { kind: "channel", name: name.to_string(), known: fading_kinds() })
        .and_then(|f| (f.build)(params))
}

/// Apply y = H*x + n per sample; noise components are i.i.d. N(0, sigma^2).
pub fn apply_channel(block: &[Complex64], inst: &ChannelInstance, rng: &mut Rng) -> ComplexBlock {
    debug_assert!(inst.noise_sigma >= 0.0);
    block
        .iter()
        .map(|&x| {
            let mut y = inst.gain * x;
            if inst.noise_sigma > 0.0 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                y += Complex64::new(re, im) * inst.noise_sigma;
            }
            y
        })
        .collect()
}

/// Time-frequency response: fading * exp(j*2*pi*(t*v - f*tau)).
pub fn response_at(t: f64, f: f64, fading: Complex64, doppler_hz: f64, delay_s: f64) -> Complex64 {
    fading * Complex64::from_polar(1.0, TAU * (t * doppler_hz - f * delay_s))
}

/// Per-component noise sigma such that peak symbol power over total complex
/// noise power equals the given PSNR in dB.
pub fn noise_sigma_from_psnr(psnr_db: f64, peak_symbol_power: f64) -> Result<f64, SimError> {
    if !(peak_symbol_power > 0.0) {
        return Err(SimError::InvalidParameter(format!(
            "peak_symbol_power must be > 0, got {peak_symbol_power}"
        )));
    }
    let total_noise_power = peak_symbol_power / 10f64.powf(psnr_db / 10.0);
    Ok((total_noise_power / 2.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rician(k: f64, zeta: f64) -> Box<dyn FadingModel> {
        build_fading("rician", &FadingParams { k_factor: k, zeta_lin: zeta, ..Default::default() }).unwrap()
    }

    #[test]
    fn awgn_gain_is_unity() {
        let model = build_fading("awgn", &FadingParams::default()).unwrap();
        let mut rng = crate::rng::stream(1, &[]);
        assert_eq!(model.sample_gain(&mut rng), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn unknown_kind_rejected() {
        let err = build_fading("nakagami", &FadingParams::default()).err().unwrap();
        assert!(matches!(err, SimError::UnknownStrategy { .. }));
    }

    #[test]
    fn negative_k_rejected() {
        let err = build_fading("rician", &FadingParams { k_factor: -1.0, ..Default::default() });
        assert!(err.is_err());
    }

    #[test]
    fn huge_k_approaches_los() {
        let model = rician(1e12, 1.0);
        let mut rng = crate::rng::stream(3, &[]);
        for _ in 0..100 {
            let h = model.sample_gain(&mut rng);
            assert_relative_eq!(h.norm(), 1.0, max_relative = 1e-5);
        }
    }

    #[test]
    fn rician_second_moment_and_k_estimate() {
        let model = rician(2.8, 1.0);
        let mut rng = crate::rng::stream(5, &[]);
        let n = 1_000_000usize;
        let mut p2 = 0.0;
        let mut mean = Complex64::new(0.0, 0.0);
        for _ in 0..n {
            let h = model.sample_gain(&mut rng);
            p2 += h.norm_sqr();
            mean += h;
        }
        p2 /= n as f64;
        mean /= n as f64;
        assert!((p2 - 1.0).abs() < 0.01, "E|H|^2 = {p2}");
        // moment estimator: LoS power / scattered power
        let los_power = mean.norm_sqr();
        let scatter = p2 - los_power;
        let k_est = los_power / scatter;
        assert!((k_est - 2.8).abs() / 2.8 < 0.10, "k_est = {k_est}");
    }

    #[test]
    fn rayleigh_second_moment_matches_zeta() {
        for zeta in [1.0, 0.25] {
            let model =
                build_fading("rayleigh", &FadingParams { zeta_lin: zeta, ..Default::default() }).unwrap();
            let mut rng = crate::rng::stream(6, &[zeta.to_bits()]);
            let n = 1_000_000usize;
            let p2: f64 = (0..n).map(|_| model.sample_gain(&mut rng).norm_sqr()).sum::<f64>() / n as f64;
            assert!((p2 - zeta).abs() / zeta < 0.01, "E|H|^2 = {p2}, zeta = {zeta}");
        }
    }

    #[test]
    fn isl_los_is_deterministic() {
        let model = build_fading("isl_los", &FadingParams { k_factor: 2.8, ..Default::default() }).unwrap();
        let mut rng = crate::rng::stream(8, &[]);
        let h1 = model.sample_gain(&mut rng);
        let h2 = model.sample_gain(&mut rng);
        assert_eq!(h1, h2);
        assert_relative_eq!(h1.norm_sqr(), 2.8 / 3.8, epsilon = 1e-12);
    }

    #[test]
    fn apply_channel_noiseless_identity() {
        let block: Vec<Complex64> = (0..16).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let inst = ChannelInstance { gain: Complex64::new(1.0, 0.0), noise_sigma: 0.0 };
        let mut rng = crate::rng::stream(0, &[]);
        assert_eq!(apply_channel(&block, &inst, &mut rng), block);
    }

    #[test]
    fn apply_channel_noise_variance() {
        let block = vec![Complex64::new(0.0, 0.0); 1_000_000];
        let sigma = 0.3;
        let inst = ChannelInstance { gain: Complex64::new(1.0, 0.0), noise_sigma: sigma };
        let mut rng = crate::rng::stream(12, &[]);
        let out = apply_channel(&block, &inst, &mut rng);
        let var_re: f64 = out.iter().map(|y| y.re * y.re).sum::<f64>() / out.len() as f64;
        let var_im: f64 = out.iter().map(|y| y.im * y.im).sum::<f64>() / out.len() as f64;
        assert!((var_re - sigma * sigma).abs() / (sigma * sigma) < 0.02);
        assert!((var_im - sigma * sigma).abs() / (sigma * sigma) < 0.02);
    }

    #[test]
    fn apply_channel_linear_when_noiseless() {
        let block: Vec<Complex64> = (0..8).map(|i| Complex64::new(0.5 * i as f64, 1.0)).collect();
        let scaled: Vec<Complex64> = block.iter().map(|&x| x * 3.0).collect();
        let inst = ChannelInstance { gain: Complex64::new(0.4, -0.9), noise_sigma: 0.0 };
        let mut rng = crate::rng::stream(0, &[]);
        let a = apply_channel(&scaled, &inst, &mut rng.clone());
        let b: Vec<Complex64> = apply_channel(&block, &inst, &mut rng).iter().map(|&y| y * 3.0).collect();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x.re, y.re, epsilon = 1e-12);
            assert_relative_eq!(x.im, y.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn apply_channel_seed_reproducible() {
        let block = vec![Complex64::new(1.0, 1.0); 64];
        let inst = ChannelInstance { gain: Complex64::new(0.8, 0.2), noise_sigma: 0.5 };
        let a = apply_channel(&block, &inst, &mut crate::rng::stream(21, &[4]));
        let b = apply_channel(&block, &inst, &mut crate::rng::stream(21, &[4]));
        assert_eq!(a, b);
    }

    #[test]
    fn response_identity_at_origin() {
        let fading = Complex64::new(0.3, -0.7);
        assert_eq!(response_at(0.0, 0.0, fading, 1e3, 1e-6), fading);
    }

    #[test]
    fn response_preserves_magnitude() {
        let fading = Complex64::new(0.3, -0.7);
        for (t, f) in [(1e-3, 1e6), (0.1, 2.4e9), (7.0, 0.0)] {
            assert_relative_eq!(response_at(t, f, fading, 653.8e3, 2e-3).norm(), fading.norm(), epsilon = 1e-12);
        }
    }

    #[test]
    fn response_half_cycle_negates() {
        let fading = Complex64::new(1.0, 2.0);
        // t*v - f*tau = 0.5
        let out = response_at(0.5, 0.0, fading, 1.0, 0.0);
        assert_relative_eq!(out.re, -fading.re, epsilon = 1e-9);
        assert_relative_eq!(out.im, -fading.im, epsilon = 1e-9);
    }

    #[test]
    fn response_periodicity() {
        let fading = Complex64::new(0.5, 0.5);
        let v = 1234.0;
        let tau = 5.6e-4;
        let a = response_at(0.37, 777.0, fading, v, tau);
        let b = response_at(0.37 + 1.0 / v, 777.0, fading, v, tau);
        let c = response_at(0.37, 777.0 + 1.0 / tau, fading, v, tau);
        assert_relative_eq!(a.re, b.re, epsilon = 1e-6);
        assert_relative_eq!(a.im, b.im, epsilon = 1e-6);
        assert_relative_eq!(a.re, c.re, epsilon = 1e-6);
        assert_relative_eq!(a.im, c.im, epsilon = 1e-6);
    }

    #[test]
    fn psnr_to_sigma() {
        let s0 = noise_sigma_from_psnr(0.0, 1.0).unwrap();
        assert_relative_eq!(s0, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-9);
        let s14 = noise_sigma_from_psnr(14.0, 1.0).unwrap();
        assert_relative_eq!(2.0 * s14 * s14, 0.0398, epsilon = 1e-4);
        // +10 dB divides total noise power by 10 exactly
        let s24 = noise_sigma_from_psnr(24.0, 1.0).unwrap();
        assert_relative_eq!(s14 * s14 / (s24 * s24), 10.0, epsilon = 1e-9);
        assert!(noise_sigma_from_psnr(10.0, 0.0).is_err());
    }

    #[test]
    fn rician_k0_matches_rayleigh_ks() {
        // two-sample Kolmogorov-Smirnov on |H| at alpha = 0.01
        let n = 100_000usize;
        let rician0 = rician(0.0, 1.0);
        let rayleigh = build_fading("rayleigh", &FadingParams::default()).unwrap();
        let mut r1 = crate::rng::stream(31, &[]);
        let mut r2 = crate::rng::stream(32, &[]);
        let mut a: Vec<f64> = (0..n).map(|_| rician0.sample_gain(&mut r1).norm()).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rayleigh.sample_gain(&mut r2).norm()).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let d = ks_statistic(&a, &b);
        let crit = 1.628 * ((2 * n) as f64 / (n * n) as f64).sqrt();
        assert!(d < crit, "KS statistic {d} >= critical {crit}");
    }

    pub(crate) fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let fa = i as f64 / a.len() as f64;
            let fb = j as f64 / b.len() as f64;
            d = d.max((fa - fb).abs());
        }
        d
    }
}
