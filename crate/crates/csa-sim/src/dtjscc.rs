//! Discrete task-oriented joint source-channel codec: a small trainable
//! feature extractor, learned codebooks quantizing features to symbol
//! indices, a classifier decoder, and channel-in-the-loop training.
//!
//! Quantization trains with a straight-through gradient plus an
//! exponential-moving-average codeword update pulling codewords toward
//! their assigned features.

use num_complex::Complex64;
use rand::Rng as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::channel::{apply_channel, response_at, ChannelInstance, FadingModel};
use crate::data::{LabeledDataset, MultispectralImage};
use crate::error::SimError;
use crate::modem::{demodulate_hard, modulate, Constellation};
use crate::nn::{tanh_backward, tanh_forward, Linear};
use crate::rng::Rng;
use crate::semaug::{blended_sigma, sa_loss_and_grad, ClassCovarianceBank};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DTJC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Dimension bundle shared by all codec parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecDims {
    /// Length of the image statistics vector fed to the extractor.
    pub input_dim: usize,
    /// Hidden width of the extractor.
    pub hidden: usize,
    /// Number of sub-vectors (codebooks) per image.
    pub l_books: usize,
    /// Dimension of each sub-vector.
    pub a_sub: usize,
    /// Codewords per codebook (the quantization scale K_q).
    pub codebook_size: usize,
    /// Number of classes.
    pub n_classes: usize,
}

impl CodecDims {
    /// Total feature dimension A = L * A_sub.
    pub fn feature_dim(&self) -> usize {
        self.l_books * self.a_sub
    }

    /// 16-ary symbols needed to carry one codeword index.
    pub fn symbols_per_index(&self) -> usize {
        let bits = usize::BITS - (self.codebook_size - 1).leading_zeros();
        ((bits as usize) + 3) / 4
    }
}

/// Two-layer extractor mapping image statistics to the A-dim feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeatureExtractor {
    pub fn seeded(dims: &CodecDims, rng: &mut Rng) -> Self {
        let scale1 = (1.0 / dims.input_dim as f64).sqrt();
        let scale2 = (1.0 / dims.hidden as f64).sqrt();
        Self {
            l1: Linear::seeded(dims.input_dim, dims.hidden, scale1, rng),
            l2: Linear::seeded(dims.hidden, dims.feature_dim(), scale2, rng),
        }
    }

    /// Forward pass; returns (hidden activation, features).
    pub fn forward(&self, stats: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = tanh_forward(&self.l1.forward(stats));
        let a = self.l2.forward(&h);
        (h, a)
    }
}

/// L codebooks of `codebook_size` codewords each, with EMA update state.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// books[l][k] is an A_sub-dim codeword.
    pub books: Vec<Vec<Vec<f64>>>,
    ema_count: Vec<Vec<f64>>,
    ema_sum: Vec<Vec<Vec<f64>>>,
    decay: f64,
}

impl Codebook {
    pub fn from_codewords(books: Vec<Vec<Vec<f64>>>, decay: f64) -> Self {
        let ema_count = books.iter().map(|b| vec![1.0; b.len()]).collect();
        let ema_sum = books.clone();
        Self { books, ema_count, ema_sum, decay }
    }

    /// Initialize codewords from sample feature sub-vectors, cycling when
    /// there are fewer samples than codewords.
    pub fn init_from_features(
        dims: &CodecDims,
        sub_vectors: &[Vec<Vec<f64>>],
        rng: &mut Rng,
    ) -> Self {
        let mut books = Vec::with_capacity(dims.l_books);
        for l in 0..dims.l_books {
            let mut book = Vec::with_capacity(dims.codebook_size);
            for _ in 0..dims.codebook_size {
                if sub_vectors.is_empty() {
                    book.push((0..dims.a_sub).map(|_| rng.gen_range(-1.0..1.0)).collect());
                } else {
                    let pick = rng.gen_range(0..sub_vectors.len());
                    let mut cw = sub_vectors[pick][l].clone();
                    // tiny jitter so duplicate picks stay distinguishable
                    for v in cw.iter_mut() {
                        *v += 1e-3 * rng.gen_range(-1.0..1.0);
                    }
                    book.push(cw);
                }
            }
            books.push(book);
        }
        Self::from_codewords(books, 0.99)
    }

    /// Nearest codeword per sub-vector; ties go to the lowest index.
    pub fn quantize(&self, features: &[f64], a_sub: usize) -> (Vec<u16>, Vec<f64>) {
        let mut indices = Vec::with_capacity(self.books.len());
        let mut quantized = Vec::with_capacity(features.len());
        for (l, sub) in features.chunks_exact(a_sub).enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, cw) in self.books[l].iter().enumerate() {
                let d: f64 = cw.iter().zip(sub).map(|(c, f)| (c - f) * (c - f)).sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            indices.push(best as u16);
            quantized.extend_from_slice(&self.books[l][best]);
        }
        (indices, quantized)
    }

    pub fn dequantize(&self, indices: &[u16]) -> Result<Vec<f64>, SimError> {
        if indices.len() != self.books.len() {
            return Err(SimError::DimensionMismatch(format!(
                "{} indices vs {} codebooks",
                indices.len(),
                self.books.len()
            )));
        }
        let mut out = Vec::new();
        for (l, &idx) in indices.iter().enumerate() {
            let book = &self.books[l];
            let cw = book.get(idx as usize).ok_or_else(|| {
                SimError::InvalidParameter(format!("index {idx} out of range for codebook of {}", book.len()))
            })?;
            out.extend_from_slice(cw);
        }
        Ok(out)
    }

    /// EMA codeword update toward the assigned feature sub-vectors.
    pub fn ema_update(&mut self, assignments: &[(usize, usize, &[f64])]) {
        let d = self.decay;
        for l in 0..self.books.len() {
            for k in 0..self.books[l].len() {
                self.ema_count[l][k] *= d;
                for s in self.ema_sum[l][k].iter_mut() {
                    *s *= d;
                }
            }
        }
        for &(l, k, sub) in assignments {
            self.ema_count[l][k] += 1.0 - d;
            for (s, f) in self.ema_sum[l][k].iter_mut().zip(sub) {
                *s += (1.0 - d) * f;
            }
        }
        for l in 0..self.books.len() {
            for k in 0..self.books[l].len() {
                let n = self.ema_count[l][k];
                if n > 1e-6 {
                    for (cw, s) in self.books[l][k].iter_mut().zip(&self.ema_sum[l][k]) {
                        *cw = s / n;
                    }
                }
            }
        }
    }

    /// Mean squared distance from features to their chosen codewords.
    pub fn mean_quantization_error(&self, features: &[Vec<f64>], a_sub: usize) -> f64 {
        let mut total = 0.0;
        for f in features {
            let (_, q) = self.quantize(f, a_sub);
            total += f.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        total / features.len() as f64
    }
}

/// Linear classifier over dequantized features; weights and biases are the
/// `w_j`, `b_j` consumed by the SA loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierDecoder {
    pub layer: Linear,
}

impl ClassifierDecoder {
    pub fn seeded(dims: &CodecDims, rng: &mut Rng) -> Self {
        let scale = (1.0 / dims.feature_dim() as f64).sqrt();
        Self { layer: Linear::seeded(dims.feature_dim(), dims.n_classes, scale, rng) }
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.layer.forward(features)
    }
}

/// Quantized semantic features for one image, plus feature geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMessage {
    pub indices: Vec<u16>,
    pub batch_size: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
}

/// The full codec: extractor + codebooks + decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    pub dims: CodecDims,
    pub extractor: FeatureExtractor,
    pub codebook: Codebook,
    pub decoder: ClassifierDecoder,
}

/// Per-band statistics pooled from an image: four quadrant means plus the
/// band standard deviation. This is the extractor input.
pub fn image_stats(image: &MultispectralImage) -> Vec<f64> {
    let (h, w, d) = (image.height, image.width, image.bands);
    let mut quad_sum = vec![0.0f64; d * 4];
    let mut quad_n = vec![0.0f64; 4];
    let mut sum = vec![0.0f64; d];
    let mut sumsq = vec![0.0f64; d];
    for i in 0..h {
        for j in 0..w {
            let q = (if i >= h / 2 { 2 } else { 0 }) + (if j >= w / 2 { 1 } else { 0 });
            quad_n[q] += 1.0;
            for k in 0..d {
                let v = image.at(i, j, k) as f64;
                quad_sum[k * 4 + q] += v;
                sum[k] += v;
                sumsq[k] += v * v;
            }
        }
    }
    let n = (h * w) as f64;
    let mut stats = Vec::with_capacity(d * 5);
    for k in 0..d {
        for q in 0..4 {
            stats.push(quad_sum[k * 4 + q] / quad_n[q].max(1.0));
        }
        let mean = sum[k] / n;
        stats.push((sumsq[k] / n - mean * mean).max(0.0).sqrt());
    }
    stats
}

/// Number of stats entries for a given band count.
pub fn stats_dim(bands: usize) -> usize {
    bands * 5
}

/// Encode one image to its quantized semantic message.
pub fn encode(
    image: &MultispectralImage,
    extractor: &FeatureExtractor,
    codebook: &Codebook,
    dims: &CodecDims,
) -> Result<SemanticMessage, SimError> {
    let stats = image_stats(image);
    if stats.len() != dims.input_dim {
        return Err(SimError::DimensionMismatch(format!(
            "image stats dim {} vs extractor input {}",
            stats.len(),
            dims.input_dim
        )));
    }
    let (_, features) = extractor.forward(&stats);
    let (indices, _) = codebook.quantize(&features, dims.a_sub);
    Ok(SemanticMessage {
        indices,
        batch_size: 1,
        n_classes: dims.n_classes,
        feature_dim: dims.feature_dim(),
    })
}

/// Dequantize a message and classify it.
pub fn decode(
    msg: &SemanticMessage,
    codebook: &Codebook,
    decoder: &ClassifierDecoder,
) -> Result<Vec<f64>, SimError> {
    let features = codebook.dequantize(&msg.indices)?;
    Ok(decoder.logits(&features))
}

/// How the receiver compensates the channel before demapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equalization {
    /// Coherent detection with perfect channel knowledge.
    Perfect,
    /// No compensation.
    None,
}

/// Physical-link description used by [`transmit`].
pub struct Link<'a> {
    pub constellation: &'a Constellation,
    pub fading: &'a dyn FadingModel,
    pub noise_sigma: f64,
    pub equalize: Equalization,
    /// Symbol period driving the per-symbol Doppler/delay rotation.
    pub symbol_period_s: f64,
}

/// Map codeword indices to base-16 symbol digits, most significant first.
pub fn indices_to_symbols(indices: &[u16], symbols_per_index: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(indices.len() * symbols_per_index);
    for &idx in indices {
        for s in (0..symbols_per_index).rev() {
            out.push(((idx >> (4 * s)) & 0xF) as u8);
        }
    }
    out
}

/// Inverse of [`indices_to_symbols`]; values wrap modulo the codebook size.
pub fn symbols_to_indices(symbols: &[u8], symbols_per_index: usize, codebook_size: usize) -> Vec<u16> {
    symbols
        .chunks_exact(symbols_per_index)
        .map(|chunk| {
            let mut v: u32 = 0;
            for &s in chunk {
                v = (v << 4) | s as u32;
            }
            (v % codebook_size as u32) as u16
        })
        .collect()
}

/// Outcome of one message transmission.
pub struct TransmitOutcome {
    pub message: SemanticMessage,
    pub sent_symbols: Vec<u8>,
    pub received_symbols: Vec<u8>,
}

/// Push a semantic message through modulation, the fading channel, and hard
/// demapping. A single fading realization covers the whole message (block
/// fading); LEO variants additionally rotate per symbol.
pub fn transmit(
    msg: &SemanticMessage,
    link: &Link,
    dims: &CodecDims,
    rng: &mut Rng,
) -> Result<TransmitOutcome, SimError> {
    let spi = dims.symbols_per_index();
    let sent_symbols = indices_to_symbols(&msg.indices, spi);
    let tx = modulate(&sent_symbols, link.constellation)?;
    let gain = link.fading.sample_gain(rng);
    let rotation = link.fading.rotation();
    let effective: Vec<Complex64> = match rotation {
        Some(rot) => (0..tx.len())
            .map(|n| response_at(n as f64 * link.symbol_period_s, 0.0, gain, rot.doppler_hz, rot.delay_s))
            .collect(),
        None => vec![gain; tx.len()],
    };
    // fold the per-symbol gain into the block, then add noise through a
    // unit-gain instance
    let pre: Vec<Complex64> = tx.iter().zip(&effective).map(|(x, h)| x * h).collect();
    let inst = ChannelInstance { gain: Complex64::new(1.0, 0.0), noise_sigma: link.noise_sigma };
    let rx = apply_channel(&pre, &inst, rng);
    let demod_input: Vec<Complex64> = match link.equalize {
        Equalization::Perfect => rx
            .iter()
            .zip(&effective)
            .map(|(y, h)| if h.norm_sqr() > 0.0 { y / h } else { *y })
            .collect(),
        Equalization::None => rx,
    };
    let received_symbols = demodulate_hard(&demod_input, link.constellation);
    let indices = symbols_to_indices(&received_symbols, spi, dims.codebook_size);
    Ok(TransmitOutcome {
        message: SemanticMessage { indices, ..msg.clone() },
        sent_symbols,
        received_symbols,
    })
}

/// Training configuration for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// SA loss weight; 0 disables augmentation.
    pub lambda_sa: f64,
    /// Probability that a transmitted index arrives as a uniformly random
    /// other index (channel-in-the-loop surrogate).
    pub index_flip_prob: f64,
    pub hidden: usize,
    pub l_books: usize,
    pub a_sub: usize,
    pub codebook_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            momentum: 0.9,
            batch_size: 32,
            lambda_sa: 0.0,
            index_flip_prob: 0.0,
            hidden: 64,
            l_books: 16,
            a_sub: 4,
            codebook_size: 16,
        }
    }
}

/// Per-epoch loss and train accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

/// Train a codec end to end on a labeled dataset. Deterministic per seed.
pub fn train(
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(Codec, TrainingTrace), SimError> {
    if dataset.items.is_empty() {
        return Err(SimError::InvalidParameter("training dataset is empty".into()));
    }
    if !(cfg.lr >= 0.0) {
        return Err(SimError::InvalidParameter("lr must be >= 0".into()));
    }
    let bands = dataset.items[0].0.bands;
    let dims = CodecDims {
        input_dim: stats_dim(bands),
        hidden: cfg.hidden,
        l_books: cfg.l_books,
        a_sub: cfg.a_sub,
        codebook_size: cfg.codebook_size,
        n_classes: dataset.n_classes(),
    };
    let mut extractor = FeatureExtractor::seeded(&dims, rng);
    let mut decoder = ClassifierDecoder::seeded(&dims, rng);

    let stats: Vec<Vec<f64>> = dataset.items.iter().map(|(im, _)| image_stats(im)).collect();
    let labels: Vec<usize> = dataset.items.iter().map(|(_, l)| *l).collect();

    // codebook init from the untrained extractor's features
    let init_count = stats.len().min(4 * cfg.codebook_size);
    let init_subs: Vec<Vec<Vec<f64>>> = stats[..init_count]
        .iter()
        .map(|s| {
            let (_, a) = extractor.forward(s);
            a.chunks_exact(cfg.a_sub).map(|c| c.to_vec()).collect()
        })
        .collect();
    let mut codebook = Codebook::init_from_features(&dims, &init_subs, rng);

    let mut bank = ClassCovarianceBank::new(dims.n_classes, dims.feature_dim());
    let mut order: Vec<usize> = (0..stats.len()).collect();
    let mut trace = TrainingTrace { epoch_loss: Vec::new(), epoch_accuracy: Vec::new() };

    for _epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut hiddens = Vec::with_capacity(batch.len());
            let mut features = Vec::with_capacity(batch.len());
            let mut received = Vec::with_capacity(batch.len());
            let mut batch_labels = Vec::with_capacity(batch.len());
            let mut assignments: Vec<(usize, usize, Vec<f64>)> = Vec::new();
            for &i in batch {
                let (h, a) = extractor.forward(&stats[i]);
                let (indices, _) = codebook.quantize(&a, cfg.a_sub);
                for (l, (&k, sub)) in indices.iter().zip(a.chunks_exact(cfg.a_sub)).enumerate() {
                    assignments.push((l, k as usize, sub.to_vec()));
                }
                let mut rx_indices = indices.clone();
                if cfg.index_flip_prob > 0.0 {
                    for idx in rx_indices.iter_mut() {
                        if rng.gen::<f64>() < cfg.index_flip_prob {
                            let other = rng.gen_range(0..cfg.codebook_size.saturating_sub(1).max(1)) as u16;
                            *idx = if other >= *idx { other + 1 } else { other };
                        }
                    }
                }
                let rx_features = codebook.dequantize(&rx_indices)?;
                let logits = decoder.logits(&rx_features);
                if crate::metrics::argmax(&logits) == labels[i] {
                    correct += 1;
                }
                hiddens.push(h);
                features.push(a);
                received.push(rx_features);
                batch_labels.push(labels[i]);
            }
            if cfg.lambda_sa > 0.0 {
                bank.update(&received, &batch_labels)?;
            }
            let sigmas: Vec<Vec<f64>> = received
                .iter()
                .zip(&batch_labels)
                .map(|(f, &y)| {
                    if cfg.lambda_sa > 0.0 {
                        blended_sigma(&bank, None, f, y, 0.0)
                    } else {
                        vec![0.0; f.len()]
                    }
                })
                .collect();
            let grads =
                sa_loss_and_grad(&received, &batch_labels, &sigmas, &decoder.layer, cfg.lambda_sa)?;
            if !grads.loss.is_finite() {
                return Err(SimError::Diverged(format!("batch loss {}", grads.loss)));
            }
            // batch-mean loss weighted by batch size, so the epoch figure is
            // the mean per-sample loss even with a ragged final batch
            epoch_loss += grads.loss * batch.len() as f64;
            if cfg.lr > 0.0 {
                decoder.layer.zero_grad();
                decoder.layer.grad_w = grads.grad_w;
                decoder.layer.grad_b = grads.grad_b;
                decoder.layer.step(cfg.lr, cfg.momentum, 1);
                extractor.l1.zero_grad();
                extractor.l2.zero_grad();
                for (((dfeat, h), s), _) in
                    grads.grad_features.iter().zip(&hiddens).zip(batch.iter()).zip(&features)
                {
                    // straight-through: gradient w.r.t. quantized features is
                    // passed to the continuous features unchanged
                    let dh = extractor.l2.backward(h, dfeat);
                    let dpre = tanh_backward(h, &dh);
                    extractor.l1.backward(&stats[*s], &dpre);
                }
                extractor.l2.step(cfg.lr, cfg.momentum, 1);
                extractor.l1.step(cfg.lr, cfg.momentum, 1);
                let assign_refs: Vec<(usize, usize, &[f64])> =
                    assignments.iter().map(|(l, k, v)| (*l, *k, v.as_slice())).collect();
                codebook.ema_update(&assign_refs);
            }
            if !extractor.l1.params_finite()
                || !extractor.l2.params_finite()
                || !decoder.layer.params_finite()
            {
                return Err(SimError::Diverged("network parameters are non-finite".into()));
            }
        }
        trace.epoch_loss.push(epoch_loss / stats.len() as f64);
        trace.epoch_accuracy.push(correct as f64 / stats.len() as f64);
    }
    Ok((Codec { dims, extractor, codebook, decoder }, trace))
}

impl Codec {
    pub fn predict(&self, image: &MultispectralImage) -> Result<usize, SimError> {
        let msg = encode(image, &self.extractor, &self.codebook, &self.dims)?;
        let logits = decode(&msg, &self.codebook, &self.decoder)?;
        Ok(crate::metrics::argmax(&logits))
    }

    pub fn accuracy(&self, dataset: &LabeledDataset) -> Result<f64, SimError> {
        let mut correct = 0usize;
        for (im, label) in &dataset.items {
            if self.predict(im)? == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.items.len() as f64)
    }
}

fn push_matrix(buf: &mut Vec<u8>, m: &[Vec<f64>]) {
    for row in m {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn push_vec(buf: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn f64(&mut self) -> Result<f64, SimError> {
        if self.pos + 8 > self.bytes.len() {
            return Err(SimError::Truncated { expected: self.pos + 8, found: self.bytes.len() });
        }
        let v = f64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        Ok(v)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>, SimError> {
        (0..rows).map(|_| (0..cols).map(|_| self.f64()).collect()).collect()
    }

    fn vec(&mut self, n: usize) -> Result<Vec<f64>, SimError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Serialize a codec to the versioned DTJC checkpoint format. Byte-stable
/// for equal parameters.
pub fn save_checkpoint(codec: &Codec, path: &Path) -> Result<(), SimError> {
    let d = &codec.dims;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [d.input_dim, d.hidden, d.l_books, d.a_sub, d.codebook_size, d.n_classes] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    push_matrix(&mut buf, &codec.extractor.l1.w);
    push_vec(&mut buf, &codec.extractor.l1.b);
    push_matrix(&mut buf, &codec.extractor.l2.w);
    push_vec(&mut buf, &codec.extractor.l2.b);
    for book in &codec.codebook.books {
        push_matrix(&mut buf, book);
    }
    push_matrix(&mut buf, &codec.decoder.layer.w);
    push_vec(&mut buf, &codec.decoder.layer.b);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Load a DTJC checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Codec, SimError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 32 {
        return Err(SimError::Truncated { expected: 32, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(SimError::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(SimError::UnsupportedVersion(version));
    }
    let mut header = [0u32; 6];
    for (i, h) in header.iter_mut().enumerate() {
        *h = u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    }
    let dims = CodecDims {
        input_dim: header[0] as usize,
        hidden: header[1] as usize,
        l_books: header[2] as usize,
        a_sub: header[3] as usize,
        codebook_size: header[4] as usize,
        n_classes: header[5] as usize,
    };
    let mut r = Reader { bytes: &bytes, pos: 32 };
    let mut l1 = Linear::zeros(dims.input_dim, dims.hidden);
    l1.w = r.matrix(dims.hidden, dims.input_dim)?;
    l1.b = r.vec(dims.hidden)?;
    let mut l2 = Linear::zeros(dims.hidden, dims.feature_dim());
    l2.w = r.matrix(dims.feature_dim(), dims.hidden)?;
    l2.b = r.vec(dims.feature_dim())?;
    let mut books = Vec::with_capacity(dims.l_books);
    for _ in 0..dims.l_books {
        books.push(r.matrix(dims.codebook_size, dims.a_sub)?);
    }
    let mut dec = Linear::zeros(dims.feature_dim(), dims.n_classes);
    dec.w = r.matrix(dims.n_classes, dims.feature_dim())?;
    dec.b = r.vec(dims.n_classes)?;
    Ok(Codec {
        dims,
        extractor: FeatureExtractor { l1, l2 },
        codebook: Codebook::from_codewords(books, 0.99),
        decoder: ClassifierDecoder { layer: dec },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_fading, FadingParams};
    use crate::data::generate_synthetic;
    use crate::modem::build_16psk;

    fn small_dataset(noise: f64, seed: u64) -> LabeledDataset {
        generate_synthetic(10, 20, 16, 16, 3, noise, seed).unwrap_or_else(|_| unreachable!())
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { epochs: 10, ..Default::default() }
    }

    fn trained(seed: u64) -> Codec {
        let ds = small_dataset(0.1, seed);
        let mut rng = crate::rng::stream(seed, &[2]);
        train(&ds, &quick_cfg(), &mut rng).unwrap().0
    }

    #[test]
    fn symbols_per_index_mapping() {
        let mk = |k| CodecDims {
            input_dim: 1,
            hidden: 1,
            l_books: 1,
            a_sub: 1,
            codebook_size: k,
            n_classes: 2,
        };
        assert_eq!(mk(16).symbols_per_index(), 1);
        assert_eq!(mk(32).symbols_per_index(), 2);
        assert_eq!(mk(64).symbols_per_index(), 2);
        assert_eq!(mk(128).symbols_per_index(), 2);
    }

    #[test]
    fn index_symbol_round_trip() {
        for (k, spi) in [(16usize, 1usize), (32, 2), (128, 2)] {
            let indices: Vec<u16> = (0..k as u16).collect();
            let symbols = indices_to_symbols(&indices, spi);
            assert_eq!(symbols.len(), k * spi);
            assert_eq!(symbols_to_indices(&symbols, spi, k), indices);
        }
    }

    #[test]
    fn quantize_exact_codeword_hits_its_index() {
        let books = vec![vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 2.0]]];
        let cb = Codebook::from_codewords(books, 0.99);
        let (idx, q) = cb.quantize(&[1.0, 1.0], 2);
        assert_eq!(idx, vec![1]);
        assert_eq!(q, vec![1.0, 1.0]);
    }

    #[test]
    fn quantize_identical_codewords_tie_to_zero() {
        let books = vec![vec![vec![0.5, 0.5]; 16]];
        let cb = Codebook::from_codewords(books, 0.99);
        let (idx, _) = cb.quantize(&[3.0, -1.0], 2);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn encode_is_deterministic() {
        let ds = small_dataset(0.1, 4);
        let codec = trained(4);
        let a = encode(&ds.items[0].0, &codec.extractor, &codec.codebook, &codec.dims).unwrap();
        let b = encode(&ds.items[0].0, &codec.extractor, &codec.codebook, &codec.dims).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_shape_mismatch_rejected() {
        let codec = trained(5);
        let bad = crate::data::MultispectralImage::new(4, 4, 5, vec![0.0; 80]).unwrap();
        assert!(encode(&bad, &codec.extractor, &codec.codebook, &codec.dims).is_err());
    }

    #[test]
    fn decode_permutation_invariance() {
        let codec = trained(6);
        let ds = small_dataset(0.1, 6);
        let msg = encode(&ds.items[3].0, &codec.extractor, &codec.codebook, &codec.dims).unwrap();
        let logits = decode(&msg, &codec.codebook, &codec.decoder).unwrap();
        // swap codewords 0 and 1 in every book and remap indices accordingly
        let mut permuted = codec.codebook.clone();
        for book in permuted.books.iter_mut() {
            book.swap(0, 1);
        }
        let remapped: Vec<u16> = msg
            .indices
            .iter()
            .map(|&i| match i {
                0 => 1,
                1 => 0,
                other => other,
            })
            .collect();
        let msg2 = SemanticMessage { indices: remapped, ..msg.clone() };
        let logits2 = decode(&msg2, &permuted, &codec.decoder).unwrap();
        for (a, b) in logits.iter().zip(&logits2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_decoder_gives_equal_logits() {
        let codec = trained(7);
        let mut dec = codec.decoder.clone();
        for row in dec.layer.w.iter_mut() {
            row.iter_mut().for_each(|w| *w = 0.0);
        }
        dec.layer.b.iter_mut().for_each(|b| *b = 0.0);
        let ds = small_dataset(0.1, 7);
        let msg = encode(&ds.items[0].0, &codec.extractor, &codec.codebook, &codec.dims).unwrap();
        let logits = decode(&msg, &codec.codebook, &dec).unwrap();
        for v in &logits {
            assert_eq!(*v, logits[0]);
        }
    }

    #[test]
    fn noiseless_transmit_is_identity() {
        let codec = trained(8);
        let ds = small_dataset(0.1, 8);
        let msg = encode(&ds.items[0].0, &codec.extractor, &codec.codebook, &codec.dims).unwrap();
        let c = build_16psk();
        let fading = build_fading("awgn", &FadingParams::default()).unwrap();
        let link = Link {
            constellation: &c,
            fading: fading.as_ref(),
            noise_sigma: 0.0,
            equalize: Equalization::Perfect,
            symbol_period_s: 1e-6,
        };
        let mut rng = crate::rng::stream(9, &[]);
        let out = transmit(&msg, &link, &codec.dims, &mut rng).unwrap();
        assert_eq!(out.message.indices, msg.indices);
    }

    #[test]
    fn very_low_psnr_saturates_to_uniform() {
        let dims = CodecDims {
            input_dim: 15,
            hidden: 4,
            l_books: 16,
            a_sub: 1,
            codebook_size: 16,
            n_classes: 2,
        };
        let msg = SemanticMessage {
            indices: vec![0; 16],
            batch_size: 1,
            n_classes: 2,
            feature_dim: 16,
        };
        let c = build_16psk();
        let fading = build_fading("awgn", &FadingParams::default()).unwrap();
        let sigma = crate::channel::noise_sigma_from_psnr(-30.0, c.peak_symbol_power()).unwrap();
        let link = Link {
            constellation: &c,
            fading: fading.as_ref(),
            noise_sigma: sigma,
            equalize: Equalization::Perfect,
            symbol_period_s: 1e-6,
        };
        let mut rng = crate::rng::stream(10, &[]);
        let mut counts = [0u64; 16];
        let reps = 62_500; // 16 symbols each -> 1e6 symbols
        for _ in 0..reps {
            let out = transmit(&msg, &link, &dims, &mut rng).unwrap();
            for &s in &out.received_symbols {
                counts[s as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        for &c in &counts {
            let freq = c as f64 / total as f64;
            assert!((freq - 1.0 / 16.0).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn index_error_rate_matches_modem_ser() {
        let dims = CodecDims {
            input_dim: 15,
            hidden: 4,
            l_books: 16,
            a_sub: 1,
            codebook_size: 16,
            n_classes: 2,
        };
        let c = build_16psk();
        let fading = build_fading("awgn", &FadingParams::default()).unwrap();
        // Es/N0 = 14 dB on unit-energy 16PSK
        let sigma = (10f64.powf(-1.4) / 2.0).sqrt();
        let link = Link {
            constellation: &c,
            fading: fading.as_ref(),
            noise_sigma: sigma,
            equalize: Equalization::Perfect,
            symbol_period_s: 1e-6,
        };
        let mut rng = crate::rng::stream(11, &[]);
        let mut sent = 0u64;
        let mut wrong = 0u64;
        use rand::Rng as _;
        for _ in 0..20_000 {
            let indices: Vec<u16> = (0..16).map(|_| rng.gen_range(0..16)).collect();
            let msg = SemanticMessage {
                indices,
                batch_size: 1,
                n_classes: 2,
                feature_dim: 16,
            };
            let out = transmit(&msg, &link, &dims, &mut rng).unwrap();
            sent += out.message.indices.len() as u64;
            wrong += out
                .message
                .indices
                .iter()
                .zip(&msg.indices)
                .filter(|(a, b)| a != b)
                .count() as u64;
        }
        let rate = wrong as f64 / sent as f64;
        let analytic = crate::modem::ser_16psk_analytic(14.0);
        assert!((rate - analytic).abs() < 0.01, "rate {rate} vs analytic {analytic}");
    }

    #[test]
    fn training_reaches_oracle_band() {
        let ds = small_dataset(0.1, 12);
        let oracle = crate::data::BandMeanClassifier::fit(&ds).accuracy(&ds);
        let mut rng = crate::rng::stream(12, &[2]);
        let (codec, trace) = train(&ds, &TrainConfig::default(), &mut rng).unwrap();
        let acc = codec.accuracy(&ds).unwrap();
        assert!(acc >= 0.95, "train accuracy {acc}");
        assert!(acc >= oracle - 0.05, "codec {acc} vs oracle {oracle}");
        assert_eq!(trace.epoch_loss.len(), 30);
    }

    #[test]
    fn zero_lr_keeps_parameters_and_loss_constant() {
        let ds = small_dataset(0.1, 13);
        let cfg = TrainConfig { epochs: 3, lr: 0.0, ..Default::default() };
        let mut rng = crate::rng::stream(13, &[2]);
        let (_, trace) = train(&ds, &cfg, &mut rng).unwrap();
        for window in trace.epoch_loss.windows(2) {
            assert!((window[0] - window[1]).abs() < 1e-12, "loss moved: {trace:?}");
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let ds = small_dataset(0.1, 14);
        let cfg = quick_cfg();
        let run = || {
            let mut rng = crate::rng::stream(14, &[2]);
            train(&ds, &cfg, &mut rng).unwrap()
        };
        let (c1, t1) = run();
        let (c2, t2) = run();
        assert_eq!(t1.epoch_loss, t2.epoch_loss);
        assert_eq!(c1, c2);
    }

    #[test]
    fn accuracy_degrades_monotonically_with_flips() {
        let codec = trained(15);
        let ds = small_dataset(0.1, 15);
        let mut accs = Vec::new();
        for (i, p) in [0.0, 0.125, 0.25, 0.375, 0.5].iter().enumerate() {
            let mut rng = crate::rng::stream(16, &[i as u64]);
            use rand::Rng as _;
            let mut correct = 0usize;
            for (im, label) in &ds.items {
                let msg = encode(im, &codec.extractor, &codec.codebook, &codec.dims).unwrap();
                let mut idx = msg.indices.clone();
                for v in idx.iter_mut() {
                    if rng.gen::<f64>() < *p {
                        let other = rng.gen_range(0..15u16);
                        *v = if other >= *v { other + 1 } else { other };
                    }
                }
                let flipped = SemanticMessage { indices: idx, ..msg };
                let logits = decode(&flipped, &codec.codebook, &codec.decoder).unwrap();
                if crate::metrics::argmax(&logits) == *label {
                    correct += 1;
                }
            }
            accs.push(correct as f64 / ds.items.len() as f64);
        }
        for w in accs.windows(2) {
            assert!(w[1] <= w[0] + 0.03, "non-monotone: {accs:?}");
        }
    }

    #[test]
    fn trained_codebook_beats_random_codebook() {
        let codec = trained(17);
        let ds = small_dataset(0.1, 17);
        let features: Vec<Vec<f64>> = ds
            .items
            .iter()
            .map(|(im, _)| codec.extractor.forward(&image_stats(im)).1)
            .collect();
        let trained_err = codec.codebook.mean_quantization_error(&features, codec.dims.a_sub);
        // random codebook with matched marginal statistics
        let all: Vec<f64> = features.iter().flatten().cloned().collect();
        let mean: f64 = all.iter().sum::<f64>() / all.len() as f64;
        let std: f64 =
            (all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64).sqrt();
        let mut rng = crate::rng::stream(18, &[]);
        use rand::Rng as _;
        let books: Vec<Vec<Vec<f64>>> = (0..codec.dims.l_books)
            .map(|_| {
                (0..codec.dims.codebook_size)
                    .map(|_| {
                        (0..codec.dims.a_sub)
                            .map(|_| {
                                mean + std * rng.sample::<f64, _>(rand_distr::StandardNormal)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let random_cb = Codebook::from_codewords(books, 0.99);
        let random_err = random_cb.mean_quantization_error(&features, codec.dims.a_sub);
        assert!(
            trained_err < random_err,
            "trained {trained_err} not below random {random_err}"
        );
    }

    #[test]
    fn checkpoint_round_trip_and_stability() {
        let codec = trained(19);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.dtjc");
        let p2 = dir.path().join("b.dtjc");
        save_checkpoint(&codec, &p1).unwrap();
        save_checkpoint(&codec, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = load_checkpoint(&p1).unwrap();
        assert_eq!(back.dims, codec.dims);
        assert_eq!(back.extractor.l1.w, codec.extractor.l1.w);
        assert_eq!(back.codebook.books, codec.codebook.books);
        assert_eq!(back.decoder.layer.w, codec.decoder.layer.w);
    }

    #[test]
    fn checkpoint_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dtjc");
        std::fs::write(&path, b"XXXX0000000000000000000000000000").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(SimError::BadMagic { .. })));
    }
}
