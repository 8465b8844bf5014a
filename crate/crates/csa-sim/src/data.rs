//! Multispectral image types, a seeded synthetic labeled dataset generator,
//! and the bit-exact MSIM raw-tensor file format.
//!
//! MSIM layout: magic "MSIM", then H, W, D as u32 little-endian, then
//! H*W*D f32 little-endian values, row-major band-fastest.

use rand::Rng as _;
use rand_distr::StandardNormal;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::SimError;
use crate::rng::Rng;

pub const MSIM_MAGIC: [u8; 4] = *b"MSIM";

/// Upper bound on H*W*D to reject absurd headers before allocating.
const MAX_ELEMENTS: u64 = 1 << 30;

/// An H x W x D tensor, row-major band-fastest: index (i, j, k) lives at
/// (i*W + j)*D + k.
#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralImage {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub values: Vec<f32>,
}

impl MultispectralImage {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self, SimError> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(SimError::InvalidParameter("image dimensions must be >= 1".into()));
        }
        if values.len() != height * width * bands {
            return Err(SimError::DimensionMismatch(format!(
                "expected {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidParameter("image values must be finite".into()));
        }
        Ok(Self { height, width, bands, values })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[(i * self.width + j) * self.bands + k]
    }

    /// Mean value of each band over all pixels.
    pub fn band_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.bands];
        for px in self.values.chunks_exact(self.bands) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += *v as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.iter().map(|s| s / n).collect()
    }
}

/// A labeled collection of same-shape images.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub items: Vec<(MultispectralImage, usize)>,
    pub class_names: Vec<String>,
}

/// The canonical 10-class naming used by the synthetic generator.
pub const EUROSAT_CLASSES: [&str; 10] = [
    "AnnualCrop",
    "Forest",
    "HerbaceousVegetation",
    "Highway",
    "Industrial",
    "Pasture",
    "PermanentCrop",
    "Residential",
    "River",
    "SeaLake",
];

impl LabeledDataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Seed-deterministic in-place shuffle.
    pub fn shuffle(&mut self, rng: &mut Rng) {
        for i in (1..self.items.len()).rev() {
            let j = rng.gen_range(0..=i);
            self.items.swap(i, j);
        }
    }

    /// Split off the first `n` items into a new dataset.
    pub fn split_at(mut self, n: usize) -> (LabeledDataset, LabeledDataset) {
        let tail = self.items.split_off(n.min(self.items.len()));
        let names = self.class_names.clone();
        (self, LabeledDataset { items: tail, class_names: names })
    }
}

const QUADRANTS: usize = 4;

#[inline]
fn quadrant(i: usize, j: usize, h: usize, w: usize) -> usize {
    (if i >= h / 2 { 2 } else { 0 }) + (if j >= w / 2 { 1 } else { 0 })
}

/// Per-class signatures over (band, quadrant) cells: a regular simplex with
/// equal pairwise distances, mapped through a seeded isometry.
fn class_signatures(c_classes: usize, d_bands: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = d_bands * QUADRANTS;
    let mut rng = crate::rng::stream(seed, &[0x5163]);
    // orthonormal columns in R^dim via Gram-Schmidt on Gaussian draws
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(c_classes);
    while cols.len() < c_classes.min(dim) {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(c) {
                *x -= dot * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            cols.push(v);
        }
    }
    // centered unit basis vectors: equal pairwise distance sqrt(2)
    (0..c_classes)
        .map(|k| {
            let mut sig = vec![0.5f64; dim];
            for (ci, col) in cols.iter().enumerate() {
                let coeff = if ci == k { 1.0 } else { 0.0 } - 1.0 / c_classes as f64;
                for (s, m) in sig.iter_mut().zip(col) {
                    *s += coeff * m;
                }
            }
            sig
        })
        .collect()
}

/// Class-specific low-frequency spatial texture, zero-mean over full rows
/// and columns.
#[inline]
fn texture(class: usize, i: usize, j: usize, h: usize, w: usize) -> f64 {
    let fx = (class % 3 + 1) as f64;
    let fy = (class / 3 + 1) as f64;
    0.05 * (std::f64::consts::TAU * fx * i as f64 / h as f64).cos()
        * (std::f64::consts::TAU * fy * j as f64 / w as f64).cos()
}

/// Generate a seeded synthetic dataset: each class has a fixed (band,
/// quadrant) signature plus a low-frequency texture, with i.i.d. Gaussian
/// pixel noise on top.
pub fn generate_synthetic(
    c_classes: usize,
    n_per_class: usize,
    h: usize,
    w: usize,
    d: usize,
    noise_level: f64,
    seed: u64,
) -> Result<LabeledDataset, SimError> {
    if c_classes < 2 {
        return Err(SimError::InvalidParameter("need at least 2 classes".into()));
    }
    if n_per_class == 0 || h == 0 || w == 0 || d == 0 {
        return Err(SimError::InvalidParameter("n_per_class and dimensions must be >= 1".into()));
    }
    if noise_level < 0.0 {
        return Err(SimError::InvalidParameter("noise_level must be >= 0".into()));
    }
    let signatures = class_signatures(c_classes, d, seed);
    let class_names: Vec<String> = if c_classes == EUROSAT_CLASSES.len() {
        EUROSAT_CLASSES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..c_classes).map(|k| format!("Class{k:02}")).collect()
    };
    let mut items = Vec::with_capacity(c_classes * n_per_class);
    for class in 0..c_classes {
        for item in 0..n_per_class {
            let mut rng = crate::rng::stream(seed, &[1, class as u64, item as u64]);
            let mut values = vec![0.0f32; h * w * d];
            for i in 0..h {
                for j in 0..w {
                    let q = quadrant(i, j, h, w);
                    let tex = texture(class, i, j, h, w);
                    for k in 0..d {
                        let mut v = signatures[class][k * QUADRANTS + q] + tex;
                        if noise_level > 0.0 {
                            v += noise_level * rng.sample::<f64, _>(StandardNormal);
                        }
                        values[(i * w + j) * d + k] = v as f32;
                    }
                }
            }
            items.push((MultispectralImage::new(h, w, d, values)?, class));
        }
    }
    Ok(LabeledDataset { items, class_names })
}

/// Nearest-class-mean classifier on band means. Independent of the codec;
/// used as a separability oracle.
pub struct BandMeanClassifier {
    pub class_means: Vec<Vec<f64>>,
}

impl BandMeanClassifier {
    pub fn fit(dataset: &LabeledDataset) -> Self {
        let c = dataset.n_classes();
        let bands = dataset.items.first().map(|(im, _)| im.bands).unwrap_or(0);
        let mut sums = vec![vec![0.0f64; bands]; c];
        let mut counts = vec![0usize; c];
        for (im, label) in &dataset.items {
            for (s, m) in sums[*label].iter_mut().zip(im.band_means()) {
                *s += m;
            }
            counts[*label] += 1;
        }
        for (s, n) in sums.iter_mut().zip(&counts) {
            if *n > 0 {
                for x in s.iter_mut() {
                    *x /= *n as f64;
                }
            }
        }
        Self { class_means: sums }
    }

    pub fn predict(&self, image: &MultispectralImage) -> usize {
        let m = image.band_means();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, cm) in self.class_means.iter().enumerate() {
            let d: f64 = cm.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn accuracy(&self, dataset: &LabeledDataset) -> f64 {
        let correct = dataset.items.iter().filter(|(im, l)| self.predict(im) == *l).count();
        correct as f64 / dataset.items.len() as f64
    }
}

/// Write an image in MSIM format.
pub fn write_raw_tensor(image: &MultispectralImage, path: &Path) -> Result<(), SimError> {
    let mut buf = Vec::with_capacity(16 + image.values.len() * 4);
    buf.extend_from_slice(&MSIM_MAGIC);
    buf.extend_from_slice(&(image.height as u32).to_le_bytes());
    buf.extend_from_slice(&(image.width as u32).to_le_bytes());
    buf.extend_from_slice(&(image.bands as u32).to_le_bytes());
    for v in &image.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read an MSIM file back into an image, bit-exactly.
pub fn load_raw_tensor(path: &Path) -> Result<MultispectralImage, SimError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(SimError::Truncated { expected: 16, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MSIM_MAGIC {
        return Err(SimError::BadMagic { expected: MSIM_MAGIC, found: magic });
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as u64;
    if h == 0 || w == 0 || d == 0 {
        return Err(SimError::InvalidParameter("MSIM header has a zero dimension".into()));
    }
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(d))
        .filter(|&x| x <= MAX_ELEMENTS)
        .ok_or_else(|| SimError::DimensionOverflow(format!("{h}x{w}x{d}")))?;
    let expected = 16 + n as usize * 4;
    if bytes.len() < expected {
        return Err(SimError::Truncated { expected, found: bytes.len() });
    }
    let values: Vec<f32> = bytes[16..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MultispectralImage::new(h as usize, w as usize, d as usize, values)
}

/// Ingest a `<root>/<class_name>/<id>.msim` directory tree. Class names come
/// from subdirectory names, sorted; files within a class are sorted by name.
pub fn load_dataset_dir(root: &Path) -> Result<LabeledDataset, SimError> {
    let mut class_dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(SimError::Config(format!("no class subdirectories under {}", root.display())));
    }
    let mut items = Vec::new();
    let mut class_names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "msim").unwrap_or(false))
            .collect();
        files.sort();
        for f in files {
            items.push((load_raw_tensor(&f)?, label));
        }
    }
    Ok(LabeledDataset { items, class_names })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_images_identical_within_class() {
        let ds = generate_synthetic(3, 3, 8, 8, 2, 0.0, 5).unwrap();
        for class in 0..3 {
            let imgs: Vec<_> = ds.items.iter().filter(|(_, l)| *l == class).collect();
            for pair in imgs.windows(2) {
                assert_eq!(pair[0].0, pair[1].0);
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = generate_synthetic(4, 2, 16, 16, 3, 0.2, 99).unwrap();
        let b = generate_synthetic(4, 2, 16, 16, 3, 0.2, 99).unwrap();
        for ((ia, la), (ib, lb)) in a.items.iter().zip(&b.items) {
            assert_eq!(la, lb);
            assert_eq!(ia.values, ib.values);
        }
        let c = generate_synthetic(4, 2, 16, 16, 3, 0.2, 100).unwrap();
        assert_ne!(a.items[0].0.values, c.items[0].0.values);
    }

    #[test]
    fn band_mean_oracle_hits_99_percent() {
        let ds = generate_synthetic(10, 20, 64, 64, 3, 0.1, 7).unwrap();
        let clf = BandMeanClassifier::fit(&ds);
        assert!(clf.accuracy(&ds) >= 0.99, "accuracy {}", clf.accuracy(&ds));
    }

    #[test]
    fn oracle_accuracy_non_increasing_in_noise() {
        let mut last = 1.1;
        for noise in [0.0, 0.5, 2.0, 8.0, 32.0] {
            let ds = generate_synthetic(10, 10, 16, 16, 3, noise, 3).unwrap();
            let clf = BandMeanClassifier::fit(&ds);
            let acc = clf.accuracy(&ds);
            assert!(acc <= last + 0.05, "noise {noise}: {acc} > {last}");
            last = acc;
        }
    }

    #[test]
    fn signature_pairwise_distances_equal() {
        let sigs = class_signatures(10, 3, 1);
        let mut dists = Vec::new();
        for a in 0..10 {
            for b in 0..a {
                let d: f64 =
                    sigs[a].iter().zip(&sigs[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                dists.push(d);
            }
        }
        for d in &dists {
            assert!((d - dists[0]).abs() < 1e-9, "distances {dists:?}");
        }
    }

    #[test]
    fn invalid_generator_inputs() {
        assert!(generate_synthetic(1, 1, 4, 4, 1, 0.0, 0).is_err());
        assert!(generate_synthetic(2, 0, 4, 4, 1, 0.0, 0).is_err());
        assert!(generate_synthetic(2, 1, 0, 4, 1, 0.0, 0).is_err());
        assert!(generate_synthetic(2, 1, 4, 4, 1, -0.5, 0).is_err());
    }

    #[test]
    fn shuffle_is_seed_deterministic() {
        let base = generate_synthetic(3, 4, 4, 4, 1, 0.1, 2).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        a.shuffle(&mut crate::rng::stream(8, &[]));
        b.shuffle(&mut crate::rng::stream(8, &[]));
        let la: Vec<usize> = a.items.iter().map(|(_, l)| *l).collect();
        let lb: Vec<usize> = b.items.iter().map(|(_, l)| *l).collect();
        assert_eq!(la, lb);
    }

    mod msim {
        use super::*;

        #[test]
        fn round_trip_bit_exact() {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.msim");
            let img = generate_synthetic(2, 1, 5, 7, 3, 0.3, 1).unwrap().items.remove(0).0;
            write_raw_tensor(&img, &path).unwrap();
            let back = load_raw_tensor(&path).unwrap();
            assert_eq!(img, back);
        }

        #[test]
        fn tiny_file_size() {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("one.msim");
            let img = MultispectralImage::new(1, 1, 1, vec![0.0]).unwrap();
            write_raw_tensor(&img, &path).unwrap();
            // 4 magic + 12 header + 4 payload
            assert_eq!(std::fs::metadata(&path).unwrap().len(), 20);
        }

        #[test]
        fn deterministic_bytes() {
            let dir = tempfile::tempdir().unwrap();
            let p1 = dir.path().join("a.msim");
            let p2 = dir.path().join("b.msim");
            let img = MultispectralImage::new(2, 2, 2, vec![1.5; 8]).unwrap();
            write_raw_tensor(&img, &p1).unwrap();
            write_raw_tensor(&img, &p2).unwrap();
            assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
        }

        #[test]
        fn bad_magic_detected() {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("bad.msim");
            let mut bytes = b"XXXX".to_vec();
            bytes.extend_from_slice(&1u32.to_le_bytes());
            bytes.extend_from_slice(&1u32.to_le_bytes());
            bytes.extend_from_slice(&1u32.to_le_bytes());
            bytes.extend_from_slice(&0f32.to_le_bytes());
            std::fs::write(&path, bytes).unwrap();
            assert!(matches!(load_raw_tensor(&path), Err(SimError::BadMagic { .. })));
        }

        #[test]
        fn truncation_detected() {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("short.msim");
            let mut bytes = MSIM_MAGIC.to_vec();
            bytes.extend_from_slice(&2u32.to_le_bytes());
            bytes.extend_from_slice(&2u32.to_le_bytes());
            bytes.extend_from_slice(&1u32.to_le_bytes());
            for _ in 0..3 {
                bytes.extend_from_slice(&0f32.to_le_bytes());
            }
            std::fs::write(&path, bytes).unwrap();
            assert!(matches!(load_raw_tensor(&path), Err(SimError::Truncated { .. })));
        }

        #[test]
        fn dimension_overflow_detected() {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("huge.msim");
            let mut bytes = MSIM_MAGIC.to_vec();
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
            std::fs::write(&path, bytes).unwrap();
            assert!(matches!(load_raw_tensor(&path), Err(SimError::DimensionOverflow(_))));
        }

        #[test]
        fn directory_ingestion() {
            let dir = tempfile::tempdir().unwrap();
            let ds = generate_synthetic(3, 2, 4, 4, 2, 0.1, 11).unwrap();
            for (n, (img, label)) in ds.items.iter().enumerate() {
                let class_dir = dir.path().join(&ds.class_names[*label]);
                std::fs::create_dir_all(&class_dir).unwrap();
                write_raw_tensor(img, &class_dir.join(format!("{n:04}.msim"))).unwrap();
            }
            let loaded = load_dataset_dir(dir.path()).unwrap();
            assert_eq!(loaded.items.len(), 6);
            assert_eq!(loaded.class_names.len(), 3);
        }
    }
}
