//! Synthetic part-composition images and the `SEFD` binary dataset format.
//!
//! Every class is a distinct tuple of small glyphs stamped into fixed grid
//! regions, so discriminative evidence is localized — the property the
//! channel-grouping regularizer needs in order to show part structure at
//! small scale.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const GLYPH_SIZE: usize = 5;
const GLYPH_ON_CELLS: usize = 12;
/// Cells flipped relative to the shared base shape; alphabet entries are
/// fine-grained variants of one another, not unrelated patterns.
const GLYPH_VARIATION_CELLS: usize = 6;
const GLYPH_STREAM_SEED: u64 = 0x5EF0_617D;
const BACKGROUND: f64 = 0.0;
const FOREGROUND: f64 = 215.0;

const MAGIC: &[u8; 4] = b"SEFD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub class_count: usize,
    pub parts_per_image: usize,
    pub glyph_alphabet_size: usize,
    /// Square image side; grayscale replicated to 3 identical channels.
    pub image_size: usize,
    pub jitter_radius: usize,
    pub noise_sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Fraction of the training pool carved off as the validation split.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// The desk-scale benchmark set: 16 classes on 32×32 images, each class
    /// a distinct combination of four two-way glyph choices.
    fn default() -> Self {
        SynthSpec {
            class_count: 16,
            parts_per_image: 4,
            glyph_alphabet_size: 2,
            image_size: 32,
            jitter_radius: 2,
            noise_sigma: 8.0,
            train_per_class: 128,
            test_per_class: 64,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Labeled images, 3 channels of 8-bit values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<u16>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    /// Runtime-only tag; not part of the file format.
    pub split: Option<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Raw bytes of one image, `[channels, height, width]` row-major.
    pub fn image(&self, index: usize) -> &[u8] {
        let len = self.image_len();
        &self.images[index * len..(index + 1) * len]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }
}

#[derive(Debug)]
pub struct SynthBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

/// 5×5 on/off patterns, one per glyph id. All glyphs are variants of one
/// base shape, each flipping a few cells, so telling them apart is a
/// fine-detail discrimination rather than coarse shape matching.
/// Deterministic and independent of the dataset seed; duplicates are
/// rejected so distinct ids always render distinct shapes.
fn glyph_set(alphabet: usize) -> Vec<[bool; GLYPH_SIZE * GLYPH_SIZE]> {
    let mut rng = ChaCha8Rng::seed_from_u64(GLYPH_STREAM_SEED);
    let mut base = [false; GLYPH_SIZE * GLYPH_SIZE];
    let mut cells: Vec<usize> = (0..GLYPH_SIZE * GLYPH_SIZE).collect();
    cells.shuffle(&mut rng);
    for &c in cells.iter().take(GLYPH_ON_CELLS) {
        base[c] = true;
    }
    let mut glyphs: Vec<[bool; GLYPH_SIZE * GLYPH_SIZE]> = Vec::with_capacity(alphabet);
    while glyphs.len() < alphabet {
        let mut pattern = base;
        let mut flips: Vec<usize> = (0..GLYPH_SIZE * GLYPH_SIZE).collect();
        flips.shuffle(&mut rng);
        for &c in flips.iter().take(GLYPH_VARIATION_CELLS) {
            pattern[c] = !pattern[c];
        }
        if !glyphs.contains(&pattern) {
            glyphs.push(pattern);
        }
    }
    glyphs
}

/// Grid layout: parts fill the first `parts` cells of a rows×cols grid,
/// row-major, with cols = ceil(sqrt(parts)).
fn grid_dims(parts: usize) -> (usize, usize) {
    let cols = (parts as f64).sqrt().ceil() as usize;
    let rows = parts.div_ceil(cols);
    (rows, cols)
}

/// Glyph tuple of one class: digits of the class index, base alphabet,
/// most significant part first.
fn class_tuple(class: usize, parts: usize, alphabet: usize) -> Vec<usize> {
    let mut digits = vec![0; parts];
    let mut rest = class;
    for d in (0..parts).rev() {
        digits[d] = rest % alphabet;
        rest /= alphabet;
    }
    digits
}

struct Synth<'a> {
    spec: &'a SynthSpec,
    glyphs: Vec<[bool; GLYPH_SIZE * GLYPH_SIZE]>,
    rows: usize,
    cols: usize,
    noise: Option<Normal<f64>>,
}

impl<'a> Synth<'a> {
    fn render(&self, class: usize, rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
        let s = self.spec.image_size;
        let mut canvas = vec![BACKGROUND; s * s];
        let tuple = class_tuple(class, self.spec.parts_per_image, self.spec.glyph_alphabet_size);
        let cell_h = s / self.rows;
        let cell_w = s / self.cols;
        let j = self.spec.jitter_radius as i64;
        for (part, &glyph_id) in tuple.iter().enumerate() {
            let cell_row = part / self.cols;
            let cell_col = part % self.cols;
            let center_y = cell_row * cell_h + cell_h / 2;
            let center_x = cell_col * cell_w + cell_w / 2;
            let dy = rng.random_range(-j..=j);
            let dx = rng.random_range(-j..=j);
            let top = (center_y as i64 + dy - (GLYPH_SIZE as i64) / 2)
                .clamp(0, (s - GLYPH_SIZE) as i64) as usize;
            let left = (center_x as i64 + dx - (GLYPH_SIZE as i64) / 2)
                .clamp(0, (s - GLYPH_SIZE) as i64) as usize;
            let pattern = &self.glyphs[glyph_id];
            for gy in 0..GLYPH_SIZE {
                for gx in 0..GLYPH_SIZE {
                    if pattern[gy * GLYPH_SIZE + gx] {
                        canvas[(top + gy) * s + (left + gx)] = FOREGROUND;
                    }
                }
            }
        }
        let mut gray = vec![0u8; s * s];
        for (dst, &v) in gray.iter_mut().zip(&canvas) {
            let noisy = match &self.noise {
                Some(n) => v + n.sample(rng),
                None => v,
            };
            *dst = noisy.clamp(0.0, 255.0).round() as u8;
        }
        for _ in 0..3 {
            out.extend_from_slice(&gray);
        }
    }
}

/// Generates disjoint train / val / test splits; a pure function of the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthBundle> {
    if spec.class_count == 0 || spec.parts_per_image == 0 || spec.glyph_alphabet_size == 0 {
        return Err(Error::Data("class, part, and alphabet counts must be ≥ 1".into()));
    }
    match checked_pow(spec.glyph_alphabet_size, spec.parts_per_image) {
        Some(space) if spec.class_count <= space => {}
        _ => {
            return Err(Error::Data(format!(
                "class space exhausted: {} classes exceed {}^{} glyph tuples",
                spec.class_count, spec.glyph_alphabet_size, spec.parts_per_image
            )))
        }
    }
    if spec.class_count > u16::MAX as usize + 1 {
        return Err(Error::Data(format!(
            "{} classes exceed the 16-bit label range",
            spec.class_count
        )));
    }
    let (rows, cols) = grid_dims(spec.parts_per_image);
    if spec.image_size < GLYPH_SIZE * rows.max(cols) {
        return Err(Error::Data(format!(
            "image size {} too small for a {rows}x{cols} grid of {GLYPH_SIZE}px glyphs",
            spec.image_size
        )));
    }
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(Error::Data(format!(
            "val fraction {} outside [0,1)",
            spec.val_fraction
        )));
    }
    let noise = if spec.noise_sigma > 0.0 {
        Some(
            Normal::new(0.0, spec.noise_sigma)
                .map_err(|e| Error::Data(format!("bad noise sigma: {e}")))?,
        )
    } else {
        None
    };
    let synth = Synth {
        spec,
        glyphs: glyph_set(spec.glyph_alphabet_size),
        rows,
        cols,
        noise,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.image_size;
    let val_per_class = (spec.train_per_class as f64 * spec.val_fraction).floor() as usize;
    let train_kept = spec.train_per_class - val_per_class;

    let make = |images: Vec<u8>, labels: Vec<u16>, split: Split| Dataset {
        images,
        labels,
        channels: 3,
        height: s,
        width: s,
        class_count: spec.class_count,
        split: Some(split),
    };

    let mut train_images = Vec::with_capacity(spec.class_count * train_kept * 3 * s * s);
    let mut train_labels = Vec::new();
    let mut val_images = Vec::with_capacity(spec.class_count * val_per_class * 3 * s * s);
    let mut val_labels = Vec::new();
    for class in 0..spec.class_count {
        for sample in 0..spec.train_per_class {
            let (images, labels) = if sample < train_kept {
                (&mut train_images, &mut train_labels)
            } else {
                (&mut val_images, &mut val_labels)
            };
            synth.render(class, &mut rng, images);
            labels.push(class as u16);
        }
    }
    let mut test_images = Vec::with_capacity(spec.class_count * spec.test_per_class * 3 * s * s);
    let mut test_labels = Vec::new();
    for class in 0..spec.class_count {
        for _ in 0..spec.test_per_class {
            synth.render(class, &mut rng, &mut test_images);
            test_labels.push(class as u16);
        }
    }

    Ok(SynthBundle {
        train: make(train_images, train_labels, Split::Train),
        val: make(val_images, val_labels, Split::Val),
        test: make(test_images, test_labels, Split::Test),
    })
}

/// Gain applied after per-image standardization. Classification gradients
/// scale with activation magnitude while the correlation regularizer is
/// scale-free, so the gain sets their relative strength during training.
const INPUT_GAIN: f64 = 4.0;

/// Assembles selected samples into an `[n,3,H,W]` float tensor, optionally
/// flipping images horizontally, then standardizing each image to zero mean
/// and `INPUT_GAIN` variance (a constant image maps to zeros). Every
/// consumer of a dataset — training, evaluation, analysis — goes through
/// this.
pub fn to_input_tensor(ds: &Dataset, indices: &[usize], flips: Option<&[bool]>) -> crate::tensor::Tensor {
    let (c, h, w) = (ds.channels, ds.height, ds.width);
    let image_len = c * h * w;
    let mut data = Vec::with_capacity(indices.len() * image_len);
    for (pos, &i) in indices.iter().enumerate() {
        let img = ds.image(i);
        let start = data.len();
        let flip = flips.map(|f| f[pos]).unwrap_or(false);
        if flip {
            for ch in 0..c {
                for y in 0..h {
                    let row = &img[(ch * h + y) * w..(ch * h + y + 1) * w];
                    data.extend(row.iter().rev().map(|&b| b as f64 / 255.0));
                }
            }
        } else {
            data.extend(img.iter().map(|&b| b as f64 / 255.0));
        }
        let slice = &mut data[start..];
        let mean = slice.iter().sum::<f64>() / image_len as f64;
        let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / image_len as f64;
        let denom = var.sqrt().max(1e-6);
        for v in slice.iter_mut() {
            *v = (*v - mean) / denom * INPUT_GAIN;
        }
    }
    crate::tensor::Tensor::new(vec![indices.len(), c, h, w], data).expect("batch layout")
}

/// Splits a dataset into (train, val) by moving the last
/// `floor(fraction · count)` samples of every class into the validation
/// split, keeping file order otherwise. Deterministic.
pub fn split_validation(ds: &Dataset, fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Data(format!("val fraction {fraction} outside [0,1)")));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count];
    for i in 0..ds.len() {
        per_class[ds.label(i)].push(i);
    }
    let mut val_marks = vec![false; ds.len()];
    for members in &per_class {
        let n_val = (members.len() as f64 * fraction).floor() as usize;
        for &i in &members[members.len() - n_val..] {
            val_marks[i] = true;
        }
    }
    let collect = |val: bool, split: Split| {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..ds.len() {
            if val_marks[i] == val {
                images.extend_from_slice(ds.image(i));
                labels.push(ds.labels[i]);
            }
        }
        Dataset {
            images,
            labels,
            channels: ds.channels,
            height: ds.height,
            width: ds.width,
            class_count: ds.class_count,
            split: Some(split),
        }
    };
    Ok((collect(false, Split::Train), collect(true, Split::Val)))
}

// ── SEFD binary format ─────────────────────────────────────────────────
//
// Little-endian layout:
//   "SEFD" | version u32 | N u32 | channels u32 | height u32 | width u32 |
//   class_count u32 | N·channels·height·width image bytes | N labels u16

/// Serializes a dataset to the `SEFD` layout.
pub fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + ds.images.len() + 2 * ds.labels.len());
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        ds.len() as u32,
        ds.channels as u32,
        ds.height as u32,
        ds.width as u32,
        ds.class_count as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ds.images);
    for &l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_bytes(ds)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset,
                message: format!(
                    "truncated file: {what} needs {n} bytes, {} remain",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses the `SEFD` layout from a byte buffer.
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, offset: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n = cur.u32("sample count")? as usize;
    let channels = cur.u32("channel count")? as usize;
    let height = cur.u32("height")? as usize;
    let width = cur.u32("width")? as usize;
    let class_count = cur.u32("class count")? as usize;
    let image_bytes = n
        .checked_mul(channels)
        .and_then(|v| v.checked_mul(height))
        .and_then(|v| v.checked_mul(width))
        .ok_or(Error::Format {
            offset: 8,
            message: "image payload size overflows".into(),
        })?;
    let images = cur.take(image_bytes, "image payload")?.to_vec();
    let label_offset = cur.offset;
    let raw_labels = cur.take(2 * n, "label payload")?;
    if cur.offset != bytes.len() {
        return Err(Error::Format {
            offset: cur.offset,
            message: format!("{} trailing bytes", bytes.len() - cur.offset),
        });
    }
    let mut labels = Vec::with_capacity(n);
    for (i, pair) in raw_labels.chunks_exact(2).enumerate() {
        let label = u16::from_le_bytes([pair[0], pair[1]]);
        if (label as usize) >= class_count {
            return Err(Error::Format {
                offset: label_offset + 2 * i,
                message: format!("label {label} ≥ class count {class_count}"),
            });
        }
        labels.push(label);
    }
    Ok(Dataset {
        images,
        labels,
        channels,
        height,
        width,
        class_count,
        split: None,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    dataset_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SynthSpec {
        SynthSpec {
            class_count: 16,
            parts_per_image: 4,
            glyph_alphabet_size: 2,
            image_size: 16,
            jitter_radius: 0,
            noise_sigma: 0.0,
            train_per_class: 10,
            test_per_class: 4,
            val_fraction: 0.1,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_images_of_a_class_are_identical() {
        let bundle = generate(&tiny_spec()).unwrap();
        let ds = &bundle.train;
        let first_of_class0 = ds.image(0).to_vec();
        for i in 0..ds.len() {
            if ds.label(i) == 0 {
                assert_eq!(ds.image(i), &first_of_class0[..]);
            }
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_datasets() {
        let mut spec = tiny_spec();
        spec.noise_sigma = 5.0;
        spec.jitter_radius = 1;
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.train.images, b.train.images);
        assert_eq!(a.val.images, b.val.images);
        assert_eq!(a.test.images, b.test.images);
        assert_eq!(a.train.labels, b.train.labels);
    }

    #[test]
    fn sixteen_classes_use_sixteen_distinct_tuples() {
        let mut seen = std::collections::HashSet::new();
        for c in 0..16 {
            let tuple = class_tuple(c, 2, 4);
            assert!(tuple.iter().all(|&g| g < 4));
            assert!(seen.insert(tuple));
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn class_space_exhaustion_is_an_error() {
        let mut spec = tiny_spec();
        spec.class_count = 17; // 4^2 = 16 < 17
        let err = generate(&spec).unwrap_err();
        assert!(err.to_string().contains("class space exhausted"), "{err}");
    }

    #[test]
    fn split_sizes_follow_val_fraction() {
        let bundle = generate(&tiny_spec()).unwrap();
        // 10 per class, 10% → 1 val, 9 train, 16 classes
        assert_eq!(bundle.train.len(), 16 * 9);
        assert_eq!(bundle.val.len(), 16);
        assert_eq!(bundle.test.len(), 16 * 4);
    }

    #[test]
    fn nearest_centroid_separates_noiseless_classes() {
        let bundle = generate(&tiny_spec()).unwrap();
        let (train, test) = (&bundle.train, &bundle.test);
        let k = train.class_count;
        let dim = train.image_len();
        let mut centroids = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..train.len() {
            let c = train.label(i);
            counts[c] += 1;
            for (slot, &b) in centroids[c].iter_mut().zip(train.image(i)) {
                *slot += b as f64;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            for v in centroid.iter_mut() {
                *v /= counts[c] as f64;
            }
        }
        let mut hits = 0;
        for i in 0..test.len() {
            let img = test.image(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f64 = centroid
                    .iter()
                    .zip(img)
                    .map(|(&m, &b)| (m - b as f64).powi(2))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if best == test.label(i) {
                hits += 1;
            }
        }
        assert_eq!(hits, test.len());
    }

    #[test]
    fn round_trip_preserves_content_and_bytes() {
        let mut spec = tiny_spec();
        spec.noise_sigma = 3.0;
        let bundle = generate(&spec).unwrap();
        let bytes = dataset_bytes(&bundle.test);
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(back.images, bundle.test.images);
        assert_eq!(back.labels, bundle.test.labels);
        assert_eq!(back.class_count, bundle.test.class_count);
        assert_eq!(dataset_bytes(&back), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sefd");
        let bundle = generate(&tiny_spec()).unwrap();
        write_dataset(&bundle.val, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.images, bundle.val.images);
        assert_eq!(back.labels, bundle.val.labels);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let ds = Dataset {
            images: vec![0; 12],
            labels: vec![0],
            channels: 3,
            height: 2,
            width: 2,
            class_count: 1,
            split: None,
        };
        let mut bytes = dataset_bytes(&ds);
        bytes[..4].copy_from_slice(b"XXXX");
        let err = dataset_from_bytes(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "bad magic at offset 0");
    }

    #[test]
    fn truncation_reports_offset() {
        let ds = Dataset {
            images: vec![7; 12],
            labels: vec![0],
            channels: 3,
            height: 2,
            width: 2,
            class_count: 1,
            split: None,
        };
        let bytes = dataset_bytes(&ds);
        let err = dataset_from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated"), "{msg}");
        assert!(msg.contains("offset"), "{msg}");
    }

    #[test]
    fn header_and_payload_sizes_add_up() {
        // 4 magic + 4 version + 5·4 header fields + N·3·S·S + 2·N
        let ds = Dataset {
            images: vec![1; 12],
            labels: vec![0],
            channels: 3,
            height: 2,
            width: 2,
            class_count: 1,
            split: None,
        };
        assert_eq!(dataset_bytes(&ds).len(), 4 + 4 + 4 * 5 + 12 + 2);
        assert_eq!(dataset_bytes(&ds).len(), 42);
    }

    #[test]
    fn split_validation_is_stratified_and_deterministic() {
        let bundle = generate(&tiny_spec()).unwrap();
        // merge train+val back into one pool, then re-split
        let pool = Dataset {
            images: [bundle.train.images.clone(), bundle.val.images.clone()].concat(),
            labels: [bundle.train.labels.clone(), bundle.val.labels.clone()].concat(),
            channels: 3,
            height: 16,
            width: 16,
            class_count: 16,
            split: None,
        };
        let (train, val) = split_validation(&pool, 0.25).unwrap();
        assert_eq!(train.len() + val.len(), pool.len());
        for c in 0..16u16 {
            let v = val.labels.iter().filter(|&&l| l == c).count();
            assert_eq!(v, 2); // floor(10 · 0.25)
        }
        let (train2, val2) = split_validation(&pool, 0.25).unwrap();
        assert_eq!(train.images, train2.images);
        assert_eq!(val.images, val2.images);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let ds = Dataset {
            images: vec![0; 12],
            labels: vec![0],
            channels: 3,
            height: 2,
            width: 2,
            class_count: 1,
            split: None,
        };
        let mut bytes = dataset_bytes(&ds);
        let at = bytes.len() - 2;
        bytes[at] = 9;
        let err = dataset_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("label 9"), "{err}");
    }
}
