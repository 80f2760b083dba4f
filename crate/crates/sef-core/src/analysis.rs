//! Diagnostics around a trained model: dense-rank scoring of accuracy
//! tables, averaged channel-correlation matrices, group activation maps,
//! and the ablation runner. File outputs are plain CSV and binary PGM/PPM.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{to_input_tensor, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::loss::{channel_correlation, normalize_channels, LossReport};
use crate::nn::{GroupPartition, SefModel};
use crate::tensor::{Graph, Tensor};
use crate::train::{evaluate, train, TrainConfig};

/// Accuracy table bundled with the crate: published results (percent) of
/// fine-grained classifiers on four benchmark datasets, empty cells where a
/// method reported no number.
pub const BUNDLED_METHOD_TABLE: &str = include_str!("../assets/fgic_methods.csv");

/// Per-method accuracy entries across datasets; `None` marks a missing cell.
#[derive(Debug, Clone)]
pub struct MethodTable {
    pub datasets: Vec<String>,
    pub methods: Vec<MethodRow>,
}

#[derive(Debug, Clone)]
pub struct MethodRow {
    pub name: String,
    pub accuracies: Vec<Option<f64>>,
}

impl MethodTable {
    /// Parses `method,<dataset>,...` CSV; an empty cell is a missing entry.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidOperand("empty method table".into()))?;
        let mut cols = header.split(',').map(str::trim);
        let first = cols.next().unwrap_or("");
        if first != "method" {
            return Err(Error::InvalidOperand(format!(
                "method table header must start with 'method', got '{first}'"
            )));
        }
        let datasets: Vec<String> = cols.map(str::to_string).collect();
        if datasets.is_empty() {
            return Err(Error::InvalidOperand(
                "method table needs at least one dataset column".into(),
            ));
        }
        let mut methods = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let mut cells = line.split(',').map(str::trim);
            let name = cells
                .next()
                .filter(|n| !n.is_empty())
                .ok_or_else(|| {
                    Error::InvalidOperand(format!("row {}: missing method name", lineno + 2))
                })?
                .to_string();
            let mut accuracies = Vec::with_capacity(datasets.len());
            for cell in cells {
                if cell.is_empty() {
                    accuracies.push(None);
                } else {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::InvalidOperand(format!(
                            "row {}: bad accuracy '{cell}'",
                            lineno + 2
                        ))
                    })?;
                    if !(0.0..=100.0).contains(&v) {
                        return Err(Error::InvalidOperand(format!(
                            "row {}: accuracy {v} outside [0,100]",
                            lineno + 2
                        )));
                    }
                    accuracies.push(Some(v));
                }
            }
            accuracies.resize(datasets.len(), None);
            if accuracies.iter().all(Option::is_none) {
                return Err(Error::InvalidOperand(format!(
                    "method '{name}' has no entries"
                )));
            }
            methods.push(MethodRow { name, accuracies });
        }
        if methods.is_empty() {
            return Err(Error::InvalidOperand("method table has no rows".into()));
        }
        Ok(MethodTable { datasets, methods })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// One method's ranks and their mean.
#[derive(Debug, Clone)]
pub struct MethodScore {
    pub name: String,
    /// Dense rank per dataset; `None` where the method had no entry.
    pub ranks: Vec<Option<usize>>,
    /// Mean rank over the datasets the method appears in.
    pub score: f64,
    pub datasets_counted: usize,
}

#[derive(Debug, Clone)]
pub struct ScoreResult {
    pub datasets: Vec<String>,
    pub methods: Vec<MethodScore>,
}

impl ScoreResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,score");
        for d in &self.datasets {
            let _ = write!(out, ",rank_{d}");
        }
        out.push('\n');
        for m in &self.methods {
            let _ = write!(out, "{},{}", m.name, m.score);
            for r in &m.ranks {
                match r {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Rounds half-up to one decimal for display (`2.25 → "2.3"`).
pub fn format_score(score: f64) -> String {
    let tenths = (score * 10.0 + 0.5).floor() as i64;
    format!("{}.{}", tenths / 10, (tenths % 10).abs())
}

/// Ranks methods per dataset by accuracy, descending, with dense ranking
/// (ties share a rank, the next distinct value takes the next integer), then
/// averages each method's ranks over the datasets it appears in.
pub fn score_table(table: &MethodTable) -> Result<ScoreResult> {
    if table.methods.is_empty() {
        return Err(Error::InvalidOperand("empty method table".into()));
    }
    let n_methods = table.methods.len();
    let mut ranks: Vec<Vec<Option<usize>>> = vec![vec![None; table.datasets.len()]; n_methods];
    for (d, _) in table.datasets.iter().enumerate() {
        let mut present: Vec<(f64, usize)> = table
            .methods
            .iter()
            .enumerate()
            .filter_map(|(m, row)| row.accuracies[d].map(|a| (a, m)))
            .collect();
        present.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut rank = 0usize;
        let mut prev = f64::INFINITY;
        for &(acc, m) in &present {
            if acc < prev {
                rank += 1;
                prev = acc;
            }
            ranks[m][d] = Some(rank);
        }
    }
    let methods = table
        .methods
        .iter()
        .zip(&ranks)
        .map(|(row, r)| {
            let counted: Vec<usize> = r.iter().flatten().copied().collect();
            let score = counted.iter().sum::<usize>() as f64 / counted.len() as f64;
            MethodScore {
                name: row.name.clone(),
                ranks: r.clone(),
                score,
                datasets_counted: counted.len(),
            }
        })
        .collect();
    Ok(ScoreResult {
        datasets: table.datasets.clone(),
        methods,
    })
}

// ── PGM / PPM writers ──────────────────────────────────────────────────

pub mod pnm {
    use super::*;

    fn header(magic: &str, width: usize, height: usize, comment: Option<&str>) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(magic.as_bytes());
        out.push(b'\n');
        if let Some(c) = comment {
            out.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
        out
    }

    pub fn pgm_bytes(width: usize, height: usize, gray: &[u8], comment: Option<&str>) -> Vec<u8> {
        debug_assert_eq!(gray.len(), width * height);
        let mut out = header("P5", width, height, comment);
        out.extend_from_slice(gray);
        out
    }

    pub fn ppm_bytes(width: usize, height: usize, rgb: &[u8], comment: Option<&str>) -> Vec<u8> {
        debug_assert_eq!(rgb.len(), 3 * width * height);
        let mut out = header("P6", width, height, comment);
        out.extend_from_slice(rgb);
        out
    }

    pub fn write_pgm(
        path: &Path,
        width: usize,
        height: usize,
        gray: &[u8],
        comment: Option<&str>,
    ) -> Result<()> {
        fs::write(path, pgm_bytes(width, height, gray, comment)).map_err(|e| Error::io(path, e))
    }

    pub fn write_ppm(
        path: &Path,
        width: usize,
        height: usize,
        rgb: &[u8],
        comment: Option<&str>,
    ) -> Result<()> {
        fs::write(path, ppm_bytes(width, height, rgb, comment)).map_err(|e| Error::io(path, e))
    }
}

// ── correlation export ─────────────────────────────────────────────────

/// Channel correlation matrix averaged over a seeded random selection of
/// dataset images.
pub struct CorrelationSummary {
    /// `[C,C]` mean of per-image correlation matrices.
    pub matrix: Tensor,
    pub seed: u64,
    pub samples: usize,
}

/// Computes the averaged channel-correlation matrix on `sample_count`
/// images drawn without replacement using `seed`.
pub fn correlation_matrix(
    model: &SefModel,
    ds: &Dataset,
    sample_count: usize,
    seed: u64,
) -> Result<CorrelationSummary> {
    if sample_count == 0 || sample_count > ds.len() {
        return Err(Error::InvalidOperand(format!(
            "sample count {sample_count} invalid for a dataset of {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.truncate(sample_count);

    let c = model.channels();
    let mut acc = vec![0.0f64; c * c];
    for chunk in order.chunks(32) {
        let images = to_input_tensor(ds, chunk, None);
        let mut g = Graph::new();
        let fwd = model.forward(&mut g, &images)?;
        let normed = normalize_channels(&mut g, fwd.features)?;
        let corr = channel_correlation(&mut g, normed)?;
        let data = g.value(corr).data();
        for img in 0..chunk.len() {
            for (slot, &v) in acc.iter_mut().zip(&data[img * c * c..(img + 1) * c * c]) {
                *slot += v;
            }
        }
    }
    for v in &mut acc {
        *v /= sample_count as f64;
    }
    Ok(CorrelationSummary {
        matrix: Tensor::new(vec![c, c], acc)?,
        seed,
        samples: sample_count,
    })
}


/// Writes the averaged correlation matrix as CSV (one row per channel, with
/// a seed/sample comment line) and as a PGM image mapping [−1,1] to
/// [0,255] linearly.
pub fn export_correlation(
    model: &SefModel,
    ds: &Dataset,
    sample_count: usize,
    seed: u64,
    out_csv: &Path,
    out_pgm: &Path,
) -> Result<CorrelationSummary> {
    let summary = correlation_matrix(model, ds, sample_count, seed)?;
    let c = model.channels();
    let meta = format!("seed={} samples={}", summary.seed, summary.samples);
    let mut csv = format!("# {meta}\n");
    for row in summary.matrix.data().chunks_exact(c) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    fs::write(out_csv, csv).map_err(|e| Error::io(out_csv, e))?;
    let pixels: Vec<u8> = summary
        .matrix
        .data()
        .iter()
        .map(|&v| (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    pnm::write_pgm(out_pgm, c, c, &pixels, Some(&meta))?;
    Ok(summary)
}

/// Mean within-group and between-group correlation from an averaged
/// `[C,C]` matrix. Within-group entries exclude the self-pairs `i == j`.
pub fn correlation_block_gap(matrix: &Tensor, partition: &GroupPartition) -> Result<(f64, f64)> {
    let c = partition.channels();
    if matrix.shape() != [c, c] {
        return Err(Error::Config(format!(
            "matrix shape {:?} does not match partition over {c} channels",
            matrix.shape()
        )));
    }
    let d = matrix.data();
    let mut within = (0.0, 0usize);
    let mut between = (0.0, 0usize);
    for m in 0..partition.group_count() {
        for k in 0..partition.group_count() {
            for i in partition.group_range(m) {
                for j in partition.group_range(k) {
                    if m == k {
                        if i != j {
                            within.0 += d[i * c + j];
                            within.1 += 1;
                        }
                    } else {
                        between.0 += d[i * c + j];
                        between.1 += 1;
                    }
                }
            }
        }
    }
    if within.1 == 0 || between.1 == 0 {
        return Err(Error::Config(
            "partition leaves a side of the within/between comparison empty".into(),
        ));
    }
    Ok((within.0 / within.1 as f64, between.0 / between.1 as f64))
}

// ── activation maps ────────────────────────────────────────────────────

/// Min-max normalization to bytes; a constant map becomes all zeros.
pub fn normalize_to_bytes(values: &[f64]) -> Vec<u8> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - min) / (max - min)) * 255.0).round() as u8)
        .collect()
}

/// Nearest-neighbor upsampling of a grayscale grid.
pub fn upsample_nearest(
    src: &[u8],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<u8> {
    let mut out = vec![0u8; dst_h * dst_w];
    for y in 0..dst_h {
        let sy = y * src_h / dst_h;
        for x in 0..dst_w {
            let sx = x * src_w / dst_w;
            out[y * dst_w + x] = src[sy * src_w + sx];
        }
    }
    out
}

/// For each selected image and each channel group, writes the group's mean
/// feature map (min-max normalized, nearest-neighbor upsampled to input
/// size) as PGM, plus a 50/50 blend with the original image as PPM.
pub fn export_activation_maps(
    model: &SefModel,
    ds: &Dataset,
    indices: &[usize],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if indices.iter().any(|&i| i >= ds.len()) {
        return Err(Error::InvalidOperand(format!(
            "image index out of range for a dataset of {}",
            ds.len()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let images = to_input_tensor(ds, indices, None);
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &images)?;
    let features = g.value(fwd.features);
    let (fh, fw) = (features.shape()[2], features.shape()[3]);
    let (h, w) = (ds.height, ds.width);
    let partition = model.partition();
    let mut written = Vec::new();
    for (pos, &img_ix) in indices.iter().enumerate() {
        let original = ds.image(img_ix);
        for group in 0..partition.group_count() {
            let range = partition.group_range(group);
            let mut mean = vec![0.0f64; fh * fw];
            for ch in range.clone() {
                let base = (pos * model.channels() + ch) * fh * fw;
                for (slot, &v) in mean.iter_mut().zip(&features.data()[base..base + fh * fw]) {
                    *slot += v;
                }
            }
            for v in &mut mean {
                *v /= range.len() as f64;
            }
            let map = upsample_nearest(&normalize_to_bytes(&mean), fh, fw, h, w);

            let pgm_path = out_dir.join(format!("img{img_ix:03}_group{group}.pgm"));
            pnm::write_pgm(&pgm_path, w, h, &map, None)?;
            written.push(pgm_path);

            let mut rgb = vec![0u8; 3 * h * w];
            for ch in 0..3 {
                for p in 0..h * w {
                    let blended =
                        0.5 * map[p] as f64 + 0.5 * original[ch * h * w + p] as f64;
                    rgb[p * 3 + ch] = blended.round() as u8;
                }
            }
            let ppm_path = out_dir.join(format!("img{img_ix:03}_group{group}_overlay.ppm"));
            pnm::write_ppm(&ppm_path, w, h, &rgb, None)?;
            written.push(ppm_path);
        }
    }
    Ok(written)
}

// ── ablation runner ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub lambda: f64,
    pub gamma: f64,
    pub phi: f64,
    pub test_accuracy: f64,
    pub final_loss: LossReport,
}

/// The five standard weight configurations, from the plain baseline to the
/// full objective.
pub fn ablation_grid() -> Vec<(&'static str, f64, f64, f64)> {
    vec![
        ("baseline", 0.0, 0.0, 0.0),
        ("grouping-only", 0.0, 0.0, 1.0),
        ("matching-combined", 0.05, 0.05, 0.0),
        ("matching-plus-grouping", 0.05, 0.05, 1.0),
        ("full", 1.0, 0.05, 1.0),
    ]
}

/// Trains every grid configuration with the same seed and data, writing one
/// CSV row per configuration (test accuracy plus final epoch loss terms).
pub fn run_ablation(
    base: &TrainConfig,
    spec: &SynthSpec,
    out_csv: &Path,
) -> Result<Vec<AblationRow>> {
    let bundle = crate::data::generate(spec)?;
    let mut rows = Vec::new();
    for (name, lambda, gamma, phi) in ablation_grid() {
        let mut cfg = base.clone();
        cfg.weights.lambda = lambda;
        cfg.weights.gamma = gamma;
        cfg.weights.phi = phi;
        cfg.validate()?;
        let mut model = SefModel::with_default_backbone(
            cfg.channels,
            cfg.weights.groups,
            cfg.classes,
            cfg.seed,
        )?;
        let history = train(&mut model, &bundle.train, &bundle.val, &cfg)?;
        let final_loss = history
            .last()
            .map(|r| r.loss)
            .ok_or_else(|| Error::Config("ablation needs at least one epoch".into()))?;
        let test_accuracy = evaluate(&model, &bundle.test)?;
        rows.push(AblationRow {
            name: name.to_string(),
            lambda,
            gamma,
            phi,
            test_accuracy,
            final_loss,
        });
    }
    let mut csv =
        String::from("name,lambda,gamma,phi,test_accuracy,cross_entropy,entropy,distill,grouping,total\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.name,
            r.lambda,
            r.gamma,
            r.phi,
            r.test_accuracy,
            r.final_loss.cross_entropy,
            r.final_loss.entropy_global,
            r.final_loss.distill_mean,
            r.final_loss.grouping,
            r.final_loss.total
        );
    }
    fs::write(out_csv, csv).map_err(|e| Error::io(out_csv, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_reproduces_published_scores() {
        let table = MethodTable::from_csv(BUNDLED_METHOD_TABLE).unwrap();
        let result = score_table(&table).unwrap();
        let want = [
            ("Kernel-Pooling", "10.3"),
            ("MAMC-CNN", "7.7"),
            ("DFB-CNN", "6.3"),
            ("NTS-Net", "6.0"),
            ("S3N", "1.7"),
            ("API-Net", "2.3"),
            ("DCL", "2.7"),
            ("TASN", "5.0"),
            ("Cross-X", "2.8"),
            ("ResNet-50", "8.3"),
            ("MaxEnt-CNN", "8.8"),
            ("DBT-Net", "5.7"),
            ("SEF", "4.8"),
        ];
        assert_eq!(result.methods.len(), want.len());
        for (m, (name, score)) in result.methods.iter().zip(want) {
            assert_eq!(m.name, name);
            assert_eq!(format_score(m.score), score, "score of {name}");
        }
    }

    #[test]
    fn single_method_scores_one() {
        let table = MethodTable::from_csv("method,A,B\nonly,90.0,80.0\n").unwrap();
        let result = score_table(&table).unwrap();
        assert_eq!(result.methods[0].score, 1.0);
    }

    #[test]
    fn dense_ranking_shares_ranks_on_ties() {
        let table =
            MethodTable::from_csv("method,A\nfirst,90.0\nalso-first,90.0\nthird,85.0\n").unwrap();
        let result = score_table(&table).unwrap();
        assert_eq!(result.methods[0].ranks[0], Some(1));
        assert_eq!(result.methods[1].ranks[0], Some(1));
        assert_eq!(result.methods[2].ranks[0], Some(2));
    }

    #[test]
    fn dense_is_the_scheme_matching_all_published_scores() {
        // Recompute under competition (min), dense, and fractional (average)
        // ranking; only dense reproduces the full printed score column.
        let table = MethodTable::from_csv(BUNDLED_METHOD_TABLE).unwrap();
        let printed = [
            "10.3", "7.7", "6.3", "6.0", "1.7", "2.3", "2.7", "5.0", "2.8", "8.3", "8.8", "5.7",
            "4.8",
        ];
        let schemes = ["competition", "dense", "fractional"];
        let mut matching = Vec::new();
        for scheme in schemes {
            let mut all_ranks: Vec<Vec<Option<f64>>> =
                vec![vec![None; table.datasets.len()]; table.methods.len()];
            for d in 0..table.datasets.len() {
                let mut present: Vec<(f64, usize)> = table
                    .methods
                    .iter()
                    .enumerate()
                    .filter_map(|(m, row)| row.accuracies[d].map(|a| (a, m)))
                    .collect();
                present.sort_by(|a, b| b.0.total_cmp(&a.0));
                let mut i = 0;
                let mut dense_rank = 0.0;
                while i < present.len() {
                    let mut j = i + 1;
                    while j < present.len() && present[j].0 == present[i].0 {
                        j += 1;
                    }
                    dense_rank += 1.0;
                    let rank = match scheme {
                        "competition" => (i + 1) as f64,
                        "dense" => dense_rank,
                        "fractional" => (i + 1..=j).sum::<usize>() as f64 / (j - i) as f64,
                        _ => unreachable!(),
                    };
                    for &(_, m) in &present[i..j] {
                        all_ranks[m][d] = Some(rank);
                    }
                    i = j;
                }
            }
            let ok = table.methods.iter().enumerate().all(|(m, _)| {
                let rs: Vec<f64> = all_ranks[m].iter().flatten().copied().collect();
                let score = rs.iter().sum::<f64>() / rs.len() as f64;
                format_score(score) == printed[m]
            });
            if ok {
                matching.push(scheme);
            }
        }
        assert_eq!(matching, vec!["dense"]);
    }

    #[test]
    fn scores_average_only_available_datasets() {
        let table = MethodTable::from_csv(BUNDLED_METHOD_TABLE).unwrap();
        let result = score_table(&table).unwrap();
        let dcl = result.methods.iter().find(|m| m.name == "DCL").unwrap();
        assert_eq!(dcl.datasets_counted, 3);
        let tasn = result.methods.iter().find(|m| m.name == "TASN").unwrap();
        assert_eq!(tasn.datasets_counted, 2);
        assert_eq!(tasn.score, 5.0);
    }

    #[test]
    fn score_is_invariant_to_positive_affine_column_transform() {
        let base = MethodTable::from_csv(BUNDLED_METHOD_TABLE).unwrap();
        let mut transformed = base.clone();
        for row in &mut transformed.methods {
            if let Some(v) = row.accuracies[1] {
                // keep inside [0,100]
                row.accuracies[1] = Some(v * 0.5 + 10.0);
            }
        }
        let a = score_table(&base).unwrap();
        let b = score_table(&transformed).unwrap();
        for (x, y) in a.methods.iter().zip(&b.methods) {
            assert_eq!(x.ranks, y.ranks);
            assert_eq!(x.score, y.score);
        }
    }

    #[test]
    fn format_score_rounds_half_up() {
        assert_eq!(format_score(2.25), "2.3");
        assert_eq!(format_score(4.75), "4.8");
        assert_eq!(format_score(5.0), "5.0");
        assert_eq!(format_score(10.0 / 3.0 * 3.1), "10.3");
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(MethodTable::from_csv("").is_err());
        assert!(MethodTable::from_csv("name,A\nx,90\n").is_err());
        assert!(MethodTable::from_csv("method,A\nx,150\n").is_err());
        assert!(MethodTable::from_csv("method,A\nx,\n").is_err());
    }

    #[test]
    fn pgm_and_ppm_headers_declare_payload() {
        let pgm = pnm::pgm_bytes(3, 2, &[0, 1, 2, 3, 4, 5], Some("meta"));
        assert!(pgm.starts_with(b"P5\n# meta\n3 2\n255\n"));
        assert_eq!(pgm.len(), b"P5\n# meta\n3 2\n255\n".len() + 6);
        let ppm = pnm::ppm_bytes(1, 2, &[9; 6], None);
        assert!(ppm.starts_with(b"P6\n1 2\n255\n"));
        assert_eq!(ppm.len(), b"P6\n1 2\n255\n".len() + 6);
    }

    #[test]
    fn normalize_to_bytes_handles_constant_maps() {
        assert_eq!(normalize_to_bytes(&[2.5, 2.5, 2.5]), vec![0, 0, 0]);
        assert_eq!(normalize_to_bytes(&[0.0, 1.0]), vec![0, 255]);
    }

    #[test]
    fn upsample_repeats_blocks() {
        let src = [1u8, 2, 3, 4];
        let up = upsample_nearest(&src, 2, 2, 4, 4);
        assert_eq!(
            up,
            vec![1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]
        );
    }
}
