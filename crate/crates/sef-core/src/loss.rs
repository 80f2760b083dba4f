//! Training objectives: channel correlation and the block-structure
//! (grouping) penalty, entropy / cross-entropy / KL on predicted
//! distributions, plain classification loss, and the combined objective
//!
//! ```text
//! total = L_cls − λ·H(global) + (γ/G)·Σ_g H(global, group_g) + φ·L_group
//! ```
//!
//! All terms are batch means. Natural logarithms throughout.

use crate::error::{Error, Result};
use crate::nn::GroupPartition;
use crate::tensor::{Graph, NodeId};

/// Floor used when normalizing channels so zero channels stay zero.
pub const NORM_FLOOR: f64 = 1e-12;

/// Objective weights. `lambda` scales the entropy bonus, `gamma` the
/// distillation terms, `phi` the grouping penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub phi: f64,
    pub groups: usize,
}

impl LossWeights {
    pub fn new(lambda: f64, gamma: f64, phi: f64, groups: usize) -> Result<Self> {
        let w = LossWeights {
            lambda,
            gamma,
            phi,
            groups,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.gamma < 0.0 || self.phi < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative: λ={} γ={} φ={}",
                self.lambda, self.gamma, self.phi
            )));
        }
        if self.groups == 0 {
            return Err(Error::Config("group count must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Scalar values of every objective term for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub cross_entropy: f64,
    pub entropy_global: f64,
    /// `(1/G)·Σ_g H(global, group_g)`.
    pub distill_mean: f64,
    pub grouping: f64,
    pub total: f64,
}

impl LossReport {
    /// |total − (ce − λ·H + γ·distill + φ·grouping)|; zero up to rounding.
    pub fn identity_residual(&self, weights: &LossWeights) -> f64 {
        let recombined = self.cross_entropy - weights.lambda * self.entropy_global
            + weights.gamma * self.distill_mean
            + weights.phi * self.grouping;
        (self.total - recombined).abs()
    }

    pub fn is_finite(&self) -> bool {
        self.cross_entropy.is_finite()
            && self.entropy_global.is_finite()
            && self.distill_mean.is_finite()
            && self.grouping.is_finite()
            && self.total.is_finite()
    }
}

/// Flattens `[N,C,H,W]` to `[N,C,H·W]` and scales every channel to unit
/// L2 norm; channels with norm below [`NORM_FLOOR`] stay as they are
/// (an all-zero channel maps to all zeros).
pub fn normalize_channels(g: &mut Graph, features: NodeId) -> Result<NodeId> {
    let s = g.value(features).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::InvalidOperand(format!(
            "normalize_channels expects [N,C,H,W], got {s:?}"
        )));
    }
    let flat = g.reshape(features, vec![s[0], s[1], s[2] * s[3]])?;
    let norms = g.l2_norm_axis(flat, 2)?;
    let floored = g.clamp_min(norms, NORM_FLOOR)?;
    g.div_last_axis(flat, floored)
}

/// Pairwise channel dot products per sample: `[N,C,L] -> [N,C,C]`.
pub fn channel_correlation(g: &mut Graph, normed: NodeId) -> Result<NodeId> {
    g.gram_last(normed)
}

/// Block means of the channel correlation under the partition, including
/// the self-pairs on diagonal blocks: `[N,C,C] -> [N,G,G]`.
pub fn group_correlation_matrix(
    g: &mut Graph,
    corr: NodeId,
    partition: &GroupPartition,
) -> Result<NodeId> {
    let s = g.value(corr).shape();
    if s.len() != 3 || s[1] != partition.channels() {
        return Err(Error::Config(format!(
            "correlation shape {s:?} does not match partition over {} channels",
            partition.channels()
        )));
    }
    g.block_mean(corr, partition.bounds())
}

/// Grouping penalty `½(‖D‖_F² − 2‖diag(D)‖₂²)` per sample, averaged over
/// the batch. Minimized when D is the identity: within-group correlations
/// saturate while cross-group blocks vanish.
pub fn grouping_loss(g: &mut Graph, group_corr: NodeId) -> Result<NodeId> {
    let s = g.value(group_corr).shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::InvalidOperand(format!(
            "grouping_loss expects [N,G,G], got {s:?}"
        )));
    }
    let n = s[0];
    let sq = g.mul(group_corr, group_corr)?;
    let frob = g.sum_all(sq)?;
    let diag = g.diag_part(group_corr)?;
    let diag_sq = g.mul(diag, diag)?;
    let diag_sum = g.sum_all(diag_sq)?;
    let twice_diag = g.scalar_mul(diag_sum, 2.0)?;
    let spread = g.sub(frob, twice_diag)?;
    g.scalar_mul(spread, 0.5 / n as f64)
}

fn validate_distribution(g: &Graph, p: NodeId, context: &'static str) -> Result<()> {
    let t = g.value(p);
    let s = t.shape();
    if s.len() != 2 {
        return Err(Error::InvalidOperand(format!(
            "{context} expects [N,K] rows, got {s:?}"
        )));
    }
    let cols = s[1];
    for (row_ix, row) in t.data().chunks_exact(cols).enumerate() {
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidOperand(format!(
                "{context}: negative probability in row {row_ix}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidOperand(format!(
                "{context}: row {row_ix} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

/// Batch-mean Shannon entropy of row distributions, in nats.
pub fn entropy(g: &mut Graph, p: NodeId) -> Result<NodeId> {
    validate_distribution(g, p, "entropy")?;
    let n = g.value(p).shape()[0];
    let logs = g.log(p)?;
    let weighted = g.mul(p, logs)?;
    let sum = g.sum_all(weighted)?;
    g.scalar_mul(sum, -1.0 / n as f64)
}

/// Batch-mean cross entropy `−Σ p log q`, in nats.
pub fn cross_entropy_dist(g: &mut Graph, p: NodeId, q: NodeId) -> Result<NodeId> {
    validate_distribution(g, p, "cross_entropy")?;
    validate_distribution(g, q, "cross_entropy")?;
    let (sp, sq) = (g.value(p).shape(), g.value(q).shape());
    if sp != sq {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy",
            left: sp.to_vec(),
            right: sq.to_vec(),
        });
    }
    let n = sp[0];
    let logs = g.log(q)?;
    let weighted = g.mul(p, logs)?;
    let sum = g.sum_all(weighted)?;
    g.scalar_mul(sum, -1.0 / n as f64)
}

/// KL divergence computed through its decomposition
/// `KL(p‖q) = H(p,q) − H(p)`.
pub fn kl_divergence(g: &mut Graph, p: NodeId, q: NodeId) -> Result<NodeId> {
    let ce = cross_entropy_dist(g, p, q)?;
    let h = entropy(g, p)?;
    g.sub(ce, h)
}

/// Mean negative log softmax probability of the true class.
pub fn classification_loss(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let s = g.value(logits).shape();
    if s.len() != 2 || labels.len() != s[0] {
        return Err(Error::InvalidOperand(format!(
            "classification_loss: logits {s:?} with {} labels",
            labels.len()
        )));
    }
    let n = s[0];
    let probs = g.softmax_last(logits)?;
    let logs = g.log(probs)?;
    let picked = g.pick_per_row(logs, labels)?;
    let sum = g.sum_all(picked)?;
    g.scalar_mul(sum, -1.0 / n as f64)
}

/// Builds the combined objective and reports each term.
///
/// When `stop_teacher_grad` is set the global distribution inside the
/// distillation terms is treated as a constant during backward; by default
/// gradients flow through both sides.
#[allow(clippy::too_many_arguments)]
pub fn sef_objective(
    g: &mut Graph,
    logits_global: NodeId,
    logits_groups: &[NodeId],
    features: NodeId,
    labels: &[usize],
    partition: &GroupPartition,
    weights: &LossWeights,
    stop_teacher_grad: bool,
) -> Result<(NodeId, LossReport)> {
    weights.validate()?;
    if logits_groups.len() != weights.groups || partition.group_count() != weights.groups {
        return Err(Error::Config(format!(
            "group count mismatch: {} logits, partition {}, weights {}",
            logits_groups.len(),
            partition.group_count(),
            weights.groups
        )));
    }

    let ce = classification_loss(g, logits_global, labels)?;
    let global_dist = g.softmax_last(logits_global)?;
    let ent = entropy(g, global_dist)?;

    let teacher = if stop_teacher_grad {
        g.detach(global_dist)
    } else {
        global_dist
    };
    let mut distill_sum: Option<NodeId> = None;
    for &group_logits in logits_groups {
        let group_dist = g.softmax_last(group_logits)?;
        let term = cross_entropy_dist(g, teacher, group_dist)?;
        distill_sum = Some(match distill_sum {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let distill_mean = g.scalar_mul(distill_sum.unwrap(), 1.0 / weights.groups as f64)?;

    let normed = normalize_channels(g, features)?;
    let corr = channel_correlation(g, normed)?;
    let group_corr = group_correlation_matrix(g, corr, partition)?;
    let grouping = grouping_loss(g, group_corr)?;

    let neg_entropy = g.scalar_mul(ent, -weights.lambda)?;
    let distill_scaled = g.scalar_mul(distill_mean, weights.gamma)?;
    let grouping_scaled = g.scalar_mul(grouping, weights.phi)?;
    let partial = g.add(ce, neg_entropy)?;
    let partial = g.add(partial, distill_scaled)?;
    let total = g.add(partial, grouping_scaled)?;

    let report = LossReport {
        cross_entropy: g.value(ce).item()?,
        entropy_global: g.value(ent).item()?,
        distill_mean: g.value(distill_mean).item()?,
        grouping: g.value(grouping).item()?,
        total: g.value(total).item()?,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn normalize_scales_to_unit_norm() {
        let mut g = Graph::new();
        let f = g.leaf(t(&[1, 1, 1, 2], &[3.0, 4.0]));
        let n = normalize_channels(&mut g, f).unwrap();
        assert_eq!(g.value(n).data(), &[0.6, 0.8]);
    }

    #[test]
    fn normalize_keeps_zero_channels_zero() {
        let mut g = Graph::new();
        let f = g.leaf(Tensor::zeros(vec![1, 2, 2, 2]));
        let n = normalize_channels(&mut g, f).unwrap();
        assert!(g.value(n).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_random_channel_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut g = Graph::new();
        let f = g.leaf(t(&[2, 3, 4, 4], &data));
        let n = normalize_channels(&mut g, f).unwrap();
        for channel in g.value(n).data().chunks_exact(16) {
            let norm: f64 = channel.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-10, "norm {norm}");
        }
    }

    #[test]
    fn correlation_identical_and_orthogonal_channels() {
        let mut g = Graph::new();
        // ch0 == ch1 == [1,0], ch2 == [0,1]
        let f = g.leaf(t(&[1, 3, 1, 2], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
        let n = normalize_channels(&mut g, f).unwrap();
        let c = channel_correlation(&mut g, n).unwrap();
        let d = g.value(c).data();
        assert!((d[0 * 3 + 1] - 1.0).abs() < 1e-12); // identical
        assert!(d[0 * 3 + 2].abs() < 1e-12); // orthogonal
    }

    #[test]
    fn correlation_hand_dot_product() {
        let mut g = Graph::new();
        let f = g.leaf(t(&[1, 2, 1, 2], &[1.0, 1.0, 1.0, 0.0]));
        let n = normalize_channels(&mut g, f).unwrap();
        let c = channel_correlation(&mut g, n).unwrap();
        let d01 = g.value(c).data()[1];
        assert!((d01 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn correlation_is_symmetric_with_unit_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..1 * 5 * 3 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut g = Graph::new();
        let f = g.leaf(t(&[1, 5, 3, 3], &data));
        let n = normalize_channels(&mut g, f).unwrap();
        let c = channel_correlation(&mut g, n).unwrap();
        let d = g.value(c).data();
        for i in 0..5 {
            assert!((d[i * 5 + i] - 1.0).abs() < 1e-10);
            for j in 0..5 {
                assert_eq!(d[i * 5 + j].to_bits(), d[j * 5 + i].to_bits());
                assert!(d[i * 5 + j].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn group_correlation_block_identity() {
        let mut g = Graph::new();
        // two groups of two identical channels, orthogonal across groups
        let f = g.leaf(t(
            &[1, 4, 1, 2],
            &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
        ));
        let partition = GroupPartition::equal(4, 2).unwrap();
        let n = normalize_channels(&mut g, f).unwrap();
        let c = channel_correlation(&mut g, n).unwrap();
        let d = group_correlation_matrix(&mut g, c, &partition).unwrap();
        let v = g.value(d).data();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1].abs() < 1e-12);
        assert!(v[2].abs() < 1e-12);
        assert!((v[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn group_correlation_all_identical_channels() {
        let mut g = Graph::new();
        let f = g.leaf(Tensor::full(vec![1, 4, 1, 2], 0.7));
        let partition = GroupPartition::equal(4, 2).unwrap();
        let n = normalize_channels(&mut g, f).unwrap();
        let c = channel_correlation(&mut g, n).unwrap();
        let d = group_correlation_matrix(&mut g, c, &partition).unwrap();
        for &v in g.value(d).data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_correlation_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..1 * 4 * 2 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let f = g.leaf(t(&[1, 4, 2, 2], &data));
        let partition = GroupPartition::equal(4, 2).unwrap();
        let n = normalize_channels(&mut g, f).unwrap();
        let c = channel_correlation(&mut g, n).unwrap();
        let d = group_correlation_matrix(&mut g, c, &partition).unwrap();
        // brute-force block average over the channel-level matrix
        let corr = g.value(c).data();
        for m in 0..2 {
            for k in 0..2 {
                let mut sum = 0.0;
                for i in 2 * m..2 * m + 2 {
                    for j in 2 * k..2 * k + 2 {
                        sum += corr[i * 4 + j];
                    }
                }
                let want = sum / 4.0;
                let got = g.value(d).data()[m * 2 + k];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grouping_loss_landmarks() {
        let mut g = Graph::new();
        let ident = g.leaf(t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let l = grouping_loss(&mut g, ident).unwrap();
        assert!((g.value(l).item().unwrap() + 1.0).abs() < 1e-12); // −G/2 for G=2

        let ones = g.leaf(Tensor::full(vec![1, 2, 2], 1.0));
        let l1 = grouping_loss(&mut g, ones).unwrap();
        assert!(g.value(l1).item().unwrap().abs() < 1e-12);

        let single = g.leaf(t(&[1, 1, 1], &[0.6]));
        let ls = grouping_loss(&mut g, single).unwrap();
        assert!((g.value(ls).item().unwrap() + 0.18).abs() < 1e-12); // −d²/2
    }

    #[test]
    fn entropy_landmarks() {
        let mut g = Graph::new();
        let uniform = g.leaf(t(&[1, 2], &[0.5, 0.5]));
        let h = entropy(&mut g, uniform).unwrap();
        assert!((g.value(h).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let one_hot = g.leaf(t(&[1, 3], &[0.0, 1.0, 0.0]));
        let h0 = entropy(&mut g, one_hot).unwrap();
        assert!(g.value(h0).item().unwrap().abs() < 1e-12);

        let skew = g.leaf(t(&[1, 2], &[0.9, 0.1]));
        let hs = entropy(&mut g, skew).unwrap();
        assert!((g.value(hs).item().unwrap() - 0.325083).abs() < 1e-6);
    }

    #[test]
    fn entropy_rejects_bad_rows() {
        let mut g = Graph::new();
        let bad = g.leaf(t(&[1, 2], &[0.7, 0.7]));
        assert!(entropy(&mut g, bad).is_err());
        let neg = g.leaf(t(&[1, 2], &[1.5, -0.5]));
        assert!(entropy(&mut g, neg).is_err());
    }

    #[test]
    fn cross_entropy_landmarks() {
        let mut g = Graph::new();
        let p = g.leaf(t(&[1, 2], &[0.5, 0.5]));
        let q = g.leaf(t(&[1, 2], &[0.9, 0.1]));
        let ce = cross_entropy_dist(&mut g, p, q).unwrap();
        assert!((g.value(ce).item().unwrap() - 1.203973).abs() < 1e-6);

        // Gibbs equality: H(p,p) == H(p), bit for bit.
        let h = entropy(&mut g, p).unwrap();
        let ce_pp = cross_entropy_dist(&mut g, p, p).unwrap();
        assert_eq!(
            g.value(ce_pp).item().unwrap().to_bits(),
            g.value(h).item().unwrap().to_bits()
        );

        let one_hot = g.leaf(t(&[1, 2], &[1.0, 0.0]));
        let near = g.leaf(t(&[1, 2], &[0.9, 0.1]));
        let ce_oh = cross_entropy_dist(&mut g, one_hot, near).unwrap();
        assert!((g.value(ce_oh).item().unwrap() - 0.105361).abs() < 1e-6);
    }

    #[test]
    fn kl_landmarks() {
        let mut g = Graph::new();
        let p = g.leaf(t(&[1, 2], &[0.5, 0.5]));
        let q = g.leaf(t(&[1, 2], &[0.9, 0.1]));
        let kl_pq = kl_divergence(&mut g, p, q).unwrap();
        assert!((g.value(kl_pq).item().unwrap() - 0.510826).abs() < 1e-6);
        let kl_pp = kl_divergence(&mut g, p, p).unwrap();
        assert_eq!(g.value(kl_pp).item().unwrap(), 0.0);
    }

    #[test]
    fn classification_loss_landmarks() {
        let mut g = Graph::new();
        let equal = g.leaf(Tensor::zeros(vec![1, 4]));
        let l = classification_loss(&mut g, equal, &[2]).unwrap();
        assert!((g.value(l).item().unwrap() - 4.0_f64.ln()).abs() < 1e-12);

        let margin = g.leaf(t(&[1, 4], &[20.0, 0.0, 0.0, 0.0]));
        let lm = classification_loss(&mut g, margin, &[0]).unwrap();
        assert!(g.value(lm).item().unwrap() < 1e-8);

        let two = g.leaf(t(&[1, 2], &[1.0, 2.0]));
        let lt = classification_loss(&mut g, two, &[0]).unwrap();
        assert!((g.value(lt).item().unwrap() - 1.313262).abs() < 1e-6);
    }

    #[test]
    fn classification_loss_rejects_bad_label() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(vec![2, 3]));
        let err = classification_loss(&mut g, logits, &[1, 5]).unwrap_err();
        assert!(err.to_string().contains("label 5"), "{err}");
    }

    fn objective_fixture(
        g: &mut Graph,
        weights: &LossWeights,
        stop_teacher: bool,
    ) -> (NodeId, LossReport, Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 2;
        let k = 4;
        let logits_g: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logits_a: Vec<Vec<f64>> = (0..weights.groups)
            .map(|_| (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let feats: Vec<f64> = (0..n * 4 * 2 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = vec![1, 3];

        let lg = g.leaf(t(&[n, k], &logits_g));
        let las: Vec<NodeId> = logits_a.iter().map(|v| g.leaf(t(&[n, k], v))).collect();
        let f = g.leaf(t(&[n, 4, 2, 2], &feats));
        let partition = GroupPartition::equal(4, weights.groups).unwrap();
        let (total, report) = sef_objective(
            g,
            lg,
            &las,
            f,
            &labels,
            &partition,
            weights,
            stop_teacher,
        )
        .unwrap();
        (
            total,
            report,
            logits_g,
            feats,
            logits_a,
            labels.iter().map(|&v| v as f64).collect(),
        )
    }

    #[test]
    fn objective_with_zero_weights_is_plain_cross_entropy() {
        let mut g = Graph::new();
        let weights = LossWeights::new(0.0, 0.0, 0.0, 2).unwrap();
        let (_, report, _, _, _, _) = objective_fixture(&mut g, &weights, false);
        assert_eq!(report.total.to_bits(), report.cross_entropy.to_bits());
    }

    #[test]
    fn objective_entropy_cancels_cross_entropy_at_uniform() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(vec![2, 4]));
        let groups = vec![g.leaf(Tensor::zeros(vec![2, 4]))];
        let feats = g.leaf(Tensor::full(vec![2, 4, 2, 2], 0.3));
        let partition = GroupPartition::equal(4, 1).unwrap();
        let weights = LossWeights::new(1.0, 0.0, 0.0, 1).unwrap();
        let (total, report) = sef_objective(
            &mut g, logits, &groups, feats, &[0, 1], &partition, &weights, false,
        )
        .unwrap();
        assert!((report.cross_entropy - 4.0_f64.ln()).abs() < 1e-12);
        assert!((report.entropy_global - 4.0_f64.ln()).abs() < 1e-12);
        assert!(g.value(total).item().unwrap().abs() < 1e-12);
    }

    /// Recomputes every term with plain loops, outside the graph.
    fn oracle_terms(
        logits_g: &[f64],
        logits_a: &[Vec<f64>],
        feats: &[f64],
        labels: &[usize],
        n: usize,
        k: usize,
        channels: usize,
        spatial: usize,
        groups: usize,
    ) -> (f64, f64, f64, f64) {
        let softmax = |row: &[f64]| -> Vec<f64> {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|&v| v / s).collect()
        };
        let mut ce = 0.0;
        let mut ent = 0.0;
        let mut pw = vec![vec![]; n];
        for i in 0..n {
            let p = softmax(&logits_g[i * k..(i + 1) * k]);
            ce -= p[labels[i]].max(1e-12).ln();
            ent -= p.iter().map(|&v| v * v.max(1e-12).ln()).sum::<f64>();
            pw[i] = p;
        }
        ce /= n as f64;
        ent /= n as f64;
        let mut distill = 0.0;
        for la in logits_a {
            for i in 0..n {
                let q = softmax(&la[i * k..(i + 1) * k]);
                distill -= pw[i]
                    .iter()
                    .zip(&q)
                    .map(|(&p, &qv)| p * qv.max(1e-12).ln())
                    .sum::<f64>();
            }
        }
        distill /= (groups * n) as f64;
        // grouping
        let mut grouping = 0.0;
        let block = channels / groups;
        for i in 0..n {
            let mut normed = vec![0.0; channels * spatial];
            for c in 0..channels {
                let ch = &feats[(i * channels + c) * spatial..(i * channels + c + 1) * spatial];
                let norm = ch.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for (j, &v) in ch.iter().enumerate() {
                    normed[c * spatial + j] = v / norm;
                }
            }
            let mut d = vec![0.0; groups * groups];
            for m in 0..groups {
                for nn in 0..groups {
                    let mut s = 0.0;
                    for a in m * block..(m + 1) * block {
                        for b in nn * block..(nn + 1) * block {
                            let dot: f64 = (0..spatial)
                                .map(|j| normed[a * spatial + j] * normed[b * spatial + j])
                                .sum();
                            s += dot;
                        }
                    }
                    d[m * groups + nn] = s / (block * block) as f64;
                }
            }
            let frob: f64 = d.iter().map(|v| v * v).sum();
            let diag: f64 = (0..groups).map(|m| d[m * groups + m] * d[m * groups + m]).sum();
            grouping += 0.5 * (frob - 2.0 * diag);
        }
        grouping /= n as f64;
        (ce, ent, distill, grouping)
    }

    #[test]
    fn objective_terms_match_out_of_graph_oracle() {
        let mut g = Graph::new();
        let weights = LossWeights::new(1.0, 0.05, 1.0, 2).unwrap();
        let (total, report, logits_g, feats, logits_a, labels_f) =
            objective_fixture(&mut g, &weights, false);
        let labels: Vec<usize> = labels_f.iter().map(|&v| v as usize).collect();
        let (ce, ent, distill, grouping) =
            oracle_terms(&logits_g, &logits_a, &feats, &labels, 2, 4, 4, 4, 2);
        assert!((report.cross_entropy - ce).abs() < 1e-12);
        assert!((report.entropy_global - ent).abs() < 1e-12);
        assert!((report.distill_mean - distill).abs() < 1e-12);
        assert!((report.grouping - grouping).abs() < 1e-12);
        let want_total = ce - 1.0 * ent + 0.05 * distill + 1.0 * grouping;
        assert!((g.value(total).item().unwrap() - want_total).abs() < 1e-12);
        assert!(report.identity_residual(&weights) < 1e-12);
    }

    #[test]
    fn stop_teacher_grad_keeps_values_but_blocks_gradient() {
        let n = 2;
        let k = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let logits_g: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logits_a: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();

        let run = |stop: bool| -> (f64, Vec<f64>) {
            let mut g = Graph::new();
            let lg = g.param(t(&[n, k], &logits_g));
            let la = g.leaf(t(&[n, k], &logits_a));
            let pw = g.softmax_last(lg).unwrap();
            let teacher = if stop { g.detach(pw) } else { pw };
            let pa = g.softmax_last(la).unwrap();
            let ce = cross_entropy_dist(&mut g, teacher, pa).unwrap();
            g.backward(ce).unwrap();
            (
                g.value(ce).item().unwrap(),
                g.grad(lg).map(|v| v.to_vec()).unwrap_or(vec![0.0; n * k]),
            )
        };
        let (v_flow, g_flow) = run(false);
        let (v_stop, g_stop) = run(true);
        assert_eq!(v_flow.to_bits(), v_stop.to_bits());
        assert!(g_stop.iter().all(|&v| v == 0.0));
        assert!(g_flow.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn objective_rejects_group_mismatch() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(vec![1, 3]));
        let groups = vec![g.leaf(Tensor::zeros(vec![1, 3]))];
        let feats = g.leaf(Tensor::zeros(vec![1, 4, 2, 2]));
        let partition = GroupPartition::equal(4, 2).unwrap();
        let weights = LossWeights::new(1.0, 0.05, 1.0, 2).unwrap();
        assert!(sef_objective(
            &mut g, logits, &groups, feats, &[0], &partition, &weights, false
        )
        .is_err());
    }
}
