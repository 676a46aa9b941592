//! Acquisition functions: calibrated uncertainty sampling plus baselines.
//!
//! Every selector returns pool positions (indices into the current pool
//! arrays). Deterministic selectors break remaining ties by ascending index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix, ProbVector, RngStream};

/// Per-sample scores over the pool: estimated calibration error (first key)
/// and max-class confidence (second key).
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionScores {
    calibration: Vec<f64>,
    confidence: Vec<f64>,
    pub strategy_aux: Option<Vec<f64>>,
}

impl AcquisitionScores {
    pub fn new(calibration: Vec<f64>, confidence: Vec<f64>) -> Result<Self> {
        if calibration.len() != confidence.len() {
            return Err(Error::DimensionMismatch {
                expected: calibration.len(),
                got: confidence.len(),
            });
        }
        if calibration.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidConfig("calibration scores must be finite and >= 0".into()));
        }
        if confidence.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            return Err(Error::InvalidConfig("confidence scores must lie in (0, 1]".into()));
        }
        Ok(Self {
            calibration,
            confidence,
            strategy_aux: None,
        })
    }

    /// Scores from per-sample calibration estimates and the pool forecasts.
    pub fn from_forecasts(calibration: Vec<f64>, forecasts: &[ProbVector]) -> Result<Self> {
        Self::new(calibration, forecasts.iter().map(ProbVector::confidence).collect())
    }

    pub fn calibration(&self) -> &[f64] {
        &self.calibration
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn len(&self) -> usize {
        self.calibration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calibration.is_empty()
    }

    /// Restriction to the given positions, in order.
    pub fn subset(&self, positions: &[usize]) -> AcquisitionScores {
        AcquisitionScores {
            calibration: positions.iter().map(|&i| self.calibration[i]).collect(),
            confidence: positions.iter().map(|&i| self.confidence[i]).collect(),
            strategy_aux: self
                .strategy_aux
                .as_ref()
                .map(|aux| positions.iter().map(|&i| aux[i]).collect()),
        }
    }
}

/// Why a sample ended up in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionReason {
    DistinctCalibration,
    TieBrokenByUncertainty,
    StrategySpecific,
}

/// A batch of distinct pool positions.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub indices: Vec<usize>,
    pub reasons: Vec<SelectionReason>,
    /// Set when a selector fell back to uniform sampling.
    pub fell_back_to_random: bool,
}

impl QueryResult {
    fn strategy_specific(indices: Vec<usize>) -> Self {
        let reasons = vec![SelectionReason::StrategySpecific; indices.len()];
        Self {
            indices,
            reasons,
            fell_back_to_random: false,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn count(&self, reason: SelectionReason) -> usize {
        self.reasons.iter().filter(|&&r| r == reason).count()
    }
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k > m {
        return Err(Error::BatchTooLarge { k, available: m });
    }
    Ok(())
}

/// Indices of the `k` largest scores, ties to the lower index.
fn top_k_desc(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Rounds to `digits` significant decimal digits.
pub fn round_significant(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = digits.clamp(1, 17) as usize;
    format!("{:.*e}", digits - 1, x).parse().expect("formatted float parses")
}

/// Significant digits used to decide that two calibration scores are equal.
pub const DEFAULT_TIE_DIGITS: u32 = 12;

/// Lexicographic selection: highest calibration error first, lowest confidence among
/// calibration ties, then lowest index.
pub fn cusal_select(scores: &AcquisitionScores, k: usize) -> Result<QueryResult> {
    cusal_select_with(scores, k, DEFAULT_TIE_DIGITS)
}

/// [`cusal_select`] with an explicit tie grain.
///
/// A selected sample is tagged [`SelectionReason::TieBrokenByUncertainty`] when its
/// rounded calibration score is shared by at least one other pool sample, so the
/// confidence key took part in ranking it.
pub fn cusal_select_with(scores: &AcquisitionScores, k: usize, tie_digits: u32) -> Result<QueryResult> {
    let m = scores.len();
    check_k(k, m)?;
    let rounded: Vec<f64> = scores
        .calibration
        .iter()
        .map(|&c| round_significant(c, tie_digits))
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        rounded[b]
            .total_cmp(&rounded[a])
            .then(scores.confidence[a].total_cmp(&scores.confidence[b]))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    let reasons = order
        .iter()
        .map(|&i| {
            let shared = rounded
                .iter()
                .enumerate()
                .any(|(j, &r)| j != i && r == rounded[i]);
            if shared {
                SelectionReason::TieBrokenByUncertainty
            } else {
                SelectionReason::DistinctCalibration
            }
        })
        .collect();
    Ok(QueryResult {
        indices: order,
        reasons,
        fell_back_to_random: false,
    })
}

/// `k` distinct uniform positions out of `m`.
pub fn random_select(m: usize, k: usize, rng: &mut RngStream) -> Result<QueryResult> {
    check_k(k, m)?;
    Ok(QueryResult::strategy_specific(rng.choose_distinct(m, k)))
}

/// Smallest max-class probability first.
pub fn least_confident_select(forecasts: &[ProbVector], k: usize) -> Result<QueryResult> {
    check_k(k, forecasts.len())?;
    // Sort on confidence itself: `1 − c` can merge distinct small confidences.
    let neg_conf: Vec<f64> = forecasts.iter().map(|f| -f.confidence()).collect();
    Ok(QueryResult::strategy_specific(top_k_desc(&neg_conf, k)))
}

/// Gap between the two largest class probabilities.
pub fn margin(forecast: &ProbVector) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in forecast.as_slice() {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    first - second
}

/// Smallest top-two margin first.
pub fn margin_select(forecasts: &[ProbVector], k: usize) -> Result<QueryResult> {
    check_k(k, forecasts.len())?;
    let neg: Vec<f64> = forecasts.iter().map(|f| -margin(f)).collect();
    Ok(QueryResult::strategy_specific(top_k_desc(&neg, k)))
}

/// Largest predictive entropy first.
pub fn entropy_select(forecasts: &[ProbVector], k: usize) -> Result<QueryResult> {
    check_k(k, forecasts.len())?;
    let h: Vec<f64> = forecasts.iter().map(ProbVector::entropy).collect();
    Ok(QueryResult::strategy_specific(top_k_desc(&h, k)))
}

/// Mutual information between prediction and weights from MC-dropout samples
/// `[sample][pool row]`: `H[mean_s p] − mean_s H[p_s]`.
pub fn bald_scores(mc_forecasts: &[Vec<ProbVector>]) -> Result<Vec<f64>> {
    let s = mc_forecasts.len();
    if s < 2 {
        return Err(Error::InvalidConfig("BALD needs at least two MC samples".into()));
    }
    let m = mc_forecasts[0].len();
    if let Some(bad) = mc_forecasts.iter().find(|slice| slice.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: bad.len(),
        });
    }
    let scores = (0..m)
        .map(|j| {
            let k = mc_forecasts[0][j].len();
            let mut mean = vec![0.0; k];
            let mut expected_entropy = 0.0;
            for slice in mc_forecasts {
                for (acc, p) in mean.iter_mut().zip(slice[j].as_slice()) {
                    *acc += p / s as f64;
                }
                expected_entropy += slice[j].entropy() / s as f64;
            }
            let h_mean: f64 = -mean.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            // Jensen gap is nonnegative; clamp the rounding residue.
            (h_mean - expected_entropy).max(0.0)
        })
        .collect();
    Ok(scores)
}

pub fn bald_select(mc_forecasts: &[Vec<ProbVector>], k: usize) -> Result<QueryResult> {
    let scores = bald_scores(mc_forecasts)?;
    check_k(k, scores.len())?;
    Ok(QueryResult::strategy_specific(top_k_desc(&scores, k)))
}

/// k-center greedy over Euclidean embeddings. With no labeled embeddings the
/// first pick is position 0.
pub fn coreset_select(embeddings: &Matrix, labeled_embeddings: &Matrix, k: usize) -> Result<QueryResult> {
    let m = embeddings.rows();
    check_k(k, m)?;
    if labeled_embeddings.rows() > 0 && labeled_embeddings.cols() != embeddings.cols() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.cols(),
            got: labeled_embeddings.cols(),
        });
    }
    let mut min_d: Vec<f64> = (0..m)
        .map(|j| {
            labeled_embeddings
                .iter_rows()
                .map(|c| squared_distance(embeddings.row(j), c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; m];
    while chosen.len() < k {
        let pick = if labeled_embeddings.rows() == 0 && chosen.is_empty() {
            0
        } else {
            let mut best = None;
            for j in 0..m {
                if taken[j] {
                    continue;
                }
                match best {
                    None => best = Some(j),
                    Some(b) if min_d[j] > min_d[b] => best = Some(j),
                    _ => {}
                }
            }
            best.expect("k <= m leaves a candidate")
        };
        taken[pick] = true;
        chosen.push(pick);
        let center = embeddings.row(pick);
        for j in 0..m {
            let d = squared_distance(embeddings.row(j), center);
            if d < min_d[j] {
                min_d[j] = d;
            }
        }
    }
    Ok(QueryResult::strategy_specific(chosen))
}

/// k-means++ seeding in gradient-embedding space: the first pick is drawn
/// proportionally to squared norm, later picks to squared distance to the
/// nearest pick. All-zero embeddings fall back to uniform sampling.
pub fn badge_select(grad_embeddings: &Matrix, k: usize, rng: &mut RngStream) -> Result<QueryResult> {
    let m = grad_embeddings.rows();
    check_k(k, m)?;
    let norms: Vec<f64> = grad_embeddings
        .iter_rows()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();
    if k > 0 && norms.iter().all(|&n| n == 0.0) {
        let mut res = random_select(m, k, rng)?;
        res.fell_back_to_random = true;
        return Ok(res);
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; m];
    let mut weights = norms;
    while chosen.len() < k {
        let pick = match rng.weighted_index(&weights) {
            Some(i) => i,
            None => {
                // Remaining points coincide with picks; draw uniformly among them.
                let free: Vec<usize> = (0..m).filter(|&j| !taken[j]).collect();
                free[rng.below(free.len())]
            }
        };
        taken[pick] = true;
        chosen.push(pick);
        let center = grad_embeddings.row(pick).to_vec();
        for j in 0..m {
            if taken[j] {
                weights[j] = 0.0;
                continue;
            }
            let d = squared_distance(grad_embeddings.row(j), &center);
            if chosen.len() == 1 || d < weights[j] {
                weights[j] = d;
            }
        }
    }
    Ok(QueryResult::strategy_specific(chosen))
}

/// Two-stage selection: `first` shortlists `k_m` positions of the pool, then
/// `second` picks `k` positions within the shortlist (positions relative to it).
pub fn two_stage_select<F, S>(m: usize, k_m: usize, k: usize, first: F, second: S) -> Result<QueryResult>
where
    F: FnOnce(usize) -> Result<QueryResult>,
    S: FnOnce(&[usize], usize) -> Result<QueryResult>,
{
    if k > k_m {
        return Err(Error::BatchTooLarge { k, available: k_m });
    }
    check_k(k_m, m)?;
    let shortlist = first(k_m)?;
    let inner = second(&shortlist.indices, k)?;
    let indices = inner.indices.iter().map(|&i| shortlist.indices[i]).collect();
    Ok(QueryResult {
        indices,
        reasons: inner.reasons,
        fell_back_to_random: shortlist.fell_back_to_random || inner.fell_back_to_random,
    })
}

/// Average-linkage agglomerative clustering into `n_clusters` groups.
/// Returns clusters as sorted member lists, ordered by their smallest member.
pub fn average_linkage(points: &Matrix, n_clusters: usize) -> Vec<Vec<usize>> {
    let n = points.rows();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    if n == 0 || n_clusters == 0 {
        return Vec::new();
    }
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| squared_distance(points.row(i), points.row(j)).sqrt())
                .collect()
        })
        .collect();
    // Pairwise average-linkage distance between current clusters.
    let mut link: Vec<Vec<f64>> = dist.clone();
    while clusters.len() > n_clusters {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                if link[a][b] < best.2 {
                    best = (a, b, link[a][b]);
                }
            }
        }
        let (a, b, _) = best;
        let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
        for c in 0..clusters.len() {
            if c != a && c != b {
                let merged = (na * link[a][c] + nb * link[b][c]) / (na + nb);
                link[a][c] = merged;
                link[c][a] = merged;
            }
        }
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort_unstable();
        link.remove(b);
        for row in &mut link {
            row.remove(b);
        }
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Diversity stage of the cluster variants: cluster the shortlist embeddings into
/// `k` groups, then take one member per cluster round-robin starting from the
/// smallest cluster. Within a cluster the member with the best first-stage rank
/// (earliest in `ranked`) is taken. Returns positions into `ranked`.
pub fn cluster_round_robin(ranked_embeddings: &Matrix, k: usize) -> Result<QueryResult> {
    let n = ranked_embeddings.rows();
    check_k(k, n)?;
    let mut clusters = average_linkage(ranked_embeddings, k);
    clusters.sort_by(|a, b| a.len().cmp(&b.len()).then(a[0].cmp(&b[0])));
    let mut cursors = vec![0usize; clusters.len()];
    let mut chosen = Vec::with_capacity(k);
    while chosen.len() < k {
        let mut progressed = false;
        for (c, members) in clusters.iter().enumerate() {
            if chosen.len() == k {
                break;
            }
            if cursors[c] < members.len() {
                chosen.push(members[cursors[c]]);
                cursors[c] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(QueryResult::strategy_specific(chosen))
}

/// How calibration and uncertainty are blended in [`weighted_combo_select`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `(cal + unc) / 2`.
    Uniform,
    /// `(κ α cal + unc) / (κ α + 1)` with `α` the pool-mean calibration clamped to `[0, 1]`.
    Adaptive { multiplier: f64 },
}

pub fn weighted_combo_scores(scores: &AcquisitionScores, weighting: Weighting) -> Vec<f64> {
    let unc = scores.confidence.iter().map(|c| 1.0 - c);
    match weighting {
        Weighting::Uniform => scores
            .calibration
            .iter()
            .zip(unc)
            .map(|(c, u)| (c + u) / 2.0)
            .collect(),
        Weighting::Adaptive { multiplier } => {
            let m = scores.len().max(1) as f64;
            let alpha = (scores.calibration.iter().sum::<f64>() / m).clamp(0.0, 1.0);
            let w = multiplier * alpha;
            scores
                .calibration
                .iter()
                .zip(unc)
                .map(|(c, u)| (w * c + u) / (w + 1.0))
                .collect()
        }
    }
}

pub fn weighted_combo_select(
    scores: &AcquisitionScores,
    weighting: Weighting,
    k: usize,
) -> Result<QueryResult> {
    check_k(k, scores.len())?;
    Ok(QueryResult::strategy_specific(top_k_desc(
        &weighted_combo_scores(scores, weighting),
        k,
    )))
}

/// Largest calibration score first, ignoring confidence.
pub fn calibration_only_select(scores: &AcquisitionScores, k: usize) -> Result<QueryResult> {
    check_k(k, scores.len())?;
    Ok(QueryResult::strategy_specific(top_k_desc(&scores.calibration, k)))
}

/// Named strategies available to the experiment loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Cusal,
    Random,
    LeastConfident,
    LeastConfidentTs,
    Margin,
    Entropy,
    Bald,
    Coreset,
    Badge,
    CalibrationOnly,
    WeightedUniform,
    /// Adaptive weighting with integer multiplier κ.
    WeightedAdaptive(u8),
    RandEntropy,
    ClusterMargin,
    ClusterCusal,
}

impl Strategy {
    pub const ALL: [Strategy; 17] = [
        Strategy::Cusal,
        Strategy::Random,
        Strategy::LeastConfident,
        Strategy::LeastConfidentTs,
        Strategy::Margin,
        Strategy::Entropy,
        Strategy::Bald,
        Strategy::Coreset,
        Strategy::Badge,
        Strategy::CalibrationOnly,
        Strategy::WeightedUniform,
        Strategy::WeightedAdaptive(1),
        Strategy::WeightedAdaptive(2),
        Strategy::WeightedAdaptive(3),
        Strategy::RandEntropy,
        Strategy::ClusterMargin,
        Strategy::ClusterCusal,
    ];

    pub fn name(&self) -> String {
        match self {
            Strategy::Cusal => "cusal".into(),
            Strategy::Random => "random".into(),
            Strategy::LeastConfident => "least-confident".into(),
            Strategy::LeastConfidentTs => "least-confident-ts".into(),
            Strategy::Margin => "margin".into(),
            Strategy::Entropy => "entropy".into(),
            Strategy::Bald => "bald".into(),
            Strategy::Coreset => "coreset".into(),
            Strategy::Badge => "badge".into(),
            Strategy::CalibrationOnly => "calibration-only".into(),
            Strategy::WeightedUniform => "weighted-uniform".into(),
            Strategy::WeightedAdaptive(k) => format!("weighted-adaptive-{k}"),
            Strategy::RandEntropy => "rand-entropy".into(),
            Strategy::ClusterMargin => "cluster-margin".into(),
            Strategy::ClusterCusal => "cluster-cusal".into(),
        }
    }

    pub fn parse(name: &str) -> Option<Strategy> {
        Strategy::ALL.iter().copied().find(|s| s.name() == name)
    }

    /// Whether the strategy needs the calibration estimator each round.
    pub fn uses_calibration(&self) -> bool {
        matches!(
            self,
            Strategy::Cusal
                | Strategy::CalibrationOnly
                | Strategy::WeightedUniform
                | Strategy::WeightedAdaptive(_)
                | Strategy::ClusterCusal
        )
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}
