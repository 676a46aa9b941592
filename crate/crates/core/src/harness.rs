//! The pool-based active-learning loop, the simulated oracle, per-round
//! metrics and multi-seed aggregation.
//!
//! RNG layout per replica seed `s`: `data`, `longtail`, `split` and `model/*`
//! streams are children of `RngStream::new(s)` and are therefore shared by all
//! strategies run with that seed; `strategy/<name>` is private to a strategy.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::acquisition::{
    badge_select, bald_select, calibration_only_select, cluster_round_robin, coreset_select,
    cusal_select_with, entropy_select, least_confident_select, margin_select, random_select,
    two_stage_select, weighted_combo_select, AcquisitionScores, QueryResult, SelectionReason,
    Strategy, Weighting,
};
use crate::calibration::{expected_calibration_error, per_sample_calibration_error};
use crate::config::{DatasetSpec, ExperimentConfig};
use crate::datasets::{load_idx, make_gaussian_mixture, make_longtail, plan_split, Dataset, MixturePosterior};
use crate::error::{Error, Result};
use crate::models::{MlpClassifier, TemperatureScaler};
use crate::numerics::{Matrix, ProbVector, RngStream};

/// Cumulative labeled data with the round each sample was acquired in.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Matrix,
    labels: Vec<usize>,
    acquired: Vec<usize>,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        let acquired = vec![0; labels.len()];
        Ok(Self {
            features,
            labels,
            acquired,
        })
    }

    pub fn extend(&mut self, features: &Matrix, labels: &[usize], round: usize) -> Result<()> {
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        self.features = self.features.vstack(features)?;
        self.labels.extend_from_slice(labels);
        self.acquired.extend(std::iter::repeat_n(round, labels.len()));
        Ok(())
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Round in which each sample joined (0 for the warm-up set).
    pub fn acquired_round(&self) -> &[usize] {
        &self.acquired
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Unlabeled pool. Labels stay private; the only public way to read one is
/// [`PoolSet::oracle_label`], which removes the sample from the pool.
#[derive(Debug, Clone)]
pub struct PoolSet {
    features: Matrix,
    hidden: Vec<usize>,
    revealed: Vec<bool>,
    remaining: Vec<usize>,
}

impl PoolSet {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        let n = labels.len();
        Ok(Self {
            features,
            hidden: labels,
            revealed: vec![false; n],
            remaining: (0..n).collect(),
        })
    }

    /// Number of unrevealed samples.
    pub fn len(&self) -> usize {
        self.remaining.len()
    }

    pub fn is_empty(&self) -> bool {
        self.remaining.is_empty()
    }

    /// Stable ids of unrevealed samples, in ascending order.
    pub fn remaining_ids(&self) -> &[usize] {
        &self.remaining
    }

    /// Features of unrevealed samples, rows aligned with [`Self::remaining_ids`].
    pub fn features(&self) -> Matrix {
        self.features.select_rows(&self.remaining)
    }

    pub fn features_of(&self, ids: &[usize]) -> Matrix {
        self.features.select_rows(ids)
    }

    /// Reveals the labels of `ids` and removes them from the pool.
    pub fn oracle_label(&mut self, ids: &[usize]) -> Result<Vec<usize>> {
        let n = self.hidden.len();
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for &id in ids {
            if id >= n {
                return Err(Error::IndexOutOfBounds { index: id, len: n });
            }
            if self.revealed[id] || !seen.insert(id) {
                return Err(Error::DoubleReveal(id));
            }
        }
        for &id in ids {
            self.revealed[id] = true;
        }
        self.remaining.retain(|&id| !self.revealed[id]);
        Ok(ids.iter().map(|&id| self.hidden[id]).collect())
    }

    /// Labels of unrevealed samples. Evaluation diagnostics only.
    pub(crate) fn hidden_remaining_labels(&self) -> Vec<usize> {
        self.remaining.iter().map(|&id| self.hidden[id]).collect()
    }
}

/// Metrics after one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_labeled: usize,
    pub pool_size: usize,
    pub test_acc: f64,
    pub test_ece: f64,
    /// Diagnostic over hidden pool labels; absent when the pool is empty.
    pub pool_ece: Option<f64>,
    pub mean_pool_cal_estimate: Option<f64>,
    pub n_cal_selected: usize,
    pub n_unc_selected: usize,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    /// Set when the loop stopped before `rounds` because the pool ran dry.
    pub warning: Option<String>,
}

/// Data source resolved once, then materialized per replica.
#[derive(Debug, Clone)]
pub enum PreparedData {
    Fixed(Arc<Dataset>),
    Synthetic(crate::datasets::CalibratedSynthConfig),
}

impl PreparedData {
    /// Loads IDX files (relative paths resolve against `base_dir`).
    pub fn prepare(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Self> {
        match &cfg.dataset {
            DatasetSpec::Synthetic(s) => Ok(PreparedData::Synthetic(s.clone())),
            DatasetSpec::Idx(spec) => {
                let ds = load_idx(base_dir.join(&spec.images), base_dir.join(&spec.labels))?;
                let ds = match spec.limit {
                    Some(limit) if limit < ds.len() => ds.subset(&(0..limit).collect::<Vec<_>>()),
                    _ => ds,
                };
                Ok(PreparedData::Fixed(Arc::new(ds)))
            }
        }
    }

    /// Dataset for one replica seed, with the posterior when synthetic.
    pub fn materialize(
        &self,
        root: &RngStream,
        imbalance_factor: Option<f64>,
    ) -> Result<(Dataset, Option<MixturePosterior>)> {
        let (ds, post) = match self {
            PreparedData::Fixed(ds) => (ds.as_ref().clone(), None),
            PreparedData::Synthetic(s) => {
                let (ds, post) = make_gaussian_mixture(s, &mut root.child("data"))?;
                (ds, Some(post))
            }
        };
        match imbalance_factor {
            Some(f) => Ok((make_longtail(&ds, f, &mut root.child("longtail"))?, post)),
            None => Ok((ds, post)),
        }
    }
}

/// A trained model plus optional temperature.
struct Predictor {
    model: MlpClassifier,
    temperature: Option<TemperatureScaler>,
}

impl Predictor {
    fn proba(&self, x: &Matrix) -> Result<Vec<ProbVector>> {
        match &self.temperature {
            None => self.model.predict_proba(x),
            Some(t) => t.probabilities(&self.model.logits(x)?),
        }
    }
}

fn accuracy(forecasts: &[ProbVector], labels: &[usize]) -> f64 {
    let hits = forecasts.iter().zip(labels).filter(|(f, &y)| f.argmax() == y).count();
    hits as f64 / labels.len() as f64
}

/// State visible to observers after each round's evaluation.
pub(crate) struct RoundView<'a> {
    pub round: usize,
    pub labeled: &'a LabeledSet,
    pub pool: &'a PoolSet,
    pub labeled_forecasts: &'a [ProbVector],
    pub pool_forecasts: &'a [ProbVector],
    pub pool_calibration: &'a [f64],
}

struct Evaluation {
    labeled_forecasts: Vec<ProbVector>,
    pool_forecasts: Vec<ProbVector>,
    pool_calibration: Vec<f64>,
}

struct Loop<'a> {
    cfg: &'a ExperimentConfig,
    strategy: Strategy,
    labeled: LabeledSet,
    pool: PoolSet,
    test: Dataset,
    model_stream: RngStream,
    strategy_rng: RngStream,
    predictor: Predictor,
}

impl<'a> Loop<'a> {
    fn fit(&mut self, round: usize) -> Result<()> {
        let mut train_rng = self.model_stream.child(&format!("round-{round}"));
        let train_cfg = &self.cfg.train;
        if self.strategy == Strategy::LeastConfidentTs {
            let n = self.labeled.len();
            let mut order: Vec<usize> = (0..n).collect();
            self.model_stream.child(&format!("ts-split-{round}")).shuffle(&mut order);
            let n_hold = ((self.cfg.acquisition.ts_holdout * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            if n < 2 {
                return Err(Error::InvalidConfig("temperature scaling needs >= 2 labeled samples".into()));
            }
            let (hold, fit) = order.split_at(n_hold);
            let x_fit = self.labeled.features().select_rows(fit);
            let y_fit: Vec<usize> = fit.iter().map(|&i| self.labeled.labels()[i]).collect();
            self.predictor.model.train(&x_fit, &y_fit, train_cfg, &mut train_rng)?;
            let logits = self.predictor.model.logits(&self.labeled.features().select_rows(hold))?;
            let y_hold: Vec<usize> = hold.iter().map(|&i| self.labeled.labels()[i]).collect();
            self.predictor.temperature = Some(TemperatureScaler::fit(&logits, &y_hold)?);
        } else {
            self.predictor
                .model
                .train(self.labeled.features(), self.labeled.labels(), train_cfg, &mut train_rng)?;
        }
        Ok(())
    }

    fn evaluate(&self, round: usize, counts: (usize, usize), started: Instant) -> Result<(RoundRecord, Evaluation)> {
        let test_forecasts = self.predictor.proba(self.test.features())?;
        let test_acc = accuracy(&test_forecasts, self.test.labels());
        let test_ece = expected_calibration_error(&test_forecasts, self.test.labels(), &self.cfg.ece)?;
        let labeled_forecasts = self.predictor.proba(self.labeled.features())?;
        let (pool_forecasts, pool_calibration, pool_ece, mean_cal) = if self.pool.is_empty() {
            (Vec::new(), Vec::new(), None, None)
        } else {
            let pool_forecasts = self.predictor.proba(&self.pool.features())?;
            let hidden = self.pool.hidden_remaining_labels();
            let pool_ece = expected_calibration_error(&pool_forecasts, &hidden, &self.cfg.ece)?;
            let cal = per_sample_calibration_error(
                &pool_forecasts,
                &labeled_forecasts,
                self.labeled.labels(),
                &self.cfg.calibration,
            )?;
            let mean = cal.iter().sum::<f64>() / cal.len() as f64;
            (pool_forecasts, cal, Some(pool_ece), Some(mean))
        };
        let wallclock_s = if self.cfg.output.wallclock {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let record = RoundRecord {
            round,
            n_labeled: self.labeled.len(),
            pool_size: self.pool.len(),
            test_acc,
            test_ece,
            pool_ece,
            mean_pool_cal_estimate: mean_cal,
            n_cal_selected: counts.0,
            n_unc_selected: counts.1,
            wallclock_s,
        };
        Ok((
            record,
            Evaluation {
                labeled_forecasts,
                pool_forecasts,
                pool_calibration,
            },
        ))
    }

    /// Picks `k` pool positions from the previous round's evaluation.
    fn select(&mut self, eval: &Evaluation, k: usize) -> Result<QueryResult> {
        let m = self.pool.len();
        let k_m = (self.cfg.acquisition.shortlist_factor * k).min(m);
        let scores = || AcquisitionScores::from_forecasts(eval.pool_calibration.clone(), &eval.pool_forecasts);
        let forecasts = &eval.pool_forecasts;
        let tie_digits = self.cfg.acquisition.tie_digits;
        match self.strategy {
            Strategy::Cusal => cusal_select_with(&scores()?, k, tie_digits),
            Strategy::Random => random_select(m, k, &mut self.strategy_rng),
            Strategy::LeastConfident | Strategy::LeastConfidentTs => least_confident_select(forecasts, k),
            Strategy::Margin => margin_select(forecasts, k),
            Strategy::Entropy => entropy_select(forecasts, k),
            Strategy::Bald => {
                let mc = self.predictor.model.mc_dropout_predict(
                    &self.pool.features(),
                    self.cfg.acquisition.mc_samples,
                    &mut self.strategy_rng,
                )?;
                bald_select(&mc, k)
            }
            Strategy::Coreset => {
                let pool_emb = self.predictor.model.penultimate_embedding(&self.pool.features())?;
                let lab_emb = self.predictor.model.penultimate_embedding(self.labeled.features())?;
                coreset_select(&pool_emb, &lab_emb, k)
            }
            Strategy::Badge => {
                let g = self.predictor.model.gradient_embedding(&self.pool.features())?;
                badge_select(&g, k, &mut self.strategy_rng)
            }
            Strategy::CalibrationOnly => calibration_only_select(&scores()?, k),
            Strategy::WeightedUniform => weighted_combo_select(&scores()?, Weighting::Uniform, k),
            Strategy::WeightedAdaptive(kappa) => weighted_combo_select(
                &scores()?,
                Weighting::Adaptive {
                    multiplier: kappa as f64,
                },
                k,
            ),
            Strategy::RandEntropy => {
                let rng = &mut self.strategy_rng;
                two_stage_select(
                    m,
                    k_m,
                    k,
                    |km| random_select(m, km, rng),
                    |short, k| {
                        let sub: Vec<ProbVector> = short.iter().map(|&i| forecasts[i].clone()).collect();
                        entropy_select(&sub, k)
                    },
                )
            }
            Strategy::ClusterMargin | Strategy::ClusterCusal => {
                let emb = self.predictor.model.penultimate_embedding(&self.pool.features())?;
                let first = |km: usize| match self.strategy {
                    Strategy::ClusterMargin => margin_select(forecasts, km),
                    _ => cusal_select_with(&scores()?, km, tie_digits),
                };
                two_stage_select(m, k_m, k, first, |short, k| {
                    cluster_round_robin(&emb.select_rows(short), k)
                })
            }
        }
    }
}

/// Runs one replica and calls `observe` after every round's evaluation.
pub(crate) fn run_with_observer(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    strategy: Strategy,
    seed: u64,
    mut observe: impl FnMut(&RoundView<'_>) -> Result<()>,
) -> Result<ReplicaResult> {
    cfg.validate()?;
    let root = RngStream::new(seed);
    let (ds, _) = data.materialize(&root, cfg.imbalance_factor)?;
    let plan = plan_split(&ds, cfg.warmup_size, cfg.test_fraction, cfg.balanced_warmup, &mut root.child("split"))?;
    if plan.test.is_empty() {
        return Err(Error::EmptyInput("test split is empty"));
    }
    if plan.warmup.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    let model_stream = root.child("model");
    let model = MlpClassifier::new(
        ds.dim(),
        &cfg.model.hidden,
        ds.classes(),
        cfg.model.dropout,
        &mut model_stream.child("init"),
    )?;
    let warm = ds.subset(&plan.warmup);
    let pooled = ds.subset(&plan.pool);
    let mut state = Loop {
        cfg,
        strategy,
        labeled: LabeledSet::new(warm.features().clone(), warm.labels().to_vec())?,
        pool: PoolSet::new(pooled.features().clone(), pooled.labels().to_vec())?,
        test: ds.subset(&plan.test),
        model_stream,
        strategy_rng: root.child(&format!("strategy/{}", strategy.name())),
        predictor: Predictor {
            model,
            temperature: None,
        },
    };

    let k = cfg.query_size;
    let mut records = Vec::with_capacity(cfg.rounds + 1);
    let mut warning = None;
    let started = Instant::now();
    state.fit(0)?;
    let (record, mut eval) = state.evaluate(0, (0, 0), started)?;
    records.push(record);
    observe(&RoundView {
        round: 0,
        labeled: &state.labeled,
        pool: &state.pool,
        labeled_forecasts: &eval.labeled_forecasts,
        pool_forecasts: &eval.pool_forecasts,
        pool_calibration: &eval.pool_calibration,
    })?;

    for t in 1..=cfg.rounds {
        if state.pool.len() < k {
            warning = Some(format!(
                "pool exhausted: {} samples left before round {t}, query size {k}",
                state.pool.len()
            ));
            break;
        }
        let started = Instant::now();
        let query = state.select(&eval, k)?;
        let ids: Vec<usize> = query.indices.iter().map(|&p| state.pool.remaining_ids()[p]).collect();
        let labels = state.pool.oracle_label(&ids)?;
        let features = state.pool.features_of(&ids);
        state.labeled.extend(&features, &labels, t)?;
        state.fit(t)?;
        let counts = if strategy == Strategy::Cusal {
            (
                query.count(SelectionReason::DistinctCalibration),
                query.count(SelectionReason::TieBrokenByUncertainty),
            )
        } else {
            (0, 0)
        };
        let (record, next) = state.evaluate(t, counts, started)?;
        records.push(record);
        eval = next;
        observe(&RoundView {
            round: t,
            labeled: &state.labeled,
            pool: &state.pool,
            labeled_forecasts: &eval.labeled_forecasts,
            pool_forecasts: &eval.pool_forecasts,
            pool_calibration: &eval.pool_calibration,
        })?;
    }
    Ok(ReplicaResult {
        strategy,
        seed,
        records,
        warning,
    })
}

/// One replica of the active-learning loop: train on the warm-up set,
/// evaluate, then `rounds` times query, label, retrain and evaluate.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    strategy: Strategy,
    seed: u64,
) -> Result<ReplicaResult> {
    run_with_observer(cfg, data, strategy, seed, |_| Ok(()))
}

/// Per-sample gap between the hidden-label estimate (pool scored against the
/// labeled set) and the label-revealed estimate (pool labels substituted, with
/// pool ∪ labeled as reference).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapPoint {
    pub round: usize,
    pub n_labeled: usize,
    pub mean_abs_gap: f64,
}

pub fn estimator_gap_study(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    strategy: Strategy,
    seed: u64,
) -> Result<Vec<GapPoint>> {
    let mut curve = Vec::new();
    run_with_observer(cfg, data, strategy, seed, |view| {
        if view.pool.is_empty() {
            return Ok(());
        }
        let mut reference = view.labeled_forecasts.to_vec();
        reference.extend_from_slice(view.pool_forecasts);
        let mut labels = view.labeled.labels().to_vec();
        labels.extend(view.pool.hidden_remaining_labels());
        let revealed = per_sample_calibration_error(view.pool_forecasts, &reference, &labels, &cfg.calibration)?;
        let gap = view
            .pool_calibration
            .iter()
            .zip(&revealed)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / revealed.len() as f64;
        curve.push(GapPoint {
            round: view.round,
            n_labeled: view.labeled.len(),
            mean_abs_gap: gap,
        });
        Ok(())
    })?;
    Ok(curve)
}

/// Sample mean and `n − 1` standard deviation (absent for one sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl MetricStat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundStat {
    pub round: usize,
    pub n_labeled: usize,
    pub test_acc: MetricStat,
    pub test_ece: MetricStat,
    pub pool_ece: Option<MetricStat>,
    pub mean_pool_cal_estimate: Option<MetricStat>,
    pub n_cal_selected: MetricStat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyCurve {
    pub strategy: String,
    pub seeds: Vec<u64>,
    pub rounds: Vec<RoundStat>,
}

/// Two-sided Welch t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchTest {
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's unequal-variance t-test; `None` unless both samples have >= 2 values.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    let (sa, sb) = (MetricStat::of(a)?, MetricStat::of(b)?);
    let (va, vb) = (sa.std?.powi(2), sb.std?.powi(2));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    let diff = sa.mean - sb.mean;
    if se2 == 0.0 {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return Some(WelchTest {
            t_statistic: t,
            df: na + nb - 2.0,
            p_value: p,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Some(WelchTest {
        t_statistic: t,
        df,
        p_value: p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseTest {
    pub metric: String,
    pub round: usize,
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub test: Option<WelchTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub curves: Vec<StrategyCurve>,
    pub tests: Vec<PairwiseTest>,
}

/// Rounds at which pairwise tests are reported: T/4, T/2, 3T/4, T.
pub fn report_rounds(rounds: usize) -> Vec<usize> {
    let mut r = vec![rounds / 4, rounds / 2, 3 * rounds / 4, rounds];
    r.dedup();
    r
}

type Metric = fn(&RoundRecord) -> f64;

/// Per-strategy, per-round statistics across seeds plus Welch tests between
/// every strategy pair on test accuracy and test ECE.
pub fn aggregate(runs: &[ReplicaResult]) -> Result<RunSummary> {
    let mut strategies: Vec<Strategy> = runs.iter().map(|r| r.strategy).collect();
    strategies.sort();
    strategies.dedup();
    let n_rounds = runs.first().map_or(0, |r| r.records.len());
    if let Some(bad) = runs.iter().find(|r| r.records.len() != n_rounds) {
        return Err(Error::MismatchedRuns(format!(
            "{} seed {} has {} rounds, expected {n_rounds}",
            bad.strategy,
            bad.seed,
            bad.records.len()
        )));
    }
    let group = |s: Strategy| -> Vec<&ReplicaResult> { runs.iter().filter(|r| r.strategy == s).collect() };
    let column = |reps: &[&ReplicaResult], t: usize, f: Metric| -> Vec<f64> { reps.iter().map(|r| f(&r.records[t])).collect() };
    let optional = |reps: &[&ReplicaResult], t: usize, f: fn(&RoundRecord) -> Option<f64>| -> Option<MetricStat> {
        let vals: Vec<f64> = reps.iter().filter_map(|r| f(&r.records[t])).collect();
        MetricStat::of(&vals)
    };

    let mut curves = Vec::new();
    for &s in &strategies {
        let reps = group(s);
        let rounds = (0..n_rounds)
            .map(|t| RoundStat {
                round: reps[0].records[t].round,
                n_labeled: reps[0].records[t].n_labeled,
                test_acc: MetricStat::of(&column(&reps, t, |r| r.test_acc)).expect("nonempty group"),
                test_ece: MetricStat::of(&column(&reps, t, |r| r.test_ece)).expect("nonempty group"),
                pool_ece: optional(&reps, t, |r| r.pool_ece),
                mean_pool_cal_estimate: optional(&reps, t, |r| r.mean_pool_cal_estimate),
                n_cal_selected: MetricStat::of(&column(&reps, t, |r| r.n_cal_selected as f64)).expect("nonempty group"),
            })
            .collect();
        curves.push(StrategyCurve {
            strategy: s.name(),
            seeds: reps.iter().map(|r| r.seed).collect(),
            rounds,
        });
    }

    let mut tests = Vec::new();
    if n_rounds > 0 {
        let last = n_rounds - 1;
        let metrics: [(&str, Metric); 2] = [("test_acc", |r| r.test_acc), ("test_ece", |r| r.test_ece)];
        for t in report_rounds(last) {
            for (metric, f) in metrics {
                for (i, &a) in strategies.iter().enumerate() {
                    for &b in &strategies[i + 1..] {
                        let (xa, xb) = (column(&group(a), t, f), column(&group(b), t, f));
                        tests.push(PairwiseTest {
                            metric: metric.to_string(),
                            round: t,
                            a: a.name(),
                            b: b.name(),
                            mean_a: xa.iter().sum::<f64>() / xa.len() as f64,
                            mean_b: xb.iter().sum::<f64>() / xb.len() as f64,
                            test: welch_t_test(&xa, &xb),
                        });
                    }
                }
            }
        }
    }
    Ok(RunSummary { curves, tests })
}
