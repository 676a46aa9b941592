//! Dirichlet-kernel calibration-error estimation and binned ECE.
//!
//! The conditional label expectation `E[Y | h(x)]` is estimated by kernel
//! regression of one-hot labels onto forecasts, with each labeled forecast
//! acting as the center of a Dirichlet density of concentration
//! `h(x_i) / b + 1`. All kernel sums stay in log space until the final
//! ratio; with `b = 0.001` and ten classes the concentrations reach ~1000
//! and the direct-space normalizer overflows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ln_gamma, logsumexp_unchecked, Matrix, ProbVector};

/// Estimator hyperparameters. `p` is the norm exponent; outputs are `CE_p^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub p: u32,
    pub bandwidth: f64,
    pub denominator_floor: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            p: 1,
            bandwidth: 0.001,
            denominator_floor: 1e-10,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 1 {
            return Err(Error::InvalidConfig("calibration.p must be >= 1".into()));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::InvalidConfig("calibration.bandwidth must be > 0".into()));
        }
        if !(self.denominator_floor > 0.0) || !self.denominator_floor.is_finite() {
            return Err(Error::InvalidConfig(
                "calibration.denominator_floor must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Dirichlet kernel on the simplex with bandwidth `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletKernel {
    bandwidth: f64,
}

/// A kernel center with its concentration and log normalizer precomputed.
#[derive(Debug, Clone)]
struct KernelCenter {
    log_norm: f64,
    alpha_minus_one: Vec<f64>,
}

impl DirichletKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Concentration `center / b + 1`.
    pub fn concentration(&self, center: &ProbVector) -> Vec<f64> {
        center
            .as_slice()
            .iter()
            .map(|c| c / self.bandwidth + 1.0)
            .collect()
    }

    fn center(&self, center: &ProbVector) -> KernelCenter {
        let alpha = self.concentration(center);
        let total: f64 = alpha.iter().sum();
        let log_norm = ln_gamma(total) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
        KernelCenter {
            log_norm,
            alpha_minus_one: alpha.into_iter().map(|a| a - 1.0).collect(),
        }
    }

    /// `ln k(target; center)`.
    pub fn log_density(&self, target: &ProbVector, center: &ProbVector) -> Result<f64> {
        if target.len() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                got: target.len(),
            });
        }
        let c = self.center(center);
        let log_target: Vec<f64> = target.as_slice().iter().map(|t| t.ln()).collect();
        Ok(c.eval(&log_target))
    }
}

impl KernelCenter {
    fn eval(&self, log_target: &[f64]) -> f64 {
        self.log_norm
            + self
                .alpha_minus_one
                .iter()
                .zip(log_target)
                .map(|(a, l)| a * l)
                .sum::<f64>()
    }
}

/// `ln k(target; center)` for a Dirichlet kernel of bandwidth `bandwidth`.
pub fn dirichlet_log_kernel(target: &ProbVector, center: &ProbVector, bandwidth: f64) -> Result<f64> {
    DirichletKernel::new(bandwidth)?.log_density(target, center)
}

fn check_inputs(
    pool: &[ProbVector],
    labeled: &[ProbVector],
    labels: &[usize],
    cfg: &CalibrationConfig,
) -> Result<usize> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    if labeled.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labeled.len(),
            got: labels.len(),
        });
    }
    let k = labeled[0].len();
    for f in labeled.iter().chain(pool) {
        if f.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: f.len(),
            });
        }
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok(k)
}

/// Kernel-regression estimate of `E[Y | h(x_j)]` for every pool forecast.
///
/// Row `j` is `Σ_i k(h_j; h_i) onehot(y_i) / max(Σ_i k(h_j; h_i), floor)`.
/// Per-class numerators are log-sum-exps over the matching labeled points;
/// the floor is applied to the log denominator, which is the same as
/// flooring in direct space but cannot overflow.
pub fn conditional_expectation_estimate(
    pool_forecasts: &[ProbVector],
    labeled_forecasts: &[ProbVector],
    labels: &[usize],
    cfg: &CalibrationConfig,
) -> Result<Matrix> {
    let k = check_inputs(pool_forecasts, labeled_forecasts, labels, cfg)?;
    let kernel = DirichletKernel::new(cfg.bandwidth)?;
    let centers: Vec<KernelCenter> = labeled_forecasts.iter().map(|f| kernel.center(f)).collect();
    let log_floor = cfg.denominator_floor.ln();

    let rows: Vec<Vec<f64>> = pool_forecasts
        .par_iter()
        .map(|target| {
            let log_target: Vec<f64> = target.as_slice().iter().map(|t| t.ln()).collect();
            let log_kern: Vec<f64> = centers.iter().map(|c| c.eval(&log_target)).collect();
            let log_den = logsumexp_unchecked(&log_kern).max(log_floor);
            let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); k];
            for (lk, &y) in log_kern.iter().zip(labels) {
                per_class[y].push(*lk);
            }
            per_class
                .iter()
                .map(|terms| {
                    if terms.is_empty() {
                        0.0
                    } else {
                        (logsumexp_unchecked(terms) - log_den).exp()
                    }
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    Matrix::from_vec(pool_forecasts.len(), k, rows.concat())
}

/// Estimated `CE_p(h(x_j))^p` for each pool forecast, using the labeled set as reference.
pub fn per_sample_calibration_error(
    pool_forecasts: &[ProbVector],
    labeled_forecasts: &[ProbVector],
    labels: &[usize],
    cfg: &CalibrationConfig,
) -> Result<Vec<f64>> {
    let ratios = conditional_expectation_estimate(pool_forecasts, labeled_forecasts, labels, cfg)?;
    Ok(ratios
        .iter_rows()
        .zip(pool_forecasts)
        .map(|(ratio, f)| lp_power(ratio, f.as_slice(), cfg.p))
        .collect())
}

pub(crate) fn lp_power(a: &[f64], b: &[f64], p: u32) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().powi(p as i32))
        .sum()
}

/// Dataset-level `CE_p^p` estimate; every sample is also part of its own reference set.
pub fn canonical_ce_estimate(
    forecasts: &[ProbVector],
    labels: &[usize],
    cfg: &CalibrationConfig,
) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    let per = per_sample_calibration_error(forecasts, forecasts, labels, cfg)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Binning for the expected calibration error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EceConfig {
    pub n_bins: usize,
}

impl Default for EceConfig {
    fn default() -> Self {
        Self { n_bins: 10 }
    }
}

impl EceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::InvalidConfig("ece.n_bins must be >= 1".into()));
        }
        Ok(())
    }
}

/// Equal-width binned ECE over max-class confidence.
pub fn expected_calibration_error(
    forecasts: &[ProbVector],
    labels: &[usize],
    cfg: &EceConfig,
) -> Result<f64> {
    if forecasts.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: forecasts.len(),
            got: labels.len(),
        });
    }
    let confidences: Vec<f64> = forecasts.iter().map(ProbVector::confidence).collect();
    let correct: Vec<bool> = forecasts
        .iter()
        .zip(labels)
        .map(|(f, &y)| f.argmax() == y)
        .collect();
    binned_ece(&confidences, &correct, cfg)
}

/// ECE from raw confidences and correctness flags. Bins are `[i/B, (i+1)/B)`,
/// except the last which also holds confidence 1.
pub fn binned_ece(confidences: &[f64], correct: &[bool], cfg: &EceConfig) -> Result<f64> {
    cfg.validate()?;
    if confidences.is_empty() {
        return Err(Error::EmptyInput("ECE needs at least one sample"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::DimensionMismatch {
            expected: confidences.len(),
            got: correct.len(),
        });
    }
    let bins = cfg.n_bins;
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        conf_sum[b] += c;
        counts[b] += 1;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    let ece = (0..bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| {
            let cnt = counts[b] as f64;
            (cnt / n) * (conf_sum[b] / cnt - hits[b] as f64 / cnt).abs()
        })
        .sum();
    Ok(ece)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn log_kernel_wide_bandwidth_is_uniform() {
        let v = dirichlet_log_kernel(&pv(&[0.2, 0.8]), &pv(&[0.9, 0.1]), 1e9).unwrap();
        assert!(v.abs() < 1e-8, "{v}");
    }

    #[test]
    fn log_kernel_symmetric_two_class() {
        // ln Γ(3) − 2 ln Γ(1.5) + 0.5 (ln 0.5 + ln 0.5), mpmath
        let v = dirichlet_log_kernel(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5]), 1.0).unwrap();
        assert!((v - 0.241_564_475_270_490_44).abs() < 1e-12, "{v}");
    }

    #[test]
    fn log_kernel_three_class_reference() {
        // mpmath, 50 digits
        let v = dirichlet_log_kernel(&pv(&[0.5, 0.25, 0.25]), &pv(&[0.6, 0.3, 0.1]), 0.1).unwrap();
        assert!((v - 1.912_143_286_584_495_9).abs() < 1e-12, "{v}");
    }

    #[test]
    fn log_kernel_dimension_mismatch() {
        assert!(matches!(
            dirichlet_log_kernel(&pv(&[0.5, 0.5]), &pv(&[0.2, 0.3, 0.5]), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(dirichlet_log_kernel(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5]), 0.0).is_err());
    }

    #[test]
    fn single_point_ratio_is_onehot() {
        let f = pv(&[0.7, 0.3]);
        let cfg = CalibrationConfig::default();
        let rows = conditional_expectation_estimate(&[f.clone()], &[f.clone()], &[0], &cfg).unwrap();
        assert!((rows.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(rows.get(0, 1), 0.0);
        let ce = per_sample_calibration_error(&[f.clone()], &[f.clone()], &[0], &cfg).unwrap();
        assert!((ce[0] - 0.6).abs() < 1e-12);
        let canon = canonical_ce_estimate(&[f], &[0], &cfg).unwrap();
        assert!((canon - 0.6).abs() < 1e-12);
    }

    #[test]
    fn identical_cluster_gives_empirical_frequency() {
        let f = pv(&[0.7, 0.3]);
        let labeled = vec![f.clone(); 10];
        let labels = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1];
        let cfg = CalibrationConfig::default();
        let rows = conditional_expectation_estimate(&[f.clone()], &labeled, &labels, &cfg).unwrap();
        assert!((rows.get(0, 0) - 0.7).abs() < 1e-12);
        assert!((rows.get(0, 1) - 0.3).abs() < 1e-12);
        let ce = per_sample_calibration_error(&[f.clone()], &labeled, &labels, &cfg).unwrap();
        assert!(ce[0].abs() < 1e-12);
        let canon = canonical_ce_estimate(&labeled, &labels, &cfg).unwrap();
        assert!(canon.abs() < 1e-12);
    }

    #[test]
    fn empty_labeled_set_rejected() {
        let cfg = CalibrationConfig::default();
        let err = conditional_expectation_estimate(&[pv(&[0.5, 0.5])], &[], &[], &cfg).unwrap_err();
        assert_eq!(err.to_string(), "empty labeled set");
        assert!(canonical_ce_estimate(&[], &[], &cfg).is_err());
        assert!(matches!(
            per_sample_calibration_error(&[pv(&[0.5, 0.5])], &[pv(&[0.5, 0.5])], &[2], &cfg),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn far_pool_point_hits_floor() {
        // With b = 0.001 the kernel mass at a distant forecast underflows; the
        // floored denominator drives the ratio to zero and CE_1 to 1.
        let cfg = CalibrationConfig::default();
        let labeled = [pv(&[0.99, 0.01])];
        let ce = per_sample_calibration_error(&[pv(&[0.01, 0.99])], &labeled, &[0], &cfg).unwrap();
        assert!((ce[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ece_examples() {
        let cfg = EceConfig::default();
        assert_eq!(binned_ece(&[1.0, 1.0], &[true, true], &cfg).unwrap(), 0.0);
        assert_eq!(
            binned_ece(&[1.0, 1.0, 1.0, 1.0], &[true, false, true, false], &cfg).unwrap(),
            0.5
        );
        let v = binned_ece(&[0.55, 0.65, 0.95, 0.95], &[true, false, true, true], &cfg).unwrap();
        assert!((v - 0.30).abs() < 1e-12, "{v}");
        assert!(binned_ece(&[], &[], &cfg).is_err());
        assert!(binned_ece(&[0.5], &[true], &EceConfig { n_bins: 0 }).is_err());
    }

    #[test]
    fn ece_from_forecasts() {
        let forecasts = [pv(&[0.55, 0.45]), pv(&[0.65, 0.35]), pv(&[0.05, 0.95]), pv(&[0.95, 0.05])];
        let labels = [0, 1, 1, 0];
        let v = expected_calibration_error(&forecasts, &labels, &EceConfig::default()).unwrap();
        assert!((v - 0.30).abs() < 1e-12);
    }

    fn random_forecasts(rng: &mut RngStream, n: usize, k: usize) -> Vec<ProbVector> {
        (0..n)
            .map(|_| ProbVector::new((0..k).map(|_| -rng.uniform().max(1e-300).ln()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn per_sample_invariant_to_labeled_permutation() {
        let mut rng = RngStream::new(3);
        let labeled = random_forecasts(&mut rng, 25, 3);
        let labels: Vec<usize> = (0..25).map(|_| rng.below(3)).collect();
        let pool = random_forecasts(&mut rng, 8, 3);
        let cfg = CalibrationConfig { bandwidth: 0.1, ..Default::default() };
        let base = per_sample_calibration_error(&pool, &labeled, &labels, &cfg).unwrap();
        let mut order: Vec<usize> = (0..25).collect();
        rng.shuffle(&mut order);
        let pl: Vec<ProbVector> = order.iter().map(|&i| labeled[i].clone()).collect();
        let py: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let perm = per_sample_calibration_error(&pool, &pl, &py, &cfg).unwrap();
        for (a, b) in base.iter().zip(&perm) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_equals_mean_of_self_referenced_per_sample() {
        let mut rng = RngStream::new(11);
        let f = random_forecasts(&mut rng, 30, 3);
        let y: Vec<usize> = (0..30).map(|_| rng.below(3)).collect();
        let cfg = CalibrationConfig { bandwidth: 0.05, ..Default::default() };
        let per = per_sample_calibration_error(&f, &f, &y, &cfg).unwrap();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert_eq!(canonical_ce_estimate(&f, &y, &cfg).unwrap(), mean);
    }

    proptest! {
        #[test]
        fn ece_bounded_and_permutation_invariant(
            rows in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
            seed in any::<u64>(),
        ) {
            let (conf, ok): (Vec<f64>, Vec<bool>) = rows.iter().copied().unzip();
            let cfg = EceConfig::default();
            let e = binned_ece(&conf, &ok, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let mut order: Vec<usize> = (0..conf.len()).collect();
            RngStream::new(seed).shuffle(&mut order);
            let pc: Vec<f64> = order.iter().map(|&i| conf[i]).collect();
            let po: Vec<bool> = order.iter().map(|&i| ok[i]).collect();
            let e2 = binned_ece(&pc, &po, &cfg).unwrap();
            prop_assert!((e - e2).abs() < 1e-12);
        }
    }
}
