//! Exact-match accuracy, α/β error rates and k-fold cross-validation.
//!
//! * accuracy: fraction of samples whose whole 10×10 prediction equals the truth
//! * α error: a wrong prediction that is itself CFMT (it would pass unnoticed);
//!   the α rate divides by the number of CFMT predictions
//! * β error: a wrong prediction for a CFMT truth (a good sheet sent to manual
//!   review); the β rate divides by the number of CFMT truths
//!
//! One pair can be an α and a β error at the same time.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::label::GridLabel;
use crate::rng::{self, tag};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty set of predictions")]
    Empty,
    #[error("cannot split {n} samples into {k} folds (need n >= k >= 2)")]
    Folds { n: usize, k: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("fold {fold}: expected {expected} predictions, got {got}")]
    PredictionCount { fold: usize, expected: usize, got: usize },
}

/// 1 when all 100 cells agree.
pub fn exact_match(y: &GridLabel, yhat: &GridLabel) -> u8 {
    u8::from(y == yhat)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub exact: usize,
    pub predicted_cfmt: usize,
    pub alpha_errors: usize,
    pub truth_cfmt: usize,
    pub beta_errors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub acc: f64,
    pub alpha_rate: f64,
    pub beta_rate: f64,
    pub counts: EvalCounts,
    /// No prediction was CFMT; `alpha_rate` is reported as 0.
    pub alpha_undefined: bool,
    /// No truth was CFMT; `beta_rate` is reported as 0.
    pub beta_undefined: bool,
}

impl EvalReport {
    pub fn from_counts(n: usize, counts: EvalCounts) -> Self {
        let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Self {
            n,
            acc: rate(counts.exact, n),
            alpha_rate: rate(counts.alpha_errors, counts.predicted_cfmt),
            beta_rate: rate(counts.beta_errors, counts.truth_cfmt),
            counts,
            alpha_undefined: counts.predicted_cfmt == 0,
            beta_undefined: counts.truth_cfmt == 0,
        }
    }
}

/// Scores `(truth, prediction)` pairs.
pub fn evaluate<'a, I>(pairs: I) -> Result<EvalReport, EvalError>
where
    I: IntoIterator<Item = (&'a GridLabel, &'a GridLabel)>,
{
    let mut counts = EvalCounts::default();
    let mut n = 0;
    for (y, yhat) in pairs {
        n += 1;
        let wrong = y != yhat;
        counts.exact += usize::from(!wrong);
        if yhat.is_cfmt() {
            counts.predicted_cfmt += 1;
            counts.alpha_errors += usize::from(wrong);
        }
        if y.is_cfmt() {
            counts.truth_cfmt += 1;
            counts.beta_errors += usize::from(wrong);
        }
    }
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok(EvalReport::from_counts(n, counts))
}

/// Convenience over parallel slices of truths and predictions.
pub fn evaluate_slices(truth: &[GridLabel], predicted: &[GridLabel]) -> Result<EvalReport, EvalError> {
    assert_eq!(truth.len(), predicted.len(), "truth and prediction counts differ");
    evaluate(truth.iter().zip(predicted))
}

/// Seeded random permutation of `0..n` cut into `k` contiguous folds whose
/// sizes differ by at most one (the first `n % k` folds are larger).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || n < k {
        return Err(EvalError::Folds { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, tag::FOLDS, &[n as u64, k as u64]));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = n / k + usize::from(i < n % k);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub folds: Vec<EvalReport>,
    pub mean_acc: f64,
    pub mean_alpha_rate: f64,
    pub mean_beta_rate: f64,
}

impl FoldReport {
    pub fn from_folds(folds: Vec<EvalReport>) -> Self {
        let k = folds.len() as f64;
        let mean = |f: fn(&EvalReport) -> f64| folds.iter().map(f).sum::<f64>() / k;
        Self {
            mean_acc: mean(|r| r.acc),
            mean_alpha_rate: mean(|r| r.alpha_rate),
            mean_beta_rate: mean(|r| r.beta_rate),
            folds,
        }
    }

    /// CSV with one row per fold and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for (i, r) in self.folds.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}",
                r.n,
                r.acc,
                r.alpha_rate,
                r.beta_rate,
                r.counts.exact,
                r.counts.predicted_cfmt,
                r.counts.alpha_errors,
                r.counts.truth_cfmt,
                r.counts.beta_errors,
                r.alpha_undefined,
                r.beta_undefined
            )
            .expect("string write");
        }
        let n: usize = self.folds.iter().map(|r| r.n).sum();
        writeln!(out, "mean,{n},{:.6},{:.6},{:.6},,,,,,,", self.mean_acc, self.mean_alpha_rate, self.mean_beta_rate)
            .expect("string write");
        out
    }
}

pub const REPORT_HEADER: &str =
    "fold,n,acc,alpha_rate,beta_rate,exact,predicted_cfmt,alpha_errors,truth_cfmt,beta_errors,alpha_undefined,beta_undefined";

/// Runs k-fold cross-validation.
///
/// `train_fn(fold, train_indices, validation_indices)` trains on the training
/// indices and returns one predicted label per validation index, in order.
pub fn kfold_run<F, E>(truth: &[GridLabel], k: usize, seed: u64, mut train_fn: F) -> Result<FoldReport, EvalError>
where
    F: FnMut(usize, &[usize], &[usize]) -> Result<Vec<GridLabel>, E>,
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    let folds = kfold_split(truth.len(), k, seed)?;
    let mut reports = Vec::with_capacity(k);
    for (i, val) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        let predicted = train_fn(i, &train, val).map_err(|e| EvalError::Fold { fold: i, source: e.into() })?;
        if predicted.len() != val.len() {
            return Err(EvalError::PredictionCount { fold: i, expected: val.len(), got: predicted.len() });
        }
        reports.push(evaluate(val.iter().map(|&j| &truth[j]).zip(&predicted))?);
    }
    Ok(FoldReport::from_folds(reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn text(s: &str) -> GridLabel {
        GridLabel::from_text(s).unwrap()
    }

    #[test]
    fn exact_match_cases() {
        let a = GridLabel::diagonal();
        let mut b = a;
        assert_eq!(exact_match(&a, &b), 1);
        b.set(0, 5, true);
        assert_eq!(exact_match(&a, &b), 0);
        assert_eq!(exact_match(&GridLabel::empty(), &GridLabel::empty()), 1);
    }

    #[test]
    fn four_pair_enumeration() {
        let truth = [text("0123456789"), text("1111111111"), text("2222222222"), text("[34]333333333")];
        let pred = [text("0123456789"), text("1111111112"), text("X222222222"), text("3333333333")];
        let r = evaluate_slices(&truth, &pred).unwrap();
        assert_eq!(r.counts, EvalCounts { exact: 1, predicted_cfmt: 3, alpha_errors: 2, truth_cfmt: 3, beta_errors: 2 });
        assert_eq!(r.acc, 0.25);
        assert!((r.alpha_rate - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.beta_rate - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let truth = [text("0123456789")];
        let pred = [text("X123456789")];
        let r = evaluate_slices(&truth, &pred).unwrap();
        assert_eq!(r.alpha_rate, 0.0);
        assert!(r.alpha_undefined);
        assert!(!r.beta_undefined);
        assert_eq!(r.beta_rate, 1.0);
        assert!(matches!(evaluate_slices(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn fold_sizes() {
        let sizes = |n, k| kfold_split(n, k, 1).unwrap().iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(1703, 5), vec![341, 341, 341, 340, 340]);
        assert_eq!(sizes(10, 5), vec![2; 5]);
        assert_eq!(kfold_split(50, 5, 3).unwrap(), kfold_split(50, 5, 3).unwrap());
        assert_ne!(kfold_split(50, 5, 3).unwrap(), kfold_split(50, 5, 4).unwrap());
        assert!(kfold_split(3, 5, 0).is_err());
        assert!(kfold_split(10, 1, 0).is_err());
    }

    #[test]
    fn kfold_with_oracle_predictor() {
        let truth: Vec<GridLabel> = (0..23).map(|i| GridLabel::from_bits(i as u128 * 977).unwrap()).collect();
        let report = kfold_run(&truth, 5, 1, |_, _, val| Ok::<_, EvalError>(val.iter().map(|&j| truth[j]).collect()))
            .unwrap();
        assert_eq!(report.folds.len(), 5);
        assert_eq!(report.mean_acc, 1.0);
        assert_eq!(report.folds.iter().map(|r| r.n).sum::<usize>(), 23);
        assert!(report.to_csv().lines().last().unwrap().starts_with("mean,23,1.000000"));

        let err = kfold_run(&truth, 5, 1, |fold, _, _| if fold == 2 { Err("boom") } else { Ok(vec![]) });
        assert!(matches!(err, Err(EvalError::PredictionCount { fold: 0, .. })));
        let err = kfold_run(&truth, 5, 1, |fold, _, val| {
            if fold == 2 {
                Err("boom")
            } else {
                Ok(val.iter().map(|&j| truth[j]).collect())
            }
        });
        assert!(matches!(err, Err(EvalError::Fold { fold: 2, .. })));
    }

    proptest! {
        #[test]
        fn folds_partition(n in 2usize..300, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let folds = kfold_split(n, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let max = folds.iter().map(Vec::len).max().unwrap();
            let min = folds.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn perfect_predictions(bits in prop::collection::vec(any::<u128>(), 1..50)) {
            let labels: Vec<GridLabel> = bits.iter().map(|b| GridLabel::from_bits(b & ((1u128 << 100) - 1)).unwrap()).collect();
            let r = evaluate_slices(&labels, &labels).unwrap();
            prop_assert_eq!(r.acc, 1.0);
            prop_assert_eq!(r.alpha_rate, 0.0);
            prop_assert_eq!(r.beta_rate, 0.0);
        }
    }
}
