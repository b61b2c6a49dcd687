use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};
use crate::signal::HeartRateSeries;

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub statistic: f64,
    /// Degrees of freedom; F tests carry a denominator as well.
    pub dof: (f64, Option<f64>),
    pub p_value: f64,
    pub significant: bool,
}

impl StatTestResult {
    fn new(statistic: f64, dof: (f64, Option<f64>), p_value: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            dof,
            p_value,
            significant: p_value < ALPHA,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 divisor).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Pairs of values at timestamps present in both series.
pub fn common_points(a: &HeartRateSeries, b: &HeartRateSeries) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let d = a.t[i] - b.t[j];
        if d.abs() <= 1e-6 {
            out.push((a.bpm[i], b.bpm[j]));
            i += 1;
            j += 1;
        } else if d < 0.0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Mean absolute difference over the grid points the two series share.
///
/// ```
/// use hrcal::eval::mae;
/// use hrcal::signal::{HeartRateSeries, Provenance};
/// let truth = HeartRateSeries::new(vec![0.0, 15.0, 30.0], vec![60.0, 62.0, 64.0], Provenance::EcgTruth);
/// let pred = HeartRateSeries::new(vec![15.0, 30.0, 45.0], vec![64.0, 66.0, 70.0], Provenance::Calibrated);
/// assert_eq!(mae(&pred, &truth).unwrap(), 2.0);
/// ```
pub fn mae(pred: &HeartRateSeries, truth: &HeartRateSeries) -> Result<f64> {
    let pts = common_points(pred, truth);
    if pts.is_empty() {
        return Err(Error::InsufficientData("prediction and truth share no grid points".into()));
    }
    Ok(pts.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / pts.len() as f64)
}

/// Mean and standard error (sample sd over √n) of per-participant MAEs.
/// A single participant has SE 0.
pub fn mae_se(per_participant: &[f64]) -> Result<(f64, f64)> {
    if per_participant.is_empty() {
        return Err(Error::InsufficientData("no participants to average".into()));
    }
    let n = per_participant.len() as f64;
    Ok((mean(per_participant), sample_sd(per_participant) / n.sqrt()))
}

/// Two-tailed paired t-test on `a - b`.
///
/// With zero variance in the differences the statistic is 0 with p = 1 if
/// the mean difference is 0, and ±∞ with p = 0 otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("paired t-test needs 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let sd = sample_sd(&d);
    let dof = (n - 1) as f64;
    if sd == 0.0 {
        return Ok(if m == 0.0 {
            StatTestResult::new(0.0, (dof, None), 1.0)
        } else {
            StatTestResult::new(m.signum() * f64::INFINITY, (dof, None), 0.0)
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(StatTestResult::new(t, (dof, None), 2.0 * dist.sf(t.abs())))
}

/// One-way repeated-measures ANOVA over a participants × methods table.
/// Rows with a missing (non-finite) cell are dropped; their count is
/// returned alongside the test.
pub fn rm_anova(table: &[Vec<f64>]) -> Result<(StatTestResult, usize)> {
    let k = table.first().map_or(0, Vec::len);
    if table.iter().any(|r| r.len() != k) {
        return Err(Error::Shape("ragged participant × method table".into()));
    }
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().all(|v| v.is_finite())).collect();
    let dropped = table.len() - rows.len();
    let n = rows.len();
    if n < 2 || k < 2 {
        return Err(Error::InsufficientData(format!(
            "repeated-measures ANOVA needs 2 complete participants and 2 methods, got {n} and {k}"
        )));
    }
    let grand = rows.iter().flat_map(|r| r.iter()).sum::<f64>() / (n * k) as f64;
    let ss_total: f64 = rows.iter().flat_map(|r| r.iter()).map(|v| (v - grand).powi(2)).sum();
    let ss_subjects: f64 = rows.iter().map(|r| k as f64 * (mean(r) - grand).powi(2)).sum();
    let ss_methods: f64 = (0..k)
        .map(|j| {
            let mj = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            n as f64 * (mj - grand).powi(2)
        })
        .sum();
    let ss_error = (ss_total - ss_subjects - ss_methods).max(0.0);
    let df1 = (k - 1) as f64;
    let df2 = ((k - 1) * (n - 1)) as f64;
    let scale = ss_total.max(1e-300);
    let result = if ss_methods <= 1e-12 * scale {
        StatTestResult::new(0.0, (df1, Some(df2)), 1.0)
    } else if ss_error <= 1e-12 * scale {
        StatTestResult::new(f64::INFINITY, (df1, Some(df2)), 0.0)
    } else {
        let f = (ss_methods / df1) / (ss_error / df2);
        let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::Domain(e.to_string()))?;
        StatTestResult::new(f, (df1, Some(df2)), dist.sf(f))
    };
    Ok((result, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDiff {
    pub a: String,
    pub b: String,
    /// Mean of `a - b` over participants.
    pub mean_diff: f64,
    pub se: f64,
    pub n: usize,
    /// Unadjusted paired t-test.
    pub test: Option<StatTestResult>,
}

/// Paired comparisons of every method pair (`i < j`) over the complete rows
/// of a participants × methods table.
pub fn pairwise_diffs(table: &[Vec<f64>], names: &[String]) -> Result<Vec<PairwiseDiff>> {
    let k = names.len();
    if table.iter().any(|r| r.len() != k) {
        return Err(Error::Shape("table width differs from the method list".into()));
    }
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().all(|v| v.is_finite())).collect();
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let a: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let b: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let n = d.len();
            out.push(PairwiseDiff {
                a: names[i].clone(),
                b: names[j].clone(),
                mean_diff: if n > 0 { mean(&d) } else { f64::NAN },
                se: if n > 0 { sample_sd(&d) / (n as f64).sqrt() } else { f64::NAN },
                n,
                test: paired_t_test(&a, &b).ok(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub mean_diff: f64,
    /// Sample standard deviation of the differences.
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub n: usize,
    pub n_outside: usize,
}

/// Agreement of paired measurements, differences taken as `a - b`.
///
/// ```
/// use hrcal::eval::bland_altman_values;
/// let ba = bland_altman_values(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
/// assert_eq!(ba.mean_diff, 0.0);
/// assert!((ba.loa_high - 1.96 * 2f64.sqrt()).abs() < 1e-12);
/// ```
pub fn bland_altman_values(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData(format!("Bland-Altman needs 2 pairs, got {}", a.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let sd = sample_sd(&d);
    let half = 1.96 * sd;
    Ok(BlandAltman {
        mean_diff: m,
        sd_diff: sd,
        loa_low: m - half,
        loa_high: m + half,
        n: d.len(),
        n_outside: d.iter().filter(|v| (*v - m).abs() > half).count(),
    })
}

pub fn bland_altman(a: &HeartRateSeries, b: &HeartRateSeries) -> Result<BlandAltman> {
    let (x, y): (Vec<f64>, Vec<f64>) = common_points(a, b).into_iter().unzip();
    bland_altman_values(&x, &y)
}

/// Percentage drop from `mae_raw` to `mae_cal`; negative when calibration
/// made things worse.
///
/// ```
/// let r = hrcal::eval::error_reduction(3.26, 2.17).unwrap();
/// assert!((r - 33.44).abs() < 0.01);
/// ```
pub fn error_reduction(mae_raw: f64, mae_cal: f64) -> Result<f64> {
    if !(mae_raw > 0.0) {
        return Err(Error::Domain(format!("raw MAE must be positive, got {mae_raw}")));
    }
    Ok(100.0 * (mae_raw - mae_cal) / mae_raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Provenance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn series(v: &[f64]) -> HeartRateSeries {
        HeartRateSeries::new((0..v.len()).map(|i| 15.0 * i as f64).collect(), v.to_vec(), Provenance::Calibrated)
    }

    #[test]
    fn mae_examples() {
        let t = series(&[60.0, 70.0, 80.0]);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert_eq!(mae(&series(&[62.0, 72.0, 82.0]), &t).unwrap(), 2.0);
        let far = HeartRateSeries::new(vec![1000.0], vec![1.0], Provenance::Calibrated);
        assert!(matches!(mae(&far, &t), Err(Error::InsufficientData(_))));
        let (m, se) = mae_se(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((se - 0.5774).abs() < 1e-4);
    }

    #[test]
    fn t_test_conventions() {
        let a = [1.0, 2.0, 3.0];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.statistic, r.p_value, r.significant), (0.0, 1.0, false));
        let b = [0.0, 1.0, 2.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.significant && r.statistic.is_infinite());
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn t_test_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.5, 1.0).unwrap();
        let d: Vec<f64> = (0..100).map(|_| normal.sample(&mut rng)).collect();
        let zero = vec![0.0; 100];
        let r = paired_t_test(&d, &zero).unwrap();
        let m = d.iter().sum::<f64>() / 100.0;
        let s = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!((r.statistic - m / (s / 10.0)).abs() < 1e-9);
        assert_eq!(r.dof, (99.0, None));
    }

    #[test]
    fn anova_examples() {
        let same = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0], vec![5.0, 5.0, 5.0]];
        let (r, _) = rm_anova(&same).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));

        // textbook two-step decomposition on a seeded 5 × 3 table
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(3.0, 1.0).unwrap();
        let t: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| normal.sample(&mut rng)).collect()).collect();
        let (r, dropped) = rm_anova(&t).unwrap();
        assert_eq!(dropped, 0);
        let grand: f64 = t.iter().flatten().sum::<f64>() / 15.0;
        let col = |j: usize| t.iter().map(|r| r[j]).sum::<f64>() / 5.0;
        let ss_between: f64 = (0..3).map(|j| 5.0 * (col(j) - grand).powi(2)).sum();
        let ss_within: f64 = (0..3).map(|j| t.iter().map(|r| (r[j] - col(j)).powi(2)).sum::<f64>()).sum();
        let ss_subj: f64 = t.iter().map(|r| 3.0 * (r.iter().sum::<f64>() / 3.0 - grand).powi(2)).sum();
        let f = (ss_between / 2.0) / ((ss_within - ss_subj) / 8.0);
        assert!((r.statistic - f).abs() < 1e-9);
        assert_eq!(r.dof, (2.0, Some(8.0)));

        let mut holes = t.clone();
        holes[2][1] = f64::NAN;
        assert_eq!(rm_anova(&holes).unwrap().1, 1);
    }

    #[test]
    fn pairwise_constant_offset() {
        let t: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 + 1.0, i as f64]).collect();
        let d = pairwise_diffs(&t, &["b".into(), "a".into()]).unwrap();
        assert_eq!(d[0].mean_diff, 1.0);
        assert_eq!(d[0].se, 0.0);
    }

    #[test]
    fn bland_altman_examples() {
        let a = series(&[60.0, 61.0, 62.0]);
        let r = bland_altman(&a, &a).unwrap();
        assert_eq!((r.mean_diff, r.sd_diff, r.n_outside), (0.0, 0.0, 0));
        assert!(bland_altman_values(&[1.0], &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let d: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let r = bland_altman_values(&d, &vec![0.0; 10_000]).unwrap();
        assert!(r.loa_low < r.loa_high);
        assert!((r.n_outside as f64) / 10_000.0 <= 0.07);
    }

    #[test]
    fn error_reduction_examples() {
        assert_eq!(error_reduction(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(error_reduction(5.0, 10.0).unwrap(), -100.0);
        assert!((error_reduction(3.26, 2.17).unwrap() - 33.44).abs() < 0.01);
        assert!(matches!(error_reduction(0.0, 1.0), Err(Error::Domain(_))));
    }
}
