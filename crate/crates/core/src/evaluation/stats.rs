//! Small-sample statistics for comparing seeds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Student-t confidence interval for the mean.
pub fn confidence_interval(xs: &[f64], level: f64) -> Interval {
    let m = mean(xs);
    if xs.len() < 2 {
        return Interval { mean: m, lo: m, hi: m };
    }
    let df = (xs.len() - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(0.5 + level / 2.0);
    let half = t * std_dev(xs) / (xs.len() as f64).sqrt();
    Interval {
        mean: m,
        lo: m - half,
        hi: m + half,
    }
}

/// Two-sided paired t-test; returns the p-value. Identical samples give 1.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.len() < 2 {
        return 1.0;
    }
    let sd = std_dev(&d);
    let m = mean(&d);
    if sd == 0.0 {
        return if m == 0.0 { 1.0 } else { 0.0 };
    }
    let t = m / (sd / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64).expect("df > 0");
    2.0 * (1.0 - dist.cdf(t.abs()))
}
