//! Empirical CDFs and Kolmogorov-Smirnov distances.

use crate::error::{Error, Result};

/// Anything with a nondecreasing CDF.
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Cdf for F {
    fn cdf(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Right-continuous step CDF of a finite sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empirical CDF needs at least one sample".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("empirical CDF sample contains NaN".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }
}

impl Cdf for EmpiricalCdf {
    fn cdf(&self, x: f64) -> f64 {
        self.eval(x)
    }
}

/// `sup |F_emp - F|` for a continuous reference CDF, exact over the jumps.
pub fn ks_distance(emp: &EmpiricalCdf, reference: &dyn Cdf) -> f64 {
    let n = emp.len() as f64;
    let v = &emp.sorted;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let f = reference.cdf(v[i]);
        d = d.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

/// Two-sample distance `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &EmpiricalCdf, b: &EmpiricalCdf) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.sorted.get(i), b.sorted.get(j)) {
            (Some(&u), Some(&w)) => u.min(w),
            (Some(&u), None) => u,
            (None, Some(&w)) => w,
            (None, None) => break,
        };
        while i < a.len() && a.sorted[i] <= x {
            i += 1;
        }
        while j < b.len() && b.sorted[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let e = EmpiricalCdf::new(vec![0.5]).unwrap();
        let uniform = |x: f64| x.clamp(0.0, 1.0);
        assert!((ks_distance(&e, &uniform) - 0.5).abs() < 1e-15);
        let a = EmpiricalCdf::new(vec![0.3, 0.1, 0.2]).unwrap();
        assert_eq!(ks_two_sample(&a, &a.clone()), 0.0);
        assert!(EmpiricalCdf::new(vec![]).is_err());
    }

    #[test]
    fn step_function_is_right_continuous() {
        let e = EmpiricalCdf::new(vec![1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.eval(0.9), 0.0);
        assert_eq!(e.eval(1.0), 0.25);
        assert_eq!(e.eval(2.0), 0.75);
        assert_eq!(e.eval(3.0), 1.0);
    }

    #[test]
    fn ties_against_reference() {
        let e = EmpiricalCdf::new(vec![0.5, 0.5]).unwrap();
        let uniform = |x: f64| x.clamp(0.0, 1.0);
        assert!((ks_distance(&e, &uniform) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_sample_matches_brute_force() {
        let a = EmpiricalCdf::new(vec![0.1, 0.4, 0.4, 0.9, 1.3]).unwrap();
        let b = EmpiricalCdf::new(vec![0.2, 0.4, 1.0]).unwrap();
        let mut brute: f64 = 0.0;
        for &x in a.values().iter().chain(b.values()) {
            brute = brute.max((a.eval(x) - b.eval(x)).abs());
        }
        assert!((ks_two_sample(&a, &b) - brute).abs() < 1e-15);
        assert_eq!(ks_two_sample(&a, &b), ks_two_sample(&b, &a));
    }
}
