//! Order-stable summary statistics for Monte Carlo output.

use serde::{Deserialize, Serialize};

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    /// `sample_std / √n`; absent for `n < 2`.
    pub stderr: Option<f64>,
    pub n: usize,
}

/// Two-pass mean / standard error with compensated sums.
pub fn mean_stderr(xs: &[f64]) -> MeanStderr {
    let n = xs.len();
    if n == 0 {
        return MeanStderr {
            mean: f64::NAN,
            stderr: None,
            n,
        };
    }
    let mean = compensated_sum(xs.iter().copied()) / n as f64;
    let stderr = if n >= 2 {
        let ss = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
        Some((ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
    } else {
        None
    };
    MeanStderr { mean, stderr, n }
}

/// Columnwise mean / stderr of equally long rows.
pub fn column_mean_stderr(rows: &[Vec<f64>]) -> Vec<MeanStderr> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            mean_stderr(&col)
        })
        .collect()
}

/// Streaming count, sum and sum of squares, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: usize,
    sum: CompensatedSum,
    sq: CompensatedSum,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum.add(x);
        self.sq.add(x * x);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum.add(other.sum.sum);
        self.sum.add(other.sum.comp);
        self.sq.add(other.sq.sum);
        self.sq.add(other.sq.comp);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn summary(&self) -> MeanStderr {
        let n = self.n;
        if n == 0 {
            return MeanStderr {
                mean: f64::NAN,
                stderr: None,
                n,
            };
        }
        let nf = n as f64;
        let mean = self.sum.value() / nf;
        let stderr = (n >= 2).then(|| {
            let var = ((self.sq.value() - nf * mean * mean) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        });
        MeanStderr { mean, stderr, n }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_beats_naive() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn mean_and_stderr() {
        let m = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((m.stderr.unwrap() - sd / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_sample_has_no_stderr() {
        let m = mean_stderr(&[3.0]);
        assert_eq!(m.mean, 3.0);
        assert!(m.stderr.is_none());
    }

    #[test]
    fn moments_match_two_pass() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 * 0.01).collect();
        let mut a = Moments::default();
        let mut b = Moments::default();
        for (i, x) in xs.iter().enumerate() {
            if i < 200 {
                a.push(*x);
            } else {
                b.push(*x);
            }
        }
        a.merge(&b);
        let m = a.summary();
        let r = mean_stderr(&xs);
        assert_eq!(m.n, 500);
        assert!((m.mean - r.mean).abs() < 1e-14);
        assert!((m.stderr.unwrap() - r.stderr.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn permutation_stable() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1009) as f64 * 1e-3 + 1e6).collect();
        let mut ys = xs.clone();
        ys.reverse();
        let a = compensated_sum(xs);
        let b = compensated_sum(ys);
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }
}
