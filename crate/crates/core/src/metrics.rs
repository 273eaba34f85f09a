//! Accuracy-matrix bookkeeping and the four summary metrics.
//!
//! Row `t` of the matrix holds test accuracies on tasks `0..=t`, measured
//! right after training on task `t` finished. Rows are 0-based here.
//! Entries are exact fractions; metrics are computed exactly and converted to
//! `f64` only at the end.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use crate::data::{to_batch, Task};
use crate::error::{Error, Result};
use crate::model::Mlp;
use crate::tensor::Tensor;

fn overflow() -> Error {
    Error::Invalid(alloc::string::String::from("exact metric arithmetic overflowed"))
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Reduced fraction with a positive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: i128, den: i128) -> Result<Self> {
        if den == 0 {
            return Err(Error::Invalid(alloc::format!("zero denominator in {num}/0")));
        }
        let g = gcd(num, den);
        let sign = if den < 0 { -1 } else { 1 };
        Ok(Self {
            num: sign * num / g,
            den: sign * den / g,
        })
    }

    /// `correct / total`; `total` must be positive.
    pub fn from_counts(correct: u64, total: u64) -> Result<Self> {
        Self::new(i128::from(correct), i128::from(total))
    }

    pub fn numer(self) -> i128 {
        self.num
    }

    pub fn denom(self) -> i128 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn checked_add(self, other: Ratio) -> Result<Ratio> {
        let g = gcd(self.den, other.den);
        let den = (self.den / g).checked_mul(other.den).ok_or_else(overflow)?;
        let a = self.num.checked_mul(other.den / g).ok_or_else(overflow)?;
        let b = other.num.checked_mul(self.den / g).ok_or_else(overflow)?;
        Ratio::new(a.checked_add(b).ok_or_else(overflow)?, den)
    }

    pub fn checked_sub(self, other: Ratio) -> Result<Ratio> {
        self.checked_add(Ratio {
            num: -other.num,
            den: other.den,
        })
    }

    pub fn div_int(self, n: usize) -> Result<Ratio> {
        let n = i128::try_from(n).map_err(|_| overflow())?;
        Ratio::new(self.num, self.den.checked_mul(n).ok_or_else(overflow)?)
    }

    fn sum<'a>(items: impl IntoIterator<Item = &'a Ratio>) -> Result<Ratio> {
        items.into_iter().try_fold(Ratio::ZERO, |acc, r| acc.checked_add(*r))
    }
}

impl Ord for Ratio {
    /// Compares by continued-fraction expansion, so no products are formed.
    fn cmp(&self, other: &Self) -> Ordering {
        let (mut a, mut b, mut c, mut d) = (self.num, self.den, other.num, other.den);
        let mut flipped = false;
        loop {
            let (qa, ra) = (a.div_euclid(b), a.rem_euclid(b));
            let (qc, rc) = (c.div_euclid(d), c.rem_euclid(d));
            let ord = qa.cmp(&qc).then_with(|| match (ra == 0, rc == 0) {
                (true, true) => Ordering::Equal,
                (true, false) => Ordering::Less,
                (false, true) => Ordering::Greater,
                (false, false) => Ordering::Equal,
            });
            if ord != Ordering::Equal || ra == 0 {
                return if flipped { ord.reverse() } else { ord };
            }
            // ra/b vs rc/d  ⇔  d/rc vs b/ra, reversed.
            (a, b, c, d) = (b, ra, d, rc);
            flipped = !flipped;
        }
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Accepts `n/d` fractions and plain decimals such as `-0.125`; decimals are
/// read exactly.
impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(alloc::format!("not a number: `{s}`"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i128 = n.trim().parse().map_err(|_| bad())?;
            let d: i128 = d.trim().parse().map_err(|_| bad())?;
            return Ratio::new(n, d).map_err(|_| bad());
        }
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let mut num: i128 = 0;
        let mut den: i128 = 1;
        for b in int.bytes() {
            num = num.checked_mul(10).and_then(|n| n.checked_add(i128::from(b - b'0'))).ok_or_else(overflow)?;
        }
        for b in frac.bytes() {
            num = num.checked_mul(10).and_then(|n| n.checked_add(i128::from(b - b'0'))).ok_or_else(overflow)?;
            den = den.checked_mul(10).ok_or_else(overflow)?;
        }
        Ratio::new(if neg { -num } else { num }, den)
    }
}

/// Lower-triangular `T × T` matrix of accuracies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Ratio>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a matrix from explicit rows; row `t` must have `t + 1` entries.
    pub fn from_rows(rows: Vec<Vec<Ratio>>) -> Result<Self> {
        let mut m = Self::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: Vec<Ratio>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Invalid(alloc::format!(
                "row {} must have {} entries, got {}",
                self.rows.len(),
                self.rows.len() + 1,
                row.len()
            )));
        }
        if row.iter().any(|a| *a < Ratio::ZERO || *a > Ratio::ONE) {
            return Err(Error::Invalid(alloc::format!("accuracies must lie in [0, 1]: {row:?}")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of completed evaluation points.
    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<Ratio>] {
        &self.rows
    }

    /// `A[t][j]`, defined for `j <= t`.
    pub fn get(&self, t: usize, j: usize) -> Option<Ratio> {
        self.rows.get(t).and_then(|r| r.get(j)).copied()
    }

    fn require(&self, min_tasks: usize) -> Result<usize> {
        if self.rows.len() < min_tasks {
            Err(Error::Contract("accuracy matrix has too few rows for this metric"))
        } else {
            Ok(self.rows.len())
        }
    }

    /// Mean of the last row.
    pub fn final_accuracy(&self) -> Result<Ratio> {
        let t = self.require(1)?;
        Ratio::sum(&self.rows[t - 1])?.div_int(t)
    }

    /// Average over evaluation points of the mean accuracy on tasks seen so far.
    pub fn aaa(&self) -> Result<Ratio> {
        let t = self.require(1)?;
        let mut total = Ratio::ZERO;
        for (k, row) in self.rows.iter().enumerate() {
            total = total.checked_add(Ratio::sum(row)?.div_int(k + 1)?)?;
        }
        total.div_int(t)
    }

    /// `(1/T)·A[T][T] + (1 − 1/T)·min-ACC`, where min-ACC averages, over all
    /// but the last task, the lowest accuracy each task ever had after it was
    /// learned.
    pub fn wc_acc(&self) -> Result<Ratio> {
        let t = self.require(2)?;
        let mut total = self.rows[t - 1][t - 1];
        for j in 0..t - 1 {
            let lowest = (j..t).map(|k| self.rows[k][j]).min().unwrap_or(Ratio::ZERO);
            total = total.checked_add(lowest)?;
        }
        // (1 − 1/T) · Σ min / (T − 1) = Σ min / T
        total.div_int(t)
    }

    /// Mean of `A[T][j] − A[j][j]` over all but the last task.
    pub fn bwt(&self) -> Result<Ratio> {
        let t = self.require(2)?;
        let last = &self.rows[t - 1];
        let mut total = Ratio::ZERO;
        for (j, a) in last[..t - 1].iter().enumerate() {
            total = total.checked_add(a.checked_sub(self.rows[j][j])?)?;
        }
        total.div_int(t - 1)
    }

    pub fn summary(&self) -> Result<MetricSet> {
        Ok(MetricSet {
            acc: self.final_accuracy()?.to_f64(),
            aaa: self.aaa()?.to_f64(),
            wc_acc: self.wc_acc()?.to_f64(),
            bwt: self.bwt()?.to_f64(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub acc: f64,
    pub aaa: f64,
    pub wc_acc: f64,
    pub bwt: f64,
}

/// Correct and total prediction counts on one test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score {
    pub correct: u64,
    pub total: u64,
}

impl Score {
    pub fn accuracy(self) -> Result<Ratio> {
        Ratio::from_counts(self.correct, self.total)
    }
}

/// Argmax over the full shared head on `task.test`.
pub fn score_task(mlp: &Mlp, params: &[Tensor], task: &Task) -> Result<Score> {
    if task.test.is_empty() {
        return Err(Error::Contract("task has no test examples"));
    }
    let (x, labels) = to_batch(&task.test)?;
    let predicted = mlp.predict(params, &x)?;
    let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count() as u64;
    Ok(Score {
        correct,
        total: labels.len() as u64,
    })
}

/// Appends the row for evaluation point `seen.len() − 1`.
pub fn evaluate_all(mlp: &Mlp, params: &[Tensor], seen: &[Task], matrix: &mut AccuracyMatrix) -> Result<()> {
    if seen.len() != matrix.num_tasks() + 1 {
        return Err(Error::Contract("evaluate_all must be called once per finished task"));
    }
    let row = seen
        .iter()
        .map(|task| score_task(mlp, params, task)?.accuracy())
        .collect::<Result<Vec<Ratio>>>()?;
    matrix.push_row(row)
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, libm::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn r(s: &str) -> Ratio {
        s.parse().unwrap()
    }

    fn matrix(rows: &[&[&str]]) -> AccuracyMatrix {
        AccuracyMatrix::from_rows(rows.iter().map(|row| row.iter().map(|s| r(s)).collect()).collect()).unwrap()
    }

    fn constant(t: usize, c: Ratio) -> AccuracyMatrix {
        AccuracyMatrix::from_rows((0..t).map(|k| vec![c; k + 1]).collect()).unwrap()
    }

    #[test]
    fn parses_decimals_and_fractions_exactly() {
        assert_eq!(r("0.8"), Ratio::new(4, 5).unwrap());
        assert_eq!(r("-0.125"), Ratio::new(-1, 8).unwrap());
        assert_eq!(r("6/8"), Ratio::new(3, 4).unwrap());
        assert_eq!(r("1"), Ratio::ONE);
        assert_eq!(r(".5"), Ratio::new(1, 2).unwrap());
        for bad in ["", "-", "0.8x", "1/0", "1e-3", "."] {
            assert!(bad.parse::<Ratio>().is_err(), "{bad}");
        }
    }

    #[test]
    fn ordering_without_overflow() {
        assert!(r("1/3") < r("0.3333333333333333334"));
        assert!(r("-1/2") < r("-1/3"));
        assert_eq!(r("2/4").cmp(&r("0.5")), Ordering::Equal);
        let big = Ratio::new(i128::MAX / 3, i128::MAX / 2).unwrap();
        let other = Ratio::new(i128::MAX / 3 - 1, i128::MAX / 2).unwrap();
        assert!(other < big);
        assert!(Ratio::ZERO < big && big < Ratio::ONE);
    }

    #[test]
    fn constant_matrix_identities() {
        for c in ["0", "0.37", "1", "2/3"] {
            let c = r(c);
            let m = constant(5, c);
            assert_eq!(m.final_accuracy().unwrap(), c);
            assert_eq!(m.aaa().unwrap(), c);
            assert_eq!(m.wc_acc().unwrap(), c);
            assert_eq!(m.bwt().unwrap(), Ratio::ZERO);
        }
    }

    #[test]
    fn worked_examples() {
        assert_eq!(matrix(&[&["1.0"], &["0.8", "0.6"]]).summary().unwrap().acc, 0.7);
        assert_eq!(matrix(&[&["1.0"], &["0.5", "0.5"]]).summary().unwrap().aaa, 0.75);
        assert_eq!(matrix(&[&["1.0"], &["0.4", "0.8"]]).summary().unwrap().wc_acc, 0.6);
        assert_eq!(matrix(&[&["0.9"], &["0.8", "0.7"]]).summary().unwrap().bwt, -0.1);
        assert_eq!(matrix(&[&["0.5"], &["0.7", "0.9"]]).summary().unwrap().bwt, 0.2);
    }

    #[test]
    fn single_task_matrix_rejects_transfer_metrics() {
        let m = constant(1, r("0.5"));
        assert!(m.bwt().is_err());
        assert!(m.wc_acc().is_err());
        assert!(AccuracyMatrix::new().final_accuracy().is_err());
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(AccuracyMatrix::from_rows(vec![vec![r("0.5"), r("0.5")]]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![r("1.5")]]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![r("-0.1")]]).is_err());
    }

    #[test]
    fn bwt_ignores_interior_entries() {
        let base = matrix(&[&["0.9"], &["0.3", "0.8"], &["0.6", "0.5", "0.7"]]);
        let moved = matrix(&[&["0.9"], &["0.1", "0.8"], &["0.6", "0.5", "0.7"]]);
        assert_eq!(base.bwt().unwrap(), moved.bwt().unwrap());
        assert!(moved.wc_acc().unwrap() < base.wc_acc().unwrap());
    }

    #[test]
    fn score_to_ratio() {
        let s = Score { correct: 93, total: 125 };
        assert_eq!(s.accuracy().unwrap(), Ratio::new(93, 125).unwrap());
        assert!(Score { correct: 0, total: 0 }.accuracy().is_err());
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
