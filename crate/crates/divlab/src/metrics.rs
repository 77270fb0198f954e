//! Diversity and analysis metrics over ensembles: pairwise correctness
//! statistics (disagreement, Q, rho), Shannon equitability of member votes,
//! representation similarity (linear HSIC and CKA), attribution variance,
//! ensemble improvement, min-max normalization, and Pearson trend lines.
//!
//! Every metric here is a pure function over plain data; pairwise statistics
//! aggregate to an ensemble score as the mean over all unordered member
//! pairs.

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::nn::ActivationCapture;
use crate::tensor::Tensor;

/// 2x2 correctness contingency counts for one member pair over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrectnessPair {
    pub n11: usize,
    pub n10: usize,
    pub n01: usize,
    pub n00: usize,
}

impl CorrectnessPair {
    pub fn from_bools(a: &[bool], b: &[bool]) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::InvalidShape {
                op: "correctness pair",
                msg: format!("lengths {} and {}", a.len(), b.len()),
            });
        }
        let mut p = CorrectnessPair { n11: 0, n10: 0, n01: 0, n00: 0 };
        for (&x, &y) in a.iter().zip(b) {
            match (x, y) {
                (true, true) => p.n11 += 1,
                (true, false) => p.n10 += 1,
                (false, true) => p.n01 += 1,
                (false, false) => p.n00 += 1,
            }
        }
        Ok(p)
    }

    pub fn total(&self) -> usize {
        self.n11 + self.n10 + self.n01 + self.n00
    }
}

/// Fraction of samples where exactly one of the two members is correct.
pub fn disagreement(a: &[bool], b: &[bool]) -> Result<f64> {
    let p = CorrectnessPair::from_bools(a, b)?;
    Ok((p.n01 + p.n10) as f64 / p.total() as f64)
}

pub fn q_statistic(p: &CorrectnessPair) -> Result<f64> {
    let (n11, n10, n01, n00) =
        (p.n11 as f64, p.n10 as f64, p.n01 as f64, p.n00 as f64);
    let denom = n11 * n00 + n01 * n10;
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "Q-statistic denominator zero for counts {p:?}"
        )));
    }
    Ok((n11 * n00 - n01 * n10) / denom)
}

pub fn rho(p: &CorrectnessPair) -> Result<f64> {
    let (n11, n10, n01, n00) =
        (p.n11 as f64, p.n10 as f64, p.n01 as f64, p.n00 as f64);
    let denom =
        ((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00)).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "rho denominator zero for counts {p:?}"
        )));
    }
    Ok((n11 * n00 - n01 * n10) / denom)
}

/// Mean of a pairwise statistic over all unordered member pairs.
/// `correctness[i]` is member i's per-sample correctness vector.
pub fn pairwise_mean<F>(correctness: &[Vec<bool>], stat: F) -> Result<f64>
where
    F: Fn(&CorrectnessPair) -> Result<f64>,
{
    let m = correctness.len();
    if m < 2 {
        return Err(Error::InvalidConfig("pairwise metrics need at least 2 members".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..m {
        for j in i + 1..m {
            let p = CorrectnessPair::from_bools(&correctness[i], &correctness[j])?;
            sum += stat(&p)?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Shannon equitability of one sample's member votes: entropy of the vote
/// distribution normalized by ln of the number of distinct votes, zero when
/// everyone agrees.
pub fn shannon_equitability_sample(votes: &[usize]) -> f64 {
    let m = votes.len() as f64;
    let mut counts: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_insert(0) += 1;
    }
    let s_obs = counts.len();
    if s_obs <= 1 {
        return 0.0;
    }
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / m;
            -p * p.ln()
        })
        .sum();
    h / (s_obs as f64).ln()
}

/// Dataset-level Shannon equitability: overall mean plus means over the
/// consensus-correct and consensus-incorrect partitions. A partition with no
/// samples is reported absent rather than zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ShannonReport {
    pub overall: f64,
    pub consensus_correct: Option<f64>,
    pub consensus_incorrect: Option<f64>,
}

/// `member_votes[i][n]` is member i's predicted class on sample n;
/// `consensus_correct[n]` partitions samples by the consensus prediction.
pub fn shannon_equitability(
    member_votes: &[Vec<usize>],
    consensus_correct: &[bool],
) -> Result<ShannonReport> {
    let m = member_votes.len();
    if m < 2 {
        return Err(Error::InvalidConfig("shannon equitability needs at least 2 members".into()));
    }
    let n = member_votes[0].len();
    if member_votes.iter().any(|v| v.len() != n) || consensus_correct.len() != n || n == 0 {
        return Err(Error::InvalidShape {
            op: "shannon equitability",
            msg: "vote vectors and partition mask must share a nonzero length".into(),
        });
    }
    let mut all = 0.0;
    let (mut corr_sum, mut corr_n) = (0.0, 0usize);
    let (mut inco_sum, mut inco_n) = (0.0, 0usize);
    for s in 0..n {
        let votes: Vec<usize> = member_votes.iter().map(|v| v[s]).collect();
        let e = shannon_equitability_sample(&votes);
        all += e;
        if consensus_correct[s] {
            corr_sum += e;
            corr_n += 1;
        } else {
            inco_sum += e;
            inco_n += 1;
        }
    }
    Ok(ShannonReport {
        overall: all / n as f64,
        consensus_correct: (corr_n > 0).then(|| corr_sum / corr_n as f64),
        consensus_incorrect: (inco_n > 0).then(|| inco_sum / inco_n as f64),
    })
}

fn center_columns(x: &Tensor) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut out = x.clone();
    for c in 0..d {
        let mean: f64 = (0..n).map(|r| x.data()[r * d + c]).sum::<f64>() / n as f64;
        for r in 0..n {
            out.data_mut()[r * d + c] -= mean;
        }
    }
    out
}

fn double_center(k: &Tensor) -> Tensor {
    let n = k.shape()[0];
    let d = k.data();
    let mut row_mean = vec![0.0; n];
    let mut total = 0.0;
    for r in 0..n {
        for c in 0..n {
            row_mean[r] += d[r * n + c];
        }
        total += row_mean[r];
        row_mean[r] /= n as f64;
    }
    total /= (n * n) as f64;
    let mut out = k.clone();
    for r in 0..n {
        for c in 0..n {
            out.data_mut()[r * n + c] = d[r * n + c] - row_mean[r] - row_mean[c] + total;
        }
    }
    out
}

/// Biased HSIC estimator over two n x n Gram matrices:
/// tr(K H L H) / (n-1)^2 with H the centering matrix.
pub fn hsic(k: &Tensor, l: &Tensor) -> Result<f64> {
    if k.shape().len() != 2 || k.shape() != l.shape() || k.shape()[0] != k.shape()[1] {
        return Err(Error::InvalidShape {
            op: "hsic",
            msg: format!("need matching square kernels, got {:?} and {:?}", k.shape(), l.shape()),
        });
    }
    let n = k.shape()[0];
    if n < 3 {
        return Err(Error::InvalidConfig("hsic needs at least 3 samples".into()));
    }
    let kc = double_center(k);
    let lc = double_center(l);
    // tr(Kc Lc) since H is idempotent and symmetric
    let tr: f64 = kc.data().iter().zip(lc.data()).map(|(a, b)| a * b).sum();
    Ok(tr / ((n - 1) * (n - 1)) as f64)
}

/// Centered kernel alignment of two feature matrices (n x d_x, n x d_y)
/// using linear kernels.
pub fn cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape().len() != 2 || y.shape().len() != 2 || x.shape()[0] != y.shape()[0] {
        return Err(Error::InvalidShape {
            op: "cka",
            msg: format!("need (n,dx) and (n,dy), got {:?} and {:?}", x.shape(), y.shape()),
        });
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    let k = xc.matmul(&xc.transpose2d()?)?;
    let l = yc.matmul(&yc.transpose2d()?)?;
    let kk = hsic(&k, &k)?;
    let ll = hsic(&l, &l)?;
    if kk <= 0.0 || ll <= 0.0 {
        return Err(Error::UndefinedMetric(
            "cka undefined for zero-variance features".into(),
        ));
    }
    Ok(hsic(&k, &l)? / (kk * ll).sqrt())
}

/// CKA between every layer pair of two activation captures; entry (i, j)
/// compares layer i of the first capture with layer j of the second.
pub fn cka_map(a: &ActivationCapture, b: &ActivationCapture) -> Result<Tensor> {
    let (ra, rb) = (a.entries(), b.entries());
    let mut data = Vec::with_capacity(ra.len() * rb.len());
    for (_, fa) in ra {
        for (_, fb) in rb {
            data.push(cka(fa, fb)?);
        }
    }
    Tensor::new(vec![ra.len(), rb.len()], data)
}

/// Per-sample attribution variance across members (population variance,
/// summed over channels and pixels) and its dataset mean.
/// `maps[member][sample]` as produced by the attribution batch op.
pub fn attribution_diversity(maps: &[Vec<AttributionMap>]) -> Result<(Vec<f64>, f64)> {
    let m = maps.len();
    if m < 2 {
        return Err(Error::InvalidConfig("attribution diversity needs at least 2 members".into()));
    }
    let n = maps[0].len();
    if n == 0 || maps.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidShape {
            op: "attribution diversity",
            msg: "members must have equal nonzero sample counts".into(),
        });
    }
    let shape = maps[0][0].scores.shape().to_vec();
    let len = maps[0][0].scores.len();
    let mut per_sample = Vec::with_capacity(n);
    for s in 0..n {
        for member in maps {
            if member[s].scores.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "attribution diversity",
                    lhs: member[s].scores.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
        }
        let mut a = 0.0;
        for p in 0..len {
            let mean: f64 =
                maps.iter().map(|mm| mm[s].scores.data()[p]).sum::<f64>() / m as f64;
            let var: f64 = maps
                .iter()
                .map(|mm| (mm[s].scores.data()[p] - mean).powi(2))
                .sum::<f64>()
                / m as f64;
            a += var;
        }
        per_sample.push(a);
    }
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    Ok((per_sample, mean))
}

/// Ensemble benefit: consensus accuracy minus the best member accuracy.
pub fn improvement(ensemble_acc: f64, member_accs: &[f64]) -> Result<f64> {
    if member_accs.is_empty() {
        return Err(Error::InvalidConfig("improvement needs at least one member accuracy".into()));
    }
    for &a in member_accs.iter().chain(std::iter::once(&ensemble_acc)) {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Domain {
                op: "improvement",
                msg: format!("accuracy {a} outside [0,1]"),
            });
        }
    }
    let best = member_accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(ensemble_acc - best)
}

/// Min-max scale to [0,1]. All-equal inputs map to 0.5 everywhere; the flag
/// reports that degenerate case so callers can warn.
pub fn minmax_normalize(xs: &[f64]) -> Result<(Vec<f64>, bool)> {
    if xs.len() < 2 {
        return Err(Error::InvalidConfig("min-max normalization needs at least 2 values".into()));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "minmax-normalize" });
    }
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok((vec![0.5; xs.len()], true));
    }
    Ok((xs.iter().map(|v| (v - min) / (max - min)).collect(), false))
}

/// Pearson correlation with the least-squares trend line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendReport {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

pub fn pearson_and_trend(x: &[f64], y: &[f64]) -> Result<TrendReport> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::InvalidConfig(format!(
            "trend needs matched samples, n >= 3, got {} and {}",
            n,
            y.len()
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("trend undefined for zero-variance input".into()));
    }
    let slope = sxy / sxx;
    Ok(TrendReport {
        r: sxy / (sxx * syy).sqrt(),
        slope,
        intercept: my - slope * mx,
        n,
    })
}
