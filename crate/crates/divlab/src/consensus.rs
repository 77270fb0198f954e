//! Ensemble prediction aggregation: logit averaging, elementwise median,
//! geometric mean over softmax probabilities, and majority vote with seeded
//! random tie-breaking.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::argmax_rows;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusKind {
    Average,
    Median,
    GeometricMean,
    Vote,
}

impl ConsensusKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Self::Average),
            "median" => Ok(Self::Median),
            "geometric-mean" => Ok(Self::GeometricMean),
            "vote" => Ok(Self::Vote),
            other => Err(Error::InvalidConfig(format!("unknown consensus kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Average => "average",
            Self::Median => "median",
            Self::GeometricMean => "geometric-mean",
            Self::Vote => "vote",
        }
    }
}

/// Consensus scores (n x S) and the predicted class per sample. For vote the
/// scores are raw per-class vote counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutput {
    pub scores: Tensor,
    pub predictions: Vec<usize>,
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, s) = (logits.shape()[0], logits.shape()[1]);
    let mut out = logits.clone();
    for r in 0..n {
        let row = &logits.data()[r * s..(r + 1) * s];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in 0..s {
            let e = (row[c] - max).exp();
            out.data_mut()[r * s + c] = e;
            z += e;
        }
        for c in 0..s {
            out.data_mut()[r * s + c] /= z;
        }
    }
    out
}

const EPS: f64 = 1e-12;

/// Mixes the run seed with a sample index into an independent RNG stream, so
/// tie resolution is reproducible and independent of evaluation order.
pub fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(sample as u64),
    )
}

/// Combine member logits (each n x S, identical shapes) into one consensus.
/// `seed` only affects vote tie-breaking.
pub fn combine(member_logits: &[Tensor], kind: ConsensusKind, seed: u64) -> Result<ConsensusOutput> {
    let m = member_logits.len();
    if m == 0 {
        return Err(Error::InvalidConfig("consensus needs at least one member".into()));
    }
    let shape = member_logits[0].shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::InvalidShape {
            op: "consensus",
            msg: format!("logits must be (n, classes), got {shape:?}"),
        });
    }
    for l in member_logits {
        if l.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "consensus",
                lhs: l.shape().to_vec(),
                rhs: shape,
            });
        }
    }
    let (n, s) = (shape[0], shape[1]);

    let scores = match kind {
        ConsensusKind::Average => {
            let mut acc = member_logits[0].clone();
            for l in &member_logits[1..] {
                acc = acc.add(l)?;
            }
            acc.map(|v| v / m as f64)
        }
        ConsensusKind::Median => {
            let mut out = Tensor::zeros(&shape);
            let mut vals = vec![0.0; m];
            for p in 0..n * s {
                for (i, l) in member_logits.iter().enumerate() {
                    vals[i] = l.data()[p];
                }
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out.data_mut()[p] = if m % 2 == 1 {
                    vals[m / 2]
                } else {
                    0.5 * (vals[m / 2 - 1] + vals[m / 2])
                };
            }
            out
        }
        ConsensusKind::GeometricMean => {
            let mut acc = Tensor::zeros(&shape);
            for l in member_logits {
                let p = softmax_rows(l);
                for i in 0..n * s {
                    acc.data_mut()[i] += p.data()[i].max(EPS).ln();
                }
            }
            let mut out = acc.map(|v| (v / m as f64).exp());
            for r in 0..n {
                let z: f64 = out.data()[r * s..(r + 1) * s].iter().sum();
                for c in 0..s {
                    out.data_mut()[r * s + c] /= z;
                }
            }
            out
        }
        ConsensusKind::Vote => {
            let mut counts = Tensor::zeros(&shape);
            for l in member_logits {
                for (r, cls) in argmax_rows(l).into_iter().enumerate() {
                    counts.data_mut()[r * s + cls] += 1.0;
                }
            }
            counts
        }
    };

    let predictions = match kind {
        ConsensusKind::Vote => {
            let mut preds = Vec::with_capacity(n);
            for r in 0..n {
                let row = &scores.data()[r * s..(r + 1) * s];
                let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let tied: Vec<usize> =
                    (0..s).filter(|&c| row[c] == best).collect();
                let pick = if tied.len() == 1 {
                    tied[0]
                } else {
                    tied[sample_rng(seed, r).random_range(0..tied.len())]
                };
                preds.push(pick);
            }
            preds
        }
        _ => argmax_rows(&scores),
    };

    Ok(ConsensusOutput { scores, predictions })
}
