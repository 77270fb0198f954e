//! Ensemble evaluation over clean and corrupted splits: prediction logs,
//! per-dataset report rows with accuracy and diversity metrics, and the
//! cross-method attribution comparison.

use anyhow::{bail, Result};

use divlab::attribution::{attribution_batch, AttribMethod, TargetPolicy};
use divlab::consensus::{combine, ConsensusKind};
use divlab::corrupt::{corrupt, CorruptionSpec};
use divlab::data::Dataset;
use divlab::metrics::{
    attribution_diversity, disagreement, minmax_normalize, pearson_and_trend,
    shannon_equitability, ShannonReport,
};
use divlab::nn::{argmax_rows, EnsembleModel, Model};

/// Dataset with a report label ("clean", "lines-1.6", ...).
pub struct NamedDataset {
    pub name: String,
    pub ds: Dataset,
}

/// The clean validation split plus one corrupted copy per spec.
pub fn dataset_suite(val: &Dataset, specs: &[CorruptionSpec]) -> Result<Vec<NamedDataset>> {
    let mut out = vec![NamedDataset { name: "clean".into(), ds: val.clone() }];
    for spec in specs {
        out.push(NamedDataset {
            name: format!("{}-{}", spec.kind.name(), spec.strength),
            ds: corrupt(val, spec)?,
        });
    }
    Ok(out)
}

/// One row of the ensemble report: accuracies, improvement, and diversity
/// metrics for a (member set, dataset, consensus) cell.
#[derive(Debug, Clone)]
pub struct EnsembleReportRow {
    pub members: String,
    pub dataset: String,
    pub consensus: String,
    pub param_count: usize,
    pub ensemble_acc: f64,
    pub top_member_acc: f64,
    pub improvement: f64,
    pub mean_member_acc: f64,
    pub disagreement: f64,
    pub attribution_div: f64,
    pub shannon: ShannonReport,
}

/// One prediction log record.
#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub dataset: String,
    pub consensus: String,
    pub sample: usize,
    pub label: usize,
    pub member_preds: Vec<usize>,
    pub consensus_pred: usize,
}

/// How many samples attribution metrics use (saliency over the whole split
/// is wasteful and adds nothing at desk scale).
pub const ATTRIB_SAMPLES: usize = 32;

pub fn evaluate_ensemble(
    models: &[Model],
    member_ids: &[usize],
    suite: &[NamedDataset],
    kinds: &[ConsensusKind],
    seed: u64,
) -> Result<(Vec<PredictionRecord>, Vec<EnsembleReportRow>)> {
    if models.is_empty() {
        bail!("evaluation needs at least one model");
    }
    let members_tag = member_ids
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("+");
    let param_count: usize = models.iter().map(|m| m.param_count()).sum();

    let mut log = Vec::new();
    let mut rows = Vec::new();
    for named in suite {
        let ds = &named.ds;
        let n = ds.len();
        let logits: Vec<_> = models
            .iter()
            .map(|m| m.forward(&ds.images))
            .collect::<divlab::Result<_>>()?;
        let preds: Vec<Vec<usize>> = logits.iter().map(argmax_rows).collect();
        let correctness: Vec<Vec<bool>> = preds
            .iter()
            .map(|p| p.iter().zip(&ds.labels).map(|(a, y)| a == y).collect())
            .collect();
        let member_accs: Vec<f64> = correctness
            .iter()
            .map(|c| c.iter().filter(|&&b| b).count() as f64 / n as f64)
            .collect();
        let top = member_accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = member_accs.iter().sum::<f64>() / member_accs.len() as f64;

        // pairwise disagreement averaged over member pairs (0 for M=1)
        let dis = if models.len() >= 2 {
            let m = models.len();
            let mut sum = 0.0;
            let mut pairs = 0.0;
            for i in 0..m {
                for j in i + 1..m {
                    sum += disagreement(&correctness[i], &correctness[j])?;
                    pairs += 1.0;
                }
            }
            sum / pairs
        } else {
            0.0
        };

        // saliency-based attribution diversity on a fixed prefix
        let attrib = if models.len() >= 2 {
            let take: Vec<usize> = (0..n.min(ATTRIB_SAMPLES)).collect();
            let subset = ds.subset(&take, "attrib")?;
            let ens = EnsembleModel::new(models.to_vec())?;
            let maps = attribution_batch(
                &ens,
                &subset.images,
                AttribMethod::Saliency,
                TargetPolicy::Predicted,
                None,
            )?;
            attribution_diversity(&maps)?.1
        } else {
            0.0
        };

        for &kind in kinds {
            let cons = combine(&logits, kind, seed)?;
            let ens_correct: Vec<bool> = cons
                .predictions
                .iter()
                .zip(&ds.labels)
                .map(|(p, y)| p == y)
                .collect();
            let ens_acc =
                ens_correct.iter().filter(|&&b| b).count() as f64 / n as f64;

            let shannon = if models.len() >= 2 {
                shannon_equitability(&preds, &ens_correct)?
            } else {
                ShannonReport {
                    overall: 0.0,
                    consensus_correct: None,
                    consensus_incorrect: None,
                }
            };

            for s in 0..n {
                log.push(PredictionRecord {
                    dataset: named.name.clone(),
                    consensus: kind.name().into(),
                    sample: s,
                    label: ds.labels[s],
                    member_preds: preds.iter().map(|p| p[s]).collect(),
                    consensus_pred: cons.predictions[s],
                });
            }
            rows.push(EnsembleReportRow {
                members: members_tag.clone(),
                dataset: named.name.clone(),
                consensus: kind.name().into(),
                param_count,
                ensemble_acc: ens_acc,
                top_member_acc: top,
                improvement: ens_acc - top,
                mean_member_acc: mean,
                disagreement: dis,
                attribution_div: attrib,
                shannon,
            });
        }
    }
    Ok((log, rows))
}

/// Cross-method attribution comparison over a model pool: per model pair a
/// normalized diversity score under each method, plus the Pearson
/// correlation matrix between methods.
pub struct AttribCompare {
    pub methods: Vec<String>,
    /// pair labels "i+j" in lexicographic pair order
    pub pairs: Vec<String>,
    /// `scores[method][pair]`, min-max normalized over pairs
    pub scores: Vec<Vec<f64>>,
    /// `correlation[a][b]` over methods
    pub correlation: Vec<Vec<f64>>,
    pub mean_pairwise_correlation: f64,
}

pub fn method_name(m: &AttribMethod) -> String {
    match m {
        AttribMethod::Saliency => "saliency".into(),
        AttribMethod::IntegratedGradients { steps } => format!("ig-{steps}"),
    }
}

pub fn attrib_compare(
    pool: &[Model],
    ds: &Dataset,
    methods: &[AttribMethod],
    samples: usize,
) -> Result<AttribCompare> {
    if pool.len() < 2 {
        bail!("attribution comparison needs at least 2 models");
    }
    if methods.is_empty() {
        bail!("attribution comparison needs at least one method");
    }
    let take: Vec<usize> = (0..ds.len().min(samples)).collect();
    let subset = ds.subset(&take, "attrib")?;

    let mut pairs = Vec::new();
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            pairs.push((i, j));
        }
    }

    // per method, maps for every pool member once, then pair scores
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(methods.len());
    for method in methods {
        let ens = EnsembleModel::new(pool.to_vec())?;
        let maps = attribution_batch(
            &ens,
            &subset.images,
            *method,
            TargetPolicy::Predicted,
            None,
        )?;
        let mut scores = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let pair_maps = vec![maps[i].clone(), maps[j].clone()];
            scores.push(attribution_diversity(&pair_maps)?.1);
        }
        raw.push(scores);
    }

    let scores: Vec<Vec<f64>> = raw
        .iter()
        .map(|s| Ok(minmax_normalize(s)?.0))
        .collect::<Result<_>>()?;

    let k = methods.len();
    let mut correlation = vec![vec![1.0; k]; k];
    let mut sum = 0.0;
    let mut cnt = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            let r = pearson_and_trend(&scores[a], &scores[b])?.r;
            correlation[a][b] = r;
            correlation[b][a] = r;
            sum += r;
            cnt += 1.0;
        }
    }
    Ok(AttribCompare {
        methods: methods.iter().map(method_name).collect(),
        pairs: pairs.iter().map(|(i, j)| format!("{i}+{j}")).collect(),
        scores,
        correlation,
        mean_pairwise_correlation: if cnt > 0.0 { sum / cnt } else { 1.0 },
    })
}
