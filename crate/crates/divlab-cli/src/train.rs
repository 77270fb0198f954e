//! Ensemble training: joint optimization for the diversity losses, the
//! independent baseline as a degenerate case, per-epoch logging, and final
//! plus best-epoch checkpoints.

use anyhow::{anyhow, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use divlab::autodiff::Graph;
use divlab::checkpoint::save_model;
use divlab::consensus::{combine, ConsensusKind};
use divlab::data::{gen_shapes, Dataset};
use divlab::losses::{
    loss_attribution_div, loss_balanced, loss_gncl, loss_gncl_masked, LossKind,
};
use divlab::nn::Model;
use divlab::optim::Optimizer;
use divlab::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub penalty: f64,
    pub member_val_acc: Vec<f64>,
    pub ensemble_val_acc: f64,
}

pub struct TrainOutcome {
    pub final_models: Vec<Model>,
    pub best_models: Vec<Model>,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
    pub train: Dataset,
    pub val: Dataset,
}

/// Fisher-Yates shuffle driven by a per-epoch RNG stream.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64),
    );
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Member accuracies and consensus accuracy on a dataset.
pub fn evaluate_accuracy(
    models: &[Model],
    ds: &Dataset,
    kind: ConsensusKind,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let n = ds.len() as f64;
    let mut logits = Vec::with_capacity(models.len());
    let mut member_accs = Vec::with_capacity(models.len());
    for m in models {
        let out = m.forward(&ds.images)?;
        let preds = divlab::nn::argmax_rows(&out);
        let correct = preds.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
        member_accs.push(correct as f64 / n);
        logits.push(out);
    }
    let cons = combine(&logits, kind, seed)?;
    let correct = cons
        .predictions
        .iter()
        .zip(&ds.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok((member_accs, correct as f64 / n))
}

/// One training step over a batch; returns (total loss, penalty).
fn train_step(
    models: &mut [Model],
    optimizers: &mut [Optimizer],
    kind: &LossKind,
    batch: &Dataset,
    lr: f64,
    epoch: usize,
) -> Result<(f64, f64)> {
    let graph = Graph::new();
    let m = models.len();
    let bound: Vec<Vec<divlab::Var>> = models.iter().map(|md| md.bind(&graph, true)).collect();

    let (total, penalty) = match kind {
        LossKind::AttributionDiv { lambda } => {
            let pairs: Vec<(&Model, &[divlab::Var])> = models
                .iter()
                .zip(&bound)
                .map(|(md, vars)| (md, vars.as_slice()))
                .collect();
            let out = loss_attribution_div(&graph, &pairs, &batch.images, &batch.labels, *lambda)?;
            (out.breakdown.total, out.breakdown.penalty)
        }
        _ => {
            let x = graph.constant(batch.images.clone());
            let mut logits = Vec::with_capacity(m);
            for (md, vars) in models.iter().zip(&bound) {
                let (l, _) = md.forward_vars(vars, &x)?;
                logits.push(l);
            }
            match kind {
                LossKind::Independent => {
                    // optimize the sum of member losses: same per-member
                    // gradients as fully separate runs, and bit-identical to
                    // the gncl base term
                    let mut total = divlab::losses::cross_entropy(&logits[0], &batch.labels)?;
                    for l in &logits[1..] {
                        total = total.add(&divlab::losses::cross_entropy(l, &batch.labels)?)?;
                    }
                    (total, 0.0)
                }
                LossKind::Gncl { lambda, curvature } => {
                    let b = loss_gncl(&logits, &batch.labels, *lambda, *curvature)?;
                    (b.total, b.penalty)
                }
                LossKind::GnclMasked { lambda, curvature } => {
                    let b = loss_gncl_masked(&logits, &batch.labels, *lambda, *curvature)?;
                    (b.total, b.penalty)
                }
                LossKind::Balanced { lambda } => {
                    let b = loss_balanced(&logits, &batch.labels, *lambda)?;
                    (b.total, 0.0)
                }
                LossKind::AttributionDiv { .. } => unreachable!(),
            }
        }
    };

    let loss_value = total.item()?;
    if !loss_value.is_finite() {
        return Err(Error::Diverged {
            epoch,
            msg: format!("loss became {loss_value}"),
        }
        .into());
    }
    let grads = graph.backward(&total, None, false)?;
    for ((md, vars), opt) in models.iter_mut().zip(&bound).zip(optimizers.iter_mut()) {
        let g: Vec<divlab::Tensor> = md
            .params()
            .iter()
            .zip(vars)
            .map(|((_, t), v)| {
                grads
                    .tensor(v)
                    .unwrap_or_else(|| divlab::Tensor::zeros(t.shape()))
            })
            .collect();
        opt.step(md.params_mut(), &g, lr).map_err(|e| match e {
            Error::NonFiniteGradient { name } => Error::Diverged {
                epoch,
                msg: format!("non-finite gradient for `{name}`"),
            },
            other => other,
        })?;
    }
    Ok((loss_value, penalty))
}

/// Train the configured ensemble; the dataset comes from the config's
/// generation seed, optimization from the run seed.
pub fn train_ensemble(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = &cfg.dataset;
    let full = gen_shapes(d.samples, d.classes, (d.channels, d.height, d.width), d.seed)?;
    let (train, val) = full.split_train_val(d.val_fraction)?;

    let mut models: Vec<Model> = cfg
        .model_specs()
        .into_iter()
        .map(Model::build)
        .collect::<divlab::Result<_>>()?;
    let optim_cfg = cfg.optimizer()?;
    let mut optimizers: Vec<Optimizer> = (0..models.len())
        .map(|_| Optimizer::new(optim_cfg.clone()))
        .collect::<divlab::Result<_>>()?;
    let loss_kind = cfg.loss_kind()?;

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_models = models.clone();

    for epoch in 0..cfg.epochs {
        let lr = optim_cfg.lr_at_epoch(epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut penalty_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.subset(chunk, "batch")?;
            let (l, p) =
                train_step(&mut models, &mut optimizers, &loss_kind, &batch, lr, epoch)?;
            loss_sum += l;
            penalty_sum += p;
            batches += 1;
        }
        let (member_val_acc, ensemble_val_acc) =
            evaluate_accuracy(&models, &val, ConsensusKind::Average, cfg.seed)?;
        if ensemble_val_acc > best_acc {
            best_acc = ensemble_val_acc;
            best_epoch = epoch;
            best_models = models.clone();
        }
        logs.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            penalty: penalty_sum / batches as f64,
            member_val_acc,
            ensemble_val_acc,
        });
    }

    Ok(TrainOutcome { final_models: models, best_models, best_epoch, logs, train, val })
}

/// Write checkpoints (final and best epoch per member) and the epoch log CSV.
pub fn write_outcome(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, m) in outcome.final_models.iter().enumerate() {
        save_model(m, &dir.join(format!("member{i}_final.ckpt")))?;
    }
    for (i, m) in outcome.best_models.iter().enumerate() {
        save_model(m, &dir.join(format!("member{i}_best.ckpt")))?;
    }
    let mut csv = String::from("epoch,lr,train_loss,penalty,ensemble_val_acc");
    let members = outcome.final_models.len();
    for i in 0..members {
        csv.push_str(&format!(",member{i}_val_acc"));
    }
    csv.push('\n');
    for log in &outcome.logs {
        csv.push_str(&format!(
            "{},{:.10},{:.10},{:.10},{:.10}",
            log.epoch, log.lr, log.train_loss, log.penalty, log.ensemble_val_acc
        ));
        for acc in &log.member_val_acc {
            csv.push_str(&format!(",{acc:.10}"));
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("train_log.csv"), csv)?;
    std::fs::write(
        dir.join("best_epoch.txt"),
        format!("{}\n", outcome.best_epoch),
    )?;
    Ok(())
}

/// Load the members written by `write_outcome`.
pub fn load_members(dir: &Path, which: &str) -> Result<Vec<Model>> {
    let mut models = Vec::new();
    for i in 0.. {
        let path = dir.join(format!("member{i}_{which}.ckpt"));
        if !path.exists() {
            break;
        }
        models.push(divlab::checkpoint::load_model(&path)?);
    }
    if models.is_empty() {
        return Err(anyhow!("no `{which}` checkpoints found in {}", dir.display()));
    }
    Ok(models)
}
