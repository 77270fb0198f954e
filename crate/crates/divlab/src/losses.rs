//! Diversity-enforcement loss family: independent members, generalized
//! negative correlation (GNCL) with two curvature modes, the balanced
//! ensemble/member mixture, correctness-masked GNCL, and the
//! attribution-variance penalty loss (which differentiates through an inner
//! backward pass).
//!
//! Base member loss is cross-entropy over softmax throughout. All losses are
//! batch means per member; GNCL's penalty is the batch mean of the per-sample
//! quadratic form.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, Model};
use crate::tensor::Tensor;

/// Curvature matrix used in the GNCL quadratic penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureMode {
    /// `D = 2I` over logits: the classic negative-correlation form.
    MseIdentity,
    /// `D = diag(p) - p p^T` at the averaged softmax output, differences
    /// taken over probability vectors.
    CeSoftmaxHessian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Independent,
    Gncl { lambda: f64, curvature: CurvatureMode },
    Balanced { lambda: f64 },
    GnclMasked { lambda: f64, curvature: CurvatureMode },
    AttributionDiv { lambda: f64 },
}

/// Scalar decomposition of one loss evaluation. `total` stays differentiable;
/// the parts are plain numbers for reporting and recomposition checks.
pub struct LossBreakdown {
    pub total: Var,
    pub member_losses: Vec<f64>,
    pub penalty: f64,
    pub ensemble_loss: Option<f64>,
}

impl LossBreakdown {
    pub fn total_value(&self) -> f64 {
        self.total.item().expect("scalar loss")
    }
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::InvalidShape {
            op: "loss",
            msg: format!("{} labels for {} samples", labels.len(), n),
        });
    }
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
    }
    Ok(())
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = 1.0;
    }
    t
}

/// Mean cross-entropy of `logits` (n x S) against integer labels.
pub fn cross_entropy(logits: &Var, labels: &[usize]) -> Result<Var> {
    let shape = logits.shape();
    let (n, s) = (shape[0], shape[1]);
    check_labels(labels, n, s)?;
    let oh = logits.graph().constant(one_hot(labels, s));
    logits
        .log_softmax()?
        .mul(&oh)?
        .sum()?
        .scale(-1.0 / n as f64)
}

/// Independent member losses; total is the mean over members.
pub fn loss_independent(member_logits: &[Var], labels: &[usize]) -> Result<LossBreakdown> {
    if member_logits.is_empty() {
        return Err(Error::InvalidConfig("need at least one member".into()));
    }
    let losses: Vec<Var> = member_logits
        .iter()
        .map(|l| cross_entropy(l, labels))
        .collect::<Result<_>>()?;
    let mut total = losses[0].clone();
    for l in &losses[1..] {
        total = total.add(l)?;
    }
    let total = total.scale(1.0 / losses.len() as f64)?;
    Ok(LossBreakdown {
        member_losses: losses.iter().map(|l| l.item().unwrap()).collect(),
        penalty: 0.0,
        ensemble_loss: None,
        total,
    })
}

/// Per-member quadratic penalty terms `d_i^T D d_i`, batch-averaged, as vars.
fn gncl_penalty_terms(
    member_logits: &[Var],
    curvature: CurvatureMode,
    mask: Option<&[Tensor]>,
) -> Result<Vec<Var>> {
    let m = member_logits.len();
    let graph = member_logits[0].graph().clone();
    let shape = member_logits[0].shape();
    let n = shape[0];

    let mut mean = member_logits[0].clone();
    for l in &member_logits[1..] {
        mean = mean.add(l)?;
    }
    let mean = mean.scale(1.0 / m as f64)?;

    let mut terms = Vec::with_capacity(m);
    match curvature {
        CurvatureMode::MseIdentity => {
            for (i, l) in member_logits.iter().enumerate() {
                let d = l.sub(&mean)?;
                // d^T (2I) d = 2 |d|^2 per sample
                let mut q = d.mul(&d)?.sum_axis(1)?.scale(2.0)?;
                if let Some(masks) = mask {
                    q = q.mul(&graph.constant(masks[i].clone()))?;
                }
                terms.push(q.scale(1.0 / n as f64)?.sum()?);
            }
        }
        CurvatureMode::CeSoftmaxHessian => {
            let f = mean.softmax()?;
            for (i, l) in member_logits.iter().enumerate() {
                let p = l.softmax()?;
                let d = p.sub(&f)?;
                // d^T (diag(f) - f f^T) d = sum f d^2 - (sum f d)^2
                let fd = f.mul(&d)?;
                let quad = fd.mul(&d)?.sum_axis(1)?;
                let lin = fd.sum_axis(1)?;
                let mut q = quad.sub(&lin.mul(&lin)?)?;
                if let Some(masks) = mask {
                    q = q.mul(&graph.constant(masks[i].clone()))?;
                }
                terms.push(q.scale(1.0 / n as f64)?.sum()?);
            }
        }
    }
    Ok(terms)
}

fn gncl_impl(
    member_logits: &[Var],
    labels: &[usize],
    lambda: f64,
    curvature: CurvatureMode,
    mask: Option<&[Tensor]>,
) -> Result<LossBreakdown> {
    let m = member_logits.len();
    if m < 2 {
        return Err(Error::InvalidConfig("gncl needs at least 2 members".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("gncl lambda must be >= 0, got {lambda}")));
    }
    let losses: Vec<Var> = member_logits
        .iter()
        .map(|l| cross_entropy(l, labels))
        .collect::<Result<_>>()?;
    let mut base = losses[0].clone();
    for l in &losses[1..] {
        base = base.add(l)?;
    }
    let terms = gncl_penalty_terms(member_logits, curvature, mask)?;
    let mut penalty_sum = terms[0].clone();
    for t in &terms[1..] {
        penalty_sum = penalty_sum.add(t)?;
    }
    let penalty = penalty_sum.scale(lambda / (2.0 * m as f64))?;
    let total = base.sub(&penalty)?;
    Ok(LossBreakdown {
        member_losses: losses.iter().map(|l| l.item().unwrap()).collect(),
        penalty: penalty.item().unwrap(),
        ensemble_loss: None,
        total,
    })
}

/// Generalized negative correlation learning loss.
pub fn loss_gncl(
    member_logits: &[Var],
    labels: &[usize],
    lambda: f64,
    curvature: CurvatureMode,
) -> Result<LossBreakdown> {
    gncl_impl(member_logits, labels, lambda, curvature, None)
}

/// GNCL with the penalty zeroed per member-sample wherever that member's
/// argmax disagrees with the label.
pub fn loss_gncl_masked(
    member_logits: &[Var],
    labels: &[usize],
    lambda: f64,
    curvature: CurvatureMode,
) -> Result<LossBreakdown> {
    let masks: Vec<Tensor> = member_logits
        .iter()
        .map(|l| {
            let preds = argmax_rows(&l.value());
            let data: Vec<f64> = preds
                .iter()
                .zip(labels)
                .map(|(p, y)| if p == y { 1.0 } else { 0.0 })
                .collect();
            Tensor::new(vec![labels.len()], data).unwrap()
        })
        .collect();
    gncl_impl(member_logits, labels, lambda, curvature, Some(&masks))
}

/// Convex mixture of ensemble loss (averaged logits) and mean member loss.
pub fn loss_balanced(member_logits: &[Var], labels: &[usize], lambda: f64) -> Result<LossBreakdown> {
    let m = member_logits.len();
    if m < 2 {
        return Err(Error::InvalidConfig("balanced loss needs at least 2 members".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "balanced lambda must be in [0,1], got {lambda}"
        )));
    }
    let losses: Vec<Var> = member_logits
        .iter()
        .map(|l| cross_entropy(l, labels))
        .collect::<Result<_>>()?;
    let mut mean_logits = member_logits[0].clone();
    for l in &member_logits[1..] {
        mean_logits = mean_logits.add(l)?;
    }
    let mean_logits = mean_logits.scale(1.0 / m as f64)?;
    let ens = cross_entropy(&mean_logits, labels)?;
    let mut member_sum = losses[0].clone();
    for l in &losses[1..] {
        member_sum = member_sum.add(l)?;
    }
    let total = ens
        .scale(lambda)?
        .add(&member_sum.scale((1.0 - lambda) / m as f64)?)?;
    Ok(LossBreakdown {
        member_losses: losses.iter().map(|l| l.item().unwrap()).collect(),
        penalty: 0.0,
        ensemble_loss: Some(ens.item().unwrap()),
        total,
    })
}

/// Attribution outputs of the attribution-diversity loss: the differentiable
/// breakdown plus the dataset-mean attribution variance.
pub struct AttributionDivLoss {
    pub breakdown: LossBreakdown,
    pub attribution_variance: f64,
}

/// Mean member cross-entropy minus `lambda` times the attribution variance
/// across members (saliency maps, target = each member's own prediction).
/// Gradients flow through the saliency maps via a nested backward pass.
pub fn loss_attribution_div(
    graph: &Graph,
    members: &[(&Model, &[Var])],
    batch: &Tensor,
    labels: &[usize],
    lambda: f64,
) -> Result<AttributionDivLoss> {
    let m = members.len();
    if m < 2 {
        return Err(Error::InvalidConfig("attribution-div needs at least 2 members".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = batch.shape()[0];

    // one input leaf per member so a single nested backward yields
    // per-member input gradients
    let mut member_losses_v = Vec::with_capacity(m);
    let mut inputs = Vec::with_capacity(m);
    let mut target_sum: Option<Var> = None;
    for (model, params) in members {
        let x = graph.leaf(batch.clone(), true);
        let (logits, _) = model.forward_vars(params, &x)?;
        member_losses_v.push(cross_entropy(&logits, labels)?);
        // saliency target: the member's own predicted class
        let preds = argmax_rows(&logits.value());
        let sel = graph.constant(one_hot(&preds, logits.shape()[1]));
        let s = logits.mul(&sel)?.sum()?;
        target_sum = Some(match target_sum {
            Some(acc) => acc.add(&s)?,
            None => s,
        });
        inputs.push(x);
    }

    let inner = graph.backward(&target_sum.unwrap(), None, true)?;
    let maps: Vec<Var> = inputs
        .iter()
        .map(|x| {
            inner
                .get(x)
                .ok_or_else(|| Error::Other("input did not receive a gradient".into()))?
                .abs()
        })
        .collect::<Result<_>>()?;

    let stacked = Var::stack(&maps)?;
    let var = stacked.variance_axis0()?;
    let chw: usize = var.shape().iter().skip(1).product();
    let attribution_variance = var
        .reshape(&[n, chw])?
        .sum_axis(1)?
        .mean()?;
    let a_value = attribution_variance.item()?;
    if !a_value.is_finite() {
        return Err(Error::NonFinite { op: "attribution variance" });
    }

    let mut base = member_losses_v[0].clone();
    for l in &member_losses_v[1..] {
        base = base.add(l)?;
    }
    let base = base.scale(1.0 / m as f64)?;
    let penalty = attribution_variance.scale(lambda)?;
    let total = base.sub(&penalty)?;
    Ok(AttributionDivLoss {
        breakdown: LossBreakdown {
            member_losses: member_losses_v.iter().map(|l| l.item().unwrap()).collect(),
            penalty: penalty.item().unwrap(),
            ensemble_loss: None,
            total,
        },
        attribution_variance: a_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchKind, ModelSpec};

    fn logits_var(graph: &Graph, rows: Vec<Vec<f64>>) -> Var {
        let n = rows.len();
        let s = rows[0].len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        graph.leaf(Tensor::new(vec![n, s], data).unwrap(), false)
    }

    #[test]
    fn uniform_logits_give_ln_s() {
        let g = Graph::new();
        let l = logits_var(&g, vec![vec![0.0; 4]; 3]);
        let b = loss_independent(&[l], &[0, 1, 2]).unwrap();
        assert!((b.total_value() - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_near_zero_ce() {
        let g = Graph::new();
        let l = logits_var(&g, vec![vec![50.0, 0.0], vec![0.0, 50.0]]);
        let b = loss_independent(&[l], &[0, 1]).unwrap();
        assert!(b.total_value() < 1e-12);
    }

    #[test]
    fn independent_total_is_mean_of_member_ces() {
        let g = Graph::new();
        let ls: Vec<Var> = (0..3)
            .map(|i| {
                logits_var(
                    &g,
                    vec![vec![0.3 * i as f64, -0.1, 1.2], vec![0.5, 0.2 * i as f64, -0.4]],
                )
            })
            .collect();
        let b = loss_independent(&ls, &[2, 0]).unwrap();
        let mean: f64 = b.member_losses.iter().sum::<f64>() / 3.0;
        assert!((b.total_value() - mean).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let g = Graph::new();
        let l = logits_var(&g, vec![vec![0.0, 0.0]]);
        assert!(matches!(
            loss_independent(&[l], &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn gncl_lambda_zero_is_sum_of_member_losses() {
        let g = Graph::new();
        let ls = vec![
            logits_var(&g, vec![vec![0.4, -0.2], vec![1.0, 0.3]]),
            logits_var(&g, vec![vec![-0.3, 0.8], vec![0.1, -0.6]]),
        ];
        let b = loss_gncl(&ls, &[0, 1], 0.0, CurvatureMode::CeSoftmaxHessian).unwrap();
        let sum: f64 = b.member_losses.iter().sum();
        assert!((b.total_value() - sum).abs() < 1e-12);
        assert_eq!(b.penalty, 0.0);
    }

    #[test]
    fn gncl_identical_members_zero_penalty() {
        let g = Graph::new();
        let a = logits_var(&g, vec![vec![0.4, -0.2, 1.1]]);
        let b_ = logits_var(&g, vec![vec![0.4, -0.2, 1.1]]);
        let b = loss_gncl(&[a, b_], &[0], 0.7, CurvatureMode::MseIdentity).unwrap();
        assert!(b.penalty.abs() < 1e-15);
    }

    #[test]
    fn gncl_scalar_penalty_hand_value() {
        // M=2, single "class", h=(0,2), f=1, D=2I: penalty = (lambda/4)(2+2) = lambda
        let g = Graph::new();
        let lambda = 0.37;
        let a = logits_var(&g, vec![vec![0.0]]);
        let b_ = logits_var(&g, vec![vec![2.0]]);
        let b = loss_gncl(&[a, b_], &[0], lambda, CurvatureMode::MseIdentity).unwrap();
        assert!((b.penalty - lambda).abs() < 1e-12);
    }

    #[test]
    fn gncl_mse_penalty_nonnegative() {
        let g = Graph::new();
        let ls = vec![
            logits_var(&g, vec![vec![0.9, -0.7, 0.2], vec![0.1, 0.4, -0.9]]),
            logits_var(&g, vec![vec![-0.2, 0.5, 0.8], vec![1.2, -0.3, 0.0]]),
            logits_var(&g, vec![vec![0.3, 0.3, -0.1], vec![-0.5, 0.6, 0.7]]),
        ];
        let with = loss_gncl(&ls, &[0, 2], 0.4, CurvatureMode::MseIdentity).unwrap();
        let without = loss_gncl(&ls, &[0, 2], 0.0, CurvatureMode::MseIdentity).unwrap();
        assert!(with.penalty >= 0.0);
        assert!(with.total_value() <= without.total_value());
    }

    #[test]
    fn balanced_reductions_and_mixture() {
        let g = Graph::new();
        let ls = vec![
            logits_var(&g, vec![vec![0.7, -0.4], vec![0.2, 0.9]]),
            logits_var(&g, vec![vec![-0.1, 0.3], vec![1.1, -0.2]]),
        ];
        let b0 = loss_balanced(&ls, &[0, 1], 0.0).unwrap();
        let mean: f64 = b0.member_losses.iter().sum::<f64>() / 2.0;
        assert!((b0.total_value() - mean).abs() < 1e-12);

        let b1 = loss_balanced(&ls, &[0, 1], 1.0).unwrap();
        assert!((b1.total_value() - b1.ensemble_loss.unwrap()).abs() < 1e-12);

        let bh = loss_balanced(&ls, &[0, 1], 0.5).unwrap();
        let expect = 0.5 * bh.ensemble_loss.unwrap() + 0.5 * mean;
        assert!((bh.total_value() - expect).abs() < 1e-12);

        assert!(loss_balanced(&ls, &[0, 1], 1.5).is_err());
    }

    #[test]
    fn masked_gncl_limits() {
        let g = Graph::new();
        // member 0 correct on both samples, member 1 wrong on both
        let ls = vec![
            logits_var(&g, vec![vec![2.0, 0.0], vec![0.0, 2.0]]),
            logits_var(&g, vec![vec![0.0, 2.0], vec![2.0, 0.0]]),
        ];
        let labels = [0usize, 1];

        // all-correct clone ensemble: mask empty, equals plain gncl
        let both_right = vec![
            logits_var(&g, vec![vec![2.0, 0.0], vec![0.0, 2.0]]),
            logits_var(&g, vec![vec![3.0, 0.0], vec![0.0, 1.0]]),
        ];
        let masked = loss_gncl_masked(&both_right, &labels, 0.5, CurvatureMode::MseIdentity).unwrap();
        let plain = loss_gncl(&both_right, &labels, 0.5, CurvatureMode::MseIdentity).unwrap();
        assert!((masked.total_value() - plain.total_value()).abs() < 1e-12);

        // all members wrong on every sample -> penalty fully masked
        let both_wrong = vec![
            logits_var(&g, vec![vec![0.0, 2.0], vec![2.0, 0.0]]),
            logits_var(&g, vec![vec![0.0, 3.0], vec![1.0, 0.0]]),
        ];
        let masked = loss_gncl_masked(&both_wrong, &labels, 0.5, CurvatureMode::MseIdentity).unwrap();
        assert!(masked.penalty.abs() < 1e-15);

        // mixed correctness: brute-force recompute with an explicit mask
        let mixed = vec![ls[0].clone(), ls[1].clone(), logits_var(&g, vec![vec![2.0, 0.0], vec![1.0, 0.0]])];
        let masked = loss_gncl_masked(&mixed, &labels, 0.8, CurvatureMode::MseIdentity).unwrap();
        let brute = brute_masked_penalty(&mixed, &labels, 0.8);
        assert!((masked.penalty - brute).abs() < 1e-12);
    }

    fn brute_masked_penalty(ls: &[Var], labels: &[usize], lambda: f64) -> f64 {
        let m = ls.len();
        let vals: Vec<Tensor> = ls.iter().map(|l| l.value()).collect();
        let n = vals[0].shape()[0];
        let s = vals[0].shape()[1];
        let mut sum = 0.0;
        for i in 0..m {
            let preds = argmax_rows(&vals[i]);
            let mut term = 0.0;
            for row in 0..n {
                if preds[row] != labels[row] {
                    continue;
                }
                let mut q = 0.0;
                for c in 0..s {
                    let f: f64 = (0..m).map(|j| vals[j].data()[row * s + c]).sum::<f64>() / m as f64;
                    let d = vals[i].data()[row * s + c] - f;
                    q += 2.0 * d * d;
                }
                term += q;
            }
            sum += term / n as f64;
        }
        lambda / (2.0 * m as f64) * sum
    }

    fn linear_member(seed: u64) -> Model {
        Model::build(ModelSpec {
            arch: ArchKind::Mlp { hidden: vec![] },
            input: (1, 1, 3),
            classes: 2,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn attribution_div_reductions() {
        let g = Graph::new();
        let m1 = linear_member(1);
        let m2 = linear_member(2);
        let batch = Tensor::new(vec![2, 3], vec![0.5, -0.2, 1.0, -0.8, 0.3, 0.1]).unwrap();
        let labels = [0usize, 1];
        let p1 = m1.bind(&g, true);
        let p2 = m2.bind(&g, true);
        let out = loss_attribution_div(&g, &[(&m1, &p1), (&m2, &p2)], &batch, &labels, 0.0).unwrap();
        // lambda = 0 -> mean member CE exactly
        let mean: f64 = out.breakdown.member_losses.iter().sum::<f64>() / 2.0;
        assert!((out.breakdown.total_value() - mean).abs() < 1e-12);

        // identical members -> zero variance
        let g = Graph::new();
        let m3 = linear_member(5);
        let m4 = linear_member(5);
        let p3 = m3.bind(&g, true);
        let p4 = m4.bind(&g, true);
        let out = loss_attribution_div(&g, &[(&m3, &p3), (&m4, &p4)], &batch, &labels, 1.0).unwrap();
        assert!(out.attribution_variance.abs() < 1e-15);
    }

    #[test]
    fn attribution_div_closed_form_linear() {
        // for linear members, saliency per sample = |w[:, predicted]|;
        // A = mean over samples of sum_p ((|a1|-|a2|)/2)^2 * 2 terms (M=2 pop var)
        let g = Graph::new();
        let m1 = linear_member(11);
        let m2 = linear_member(12);
        let batch = Tensor::new(vec![2, 3], vec![0.5, -0.2, 1.0, -0.8, 0.3, 0.1]).unwrap();
        let labels = [0usize, 1];
        let p1 = m1.bind(&g, true);
        let p2 = m2.bind(&g, true);
        let lambda = 0.25;
        let out =
            loss_attribution_div(&g, &[(&m1, &p1), (&m2, &p2)], &batch, &labels, lambda).unwrap();

        let w1 = &m1.params()[0].1;
        let w2 = &m2.params()[0].1;
        let pred = |m: &Model| m.predict(&batch).unwrap();
        let (pr1, pr2) = (pred(&m1), pred(&m2));
        let mut a = 0.0;
        for row in 0..2 {
            for p in 0..3 {
                let a1 = w1.data()[p * 2 + pr1[row]].abs();
                let a2 = w2.data()[p * 2 + pr2[row]].abs();
                let mu = 0.5 * (a1 + a2);
                a += ((a1 - mu).powi(2) + (a2 - mu).powi(2)) / 2.0;
            }
        }
        a /= 2.0; // mean over samples
        assert!((out.attribution_variance - a).abs() < 1e-10);
        let mean_ce: f64 = out.breakdown.member_losses.iter().sum::<f64>() / 2.0;
        assert!((out.breakdown.total_value() - (mean_ce - lambda * a)).abs() < 1e-10);
    }
}
