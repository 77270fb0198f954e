//! Input-feature attribution: saliency maps and integrated gradients.
//!
//! Saliency is the absolute input gradient of one target-class logit.
//! Integrated gradients averages the input gradient along the straight path
//! from a baseline image to the sample (right-endpoint Riemann sum) and
//! scales by the displacement, so it is exact on linear models for any step
//! count. Maps are left unnormalized; normalization happens at metric time.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::losses::one_hot;
use crate::nn::{EnsembleModel, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttribMethod {
    Saliency,
    IntegratedGradients { steps: usize },
}

/// Which class logit a member's maps are taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetPolicy {
    /// Each member's own predicted class (default: comparable maps even on
    /// misclassified samples).
    Predicted,
    /// The ground-truth label.
    Label,
}

/// One attribution map: scores shaped like the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub scores: Tensor,
    pub target: usize,
    pub method: AttribMethod,
}

fn input_shape(model: &Model) -> Vec<usize> {
    let (c, h, w) = model.spec().input;
    vec![c, h, w]
}

fn check_targets(model: &Model, targets: &[usize]) -> Result<()> {
    let classes = model.spec().classes;
    for &t in targets {
        if t >= classes {
            return Err(Error::LabelOutOfRange { label: t, classes });
        }
    }
    Ok(())
}

/// Gradient of the per-sample target logit w.r.t. the input batch (n,C,H,W).
/// Rows are independent, so one backward of the summed selected logits gives
/// each sample its own gradient.
fn input_gradient(model: &Model, batch: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let graph = Graph::new();
    let params = model.bind(&graph, false);
    let x = graph.leaf(batch.clone(), true);
    let (logits, _) = model.forward_vars(&params, &x)?;
    let sel = graph.constant(one_hot(targets, model.spec().classes));
    let score = logits.mul(&sel)?.sum()?;
    let grads = graph.backward(&score, None, false)?;
    grads
        .tensor(&x)
        .ok_or_else(|| Error::Other("input did not receive a gradient".into()))
}

fn as_batch(model: &Model, sample: &Tensor) -> Result<Tensor> {
    let want = input_shape(model);
    if sample.shape() == want.as_slice() {
        let mut shape = vec![1];
        shape.extend_from_slice(&want);
        sample.reshape(&shape)
    } else if sample.shape().len() == want.len() + 1
        && sample.shape()[1..] == want[..]
    {
        Ok(sample.clone())
    } else {
        Err(Error::ShapeMismatch { op: "attribution", lhs: sample.shape().to_vec(), rhs: want })
    }
}

/// Saliency maps for a batch: |d logit_target / d input| per sample.
pub fn saliency_batch(model: &Model, batch: &Tensor, targets: &[usize]) -> Result<Vec<AttributionMap>> {
    check_targets(model, targets)?;
    let batch = as_batch(model, batch)?;
    let grad = input_gradient(model, &batch, targets)?;
    split_maps(&grad.map(f64::abs), targets, AttribMethod::Saliency)
}

/// Saliency map of one sample.
pub fn saliency(model: &Model, sample: &Tensor, target: usize) -> Result<AttributionMap> {
    Ok(saliency_batch(model, sample, &[target])?.remove(0))
}

/// Integrated gradients for a batch against a shared baseline image.
pub fn integrated_gradients_batch(
    model: &Model,
    batch: &Tensor,
    baseline: &Tensor,
    targets: &[usize],
    steps: usize,
) -> Result<Vec<AttributionMap>> {
    if steps < 1 {
        return Err(Error::InvalidConfig("integrated gradients needs steps >= 1".into()));
    }
    check_targets(model, targets)?;
    let batch = as_batch(model, batch)?;
    let n = batch.shape()[0];
    let base = as_batch(model, baseline)?;
    let base = if base.shape()[0] == n {
        base
    } else if base.shape()[0] == 1 {
        base.broadcast_to(batch.shape())?
    } else {
        return Err(Error::ShapeMismatch {
            op: "integrated gradients baseline",
            lhs: baseline.shape().to_vec(),
            rhs: batch.shape().to_vec(),
        });
    };
    let disp = batch.sub(&base)?;
    let mut acc = Tensor::zeros(batch.shape());
    for k in 1..=steps {
        let alpha = k as f64 / steps as f64;
        let point = base.add(&disp.map(|v| v * alpha))?;
        let g = input_gradient(model, &point, targets)?;
        acc = acc.add(&g)?;
    }
    let maps = acc.map(|v| v / steps as f64).mul(&disp)?;
    split_maps(&maps, targets, AttribMethod::IntegratedGradients { steps })
}

/// Integrated gradients for one sample.
pub fn integrated_gradients(
    model: &Model,
    sample: &Tensor,
    baseline: &Tensor,
    target: usize,
    steps: usize,
) -> Result<AttributionMap> {
    Ok(integrated_gradients_batch(model, sample, baseline, &[target], steps)?.remove(0))
}

fn split_maps(batch: &Tensor, targets: &[usize], method: AttribMethod) -> Result<Vec<AttributionMap>> {
    let n = batch.shape()[0];
    let per: Vec<usize> = batch.shape()[1..].to_vec();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let scores = batch.slice(0, i, i + 1)?.reshape(&per)?;
        if !scores.all_finite() {
            return Err(Error::NonFinite { op: "attribution map" });
        }
        out.push(AttributionMap { scores, target: targets[i], method });
    }
    Ok(out)
}

/// Attribution maps for every (member, sample) pair: `result[member][sample]`.
/// Targets follow the policy; IG uses the zero-image baseline.
pub fn attribution_batch(
    ensemble: &EnsembleModel,
    images: &Tensor,
    method: AttribMethod,
    policy: TargetPolicy,
    labels: Option<&[usize]>,
) -> Result<Vec<Vec<AttributionMap>>> {
    let mut out = Vec::with_capacity(ensemble.len());
    for member in ensemble.members() {
        let targets: Vec<usize> = match policy {
            TargetPolicy::Predicted => member.predict(images)?,
            TargetPolicy::Label => labels
                .ok_or_else(|| Error::InvalidConfig("label target policy needs labels".into()))?
                .to_vec(),
        };
        let maps = match method {
            AttribMethod::Saliency => saliency_batch(member, images, &targets)?,
            AttribMethod::IntegratedGradients { steps } => {
                let baseline = Tensor::zeros(&input_shape(member));
                integrated_gradients_batch(member, images, &baseline, &targets, steps)?
            }
        };
        out.push(maps);
    }
    Ok(out)
}
