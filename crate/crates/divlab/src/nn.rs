//! Small classifier architectures and the ensemble container.
//!
//! Two reference architectures: an MLP over flattened pixels and a tiny CNN
//! (conv-relu blocks, global average pool, linear head). Architectural
//! diversity across an ensemble comes from varying widths, depths, kinds, and
//! seeds per member.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture family of a member model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchKind {
    /// Fully connected net over flattened input; `hidden` lists hidden widths.
    Mlp { hidden: Vec<usize> },
    /// Conv-relu blocks with the given output channel plan, square kernels,
    /// stride 1, `same` padding, then global average pool and a linear head.
    Cnn { channels: Vec<usize>, kernel: usize },
}

/// Complete deterministic description of one member model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: ArchKind,
    /// Input shape (channels, height, width).
    pub input: (usize, usize, usize),
    /// Number of classes (the prediction species count).
    pub classes: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "class count must be >= 2, got {}",
                self.classes
            )));
        }
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec(format!("degenerate input shape {:?}", self.input)));
        }
        match &self.arch {
            ArchKind::Mlp { hidden } => {
                if hidden.iter().any(|&w| w == 0) {
                    return Err(Error::InvalidSpec("zero-width hidden layer".into()));
                }
            }
            ArchKind::Cnn { channels, kernel } => {
                if channels.is_empty() || channels.iter().any(|&c| c == 0) {
                    return Err(Error::InvalidSpec("empty or zero-width channel plan".into()));
                }
                if *kernel == 0 || *kernel > h || *kernel > w {
                    return Err(Error::InvalidSpec(format!(
                        "kernel {kernel} does not fit input {h}x{w}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.input;
        c * h * w
    }
}

/// A member model: spec plus named parameters in registry order.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<(String, Tensor)>,
}

/// Per-layer activation matrices, rows = samples, columns = flattened features.
#[derive(Debug, Clone)]
pub struct ActivationCapture {
    entries: Vec<(String, Tensor)>,
}

impl ActivationCapture {
    pub fn layer_names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl Model {
    /// Build with Kaiming-uniform weights and zero biases, fully determined
    /// by `(spec, spec.seed)`.
    pub fn build(spec: ModelSpec) -> Result<Model> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::new();
        match &spec.arch {
            ArchKind::Mlp { hidden } => {
                let mut widths = vec![spec.input_len()];
                widths.extend_from_slice(hidden);
                widths.push(spec.classes);
                for i in 0..widths.len() - 1 {
                    let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                    params.push((
                        format!("fc{i}.weight"),
                        kaiming_uniform(&mut rng, &[fan_in, fan_out], fan_in),
                    ));
                    params.push((format!("fc{i}.bias"), Tensor::zeros(&[fan_out])));
                }
            }
            ArchKind::Cnn { channels, kernel } => {
                let mut in_c = spec.input.0;
                for (i, &out_c) in channels.iter().enumerate() {
                    let fan_in = in_c * kernel * kernel;
                    params.push((
                        format!("conv{i}.weight"),
                        kaiming_uniform(&mut rng, &[out_c, in_c, *kernel, *kernel], fan_in),
                    ));
                    params.push((format!("conv{i}.bias"), Tensor::zeros(&[out_c])));
                    in_c = out_c;
                }
                params.push((
                    "head.weight".into(),
                    kaiming_uniform(&mut rng, &[in_c, spec.classes], in_c),
                ));
                params.push(("head.bias".into(), Tensor::zeros(&[spec.classes])));
            }
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    /// Replace parameters; names and shapes must match the registry.
    pub fn set_params(&mut self, params: Vec<(String, Tensor)>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((en, et), (gn, gt)) in self.params.iter().zip(&params) {
            if en != gn || et.shape() != gt.shape() {
                return Err(Error::InvalidSpec(format!(
                    "parameter mismatch: expected {en} {:?}, got {gn} {:?}",
                    et.shape(),
                    gt.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Ordered layer names available for activation capture.
    pub fn layer_registry(&self) -> Vec<String> {
        match &self.spec.arch {
            ArchKind::Mlp { hidden } => {
                let mut names: Vec<String> = (0..hidden.len()).map(|i| format!("fc{i}")).collect();
                names.push("head".into());
                names
            }
            ArchKind::Cnn { channels, .. } => {
                let mut names: Vec<String> =
                    (0..channels.len()).map(|i| format!("conv{i}")).collect();
                names.push("gap".into());
                names.push("head".into());
                names
            }
        }
    }

    /// Bind parameters as graph leaves, in registry order.
    pub fn bind(&self, graph: &Graph, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| graph.leaf(t.clone(), requires_grad))
            .collect()
    }

    /// Forward pass over bound parameter vars. `batch` is (n, C, H, W) or
    /// (n, C*H*W) for MLPs; returns logits (n, classes) plus named activations.
    pub fn forward_vars(&self, params: &[Var], batch: &Var) -> Result<(Var, Vec<(String, Var)>)> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidSpec("parameter binding arity mismatch".into()));
        }
        let n = batch.shape()[0];
        let mut acts: Vec<(String, Var)> = Vec::new();
        match &self.spec.arch {
            ArchKind::Mlp { hidden } => {
                let expect = self.spec.input_len();
                if batch.shape().iter().skip(1).product::<usize>() != expect {
                    return Err(Error::ShapeMismatch {
                        op: "forward",
                        lhs: batch.shape(),
                        rhs: vec![n, expect],
                    });
                }
                let mut h = batch.reshape(&[n, expect])?;
                let layers = hidden.len() + 1;
                for i in 0..layers {
                    let w = &params[2 * i];
                    let b = &params[2 * i + 1];
                    h = h.matmul(w)?.add(b)?;
                    if i < layers - 1 {
                        h = h.relu()?;
                        acts.push((format!("fc{i}"), h.clone()));
                    }
                }
                acts.push(("head".into(), h.clone()));
                Ok((h, acts))
            }
            ArchKind::Cnn { channels, kernel } => {
                let (c, ih, iw) = self.spec.input;
                if batch.shape().iter().skip(1).product::<usize>() != c * ih * iw {
                    return Err(Error::ShapeMismatch {
                        op: "forward",
                        lhs: batch.shape(),
                        rhs: vec![n, c, ih, iw],
                    });
                }
                let mut h = batch.reshape(&[n, c, ih, iw])?;
                let pad = kernel / 2;
                for (i, &out_c) in channels.iter().enumerate() {
                    let w = &params[2 * i];
                    let b = &params[2 * i + 1].reshape(&[1, out_c, 1, 1])?;
                    h = h.conv2d(w, 1, pad)?;
                    let hs = h.shape();
                    h = h.add(&b.broadcast_to(&hs)?)?.relu()?;
                    acts.push((format!("conv{i}"), h.clone()));
                }
                // global average pool over the spatial extent
                let hs = h.shape();
                let pooled = h
                    .reshape(&[hs[0], hs[1], hs[2] * hs[3]])?
                    .mean_axis(2)?;
                acts.push(("gap".into(), pooled.clone()));
                let w = &params[params.len() - 2];
                let b = &params[params.len() - 1];
                let logits = pooled.matmul(w)?.add(b)?;
                acts.push(("head".into(), logits.clone()));
                Ok((logits, acts))
            }
        }
    }

    /// Inference-only forward on plain tensors.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let graph = Graph::new();
        let params = self.bind(&graph, false);
        let x = graph.constant(batch.clone());
        let (logits, _) = self.forward_vars(&params, &x)?;
        Ok(logits.value())
    }

    /// Argmax class per sample (ties to the lowest index).
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(argmax_rows(&logits))
    }

    /// Per-layer (n x features) activation matrices over a dataset, evaluated
    /// in `batch` chunks. Unknown layer names are rejected.
    pub fn capture_activations(
        &self,
        images: &Tensor,
        layer_names: &[String],
        batch: usize,
    ) -> Result<ActivationCapture> {
        let registry = self.layer_registry();
        for name in layer_names {
            if !registry.contains(name) {
                return Err(Error::UnknownLayer(name.clone()));
            }
        }
        let n = images.shape()[0];
        let mut collected: Vec<(String, Vec<Tensor>)> =
            layer_names.iter().map(|n| (n.clone(), Vec::new())).collect();
        let mut start = 0usize;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let chunk = images.slice(0, start, end)?;
            let graph = Graph::new();
            let params = self.bind(&graph, false);
            let x = graph.constant(chunk);
            let (_, acts) = self.forward_vars(&params, &x)?;
            for (name, rows) in collected.iter_mut() {
                let v = acts
                    .iter()
                    .find(|(an, _)| an == name)
                    .map(|(_, av)| av.value())
                    .expect("registry-checked layer");
                let flat = v.reshape(&[end - start, v.len() / (end - start)])?;
                rows.push(flat);
            }
            start = end;
        }
        let entries = collected
            .into_iter()
            .map(|(name, rows)| {
                let refs: Vec<&Tensor> = rows.iter().collect();
                Tensor::concat(&refs, 0).map(|t| (name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ActivationCapture { entries })
    }
}

/// Ordered collection of member classifiers sharing input shape and classes.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    members: Vec<Model>,
}

impl EnsembleModel {
    pub fn new(members: Vec<Model>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let first = members[0].spec();
        for m in &members[1..] {
            if m.spec().input != first.input || m.spec().classes != first.classes {
                return Err(Error::InvalidSpec(
                    "ensemble members must share input shape and class count".into(),
                ));
            }
        }
        Ok(EnsembleModel { members })
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Model] {
        &mut self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.members.iter().map(Model::param_count).sum()
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let shape = logits.shape();
    let (n, s) = (shape[0], shape[1]);
    (0..n)
        .map(|i| {
            let row = &logits.data()[i * s..(i + 1) * s];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
