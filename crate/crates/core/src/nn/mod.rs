//! Layer graphs, the concrete architectures, and checkpoints.
//!
//! A [`Network`] is a topologically ordered list of [`LayerNode`]s. Node 0 is
//! the image input; the last node is the sigmoid output `[batch, 1]`. Each
//! node applies one [`Primitive`] to the outputs of its predecessors followed
//! by its own parameters.

mod arch;
mod builder;
mod checkpoint;

pub use arch::{
    build, build_backbone_with_head, build_conv, build_conv_baseline, build_mlp, build_mlp_baseline,
    inception_block, residual_block, Architecture, BackboneConfig, BackboneKind, Branch, InceptionSpec,
    IMAGE_SHAPE,
};
pub use builder::{GraphBuilder, NodeId};
pub use checkpoint::{load_checkpoint, save_checkpoint, TrainingState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{relative_error, GradCheckReport, GradPair, Primitive, Tensor};
use crate::Rng;

/// Weight initialization rule, kept with each parameter so a loaded graph can be re-initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Normal, std `sqrt(2 / fan_in)`; weights feeding a relu.
    He,
    /// Normal, std `sqrt(2 / (fan_in + fan_out))`; the sigmoid output layer.
    Glorot,
    Zeros,
}

impl Init {
    pub fn sample(self, shape: &[usize], rng: &mut Rng) -> Tensor {
        let (fan_in, fan_out) = fans(shape);
        match self {
            Init::He => Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng),
            Init::Glorot => Tensor::randn(shape, (2.0 / (fan_in + fan_out) as f64).sqrt(), rng),
            Init::Zeros => Tensor::zeros(shape),
        }
    }
}

/// Fan-in/out for dense `[in, out]` and conv `[f, c, kh, kw]` weights.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [i, o] => (*i, *o),
        [f, c, kh, kw] => (c * kh * kw, f * kh * kw),
        other => {
            let n = other.iter().product::<usize>().max(1);
            (n, n)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub init: Init,
    pub value: Tensor,
}

#[derive(Clone, Debug)]
pub struct LayerNode {
    pub name: String,
    /// `None` marks the network input.
    pub op: Option<Primitive>,
    pub inputs: Vec<NodeId>,
    pub params: Vec<Param>,
}

/// Per-parameter gradients in declaration order.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    /// Gradient with respect to the input batch, when requested.
    pub input: Option<Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

struct Tape {
    input: Tensor,
    pairs: Vec<Option<GradPair>>,
    input_grad: bool,
}

#[derive(Clone)]
pub struct Network {
    name: String,
    input_shape: [usize; 3],
    nodes: Vec<LayerNode>,
    penultimate: NodeId,
    trained_epochs: usize,
    tape: Option<std::sync::Arc<Tape>>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("name", &self.name)
            .field("input_shape", &self.input_shape)
            .field("nodes", &self.nodes.len())
            .field("params", &self.count_params())
            .finish()
    }
}

impl Network {
    pub(crate) fn from_parts(
        name: String,
        input_shape: [usize; 3],
        nodes: Vec<LayerNode>,
        penultimate: NodeId,
    ) -> Result<Self> {
        let net = Network {
            name,
            input_shape,
            nodes,
            penultimate,
            trained_epochs: 0,
            tape: None,
        };
        net.validate()?;
        Ok(net)
    }

    /// Graph invariants: node 0 is the only input, edges point backwards,
    /// parameter names are unique, and the output is `[b, 1]`.
    fn validate(&self) -> Result<()> {
        if self.nodes.first().is_none_or(|n| n.op.is_some()) {
            return Err(Error::State("node 0 must be the network input".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            if node.op.is_none() {
                return Err(Error::State(format!("node {i} ({}) is a second input", node.name)));
            }
            if node.inputs.iter().any(|&j| j >= i) {
                return Err(Error::State(format!("node {i} ({}) is not topologically ordered", node.name)));
            }
            for p in &node.params {
                if !seen.insert(self.param_key(node, p)) {
                    return Err(Error::State(format!("duplicate parameter {}.{}", node.name, p.name)));
                }
            }
        }
        if self.penultimate >= self.nodes.len() {
            return Err(Error::State("penultimate node out of range".into()));
        }
        let probe = self.shapes(1)?;
        if probe.last().map(Vec::as_slice) != Some(&[1, 1][..]) {
            return Err(Error::dim(format!(
                "network output must be [batch, 1], got {:?}",
                probe.last()
            )));
        }
        Ok(())
    }

    fn param_key(&self, node: &LayerNode, p: &Param) -> String {
        format!("{}.{}", node.name, p.name)
    }

    /// Static shape of every node for a given batch size.
    pub fn shapes(&self, batch: usize) -> Result<Vec<Vec<usize>>> {
        let [c, h, w] = self.input_shape;
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        shapes.push(vec![batch, c, h, w]);
        for node in &self.nodes[1..] {
            let op = node.op.as_ref().expect("validated");
            let mut ins: Vec<&[usize]> = node.inputs.iter().map(|&j| shapes[j].as_slice()).collect();
            ins.extend(node.params.iter().map(|p| p.value.shape()));
            let out = op
                .output_shape(&ins)
                .map_err(|e| Error::dim(format!("node {}: {e}", node.name)))?;
            shapes.push(out);
        }
        Ok(shapes)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn output(&self) -> NodeId {
        self.nodes.len() - 1
    }

    /// Feature node that feeds the classification head (dropout → dense → sigmoid).
    pub fn penultimate(&self) -> NodeId {
        self.penultimate
    }

    pub fn penultimate_width(&self) -> usize {
        let shapes = self.shapes(1).expect("validated");
        shapes[self.penultimate][1..].iter().product()
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub fn set_trained_epochs(&mut self, epochs: usize) {
        self.trained_epochs = epochs;
    }

    pub fn count_params(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    /// Parameters in declaration order.
    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.nodes.iter().flat_map(|n| &n.params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.nodes.iter_mut().flat_map(|n| &mut n.params)
    }

    /// Fully qualified `node.param` names in declaration order.
    pub fn param_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .flat_map(|n| n.params.iter().map(move |p| self.param_key(n, p)))
            .collect()
    }

    pub fn param_values(&self) -> Vec<Tensor> {
        self.params().map(|p| p.value.clone()).collect()
    }

    pub fn set_param_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        let count = self.params().count();
        if values.len() != count {
            return Err(Error::dim(format!("expected {count} parameter tensors, got {}", values.len())));
        }
        for (p, v) in self.params().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::dim(format!(
                    "parameter {} has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
        }
        for (p, v) in self.params_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    /// Redraw every parameter from its init rule.
    pub fn reinitialize(&mut self, seed: u64) {
        let mut rng = crate::rng(seed);
        for p in self.params_mut() {
            p.value = p.init.sample(p.value.shape(), &mut rng);
        }
        self.trained_epochs = 0;
        self.tape = None;
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let [_, c, h, w] = batch.dims4()?;
        if [c, h, w] != self.input_shape {
            return Err(Error::dim(format!(
                "{} expects [b, {}, {}, {}] input, got {:?}",
                self.name,
                self.input_shape[0],
                self.input_shape[1],
                self.input_shape[2],
                batch.shape()
            )));
        }
        Ok(())
    }

    fn node_inputs<'a>(&'a self, node: &'a LayerNode, value: impl Fn(NodeId) -> &'a Tensor) -> Vec<&'a Tensor> {
        node.inputs
            .iter()
            .map(|&j| value(j))
            .chain(node.params.iter().map(|p| &p.value))
            .collect()
    }

    /// Inference-mode forward pass; dropout is the identity. Safe to share across threads.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let last_use = self.last_use();
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        values[0] = Some(batch.clone());
        let mut rng = crate::rng(0);
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let op = node.op.as_ref().expect("validated");
            let out = {
                let ins = self.node_inputs(node, |j| values[j].as_ref().expect("value still live"));
                op.forward(&ins, false, &mut rng)?.value
            };
            values[i] = Some(out);
            for &j in &node.inputs {
                if last_use[j] == i {
                    values[j] = None;
                }
            }
        }
        Ok(values.pop().flatten().expect("output computed"))
    }

    /// Last node consuming each node's output.
    fn last_use(&self) -> Vec<NodeId> {
        let mut last = (0..self.nodes.len()).collect::<Vec<_>>();
        for (i, node) in self.nodes.iter().enumerate() {
            for &j in &node.inputs {
                last[j] = i;
            }
        }
        last
    }

    /// Forward pass. In training mode the per-node contexts are recorded for
    /// [`Network::backward`] and dropout draws masks from `rng`.
    pub fn forward(&mut self, batch: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
        self.forward_tracked(batch, training, rng, false)
    }

    /// Training forward that also records the gradient with respect to the input batch.
    pub fn forward_tracked(&mut self, batch: &Tensor, training: bool, rng: &mut Rng, input_grad: bool) -> Result<Tensor> {
        if !training {
            self.tape = None;
            return self.predict(batch);
        }
        self.check_input(batch)?;
        let mut pairs: Vec<Option<GradPair>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let op = node.op.as_ref().expect("validated");
            let pair = {
                let ins = self.node_inputs(node, |j| match j {
                    0 => batch,
                    _ => &pairs[j].as_ref().expect("topological order").value,
                });
                op.forward(&ins, true, rng)?
            };
            pairs[i] = Some(pair);
        }
        let out = pairs.last().cloned().flatten().expect("output").value;
        self.tape = Some(std::sync::Arc::new(Tape {
            input: batch.clone(),
            pairs,
            input_grad,
        }));
        Ok(out)
    }

    /// Backpropagate `upstream` (shaped like the output) through the recorded forward pass.
    ///
    /// Consumes the recorded contexts: a second call needs a new training forward.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Gradients> {
        self.backward_impl(upstream, false)
    }

    /// Backpropagate a gradient taken with respect to the output sigmoid's input
    /// (the logit), skipping the sigmoid itself.
    ///
    /// With a cross-entropy loss this gradient is `(p - y) / b`, which stays
    /// informative when the sigmoid saturates to exactly 0 or 1, where the
    /// chained form through [`Network::backward`] vanishes.
    pub fn backward_logits(&mut self, upstream: &Tensor) -> Result<Gradients> {
        self.backward_impl(upstream, true)
    }

    fn backward_impl(&mut self, upstream: &Tensor, from_logits: bool) -> Result<Gradients> {
        let out = self.output();
        let out_node = &self.nodes[out];
        let sigmoid = Some(Primitive::Activation {
            kind: crate::tensor::Activation::Sigmoid,
        });
        if from_logits && out_node.op != sigmoid {
            return Err(Error::State(format!(
                "network {} does not end in a sigmoid; no logit to backpropagate from",
                self.name
            )));
        }
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding training forward pass".into()))?;
        let n = self.nodes.len();
        // Which node outputs need a gradient at all.
        let mut needs = vec![false; n];
        needs[0] = tape.input_grad;
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            needs[i] = !node.params.is_empty() || node.inputs.iter().any(|&j| needs[j]);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let out_shape = tape.pairs[n - 1].as_ref().expect("output").value.shape().to_vec();
        if upstream.shape() != out_shape.as_slice() {
            return Err(Error::dim(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                out_shape
            )));
        }
        if from_logits {
            grads[self.nodes[n - 1].inputs[0]] = Some(upstream.clone());
        } else {
            grads[n - 1] = Some(upstream.clone());
        }
        let mut param_grads: Vec<Vec<Tensor>> = self
            .nodes
            .iter()
            .map(|node| node.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect())
            .collect();
        for i in (1..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !needs[i] {
                continue;
            }
            let node = &self.nodes[i];
            let pair = tape.pairs[i].as_ref().expect("recorded");
            let ins = self.node_inputs(node, |j| match j {
                0 => &tape.input,
                _ => &tape.pairs[j].as_ref().expect("recorded").value,
            });
            let first_needed = node.inputs.first().is_some_and(|&j| needs[j]);
            let mut results = pair.backward_partial(&ins, &g, first_needed)?.into_iter();
            for &j in &node.inputs {
                let d = results.next().expect("one gradient per input");
                if !needs[j] {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&d)?,
                    slot => *slot = Some(d),
                }
            }
            for (slot, d) in param_grads[i].iter_mut().zip(results) {
                *slot = d;
            }
        }
        let input = if tape.input_grad {
            Some(grads[0].take().unwrap_or_else(|| Tensor::zeros(tape.input.shape())))
        } else {
            None
        };
        Ok(Gradients {
            names: self.param_names(),
            tensors: param_grads.into_iter().flatten().collect(),
            input,
        })
    }
}

/// Whole-network finite-difference check.
///
/// The output is projected onto fixed random weights; up to `max_probes`
/// coordinates of every parameter tensor and of the input batch are
/// perturbed in place. Dropout runs in training mode with the same seed for
/// every evaluation, which freezes its masks.
pub fn grad_check_network(
    net: &Network,
    batch: &Tensor,
    eps: f64,
    max_probes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut work = net.clone();
    let out = work.forward_tracked(batch, true, &mut crate::rng(seed), true)?;
    let projection = Tensor::randn(out.shape(), 1.0, &mut crate::rng(seed ^ 0x5eed));
    let grads = work.backward(&projection)?;
    let mut analytic = grads.tensors;
    analytic.push(grads.input.expect("input gradient requested"));

    let mut x = batch.clone();
    let objective = |net: &mut Network, x: &Tensor| -> Result<f64> {
        let out = net.forward(x, true, &mut crate::rng(seed))?;
        Ok(out.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };
    let mut pick = crate::rng(seed.wrapping_add(17));
    let mut per_input = Vec::with_capacity(analytic.len());
    let mut probes = 0;
    for (t, grad) in analytic.iter().enumerate() {
        let is_input = t + 1 == analytic.len();
        let n = grad.len();
        let positions: Vec<usize> = if max_probes < n {
            let mut p = rand::seq::index::sample(&mut pick, n, max_probes).into_vec();
            p.sort_unstable();
            p
        } else {
            (0..n).collect()
        };
        let mut numeric = Vec::with_capacity(positions.len());
        let mut wanted = Vec::with_capacity(positions.len());
        for &p in &positions {
            let eval_at = |delta: f64, work: &mut Network, x: &mut Tensor| -> Result<f64> {
                let slot = if is_input {
                    &mut x.data_mut()[p]
                } else {
                    &mut work.params_mut().nth(t).expect("param index").value.data_mut()[p]
                };
                let orig = *slot;
                *slot = orig + delta;
                let value = objective(work, x);
                let slot = if is_input {
                    &mut x.data_mut()[p]
                } else {
                    &mut work.params_mut().nth(t).expect("param index").value.data_mut()[p]
                };
                *slot = orig;
                value
            };
            let plus = eval_at(eps, &mut work, &mut x)?;
            let minus = eval_at(-eps, &mut work, &mut x)?;
            numeric.push((plus - minus) / (2.0 * eps));
            wanted.push(grad.data()[p]);
        }
        probes += positions.len();
        per_input.push(relative_error(&wanted, &numeric));
    }
    Ok(GradCheckReport {
        max_relative_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        probes,
    })
}
