use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::nn::{Init, LayerNode, Network, Param};
use crate::tensor::{Activation, Padding, PoolMode, Primitive};
use crate::Rng;

pub type NodeId = usize;

/// Incremental graph construction with static shape tracking.
///
/// Shapes are tracked per sample (batch axis 1) so invalid wiring fails at
/// build time, not on the first forward pass.
pub struct GraphBuilder {
    name: String,
    input_shape: [usize; 3],
    nodes: Vec<LayerNode>,
    shapes: Vec<Vec<usize>>,
    names: HashSet<String>,
    rng: Rng,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], seed: u64) -> Self {
        let [c, h, w] = input_shape;
        GraphBuilder {
            name: name.into(),
            input_shape,
            nodes: vec![LayerNode {
                name: "input".into(),
                op: None,
                inputs: vec![],
                params: vec![],
            }],
            shapes: vec![vec![1, c, h, w]],
            names: HashSet::from(["input".to_string()]),
            rng: crate::rng(seed),
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    /// Per-sample shape of a node (leading batch axis of 1 included).
    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.shapes[id]
    }

    /// Channel count of a feature map node.
    pub fn channels(&self, id: NodeId) -> usize {
        self.shapes[id][1]
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        op: Primitive,
        inputs: &[NodeId],
        params: Vec<Param>,
    ) -> Result<NodeId> {
        let name = name.into();
        if !self.names.insert(name.clone()) {
            return Err(Error::param(format!("duplicate node name {name}")));
        }
        if let Some(&bad) = inputs.iter().find(|&&j| j >= self.nodes.len()) {
            return Err(Error::param(format!("node {name} references unknown node {bad}")));
        }
        let mut ins: Vec<&[usize]> = inputs.iter().map(|&j| self.shapes[j].as_slice()).collect();
        ins.extend(params.iter().map(|p| p.value.shape()));
        let shape = op
            .output_shape(&ins)
            .map_err(|e| match e {
                Error::Dimension(m) => Error::Dimension(format!("{name}: {m}")),
                other => other,
            })?;
        self.nodes.push(LayerNode {
            name,
            op: Some(op),
            inputs: inputs.to_vec(),
            params,
        });
        self.shapes.push(shape);
        Ok(self.nodes.len() - 1)
    }

    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Param {
        Param {
            name: name.into(),
            init,
            value: init.sample(shape, &mut self.rng),
        }
    }

    pub fn conv(
        &mut self,
        name: impl Into<String>,
        from: NodeId,
        filters: usize,
        kernel: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        if filters == 0 {
            return Err(Error::param("convolution needs at least one filter"));
        }
        let c = self.channels(from);
        let weight = self.param("weight", &[filters, c, kernel, kernel], Init::He);
        let bias = self.param("bias", &[filters], Init::Zeros);
        self.push(name, Primitive::Conv2d { padding, stride: 1 }, &[from], vec![weight, bias])
    }

    pub fn dense(&mut self, name: impl Into<String>, from: NodeId, units: usize, init: Init) -> Result<NodeId> {
        let width = match self.shapes[from][..] {
            [_, w] => w,
            ref s => return Err(Error::dim(format!("dense expects a flat [b, n] input, got {s:?}"))),
        };
        let weight = self.param("weight", &[width, units], init);
        let bias = self.param("bias", &[units], Init::Zeros);
        self.push(name, Primitive::Dense, &[from], vec![weight, bias])
    }

    pub fn relu(&mut self, name: impl Into<String>, from: NodeId) -> Result<NodeId> {
        let op = Primitive::Activation { kind: Activation::Relu };
        self.push(name, op, &[from], vec![])
    }

    pub fn sigmoid(&mut self, name: impl Into<String>, from: NodeId) -> Result<NodeId> {
        let op = Primitive::Activation {
            kind: Activation::Sigmoid,
        };
        self.push(name, op, &[from], vec![])
    }

    pub fn maxpool(
        &mut self,
        name: impl Into<String>,
        from: NodeId,
        window: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let op = Primitive::MaxPool2d {
            window,
            stride,
            padding,
        };
        self.push(name, op, &[from], vec![])
    }

    pub fn global_pool(&mut self, name: impl Into<String>, from: NodeId, mode: PoolMode) -> Result<NodeId> {
        self.push(name, Primitive::GlobalPool { mode }, &[from], vec![])
    }

    pub fn flatten(&mut self, name: impl Into<String>, from: NodeId) -> Result<NodeId> {
        self.push(name, Primitive::Flatten, &[from], vec![])
    }

    pub fn dropout(&mut self, name: impl Into<String>, from: NodeId, rate: f64) -> Result<NodeId> {
        self.push(name, Primitive::Dropout { rate }, &[from], vec![])
    }

    pub fn concat(&mut self, name: impl Into<String>, from: &[NodeId]) -> Result<NodeId> {
        self.push(name, Primitive::Concat, from, vec![])
    }

    pub fn add(&mut self, name: impl Into<String>, from: &[NodeId]) -> Result<NodeId> {
        self.push(name, Primitive::Add, from, vec![])
    }

    /// Classification head: dropout (if `rate > 0`) → dense(1, Glorot) → sigmoid.
    pub fn binary_head(&mut self, prefix: &str, features: NodeId, dropout: f64) -> Result<NodeId> {
        let mut x = features;
        if dropout > 0.0 {
            x = self.dropout(format!("{prefix}dropout"), x, dropout)?;
        }
        let x = self.dense(format!("{prefix}dense"), x, 1, Init::Glorot)?;
        self.sigmoid(format!("{prefix}sigmoid"), x)
    }

    /// Finish with the last pushed node as the output.
    pub fn finish(self, penultimate: NodeId) -> Result<Network> {
        Network::from_parts(self.name, self.input_shape, self.nodes, penultimate)
    }
}
