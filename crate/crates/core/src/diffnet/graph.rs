use std::hash::{DefaultHasher, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::ops;
use super::{Real, Tensor};

pub type NodeId = usize;

/// Layer vocabulary. There is deliberately no normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Graph input; `shape` excludes the batch dimension.
    Input { shape: Vec<usize> },
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        weight: usize,
        bias: usize,
    },
    Conv1x1 {
        in_channels: usize,
        out_channels: usize,
        weight: usize,
        bias: usize,
    },
    /// Flattens everything after the batch dimension.
    Dense {
        in_features: usize,
        out_features: usize,
        weight: usize,
        bias: usize,
    },
    LeakyRelu(f64),
    Relu,
    Sigmoid,
    UpsampleBilinear(usize),
    /// Channel axis.
    Concat,
    Add,
    ElementwiseMul,
    GlobalAvgPool,
    /// Softmax over each batch item's flattened features.
    Softmax,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::Conv1x1 { .. } => "conv1x1",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::LeakyRelu(_) => "leaky_relu",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::UpsampleBilinear(_) => "upsample_bilinear",
            LayerSpec::Concat => "concat",
            LayerSpec::Add => "add",
            LayerSpec::ElementwiseMul => "elementwise_mul",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Softmax => "softmax",
        }
    }

    fn param_ids(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv3x3 { weight, bias, .. }
            | LayerSpec::Conv1x1 { weight, bias, .. }
            | LayerSpec::Dense { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub spec: LayerSpec,
    /// Always earlier node ids, so the node list is a topological order.
    pub inputs: Vec<NodeId>,
    /// Output shape without the batch dimension.
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// A static DAG of layers together with its parameters.
#[derive(Clone, Debug)]
pub struct Network<T> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    output: NodeId,
    taps: Vec<(String, NodeId)>,
    seed: u64,
}

/// Every node's activation from one forward pass.
#[derive(Clone, Debug)]
pub struct Activations<T> {
    values: Vec<Tensor<T>>,
}

impl<T: Real> Activations<T> {
    pub fn get(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Gradients<T> {
    /// Parallel to [`Network::params`].
    pub params: Vec<Tensor<T>>,
    /// Gradient for every graph input, by input name.
    pub inputs: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn input(&self, name: &str) -> Option<&Tensor<T>> {
        self.inputs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl<T: Real> Network<T> {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn taps(&self) -> &[(String, NodeId)] {
        &self.taps
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.spec, LayerSpec::Input { .. }))
            .map(|n| n.name.as_str())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Hash over parameter names, shapes and bit patterns.
    pub fn param_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.params {
            h.write(p.name.as_bytes());
            for &d in p.value.shape() {
                h.write_usize(d);
            }
            for v in p.value.data() {
                h.write_u64(v.as_f64().to_bits());
            }
        }
        h.finish()
    }

    /// Converts parameters to another scalar type, keeping the graph.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            nodes: self.nodes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            output: self.output,
            taps: self.taps.clone(),
            seed: self.seed,
        }
    }

    pub fn forward(&self, inputs: &[(&str, &Tensor<T>)]) -> Result<Activations<T>> {
        let mut batch = None;
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.spec {
                LayerSpec::Input { shape } => {
                    let t = inputs
                        .iter()
                        .find(|(n, _)| *n == node.name)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| {
                            Error::Shape(format!("missing input for node '{}'", node.name))
                        })?;
                    if t.shape().len() != shape.len() + 1 || t.shape()[1..] != shape[..] {
                        return Err(Error::Shape(format!(
                            "node '{}': expected [N, {:?}], got {:?}",
                            node.name,
                            shape,
                            t.shape()
                        )));
                    }
                    match batch {
                        None => batch = Some(t.batch()),
                        Some(b) if b != t.batch() => {
                            return Err(Error::Shape(format!(
                                "node '{}': batch {} differs from {}",
                                node.name,
                                t.batch(),
                                b
                            )))
                        }
                        _ => {}
                    }
                    if !t.all_finite() {
                        return Err(Error::Validation(format!(
                            "node '{}': non-finite input",
                            node.name
                        )));
                    }
                    t.clone()
                }
                spec => self.eval_node(spec, &node.inputs, &values),
            };
            values.push(value);
        }
        Ok(Activations { values })
    }

    fn eval_node(&self, spec: &LayerSpec, inputs: &[NodeId], values: &[Tensor<T>]) -> Tensor<T> {
        let x = &values[inputs[0]];
        match *spec {
            LayerSpec::Input { .. } => unreachable!(),
            LayerSpec::Conv3x3 {
                stride,
                weight,
                bias,
                ..
            } => ops::conv2d_forward(
                x,
                &self.params[weight].value,
                &self.params[bias].value,
                stride,
                1,
            ),
            LayerSpec::Conv1x1 { weight, bias, .. } => ops::conv2d_forward(
                x,
                &self.params[weight].value,
                &self.params[bias].value,
                1,
                0,
            ),
            LayerSpec::Dense { weight, bias, .. } => {
                ops::dense_forward(x, &self.params[weight].value, &self.params[bias].value)
            }
            LayerSpec::LeakyRelu(slope) => {
                let s = T::lit(slope);
                x.map(|v| if v > T::zero() { v } else { v * s })
            }
            LayerSpec::Relu => x.map(|v| v.max(T::zero())),
            LayerSpec::Sigmoid => x.map(ops::sigmoid),
            LayerSpec::UpsampleBilinear(f) => {
                let (_, _, h, w) = x.dims4().expect("validated at build");
                ops::resize_bilinear(x, h * f, w * f)
            }
            LayerSpec::Concat => {
                let parts: Vec<&Tensor<T>> = inputs.iter().map(|&i| &values[i]).collect();
                ops::concat(&parts)
            }
            LayerSpec::Add => {
                let mut out = x.clone();
                out.add_assign(&values[inputs[1]]);
                out
            }
            LayerSpec::ElementwiseMul => {
                let y = &values[inputs[1]];
                let mut out = x.clone();
                for (a, &b) in out.data_mut().iter_mut().zip(y.data()) {
                    *a *= b;
                }
                out
            }
            LayerSpec::GlobalAvgPool => ops::global_avg_pool(x),
            LayerSpec::Softmax => ops::softmax(x),
        }
    }

    /// Backward pass from the network output.
    pub fn backward(&self, acts: &Activations<T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        self.backward_from(acts, &[(self.output, loss_grad)])
    }

    /// Backward pass seeded at arbitrary nodes (output, taps, ...).
    pub fn backward_from(
        &self,
        acts: &Activations<T>,
        seeds: &[(NodeId, &Tensor<T>)],
    ) -> Result<Gradients<T>> {
        if acts.values.len() != self.nodes.len() {
            return Err(Error::Protocol(format!(
                "activation cache has {} entries, network has {} nodes; run forward first",
                acts.values.len(),
                self.nodes.len()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for &(id, g) in seeds {
            if id >= self.nodes.len() || g.shape() != acts.values[id].shape() {
                return Err(Error::Shape(format!(
                    "gradient seed for node {id} has shape {:?}",
                    g.shape()
                )));
            }
            accumulate(&mut grads[id], g.clone());
        }
        let mut param_grads: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();

        for id in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let x = &acts.values[node.inputs.first().copied().unwrap_or(id)];
            match node.spec {
                LayerSpec::Input { .. } => {
                    grads[id] = Some(dy);
                }
                LayerSpec::Conv3x3 {
                    stride,
                    weight,
                    bias,
                    ..
                } => {
                    let (dx, dw, db) =
                        ops::conv2d_backward(x, &self.params[weight].value, stride, 1, &dy);
                    param_grads[weight].add_assign(&dw);
                    param_grads[bias].add_assign(&db);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                LayerSpec::Conv1x1 { weight, bias, .. } => {
                    let (dx, dw, db) =
                        ops::conv2d_backward(x, &self.params[weight].value, 1, 0, &dy);
                    param_grads[weight].add_assign(&dw);
                    param_grads[bias].add_assign(&db);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                LayerSpec::Dense { weight, bias, .. } => {
                    let (dx, dw, db) = ops::dense_backward(x, &self.params[weight].value, &dy);
                    param_grads[weight].add_assign(&dw);
                    param_grads[bias].add_assign(&db);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                LayerSpec::LeakyRelu(slope) => {
                    let s = T::lit(slope);
                    let mut dx = dy;
                    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if v <= T::zero() {
                            *g *= s;
                        }
                    }
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                LayerSpec::Relu => {
                    let mut dx = dy;
                    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if v <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                LayerSpec::Sigmoid => {
                    let y = &acts.values[id];
                    let mut dx = dy;
                    for (g, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                        *g *= s * (T::one() - s);
                    }
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                LayerSpec::UpsampleBilinear(_) => {
                    let dx = ops::resize_bilinear_backward(x.shape(), &dy);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                LayerSpec::Concat => {
                    let shapes: Vec<&[usize]> =
                        node.inputs.iter().map(|&i| acts.values[i].shape()).collect();
                    let parts = ops::concat_backward(&shapes, &dy);
                    for (&i, g) in node.inputs.iter().zip(parts) {
                        accumulate(&mut grads[i], g);
                    }
                }
                LayerSpec::Add => {
                    accumulate(&mut grads[node.inputs[1]], dy.clone());
                    accumulate(&mut grads[node.inputs[0]], dy);
                }
                LayerSpec::ElementwiseMul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let mut da = dy.clone();
                    for (g, &v) in da.data_mut().iter_mut().zip(acts.values[b].data()) {
                        *g *= v;
                    }
                    let mut db = dy;
                    for (g, &v) in db.data_mut().iter_mut().zip(acts.values[a].data()) {
                        *g *= v;
                    }
                    accumulate(&mut grads[a], da);
                    accumulate(&mut grads[b], db);
                }
                LayerSpec::GlobalAvgPool => {
                    let dx = ops::global_avg_pool_backward(x.shape(), &dy);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
                LayerSpec::Softmax => {
                    let dx = ops::softmax_backward(&acts.values[id], &dy);
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
            }
        }

        let inputs = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.spec, LayerSpec::Input { .. }))
            .map(|(id, n)| {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(acts.values[id].shape()));
                (n.name.clone(), g)
            })
            .collect();
        Ok(Gradients {
            params: param_grads,
            inputs,
        })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Incrementally assembles a [`Network`]; parameters are drawn from a
/// seeded stream in declaration order (He-normal weights, zero biases).
pub struct NetworkBuilder<T> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    taps: Vec<(String, NodeId)>,
    rng: ChaCha8Rng,
    seed: u64,
    error: Option<Error>,
}

impl<T: Real> NetworkBuilder<T> {
    pub fn new(seed: u64) -> Self {
        NetworkBuilder {
            nodes: Vec::new(),
            params: Vec::new(),
            taps: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            error: None,
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    fn fail(&mut self, msg: String) {
        if self.error.is_none() {
            self.error = Some(Error::Config(msg));
        }
    }

    fn push(&mut self, name: String, spec: LayerSpec, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        if self.nodes.iter().any(|n| n.name == name) {
            self.fail(format!("duplicate node name '{name}'"));
        }
        self.nodes.push(Node {
            name,
            spec,
            inputs,
            shape,
        });
        self.nodes.len() - 1
    }

    fn he_param(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::lit(normal.sample(&mut self.rng)))
            .collect();
        self.params.push(Param {
            name,
            value: Tensor::new(shape, data).expect("param shape"),
        });
        self.params.len() - 1
    }

    fn zero_param(&mut self, name: String, shape: &[usize]) -> usize {
        self.params.push(Param {
            name,
            value: Tensor::zeros(shape),
        });
        self.params.len() - 1
    }

    fn spatial(&mut self, id: NodeId, what: &str) -> Option<(usize, usize, usize)> {
        match self.nodes[id].shape[..] {
            [c, h, w] => Some((c, h, w)),
            _ => {
                let msg = format!(
                    "{what} needs a [C,H,W] input, '{}' has {:?}",
                    self.nodes[id].name, self.nodes[id].shape
                );
                self.fail(msg);
                None
            }
        }
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(
            name.to_string(),
            LayerSpec::Input {
                shape: shape.to_vec(),
            },
            vec![],
            shape.to_vec(),
        )
    }

    pub fn conv3x3(&mut self, name: &str, x: NodeId, out_channels: usize, stride: usize) -> NodeId {
        let (c, h, w) = self.spatial(x, "conv3x3").unwrap_or((1, 1, 1));
        if stride == 0 {
            self.fail(format!("{name}: stride must be positive"));
        }
        let stride = stride.max(1);
        let weight = self.he_param(format!("{name}.weight"), &[out_channels, c, 3, 3], c * 9);
        let bias = self.zero_param(format!("{name}.bias"), &[out_channels]);
        let shape = vec![
            out_channels,
            ops::conv_out_size(h, 3, stride, 1),
            ops::conv_out_size(w, 3, stride, 1),
        ];
        self.push(
            name.to_string(),
            LayerSpec::Conv3x3 {
                in_channels: c,
                out_channels,
                stride,
                weight,
                bias,
            },
            vec![x],
            shape,
        )
    }

    pub fn conv1x1(&mut self, name: &str, x: NodeId, out_channels: usize) -> NodeId {
        let (c, h, w) = self.spatial(x, "conv1x1").unwrap_or((1, 1, 1));
        let weight = self.he_param(format!("{name}.weight"), &[out_channels, c, 1, 1], c);
        let bias = self.zero_param(format!("{name}.bias"), &[out_channels]);
        self.push(
            name.to_string(),
            LayerSpec::Conv1x1 {
                in_channels: c,
                out_channels,
                weight,
                bias,
            },
            vec![x],
            vec![out_channels, h, w],
        )
    }

    pub fn dense(&mut self, name: &str, x: NodeId, out_features: usize) -> NodeId {
        let in_features: usize = self.nodes[x].shape.iter().product();
        let weight = self.he_param(
            format!("{name}.weight"),
            &[out_features, in_features],
            in_features,
        );
        let bias = self.zero_param(format!("{name}.bias"), &[out_features]);
        self.push(
            name.to_string(),
            LayerSpec::Dense {
                in_features,
                out_features,
                weight,
                bias,
            },
            vec![x],
            vec![out_features],
        )
    }

    fn unary(&mut self, x: NodeId, spec: LayerSpec) -> NodeId {
        let name = format!("{}/{}", self.nodes[x].name, spec.kind_name());
        let shape = self.nodes[x].shape.clone();
        self.push(name, spec, vec![x], shape)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.unary(x, LayerSpec::LeakyRelu(slope))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, LayerSpec::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, LayerSpec::Sigmoid)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.unary(x, LayerSpec::Softmax)
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> NodeId {
        let (c, h, w) = self.spatial(x, "upsample").unwrap_or((1, 1, 1));
        if factor == 0 {
            self.fail("upsample factor must be positive".into());
        }
        let name = format!("{}/upsample", self.nodes[x].name);
        self.push(
            name,
            LayerSpec::UpsampleBilinear(factor),
            vec![x],
            vec![c, h * factor, w * factor],
        )
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let (c, _, _) = self.spatial(x, "global_avg_pool").unwrap_or((1, 1, 1));
        let name = format!("{}/gap", self.nodes[x].name);
        self.push(name, LayerSpec::GlobalAvgPool, vec![x], vec![c])
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> NodeId {
        let first = self.nodes[xs[0]].shape.clone();
        let mut shape = first.clone();
        shape[0] = 0;
        for &x in xs {
            let s = self.nodes[x].shape.clone();
            if s.len() != first.len() || s[1..] != first[1..] {
                let msg = format!("{name}: cannot concat {:?} with {:?}", s, first);
                self.fail(msg);
            }
            shape[0] += s[0];
        }
        self.push(name.to_string(), LayerSpec::Concat, xs.to_vec(), shape)
    }

    fn binary(&mut self, name: &str, a: NodeId, b: NodeId, spec: LayerSpec) -> NodeId {
        if self.nodes[a].shape != self.nodes[b].shape {
            let msg = format!(
                "{name}: operand shapes {:?} and {:?} differ",
                self.nodes[a].shape, self.nodes[b].shape
            );
            self.fail(msg);
        }
        let shape = self.nodes[a].shape.clone();
        self.push(name.to_string(), spec, vec![a, b], shape)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        self.binary(name, a, b, LayerSpec::Add)
    }

    pub fn mul(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        self.binary(name, a, b, LayerSpec::ElementwiseMul)
    }

    /// Exposes an intermediate activation under `name`.
    pub fn tap(&mut self, name: &str, x: NodeId) {
        self.taps.push((name.to_string(), x));
    }

    pub fn build(self, output: NodeId) -> Result<Network<T>> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if output >= self.nodes.len() {
            return Err(Error::Config(format!("output node {output} does not exist")));
        }
        // Every parameter must feed the output or a tap.
        let mut live = vec![false; self.nodes.len()];
        live[output] = true;
        for &(_, t) in &self.taps {
            live[t] = true;
        }
        for id in (0..self.nodes.len()).rev() {
            if live[id] {
                for &i in &self.nodes[id].inputs {
                    live[i] = true;
                }
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if let (Some(_), false) = (node.spec.param_ids(), live[id]) {
                return Err(Error::Config(format!(
                    "layer '{}' is unreachable from the output",
                    node.name
                )));
            }
        }
        Ok(Network {
            nodes: self.nodes,
            params: self.params,
            output,
            taps: self.taps,
            seed: self.seed,
        })
    }
}
