//! Reverse-mode differentiation over the small operator set the model needs.
//!
//! A [`Graph`] is a tape: every operator appends one node whose parents are
//! strictly earlier nodes, so the recorded graph is acyclic by construction.
//! [`Graph::backward`] walks the tape once in reverse and accumulates
//! gradients in parent-index order, which makes the result deterministic.

mod conv;
mod filter;
pub mod gradcheck;
mod sampling;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{contract_err, dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

pub use filter::{neighbourhood_weights, KernelMap};
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use sampling::{bilinear_at, DEFORM_TAPS};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Iteration order is the lexical order of names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return contract_err(format!("parameter `{name}` registered twice"));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of parameter tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}

type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>]) -> Vec<Tensor<T>>>;

enum Op<T: Scalar> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize },
    AvgPool { input: Var, factor: usize },
    Resize { input: Var },
    GridSample { input: Var, offsets: Var },
    DeformConv { input: Var, weight: Var, offsets: Var },
    LeakyRelu { input: Var, slope: T },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: T },
    L1Mean { a: Var, target: Tensor<T> },
    RefFilter { source: Var, reference: Var, sizes: KernelMap, weights: Vec<T> },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

impl<T: Scalar> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::AvgPool { input, .. }
            | Op::Resize { input }
            | Op::LeakyRelu { input, .. }
            | Op::Scale { input, .. } => vec![*input],
            Op::GridSample { input, offsets } => vec![*input, *offsets],
            Op::DeformConv { input, weight, offsets } => vec![*input, *weight, *offsets],
            Op::Concat { a, b } | Op::Add { a, b } => vec![*a, *b],
            Op::L1Mean { a, .. } => vec![*a],
            Op::RefFilter { source, reference, .. } => vec![*source, *reference],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording tape of tensor operations.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    param_lookup: HashMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).field("params", &self.params.len()).finish()
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    params: BTreeMap<String, Tensor<T>>,
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a named parameter registered in the graph.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Gradient of any differentiable leaf.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), param_lookup: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Differentiable input that is not a named parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers (once) the named parameter from `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_lookup.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push_raw(value, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        self.param_lookup.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers every parameter of `store`, so each receives a gradient entry.
    pub fn register_all(&mut self, store: &ParamStore<T>) -> Result<()> {
        for name in store.names() {
            self.param(store, name)?;
        }
        Ok(())
    }

    /// Copy of `v` with no gradient path back to it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    /// 2-D convolution; padding replicates edge pixels.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let value = conv::conv2d_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), stride, padding)?;
        self.push(value, Op::Conv2d { input, weight, bias, stride, padding }, "conv2d")
    }

    pub fn avg_pool2d(&mut self, input: Var, factor: usize) -> Result<Var> {
        let value = tensor::avg_pool(self.value(input), factor)?;
        self.push(value, Op::AvgPool { input, factor }, "avg_pool2d")
    }

    /// Differentiable form of [`tensor::bilinear_resize`].
    pub fn resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = tensor::bilinear_resize(self.value(input), out_h, out_w)?;
        self.push(value, Op::Resize { input }, "bilinear_resize")
    }

    /// Warps `input` by per-pixel offsets (`[dx, dy]` channels, pixel units).
    pub fn grid_sample(&mut self, input: Var, offsets: Var) -> Result<Var> {
        let value = sampling::grid_sample_forward(self.value(input), self.value(offsets))?;
        self.push(value, Op::GridSample { input, offsets }, "grid_sample")
    }

    /// 3x3 deformable convolution without modulation; offsets are laid out as
    /// `(dx_1, dy_1, ..., dx_9, dy_9)` over the row-major kernel taps.
    pub fn deform_conv2d(&mut self, input: Var, weight: Var, offsets: Var) -> Result<Var> {
        let value = sampling::deform_conv_forward(self.value(input), self.value(weight), self.value(offsets))?;
        self.push(value, Op::DeformConv { input, weight, offsets }, "deform_conv2d")
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        let value = self.value(input).map(|x| if x >= T::zero() { x } else { slope * x });
        self.push(value, Op::LeakyRelu { input, slope }, "leaky_relu")
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (ha, wa) != (hb, wb) {
            return dim_err(format!("concat_channels spatial mismatch: {ha}x{wa} vs {hb}x{wb}"));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        self.push(value, Op::Concat { a, b }, "concat_channels")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(value, Op::Add { a, b }, "add")
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let value = self.value(input).scale(factor);
        self.push(value, Op::Scale { input, factor }, "scale")
    }

    /// Mean absolute difference against a constant target.
    pub fn l1_mean(&mut self, a: Var, target: &Tensor<T>) -> Result<Var> {
        let av = self.value(a);
        av.expect_same_shape(target)?;
        let n = T::lit(av.len().max(1) as f64);
        let total: T = av.data().iter().zip(target.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let value = Tensor::scalar(total / n);
        self.push(value, Op::L1Mean { a, target: target.clone() }, "l1_mean")
    }

    /// Correlation-weighted self-filtering of `source` with weights driven by `reference`.
    pub fn reference_filter(&mut self, source: Var, reference: Var, sizes: KernelMap) -> Result<Var> {
        let (value, weights) = filter::reference_filter_forward(self.value(source), self.value(reference), &sizes)?;
        self.push(value, Op::RefFilter { source, reference, sizes, weights }, "reference_filter")
    }

    /// Operator with a caller-supplied value and backward rule. The rule maps
    /// the output gradient and the input values to one gradient per input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>, &[&Tensor<T>]) -> Vec<Tensor<T>> + 'static,
    ) -> Result<Var> {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward: Box::new(backward) }, "custom")
    }

    /// Reverse-mode gradients of a scalar `loss` w.r.t. every registered
    /// parameter (zero when unreached) and every differentiable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return contract_err(format!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let loss_shape = self.value(loss).shape().to_vec();
        grads[loss.0] = Some(Tensor::full(loss_shape, T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (parent, pg) in self.node_backward(node, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut params = BTreeMap::new();
        for (name, v) in &self.params {
            let g = grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.value(*v).shape().to_vec()));
            params.insert(name.clone(), g);
        }
        let leaves = grads
            .into_iter()
            .enumerate()
            .filter(|(i, _)| matches!(self.nodes[*i].op, Op::Leaf) && self.nodes[*i].requires_grad)
            .map(|(i, g)| {
                let g = g.unwrap_or_else(|| Tensor::zeros(self.nodes[i].value.shape().to_vec()));
                (Var(i), g)
            })
            .collect();
        Ok(Gradients { params, leaves })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let shaped = |v: Var, data: Vec<T>| Tensor::new(self.value(v).shape().to_vec(), data);
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, stride, padding } => {
                let cg = conv::conv2d_backward(g, self.value(*input), self.value(*weight), *stride, *padding, self.needs(*input))?;
                if let Some(di) = cg.input {
                    out.push((*input, shaped(*input, di)?));
                }
                out.push((*weight, shaped(*weight, cg.weight)?));
                if let Some(b) = bias {
                    out.push((*b, shaped(*b, cg.bias)?));
                }
            }
            Op::AvgPool { input, factor } => {
                let inv = T::one() / T::lit((factor * factor) as f64);
                let spread = tensor::nearest_broadcast(g, *factor)?.scale(inv);
                out.push((*input, spread.reshape(self.value(*input).shape().to_vec())?));
            }
            Op::Resize { input } => {
                out.push((*input, resize_backward(g, self.value(*input))?));
            }
            Op::GridSample { input, offsets } => {
                let (di, doff) = sampling::grid_sample_backward(g, self.value(*input), self.value(*offsets))?;
                out.push((*input, shaped(*input, di)?));
                out.push((*offsets, shaped(*offsets, doff)?));
            }
            Op::DeformConv { input, weight, offsets } => {
                let dg = sampling::deform_conv_backward(g, self.value(*input), self.value(*weight), self.value(*offsets))?;
                out.push((*input, shaped(*input, dg.input)?));
                out.push((*weight, shaped(*weight, dg.weight)?));
                out.push((*offsets, shaped(*offsets, dg.offsets)?));
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input);
                let d = g.zip_map(x, |gv, xv| if xv >= T::zero() { gv } else { gv * *slope })?;
                out.push((*input, d));
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).dims3()?.0;
                let cb = self.value(*b).dims3()?.0;
                out.push((*a, g.narrow_channels(0, ca)?.reshape(self.value(*a).shape().to_vec())?));
                out.push((*b, g.narrow_channels(ca, cb)?.reshape(self.value(*b).shape().to_vec())?));
            }
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Scale { input, factor } => {
                out.push((*input, g.scale(*factor)));
            }
            Op::L1Mean { a, target } => {
                let av = self.value(*a);
                let coef = g.data()[0] / T::lit(av.len().max(1) as f64);
                let d = av.zip_map(target, |x, y| {
                    if x > y {
                        coef
                    } else if x < y {
                        -coef
                    } else {
                        T::zero()
                    }
                })?;
                out.push((*a, d));
            }
            Op::RefFilter { source, reference, sizes, weights } => {
                let (ds, dr) = filter::reference_filter_backward(g, self.value(*source), self.value(*reference), sizes, weights)?;
                out.push((*source, shaped(*source, ds)?));
                out.push((*reference, shaped(*reference, dr)?));
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = backward(g, &values);
                if gs.len() != inputs.len() {
                    return contract_err("custom backward returned the wrong number of gradients");
                }
                for (v, gi) in inputs.iter().zip(gs) {
                    self.value(*v).expect_same_shape(&gi)?;
                    out.push((*v, gi));
                }
            }
        }
        Ok(out)
    }
}

fn resize_backward<T: Scalar>(g: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    let (_, oh, ow) = g.dims3()?;
    let plan = tensor::ResizePlan::<T>::new(h, w, oh, ow);
    let one = T::one();
    let mut d = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let gp = g.channel(ci);
        let dp = &mut d[ci * h * w..(ci + 1) * h * w];
        for (oy, ay) in plan.rows.iter().enumerate() {
            for (ox, ax) in plan.cols.iter().enumerate() {
                let gv = gp[oy * ow + ox];
                let top = gv * (one - ay.frac);
                let bottom = gv * ay.frac;
                dp[ay.lo * w + ax.lo] += top * (one - ax.frac);
                dp[ay.lo * w + ax.hi] += top * ax.frac;
                dp[ay.hi * w + ax.lo] += bottom * (one - ax.frac);
                dp[ay.hi * w + ax.hi] += bottom * ax.frac;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), d)
}
