use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Shape3d, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Placeholder bound with [`Graph::set_value`] before evaluation.
    Input,
    /// Trainable parameter.
    Param,
    Const,
}

/// Elementwise piecewise-linear maps whose derivative is a 0/1/slope mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Piecewise {
    /// `x` for `x >= 0`, `slope * x` otherwise.
    LeakyRelu(f64),
    /// Clamp into `[lo, hi]`; derivative 1 strictly inside or on the bounds.
    Clamp { lo: f64, hi: f64 },
}

impl Piecewise {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Piecewise::LeakyRelu(s) => {
                if v >= T::zero() {
                    v
                } else {
                    T::lit(s) * v
                }
            }
            Piecewise::Clamp { lo, hi } => v.max(T::lit(lo)).min(T::lit(hi)),
        }
    }

    fn slope<T: Scalar>(self, v: T) -> T {
        match self {
            Piecewise::LeakyRelu(s) => {
                if v >= T::zero() {
                    T::one()
                } else {
                    T::lit(s)
                }
            }
            Piecewise::Clamp { lo, hi } => {
                if v >= T::lit(lo) && v <= T::lit(hi) {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf(LeafKind),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    /// `1/x`, defined as 0 at `x = 0`.
    Recip(NodeId),
    Sqrt(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Sigmoid(NodeId),
    Piecewise(NodeId, Piecewise),
    /// `g * f'(x)` for a piecewise map `f`; constant in `x`.
    PiecewiseGrad {
        x: NodeId,
        g: NodeId,
        rule: Piecewise,
    },
    ReduceSum(NodeId, Vec<usize>),
    BroadcastTo(NodeId),
    Reshape(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Conv3d(NodeId, NodeId),
    ConvWeightGrad {
        x: NodeId,
        g: NodeId,
        ksize: [usize; 3],
    },
    FlipSwap(NodeId),
    AvgPool(NodeId, Shape3d),
    Upsample(NodeId, Shape3d),
    Concat(NodeId, NodeId, usize),
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Pad {
        x: NodeId,
        axis: usize,
        before: usize,
        after: usize,
    },
    /// Stable ascending sort of each column along axis 0.
    Sort(NodeId),
    /// Row permutation recorded by the `Sort` node `perm_of`.
    Permute {
        x: NodeId,
        perm_of: NodeId,
        inverse: bool,
    },
}

impl Op {
    /// Every node this one reads during evaluation.
    pub fn inputs(&self) -> Vec<NodeId> {
        let mut v = self.diff_inputs();
        match *self {
            Op::PiecewiseGrad { x, .. } => v.push(x),
            Op::Permute { perm_of, .. } => v.push(perm_of),
            _ => {}
        }
        v
    }

    /// Inputs through which gradients flow.
    pub fn diff_inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match *self {
            Leaf(_) => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | Conv3d(a, b) | Concat(a, b, _) => {
                vec![a, b]
            }
            ConvWeightGrad { x, g, .. } => vec![x, g],
            PiecewiseGrad { g, .. } => vec![g],
            Neg(a)
            | Scale(a, _)
            | AddConst(a, _)
            | Recip(a)
            | Sqrt(a)
            | Log(a)
            | Exp(a)
            | Sigmoid(a)
            | Piecewise(a, _)
            | ReduceSum(a, _)
            | BroadcastTo(a)
            | Reshape(a)
            | Transpose(a)
            | FlipSwap(a)
            | AvgPool(a, _)
            | Upsample(a, _)
            | Sort(a) => vec![a],
            Slice { x, .. } | Pad { x, .. } | Permute { x, .. } => vec![x],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    pub(crate) op: Op,
    pub(crate) dims: Vec<usize>,
    pub(crate) name: Option<String>,
    pub(crate) value: Option<Tensor<T>>,
    pub(crate) perm: Option<Vec<Vec<usize>>>,
}

/// Append-only computation graph. Leaves hold bound values; interior
/// values are computed lazily by [`Graph::forward`] and cached until a leaf
/// changes.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    names: HashMap<String, NodeId>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            names: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn dims(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].dims
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].name.as_deref()
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// Cached value, if evaluated (always present for bound leaves).
    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].value.as_ref()
    }

    pub fn is_param(&self, id: NodeId) -> bool {
        self.nodes[id.0].op == Op::Leaf(LeafKind::Param)
    }

    /// Trainable parameters as `(name, id)`, in creation order.
    pub fn params(&self) -> Vec<(String, NodeId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.op == Op::Leaf(LeafKind::Param))
            .map(|(i, n)| (n.name.clone().unwrap_or_default(), NodeId(i)))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params()
            .iter()
            .map(|(_, id)| self.nodes[id.0].dims.iter().product::<usize>())
            .sum()
    }

    fn push(
        &mut self,
        op: Op,
        dims: Vec<usize>,
        name: Option<String>,
        value: Option<Tensor<T>>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        if let Some(n) = &name {
            self.names.insert(n.clone(), id);
        }
        self.nodes.push(Node {
            op,
            dims,
            name,
            value,
            perm: None,
        });
        id
    }

    fn check_name(&self, name: &str) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(Error::Graph(format!("duplicate node name {name:?}")));
        }
        Ok(())
    }

    pub fn input(&mut self, name: &str, dims: &[usize]) -> Result<NodeId> {
        self.check_name(name)?;
        if dims.is_empty() || dims.contains(&0) {
            return Err(shape_err!("input {name:?} has invalid dims {dims:?}"));
        }
        Ok(self.push(
            Op::Leaf(LeafKind::Input),
            dims.to_vec(),
            Some(name.to_string()),
            None,
        ))
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> Result<NodeId> {
        self.check_name(name)?;
        Ok(self.push(
            Op::Leaf(LeafKind::Param),
            value.dims().to_vec(),
            Some(name.to_string()),
            Some(value),
        ))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(
            Op::Leaf(LeafKind::Const),
            value.dims().to_vec(),
            None,
            Some(value),
        )
    }

    /// Rebinds a leaf. All interior caches are dropped.
    pub fn set_value(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = &self.nodes[id.0];
        if !matches!(node.op, Op::Leaf(_)) {
            return Err(Error::Graph(format!("node {} is not a leaf", id.0)));
        }
        if node.dims != value.dims() {
            return Err(shape_err!(
                "binding {:?} to leaf {:?} of dims {:?}",
                value.dims(),
                node.name,
                node.dims
            ));
        }
        self.nodes[id.0].value = Some(value);
        self.invalidate();
        Ok(())
    }

    /// Mutable access to a leaf value; interior caches are dropped.
    pub fn leaf_value_mut(&mut self, id: NodeId) -> Result<&mut Tensor<T>> {
        if !matches!(self.nodes[id.0].op, Op::Leaf(_)) {
            return Err(Error::Graph(format!("node {} is not a leaf", id.0)));
        }
        self.invalidate();
        self.nodes[id.0]
            .value
            .as_mut()
            .ok_or(Error::UnboundInput(id.0))
    }

    fn invalidate(&mut self) {
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf(_)) {
                n.value = None;
                n.perm = None;
            }
        }
    }

    // ---- builders -------------------------------------------------------

    fn same_dims(&self, a: NodeId, b: NodeId, what: &str) -> Result<Vec<usize>> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err!(
                "{what}: {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            ));
        }
        Ok(self.dims(a).to_vec())
    }

    fn unary(&mut self, op: Op, a: NodeId) -> NodeId {
        let dims = self.dims(a).to_vec();
        self.push(op, dims, None, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.same_dims(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), d, None, None))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.same_dims(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b), d, None, None))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.same_dims(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), d, None, None))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Neg(a), a)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Scale(a, c), a)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::AddConst(a, c), a)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Recip(a), a)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sqrt(a), a)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Log(a), a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp(a), a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid(a), a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.mul(a, a).expect("same node")
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.unary(Op::Piecewise(a, Piecewise::LeakyRelu(slope)), a)
    }

    /// `|x|`, with derivative +1 at 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, -1.0)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Piecewise(a, Piecewise::Clamp { lo, hi }), a)
    }

    pub fn piecewise_grad(&mut self, x: NodeId, g: NodeId, rule: Piecewise) -> Result<NodeId> {
        let d = self.same_dims(x, g, "piecewise_grad")?;
        Ok(self.push(Op::PiecewiseGrad { x, g, rule }, d, None, None))
    }

    pub fn reduce_sum(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let dims = self.dims(a).to_vec();
        if let Some(&ax) = axes.iter().find(|&&ax| ax >= dims.len()) {
            return Err(shape_err!("reduce axis {ax} out of range for {dims:?}"));
        }
        let out: Vec<usize> = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        Ok(self.push(Op::ReduceSum(a, axes), out, None, None))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let rank = self.dims(a).len();
        let axes: Vec<usize> = (0..rank).collect();
        let r = self.reduce_sum(a, &axes).expect("valid axes");
        self.reshape(r, &[1]).expect("one element")
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n: usize = self.dims(a).iter().product();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn broadcast_to(&mut self, a: NodeId, dims: &[usize]) -> Result<NodeId> {
        let src = self.dims(a);
        if src.len() != dims.len() || src.iter().zip(dims).any(|(&s, &d)| s != d && s != 1) {
            return Err(shape_err!("cannot broadcast {:?} to {:?}", src, dims));
        }
        if src == dims {
            return Ok(a);
        }
        Ok(self.push(Op::BroadcastTo(a), dims.to_vec(), None, None))
    }

    pub fn reshape(&mut self, a: NodeId, dims: &[usize]) -> Result<NodeId> {
        let n: usize = self.dims(a).iter().product();
        if dims.iter().product::<usize>() != n || dims.contains(&0) {
            return Err(shape_err!(
                "cannot reshape {:?} to {:?}",
                self.dims(a),
                dims
            ));
        }
        if self.dims(a) == dims {
            return Ok(a);
        }
        Ok(self.push(Op::Reshape(a), dims.to_vec(), None, None))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        match (self.dims(a), self.dims(b)) {
            (&[m, k], &[k2, n]) if k == k2 => {
                Ok(self.push(Op::MatMul(a, b), vec![m, n], None, None))
            }
            (da, db) => Err(shape_err!("matmul {:?} x {:?}", da, db)),
        }
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        match *self.dims(a) {
            [m, n] => Ok(self.push(Op::Transpose(a), vec![n, m], None, None)),
            _ => Err(shape_err!("transpose of {:?}", self.dims(a))),
        }
    }

    pub fn conv3d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        match (self.dims(x), self.dims(w)) {
            (&[b, ci, t, h, wd], &[co, kci, kt, kh, kw])
                if ci == kci && kt % 2 == 1 && kh % 2 == 1 && kw % 2 == 1 =>
            {
                Ok(self.push(Op::Conv3d(x, w), vec![b, co, t, h, wd], None, None))
            }
            (dx, dw) => Err(shape_err!("conv3d input {:?} with kernel {:?}", dx, dw)),
        }
    }

    pub fn conv3d_weight_grad(
        &mut self,
        x: NodeId,
        g: NodeId,
        ksize: [usize; 3],
    ) -> Result<NodeId> {
        match (self.dims(x), self.dims(g)) {
            (&[b, ci, t, h, w], &[b2, co, t2, h2, w2]) if (b, t, h, w) == (b2, t2, h2, w2) => {
                Ok(self.push(
                    Op::ConvWeightGrad { x, g, ksize },
                    vec![co, ci, ksize[0], ksize[1], ksize[2]],
                    None,
                    None,
                ))
            }
            (dx, dg) => Err(shape_err!("conv3d_weight_grad {:?} / {:?}", dx, dg)),
        }
    }

    pub fn flip_swap(&mut self, w: NodeId) -> Result<NodeId> {
        match *self.dims(w) {
            [co, ci, kt, kh, kw] => {
                Ok(self.push(Op::FlipSwap(w), vec![ci, co, kt, kh, kw], None, None))
            }
            _ => Err(shape_err!("flip_swap of {:?}", self.dims(w))),
        }
    }

    pub fn avg_pool3d(&mut self, x: NodeId, f: Shape3d) -> Result<NodeId> {
        match *self.dims(x) {
            [b, c, t, h, w] if t % f.t == 0 && h % f.h == 0 && w % f.w == 0 => Ok(self.push(
                Op::AvgPool(x, f),
                vec![b, c, t / f.t, h / f.h, w / f.w],
                None,
                None,
            )),
            _ => Err(shape_err!("avg_pool3d of {:?} by {f}", self.dims(x))),
        }
    }

    pub fn upsample3d(&mut self, x: NodeId, f: Shape3d) -> Result<NodeId> {
        match *self.dims(x) {
            [b, c, t, h, w] => Ok(self.push(
                Op::Upsample(x, f),
                vec![b, c, t * f.t, h * f.h, w * f.w],
                None,
                None,
            )),
            _ => Err(shape_err!("upsample3d of {:?}", self.dims(x))),
        }
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let (da, db) = (self.dims(a), self.dims(b));
        let ok = da.len() == db.len()
            && axis < da.len()
            && da
                .iter()
                .zip(db)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !ok {
            return Err(shape_err!("concat {:?} and {:?} on axis {axis}", da, db));
        }
        let mut dims = da.to_vec();
        dims[axis] += db[axis];
        Ok(self.push(Op::Concat(a, b, axis), dims, None, None))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let d = self.dims(x);
        if axis >= d.len() || len == 0 || start + len > d[axis] {
            return Err(shape_err!(
                "slice [{start}, +{len}) of axis {axis} in {:?}",
                d
            ));
        }
        let mut dims = d.to_vec();
        dims[axis] = len;
        Ok(self.push(
            Op::Slice {
                x,
                axis,
                start,
                len,
            },
            dims,
            None,
            None,
        ))
    }

    pub fn pad(&mut self, x: NodeId, axis: usize, before: usize, after: usize) -> Result<NodeId> {
        let d = self.dims(x);
        if axis >= d.len() {
            return Err(shape_err!("pad axis {axis} of {:?}", d));
        }
        let mut dims = d.to_vec();
        dims[axis] += before + after;
        Ok(self.push(
            Op::Pad {
                x,
                axis,
                before,
                after,
            },
            dims,
            None,
            None,
        ))
    }

    /// Sorts each column of a `[N]` or `[N, K]` node ascending (stable).
    pub fn sort_columns(&mut self, x: NodeId) -> Result<NodeId> {
        if !matches!(self.dims(x).len(), 1 | 2) {
            return Err(shape_err!("sort of {:?}", self.dims(x)));
        }
        Ok(self.unary(Op::Sort(x), x))
    }

    pub fn permute(&mut self, x: NodeId, perm_of: NodeId, inverse: bool) -> Result<NodeId> {
        if !matches!(self.op(perm_of), Op::Sort(_)) {
            return Err(Error::Graph("permute must reference a sort node".into()));
        }
        let d = self.same_dims(x, perm_of, "permute")?;
        Ok(self.push(
            Op::Permute {
                x,
                perm_of,
                inverse,
            },
            d,
            None,
            None,
        ))
    }

    // ---- composites -----------------------------------------------------

    /// `x . w^T + b` with `x: [B, N]`, `w: [M, N]`, `b: [M]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        let m = self.dims(w)[0];
        if self.dims(b) != [m] {
            return Err(shape_err!("dense bias {:?} for {m} outputs", self.dims(b)));
        }
        let b2 = self.reshape(b, &[1, m])?;
        let dims = self.dims(y).to_vec();
        let bb = self.broadcast_to(b2, &dims)?;
        self.add(y, bb)
    }

    /// Convolution plus per-channel bias.
    pub fn conv3d_bias(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.conv3d(x, w)?;
        let co = self.dims(w)[0];
        if self.dims(b) != [co] {
            return Err(shape_err!("conv bias {:?} for {co} channels", self.dims(b)));
        }
        let b5 = self.reshape(b, &[1, co, 1, 1, 1])?;
        let dims = self.dims(y).to_vec();
        let bb = self.broadcast_to(b5, &dims)?;
        self.add(y, bb)
    }

    /// Mean over `axes`, kept as extent-1 axes.
    pub fn mean_axes(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let n: usize = axes.iter().map(|&ax| self.dims(a)[ax]).product();
        let s = self.reduce_sum(a, axes)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Multiplies `x` by a node broadcastable to its shape.
    pub fn mul_broadcast(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let dims = self.dims(x).to_vec();
        let sb = self.broadcast_to(s, &dims)?;
        self.mul(x, sb)
    }

    /// `(1 - a) * low + a * high` with `a` a one-element node.
    pub fn lerp(&mut self, low: NodeId, high: NodeId, a: NodeId) -> Result<NodeId> {
        let dims = self.same_dims(low, high, "lerp")?;
        if self.dims(a).iter().product::<usize>() != 1 {
            return Err(shape_err!(
                "lerp weight must have one element, got {:?}",
                self.dims(a)
            ));
        }
        let ones = vec![1; dims.len()];
        let a1 = self.reshape(a, &ones)?;
        let ab = self.broadcast_to(a1, &dims)?;
        let neg = self.neg(ab);
        let one_minus = self.add_const(neg, 1.0);
        let l = self.mul(low, one_minus)?;
        let h = self.mul(high, ab)?;
        self.add(l, h)
    }

    // ---- evaluation -----------------------------------------------------

    /// Evaluates `outputs` (and their ancestors) and returns copies.
    pub fn forward(&mut self, outputs: &[NodeId]) -> Result<Vec<Tensor<T>>> {
        self.evaluate(outputs)?;
        Ok(outputs
            .iter()
            .map(|&o| self.nodes[o.0].value.clone().expect("evaluated"))
            .collect())
    }

    /// Evaluates `outputs` in place; read results with [`Graph::value`].
    pub fn evaluate(&mut self, outputs: &[NodeId]) -> Result<()> {
        let Some(max) = outputs.iter().map(|o| o.0).max() else {
            return Ok(());
        };
        let mut needed = vec![false; max + 1];
        for o in outputs {
            needed[o.0] = true;
        }
        for i in (0..=max).rev() {
            if needed[i] && self.nodes[i].value.is_none() {
                for inp in self.nodes[i].op.inputs() {
                    needed[inp.0] = true;
                }
            }
        }
        for i in 0..=max {
            if !needed[i] || self.nodes[i].value.is_some() {
                continue;
            }
            let (value, perm) = self.eval_node(i)?;
            debug_assert_eq!(
                value.dims(),
                &self.nodes[i].dims[..],
                "node {i} {:?}",
                self.nodes[i].op
            );
            self.nodes[i].value = Some(value);
            self.nodes[i].perm = perm;
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("input evaluated first")
    }

    fn eval_node(&self, i: usize) -> Result<(Tensor<T>, Option<Vec<Vec<usize>>>)> {
        use Op::*;
        let node = &self.nodes[i];
        let v = match node.op {
            Leaf(_) => return Err(Error::UnboundInput(i)),
            Add(a, b) => self.val(a).add(self.val(b))?,
            Sub(a, b) => self.val(a).sub(self.val(b))?,
            Mul(a, b) => self.val(a).mul(self.val(b))?,
            Neg(a) => self.val(a).map(|v| -v),
            Scale(a, c) => self.val(a).scale(T::lit(c)),
            AddConst(a, c) => {
                let c = T::lit(c);
                self.val(a).map(|v| v + c)
            }
            Recip(a) => self
                .val(a)
                .map(|v| if v == T::zero() { T::zero() } else { v.recip() }),
            Sqrt(a) => self.val(a).map(|v| v.sqrt()),
            Log(a) => self.val(a).map(|v| v.ln()),
            Exp(a) => self.val(a).map(|v| v.exp()),
            Sigmoid(a) => self.val(a).map(|v| T::one() / (T::one() + (-v).exp())),
            Piecewise(a, rule) => self.val(a).map(|v| rule.apply(v)),
            PiecewiseGrad { x, g, rule } => self
                .val(g)
                .zip_with(self.val(x), |gv, xv| gv * rule.slope(xv))?,
            ReduceSum(a, ref axes) => tensor::reduce_sum(self.val(a), axes)?,
            BroadcastTo(a) => tensor::broadcast_to(self.val(a), &node.dims)?,
            Reshape(a) => self.val(a).reshape(&node.dims)?,
            MatMul(a, b) => tensor::matmul(self.val(a), self.val(b))?,
            Transpose(a) => tensor::transpose(self.val(a))?,
            Conv3d(x, w) => tensor::conv3d_nobias(self.val(x), self.val(w))?,
            ConvWeightGrad { x, g, ksize } => {
                tensor::conv3d_weight_grad(self.val(x), self.val(g), ksize)?
            }
            FlipSwap(w) => tensor::flip_swap_kernel(self.val(w))?,
            AvgPool(x, f) => tensor::avg_pool3d(self.val(x), f)?,
            Upsample(x, f) => tensor::upsample_nearest3d(self.val(x), f)?,
            Concat(a, b, axis) => tensor::concat_axis(self.val(a), self.val(b), axis)?,
            Slice {
                x,
                axis,
                start,
                len,
            } => tensor::slice_axis(self.val(x), axis, start, len)?,
            Pad {
                x,
                axis,
                before,
                after,
            } => tensor::pad_axis(self.val(x), axis, before, after)?,
            Sort(x) => {
                let xv = self.val(x);
                let perm = tensor::column_argsort(xv)?;
                let sorted = tensor::permute_columns(xv, &perm, false);
                return Ok((sorted, Some(perm)));
            }
            Permute {
                x,
                perm_of,
                inverse,
            } => {
                let perm = self.nodes[perm_of.0]
                    .perm
                    .as_ref()
                    .expect("sort evaluated first");
                tensor::permute_columns(self.val(x), perm, inverse)
            }
        };
        Ok((v, None))
    }
}
