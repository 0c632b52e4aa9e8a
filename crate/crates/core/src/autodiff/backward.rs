use super::graph::{Graph, LeafKind, NodeId, Op};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Result of [`Graph::grad`]: one gradient node per requested input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub nodes: Vec<NodeId>,
    /// `true` where the input does not influence the output; the matching
    /// entry of `nodes` is then a zero constant.
    pub unreachable: Vec<bool>,
}

impl<T: Scalar> Graph<T> {
    /// Appends nodes computing `d out / d wrt[i]` for a one-element `out`.
    ///
    /// The returned nodes are ordinary graph nodes, so `grad` may be applied
    /// to them again. Contributions at fan-out points are summed in
    /// decreasing node order.
    pub fn grad(&mut self, out: NodeId, wrt: &[NodeId]) -> Result<Gradients> {
        if self.dims(out).iter().product::<usize>() != 1 {
            return Err(shape_err!(
                "grad needs a one-element output, got {:?}",
                self.dims(out)
            ));
        }
        let n = out.index() + 1;

        // Nodes whose value depends on some `wrt` node through differentiable edges.
        let mut depends = vec![false; n];
        for w in wrt {
            if w.index() < n {
                depends[w.index()] = true;
            }
        }
        for i in 0..n {
            if !depends[i]
                && self
                    .op(NodeId(i))
                    .diff_inputs()
                    .iter()
                    .any(|j| depends[j.index()])
            {
                depends[i] = true;
            }
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; n];
        if depends[out.index()] {
            let seed = self.constant(Tensor::ones(self.dims(out)));
            adj[out.index()] = Some(seed);
        }

        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            let op = self.op(NodeId(i)).clone();
            if matches!(op, Op::Leaf(_)) {
                continue;
            }
            for (input, contrib) in self.vjp(NodeId(i), &op, g, &depends)? {
                let slot = &mut adj[input.index()];
                *slot = Some(match *slot {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        let mut nodes = Vec::with_capacity(wrt.len());
        let mut unreachable = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match adj.get(w.index()).copied().flatten() {
                Some(g) => {
                    nodes.push(g);
                    unreachable.push(false);
                }
                None => {
                    let z = self.constant(Tensor::zeros(self.dims(w)));
                    nodes.push(z);
                    unreachable.push(true);
                }
            }
        }
        Ok(Gradients { nodes, unreachable })
    }

    /// L2 norm of the gradient of `sum(y)` with respect to `wrt`, as a
    /// differentiable one-element node.
    pub fn gradient_norm(&mut self, y: NodeId, wrt: NodeId) -> Result<NodeId> {
        let s = self.sum_all(y);
        let g = self.grad(s, &[wrt])?.nodes[0];
        let sq = self.square(g);
        let ss = self.sum_all(sq);
        Ok(self.sqrt(ss))
    }

    /// Gradient of every trainable parameter, in [`Graph::params`] order.
    pub fn param_grads(&mut self, out: NodeId, params: &[NodeId]) -> Result<Vec<NodeId>> {
        debug_assert!(params
            .iter()
            .all(|&p| *self.op(p) == Op::Leaf(LeafKind::Param)));
        Ok(self.grad(out, params)?.nodes)
    }

    /// Cotangent contributions of node `y` (with upstream gradient `g`) to
    /// each of its differentiable inputs that depends on a target.
    fn vjp(
        &mut self,
        y: NodeId,
        op: &Op,
        g: NodeId,
        depends: &[bool],
    ) -> Result<Vec<(NodeId, NodeId)>> {
        use Op::*;
        let live = |id: NodeId| depends[id.index()];
        let mut out = Vec::with_capacity(2);
        match *op {
            Leaf(_) => {}
            Add(a, b) => {
                if live(a) {
                    out.push((a, g));
                }
                if live(b) {
                    out.push((b, g));
                }
            }
            Sub(a, b) => {
                if live(a) {
                    out.push((a, g));
                }
                if live(b) {
                    out.push((b, self.neg(g)));
                }
            }
            Mul(a, b) => {
                if live(a) {
                    out.push((a, self.mul(g, b)?));
                }
                if live(b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Neg(a) => out.push((a, self.neg(g))),
            Scale(a, c) => out.push((a, self.scale(g, c))),
            AddConst(a, _) => out.push((a, g)),
            Recip(a) => {
                let yy = self.mul(y, y)?;
                let t = self.mul(g, yy)?;
                out.push((a, self.neg(t)));
            }
            Sqrt(a) => {
                let r = self.recip(y);
                let h = self.scale(r, 0.5);
                out.push((a, self.mul(g, h)?));
            }
            Log(a) => {
                let r = self.recip(a);
                out.push((a, self.mul(g, r)?));
            }
            Exp(a) => out.push((a, self.mul(g, y)?)),
            Sigmoid(a) => {
                let ny = self.neg(y);
                let one_minus = self.add_const(ny, 1.0);
                let d = self.mul(y, one_minus)?;
                out.push((a, self.mul(g, d)?));
            }
            Piecewise(a, rule) => out.push((a, self.piecewise_grad(a, g, rule)?)),
            PiecewiseGrad { x, g: g0, rule } => {
                if live(g0) {
                    out.push((g0, self.piecewise_grad(x, g, rule)?));
                }
            }
            ReduceSum(a, _) => {
                let dims = self.dims(a).to_vec();
                out.push((a, self.broadcast_to(g, &dims)?));
            }
            BroadcastTo(a) => {
                let src = self.dims(a).to_vec();
                let dst = self.dims(y).to_vec();
                let axes: Vec<usize> = (0..src.len()).filter(|&i| src[i] != dst[i]).collect();
                out.push((a, self.reduce_sum(g, &axes)?));
            }
            Reshape(a) => {
                let dims = self.dims(a).to_vec();
                out.push((a, self.reshape(g, &dims)?));
            }
            MatMul(a, b) => {
                if live(a) {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if live(b) {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Transpose(a) => out.push((a, self.transpose(g)?)),
            Conv3d(x, w) => {
                if live(x) {
                    let fw = self.flip_swap(w)?;
                    out.push((x, self.conv3d(g, fw)?));
                }
                if live(w) {
                    let d = self.dims(w);
                    let ksize = [d[2], d[3], d[4]];
                    out.push((w, self.conv3d_weight_grad(x, g, ksize)?));
                }
            }
            ConvWeightGrad { x, g: g0, .. } => {
                if live(x) {
                    let fg = self.flip_swap(g)?;
                    out.push((x, self.conv3d(g0, fg)?));
                }
                if live(g0) {
                    out.push((g0, self.conv3d(x, g)?));
                }
            }
            FlipSwap(w) => out.push((w, self.flip_swap(g)?)),
            AvgPool(x, f) => {
                let u = self.upsample3d(g, f)?;
                out.push((x, self.scale(u, 1.0 / f.volume() as f64)));
            }
            Upsample(x, f) => {
                let p = self.avg_pool3d(g, f)?;
                out.push((x, self.scale(p, f.volume() as f64)));
            }
            Concat(a, b, axis) => {
                let na = self.dims(a)[axis];
                let nb = self.dims(b)[axis];
                if live(a) {
                    out.push((a, self.slice(g, axis, 0, na)?));
                }
                if live(b) {
                    out.push((b, self.slice(g, axis, na, nb)?));
                }
            }
            Slice {
                x,
                axis,
                start,
                len,
            } => {
                let n = self.dims(x)[axis];
                out.push((x, self.pad(g, axis, start, n - start - len)?));
            }
            Pad {
                x, axis, before, ..
            } => {
                let n = self.dims(x)[axis];
                out.push((x, self.slice(g, axis, before, n)?));
            }
            Sort(x) => out.push((x, self.permute(g, y, true)?)),
            Permute {
                x,
                perm_of,
                inverse,
            } => out.push((x, self.permute(g, perm_of, !inverse)?)),
        }
        Ok(out)
    }
}
