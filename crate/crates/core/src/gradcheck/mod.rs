//! Directional finite-difference checks of graph gradients.
//!
//! A probe compares `<grad f(x), v>` with `(f(x + eps v) - f(x - eps v)) / 2 eps`
//! for a random unit direction `v`. Probes whose stencil crosses a kink
//! (a leaky-ReLU/clamp branch change or a reordering inside a sort) are
//! discarded and redrawn, since neither side is meaningful there.

mod cases;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::{Graph, LeafKind, NodeId, Op, Piecewise};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cases::{op_cases, OpCase};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    pub probes: usize,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            probes: 100,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub probes: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} probes ({} skipped), max rel err {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.probes,
            self.skipped,
            self.max_rel_err
        )
    }
}

/// Branch and ordering signature of every evaluated non-smooth node.
fn kink_signature(g: &Graph<f64>) -> Vec<u8> {
    let mut sig = Vec::new();
    for node in &g.nodes {
        match node.op {
            Op::Piecewise(a, rule) => {
                let Some(v) = g.nodes[a.index()].value.as_ref() else {
                    continue;
                };
                sig.extend(v.data().iter().map(|&x| match rule {
                    Piecewise::LeakyRelu(_) => (x >= 0.0) as u8,
                    Piecewise::Clamp { lo, hi } => (x >= lo) as u8 + (x > hi) as u8,
                }));
            }
            Op::Sort(_) => {
                if let Some(perm) = &node.perm {
                    for col in perm {
                        sig.extend(col.iter().flat_map(|&i| (i as u32).to_le_bytes()));
                    }
                }
            }
            _ => {}
        }
    }
    sig
}

fn shift(base: &[Tensor<f64>], dir: &[Tensor<f64>], t: f64) -> Vec<Tensor<f64>> {
    base.iter()
        .zip(dir)
        .map(|(b, d)| b.zip_with(d, |x, v| x + t * v).expect("same dims"))
        .collect()
}

fn bind(g: &mut Graph<f64>, wrt: &[NodeId], vals: &[Tensor<f64>]) -> Result<()> {
    for (&id, v) in wrt.iter().zip(vals) {
        g.set_value(id, v.clone())?;
    }
    Ok(())
}

fn eval_with_signature(
    g: &mut Graph<f64>,
    out: NodeId,
    wrt: &[NodeId],
    vals: &[Tensor<f64>],
) -> Result<(f64, Vec<u8>)> {
    bind(g, wrt, vals)?;
    let v = g.forward(&[out])?[0].item();
    Ok((v, kink_signature(g)))
}

/// Checks `grad(out, wrt)` against central differences. Every `wrt` node
/// must be a bound leaf; its value is restored afterwards.
pub fn check_gradient(
    g: &mut Graph<f64>,
    out: NodeId,
    wrt: &[NodeId],
    name: &str,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    for &w in wrt {
        if !matches!(g.op(w), Op::Leaf(LeafKind::Param | LeafKind::Input)) {
            return Err(Error::Graph(format!(
                "gradcheck target {} is not an input or parameter",
                w.index()
            )));
        }
    }
    let base: Vec<Tensor<f64>> = wrt
        .iter()
        .map(|&w| g.value(w).cloned().ok_or(Error::UnboundInput(w.index())))
        .collect::<Result<_>>()?;
    let grads = g.grad(out, wrt)?.nodes;
    g.evaluate(&grads)?;
    let analytic: Vec<Tensor<f64>> = grads
        .iter()
        .map(|&n| g.value(n).cloned().expect("evaluated"))
        .collect();
    let (_, sig0) = eval_with_signature(g, out, wrt, &base)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut done, mut skipped, mut worst) = (0, 0, 0.0f64);
    let max_attempts = cfg.probes * 20;
    while done < cfg.probes && done + skipped < max_attempts {
        let mut dir: Vec<Tensor<f64>> = base
            .iter()
            .map(|b| Tensor::from_fn(b.dims(), |_| StandardNormal.sample(&mut rng)))
            .collect();
        let norm = dir
            .iter()
            .map(|d| d.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        for d in &mut dir {
            *d = d.scale(1.0 / norm);
        }
        let (fp, sp) = eval_with_signature(g, out, wrt, &shift(&base, &dir, cfg.eps))?;
        let (fm, sm) = eval_with_signature(g, out, wrt, &shift(&base, &dir, -cfg.eps))?;
        if sp != sig0 || sm != sig0 {
            skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * cfg.eps);
        let an: f64 = analytic
            .iter()
            .zip(&dir)
            .map(|(a, d)| a.dot(d).expect("same dims"))
            .sum();
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(cfg.floor);
        worst = worst.max(rel);
        done += 1;
    }
    bind(g, wrt, &base)?;
    Ok(GradCheckReport {
        name: name.to_string(),
        probes: done,
        skipped,
        max_rel_err: worst,
        passed: done >= cfg.probes && worst <= cfg.tolerance,
    })
}

/// Checks second derivatives: builds `s = sum_i <grad_i out, c_i>` for
/// fixed random `c_i` and checks the gradient of `s`, i.e. the
/// Hessian-vector products of `out`, against differences of first-order
/// gradients.
pub fn check_second_order(
    g: &mut Graph<f64>,
    out: NodeId,
    wrt: &[NodeId],
    name: &str,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let grads = g.grad(out, wrt)?.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut s: Option<NodeId> = None;
    for gr in grads {
        let c = g.constant(Tensor::from_fn(g.dims(gr), |_| {
            StandardNormal.sample(&mut rng)
        }));
        let m = g.mul(gr, c)?;
        let t = g.sum_all(m);
        s = Some(match s {
            None => t,
            Some(prev) => g.add(prev, t)?,
        });
    }
    let s = s.ok_or_else(|| Error::Invalid("no parameters to check".into()))?;
    check_gradient(g, s, wrt, name, cfg)
}

/// Runs every registered op case (or those named in `only`).
pub fn run_op_cases(
    only: Option<&[String]>,
    cfg: &GradCheckConfig,
) -> Result<Vec<GradCheckReport>> {
    let cases = op_cases();
    if let Some(names) = only {
        for n in names {
            if !cases.iter().any(|c| c.name == n) {
                return Err(Error::Invalid(format!("unknown gradcheck case {n:?}")));
            }
        }
    }
    let mut reports = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        if only.is_some_and(|names| !names.iter().any(|n| n == case.name)) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let mut g = Graph::new();
        let (out, wrt) = (case.build)(&mut g, &mut rng)?;
        reports.push(check_gradient(&mut g, out, &wrt, case.name, cfg)?);
    }
    Ok(reports)
}
