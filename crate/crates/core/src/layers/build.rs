//! Instantiates a [`NetworkSpec`] into graph nodes at a given ladder rung.
//!
//! Parameters are named after their position in the layer list
//! (`g.s{stage}.l{layer}.w`, `d.b{block}.l{layer}.b`, `g.rgb{rung}.w`, ...),
//! so a network rebuilt at the next rung finds the weights it shares with
//! the previous one by name. Building twice into the same graph reuses the
//! existing parameters instead of creating new ones.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerSpec, NetworkSpec};
use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape3d, Tensor};

/// Whether the newest rung is fading in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fade {
    Stable,
    /// Blend with the previous rung's path using a one-element node in `[0, 1]`.
    Transition(NodeId),
}

/// Nodes produced by [`discriminator`].
#[derive(Clone, Copy, Debug)]
pub struct DiscNodes {
    /// Output of the layer before the scoring dense layer, `[B, F]`.
    pub features: NodeId,
    /// `[B, 1]` score, absent when built without the head.
    pub score: Option<NodeId>,
}

/// He-initialized weight, or the existing parameter of that name.
fn weight<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    name: &str,
    dims: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Result<NodeId> {
    if let Some(id) = g.find(name) {
        if g.dims(id) != dims {
            return Err(shape_err!(
                "parameter {name} has dims {:?}, expected {dims:?}",
                g.dims(id)
            ));
        }
        return Ok(id);
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
    g.param(name, Tensor::from_parts(dims.to_vec(), data)?)
}

fn bias<T: Scalar>(g: &mut Graph<T>, name: &str, n: usize) -> Result<NodeId> {
    if let Some(id) = g.find(name) {
        if g.dims(id) != [n] {
            return Err(shape_err!(
                "parameter {name} has dims {:?}, expected [{n}]",
                g.dims(id)
            ));
        }
        return Ok(id);
    }
    g.param(name, Tensor::zeros(&[n]))
}

pub(crate) fn conv_layer<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    x: NodeId,
    prefix: &str,
    out_ch: usize,
    kernel: [usize; 3],
    rng: &mut R,
) -> Result<NodeId> {
    let in_ch = g.dims(x)[1];
    let fan_in = in_ch * kernel.iter().product::<usize>();
    let w = weight(
        g,
        &format!("{prefix}.w"),
        &[out_ch, in_ch, kernel[0], kernel[1], kernel[2]],
        fan_in,
        rng,
    )?;
    let b = bias(g, &format!("{prefix}.b"), out_ch)?;
    g.conv3d_bias(x, w, b)
}

pub(crate) fn dense_layer<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    x: NodeId,
    prefix: &str,
    units: usize,
    rng: &mut R,
) -> Result<NodeId> {
    let dims = g.dims(x).to_vec();
    let flat = if dims.len() == 2 {
        x
    } else {
        g.reshape(x, &[dims[0], dims[1..].iter().product()])?
    };
    let n = g.dims(flat)[1];
    let w = weight(g, &format!("{prefix}.w"), &[units, n], n, rng)?;
    let b = bias(g, &format!("{prefix}.b"), units)?;
    g.dense(flat, w, b)
}

/// Applies one layer; `prefix` names its parameters.
fn apply<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    layer: &LayerSpec,
    x: NodeId,
    prefix: &str,
    rng: &mut R,
) -> Result<NodeId> {
    match *layer {
        LayerSpec::Dense {
            units,
            volume,
            fixed,
        } => {
            let u = if fixed { units } else { spec.scale(units) };
            match volume {
                None => dense_layer(g, x, prefix, u, rng),
                Some(v) => {
                    let y = dense_layer(g, x, prefix, u * v.volume(), rng)?;
                    let b = g.dims(y)[0];
                    g.reshape(y, &[b, u, v.t, v.h, v.w])
                }
            }
        }
        LayerSpec::Conv3d { channels, kernel } => {
            conv_layer(g, x, prefix, spec.scale(channels), kernel, rng)
        }
        LayerSpec::Upsample { factor } => g.upsample3d(x, factor),
        LayerSpec::Downsample { factor } => g.avg_pool3d(x, factor),
        LayerSpec::Pixelnorm => g.pixel_norm(x, spec.pixel_norm_eps),
        LayerSpec::MinibatchStddev => g.minibatch_stddev(x, spec.stddev_eps),
        LayerSpec::LeakyRelu => Ok(g.leaky_relu(x, spec.leaky_slope)),
        LayerSpec::ToRgb | LayerSpec::FromRgb => Err(Error::Spec(format!(
            "{layer:?} is only valid at the ends of a layer list"
        ))),
    }
}

fn run<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    layers: &[LayerSpec],
    mut x: NodeId,
    prefix: &str,
    rng: &mut R,
) -> Result<NodeId> {
    for (j, layer) in layers.iter().enumerate() {
        x = apply(g, spec, layer, x, &format!("{prefix}.l{j}"), rng)?;
    }
    Ok(x)
}

fn check_fade(k: usize, fade: Fade) -> Result<()> {
    if k == 0 && fade != Fade::Stable {
        return Err(Error::Spec(
            "the base rung has no previous rung to fade from".into(),
        ));
    }
    Ok(())
}

/// Generator at rung index `k`, mapping `z: [B, latent]` to `[B, 3, t, h, w]`.
pub fn generator<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    k: usize,
    z: NodeId,
    fade: Fade,
    rng: &mut R,
) -> Result<NodeId> {
    let st = spec.gen_stages()?;
    if k >= st.stages.len() {
        return Err(Error::OffLadder(format!(
            "rung index {k} (ladder has {})",
            st.stages.len()
        )));
    }
    check_fade(k, fade)?;
    if g.dims(z) != [g.dims(z)[0], spec.latent_dim] {
        return Err(shape_err!(
            "latent input {:?} must be [B, {}]",
            g.dims(z),
            spec.latent_dim
        ));
    }
    let ic = spec.image_channels;
    let mut h = z;
    for (s, layers) in st.stages[..k].iter().enumerate() {
        h = run(g, spec, layers, h, &format!("g.s{s}"), rng)?;
    }
    let high_feat = run(g, spec, st.stages[k], h, &format!("g.s{k}"), rng)?;
    let high = conv_layer(g, high_feat, &format!("g.rgb{k}"), ic, [1, 1, 1], rng)?;
    match fade {
        Fade::Stable => Ok(high),
        Fade::Transition(alpha) => {
            let low = conv_layer(g, h, &format!("g.rgb{}", k - 1), ic, [1, 1, 1], rng)?;
            let factor = match st.stages[k][0] {
                LayerSpec::Upsample { factor } => factor,
                _ => unreachable!("stage {k} starts with upsample"),
            };
            let low = g.upsample3d(low, factor)?;
            g.lerp(low, high, alpha)
        }
    }
}

/// Discriminator at rung index `k` applied to `x: [B, 3, t, h, w]`.
pub fn discriminator<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    k: usize,
    x: NodeId,
    fade: Fade,
    with_head: bool,
    rng: &mut R,
) -> Result<DiscNodes> {
    let d = spec.disc_stages()?;
    let ladder = spec.ladder()?;
    if k >= ladder.len() {
        return Err(Error::OffLadder(format!(
            "rung index {k} (ladder has {})",
            ladder.len()
        )));
    }
    check_fade(k, fade)?;
    let r = ladder[k];
    let expect = [g.dims(x)[0], spec.image_channels, r.t, r.h, r.w];
    if g.dims(x) != expect {
        return Err(shape_err!(
            "discriminator input {:?} at rung {r} must be {expect:?}",
            g.dims(x)
        ));
    }
    let from_rgb = |g: &mut Graph<T>, x: NodeId, j: usize, rng: &mut R| -> Result<NodeId> {
        let c = spec.disc_input_channels(j)?;
        let y = conv_layer(g, x, &format!("d.rgb{j}"), c, [1, 1, 1], rng)?;
        run(g, spec, d.rgb_post, y, &format!("d.rgb{j}.post"), rng)
    };
    let mut h = from_rgb(g, x, k, rng)?;
    if k > 0 {
        h = run(g, spec, d.blocks[k - 1], h, &format!("d.b{k}"), rng)?;
        if let Fade::Transition(alpha) = fade {
            let factor = match d.blocks[k - 1].last() {
                Some(LayerSpec::Downsample { factor }) => *factor,
                _ => unreachable!("blocks end with downsample"),
            };
            let pooled = g.avg_pool3d(x, factor)?;
            let low = from_rgb(g, pooled, k - 1, rng)?;
            h = g.lerp(low, h, alpha)?;
        }
        for j in (1..k).rev() {
            h = run(g, spec, d.blocks[j - 1], h, &format!("d.b{j}"), rng)?;
        }
    }
    let (body, head) = d.tail.split_at(d.tail.len() - 1);
    let features = run(g, spec, body, h, "d.tail", rng)?;
    let score = if with_head {
        let j = body.len();
        Some(apply(
            g,
            spec,
            &head[0],
            features,
            &format!("d.tail.l{j}"),
            rng,
        )?)
    } else {
        None
    };
    Ok(DiscNodes { features, score })
}

/// A network in its own graph with a bound-at-run-time input.
#[derive(Clone, Debug)]
pub struct Network<T> {
    pub graph: Graph<T>,
    pub input: NodeId,
    /// Present for transition-mode builds; bind a one-element tensor.
    pub alpha: Option<NodeId>,
    pub output: NodeId,
}

impl<T: Scalar> Network<T> {
    pub fn set_alpha(&mut self, a: f64) -> Result<()> {
        let id = self
            .alpha
            .ok_or_else(|| Error::Graph("network was built without a fade-in".into()))?;
        self.graph.set_value(id, Tensor::from_f64(vec![1], &[a])?)
    }

    pub fn run(&mut self, input: Tensor<T>) -> Result<Tensor<T>> {
        self.graph.set_value(self.input, input)?;
        Ok(self.graph.forward(&[self.output])?.remove(0))
    }
}

fn alpha_input<T: Scalar>(g: &mut Graph<T>, transition: bool) -> Result<(Option<NodeId>, Fade)> {
    if transition {
        let a = g.input("alpha", &[1])?;
        g.set_value(a, Tensor::zeros(&[1]))?;
        Ok((Some(a), Fade::Transition(a)))
    } else {
        Ok((None, Fade::Stable))
    }
}

/// Generator graph at `rung` for minibatches of `batch` latents.
pub fn build_generator<T: Scalar, R: Rng>(
    spec: &NetworkSpec,
    rung: Shape3d,
    batch: usize,
    transition: bool,
    rng: &mut R,
) -> Result<Network<T>> {
    let k = spec.rung_index(rung)?;
    let mut graph = Graph::new();
    let input = graph.input("z", &[batch, spec.latent_dim])?;
    let (alpha, fade) = alpha_input(&mut graph, transition)?;
    let output = generator(&mut graph, spec, k, input, fade, rng)?;
    Ok(Network {
        graph,
        input,
        alpha,
        output,
    })
}

/// Discriminator graph at `rung` producing `[B, 1]` scores.
pub fn build_discriminator<T: Scalar, R: Rng>(
    spec: &NetworkSpec,
    rung: Shape3d,
    batch: usize,
    transition: bool,
    rng: &mut R,
) -> Result<Network<T>> {
    let k = spec.rung_index(rung)?;
    let mut graph = Graph::new();
    let input = graph.input("x", &[batch, spec.image_channels, rung.t, rung.h, rung.w])?;
    let (alpha, fade) = alpha_input(&mut graph, transition)?;
    let out = discriminator(&mut graph, spec, k, input, fade, true, rng)?;
    Ok(Network {
        graph,
        input,
        alpha,
        output: out.score.expect("head requested"),
    })
}
