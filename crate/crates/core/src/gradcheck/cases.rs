//! Small randomized graphs exercising each differentiable operation, plus
//! whole scaled-down networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, NodeId, Piecewise};
use crate::error::Result;
use crate::layers::{discriminator, generator, mlp, Fade, NetworkSpec};
use crate::losses::{gradient_penalty, ProjectionSet};
use crate::tensor::{Shape3d, Tensor};

type Build = fn(&mut Graph<f64>, &mut ChaCha8Rng) -> Result<(NodeId, Vec<NodeId>)>;

/// A named scalar-valued graph and the leaves to differentiate against.
pub struct OpCase {
    pub name: &'static str,
    pub build: Build,
}

fn uniform(
    g: &mut Graph<f64>,
    rng: &mut ChaCha8Rng,
    name: &str,
    dims: &[usize],
    lo: f64,
    hi: f64,
) -> Result<NodeId> {
    let t = Tensor::from_fn(dims, |_| rng.random_range(lo..hi));
    g.param(name, t)
}

fn normal(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, name: &str, dims: &[usize]) -> Result<NodeId> {
    uniform(g, rng, name, dims, -1.5, 1.5)
}

/// `sum(y * c)` for a fixed random `c`, so every output element matters.
fn probe(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, y: NodeId) -> Result<NodeId> {
    let c = g.constant(Tensor::from_fn(g.dims(y), |_| StandardNormal.sample(rng)));
    let m = g.mul(y, c)?;
    Ok(g.sum_all(m))
}

fn unary(
    g: &mut Graph<f64>,
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
    f: impl Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
) -> Result<(NodeId, Vec<NodeId>)> {
    let x = uniform(g, rng, "x", &[3, 4], lo, hi)?;
    let y = f(g, x)?;
    Ok((probe(g, rng, y)?, vec![x]))
}

fn binary(
    g: &mut Graph<f64>,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Graph<f64>, NodeId, NodeId) -> Result<NodeId>,
) -> Result<(NodeId, Vec<NodeId>)> {
    let a = normal(g, rng, "a", &[3, 4])?;
    let b = normal(g, rng, "b", &[3, 4])?;
    let y = f(g, a, b)?;
    Ok((probe(g, rng, y)?, vec![a, b]))
}

const VIDEO: [usize; 5] = [2, 2, 4, 4, 2];

fn video(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, name: &str) -> Result<NodeId> {
    normal(g, rng, name, &VIDEO)
}

fn base4() -> NetworkSpec {
    NetworkSpec::scaled(4, 128)
}

fn net_params(g: &Graph<f64>) -> Vec<NodeId> {
    g.params().into_iter().map(|(_, id)| id).collect()
}

fn latent(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, b: usize, n: usize) -> Result<NodeId> {
    let z = g.input("z", &[b, n])?;
    g.set_value(z, Tensor::from_fn(&[b, n], |_| StandardNormal.sample(rng)))?;
    Ok(z)
}

pub fn op_cases() -> Vec<OpCase> {
    macro_rules! case {
        ($name:literal, $body:expr) => {
            OpCase {
                name: $name,
                build: $body,
            }
        };
    }
    vec![
        case!("add", |g, r| binary(g, r, |g, a, b| g.add(a, b))),
        case!("sub", |g, r| binary(g, r, |g, a, b| g.sub(a, b))),
        case!("mul", |g, r| binary(g, r, |g, a, b| g.mul(a, b))),
        case!("neg", |g, r| unary(g, r, -2.0, 2.0, |g, x| Ok(g.neg(x)))),
        case!("scale", |g, r| unary(g, r, -2.0, 2.0, |g, x| Ok(
            g.scale(x, -1.7)
        ))),
        case!("add_const", |g, r| unary(g, r, -2.0, 2.0, |g, x| Ok(
            g.add_const(x, 0.3)
        ))),
        case!("recip", |g, r| unary(g, r, 0.5, 2.0, |g, x| Ok(g.recip(x)))),
        case!("sqrt", |g, r| unary(g, r, 0.5, 2.0, |g, x| Ok(g.sqrt(x)))),
        case!("log", |g, r| unary(g, r, 0.5, 2.0, |g, x| Ok(g.log(x)))),
        case!("exp", |g, r| unary(g, r, -2.0, 2.0, |g, x| Ok(g.exp(x)))),
        case!("sigmoid", |g, r| unary(g, r, -3.0, 3.0, |g, x| Ok(
            g.sigmoid(x)
        ))),
        case!("square", |g, r| unary(g, r, -2.0, 2.0, |g, x| Ok(
            g.square(x)
        ))),
        case!("leaky_relu", |g, r| unary(g, r, -2.0, 2.0, |g, x| Ok(
            g.leaky_relu(x, 0.2)
        ))),
        case!("abs", |g, r| unary(g, r, -2.0, 2.0, |g, x| Ok(g.abs(x)))),
        case!("clamp", |g, r| unary(g, r, -2.0, 2.0, |g, x| Ok(
            g.clamp(x, -0.5, 1.0)
        ))),
        case!("piecewise_grad", |g, r| {
            let x = normal(g, r, "x", &[3, 4])?;
            let up = normal(g, r, "g", &[3, 4])?;
            let y = g.piecewise_grad(x, up, Piecewise::LeakyRelu(0.2))?;
            Ok((probe(g, r, y)?, vec![up]))
        }),
        case!("reduce_sum", |g, r| {
            let x = normal(g, r, "x", &[2, 3, 4])?;
            let y = g.reduce_sum(x, &[0, 2])?;
            Ok((probe(g, r, y)?, vec![x]))
        }),
        case!("broadcast_to", |g, r| {
            let x = normal(g, r, "x", &[1, 3, 1])?;
            let y = g.broadcast_to(x, &[2, 3, 4])?;
            Ok((probe(g, r, y)?, vec![x]))
        }),
        case!("reshape", |g, r| unary(g, r, -2.0, 2.0, |g, x| g
            .reshape(x, &[2, 6]))),
        case!("matmul", |g, r| {
            let a = normal(g, r, "a", &[3, 4])?;
            let b = normal(g, r, "b", &[4, 2])?;
            let y = g.matmul(a, b)?;
            Ok((probe(g, r, y)?, vec![a, b]))
        }),
        case!("transpose", |g, r| unary(g, r, -2.0, 2.0, |g, x| g
            .transpose(x))),
        case!("dense", |g, r| {
            let x = normal(g, r, "x", &[3, 4])?;
            let w = normal(g, r, "w", &[5, 4])?;
            let b = normal(g, r, "b", &[5])?;
            let y = g.dense(x, w, b)?;
            Ok((probe(g, r, y)?, vec![x, w, b]))
        }),
        case!("conv3d", |g, r| {
            let x = video(g, r, "x")?;
            let w = normal(g, r, "w", &[3, 2, 3, 3, 3])?;
            let y = g.conv3d(x, w)?;
            Ok((probe(g, r, y)?, vec![x, w]))
        }),
        case!("conv3d_bias", |g, r| {
            let x = video(g, r, "x")?;
            let w = normal(g, r, "w", &[3, 2, 1, 3, 1])?;
            let b = normal(g, r, "b", &[3])?;
            let y = g.conv3d_bias(x, w, b)?;
            Ok((probe(g, r, y)?, vec![x, w, b]))
        }),
        case!("conv3d_weight_grad", |g, r| {
            let x = video(g, r, "x")?;
            let up = normal(g, r, "g", &[2, 3, 4, 4, 2])?;
            let y = g.conv3d_weight_grad(x, up, [3, 3, 1])?;
            Ok((probe(g, r, y)?, vec![x, up]))
        }),
        case!("flip_swap", |g, r| {
            let w = normal(g, r, "w", &[3, 2, 3, 1, 3])?;
            let y = g.flip_swap(w)?;
            Ok((probe(g, r, y)?, vec![w]))
        }),
        case!("avg_pool3d", |g, r| {
            let x = video(g, r, "x")?;
            let y = g.avg_pool3d(x, Shape3d { t: 2, h: 2, w: 1 })?;
            Ok((probe(g, r, y)?, vec![x]))
        }),
        case!("upsample3d", |g, r| {
            let x = video(g, r, "x")?;
            let y = g.upsample3d(x, Shape3d { t: 1, h: 2, w: 2 })?;
            Ok((probe(g, r, y)?, vec![x]))
        }),
        case!("concat", |g, r| {
            let a = normal(g, r, "a", &[2, 3, 2])?;
            let b = normal(g, r, "b", &[2, 1, 2])?;
            let y = g.concat(a, b, 1)?;
            Ok((probe(g, r, y)?, vec![a, b]))
        }),
        case!("slice", |g, r| unary(g, r, -2.0, 2.0, |g, x| g
            .slice(x, 1, 1, 2))),
        case!("pad", |g, r| unary(g, r, -2.0, 2.0, |g, x| g
            .pad(x, 0, 1, 2))),
        case!("sort_columns", |g, r| {
            let x = normal(g, r, "x", &[6, 3])?;
            let y = g.sort_columns(x)?;
            Ok((probe(g, r, y)?, vec![x]))
        }),
        case!("lerp", |g, r| {
            let a = normal(g, r, "low", &[3, 4])?;
            let b = normal(g, r, "high", &[3, 4])?;
            let t = uniform(g, r, "alpha", &[1], 0.1, 0.9)?;
            let y = g.lerp(a, b, t)?;
            Ok((probe(g, r, y)?, vec![a, b, t]))
        }),
        case!("pixel_norm", |g, r| {
            let x = video(g, r, "x")?;
            let y = g.pixel_norm(x, 1e-8)?;
            Ok((probe(g, r, y)?, vec![x]))
        }),
        case!("minibatch_stddev", |g, r| {
            let x = normal(g, r, "x", &[3, 2, 2, 2, 2])?;
            let y = g.minibatch_stddev(x, 1e-8)?;
            Ok((probe(g, r, y)?, vec![x]))
        }),
        case!("gan_loss", |g, r| {
            let a = normal(g, r, "d_real", &[4, 1])?;
            let b = normal(g, r, "d_fake", &[4, 1])?;
            let (ld, lg) = g.gan_loss(a, b)?;
            let lg = g.scale(lg, 0.7);
            Ok((g.add(ld, lg)?, vec![a, b]))
        }),
        case!("wgan_loss", |g, r| {
            let a = normal(g, r, "d_real", &[4, 1])?;
            let b = normal(g, r, "d_fake", &[4, 1])?;
            let (ld, lg) = g.wgan_loss(a, b)?;
            let lg = g.scale(lg, 0.7);
            Ok((g.add(ld, lg)?, vec![a, b]))
        }),
        case!("feature_matching", |g, r| {
            let a = normal(g, r, "f_real", &[4, 3])?;
            let b = normal(g, r, "f_fake", &[5, 3])?;
            Ok((g.feature_matching_loss(a, b)?, vec![a, b]))
        }),
        case!("sliced_wasserstein", |g, r| {
            let a = normal(g, r, "x", &[6, 3])?;
            let b = normal(g, r, "y", &[6, 3])?;
            let q: Tensor<f64> = crate::linalg::random_orthogonal(3, r);
            let d = g.constant(q);
            Ok((g.sliced_wasserstein(a, b, d)?, vec![a]))
        }),
        case!("swgan_critic", |g, r| {
            let mut set = ProjectionSet::<f64>::random(3, 0.2, r);
            set.lambdas = Tensor::from_fn(&[3], |_| r.random_range(0.5..2.0));
            set.biases = Tensor::from_fn(&[3], |_| r.random_range(-0.5..0.5));
            let nodes = set.register(g)?;
            let e = normal(g, r, "e", &[4, 3])?;
            let y = nodes.apply(g, e)?;
            Ok((
                probe(g, r, y)?,
                vec![e, nodes.theta, nodes.lambda, nodes.bias],
            ))
        }),
        case!("gradient_norm", |g, r| {
            let x = normal(g, r, "x", &[3, 2])?;
            let h = mlp(g, x, &[4, 1], 0.2, "c", r)?;
            let n = g.gradient_norm(h, x)?;
            let mut wrt = net_params(g);
            wrt.retain(|&p| p != x);
            wrt.push(x);
            Ok((n, wrt))
        }),
        case!("gradient_penalty", |g, r| {
            let xr = normal(g, r, "x_real", &[3, 2])?;
            let xf = normal(g, r, "x_fake", &[3, 2])?;
            let u = uniform(g, r, "u", &[3], 0.1, 0.9)?;
            let mut rng2 = r.clone();
            let mut critic =
                move |g: &mut Graph<f64>, x: NodeId| mlp(g, x, &[4, 1], 0.2, "c", &mut rng2);
            let p = gradient_penalty(g, &mut critic, xr, xf, u, 1.0)?;
            Ok((p, net_params(g)))
        }),
        case!("generator_b4", |g, r| {
            let spec = base4();
            let z = latent(g, r, 2, spec.latent_dim)?;
            let y = generator(g, &spec, 0, z, Fade::Stable, r)?;
            Ok((probe(g, r, y)?, net_params(g)))
        }),
        case!("discriminator_b4", |g, r| {
            let spec = base4();
            let x = g.input("x", &[3, 3, 4, 4, 4])?;
            g.set_value(
                x,
                Tensor::from_fn(&[3, 3, 4, 4, 4], |_| StandardNormal.sample(r)),
            )?;
            let d = discriminator(g, &spec, 0, x, Fade::Stable, true, r)?;
            let mut wrt = net_params(g);
            wrt.push(x);
            Ok((probe(g, r, d.score.expect("head"))?, wrt))
        }),
        case!("gan_b4", |g, r| {
            let spec = base4();
            let z = latent(g, r, 3, spec.latent_dim)?;
            let fake = generator(g, &spec, 0, z, Fade::Stable, r)?;
            let d = discriminator(g, &spec, 0, fake, Fade::Stable, true, r)?;
            Ok((probe(g, r, d.score.expect("head"))?, net_params(g)))
        }),
        case!("gan_b4_transition", |g, r| {
            let spec = base4();
            let z = latent(g, r, 2, spec.latent_dim)?;
            let a = g.input("alpha", &[1])?;
            g.set_value(a, Tensor::scalar(0.4))?;
            let fake = generator(g, &spec, 1, z, Fade::Transition(a), r)?;
            let d = discriminator(g, &spec, 1, fake, Fade::Transition(a), true, r)?;
            Ok((probe(g, r, d.score.expect("head"))?, net_params(g)))
        }),
    ]
}
