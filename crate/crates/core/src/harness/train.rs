//! Training loop: phase graphs, alternating updates, evaluation, checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{Precision, TrainConfig};
use super::data::{DatasetKind, GaussMix, MovingDot, SyntheticDataset};
use super::optim::{Adam, AdamConfig, Moments};
use super::rng::{stream, Purpose};
use crate::autodiff::{Checkpoint, OPTIMIZER_PREFIX};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::layers::{
    build_generator, dense_layer, discriminator, generator, mlp, Fade, Network, NetworkSpec,
};
use crate::linalg::random_orthogonal;
use crate::losses::LossKind;
use crate::losses::{clip_weights, gradient_penalty};
use crate::losses::{swd, swgan_objective, ProjNodes, ProjectionSet, THETA_NAME};
use crate::progressive::{advance, alpha, blend, real_pyramid, GrowthSchedule, Mode, PhaseState};
use crate::scalar::Scalar;
use crate::tensor::{Shape3d, Tensor};

/// Largest loss magnitude tolerated before a run is aborted.
pub const LOSS_LIMIT: f64 = 1e6;

/// Random-stream counters reserve this many draw sites per step.
const SITES_PER_STEP: u64 = 64;
const G_SITE: u64 = SITES_PER_STEP - 1;

/// Copies every parameter of `to` that `from` holds under the same name and
/// dims. Returns how many were copied.
pub fn copy_params<T: Scalar>(from: &Graph<T>, to: &mut Graph<T>) -> Result<usize> {
    let mut n = 0;
    for (name, id) in to.params() {
        if let Some(src) = from.find(&name) {
            if from.is_param(src) && from.dims(src) == to.dims(id) {
                let v = from.value(src).expect("params are bound").clone();
                to.set_value(id, v)?;
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Generator at `new_rung` in transition mode, carrying over every parameter
/// it shares with `old`.
pub fn grow_network<T: Scalar, R: Rng>(
    old: &Graph<T>,
    spec: &NetworkSpec,
    new_rung: Shape3d,
    batch: usize,
    rng: &mut R,
) -> Result<Network<T>> {
    let mut net = build_generator(spec, new_rung, batch, true, rng)?;
    copy_params(old, &mut net.graph)?;
    Ok(net)
}

/// Standard normal `[n, dim]` latents.
pub fn sample_latents<T: Scalar, R: Rng>(n: usize, dim: usize, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(&[n, dim], |_| T::lit(rng.sample(StandardNormal)))
}

/// Projection directions for `k`-dimensional samples: `frames` orthogonal
/// bases while `k <= frame_limit`, otherwise `fallback` random unit vectors.
pub fn projection_directions<T: Scalar, R: Rng>(
    k: usize,
    frames: usize,
    frame_limit: usize,
    fallback: usize,
    rng: &mut R,
) -> Tensor<T> {
    if k <= frame_limit {
        let blocks: Vec<Tensor<T>> = (0..frames).map(|_| random_orthogonal(k, rng)).collect();
        let p = k * frames;
        Tensor::from_fn(&[k, p], |i| {
            let (r, c) = (i / p, i % p);
            blocks[c / k].data()[r * k + c % k]
        })
    } else {
        let mut d: Tensor<T> =
            Tensor::from_fn(&[k, fallback], |_| T::lit(rng.sample(StandardNormal)));
        let data = d.data_mut();
        for c in 0..fallback {
            let norm = (0..k)
                .map(|r| data[r * fallback + c].as_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            for r in 0..k {
                data[r * fallback + c] = T::lit(data[r * fallback + c].as_f64() / norm);
            }
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub images: u64,
    pub rung_index: usize,
    pub alpha: f64,
    pub swd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub rung_index: usize,
    pub rung: [usize; 3],
    pub mode: Mode,
    pub start_step: u64,
    pub start_images: u64,
    pub batch: usize,
    pub generator_output: Vec<usize>,
    pub generator_params: usize,
    pub discriminator_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub steps: u64,
    pub images: u64,
    pub final_state: PhaseState,
    /// Last critic loss of each step; empty without a critic.
    pub loss_d: Vec<f64>,
    pub loss_g: Vec<f64>,
    pub alpha: Vec<f64>,
    pub rung_index: Vec<usize>,
    pub swd: Vec<EvalPoint>,
    pub phases: Vec<PhaseRecord>,
}

impl RunReport {
    fn new(config: TrainConfig) -> Self {
        Self {
            config,
            steps: 0,
            images: 0,
            final_state: PhaseState::default(),
            loss_d: Vec::new(),
            loss_g: Vec::new(),
            alpha: Vec::new(),
            rung_index: Vec::new(),
            swd: Vec::new(),
            phases: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

enum Arch {
    Toy { hidden: usize, features: usize },
    Video(NetworkSpec),
}

const TOY_SLOPE: f64 = 0.2;

impl Arch {
    fn generator<T: Scalar, R: Rng>(
        &self,
        g: &mut Graph<T>,
        k: usize,
        z: NodeId,
        fade: Fade,
        rng: &mut R,
    ) -> Result<NodeId> {
        match self {
            Arch::Toy { hidden, .. } => mlp(g, z, &[*hidden, 2], TOY_SLOPE, "g", rng),
            Arch::Video(spec) => generator(g, spec, k, z, fade, rng),
        }
    }

    /// `(features, score)`; the score is built only when `head` is set.
    fn critic<T: Scalar, R: Rng>(
        &self,
        g: &mut Graph<T>,
        k: usize,
        x: NodeId,
        fade: Fade,
        head: bool,
        rng: &mut R,
    ) -> Result<(NodeId, Option<NodeId>)> {
        match self {
            Arch::Toy { hidden, features } => {
                let f = mlp(
                    g,
                    x,
                    &[*hidden, *hidden, *features],
                    TOY_SLOPE,
                    "d.enc",
                    rng,
                )?;
                let score = if head {
                    let a = g.leaky_relu(f, TOY_SLOPE);
                    Some(dense_layer(g, a, "d.head", 1, rng)?)
                } else {
                    None
                };
                Ok((f, score))
            }
            Arch::Video(spec) => {
                let d = discriminator(g, spec, k, x, fade, head, rng)?;
                Ok((d.features, d.score))
            }
        }
    }

    fn feature_width(&self) -> Result<usize> {
        match self {
            Arch::Toy { features, .. } => Ok(*features),
            Arch::Video(spec) => spec.feature_width(),
        }
    }

    fn latent_dim(&self, cfg: &TrainConfig) -> usize {
        match self {
            Arch::Toy { .. } => cfg.latent_dim,
            Arch::Video(spec) => spec.latent_dim,
        }
    }
}

struct EvalGraph<T> {
    graph: Graph<T>,
    z: NodeId,
    alpha: Option<NodeId>,
    out: NodeId,
}

struct Phase<T> {
    key: (usize, Mode),
    graph: Graph<T>,
    batch: usize,
    z: NodeId,
    fake: NodeId,
    x_real: NodeId,
    x_fake: Option<NodeId>,
    alpha: Option<NodeId>,
    u_x: Option<NodeId>,
    u_y: Option<NodeId>,
    dirs: Option<NodeId>,
    fixed_theta: Option<NodeId>,
    proj: Option<ProjNodes>,
    loss_d: Option<NodeId>,
    loss_g: NodeId,
    d_params: Vec<NodeId>,
    d_grads: Vec<NodeId>,
    g_params: Vec<NodeId>,
    g_grads: Vec<NodeId>,
    eval: Option<EvalGraph<T>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    step: u64,
    images: u64,
    data_cursor: u64,
    state: PhaseState,
    phases_built: u64,
    adam_g_steps: BTreeMap<String, u64>,
    adam_d_steps: BTreeMap<String, u64>,
    report: RunReport,
}

/// Alternating-update trainer over the configured growth schedule.
pub struct Trainer<T> {
    cfg: TrainConfig,
    sched: GrowthSchedule,
    arch: Arch,
    dataset: SyntheticDataset,
    state: PhaseState,
    step: u64,
    images: u64,
    data_cursor: u64,
    phases_built: u64,
    phase: Option<Phase<T>>,
    adam_g: Adam<T>,
    adam_d: Adam<T>,
    report: RunReport,
    held_out: Option<Tensor<T>>,
}

fn has_critic(kind: LossKind) -> bool {
    kind != LossKind::SwdDirect
}

fn flatten<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let n = t.dims()[0];
    t.reshape(&[n, t.len() / n])
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.n_critic >= G_SITE as usize {
            return Err(Error::Config(format!("n_critic must be below {G_SITE}")));
        }
        let (sched, arch, dataset) = match cfg.dataset {
            DatasetKind::GaussMix2d => (
                GrowthSchedule::new(
                    vec![cfg.ladder[0]],
                    cfg.images_per_phase,
                    cfg.images_per_transition,
                )?,
                Arch::Toy {
                    hidden: cfg.toy_hidden,
                    features: cfg.toy_features,
                },
                SyntheticDataset::GaussMix2d(GaussMix::default()),
            ),
            DatasetKind::MovingDotVideo => {
                let sched = cfg.schedule()?;
                let spec =
                    NetworkSpec::with_ladder(cfg.base_channels, cfg.latent_dim, &cfg.ladder)?;
                let dot = MovingDot {
                    max_speed: cfg.dot_speed,
                    ..MovingDot::new(sched.final_rung())
                };
                (
                    sched,
                    Arch::Video(spec),
                    SyntheticDataset::MovingDotVideo(dot),
                )
            }
        };
        let d_config = AdamConfig {
            step_size: cfg.d_step_size.unwrap_or(cfg.optimizer.step_size),
            ..cfg.optimizer
        };
        Ok(Self {
            adam_g: Adam::new(cfg.optimizer),
            adam_d: Adam::new(d_config),
            report: RunReport::new(cfg.clone()),
            cfg,
            sched,
            arch,
            dataset,
            state: PhaseState::default(),
            step: 0,
            images: 0,
            data_cursor: 0,
            phases_built: 0,
            phase: None,
            held_out: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> PhaseState {
        self.state
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn images(&self) -> u64 {
        self.images
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    /// Graph of the current phase, building it if needed.
    pub fn graph(&mut self) -> Result<&Graph<T>> {
        self.ensure_phase(true)?;
        Ok(&self.phase.as_ref().expect("built").graph)
    }

    fn key(&self) -> (usize, Mode) {
        (self.state.rung_index, self.state.mode)
    }

    fn ensure_phase(&mut self, record: bool) -> Result<()> {
        if self.phase.as_ref().is_some_and(|p| p.key == self.key()) {
            return Ok(());
        }
        let mut phase = self.build_phase()?;
        if let Some(prev) = &self.phase {
            copy_params(&prev.graph, &mut phase.graph)?;
        }
        self.phases_built += 1;
        if record {
            let count = |g: &Graph<T>, prefixes: &[&str]| -> usize {
                g.params()
                    .iter()
                    .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
                    .map(|(_, id)| g.dims(*id).iter().product::<usize>())
                    .sum()
            };
            self.report.phases.push(PhaseRecord {
                rung_index: self.state.rung_index,
                rung: self.sched.ladder[self.state.rung_index].as_array(),
                mode: self.state.mode,
                start_step: self.step,
                start_images: self.images,
                batch: phase.batch,
                generator_output: phase.graph.dims(phase.fake).to_vec(),
                generator_params: count(&phase.graph, &["g."]),
                discriminator_params: count(&phase.graph, &["d.", "f."]),
            });
        }
        self.phase = Some(phase);
        Ok(())
    }

    fn sample_dims(&self) -> Vec<usize> {
        match &self.arch {
            Arch::Toy { .. } => vec![2],
            Arch::Video(spec) => {
                let r = self.sched.ladder[self.state.rung_index];
                vec![spec.image_channels, r.t, r.h, r.w]
            }
        }
    }

    fn build_phase(&self) -> Result<Phase<T>> {
        let (k, mode) = self.key();
        let loss = &self.cfg.loss;
        let mut rng = stream(self.cfg.seed, Purpose::Init, self.phases_built);
        let mut g = Graph::new();
        let b = self.cfg.batch_for(k);
        let mut dims = vec![b];
        dims.extend(self.sample_dims());
        let sample_len: usize = dims[1..].iter().product();

        let alpha = if mode == Mode::Transition {
            let a = g.input("alpha", &[1])?;
            g.set_value(a, Tensor::zeros(&[1]))?;
            Some(a)
        } else {
            None
        };
        let fade = alpha.map_or(Fade::Stable, Fade::Transition);
        let z = g.input("z", &[b, self.arch.latent_dim(&self.cfg)])?;
        let fake = self.arch.generator(&mut g, k, z, fade, &mut rng)?;
        let x_real = g.input("x_real", &dims)?;

        let arch = &self.arch;
        let mut x_fake = None;
        let (mut u_x, mut u_y, mut dirs, mut fixed_theta, mut proj) =
            (None, None, None, None, None);
        let (loss_d, loss_g) = match loss.kind {
            LossKind::SwdDirect => {
                let p = g.input("dirs", &[sample_len, self.swd_direct_width(sample_len)])?;
                dirs = Some(p);
                let xr = g.reshape(x_real, &[b, sample_len])?;
                let xf = g.reshape(fake, &[b, sample_len])?;
                (None, g.sliced_wasserstein(xr, xf, p)?)
            }
            LossKind::Swgan => {
                let xf = g.input("x_fake", &dims)?;
                x_fake = Some(xf);
                let ux = g.input("u_x", &[b])?;
                let uy = g.input("u_y", &[b])?;
                u_x = Some(ux);
                u_y = Some(uy);
                let width = arch.feature_width()?;
                let set = ProjectionSet::<T>::random(width, TOY_SLOPE, &mut rng);
                if loss.fixed_projections {
                    let th = g.input(THETA_NAME, &[width, width])?;
                    g.set_value(th, set.theta.clone())?;
                    fixed_theta = Some(th);
                }
                let p = set.register(&mut g)?;
                proj = Some(p);
                let mut crng = rng.clone();
                let mut enc = |g: &mut Graph<T>, x: NodeId| {
                    Ok(arch.critic(g, k, x, fade, false, &mut crng)?.0)
                };
                let l = swgan_objective(&mut g, &mut enc, &p, x_real, xf, ux, uy, loss)?;
                let e = enc(&mut g, fake)?;
                let s = p.apply(&mut g, e)?;
                let m = g.mean_all(s);
                (Some(l.loss_d), g.neg(m))
            }
            LossKind::Gan | LossKind::FeatureMatching | LossKind::WganClip | LossKind::WganGp => {
                let xf = g.input("x_fake", &dims)?;
                x_fake = Some(xf);
                let (fr, sr) = arch.critic(&mut g, k, x_real, fade, true, &mut rng)?;
                let (_, sf) = arch.critic(&mut g, k, xf, fade, true, &mut rng)?;
                let (fg, sg) = arch.critic(&mut g, k, fake, fade, true, &mut rng)?;
                let (sr, sf, sg) = (sr.expect("head"), sf.expect("head"), sg.expect("head"));
                match loss.kind {
                    LossKind::Gan => {
                        let (ld, _) = g.gan_loss(sr, sf)?;
                        let (_, lg) = g.gan_loss(sr, sg)?;
                        (Some(ld), lg)
                    }
                    LossKind::FeatureMatching => {
                        let (ld, _) = g.gan_loss(sr, sf)?;
                        (Some(ld), g.feature_matching_loss(fr, fg)?)
                    }
                    _ => {
                        let (mut ld, _) = g.wgan_loss(sr, sf)?;
                        let (_, lg) = g.wgan_loss(sr, sg)?;
                        if loss.kind == LossKind::WganGp {
                            let ux = g.input("u_x", &[b])?;
                            u_x = Some(ux);
                            let mut crng = rng.clone();
                            let mut critic = |g: &mut Graph<T>, x: NodeId| {
                                Ok(arch
                                    .critic(g, k, x, fade, true, &mut crng)?
                                    .1
                                    .expect("head"))
                            };
                            let gp = gradient_penalty(&mut g, &mut critic, x_real, xf, ux, 1.0)?;
                            let gp = g.scale(gp, loss.lambda1);
                            ld = g.add(ld, gp)?;
                        }
                        (Some(ld), lg)
                    }
                }
            }
        };

        let select = |g: &Graph<T>, prefixes: &[&str]| -> Vec<NodeId> {
            g.params()
                .into_iter()
                .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
                .map(|(_, id)| id)
                .collect()
        };
        let g_params = select(&g, &["g."]);
        let d_params = if loss_d.is_some() {
            select(&g, &["d.", "f."])
        } else {
            Vec::new()
        };
        let g_grads = g.grad(loss_g, &g_params)?.nodes;
        let d_grads = match loss_d {
            Some(ld) => g.grad(ld, &d_params)?.nodes,
            None => Vec::new(),
        };
        Ok(Phase {
            key: (k, mode),
            graph: g,
            batch: b,
            z,
            fake,
            x_real,
            x_fake,
            alpha,
            u_x,
            u_y,
            dirs,
            fixed_theta,
            proj,
            loss_d,
            loss_g,
            d_params,
            d_grads,
            g_params,
            g_grads,
            eval: None,
        })
    }

    fn swd_direct_width(&self, k: usize) -> usize {
        let p = self.cfg.loss.n_projections;
        if k <= 256 {
            k * p
        } else {
            128 * p
        }
    }

    /// Real minibatch at the active rung, blended with the previous rung
    /// during a fade-in.
    fn real_batch(&mut self, n: usize, a: f64) -> Result<Tensor<T>> {
        let x: Tensor<T> = self.dataset.sample_at(self.cfg.seed, self.data_cursor, n)?;
        self.data_cursor += n as u64;
        self.to_active_rung(&x, a)
    }

    fn to_active_rung(&self, x: &Tensor<T>, a: f64) -> Result<Tensor<T>> {
        match self.arch {
            Arch::Toy { .. } => Ok(x.clone()),
            Arch::Video(_) => match real_pyramid(x, &self.sched, self.state)? {
                (cur, None) => Ok(cur),
                (cur, Some(prev)) => blend(&prev, &cur, a),
            },
        }
    }

    fn check_loss(&self, what: &str, v: f64, a: f64) -> Result<()> {
        if v.is_finite() && v.abs() <= LOSS_LIMIT {
            return Ok(());
        }
        let mut msg = format!(
            "step {}: {what} = {v} (images {}, rung index {}, {:?}, alpha {a:.4})",
            self.step, self.images, self.state.rung_index, self.state.mode
        );
        if let (Some(dir), Some(p)) = (&self.cfg.checkpoint_dir, &self.phase) {
            let snap = dir.join(format!("abort-step-{}", self.step));
            let mut c = Checkpoint::from_graph(&p.graph);
            c.meta = serde_json::json!({ "step": self.step, "what": what, "value": v.to_string() });
            if c.save(&snap).is_ok() {
                msg.push_str(&format!("; parameters saved to {}", snap.display()));
            }
        }
        Err(Error::Aborted(msg))
    }

    /// One generator update preceded by `n_critic` critic updates.
    pub fn step(&mut self) -> Result<()> {
        self.ensure_phase(true)?;
        let a = alpha(self.state, &self.sched);
        let seed = self.cfg.seed;
        let base = self.step * SITES_PER_STEP;
        let kind = self.cfg.loss.kind;
        let (b, latent) = {
            let p = self.phase.as_ref().expect("built");
            (p.batch, p.graph.dims(p.z)[1])
        };
        if let Some(id) = self.phase.as_ref().expect("built").alpha {
            self.phase
                .as_mut()
                .expect("built")
                .graph
                .set_value(id, Tensor::from_f64(vec![1], &[a])?)?;
        }

        let mut consumed = 0u64;
        let mut last_d = None;
        if has_critic(kind) {
            for c in 0..self.cfg.n_critic as u64 {
                let real = self.real_batch(b, a)?;
                consumed += b as u64;
                let z = sample_latents(b, latent, &mut stream(seed, Purpose::Latent, base + c));
                let mut urng = stream(seed, Purpose::Interpolation, base + c);
                let u: Vec<Tensor<T>> = (0..2)
                    .map(|_| Tensor::from_fn(&[b], |_| T::lit(urng.random::<f64>())))
                    .collect();
                let theta = self.phase.as_ref().expect("built").fixed_theta.map(|id| {
                    let w = self.phase.as_ref().expect("built").graph.dims(id)[0];
                    (
                        id,
                        random_orthogonal::<T, _>(
                            w,
                            &mut stream(seed, Purpose::Projection, base + c),
                        ),
                    )
                });
                let p = self.phase.as_mut().expect("built");
                let g = &mut p.graph;
                g.set_value(p.z, z)?;
                let fake = g.forward(&[p.fake])?.remove(0);
                g.set_value(p.x_fake.expect("critic losses bind fakes"), fake)?;
                g.set_value(p.x_real, real)?;
                if let Some(id) = p.u_x {
                    g.set_value(id, u[0].clone())?;
                }
                if let Some(id) = p.u_y {
                    g.set_value(id, u[1].clone())?;
                }
                if let Some((id, t)) = theta {
                    g.set_value(id, t)?;
                }
                let ld = p.loss_d.expect("critic loss");
                let mut outs = vec![ld];
                outs.extend(&p.d_grads);
                g.evaluate(&outs)?;
                let v = g.value(ld).expect("evaluated").item().as_f64();
                last_d = Some(v);
                self.check_loss("loss_d", v, a)?;
                let p = self.phase.as_mut().expect("built");
                self.adam_d.step(&mut p.graph, &p.d_params, &p.d_grads)?;
                if kind == LossKind::WganClip {
                    clip_only(&mut p.graph, &p.d_params, self.cfg.loss.clip_bound)?;
                }
                if let (Some(proj), None) = (p.proj, p.fixed_theta) {
                    proj.reorthonormalize(&mut p.graph)?;
                }
            }
        }

        let z = sample_latents(b, latent, &mut stream(seed, Purpose::Latent, base + G_SITE));
        if kind == LossKind::SwdDirect {
            let real = self.real_batch(b, a)?;
            consumed += b as u64;
            let p = self.phase.as_mut().expect("built");
            let dirs_id = p.dirs.expect("swd_direct directions");
            let k = p.graph.dims(dirs_id)[0];
            let frames = self.cfg.loss.n_projections;
            let dirs = projection_directions(
                k,
                frames,
                256,
                128 * frames,
                &mut stream(seed, Purpose::Projection, base + G_SITE),
            );
            p.graph.set_value(dirs_id, dirs)?;
            p.graph.set_value(p.x_real, real)?;
        }
        let p = self.phase.as_mut().expect("built");
        p.graph.set_value(p.z, z)?;
        let mut outs = vec![p.loss_g];
        outs.extend(&p.g_grads);
        p.graph.evaluate(&outs)?;
        let lg = p.graph.value(p.loss_g).expect("evaluated").item().as_f64();
        self.check_loss("loss_g", lg, a)?;
        let p = self.phase.as_mut().expect("built");
        self.adam_g.step(&mut p.graph, &p.g_params, &p.g_grads)?;
        for (name, id) in p.graph.params() {
            if !p.graph.value(id).expect("bound").all_finite() {
                return Err(Error::Aborted(format!(
                    "step {}: parameter {name} is not finite",
                    self.step
                )));
            }
        }

        if let Some(v) = last_d {
            self.report.loss_d.push(v);
        }
        self.report.loss_g.push(lg);
        self.report.alpha.push(a);
        self.report.rung_index.push(self.state.rung_index);
        self.step += 1;
        self.images += consumed;
        self.state = advance(self.state, &self.sched, consumed);
        self.sync_report();
        Ok(())
    }

    fn sync_report(&mut self) {
        self.report.steps = self.step;
        self.report.images = self.images;
        self.report.final_state = self.state;
    }

    /// Sliced distance between generated samples and held-out data at the
    /// active rung, with directions and latents fixed for the whole run.
    pub fn evaluate_swd(&mut self) -> Result<f64> {
        self.ensure_phase(true)?;
        let n = self.cfg.eval_samples;
        let seed = self.cfg.seed;
        let a = alpha(self.state, &self.sched);
        if self.held_out.is_none() {
            self.held_out = Some(self.dataset.sample_held_out(seed, n)?);
        }
        let real = flatten(&self.to_active_rung(self.held_out.as_ref().expect("sampled"), a)?)?;

        if self.phase.as_ref().expect("built").eval.is_none() {
            let (k, mode) = self.key();
            let mut g = Graph::new();
            let alpha_id = if mode == Mode::Transition {
                Some(g.input("alpha", &[1])?)
            } else {
                None
            };
            let fade = alpha_id.map_or(Fade::Stable, Fade::Transition);
            let z = g.input("z", &[n, self.arch.latent_dim(&self.cfg)])?;
            let out = self.arch.generator(
                &mut g,
                k,
                z,
                fade,
                &mut stream(seed, Purpose::Init, u64::MAX),
            )?;
            self.phase.as_mut().expect("built").eval = Some(EvalGraph {
                graph: g,
                z,
                alpha: alpha_id,
                out,
            });
        }
        let p = self.phase.as_mut().expect("built");
        let ev = p.eval.as_mut().expect("built");
        copy_params(&p.graph, &mut ev.graph)?;
        if let Some(id) = ev.alpha {
            ev.graph.set_value(id, Tensor::from_f64(vec![1], &[a])?)?;
        }
        let latent = ev.graph.dims(ev.z)[1];
        ev.graph.set_value(
            ev.z,
            sample_latents(n, latent, &mut stream(seed, Purpose::EvalLatent, 0)),
        )?;
        let fake = flatten(&ev.graph.forward(&[ev.out])?.remove(0))?;
        let k = real.dims()[1];
        let dirs: Tensor<T> = projection_directions(
            k,
            4,
            64,
            128,
            &mut stream(seed, Purpose::EvalProjection, k as u64),
        );
        let v = swd(&real, &fake, &dirs)?.as_f64();
        self.report.swd.push(EvalPoint {
            step: self.step,
            images: self.images,
            rung_index: self.state.rung_index,
            alpha: a,
            swd: v,
        });
        Ok(v)
    }

    /// Trains until `total_images` real images have been consumed, with
    /// evaluations and checkpoints as configured. A zero budget returns an
    /// empty report.
    pub fn run(&mut self) -> Result<RunReport> {
        if self.cfg.total_images == 0 {
            return Ok(self.report.clone());
        }
        if self.step == 0 && self.report.swd.is_empty() {
            self.evaluate_swd()?;
        }
        while self.images < self.cfg.total_images {
            self.step()?;
            if self.cfg.eval_every > 0 && self.step.is_multiple_of(self.cfg.eval_every) {
                self.evaluate_swd()?;
            }
            if let Some(dir) = &self.cfg.checkpoint_dir {
                if self.cfg.checkpoint_every > 0
                    && self.step.is_multiple_of(self.cfg.checkpoint_every)
                {
                    let path = dir.join(format!("step-{}", self.step));
                    self.save_checkpoint(path)?;
                }
            }
        }
        if self.report.swd.last().is_none_or(|e| e.step != self.step) {
            self.evaluate_swd()?;
        }
        if let Some(dir) = &self.cfg.checkpoint_dir {
            self.save_checkpoint(dir.join("final"))?;
        }
        if let Some(path) = &self.cfg.report_path {
            std::fs::write(path, self.report.to_json()?)?;
        }
        Ok(self.report.clone())
    }

    pub fn save_checkpoint(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        self.ensure_phase(true)?;
        let p = self.phase.as_ref().expect("built");
        let mut c = Checkpoint::from_graph(&p.graph);
        let mut steps = |adam: &Adam<T>, group: &str| {
            let mut t = BTreeMap::new();
            for (name, m) in &adam.moments {
                c.tensors
                    .insert(format!("{OPTIMIZER_PREFIX}{group}/{name}/m"), m.m.clone());
                c.tensors
                    .insert(format!("{OPTIMIZER_PREFIX}{group}/{name}/v"), m.v.clone());
                t.insert(name.clone(), m.t);
            }
            t
        };
        let adam_g_steps = steps(&self.adam_g, "g");
        let adam_d_steps = steps(&self.adam_d, "d");
        let meta = Meta {
            step: self.step,
            images: self.images,
            data_cursor: self.data_cursor,
            state: self.state,
            phases_built: self.phases_built,
            adam_g_steps,
            adam_d_steps,
            report: self.report.clone(),
        };
        c.meta = serde_json::to_value(meta)?;
        c.save(dir)
    }

    /// Rebuilds a trainer from `cfg` and a checkpoint directory written by
    /// [`Trainer::save_checkpoint`].
    pub fn resume(cfg: TrainConfig, dir: impl AsRef<Path>) -> Result<Self> {
        let c: Checkpoint<T> = Checkpoint::load(dir)?;
        let meta: Meta = serde_json::from_value(c.meta.clone())?;
        let mut t = Self::new(cfg)?;
        t.step = meta.step;
        t.images = meta.images;
        t.data_cursor = meta.data_cursor;
        t.state = meta.state;
        t.report = meta.report;
        t.phases_built = meta
            .phases_built
            .checked_sub(1)
            .ok_or_else(|| Error::Format("checkpoint records no phase".into()))?;
        t.ensure_phase(false)?;
        c.restore_into(&mut t.phase.as_mut().expect("built").graph)?;
        let load =
            |steps: &BTreeMap<String, u64>, group: &str| -> Result<BTreeMap<String, Moments<T>>> {
                steps
                    .iter()
                    .map(|(name, &n)| {
                        let get = |which: &str| {
                            let key = format!("{OPTIMIZER_PREFIX}{group}/{name}/{which}");
                            c.tensors
                                .get(&key)
                                .cloned()
                                .ok_or_else(|| Error::Format(format!("checkpoint lacks {key:?}")))
                        };
                        Ok((
                            name.clone(),
                            Moments {
                                m: get("m")?,
                                v: get("v")?,
                                t: n,
                            },
                        ))
                    })
                    .collect()
            };
        t.adam_g.moments = load(&meta.adam_g_steps, "g")?;
        t.adam_d.moments = load(&meta.adam_d_steps, "d")?;
        Ok(t)
    }
}

/// Weight clipping restricted to the given parameters.
fn clip_only<T: Scalar>(g: &mut Graph<T>, params: &[NodeId], bound: f64) -> Result<()> {
    let mut sub = Graph::new();
    let mut ids = Vec::new();
    for &id in params {
        let v = g.value(id).expect("bound").clone();
        ids.push((id, sub.param(g.name(id).unwrap_or("p"), v)?));
    }
    clip_weights(&mut sub, bound)?;
    for (id, s) in ids {
        g.set_value(id, sub.value(s).expect("bound").clone())?;
    }
    Ok(())
}

/// Runs `cfg` at its configured precision.
pub fn train(cfg: &TrainConfig) -> Result<RunReport> {
    match cfg.precision {
        Precision::F32 => Trainer::<f32>::new(cfg.clone())?.run(),
        Precision::F64 => Trainer::<f64>::new(cfg.clone())?.run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(kind: &str) -> TrainConfig {
        let mut c = TrainConfig::parse_str(&format!(
            "loss = {kind}\nbatch_size = 32\ntoy_hidden = 16\nlatent_dim = 4\neval_samples = 64\ntotal_images = 320"
        ))
        .unwrap();
        c.n_critic = 2;
        c
    }

    #[test]
    fn every_loss_kind_trains_and_counts_images() {
        for kind in [
            "gan",
            "wgan_clip",
            "wgan_gp",
            "swgan",
            "swd_direct",
            "feature_matching",
        ] {
            let cfg = toy(kind);
            let r = train(&cfg).unwrap();
            let per_step = if kind == "swd_direct" { 32 } else { 64 };
            assert_eq!(r.images, 320_u64.div_ceil(per_step) * per_step, "{kind}");
            assert_eq!(r.loss_g.len() as u64, r.steps);
            assert_eq!(r.swd.len(), 2);
            assert!(r.loss_g.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn clipping_bounds_critic_only() {
        let mut t = Trainer::<f64>::new(toy("wgan_clip")).unwrap();
        for _ in 0..3 {
            t.step().unwrap();
        }
        let g = t.graph().unwrap();
        let mut g_big = false;
        for (name, id) in g.params() {
            let m = g
                .value(id)
                .unwrap()
                .data()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if name.starts_with("d.") {
                assert!(m <= 0.01 + 1e-15, "{name}");
            } else {
                g_big |= m > 0.01;
            }
        }
        assert!(g_big);
    }

    #[test]
    fn same_seed_same_run() {
        let cfg = toy("swgan");
        assert_eq!(train(&cfg).unwrap(), train(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(train(&cfg).unwrap().loss_g, train(&other).unwrap().loss_g);
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy("swgan");
        cfg.total_images = 10_000;
        let mut a = Trainer::<f64>::new(cfg.clone()).unwrap();
        for _ in 0..3 {
            a.step().unwrap();
        }
        a.save_checkpoint(dir.path()).unwrap();
        let mut b = Trainer::<f64>::resume(cfg, dir.path()).unwrap();
        for _ in 0..2 {
            a.step().unwrap();
            b.step().unwrap();
        }
        assert_eq!(a.report(), b.report());
        let (ga, gb) = (
            Checkpoint::from_graph(a.graph().unwrap()),
            Checkpoint::from_graph(b.graph().unwrap()),
        );
        assert_eq!(ga, gb);
    }

    #[test]
    fn fixed_projections_resample_theta() {
        let mut cfg = toy("swgan");
        cfg.loss.fixed_projections = true;
        let mut t = Trainer::<f64>::new(cfg).unwrap();
        t.step().unwrap();
        let th = |t: &mut Trainer<f64>| {
            let g = t.graph().unwrap();
            g.value(g.find(THETA_NAME).unwrap()).unwrap().clone()
        };
        let a = th(&mut t);
        t.step().unwrap();
        assert_ne!(a, th(&mut t));
        assert!(t
            .graph()
            .unwrap()
            .params()
            .iter()
            .all(|(n, _)| n != THETA_NAME));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut cfg = toy("wgan_gp");
        cfg.optimizer.step_size = 1e30;
        cfg.total_images = 1_000_000;
        let err = train(&cfg).unwrap_err();
        assert!(matches!(err, Error::Aborted(_)), "{err}");
    }

    #[test]
    fn directions_are_unit_columns() {
        let mut rng = stream(0, Purpose::Projection, 0);
        for (k, frames, limit) in [(3, 2, 8), (10, 1, 4)] {
            let d: Tensor<f64> = projection_directions(k, frames, limit, 7, &mut rng);
            let p = d.dims()[1];
            for c in 0..p {
                let n: f64 = (0..k).map(|r| d.data()[r * p + c].powi(2)).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
}
