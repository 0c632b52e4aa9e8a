//! Declarative generator/discriminator layer lists.
//!
//! Channel counts are stored at full width and scaled by
//! `base_channels / 128` (minimum 2) when instantiated. The generator list
//! is split into growth stages at each `upsample`; the discriminator list
//! is its mirror, split at each `downsample`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape3d;

/// Width the stored channel counts refer to.
pub const REFERENCE_WIDTH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully-connected layer. With `volume`, the output is reshaped to
    /// `units x t x h x w`; `fixed` widths are exempt from channel scaling.
    Dense {
        units: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        volume: Option<Shape3d>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        fixed: bool,
    },
    Conv3d {
        channels: usize,
        kernel: [usize; 3],
    },
    Upsample {
        factor: Shape3d,
    },
    Downsample {
        factor: Shape3d,
    },
    Pixelnorm,
    MinibatchStddev,
    ToRgb,
    FromRgb,
    LeakyRelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub base_channels: usize,
    pub latent_dim: usize,
    #[serde(default = "default_image_channels")]
    pub image_channels: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_eps")]
    pub pixel_norm_eps: f64,
    #[serde(default = "default_eps")]
    pub stddev_eps: f64,
    pub generator: Vec<LayerSpec>,
    pub discriminator: Vec<LayerSpec>,
}

fn default_image_channels() -> usize {
    3
}
fn default_slope() -> f64 {
    0.2
}
fn default_eps() -> f64 {
    1e-8
}

/// Generator layers split by growth stage.
#[derive(Clone, Debug)]
pub(crate) struct GenStages<'a> {
    /// Stage 0 (latent to base rung) followed by one stage per upsample;
    /// stages `1..` start with their `Upsample`.
    pub stages: Vec<&'a [LayerSpec]>,
}

#[derive(Clone, Debug)]
pub(crate) struct DiscStages<'a> {
    /// Layers applied after each `from_rgb` conv (normally one LReLU).
    pub rgb_post: &'a [LayerSpec],
    /// `blocks[k - 1]` maps rung `k` down to rung `k - 1`; ends in `Downsample`.
    pub blocks: Vec<&'a [LayerSpec]>,
    pub tail: &'a [LayerSpec],
}

impl NetworkSpec {
    /// The unscaled generator and its mirrored discriminator for
    /// 32x256x256 RGB video, 128-d latent.
    pub fn reference() -> Self {
        let ladder: Vec<Shape3d> = [
            [4, 4, 4],
            [8, 8, 8],
            [8, 16, 16],
            [8, 32, 32],
            [16, 64, 64],
            [16, 128, 128],
            [32, 256, 256],
        ]
        .into_iter()
        .map(|[t, h, w]| Shape3d { t, h, w })
        .collect();
        Self::with_ladder(REFERENCE_WIDTH, 128, &ladder).expect("reference ladder is valid")
    }

    /// Reference layer pattern over an arbitrary ladder. Stage `k` uses the
    /// reference width of rung `k` (8 beyond the seventh rung).
    pub fn with_ladder(
        base_channels: usize,
        latent_dim: usize,
        ladder: &[Shape3d],
    ) -> Result<Self> {
        const WIDTHS: [usize; 7] = [128, 128, 128, 64, 32, 16, 8];
        let base = *ladder
            .first()
            .ok_or_else(|| Error::Spec("empty ladder".into()))?;
        let factors: Vec<Shape3d> = ladder
            .windows(2)
            .map(|p| {
                p[1].ratio_over(&p[0])
                    .filter(|f| f.volume() > 1)
                    .ok_or_else(|| {
                        Error::Spec(format!("rung {} does not grow from {}", p[1], p[0]))
                    })
            })
            .collect::<Result<_>>()?;
        let channels: Vec<usize> = (0..ladder.len())
            .map(|k| WIDTHS[k.min(WIDTHS.len() - 1)])
            .collect();
        let k3 = [3, 3, 3];
        let conv = |c: usize| LayerSpec::Conv3d {
            channels: c,
            kernel: k3,
        };
        use LayerSpec::*;

        let mut generator = vec![
            Dense {
                units: channels[0],
                volume: Some(base),
                fixed: false,
            },
            LeakyRelu,
            Pixelnorm,
            conv(channels[0]),
            LeakyRelu,
            Pixelnorm,
        ];
        for (k, f) in factors.iter().enumerate() {
            generator.extend([
                Upsample { factor: *f },
                conv(channels[k + 1]),
                LeakyRelu,
                Pixelnorm,
                conv(channels[k + 1]),
                LeakyRelu,
                Pixelnorm,
            ]);
        }
        generator.push(ToRgb);

        let mut discriminator = vec![FromRgb, LeakyRelu];
        for k in (1..channels.len()).rev() {
            discriminator.extend([
                conv(channels[k]),
                LeakyRelu,
                conv(channels[k - 1]),
                LeakyRelu,
                Downsample {
                    factor: factors[k - 1],
                },
            ]);
        }
        discriminator.extend([
            MinibatchStddev,
            conv(channels[0]),
            LeakyRelu,
            Dense {
                units: channels[0],
                volume: None,
                fixed: false,
            },
            Dense {
                units: 1,
                volume: None,
                fixed: true,
            },
        ]);

        let spec = Self {
            base_channels,
            latent_dim,
            image_channels: 3,
            leaky_slope: 0.2,
            pixel_norm_eps: 1e-8,
            stddev_eps: 1e-8,
            generator,
            discriminator,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same tables with every feature width scaled to `base_channels`.
    pub fn scaled(base_channels: usize, latent_dim: usize) -> Self {
        Self {
            base_channels,
            latent_dim,
            ..Self::reference()
        }
    }

    /// Keeps only the first `rungs` rungs of the ladder.
    pub fn truncated(&self, rungs: usize) -> Result<Self> {
        let stages = self.gen_stages()?;
        let disc = self.disc_stages()?;
        if rungs == 0 || rungs > stages.stages.len() {
            return Err(Error::Spec(format!(
                "cannot truncate to {rungs} rungs (spec has {})",
                stages.stages.len()
            )));
        }
        let mut generator: Vec<LayerSpec> = stages.stages[..rungs]
            .iter()
            .flat_map(|s| s.iter().cloned())
            .collect();
        generator.push(LayerSpec::ToRgb);
        let mut discriminator = vec![LayerSpec::FromRgb];
        discriminator.extend(disc.rgb_post.iter().cloned());
        for k in (1..rungs).rev() {
            discriminator.extend(disc.blocks[k - 1].iter().cloned());
        }
        discriminator.extend(disc.tail.iter().cloned());
        Ok(Self {
            generator,
            discriminator,
            ..self.clone()
        })
    }

    pub fn scale(&self, c: usize) -> usize {
        (c * self.base_channels / REFERENCE_WIDTH).max(2)
    }

    pub(crate) fn gen_stages(&self) -> Result<GenStages<'_>> {
        let layers = match self.generator.split_last() {
            Some((LayerSpec::ToRgb, rest)) => rest,
            _ => return Err(Error::Spec("generator must end with to_rgb".into())),
        };
        let mut stages = Vec::new();
        let mut start = 0;
        for (i, l) in layers.iter().enumerate() {
            match l {
                LayerSpec::Upsample { .. } => {
                    stages.push(&layers[start..i]);
                    start = i;
                }
                LayerSpec::ToRgb
                | LayerSpec::FromRgb
                | LayerSpec::Downsample { .. }
                | LayerSpec::MinibatchStddev => {
                    return Err(Error::Spec(format!(
                        "generator layer {i} ({l:?}) is not allowed"
                    )));
                }
                _ => {}
            }
        }
        stages.push(&layers[start..]);
        Ok(GenStages { stages })
    }

    pub(crate) fn disc_stages(&self) -> Result<DiscStages<'_>> {
        let layers = match self.discriminator.split_first() {
            Some((LayerSpec::FromRgb, rest)) => rest,
            _ => return Err(Error::Spec("discriminator must start with from_rgb".into())),
        };
        let post_len = layers
            .iter()
            .position(|l| !matches!(l, LayerSpec::LeakyRelu))
            .unwrap_or(layers.len());
        let (rgb_post, rest) = layers.split_at(post_len);
        let mut blocks = Vec::new();
        let mut start = 0;
        for (i, l) in rest.iter().enumerate() {
            match l {
                LayerSpec::Downsample { .. } => {
                    blocks.push(&rest[start..=i]);
                    start = i + 1;
                }
                LayerSpec::ToRgb
                | LayerSpec::FromRgb
                | LayerSpec::Upsample { .. }
                | LayerSpec::Pixelnorm => {
                    return Err(Error::Spec(format!(
                        "discriminator layer {l:?} is not allowed"
                    )));
                }
                _ => {}
            }
        }
        blocks.reverse();
        Ok(DiscStages {
            rgb_post,
            blocks,
            tail: &rest[start..],
        })
    }

    /// Rung extents, base rung first.
    pub fn ladder(&self) -> Result<Vec<Shape3d>> {
        let st = self.gen_stages()?;
        let base = st.stages[0]
            .iter()
            .find_map(|l| match l {
                LayerSpec::Dense {
                    volume: Some(v), ..
                } => Some(*v),
                _ => None,
            })
            .ok_or_else(|| {
                Error::Spec("generator stage 0 needs a dense layer with a volume".into())
            })?;
        let mut rungs = vec![base];
        for s in &st.stages[1..] {
            let f = match s.first() {
                Some(LayerSpec::Upsample { factor }) => *factor,
                _ => unreachable!("stages after the first start with upsample"),
            };
            rungs.push(rungs.last().unwrap().mul(&f));
        }
        Ok(rungs)
    }

    pub fn rung_index(&self, rung: Shape3d) -> Result<usize> {
        self.ladder()?
            .iter()
            .position(|&r| r == rung)
            .ok_or_else(|| Error::OffLadder(rung.to_string()))
    }

    /// Scaled channel count produced by generator stage `k`.
    pub fn stage_channels(&self, k: usize) -> Result<usize> {
        let st = self.gen_stages()?;
        let stage = st
            .stages
            .get(k)
            .ok_or_else(|| Error::OffLadder(format!("stage {k}")))?;
        stage
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Conv3d { channels, .. } => Some(self.scale(*channels)),
                LayerSpec::Dense {
                    units,
                    volume: Some(_),
                    fixed,
                } => Some(if *fixed { *units } else { self.scale(*units) }),
                _ => None,
            })
            .ok_or_else(|| {
                Error::Spec(format!(
                    "generator stage {k} has no channel-producing layer"
                ))
            })
    }

    /// Checks that layer shapes compose and the discriminator mirrors the
    /// generator stage by stage.
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.latent_dim == 0 || self.image_channels == 0 {
            return Err(Error::Spec(
                "base_channels, latent_dim and image_channels must be positive".into(),
            ));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Spec(format!(
                "leaky_slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        for l in self.generator.iter().chain(&self.discriminator) {
            if let LayerSpec::Conv3d { kernel, .. } = l {
                if kernel.iter().any(|&k| k % 2 == 0) {
                    return Err(Error::Spec(format!(
                        "conv kernel {kernel:?} must have odd extents"
                    )));
                }
            }
        }
        let g = self.gen_stages()?;
        let d = self.disc_stages()?;
        let ladder = self.ladder()?;
        if d.blocks.len() + 1 != g.stages.len() {
            return Err(Error::Spec(format!(
                "generator has {} stages but discriminator has {} blocks",
                g.stages.len(),
                d.blocks.len()
            )));
        }
        for k in 1..g.stages.len() {
            let up = match g.stages[k][0] {
                LayerSpec::Upsample { factor } => factor,
                _ => unreachable!(),
            };
            let block = d.blocks[k - 1];
            let down = match block.last() {
                Some(LayerSpec::Downsample { factor }) => *factor,
                _ => unreachable!(),
            };
            if up != down {
                return Err(Error::Spec(format!(
                    "stage {k}: upsample {up} is not mirrored by downsample {down}"
                )));
            }
            if ladder[k].ratio_over(&ladder[k - 1]) != Some(up) {
                return Err(Error::Spec(format!("stage {k}: inconsistent rung extents")));
            }
            let convs = |s: &[LayerSpec]| -> Vec<usize> {
                s.iter()
                    .filter_map(|l| match l {
                        LayerSpec::Conv3d { channels, .. } => Some(self.scale(*channels)),
                        _ => None,
                    })
                    .collect()
            };
            let gc = convs(g.stages[k]);
            let dc = convs(block);
            let (prev, cur) = (self.stage_channels(k - 1)?, self.stage_channels(k)?);
            let expected_d: Vec<usize> = gc
                .iter()
                .rev()
                .skip(1)
                .copied()
                .chain(std::iter::once(prev))
                .collect();
            if dc.is_empty() || dc.len() != gc.len() || dc != expected_d || dc[0] != cur {
                return Err(Error::Spec(format!(
                    "stage {k}: discriminator convs {dc:?} do not mirror generator convs {gc:?}"
                )));
            }
        }
        let tail_conv = d.tail.iter().find_map(|l| match l {
            LayerSpec::Conv3d { channels, .. } => Some(self.scale(*channels)),
            _ => None,
        });
        if tail_conv != Some(self.stage_channels(0)?) {
            return Err(Error::Spec(
                "discriminator tail conv must mirror generator stage 0".into(),
            ));
        }
        match d.tail.last() {
            Some(LayerSpec::Dense {
                units: 1,
                fixed: true,
                ..
            }) => {}
            _ => {
                return Err(Error::Spec(
                    "discriminator must end in a dense layer with one fixed unit".into(),
                ))
            }
        }
        Ok(())
    }

    /// Parameter count of the generator at rung `k` in its stable form.
    pub fn generator_param_count(&self, k: usize) -> Result<usize> {
        let st = self.gen_stages()?;
        let mut count = 0;
        let mut ch = self.latent_dim;
        let mut vol = 1;
        for stage in &st.stages[..=k] {
            for l in stage.iter() {
                match l {
                    LayerSpec::Dense {
                        units,
                        volume,
                        fixed,
                    } => {
                        let u = if *fixed { *units } else { self.scale(*units) };
                        let v = volume.map(|s| s.volume()).unwrap_or(1);
                        count += ch * vol * u * v + u * v;
                        ch = u;
                        vol = v;
                    }
                    LayerSpec::Conv3d { channels, kernel } => {
                        let c = self.scale(*channels);
                        count += c * ch * kernel.iter().product::<usize>() + c;
                        ch = c;
                    }
                    _ => {}
                }
            }
        }
        Ok(count + ch * self.image_channels + self.image_channels)
    }

    /// Parameter count of the discriminator at rung `k` in its stable form
    /// (with or without the final scoring layer).
    pub fn discriminator_param_count(&self, k: usize, with_head: bool) -> Result<usize> {
        let d = self.disc_stages()?;
        let ladder = self.ladder()?;
        let rgb_out = self.disc_input_channels(k)?;
        let mut count = self.image_channels * rgb_out + rgb_out;
        let mut ch = rgb_out;
        let mut vol = ladder[k].volume();
        let mut layers: Vec<&LayerSpec> = Vec::new();
        for j in (1..=k).rev() {
            layers.extend(d.blocks[j - 1].iter());
        }
        let tail: Vec<&LayerSpec> = if with_head {
            d.tail.iter().collect()
        } else {
            d.tail[..d.tail.len() - 1].iter().collect()
        };
        layers.extend(tail);
        for l in layers {
            match l {
                LayerSpec::Conv3d { channels, kernel } => {
                    let c = self.scale(*channels);
                    count += c * ch * kernel.iter().product::<usize>() + c;
                    ch = c;
                }
                LayerSpec::Dense { units, fixed, .. } => {
                    let u = if *fixed { *units } else { self.scale(*units) };
                    count += ch * vol * u + u;
                    ch = u;
                    vol = 1;
                }
                LayerSpec::MinibatchStddev => ch += 1,
                LayerSpec::Downsample { factor } => vol /= factor.volume(),
                _ => {}
            }
        }
        Ok(count)
    }

    /// Channels produced by the discriminator's `from_rgb` at rung `k`.
    pub fn disc_input_channels(&self, k: usize) -> Result<usize> {
        let d = self.disc_stages()?;
        let layers: &[LayerSpec] = if k == 0 {
            d.tail
        } else {
            d.blocks
                .get(k - 1)
                .ok_or_else(|| Error::OffLadder(format!("rung index {k}")))?
        };
        layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::Conv3d { channels, .. } => Some(self.scale(*channels)),
                _ => None,
            })
            .ok_or_else(|| Error::Spec(format!("discriminator block {k} has no conv")))
    }

    /// Width of the encoder output (the last non-scoring dense layer).
    pub fn feature_width(&self) -> Result<usize> {
        let d = self.disc_stages()?;
        let n = d.tail.len();
        match d.tail.get(n.wrapping_sub(2)) {
            Some(LayerSpec::Dense { units, fixed, .. }) => {
                Ok(if *fixed { *units } else { self.scale(*units) })
            }
            _ => Err(Error::Spec(
                "discriminator tail must end with two dense layers".into(),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}
