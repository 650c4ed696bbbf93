use serde::{Deserialize, Serialize};

use super::conv::ConvGeom;
use super::graph::{Graph, Var};
use super::params::{Bound, ParamBuilder, ParamStore};
use super::tensor::Real;
use crate::{Error, Result};

/// How decoder features meet the encoder skip at the same resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    #[default]
    Concat,
    /// 1×1×1 projection of the upsampled features, then elementwise sum.
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNet3DConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub levels: usize,
    pub base_channels: usize,
    pub skip: SkipMode,
    /// Per-channel normalisation between each 3×3×3 convolution and its ReLU.
    pub norm: bool,
}

impl Default for UNet3DConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 3,
            levels: 4,
            base_channels: 16,
            skip: SkipMode::Concat,
            norm: true,
        }
    }
}

fn conv3_params(c: usize, o: usize) -> usize {
    27 * c * o + o
}

impl UNet3DConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2
            || self.base_channels == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(Error::Config(
                "U-Net needs at least 2 levels and non-zero channel counts".into(),
            ));
        }
        Ok(())
    }

    /// Feature width at level `l`.
    pub fn channels(&self, l: usize) -> usize {
        self.base_channels << l
    }

    pub fn check_input(&self, dims: [usize; 3]) -> Result<()> {
        let f = 1 << (self.levels - 1);
        if dims.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(Error::Shape(format!(
                "spatial dims {dims:?} not divisible by {f}"
            )));
        }
        Ok(())
    }

    /// Parameter count of the channel plan.
    pub fn param_count(&self) -> usize {
        let c = |l| self.channels(l);
        let mut n = conv3_params(self.in_channels, c(0)) + conv3_params(c(0), c(0));
        for l in 1..self.levels {
            n += conv3_params(c(l - 1), c(l)) + conv3_params(c(l), c(l));
        }
        for l in 0..self.levels - 1 {
            n += match self.skip {
                SkipMode::Concat => conv3_params(c(l) + c(l + 1), c(l)),
                SkipMode::Add => c(l + 1) * c(l) + c(l) + conv3_params(c(l), c(l)),
            } + conv3_params(c(l), c(l));
        }
        if self.norm {
            // gamma and beta after both convolutions of every block
            n += 4 * c(self.levels - 1) + 8 * (0..self.levels - 1).map(c).sum::<usize>();
        }
        n + c(0) * self.out_channels + self.out_channels
    }

    fn block_norms<T: Real>(&self, b: &mut ParamBuilder<T>, name: &str, c: usize) {
        if self.norm {
            b.norm(&format!("{name}.norm1"), c);
            b.norm(&format!("{name}.norm2"), c);
        }
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let c = |l| self.channels(l);
        let mut b = ParamBuilder::new(seed);
        b.conv("enc0.conv1", self.in_channels, c(0), 3);
        b.conv("enc0.conv2", c(0), c(0), 3);
        self.block_norms(&mut b, "enc0", c(0));
        for l in 1..self.levels {
            b.conv(&format!("enc{l}.conv1"), c(l - 1), c(l), 3);
            b.conv(&format!("enc{l}.conv2"), c(l), c(l), 3);
            self.block_norms(&mut b, &format!("enc{l}"), c(l));
        }
        for l in (0..self.levels - 1).rev() {
            match self.skip {
                SkipMode::Concat => b.conv(&format!("dec{l}.conv1"), c(l) + c(l + 1), c(l), 3),
                SkipMode::Add => {
                    b.conv(&format!("dec{l}.proj"), c(l + 1), c(l), 1);
                    b.conv(&format!("dec{l}.conv1"), c(l), c(l), 3);
                }
            }
            b.conv(&format!("dec{l}.conv2"), c(l), c(l), 3);
            self.block_norms(&mut b, &format!("dec{l}"), c(l));
        }
        b.conv("head", c(0), self.out_channels, 1);
        Ok(b.finish())
    }

    /// `[N, in, D, H, W]` → per-voxel class probabilities `[N, out, D, H, W]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        self.validate()?;
        let s = g.shape(x).to_vec();
        if s.len() != 5 || s[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "U-Net expects [N, {}, D, H, W], got {s:?}",
                self.in_channels
            )));
        }
        self.check_input([s[2], s[3], s[4]])?;
        let conv = |g: &mut Graph<T>, name: &str, x: Var, k: usize| -> Result<Var> {
            g.conv3d(
                x,
                p.var(&format!("{name}.w"))?,
                Some(p.var(&format!("{name}.b"))?),
                ConvGeom::same(k),
            )
        };
        let norm = |g: &mut Graph<T>, name: &str, x: Var| -> Result<Var> {
            if self.norm {
                g.channel_norm(
                    x,
                    p.var(&format!("{name}.gamma"))?,
                    p.var(&format!("{name}.beta"))?,
                )
            } else {
                Ok(x)
            }
        };
        let block = |g: &mut Graph<T>, name: &str, x: Var| -> Result<Var> {
            let a = conv(g, &format!("{name}.conv1"), x, 3)?;
            let a = norm(g, &format!("{name}.norm1"), a)?;
            let a = g.relu(a);
            let b = conv(g, &format!("{name}.conv2"), a, 3)?;
            let b = norm(g, &format!("{name}.norm2"), b)?;
            Ok(g.relu(b))
        };

        let mut skips = Vec::with_capacity(self.levels);
        let mut h = block(g, "enc0", x)?;
        for l in 1..self.levels {
            skips.push(h);
            let down = g.max_pool3d(h, 2, 2, 0)?;
            h = block(g, &format!("enc{l}"), down)?;
        }
        for l in (0..self.levels - 1).rev() {
            let up = g.upsample2(h)?;
            let skip = skips[l];
            let merged = match self.skip {
                SkipMode::Concat => g.concat_channels(&[skip, up])?,
                SkipMode::Add => {
                    let proj = conv(g, &format!("dec{l}.proj"), up, 1)?;
                    g.add(skip, proj)?
                }
            };
            h = block(g, &format!("dec{l}"), merged)?;
        }
        let logits = conv(g, "head", h, 1)?;
        g.softmax_channels(logits)
    }
}
