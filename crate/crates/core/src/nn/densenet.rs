use serde::{Deserialize, Serialize};

use super::conv::ConvGeom;
use super::graph::{Graph, Var};
use super::params::{Bound, ParamBuilder, ParamStore};
use super::tensor::Real;
use crate::{Error, Result};

/// Regression width: three coordinates for each of 19·9 + 25·9 grid points.
pub const OUTPUT_DIM: usize = 3 * (19 * 9 + 25 * 9);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseNet3DConfig {
    pub in_channels: usize,
    pub growth_rate: usize,
    pub block_sizes: Vec<usize>,
    /// Stem width; `None` means twice the growth rate.
    pub init_features: Option<usize>,
    /// Bottleneck width as a multiple of the growth rate.
    pub bn_size: usize,
    pub compression: f64,
    pub output_dim: usize,
    /// Per-channel normalisation before each dense-layer convolution.
    pub norm: bool,
}

impl Default for DenseNet3DConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            growth_rate: 32,
            block_sizes: vec![6, 12, 24, 16],
            init_features: None,
            bn_size: 4,
            compression: 0.5,
            output_dim: OUTPUT_DIM,
            norm: true,
        }
    }
}

/// Shape of one named stage's output, recorded during a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub shape: Vec<usize>,
}

impl DenseNet3DConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.growth_rate == 0 || self.bn_size == 0 {
            return Err(Error::Config(
                "DenseNet channel counts must be positive".into(),
            ));
        }
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(Error::Config(
                "DenseNet needs non-empty dense blocks".into(),
            ));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::Config(format!(
                "compression {} outside (0, 1]",
                self.compression
            )));
        }
        if self.output_dim != OUTPUT_DIM {
            return Err(Error::Config(format!("output_dim must be {OUTPUT_DIM}")));
        }
        Ok(())
    }

    fn stem_features(&self) -> usize {
        self.init_features.unwrap_or(2 * self.growth_rate)
    }

    fn transition_out(&self, c: usize) -> usize {
        ((c as f64 * self.compression).floor() as usize).max(1)
    }

    /// Feature width entering the global pool.
    pub fn final_features(&self) -> usize {
        let mut c = self.stem_features();
        for (i, &n) in self.block_sizes.iter().enumerate() {
            c += n * self.growth_rate;
            if i + 1 < self.block_sizes.len() {
                c = self.transition_out(c);
            }
        }
        c
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let k = self.growth_rate;
        let bott = self.bn_size * k;
        let mut b = ParamBuilder::new(seed);
        let mut c = self.stem_features();
        b.conv("stem", self.in_channels, c, 7);
        for (bi, &n) in self.block_sizes.iter().enumerate() {
            for li in 0..n {
                let name = format!("block{bi}.layer{li}");
                if self.norm {
                    b.norm(&format!("{name}.norm1"), c);
                }
                b.conv(&format!("{name}.conv1"), c, bott, 1);
                if self.norm {
                    b.norm(&format!("{name}.norm2"), bott);
                }
                b.conv(&format!("{name}.conv2"), bott, k, 3);
                c += k;
            }
            if bi + 1 < self.block_sizes.len() {
                let o = self.transition_out(c);
                b.conv(&format!("trans{bi}"), c, o, 1);
                c = o;
            }
        }
        b.linear("fc", c, self.output_dim);
        Ok(b.finish())
    }

    /// `[N, in, D, H, W]` → `[N, output_dim]`, with the stage shapes. Each
    /// spatial extent must be a multiple of 32; the reference size is 64³.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
    ) -> Result<(Var, Vec<Stage>)> {
        self.validate()?;
        let s = g.shape(x).to_vec();
        if s.len() != 5 || s[1] != self.in_channels || s[2..].iter().any(|&d| d == 0 || d % 32 != 0)
        {
            return Err(Error::Shape(format!(
                "DenseNet expects [N, {}, D, H, W] with multiples of 32, got {s:?}",
                self.in_channels
            )));
        }
        let mut stages = Vec::new();
        let mut record = |g: &Graph<T>, name: &str, v: Var| {
            stages.push(Stage {
                name: name.into(),
                shape: g.shape(v).to_vec(),
            })
        };
        let conv = |g: &mut Graph<T>, name: &str, x: Var, geom: ConvGeom| -> Result<Var> {
            let y = g.conv3d(
                x,
                p.var(&format!("{name}.w"))?,
                Some(p.var(&format!("{name}.b"))?),
                geom,
            )?;
            Ok(g.mish(y))
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

        let h = conv(g, "stem", x, ConvGeom::new(7, 2, 3))?;
        record(g, "convolution", h);
        let mut h = g.max_pool3d(h, 3, 2, 1)?;
        record(g, "pooling", h);
        for (bi, &n) in self.block_sizes.iter().enumerate() {
            let mut feats = vec![h];
            for li in 0..n {
                let name = format!("block{bi}.layer{li}");
                let inp = if feats.len() == 1 {
                    feats[0]
                } else {
                    g.concat_channels(&feats)?
                };
                let a = norm(g, &format!("{name}.norm1"), inp)?;
                let a = conv(g, &format!("{name}.conv1"), a, ConvGeom::same(1))?;
                let a = norm(g, &format!("{name}.norm2"), a)?;
                let a = conv(g, &format!("{name}.conv2"), a, ConvGeom::same(3))?;
                feats.push(a);
            }
            h = g.concat_channels(&feats)?;
            record(g, &format!("dense_block{}", bi + 1), h);
            if bi + 1 < self.block_sizes.len() {
                let t = conv(g, &format!("trans{bi}"), h, ConvGeom::same(1))?;
                record(g, &format!("transition{}_conv", bi + 1), t);
                h = g.avg_pool3d(t, 2, 2)?;
                record(g, &format!("transition{}_pool", bi + 1), h);
            }
        }
        let pooled = g.global_avg_pool(h)?;
        record(g, "global_pool", pooled);
        let out = g.linear(pooled, p.var("fc.w")?, p.var("fc.b")?)?;
        record(g, "fully_connected", out);
        Ok((out, stages))
    }
}
