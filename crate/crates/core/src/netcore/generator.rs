use serde::{Deserialize, Serialize};
use tch::Tensor;

use super::{channels_last, HeatmapKind, HeatmapStack};
use crate::adapters::{AdaptiveConv, Group, LayerFactory, Norm, ParamStore};
use crate::data::{CHANNELS, IMAGE_SIZE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Feature channels after the encoder.
    pub width: usize,
    pub residual_blocks: usize,
    /// Conditioning heatmap channels.
    pub landmarks: usize,
}

impl GeneratorConfig {
    pub fn reference(landmarks: usize) -> Self {
        Self {
            width: 256,
            residual_blocks: 6,
            landmarks,
        }
    }

    pub fn desk(landmarks: usize) -> Self {
        Self {
            width: 32,
            residual_blocks: 6,
            landmarks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || !self.width.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "generator width must be a positive multiple of 4, got {}",
                self.width
            )));
        }
        if self.residual_blocks < 1 || self.landmarks < 1 {
            return Err(Error::Config(
                "generator needs at least one residual block and one landmark".into(),
            ));
        }
        Ok(())
    }
}

struct ConvNorm {
    conv: AdaptiveConv,
    norm: Norm,
}

impl ConvNorm {
    fn new(f: &mut LayerFactory<'_>, id: &str, c_in: i64, c_out: i64, stride: i64) -> Result<Self> {
        Ok(Self {
            conv: f.conv(&format!("{id}.conv"), c_in, c_out, 3, stride)?,
            norm: f.norm(&format!("{id}.bn"), c_out)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Tensor {
        self.norm.forward(&self.conv.forward(x), train)
    }
}

struct Residual {
    a: ConvNorm,
    b: ConvNorm,
    project: Option<AdaptiveConv>,
}

impl Residual {
    fn forward(&self, x: &Tensor, train: bool) -> Tensor {
        let y = self.b.forward(&self.a.forward(x, train).relu(), train);
        let skip = match &self.project {
            Some(p) => p.forward(x),
            None => x.shallow_clone(),
        };
        (y + skip).relu()
    }
}

/// Reconstructs an image from a deformed view and landmark heatmaps:
/// two stride-2 encoder stages, residual blocks over features concatenated with
/// the heatmaps, then two nearest-upsampling stages and a sigmoid RGB output.
pub struct Generator {
    config: GeneratorConfig,
    encoder: [ConvNorm; 2],
    blocks: Vec<Residual>,
    decoder: [ConvNorm; 2],
    out: AdaptiveConv,
}

impl Generator {
    pub fn new(store: &mut ParamStore, config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = config.width as i64;
        let k = config.landmarks as i64;
        let mut f = LayerFactory::free(store, Group::Generator, seed);
        let encoder = [
            ConvNorm::new(&mut f, "generator.enc1", CHANNELS as i64, w / 2, 2)?,
            ConvNorm::new(&mut f, "generator.enc2", w / 2, w, 2)?,
        ];
        let mut blocks = Vec::with_capacity(config.residual_blocks);
        for i in 0..config.residual_blocks {
            let c_in = if i == 0 { w + k } else { w };
            let id = format!("generator.res{i}");
            blocks.push(Residual {
                a: ConvNorm::new(&mut f, &format!("{id}.a"), c_in, w, 1)?,
                b: ConvNorm::new(&mut f, &format!("{id}.b"), w, w, 1)?,
                project: if c_in != w {
                    Some(f.conv(&format!("{id}.project"), c_in, w, 1, 1)?)
                } else {
                    None
                },
            });
        }
        let decoder = [
            ConvNorm::new(&mut f, "generator.dec1", w, w / 2, 1)?,
            ConvNorm::new(&mut f, "generator.dec2", w / 2, w / 4, 1)?,
        ];
        let out = f.conv_with_bias("generator.out", w / 4, CHANNELS as i64, 3, 1)?;
        Ok(Self {
            config,
            encoder,
            blocks,
            decoder,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// `deformed` is `(N, 3, 128, 128)`; `cond` must be rendered Gaussians with `K` channels.
    /// Returns `(N, 3, 128, 128)` in `[0, 1]`.
    pub fn forward(&self, deformed: &Tensor, cond: &HeatmapStack, train: bool) -> Result<Tensor> {
        if cond.kind() != HeatmapKind::Gaussian {
            return Err(Error::Contract(
                "generator conditioning must be rendered Gaussian heatmaps, not raw detector output"
                    .into(),
            ));
        }
        let [n, k, _, _] = cond.dims();
        let size = deformed.size();
        if size != [n, CHANNELS as i64, IMAGE_SIZE as i64, IMAGE_SIZE as i64] {
            return Err(Error::Shape(format!(
                "generator expects ({n}, 3, {IMAGE_SIZE}, {IMAGE_SIZE}) images, got {size:?}"
            )));
        }
        if k as usize != self.config.landmarks {
            return Err(Error::Shape(format!(
                "generator conditions on {} heatmaps, got {k}",
                self.config.landmarks
            )));
        }
        let mut x = channels_last(deformed);
        for stage in &self.encoder {
            x = stage.forward(&x, train).relu();
        }
        let fs = x.size();
        let maps = if cond.maps.size()[2..] == fs[2..] {
            cond.maps.shallow_clone()
        } else {
            cond.maps
                .upsample_bilinear2d([fs[2], fs[3]], false, None, None)
        };
        x = Tensor::cat(&[x, channels_last(&maps.to_kind(deformed.kind()))], 1);
        for block in &self.blocks {
            x = block.forward(&x, train);
        }
        for stage in &self.decoder {
            let s = x.size();
            x = x.upsample_nearest2d([s[2] * 2, s[3] * 2], None, None);
            x = stage.forward(&x, train).relu();
        }
        Ok(self.out.forward(&x).sigmoid())
    }
}
