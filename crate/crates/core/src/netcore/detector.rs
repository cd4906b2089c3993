use serde::{Deserialize, Serialize};
use tch::Tensor;

use super::{channels_last, HeatmapStack};
use crate::adapters::{
    mode1_product, AdaptiveConv, ConvKernel, Group, LayerFactory, LayerInventory, Norm,
    ParamStore, ProjectionAdapter, Regime,
};
use crate::data::{CHANNELS, HEATMAP_SIZE, IMAGE_SIZE};
use crate::error::{Error, Result};

/// Hourglass detector geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Trunk channels; the stem works at a quarter and half of it.
    pub width: usize,
    /// Down/up levels of the hourglass.
    pub depth: usize,
    /// Landmarks (heatmap channels).
    pub landmarks: usize,
}

impl DetectorConfig {
    /// Single 256-channel, four-level hourglass (about 6M parameters).
    pub fn reference(landmarks: usize) -> Self {
        Self {
            width: 256,
            depth: 4,
            landmarks,
        }
    }

    /// Narrow variant that trains in minutes on a CPU.
    pub fn desk(landmarks: usize) -> Self {
        Self {
            width: 32,
            depth: 4,
            landmarks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || !self.width.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "detector width must be a positive multiple of 8, got {}",
                self.width
            )));
        }
        if self.depth < 1 || HEATMAP_SIZE >> self.depth < 1 {
            return Err(Error::Config(format!(
                "hourglass depth {} does not fit a {HEATMAP_SIZE}×{HEATMAP_SIZE} map",
                self.depth
            )));
        }
        if self.landmarks < 1 {
            return Err(Error::Config("detector needs at least one landmark".into()));
        }
        Ok(())
    }
}

/// Pre-activation multi-scale residual block: three 3×3 convolutions producing
/// `out/2`, `out/4` and `out/4` channels, concatenated and added to the input
/// (through a 1×1 projection when the width changes).
struct ConvBlock {
    norms: [Norm; 3],
    convs: [AdaptiveConv; 3],
    skip: Option<(Norm, AdaptiveConv)>,
}

impl ConvBlock {
    fn new(f: &mut LayerFactory<'_>, id: &str, c_in: i64, c_out: i64) -> Result<Self> {
        let (h, q) = (c_out / 2, c_out / 4);
        let norms = [
            f.norm(&format!("{id}.bn1"), c_in)?,
            f.norm(&format!("{id}.bn2"), h)?,
            f.norm(&format!("{id}.bn3"), q)?,
        ];
        let convs = [
            f.conv(&format!("{id}.conv1"), c_in, h, 3, 1)?,
            f.conv(&format!("{id}.conv2"), h, q, 3, 1)?,
            f.conv(&format!("{id}.conv3"), q, q, 3, 1)?,
        ];
        let skip = if c_in != c_out {
            Some((
                f.norm(&format!("{id}.skip_bn"), c_in)?,
                f.conv(&format!("{id}.skip"), c_in, c_out, 1, 1)?,
            ))
        } else {
            None
        };
        Ok(Self { norms, convs, skip })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Tensor {
        let o1 = self.convs[0].forward(&self.norms[0].forward(x, train).relu());
        let o2 = self.convs[1].forward(&self.norms[1].forward(&o1, train).relu());
        let o3 = self.convs[2].forward(&self.norms[2].forward(&o2, train).relu());
        let out = Tensor::cat(&[o1, o2, o3], 1);
        match &self.skip {
            Some((bn, conv)) => out + conv.forward(&bn.forward(x, train).relu()),
            None => out + x,
        }
    }
}

struct Hourglass {
    /// Per level: full-resolution branch, pre-recursion and post-recursion blocks.
    levels: Vec<[ConvBlock; 3]>,
    bottom: ConvBlock,
}

impl Hourglass {
    fn new(f: &mut LayerFactory<'_>, depth: usize, c: i64) -> Result<Self> {
        let mut levels = Vec::with_capacity(depth);
        for l in 0..depth {
            let id = format!("detector.hg.l{l}");
            levels.push([
                ConvBlock::new(f, &format!("{id}.b1"), c, c)?,
                ConvBlock::new(f, &format!("{id}.b2"), c, c)?,
                ConvBlock::new(f, &format!("{id}.b3"), c, c)?,
            ]);
        }
        let bottom = ConvBlock::new(f, "detector.hg.bottom", c, c)?;
        Ok(Self { levels, bottom })
    }

    fn forward(&self, x: &Tensor, level: usize, train: bool) -> Tensor {
        let [b1, b2, b3] = &self.levels[level];
        let up1 = b1.forward(x, train);
        let low = b2.forward(&x.max_pool2d([2, 2], [2, 2], [0, 0], [1, 1], false), train);
        let low = if level + 1 < self.levels.len() {
            self.forward(&low, level + 1, train)
        } else {
            self.bottom.forward(&low, train)
        };
        let low = b3.forward(&low, train);
        let size = x.size();
        up1 + low.upsample_nearest2d([size[2], size[3]], None, None)
    }
}

/// Single-stack hourglass detector producing `K` raw heatmaps at 32×32.
pub struct Detector {
    config: DetectorConfig,
    regime: Regime,
    stem: AdaptiveConv,
    stem_bn: Norm,
    pre: [ConvBlock; 3],
    hourglass: Hourglass,
    top: ConvBlock,
    features: AdaptiveConv,
    features_bn: Norm,
    head: AdaptiveConv,
    inventory: LayerInventory,
    convs: Vec<AdaptiveConv>,
}

impl Detector {
    /// Registers a freshly initialised detector in `store`.
    pub fn new(store: &mut ParamStore, config: DetectorConfig, regime: Regime, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.width as i64;
        let mut f = LayerFactory::detector(store, regime, seed);
        let stem = f.conv("detector.stem", CHANNELS as i64, c / 4, 7, 2)?;
        let stem_bn = f.norm("detector.stem_bn", c / 4)?;
        let pre = [
            ConvBlock::new(&mut f, "detector.pre1", c / 4, c / 2)?,
            ConvBlock::new(&mut f, "detector.pre2", c / 2, c / 2)?,
            ConvBlock::new(&mut f, "detector.pre3", c / 2, c)?,
        ];
        let hourglass = Hourglass::new(&mut f, config.depth, c)?;
        let top = ConvBlock::new(&mut f, "detector.top", c, c)?;
        let features = f.conv("detector.features", c, c, 1, 1)?;
        let features_bn = f.norm("detector.features_bn", c)?;
        let head = f.head("detector.head", c, config.landmarks as i64)?;
        let (inventory, convs) = f.finish();
        Ok(Self {
            config,
            regime,
            stem,
            stem_bn,
            pre,
            hourglass,
            top,
            features,
            features_bn,
            head,
            inventory,
            convs,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn landmarks(&self) -> usize {
        self.config.landmarks
    }

    pub fn inventory(&self) -> &LayerInventory {
        &self.inventory
    }

    /// Images `(N, 3, 128, 128)` in `[0, 1]` → raw heatmaps `(N, K, 32, 32)`.
    pub fn forward(&self, images: &Tensor, train: bool) -> Result<HeatmapStack> {
        let size = images.size();
        let expect = [CHANNELS as i64, IMAGE_SIZE as i64, IMAGE_SIZE as i64];
        if size.len() != 4 || size[1..] != expect {
            return Err(Error::Shape(format!(
                "detector expects (N, 3, {IMAGE_SIZE}, {IMAGE_SIZE}) images, got {size:?}"
            )));
        }
        let x = self.stem.forward(&channels_last(images));
        let x = self.stem_bn.forward(&x, train).relu();
        let x = self.pre[0].forward(&x, train);
        let x = x.max_pool2d([2, 2], [2, 2], [0, 0], [1, 1], false);
        let x = self.pre[1].forward(&x, train);
        let x = self.pre[2].forward(&x, train);
        let x = self.hourglass.forward(&x, 0, train);
        let x = self.top.forward(&x, train);
        let x = self
            .features_bn
            .forward(&self.features.forward(&x), train)
            .relu();
        HeatmapStack::raw(self.head.forward(&x))
    }

    /// Every convolution (trunk then head), in construction order.
    pub fn convs(&self) -> &[AdaptiveConv] {
        &self.convs
    }

    /// Stored trunk kernels (the frozen core in the proposed regime).
    pub fn core_kernels(&self) -> Vec<ConvKernel> {
        self.trunk().map(AdaptiveConv::kernel).collect()
    }

    pub fn adapters(&self) -> Vec<ProjectionAdapter> {
        self.trunk().filter_map(AdaptiveConv::adapter).collect()
    }

    fn trunk(&self) -> impl Iterator<Item = &AdaptiveConv> {
        let head = &self.head.layer_id;
        self.convs.iter().filter(move |c| &c.layer_id != head)
    }

    pub fn head_id(&self) -> &str {
        &self.head.layer_id
    }
}

/// Effective convolution weights of every layer: `adapter ×₁ core` for adapted
/// layers, the stored kernel otherwise (including the head).
pub fn materialize(detector: &Detector) -> Result<Vec<ConvKernel>> {
    let proposed = detector.regime() == Regime::Proposed;
    detector
        .convs()
        .iter()
        .map(|conv| {
            let kernel = conv.kernel();
            match (conv.adapter(), proposed && conv.layer_id != detector.head_id()) {
                (Some(a), _) => mode1_product(&a, &kernel),
                (None, true) => Err(Error::Consistency(format!(
                    "adapted layer `{}` has no projection adapter",
                    conv.layer_id
                ))),
                (None, false) => Ok(kernel),
            }
        })
        .collect()
}

/// Tensor names of a detector that a core checkpoint provides for `regime`.
pub fn core_groups(regime: Regime) -> &'static [Group] {
    match regime {
        Regime::Finetune | Regime::Proposed => &[Group::Core, Group::Norm],
        Regime::Pretrain | Regime::Scratch => &[],
    }
}
