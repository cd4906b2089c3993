use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use super::accounting::{ConvRole, ConvSpec, LayerInventory};
use super::kernel::{mode1_tensor, ConvKernel, ProjectionAdapter};
use super::store::{Group, ParamStore};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, tags};

/// How a detector's parameters are created and which of them learn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Supervised training of the core; everything learns.
    Pretrain,
    /// Fresh initialisation, everything learns.
    Scratch,
    /// Initialised from the core, everything learns; fresh head.
    Finetune,
    /// Frozen core convolutions re-projected by learnable adapters; norms and a fresh head learn.
    Proposed,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Pretrain,
        Regime::Scratch,
        Regime::Finetune,
        Regime::Proposed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Pretrain => "pretrain",
            Regime::Scratch => "scratch",
            Regime::Finetune => "finetune",
            Regime::Proposed => "proposed",
        }
    }

    /// Whether the regime starts from a core checkpoint.
    pub fn needs_core(self) -> bool {
        matches!(self, Regime::Finetune | Regime::Proposed)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown regime `{s}`")))
    }
}

/// A convolution whose effective weight is `adapter ×₁ core` when an adapter is present.
#[derive(Debug)]
pub struct AdaptiveConv {
    pub layer_id: String,
    core: Tensor,
    adapter: Option<Tensor>,
    bias: Option<Tensor>,
    stride: i64,
    padding: i64,
}

impl AdaptiveConv {
    /// Weight used by the forward pass; recomputed on every call so gradients reach the adapter.
    pub fn effective_weight(&self) -> Tensor {
        match &self.adapter {
            Some(w) => mode1_tensor(w, &self.core),
            None => self.core.shallow_clone(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv2d(
            &self.effective_weight(),
            self.bias.as_ref(),
            [self.stride, self.stride],
            [self.padding, self.padding],
            [1, 1],
            1,
        )
    }

    /// Copy of the stored (un-projected) kernel.
    pub fn kernel(&self) -> ConvKernel {
        ConvKernel {
            layer_id: self.layer_id.clone(),
            weights: self.core.detach().copy(),
        }
    }

    pub fn adapter(&self) -> Option<ProjectionAdapter> {
        self.adapter.as_ref().map(|w| ProjectionAdapter {
            layer_id: self.layer_id.clone(),
            matrix: w.detach().copy(),
            trainable: w.requires_grad(),
        })
    }

    pub fn bias(&self) -> Option<Tensor> {
        self.bias.as_ref().map(|b| b.detach().copy())
    }

    pub fn handle(&self) -> Self {
        Self {
            layer_id: self.layer_id.clone(),
            core: self.core.shallow_clone(),
            adapter: self.adapter.as_ref().map(Tensor::shallow_clone),
            bias: self.bias.as_ref().map(Tensor::shallow_clone),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Batch normalisation with running statistics.
#[derive(Debug)]
pub struct Norm {
    weight: Tensor,
    bias: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
}

impl Norm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    /// In training mode batch statistics are used and the running statistics updated.
    pub fn forward(&self, x: &Tensor, train: bool) -> Tensor {
        x.batch_norm(
            Some(&self.weight),
            Some(&self.bias),
            Some(&self.running_mean),
            Some(&self.running_var),
            train,
            Self::MOMENTUM,
            Self::EPS,
            false,
        )
    }
}

#[derive(Clone, Copy, Debug)]
enum Mode {
    Detector(Regime),
    Free(Group),
}

fn id_hash(id: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Creates layers, registers their tensors and records the parameter inventory.
pub struct LayerFactory<'a> {
    store: &'a mut ParamStore,
    mode: Mode,
    seed: u64,
    inventory: LayerInventory,
    convs: Vec<AdaptiveConv>,
}

impl<'a> LayerFactory<'a> {
    /// Detector layers for `regime`.
    pub fn detector(store: &'a mut ParamStore, regime: Regime, seed: u64) -> Self {
        Self::with_mode(store, Mode::Detector(regime), seed)
    }

    /// Plain, fully trainable layers registered under `group`.
    pub fn free(store: &'a mut ParamStore, group: Group, seed: u64) -> Self {
        Self::with_mode(store, Mode::Free(group), seed)
    }

    fn with_mode(store: &'a mut ParamStore, mode: Mode, seed: u64) -> Self {
        Self {
            store,
            mode,
            seed,
            inventory: LayerInventory::default(),
            convs: Vec::new(),
        }
    }

    fn uniform(&self, id: &str, shape: &[i64], bound: f64) -> Tensor {
        let mut rng = stream_rng(self.seed, &[tags::INIT, id_hash(id)]);
        let n: i64 = shape.iter().product();
        let values: Vec<f32> = (0..n)
            .map(|_| rng.random_range(-bound..=bound) as f32)
            .collect();
        Tensor::from_slice(&values).reshape(shape)
    }

    fn group(&self, detector_group: Group) -> Group {
        match self.mode {
            Mode::Detector(_) => detector_group,
            Mode::Free(g) => g,
        }
    }

    /// Trunk convolution without bias, `padding = k / 2`. In the proposed regime the
    /// kernel is frozen and an identity adapter is attached.
    pub fn conv(&mut self, id: &str, c_in: i64, c_out: i64, k: i64, stride: i64) -> Result<AdaptiveConv> {
        self.conv_inner(id, c_in, c_out, k, stride, false)
    }

    /// Convolution with bias, never adapted.
    pub fn conv_with_bias(&mut self, id: &str, c_in: i64, c_out: i64, k: i64, stride: i64) -> Result<AdaptiveConv> {
        self.conv_inner(id, c_in, c_out, k, stride, true)
    }

    fn conv_inner(
        &mut self,
        id: &str,
        c_in: i64,
        c_out: i64,
        k: i64,
        stride: i64,
        with_bias: bool,
    ) -> Result<AdaptiveConv> {
        if c_in < 1 || c_out < 1 || k < 1 || stride < 1 {
            return Err(Error::Argument(format!(
                "conv `{id}` has invalid geometry {c_in}→{c_out}, k={k}, stride={stride}"
            )));
        }
        let fan_in = (c_in * k * k) as f64;
        let init = self.uniform(id, &[c_out, c_in, k, k], (6.0 / fan_in).sqrt());
        let adapted = matches!(self.mode, Mode::Detector(Regime::Proposed)) && !with_bias;
        let group = self.group(Group::Core);
        let core = self
            .store
            .add(format!("{id}.weight"), init, group, !adapted, false)?;
        let adapter = if adapted {
            let eye = Tensor::eye(c_out, (Kind::Float, tch::Device::Cpu));
            Some(self.store.add(format!("{id}.adapter"), eye, Group::Adapters, true, false)?)
        } else {
            None
        };
        let bias = if with_bias {
            let b = Tensor::zeros([c_out], (Kind::Float, tch::Device::Cpu));
            Some(self.store.add(format!("{id}.bias"), b, group, true, false)?)
        } else {
            None
        };
        if let Mode::Detector(_) = self.mode {
            self.inventory.convs.push(ConvSpec {
                layer_id: id.to_string(),
                shape: [c_out as usize, c_in as usize, k as usize, k as usize],
                bias: with_bias,
                role: ConvRole::Trunk,
            });
        }
        let conv = AdaptiveConv {
            layer_id: id.to_string(),
            core,
            adapter,
            bias,
            stride,
            padding: k / 2,
        };
        self.convs.push(conv.handle());
        Ok(conv)
    }

    /// The domain-specific final 1×1 convolution, freshly initialised with small weights.
    pub fn head(&mut self, id: &str, c_in: i64, c_out: i64) -> Result<AdaptiveConv> {
        let bound = 0.1 / (c_in as f64).sqrt();
        let w = self.uniform(id, &[c_out, c_in, 1, 1], bound);
        let group = self.group(Group::Head);
        let core = self.store.add(format!("{id}.weight"), w, group, true, false)?;
        let b = Tensor::zeros([c_out], (Kind::Float, tch::Device::Cpu));
        let bias = self.store.add(format!("{id}.bias"), b, group, true, false)?;
        self.inventory.convs.push(ConvSpec {
            layer_id: id.to_string(),
            shape: [c_out as usize, c_in as usize, 1, 1],
            bias: true,
            role: ConvRole::Head,
        });
        let conv = AdaptiveConv {
            layer_id: id.to_string(),
            core,
            adapter: None,
            bias: Some(bias),
            stride: 1,
            padding: 0,
        };
        self.convs.push(conv.handle());
        Ok(conv)
    }

    pub fn norm(&mut self, id: &str, channels: i64) -> Result<Norm> {
        let group = self.group(Group::Norm);
        let opts = (Kind::Float, tch::Device::Cpu);
        let weight = self
            .store
            .add(format!("{id}.weight"), Tensor::ones([channels], opts), group, true, false)?;
        let bias = self
            .store
            .add(format!("{id}.bias"), Tensor::zeros([channels], opts), group, true, false)?;
        let running_mean = self.store.add(
            format!("{id}.running_mean"),
            Tensor::zeros([channels], opts),
            group,
            false,
            true,
        )?;
        let running_var = self.store.add(
            format!("{id}.running_var"),
            Tensor::ones([channels], opts),
            group,
            false,
            true,
        )?;
        if let Mode::Detector(_) = self.mode {
            self.inventory.norms.push((id.to_string(), channels as usize));
        }
        Ok(Norm {
            weight,
            bias,
            running_mean,
            running_var,
        })
    }

    /// Recorded inventory and handles to every convolution, in construction order.
    pub fn finish(self) -> (LayerInventory, Vec<AdaptiveConv>) {
        (self.inventory, self.convs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Device;

    #[test]
    fn proposed_convs_are_frozen_and_adapted() {
        let mut store = ParamStore::new(Device::Cpu);
        let mut f = LayerFactory::detector(&mut store, Regime::Proposed, 0);
        let conv = f.conv("c", 3, 4, 3, 1).unwrap();
        f.head("h", 4, 2).unwrap();
        drop(f);
        assert!(!store.get("c.weight").unwrap().trainable);
        assert!(store.get("c.adapter").unwrap().trainable);
        assert!(store.get("h.weight").unwrap().trainable);
        assert!(store.get("h.adapter").is_none());
        assert!(conv.adapter().unwrap().is_identity());
        assert!(conv.effective_weight().equal(&conv.kernel().weights));
    }

    #[test]
    fn init_is_a_function_of_seed_and_id() {
        let make = |seed| {
            let mut store = ParamStore::new(Device::Cpu);
            let mut f = LayerFactory::detector(&mut store, Regime::Scratch, seed);
            f.conv("x", 2, 2, 3, 1).unwrap().kernel().weights
        };
        assert!(make(1).equal(&make(1)));
        assert!(!make(1).equal(&make(2)));
    }

    #[test]
    fn regimes_parse() {
        for r in Regime::ALL {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
        }
        assert!("adapted".parse::<Regime>().is_err());
    }
}
