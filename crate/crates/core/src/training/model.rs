use tch::Device;

use super::config::TrainingConfig;
use crate::adapters::{
    count_parameters, Checkpoint, CheckpointMeta, Group, ParamStore, ParameterCount, Regime,
};
use crate::error::{Error, Result};
use crate::netcore::{core_groups, Detector, Generator};

/// A detector, its generator (adaptation regimes only) and the store owning
/// every tensor of both.
pub struct Model {
    pub store: ParamStore,
    pub detector: Detector,
    pub generator: Option<Generator>,
    pub config: TrainingConfig,
}

impl Model {
    /// Fresh initialisation from `config.seed`.
    pub fn build(config: &TrainingConfig, device: Device) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(device);
        let detector = Detector::new(&mut store, config.detector(), config.regime, config.seed)?;
        let generator = match config.regime {
            Regime::Pretrain => None,
            _ => Some(Generator::new(&mut store, config.generator(), config.seed)?),
        };
        Ok(Self {
            store,
            detector,
            generator,
            config: config.clone(),
        })
    }

    /// Fresh model whose core tensors (trunk kernels and norms) are copied from
    /// a supervised core checkpoint. Scratch models ignore the core.
    pub fn with_core(config: &TrainingConfig, core: Option<&Checkpoint>, device: Device) -> Result<Self> {
        let model = Self::build(config, device)?;
        let groups = core_groups(config.regime);
        if groups.is_empty() {
            return Ok(model);
        }
        let core = core.ok_or_else(|| {
            Error::Config(format!("core checkpoint required for the {} regime", config.regime))
        })?;
        check_core(config, &core.meta)?;
        model.store.load_groups(core.named(), groups)?;
        Ok(model)
    }

    /// Rebuilds the model a checkpoint was saved from and loads every tensor.
    pub fn from_checkpoint(ckpt: &Checkpoint, device: Device) -> Result<Self> {
        let config: TrainingConfig = serde_json::from_value(ckpt.meta.config.clone())
            .map_err(|e| Error::Checkpoint(format!("unreadable training config: {e}")))?;
        if config.regime != ckpt.meta.regime || config.landmarks != ckpt.meta.landmarks {
            return Err(Error::Checkpoint(
                "checkpoint metadata disagrees with its training config".into(),
            ));
        }
        let model = Self::build(&config, device)?;
        if model.store.len() != ckpt.entries.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} model tensors, the {} model has {}",
                ckpt.entries.len(),
                config.regime,
                model.store.len()
            )));
        }
        for e in &ckpt.entries {
            model.store.copy_in(&e.name, &e.tensor)?;
        }
        Ok(model)
    }

    pub fn meta(&self, step: u64, epoch: u64) -> CheckpointMeta {
        CheckpointMeta {
            regime: self.config.regime,
            landmarks: self.config.landmarks,
            config_hash: self.config.hash(),
            config: serde_json::to_value(&self.config).expect("config serialises"),
            step,
            epoch,
        }
    }

    /// Detector parameter budget under the model's regime (generator excluded).
    pub fn parameter_count(&self) -> ParameterCount {
        count_parameters(self.detector.inventory(), self.config.regime)
    }

    /// Trainable detector parameters actually registered in the store.
    pub fn trainable_detector_params(&self) -> usize {
        self.store
            .numel(|p| p.trainable && p.group != Group::Generator)
    }
}

fn check_core(config: &TrainingConfig, meta: &CheckpointMeta) -> Result<()> {
    if meta.regime != Regime::Pretrain {
        return Err(Error::Config(format!(
            "expected a pretrained core checkpoint, got a {} checkpoint",
            meta.regime
        )));
    }
    let core: TrainingConfig = serde_json::from_value(meta.config.clone())
        .map_err(|e| Error::Checkpoint(format!("unreadable core config: {e}")))?;
    let (a, b) = (core.arch, config.arch);
    if (a.detector_width, a.detector_depth) != (b.detector_width, b.detector_depth) {
        return Err(Error::Config(format!(
            "core detector is {}×{} (width × depth), config asks for {}×{}",
            a.detector_width, a.detector_depth, b.detector_width, b.detector_depth
        )));
    }
    Ok(())
}
