//! Checkpoints are safetensors files (little-endian `f32` tensors plus a string
//! metadata map). Metadata keys:
//!
//! - `format`: `landmark-adapt/checkpoint`
//! - `version`: integer, currently `1`
//! - `meta`: JSON [`CheckpointMeta`]
//! - `entries`: JSON list of `[name, group, trainable, buffer]` in model order;
//!   tensors not listed there (e.g. optimiser state) are auxiliary.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};
use tch::{Device, Kind, Tensor};

use super::layers::Regime;
use super::store::{Group, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "landmark-adapt/checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub regime: Regime,
    pub landmarks: usize,
    /// Hex SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Optimisation steps completed.
    pub step: u64,
    /// Epochs completed.
    pub epoch: u64,
}

#[derive(Debug)]
pub struct CheckpointEntry {
    pub name: String,
    pub group: Group,
    pub trainable: bool,
    pub buffer: bool,
    pub tensor: Tensor,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Model tensors in model order.
    pub entries: Vec<CheckpointEntry>,
    /// Auxiliary tensors keyed by name.
    pub aux: HashMap<String, Tensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.tensor)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    pub fn group(&self, group: Group) -> impl Iterator<Item = &CheckpointEntry> {
        self.entries.iter().filter(move |e| e.group == group)
    }
}

fn to_bytes(t: &Tensor) -> Result<(Vec<usize>, Vec<u8>)> {
    let shape = t.size().iter().map(|&d| d as usize).collect();
    let flat = t
        .detach()
        .to_device(Device::Cpu)
        .to_kind(Kind::Float)
        .contiguous()
        .reshape([-1]);
    let values = Vec::<f32>::try_from(&flat)?;
    Ok((shape, values.iter().flat_map(|v| v.to_le_bytes()).collect()))
}

fn from_view(view: &TensorView<'_>, name: &str) -> Result<Tensor> {
    if view.dtype() != Dtype::F32 {
        return Err(Error::Checkpoint(format!(
            "tensor `{name}` has dtype {:?}, expected F32",
            view.dtype()
        )));
    }
    let values: Vec<f32> = view
        .data()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let shape: Vec<i64> = view.shape().iter().map(|&d| d as i64).collect();
    Ok(Tensor::from_slice(&values).reshape(shape))
}

fn corrupt(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {what}", path.display()))
}

/// Writes every tensor of `store` plus `aux` tensors. The file is written to a
/// temporary sibling first and renamed, so readers never see a partial file.
pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    meta: &CheckpointMeta,
    aux: &[(String, Tensor)],
) -> Result<()> {
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut entries = Vec::new();
    for (name, p) in store.iter() {
        let (shape, bytes) = to_bytes(&p.tensor)?;
        buffers.push((name.to_string(), shape, bytes));
        entries.push((name.to_string(), p.group, p.trainable, p.buffer));
    }
    for (name, t) in aux {
        if store.get(name).is_some() {
            return Err(Error::Checkpoint(format!(
                "auxiliary tensor `{name}` collides with a model tensor"
            )));
        }
        let (shape, bytes) = to_bytes(t)?;
        buffers.push((name.clone(), shape, bytes));
    }
    let views = buffers
        .iter()
        .map(|(n, s, b)| Ok((n.clone(), TensorView::new(Dtype::F32, s.clone(), b)?)))
        .collect::<std::result::Result<Vec<_>, safetensors::SafeTensorError>>()
        .map_err(|e| corrupt(path, e))?;
    let metadata: HashMap<String, String> = [
        ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
        ("version".to_string(), CHECKPOINT_VERSION.to_string()),
        ("meta".to_string(), serde_json::to_string(meta).map_err(|e| corrupt(path, e))?),
        ("entries".to_string(), serde_json::to_string(&entries).map_err(|e| corrupt(path, e))?),
    ]
    .into_iter()
    .collect();
    let tmp = path.with_extension("partial");
    safetensors::serialize_to_file(views, &Some(metadata), &tmp).map_err(|e| corrupt(path, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Every tensor of a plain safetensors file (all must be `F32`).
pub fn read_f32_tensors(path: &Path) -> Result<HashMap<String, Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| corrupt(path, e))?;
    st.tensors()
        .into_iter()
        .map(|(name, view)| Ok((name.clone(), from_view(&view, &name)?)))
        .collect()
}

/// Reads only the metadata of a checkpoint.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, metadata) = SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(path, e))?;
    parse_meta(path, metadata.metadata())
}

fn parse_meta(path: &Path, map: &Option<HashMap<String, String>>) -> Result<CheckpointMeta> {
    let map = map
        .as_ref()
        .ok_or_else(|| corrupt(path, "missing metadata"))?;
    let field = |k: &str| {
        map.get(k)
            .ok_or_else(|| corrupt(path, format!("missing metadata key `{k}`")))
    };
    if field("format")? != CHECKPOINT_FORMAT {
        return Err(corrupt(path, "not a landmark-adapt checkpoint"));
    }
    let version: u32 = field("version")?
        .parse()
        .map_err(|_| corrupt(path, "unreadable version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(
            path,
            format!("unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"),
        ));
    }
    serde_json::from_str(field("meta")?).map_err(|e| corrupt(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, metadata) = SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(path, e))?;
    let meta = parse_meta(path, metadata.metadata())?;
    let listed: Vec<(String, Group, bool, bool)> = serde_json::from_str(
        metadata
            .metadata()
            .as_ref()
            .and_then(|m| m.get("entries"))
            .ok_or_else(|| corrupt(path, "missing entry list"))?,
    )
    .map_err(|e| corrupt(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| corrupt(path, e))?;
    let mut entries = Vec::with_capacity(listed.len());
    for (name, group, trainable, buffer) in listed {
        let view = st.tensor(&name).map_err(|e| corrupt(path, e))?;
        entries.push(CheckpointEntry {
            tensor: from_view(&view, &name)?,
            name,
            group,
            trainable,
            buffer,
        });
    }
    let mut aux = HashMap::new();
    for (name, view) in st.tensors() {
        if !entries.iter().any(|e| e.name == name) {
            aux.insert(name.clone(), from_view(&view, &name)?);
        }
    }
    Ok(Checkpoint { meta, entries, aux })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            regime: Regime::Proposed,
            landmarks: 3,
            config_hash: "abc".into(),
            config: serde_json::json!({"k": 3}),
            step: 7,
            epoch: 1,
        }
    }

    #[test]
    fn round_trip_preserves_values_order_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt-0001.bin");
        let mut store = ParamStore::new(Device::Cpu);
        let opts = (Kind::Float, Device::Cpu);
        let _ = store.add("z.w", Tensor::randn([3, 2, 3, 3], opts), Group::Core, false, false).unwrap();
        let _ = store.add("a.w", Tensor::randn([3, 3], opts), Group::Adapters, true, false).unwrap();
        let _ = store.add("n.rm", Tensor::randn([3], opts), Group::Norm, false, true).unwrap();
        let aux = vec![("optim.step".to_string(), Tensor::from_slice(&[4.0f32]))];
        save_checkpoint(&path, &store, &meta(), &aux).unwrap();

        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta, meta());
        let names: Vec<_> = ck.entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["z.w", "a.w", "n.rm"]);
        for e in &ck.entries {
            let p = store.get(&e.name).unwrap();
            assert!(e.tensor.equal(&p.tensor.detach()));
            assert_eq!((e.group, e.trainable, e.buffer), (p.group, p.trainable, p.buffer));
        }
        assert_eq!(ck.aux["optim.step"].double_value(&[0]), 4.0);
        assert_eq!(read_checkpoint_meta(&path).unwrap().step, 7);
    }

    #[test]
    fn rejects_foreign_and_future_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let data: Vec<u8> = 1f32.to_le_bytes().to_vec();
        let view = TensorView::new(Dtype::F32, vec![1], &data).unwrap();
        let md: HashMap<String, String> = [
            ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
            ("version".to_string(), "99".to_string()),
        ]
        .into_iter()
        .collect();
        safetensors::serialize_to_file([("t", view)], &Some(md), &path).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version 99"), "{err}");
    }
}
