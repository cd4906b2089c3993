use tch::{Device, Kind, Tensor};

use crate::error::{Error, Result};

/// Weights of one convolution, `(C_out, C_in, k, k)`.
#[derive(Debug)]
pub struct ConvKernel {
    pub layer_id: String,
    pub weights: Tensor,
}

impl ConvKernel {
    pub fn new(layer_id: impl Into<String>, weights: Tensor) -> Result<Self> {
        let layer_id = layer_id.into();
        let size = weights.size();
        if size.len() != 4 || size.iter().any(|&d| d <= 0) {
            return Err(Error::Shape(format!(
                "kernel `{layer_id}` must have four positive axes, got {size:?}"
            )));
        }
        let finite = weights.isfinite().all().int64_value(&[]) != 0;
        if !finite {
            return Err(Error::Data(format!("kernel `{layer_id}` has non-finite entries")));
        }
        Ok(Self { layer_id, weights })
    }

    pub fn c_out(&self) -> i64 {
        self.weights.size()[0]
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.weights.size();
        [s[0] as usize, s[1] as usize, s[2] as usize, s[3] as usize]
    }
}

impl Clone for ConvKernel {
    fn clone(&self) -> Self {
        Self {
            layer_id: self.layer_id.clone(),
            weights: self.weights.copy(),
        }
    }
}

/// Square matrix over a layer's output channels.
#[derive(Debug)]
pub struct ProjectionAdapter {
    pub layer_id: String,
    pub matrix: Tensor,
    pub trainable: bool,
}

impl ProjectionAdapter {
    pub fn new(layer_id: impl Into<String>, matrix: Tensor, trainable: bool) -> Result<Self> {
        let layer_id = layer_id.into();
        let size = matrix.size();
        if size.len() != 2 || size[0] != size[1] || size[0] < 1 {
            return Err(Error::Shape(format!(
                "adapter `{layer_id}` must be a non-empty square matrix, got {size:?}"
            )));
        }
        Ok(Self {
            layer_id,
            matrix,
            trainable,
        })
    }

    pub fn dim(&self) -> i64 {
        self.matrix.size()[0]
    }

    pub fn is_identity(&self) -> bool {
        let eye = Tensor::eye(self.dim(), (self.matrix.kind(), self.matrix.device()));
        self.matrix.equal(&eye)
    }
}

/// Fresh identity adapter of size `c_out`.
pub fn init_adapter(layer_id: impl Into<String>, c_out: i64) -> Result<ProjectionAdapter> {
    if c_out < 1 {
        return Err(Error::Argument(format!("adapter size must be ≥ 1, got {c_out}")));
    }
    ProjectionAdapter::new(layer_id, Tensor::eye(c_out, (Kind::Float, Device::Cpu)), true)
}

/// `T[o,i,a,b] = Σ_o' W[o,o'] · K[o',i,a,b]`, as a differentiable tensor op.
pub fn mode1_tensor(matrix: &Tensor, kernel: &Tensor) -> Tensor {
    let size = kernel.size();
    matrix.matmul(&kernel.reshape([size[0], -1])).reshape(size)
}

/// Mode-1 (output channel) product of an adapter with a kernel. Inputs are untouched.
pub fn mode1_product(adapter: &ProjectionAdapter, core: &ConvKernel) -> Result<ConvKernel> {
    if adapter.dim() != core.c_out() {
        return Err(Error::Shape(format!(
            "adapter `{}` has size {} but kernel `{}` has {} output channels",
            adapter.layer_id,
            adapter.dim(),
            core.layer_id,
            core.c_out()
        )));
    }
    let matrix = adapter.matrix.to_kind(core.weights.kind());
    Ok(ConvKernel {
        layer_id: core.layer_id.clone(),
        weights: mode1_tensor(&matrix, &core.weights),
    })
}
