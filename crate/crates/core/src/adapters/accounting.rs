use serde::{Deserialize, Serialize};

use super::layers::Regime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvRole {
    /// Adapted in the proposed regime.
    Trunk,
    /// Domain-specific output layer, always trained.
    Head,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub layer_id: String,
    /// `(C_out, C_in, k, k)`
    pub shape: [usize; 4],
    pub bias: bool,
    pub role: ConvRole,
}

impl ConvSpec {
    pub fn weights(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn biases(&self) -> usize {
        if self.bias {
            self.shape[0]
        } else {
            0
        }
    }
}

/// Shapes of a detector's learnable layers, in construction order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInventory {
    pub convs: Vec<ConvSpec>,
    /// `(layer_id, channels)`; each contributes a scale and a shift per channel.
    pub norms: Vec<(String, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub trainable: usize,
    pub frozen: usize,
    /// `trainable / (trainable + frozen)`.
    pub ratio: f64,
}

/// Trainable and frozen parameter counts of a detector under `regime`.
/// Running statistics are state, not parameters, and are not counted.
pub fn count_parameters(inventory: &LayerInventory, regime: Regime) -> ParameterCount {
    let norm: usize = inventory.norms.iter().map(|(_, c)| 2 * c).sum();
    let (mut trainable, mut frozen) = (norm, 0);
    for conv in &inventory.convs {
        let own = conv.weights() + conv.biases();
        match (regime, conv.role) {
            (Regime::Proposed, ConvRole::Trunk) => {
                frozen += own;
                trainable += conv.shape[0] * conv.shape[0];
            }
            _ => trainable += own,
        }
    }
    let total = trainable + frozen;
    ParameterCount {
        trainable,
        frozen,
        ratio: if total == 0 {
            0.0
        } else {
            trainable as f64 / total as f64
        },
    }
}
