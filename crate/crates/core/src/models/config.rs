use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::AdamConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// conv stack → max-pool → stacked LSTM → dropout → ⊕ day-t inputs → dense → output
    Hydrodeep,
    /// conv stack → max-pool → flatten, same head
    Cnn,
    Lstm,
    Gru,
    Bilstm,
    /// HydroDeep without the process-based runoff columns
    DlAblation,
}

impl Arch {
    pub const ALL: [Arch; 6] = [Arch::Hydrodeep, Arch::Cnn, Arch::Lstm, Arch::Gru, Arch::Bilstm, Arch::DlAblation];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Hydrodeep => "hydrodeep",
            Arch::Cnn => "cnn",
            Arch::Lstm => "lstm",
            Arch::Gru => "gru",
            Arch::Bilstm => "bilstm",
            Arch::DlAblation => "dl_ablation",
        }
    }

    pub(crate) fn has_conv(self) -> bool {
        matches!(self, Arch::Hydrodeep | Arch::Cnn | Arch::DlAblation)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

/// Freeze units for transfer learning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerGroup {
    /// Shape-dependent projections of Input 1 and Input 2.
    InputAdapter,
    /// Convolution (and pooling) layers.
    Spatial,
    /// Recurrent layers.
    Temporal,
    /// Dense and output layers.
    Head,
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 4] =
        [LayerGroup::InputAdapter, LayerGroup::Spatial, LayerGroup::Temporal, LayerGroup::Head];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub lag: usize,
    pub grid_count: usize,
    /// Channels produced by the input adapters.
    pub adapter_width: usize,
    pub conv_layers: usize,
    pub conv_filters: usize,
    pub kernel_width: usize,
    pub pool_size: usize,
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub dropout_rate: f64,
    pub dense_units: usize,
    pub use_runoff_inputs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Hydrodeep,
            lag: 7,
            grid_count: 29,
            adapter_width: 16,
            conv_layers: 2,
            conv_filters: 64,
            kernel_width: 3,
            pool_size: 2,
            lstm_layers: 4,
            lstm_units: 50,
            dropout_rate: 0.2,
            dense_units: 64,
            use_runoff_inputs: true,
        }
    }
}

impl ModelConfig {
    pub fn uses_runoff(&self) -> bool {
        self.use_runoff_inputs && self.arch != Arch::DlAblation
    }

    /// `(Input 1 columns, Input 2 length)`.
    pub fn input_widths(&self) -> (usize, usize) {
        if self.uses_runoff() {
            (2 * self.grid_count + 1, 2 * self.grid_count)
        } else {
            (self.grid_count + 1, self.grid_count)
        }
    }

    /// Small widths for gradient checks and quick tests.
    pub fn small(arch: Arch, grid_count: usize, lag: usize) -> Self {
        Self {
            arch,
            lag,
            grid_count,
            adapter_width: 4,
            conv_layers: 2,
            conv_filters: 5,
            kernel_width: 2,
            pool_size: 2,
            lstm_layers: 4,
            lstm_units: 12,
            dropout_rate: 0.2,
            dense_units: 6,
            use_runoff_inputs: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement and
    /// restore the best parameters.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 32, adam: AdamConfig::default(), seed: 42, patience: None }
    }
}
