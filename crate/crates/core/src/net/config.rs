use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One Self-ONN layer inside a column. Every layer is followed by Tanh, then
/// optionally by 2×2 max pooling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    /// Square, odd kernel extent (same padding).
    pub kernel: usize,
    /// Output channels.
    pub channels: usize,
    pub q: usize,
    pub pool_after: bool,
}

impl LayerDesc {
    pub const fn new(kernel: usize, channels: usize, q: usize, pool_after: bool) -> Self {
        LayerDesc {
            kernel,
            channels,
            q,
            pool_after,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub layers: Vec<LayerDesc>,
}

impl ColumnSpec {
    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.channels)
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| l.pool_after).count()
    }
}

/// Geometry of a multi-column Self-ONN density network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroneNetConfig {
    pub in_channels: usize,
    pub columns: Vec<ColumnSpec>,
}

/// Total downsampling of each column: two 2×2 pools.
pub const DOWNSAMPLE: usize = 4;

const POOLS_PER_COLUMN: usize = 2;

impl DroneNetConfig {
    /// The reference three-column geometry with q=3 in each column's first
    /// layer and q=5 everywhere else.
    pub fn dronenet() -> Self {
        let col = |k: [usize; 2], c: usize| ColumnSpec {
            layers: vec![
                LayerDesc::new(k[0], c, 3, true),
                LayerDesc::new(k[1], 2 * c, 5, true),
                LayerDesc::new(k[1], c, 5, false),
                LayerDesc::new(k[1], c / 2, 5, false),
            ],
        };
        DroneNetConfig {
            in_channels: 3,
            columns: vec![col([9, 7], 16), col([7, 5], 20), col([5, 3], 24)],
        }
    }

    /// Same geometry with every q set to 1: the plain multi-column CNN.
    pub fn mcnn() -> Self {
        Self::dronenet().with_uniform_q(1)
    }

    /// Small two-layer-per-column variant used for gradient checking.
    pub fn tiny(channels: usize) -> Self {
        let col = |k: [usize; 2]| ColumnSpec {
            layers: vec![
                LayerDesc::new(k[0], channels, 3, true),
                LayerDesc::new(k[1], channels, 5, true),
            ],
        };
        DroneNetConfig {
            in_channels: 3,
            columns: vec![col([5, 3]), col([3, 3]), col([3, 1])],
        }
    }

    /// Sets q for the first layer of each column and for all later layers.
    pub fn with_q(mut self, first: usize, rest: usize) -> Self {
        for col in &mut self.columns {
            for (i, layer) in col.layers.iter_mut().enumerate() {
                layer.q = if i == 0 { first } else { rest };
            }
        }
        self
    }

    pub fn with_uniform_q(self, q: usize) -> Self {
        self.with_q(q, q)
    }

    pub fn fusion_in_channels(&self) -> usize {
        self.columns.iter().map(ColumnSpec::out_channels).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::invalid("in_channels must be positive"));
        }
        if self.columns.is_empty() {
            return Err(Error::invalid("at least one column is required"));
        }
        for (ci, col) in self.columns.iter().enumerate() {
            if col.layers.is_empty() {
                return Err(Error::invalid(format!("column {} has no layers", ci + 1)));
            }
            if col.pool_count() != POOLS_PER_COLUMN {
                return Err(Error::invalid(format!(
                    "column {} pools {} times; every column must downsample by exactly {DOWNSAMPLE}x",
                    ci + 1,
                    col.pool_count()
                )));
            }
            for (li, l) in col.layers.iter().enumerate() {
                let at = format!("column {} layer {}", ci + 1, li + 1);
                if l.q < 1 {
                    return Err(Error::invalid(format!("{at}: q must be at least 1")));
                }
                if l.kernel == 0 || l.kernel % 2 == 0 {
                    return Err(Error::invalid(format!(
                        "{at}: kernel {} must be odd",
                        l.kernel
                    )));
                }
                if l.channels == 0 {
                    return Err(Error::invalid(format!("{at}: channels must be positive")));
                }
            }
        }
        Ok(())
    }
}

impl Default for DroneNetConfig {
    fn default() -> Self {
        Self::dronenet()
    }
}
