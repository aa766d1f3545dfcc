use serde::Serialize;

use super::config::DroneNetConfig;
use super::model::layer_name;

/// Multiply-accumulate counts for one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerMacs {
    pub name: String,
    /// Convolution MACs over all power banks.
    pub macs: u64,
    /// Multiplies spent raising the input to powers 2..=q, reported apart
    /// from `macs`.
    pub power_mults: u64,
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MacReport {
    pub input_h: usize,
    pub input_w: usize,
    pub layers: Vec<LayerMacs>,
    pub total_macs: u64,
    pub total_power_mults: u64,
}

impl MacReport {
    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }
}

/// MACs of a same-padded, stride-1 Self-ONN layer on an `h × w` input:
/// `q · h · w · c_out · c_in · k²`, plus `q(q-1)/2 · c_in · h · w` power
/// multiplies.
pub fn selfonn_layer_macs(
    q: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    h: usize,
    w: usize,
) -> (u64, u64) {
    let plane = (h * w) as u64;
    let macs = q as u64 * plane * (c_out * c_in * kernel * kernel) as u64;
    let power = (q * (q - 1) / 2) as u64 * c_in as u64 * plane;
    (macs, power)
}

/// Walks the layer geometry of `config` for an `h × w` input.
pub fn count_macs(config: &DroneNetConfig, h: usize, w: usize) -> MacReport {
    let mut layers = Vec::new();
    let (mut fh, mut fw) = (h, w);
    for (ci, col) in config.columns.iter().enumerate() {
        let (mut ch, mut cw) = (h, w);
        let mut c_in = config.in_channels;
        for (li, l) in col.layers.iter().enumerate() {
            let (macs, power_mults) = selfonn_layer_macs(l.q, c_in, l.channels, l.kernel, ch, cw);
            layers.push(LayerMacs {
                name: layer_name(ci, li),
                macs,
                power_mults,
                out_h: ch,
                out_w: cw,
            });
            c_in = l.channels;
            if l.pool_after {
                ch = ch.div_ceil(2);
                cw = cw.div_ceil(2);
            }
        }
        (fh, fw) = (ch, cw);
    }
    let (macs, _) = selfonn_layer_macs(1, config.fusion_in_channels(), 1, 1, fh, fw);
    layers.push(LayerMacs {
        name: "fusion".into(),
        macs,
        power_mults: 0,
        out_h: fh,
        out_w: fw,
    });
    MacReport {
        input_h: h,
        input_w: w,
        total_macs: layers.iter().map(|l| l.macs).sum(),
        total_power_mults: layers.iter().map(|l| l.power_mults).sum(),
        layers,
    }
}
