//! Channel-attention modules over (B, C, H, W) feature maps: EMA (grouped
//! multi-scale attention with cross-spatial fusion), coordinate attention,
//! and squeeze-excitation. All three are pure gating modules: they rescale
//! the input elementwise by factors in (0, 1) built from pooled statistics,
//! so they preserve shape and absorb zero inputs.

mod ca;
mod ema;
mod io;
mod se;

pub use ca::{ca_forward, CaParams, CaVars};
pub use ema::{
    branch_1x1, branch_3x3, cross_spatial, ema_forward, group_fold, group_unfold, EmaParams,
    EmaVariant, EmaVars,
};
pub use io::{load_params, read_params, save_params, write_params};
pub use se::{se_forward, SeParams, SeVars};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Ema,
    Ca,
    Se,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Ema => "ema",
            AttentionKind::Ca => "ca",
            AttentionKind::Se => "se",
        }
    }

    /// Conventional default for the module's hyperparameter (groups for EMA,
    /// reduction ratio otherwise).
    pub fn default_hyper(self) -> usize {
        match self {
            AttentionKind::Ema => 32,
            AttentionKind::Ca => 32,
            AttentionKind::Se => 16,
        }
    }
}

/// Closed-form parameter count of one module instance. `hyper` is the group
/// count for EMA and the reduction ratio for CA/SE; it must divide `channels`.
pub fn param_count_module(kind: AttentionKind, channels: usize, hyper: usize) -> Result<u64> {
    if hyper == 0 {
        return Err(Error::Config("hyperparameter must be >= 1".into()));
    }
    if channels == 0 || channels % hyper != 0 {
        return Err(Error::Config(format!(
            "{} needs {} to divide the channel count, got channels={channels}, hyper={hyper}",
            kind.name(),
            if kind == AttentionKind::Ema { "the group count" } else { "the reduction ratio" },
        )));
    }
    let c = (channels / hyper) as u64;
    let ch = channels as u64;
    Ok(match kind {
        // 1x1 conv (c^2 + c) plus 3x3 conv (9 c^2 + c) on the folded width.
        AttentionKind::Ema => 10 * c * c + 2 * c,
        // Shared reduction conv plus two directional route convs, all biased.
        AttentionKind::Ca => ch * c + c + 2 * (c * ch + ch),
        // Squeeze and excite linear maps, both biased.
        AttentionKind::Se => ch * c + c + c * ch + ch,
    })
}

/// Uniform init on [-a, a] with a = sqrt(1 / fan_in); biases start at zero.
fn conv_init(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> (Tensor, Tensor) {
    let a = (1.0 / (cin * k * k) as f64).sqrt();
    let w = Tensor::from_fn(&[cout, cin, k, k], |_| rng.gen_range(-a..a));
    (w, Tensor::zeros(&[cout]))
}

fn fc_init(rng: &mut ChaCha8Rng, cout: usize, cin: usize) -> (Tensor, Tensor) {
    let a = (1.0 / cin as f64).sqrt();
    let w = Tensor::from_fn(&[cout, cin], |_| rng.gen_range(-a..a));
    (w, Tensor::zeros(&[cout]))
}

fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Owned container over any of the three module types; the unit the binary
/// parameter format stores.
#[derive(Clone, Debug)]
pub enum AttentionParams {
    Ema(EmaParams),
    Ca(CaParams),
    Se(SeParams),
}

impl AttentionParams {
    pub fn kind(&self) -> AttentionKind {
        match self {
            AttentionParams::Ema(_) => AttentionKind::Ema,
            AttentionParams::Ca(_) => AttentionKind::Ca,
            AttentionParams::Se(_) => AttentionKind::Se,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            AttentionParams::Ema(p) => p.channels(),
            AttentionParams::Ca(p) => p.channels(),
            AttentionParams::Se(p) => p.channels(),
        }
    }

    /// Groups for EMA, reduction ratio for CA/SE.
    pub fn hyper(&self) -> usize {
        match self {
            AttentionParams::Ema(p) => p.groups(),
            AttentionParams::Ca(p) => p.reduction(),
            AttentionParams::Se(p) => p.reduction(),
        }
    }

    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            AttentionParams::Ema(p) => p.buffers(),
            AttentionParams::Ca(p) => p.buffers(),
            AttentionParams::Se(p) => p.buffers(),
        }
    }

    pub fn param_count(&self) -> u64 {
        self.buffers().iter().map(|(_, t)| t.numel() as u64).sum()
    }
}
