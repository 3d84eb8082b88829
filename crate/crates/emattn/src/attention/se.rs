//! Squeeze-excitation. Global average pooling squeezes each channel to one
//! number, a bottleneck pair of biased linear maps (ReLU between, sigmoid
//! after) produces per-channel gates, and the input is rescaled by them.

use super::{fc_init, seeded_rng};
use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SeParams {
    channels: usize,
    reduction: usize,
    squeeze_w: Tensor,
    squeeze_b: Tensor,
    excite_w: Tensor,
    excite_b: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct SeVars {
    pub channels: usize,
    pub squeeze_w: VarId,
    pub squeeze_b: VarId,
    pub excite_w: VarId,
    pub excite_b: VarId,
}

impl SeParams {
    fn mid_width(channels: usize, reduction: usize) -> Result<usize> {
        if reduction == 0 {
            return Err(Error::Config("reduction ratio must be >= 1".into()));
        }
        if channels == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "channel count {channels} is not divisible by reduction {reduction}"
            )));
        }
        Ok(channels / reduction)
    }

    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let m = Self::mid_width(channels, reduction)?;
        Ok(SeParams {
            channels,
            reduction,
            squeeze_w: Tensor::zeros(&[m, channels]),
            squeeze_b: Tensor::zeros(&[m]),
            excite_w: Tensor::zeros(&[channels, m]),
            excite_b: Tensor::zeros(&[channels]),
        })
    }

    pub fn init(channels: usize, reduction: usize, seed: u64) -> Result<Self> {
        let m = Self::mid_width(channels, reduction)?;
        let mut rng = seeded_rng(seed);
        let (squeeze_w, squeeze_b) = fc_init(&mut rng, m, channels);
        let (excite_w, excite_b) = fc_init(&mut rng, channels, m);
        Ok(SeParams { channels, reduction, squeeze_w, squeeze_b, excite_w, excite_b })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("squeeze_w", &self.squeeze_w),
            ("squeeze_b", &self.squeeze_b),
            ("excite_w", &self.excite_w),
            ("excite_b", &self.excite_b),
        ]
    }

    pub fn buffers_owned(&self) -> Vec<(&'static str, Tensor)> {
        self.buffers().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Mutable buffer views in `buffers()` order, for optimizers.
    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.squeeze_w, &mut self.squeeze_b, &mut self.excite_w, &mut self.excite_b]
    }

    pub fn from_buffers(channels: usize, reduction: usize, bufs: Vec<Tensor>) -> Result<Self> {
        let m = Self::mid_width(channels, reduction)?;
        let mut it = bufs.into_iter();
        let mut next = |name: &str, dims: &[usize]| -> Result<Tensor> {
            let t = it
                .next()
                .ok_or_else(|| Error::Format(format!("missing buffer {name}")))?;
            if t.shape().dims() != dims {
                return Err(Error::Format(format!(
                    "buffer {name} has shape {}, expected {:?}",
                    t.shape(),
                    dims
                )));
            }
            Ok(t)
        };
        let squeeze_w = next("squeeze_w", &[m, channels])?;
        let squeeze_b = next("squeeze_b", &[m])?;
        let excite_w = next("excite_w", &[channels, m])?;
        let excite_b = next("excite_b", &[channels])?;
        if it.next().is_some() {
            return Err(Error::Format(
                "too many buffers for a squeeze-excitation module".into(),
            ));
        }
        Ok(SeParams { channels, reduction, squeeze_w, squeeze_b, excite_w, excite_b })
    }

    pub fn bind(&self, tape: &mut Tape) -> SeVars {
        SeVars {
            channels: self.channels,
            squeeze_w: tape.leaf(self.squeeze_w.clone()),
            squeeze_b: tape.leaf(self.squeeze_b.clone()),
            excite_w: tape.leaf(self.excite_w.clone()),
            excite_b: tape.leaf(self.excite_b.clone()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = se_forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }
}

impl SeVars {
    pub fn ids(&self) -> Vec<(&'static str, VarId)> {
        vec![
            ("squeeze_w", self.squeeze_w),
            ("squeeze_b", self.squeeze_b),
            ("excite_w", self.excite_w),
            ("excite_b", self.excite_b),
        ]
    }
}

pub fn se_forward(tape: &mut Tape, vars: &SeVars, x: VarId) -> Result<VarId> {
    let dims = tape.value(x).shape().dims().to_vec();
    if dims.len() != 4 {
        return Err(Error::Shape(format!(
            "expected a (B, C, H, W) tensor, got rank {}",
            dims.len()
        )));
    }
    if dims[1] != vars.channels {
        return Err(Error::Shape(format!(
            "input has {} channels, module expects {}",
            dims[1], vars.channels
        )));
    }
    let c = vars.channels;
    let sq_dims = tape.value(vars.squeeze_w).shape().dims().to_vec();
    let m = sq_dims[0];
    let s = tape.gap2d(x)?; // (B, C, 1, 1)
    // The linear maps run as 1x1 convs over the pooled map; the weight
    // reshapes are free on the tape.
    let wsq = tape.reshape(vars.squeeze_w, &[m, c, 1, 1])?;
    let mid = tape.conv2d(s, wsq, vars.squeeze_b, 1, 0)?;
    let mid = tape.relu(mid)?; // (B, C/r, 1, 1)
    let wex = tape.reshape(vars.excite_w, &[c, m, 1, 1])?;
    let t = tape.conv2d(mid, wex, vars.excite_b, 1, 0)?;
    let gate = tape.sigmoid(t)?; // (B, C, 1, 1)
    tape.mul(x, gate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::randn;

    #[test]
    fn rejects_bad_reduction() {
        assert!(SeParams::init(64, 0, 1).is_err());
        assert!(SeParams::init(20, 16, 1).is_err());
    }

    #[test]
    fn zero_params_halve_the_input() {
        // Zero weights give a single sigma(0) = 1/2 gate on every channel.
        let p = SeParams::zeros(8, 4).unwrap();
        let x = randn(&[2, 8, 3, 3], 41);
        let y = p.forward(&x).unwrap();
        for (xi, yi) in x.data().iter().zip(y.data()) {
            assert!((yi - 0.5 * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn gate_is_constant_per_channel() {
        let p = SeParams::init(8, 2, 6).unwrap();
        let x = randn(&[1, 8, 4, 5], 43);
        let y = p.forward(&x).unwrap();
        for ch in 0..8 {
            // Pick a reference element with |x| comfortably above zero.
            let mut ratio = None;
            for row in 0..4 {
                for col in 0..5 {
                    let xv = x.at(&[0, ch, row, col]);
                    if xv.abs() < 1e-6 {
                        continue;
                    }
                    let r = y.at(&[0, ch, row, col]) / xv;
                    match ratio {
                        None => ratio = Some(r),
                        Some(r0) => assert!((r - r0).abs() < 1e-12),
                    }
                }
            }
            let r = ratio.expect("channel had no usable elements");
            assert!(r > 0.0 && r < 1.0, "gate {r} outside (0, 1)");
        }
    }

    #[test]
    fn output_shape_and_contraction() {
        let p = SeParams::init(16, 4, 12).unwrap();
        let x = randn(&[3, 16, 5, 5], 45);
        let y = p.forward(&x).unwrap();
        assert_eq!(y.shape().dims(), x.shape().dims());
        for (xi, yi) in x.data().iter().zip(y.data()) {
            assert!(yi.abs() <= xi.abs() + 1e-15);
        }
    }

    #[test]
    fn buffer_roundtrip_preserves_forward() {
        let p = SeParams::init(32, 16, 51).unwrap();
        let bufs = p.buffers_owned().into_iter().map(|(_, t)| t).collect();
        let q = SeParams::from_buffers(32, 16, bufs).unwrap();
        let x = randn(&[1, 32, 3, 3], 53);
        assert_eq!(p.forward(&x).unwrap().data(), q.forward(&x).unwrap().data());
    }
}
