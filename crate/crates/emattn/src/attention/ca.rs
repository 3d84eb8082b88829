//! Coordinate attention. Directional average pools produce an H-profile and
//! a W-profile per channel; a shared biased 1x1 conv reduces the stacked
//! profiles to C/r channels, a ReLU follows, and two route convs expand back
//! to C before sigmoid gates rescale the input along each axis.

use super::{conv_init, seeded_rng};
use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct CaParams {
    channels: usize,
    reduction: usize,
    reduce_w: Tensor,
    reduce_b: Tensor,
    route_h_w: Tensor,
    route_h_b: Tensor,
    route_w_w: Tensor,
    route_w_b: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct CaVars {
    pub channels: usize,
    pub reduce_w: VarId,
    pub reduce_b: VarId,
    pub route_h_w: VarId,
    pub route_h_b: VarId,
    pub route_w_w: VarId,
    pub route_w_b: VarId,
}

impl CaParams {
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
        Ok(CaParams {
            channels,
            reduction,
            reduce_w: Tensor::zeros(&[m, channels, 1, 1]),
            reduce_b: Tensor::zeros(&[m]),
            route_h_w: Tensor::zeros(&[channels, m, 1, 1]),
            route_h_b: Tensor::zeros(&[channels]),
            route_w_w: Tensor::zeros(&[channels, m, 1, 1]),
            route_w_b: Tensor::zeros(&[channels]),
        })
    }

    pub fn init(channels: usize, reduction: usize, seed: u64) -> Result<Self> {
        let m = Self::mid_width(channels, reduction)?;
        let mut rng = seeded_rng(seed);
        let (reduce_w, reduce_b) = conv_init(&mut rng, m, channels, 1);
        let (route_h_w, route_h_b) = conv_init(&mut rng, channels, m, 1);
        let (route_w_w, route_w_b) = conv_init(&mut rng, channels, m, 1);
        Ok(CaParams {
            channels,
            reduction,
            reduce_w,
            reduce_b,
            route_h_w,
            route_h_b,
            route_w_w,
            route_w_b,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("reduce_w", &self.reduce_w),
            ("reduce_b", &self.reduce_b),
            ("route_h_w", &self.route_h_w),
            ("route_h_b", &self.route_h_b),
            ("route_w_w", &self.route_w_w),
            ("route_w_b", &self.route_w_b),
        ]
    }

    pub fn buffers_owned(&self) -> Vec<(&'static str, Tensor)> {
        self.buffers().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Mutable buffer views in `buffers()` order, for optimizers.
    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.reduce_w,
            &mut self.reduce_b,
            &mut self.route_h_w,
            &mut self.route_h_b,
            &mut self.route_w_w,
            &mut self.route_w_b,
        ]
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
        let reduce_w = next("reduce_w", &[m, channels, 1, 1])?;
        let reduce_b = next("reduce_b", &[m])?;
        let route_h_w = next("route_h_w", &[channels, m, 1, 1])?;
        let route_h_b = next("route_h_b", &[channels])?;
        let route_w_w = next("route_w_w", &[channels, m, 1, 1])?;
        let route_w_b = next("route_w_b", &[channels])?;
        if it.next().is_some() {
            return Err(Error::Format(
                "too many buffers for a coordinate-attention module".into(),
            ));
        }
        Ok(CaParams {
            channels,
            reduction,
            reduce_w,
            reduce_b,
            route_h_w,
            route_h_b,
            route_w_w,
            route_w_b,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> CaVars {
        CaVars {
            channels: self.channels,
            reduce_w: tape.leaf(self.reduce_w.clone()),
            reduce_b: tape.leaf(self.reduce_b.clone()),
            route_h_w: tape.leaf(self.route_h_w.clone()),
            route_h_b: tape.leaf(self.route_h_b.clone()),
            route_w_w: tape.leaf(self.route_w_w.clone()),
            route_w_b: tape.leaf(self.route_w_b.clone()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = ca_forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }
}

impl CaVars {
    pub fn ids(&self) -> Vec<(&'static str, VarId)> {
        vec![
            ("reduce_w", self.reduce_w),
            ("reduce_b", self.reduce_b),
            ("route_h_w", self.route_h_w),
            ("route_h_b", self.route_h_b),
            ("route_w_w", self.route_w_w),
            ("route_w_b", self.route_w_b),
        ]
    }
}

pub fn ca_forward(tape: &mut Tape, vars: &CaVars, x: VarId) -> Result<VarId> {
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
    let (h, w) = (dims[2], dims[3]);
    let ph = tape.avgpool_width(x)?; // (B, C, H, 1)
    let pw = tape.avgpool_height(x)?; // (B, C, 1, W)
    let pwt = tape.permute(pw, &[0, 1, 3, 2])?; // (B, C, W, 1)
    let cat = tape.concat(&[ph, pwt], 2)?; // (B, C, H+W, 1)
    let red = tape.conv2d(cat, vars.reduce_w, vars.reduce_b, 1, 0)?;
    let f = tape.relu(red)?; // (B, C/r, H+W, 1)
    let parts = tape.split(f, 2, &[h, w])?;
    let th = tape.conv2d(parts[0], vars.route_h_w, vars.route_h_b, 1, 0)?;
    let gh = tape.sigmoid(th)?; // (B, C, H, 1)
    let tw = tape.conv2d(parts[1], vars.route_w_w, vars.route_w_b, 1, 0)?;
    let twt = tape.permute(tw, &[0, 1, 3, 2])?; // (B, C, 1, W)
    let gw = tape.sigmoid(twt)?;
    let xh = tape.mul(x, gh)?;
    tape.mul(xh, gw)
}
