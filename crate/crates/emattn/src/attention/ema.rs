//! Efficient multi-scale attention. Channels are folded into the batch axis
//! in groups, two parallel branches (a 1x1 conv over pooled directional
//! profiles, a 3x3 conv over the folded map) describe each group, and a
//! cross-spatial step lets each branch's channel summary attend over the
//! other's spatial map before the fused weights gate the input.

use super::{conv_init, seeded_rng};
use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmaVariant {
    /// Full module including the cross-spatial fusion step.
    Full,
    /// Ablation: skip fusion and average the two branch outputs.
    NoCrossSpatial,
}

#[derive(Clone, Debug)]
pub struct EmaParams {
    channels: usize,
    groups: usize,
    conv1_w: Tensor,
    conv1_b: Tensor,
    conv3_w: Tensor,
    conv3_b: Tensor,
}

/// Tape leaves for one bound instance, in `buffers()` order.
#[derive(Clone, Copy, Debug)]
pub struct EmaVars {
    pub channels: usize,
    pub groups: usize,
    pub conv1_w: VarId,
    pub conv1_b: VarId,
    pub conv3_w: VarId,
    pub conv3_b: VarId,
}

impl EmaParams {
    fn group_width(channels: usize, groups: usize) -> Result<usize> {
        if groups == 0 {
            return Err(Error::Config("group count must be >= 1".into()));
        }
        if channels == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "channel count {channels} is not divisible by {groups} groups"
            )));
        }
        Ok(channels / groups)
    }

    pub fn zeros(channels: usize, groups: usize) -> Result<Self> {
        let c = Self::group_width(channels, groups)?;
        Ok(EmaParams {
            channels,
            groups,
            conv1_w: Tensor::zeros(&[c, c, 1, 1]),
            conv1_b: Tensor::zeros(&[c]),
            conv3_w: Tensor::zeros(&[c, c, 3, 3]),
            conv3_b: Tensor::zeros(&[c]),
        })
    }

    pub fn init(channels: usize, groups: usize, seed: u64) -> Result<Self> {
        let c = Self::group_width(channels, groups)?;
        let mut rng = seeded_rng(seed);
        let (conv1_w, conv1_b) = conv_init(&mut rng, c, c, 1);
        let (conv3_w, conv3_b) = conv_init(&mut rng, c, c, 3);
        Ok(EmaParams { channels, groups, conv1_w, conv1_b, conv3_w, conv3_b })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv3_w", &self.conv3_w),
            ("conv3_b", &self.conv3_b),
        ]
    }

    pub fn buffers_owned(&self) -> Vec<(&'static str, Tensor)> {
        self.buffers().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Mutable buffer views in `buffers()` order, for optimizers.
    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.conv1_w, &mut self.conv1_b, &mut self.conv3_w, &mut self.conv3_b]
    }

    /// Rebuild from buffers in `buffers()` order, validating every shape.
    pub fn from_buffers(channels: usize, groups: usize, bufs: Vec<Tensor>) -> Result<Self> {
        let c = Self::group_width(channels, groups)?;
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
        let conv1_w = next("conv1_w", &[c, c, 1, 1])?;
        let conv1_b = next("conv1_b", &[c])?;
        let conv3_w = next("conv3_w", &[c, c, 3, 3])?;
        let conv3_b = next("conv3_b", &[c])?;
        if it.next().is_some() {
            return Err(Error::Format("too many buffers for an EMA module".into()));
        }
        Ok(EmaParams { channels, groups, conv1_w, conv1_b, conv3_w, conv3_b })
    }

    /// Push the parameters onto a tape as leaves, in `buffers()` order.
    pub fn bind(&self, tape: &mut Tape) -> EmaVars {
        EmaVars {
            channels: self.channels,
            groups: self.groups,
            conv1_w: tape.leaf(self.conv1_w.clone()),
            conv1_b: tape.leaf(self.conv1_b.clone()),
            conv3_w: tape.leaf(self.conv3_w.clone()),
            conv3_b: tape.leaf(self.conv3_b.clone()),
        }
    }

    /// Plain inference on a throwaway tape.
    pub fn forward(&self, x: &Tensor, variant: EmaVariant) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = ema_forward(&mut tape, &vars, variant, xv)?;
        Ok(tape.value(y).clone())
    }
}

impl EmaVars {
    pub fn ids(&self) -> Vec<(&'static str, VarId)> {
        vec![
            ("conv1_w", self.conv1_w),
            ("conv1_b", self.conv1_b),
            ("conv3_w", self.conv3_w),
            ("conv3_b", self.conv3_b),
        ]
    }
}

fn dims4(tape: &Tape, x: VarId) -> Result<[usize; 4]> {
    let d = tape.value(x).shape().dims().to_vec();
    if d.len() != 4 {
        return Err(Error::Shape(format!(
            "expected a (B, C, H, W) tensor, got rank {}",
            d.len()
        )));
    }
    Ok([d[0], d[1], d[2], d[3]])
}

/// (B, C, H, W) -> (B*G, C/G, H, W). Row-major layout makes the fold a pure
/// reshape: group g of sample b lands at batch index b*G + g.
pub fn group_fold(tape: &mut Tape, x: VarId, groups: usize) -> Result<VarId> {
    let [b, c, h, w] = dims4(tape, x)?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Shape(format!(
            "cannot fold {c} channels into {groups} groups"
        )));
    }
    tape.reshape(x, &[b * groups, c / groups, h, w])
}

/// Inverse of `group_fold` for the same group count.
pub fn group_unfold(tape: &mut Tape, xg: VarId, groups: usize) -> Result<VarId> {
    let [bg, c, h, w] = dims4(tape, xg)?;
    if groups == 0 || bg % groups != 0 {
        return Err(Error::Shape(format!(
            "folded batch {bg} is not a multiple of {groups} groups"
        )));
    }
    tape.reshape(xg, &[bg / groups, c * groups, h, w])
}

/// Pooled-profile branch: average the folded map along each spatial axis,
/// stack the two profiles on one axis, run the shared 1x1 conv, split back,
/// and gate the input with a sigmoid per direction.
pub fn branch_1x1(tape: &mut Tape, vars: &EmaVars, xg: VarId) -> Result<VarId> {
    let [_, _, h, w] = dims4(tape, xg)?;
    let ph = tape.avgpool_width(xg)?; // (BG, c, H, 1)
    let pw = tape.avgpool_height(xg)?; // (BG, c, 1, W)
    let pwt = tape.permute(pw, &[0, 1, 3, 2])?; // (BG, c, W, 1)
    let cat = tape.concat(&[ph, pwt], 2)?; // (BG, c, H+W, 1)
    let t = tape.conv2d(cat, vars.conv1_w, vars.conv1_b, 1, 0)?;
    let parts = tape.split(t, 2, &[h, w])?;
    let gh = tape.sigmoid(parts[0])?; // (BG, c, H, 1)
    let tw = tape.permute(parts[1], &[0, 1, 3, 2])?; // (BG, c, 1, W)
    let gw = tape.sigmoid(tw)?;
    let xh = tape.mul(xg, gh)?;
    tape.mul(xh, gw)
}

/// Local-context branch: a stride-1 padded 3x3 conv over the folded map.
pub fn branch_3x3(tape: &mut Tape, vars: &EmaVars, xg: VarId) -> Result<VarId> {
    tape.conv2d(xg, vars.conv3_w, vars.conv3_b, 1, 1)
}

/// Fuse the branches: each branch's pooled channel vector becomes a softmax
/// distribution that contracts the other branch's flattened spatial map into
/// one weight per pixel; the summed maps gate the folded input.
pub fn cross_spatial(tape: &mut Tape, xg: VarId, x1: VarId, x2: VarId) -> Result<VarId> {
    let [bg, c, h, w] = dims4(tape, xg)?;
    let g1 = tape.gap2d(x1)?; // (BG, c, 1, 1)
    let r1 = tape.reshape(g1, &[bg, 1, c])?;
    let a1 = tape.softmax_axis(r1, 2)?;
    let m2 = tape.reshape(x2, &[bg, c, h * w])?;
    let y1 = tape.matmul(a1, m2)?; // (BG, 1, H*W)

    let g2 = tape.gap2d(x2)?;
    let r2 = tape.reshape(g2, &[bg, 1, c])?;
    let a2 = tape.softmax_axis(r2, 2)?;
    let m1 = tape.reshape(x1, &[bg, c, h * w])?;
    let y2 = tape.matmul(a2, m1)?;

    let ysum = tape.add(y1, y2)?;
    let ymap = tape.reshape(ysum, &[bg, 1, h, w])?;
    let gate = tape.sigmoid(ymap)?;
    tape.mul(xg, gate)
}

/// Full module: fold, run both branches, fuse (or average for the ablation),
/// unfold. Output shape equals input shape.
pub fn ema_forward(
    tape: &mut Tape,
    vars: &EmaVars,
    variant: EmaVariant,
    x: VarId,
) -> Result<VarId> {
    let [_, c, _, _] = dims4(tape, x)?;
    if c != vars.channels {
        return Err(Error::Shape(format!(
            "input has {c} channels, module expects {}",
            vars.channels
        )));
    }
    let xg = group_fold(tape, x, vars.groups)?;
    let x1 = branch_1x1(tape, vars, xg)?;
    let x2 = branch_3x3(tape, vars, xg)?;
    let yg = match variant {
        EmaVariant::Full => cross_spatial(tape, xg, x1, x2)?,
        EmaVariant::NoCrossSpatial => {
            let s = tape.add(x1, x2)?;
            tape.scale(s, 0.5)?
        }
    };
    group_unfold(tape, yg, vars.groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::randn;

    #[test]
    fn rejects_bad_group_configs() {
        assert!(EmaParams::init(64, 7, 1).is_err());
        assert!(EmaParams::init(64, 0, 1).is_err());
        assert!(EmaParams::init(0, 1, 1).is_err());
        assert!(EmaParams::init(64, 128, 1).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = EmaParams::init(32, 8, 9).unwrap();
        let b = EmaParams::init(32, 8, 9).unwrap();
        let c = EmaParams::init(32, 8, 10).unwrap();
        for ((_, ta), (_, tb)) in a.buffers().into_iter().zip(b.buffers()) {
            assert_eq!(ta.data(), tb.data());
        }
        assert_ne!(a.conv1_w.data(), c.conv1_w.data());
        // fan_in of the 3x3 conv is 4*9 = 36, so |w| <= 1/6.
        let bound = (1.0 / 36.0_f64).sqrt();
        assert!(a.conv3_w.data().iter().all(|v| v.abs() <= bound));
        assert!(a.conv1_b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_fold_places_groups_in_batch_order() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(
            &[2, 4, 1, 1],
            vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0],
        )
        .unwrap();
        let xv = tape.leaf(x);
        let folded = group_fold(&mut tape, xv, 2).unwrap();
        let f = tape.value(folded);
        assert_eq!(f.shape().dims(), &[4, 2, 1, 1]);
        // Sample 0 group 0, sample 0 group 1, sample 1 group 0, sample 1 group 1.
        assert_eq!(f.data(), &[0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0]);
        let back = group_unfold(&mut tape, folded, 2).unwrap();
        assert_eq!(tape.value(back).shape().dims(), &[2, 4, 1, 1]);
    }

    #[test]
    fn zero_params_scale_constant_input_by_four_sigmoids() {
        // With all-zero weights both branch outputs are zero on the pooled
        // path only; for constant input 4 the 1x1 branch gates by sigma(0)^2
        // and the 3x3 branch is zero, so the fused gate is sigma(1 + 0) and
        // every output element equals 4 * sigma(1).
        let p = EmaParams::zeros(8, 4).unwrap();
        let x = Tensor::full(&[2, 8, 5, 3], 4.0);
        let y = p.forward(&x, EmaVariant::Full).unwrap();
        let expect = 4.0 / (1.0 + (-1.0_f64).exp());
        assert_eq!(y.shape().dims(), &[2, 8, 5, 3]);
        for v in y.data() {
            assert!((v - expect).abs() < 1e-12, "got {v}, want {expect}");
        }
    }

    #[test]
    fn output_shape_matches_input_for_both_variants() {
        let p = EmaParams::init(16, 4, 2).unwrap();
        let x = randn(&[3, 16, 7, 5], 11);
        for variant in [EmaVariant::Full, EmaVariant::NoCrossSpatial] {
            let y = p.forward(&x, variant).unwrap();
            assert_eq!(y.shape().dims(), x.shape().dims());
            assert!(y.is_finite());
        }
    }

    #[test]
    fn full_variant_contracts_magnitudes() {
        // The final step multiplies the folded input by sigmoid gates, so no
        // output element can exceed its input in magnitude.
        let p = EmaParams::init(12, 3, 7).unwrap();
        let x = randn(&[2, 12, 6, 4], 13);
        let y = p.forward(&x, EmaVariant::Full).unwrap();
        for (xi, yi) in x.data().iter().zip(y.data()) {
            assert!(yi.abs() <= xi.abs() + 1e-15);
        }
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let p = EmaParams::init(8, 2, 3).unwrap();
        let x = Tensor::zeros(&[1, 8, 4, 4]);
        let y = p.forward(&x, EmaVariant::Full).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn groups_are_independent() {
        // Editing channels of one group must not change any other group's
        // output. Perturb group 1 (channels 4..8) and compare.
        let p = EmaParams::init(16, 4, 5).unwrap();
        let x = randn(&[1, 16, 4, 4], 21);
        let mut bumped = x.clone();
        {
            let d = bumped.data_mut();
            // Channels 4..8 span elements 4*16 .. 8*16 at H=W=4.
            for v in &mut d[4 * 16..8 * 16] {
                *v += 0.5;
            }
        }
        let y0 = p.forward(&x, EmaVariant::Full).unwrap();
        let y1 = p.forward(&bumped, EmaVariant::Full).unwrap();
        for ch in 0..16 {
            let range = ch * 16..(ch + 1) * 16;
            let same = y0.data()[range.clone()] == y1.data()[range];
            if (4..8).contains(&ch) {
                assert!(!same, "perturbed group should change channel {ch}");
            } else {
                assert!(same, "channel {ch} outside the edited group moved");
            }
        }
    }

    #[test]
    fn forward_rejects_channel_mismatch() {
        let p = EmaParams::init(8, 2, 3).unwrap();
        let x = Tensor::zeros(&[1, 12, 4, 4]);
        assert!(p.forward(&x, EmaVariant::Full).is_err());
    }

    #[test]
    fn buffer_roundtrip_preserves_forward() {
        let p = EmaParams::init(24, 8, 17).unwrap();
        let bufs = p.buffers_owned().into_iter().map(|(_, t)| t).collect();
        let q = EmaParams::from_buffers(24, 8, bufs).unwrap();
        let x = randn(&[2, 24, 5, 5], 31);
        let ya = p.forward(&x, EmaVariant::Full).unwrap();
        let yb = q.forward(&x, EmaVariant::Full).unwrap();
        assert_eq!(ya.data(), yb.data());
    }

    #[test]
    fn from_buffers_rejects_wrong_shapes_and_counts() {
        let p = EmaParams::init(8, 4, 1).unwrap();
        let mut bufs: Vec<Tensor> =
            p.buffers_owned().into_iter().map(|(_, t)| t).collect();
        bufs[1] = Tensor::zeros(&[3]);
        assert!(EmaParams::from_buffers(8, 4, bufs.clone()).is_err());
        let good: Vec<Tensor> = p.buffers_owned().into_iter().map(|(_, t)| t).collect();
        assert!(EmaParams::from_buffers(8, 4, good[..3].to_vec()).is_err());
        let mut extra = good.clone();
        extra.push(Tensor::zeros(&[1]));
        assert!(EmaParams::from_buffers(8, 4, extra).is_err());
    }
}
