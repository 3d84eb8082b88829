//! Wall-clock timing of the EMA forward pass over backbone stage shapes.
//!
//! Each requested channel width is paired with a spatial extent that halves
//! per stage, mirroring how a classification trunk trades resolution for
//! width. Times are medians over repeated calls after a warmup, so a single
//! scheduler hiccup cannot skew a row. A separate probe doubles the spatial
//! extent of the first shape and checks that cost grows with pixel count,
//! within a slack factor that absorbs timer noise.

use std::time::Instant;

use serde::Serialize;

use crate::attention::{AttentionKind, EmaParams, EmaVariant};
use crate::error::{Error, Result};
use crate::graph::LayerKind;
use crate::sample::randn;
use crate::tensor::Tensor;

pub const DOUBLING_SLACK: f64 = 1.5;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub channels: Vec<usize>,
    pub groups: usize,
    /// Spatial extent of the first stage; later stages halve it (floor 1).
    pub input_hw: (usize, usize),
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            channels: vec![256, 512, 1024, 2048],
            groups: 32,
            input_hw: (32, 32),
            reps: 30,
            warmup: 5,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("benchmark needs at least one channel width".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("benchmark repetitions must be >= 1".into()));
        }
        if self.groups == 0 {
            return Err(Error::Config("benchmark groups must be >= 1".into()));
        }
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(Error::Config("benchmark spatial extent must be >= 1".into()));
        }
        for &c in &self.channels {
            if c == 0 || c % self.groups != 0 {
                return Err(Error::Config(format!(
                    "channel width {c} is not divisible by groups {}",
                    self.groups
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub channels: usize,
    pub groups: usize,
    pub height: usize,
    pub width: usize,
    pub reps: usize,
    pub median_micros: f64,
    pub min_micros: f64,
    pub max_micros: f64,
    pub macs: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublingProbe {
    pub channels: usize,
    pub base_hw: [usize; 2],
    pub doubled_hw: [usize; 2],
    pub median_micros_base: f64,
    pub median_micros_doubled: f64,
    /// doubled / base; quadrupling the pixels should not make the call cheaper.
    pub ratio: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub spatial_doubling: DoublingProbe,
}

/// Median of a non-empty sample set. Even-sized inputs average the two
/// central order statistics.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of an empty sample set");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite timing sample"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn time_forward(params: &EmaParams, x: &Tensor, warmup: usize, reps: usize) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        std::hint::black_box(params.forward(x, EmaVariant::Full)?);
    }
    let mut micros = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let y = params.forward(x, EmaVariant::Full)?;
        micros.push(start.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(y);
    }
    Ok(micros)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.channels.len());
    for (i, &c) in cfg.channels.iter().enumerate() {
        let h = (cfg.input_hw.0 >> i).max(1);
        let w = (cfg.input_hw.1 >> i).max(1);
        let params = EmaParams::init(c, cfg.groups, cfg.seed.wrapping_add(i as u64))?;
        let x = randn(&[1, c, h, w], cfg.seed.wrapping_add(0x9E37).wrapping_add(i as u64));
        let micros = time_forward(&params, &x, cfg.warmup, cfg.reps)?;
        let kind = LayerKind::Attention {
            kind: AttentionKind::Ema,
            channels: c,
            requested: cfg.groups,
            effective: cfg.groups,
        };
        rows.push(BenchRow {
            channels: c,
            groups: cfg.groups,
            height: h,
            width: w,
            reps: cfg.reps,
            median_micros: median(&micros),
            min_micros: micros.iter().copied().fold(f64::INFINITY, f64::min),
            max_micros: micros.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            macs: kind.macs(h, w),
        });
    }

    let c0 = cfg.channels[0];
    let (h0, w0) = (cfg.input_hw.0, cfg.input_hw.1);
    let params = EmaParams::init(c0, cfg.groups, cfg.seed)?;
    let base = median(&time_forward(
        &params,
        &randn(&[1, c0, h0, w0], cfg.seed.wrapping_add(0xD0B1)),
        cfg.warmup,
        cfg.reps,
    )?);
    let doubled = median(&time_forward(
        &params,
        &randn(&[1, c0, 2 * h0, 2 * w0], cfg.seed.wrapping_add(0xD0B2)),
        cfg.warmup,
        cfg.reps,
    )?);
    let ratio = doubled / base;
    let spatial_doubling = DoublingProbe {
        channels: c0,
        base_hw: [h0, w0],
        doubled_hw: [2 * h0, 2 * w0],
        median_micros_base: base,
        median_micros_doubled: doubled,
        ratio,
        slack: DOUBLING_SLACK,
        pass: ratio * DOUBLING_SLACK >= 1.0,
    };

    Ok(BenchReport { rows, spatial_doubling })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_is_invariant_to_sample_order() {
        let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
        let shuffled = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(median(&sorted), 3.0);
        assert_eq!(median(&shuffled), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[2.0, 4.0, 1.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn small_bench_produces_one_row_per_shape() {
        let cfg = BenchConfig {
            channels: vec![8, 16],
            groups: 4,
            input_hw: (6, 6),
            reps: 3,
            warmup: 1,
            seed: 11,
        };
        let report = run_bench(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!((report.rows[0].height, report.rows[0].width), (6, 6));
        assert_eq!((report.rows[1].height, report.rows[1].width), (3, 3));
        for row in &report.rows {
            assert!(row.median_micros > 0.0);
            assert!(row.min_micros <= row.median_micros);
            assert!(row.median_micros <= row.max_micros);
            assert!(row.macs > 0);
        }
        let probe = &report.spatial_doubling;
        assert_eq!(probe.doubled_hw, [12, 12]);
        assert!(probe.ratio.is_finite());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = BenchConfig::default();
        cfg.channels.clear();
        assert!(run_bench(&cfg).is_err());

        let cfg = BenchConfig { channels: vec![10], groups: 4, ..BenchConfig::default() };
        assert!(run_bench(&cfg).is_err());

        let cfg = BenchConfig { reps: 0, channels: vec![8], groups: 4, ..BenchConfig::default() };
        assert!(run_bench(&cfg).is_err());
    }
}
