//! Straight-loop reference implementations of the three attention modules.
//!
//! Every value here comes from scalar loops over raw f64 slices: no tensor
//! ops, no tape, no shared math helpers. Agreement with the library forward
//! passes is therefore evidence about the implementations, not an identity.

// Each integration test binary compiles this module separately and uses its
// own subset of the oracles.
#![allow(dead_code)]

use emattn::attention::EmaVariant;
use emattn::{CaParams, EmaParams, SeParams, Tensor};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn buffer<'a>(pairs: &[(&'static str, &'a Tensor)], name: &str) -> &'a [f64] {
    pairs
        .iter()
        .find(|(n, _)| *n == name)
        .unwrap_or_else(|| panic!("module has no buffer named {name}"))
        .1
        .data()
}

/// Grouped multi-scale attention, full or no-cross-spatial variant, as one
/// batch/group/pixel loop nest. Returns the flattened (B, C, H, W) output.
pub fn ema_oracle(params: &EmaParams, x: &Tensor, variant: EmaVariant) -> Vec<f64> {
    let dims = x.shape().dims();
    let (b, ch, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let g = params.groups();
    let c = ch / g;
    let xd = x.data();
    let bufs = params.buffers();
    let w1 = buffer(&bufs, "conv1_w"); // (c, c, 1, 1)
    let b1 = buffer(&bufs, "conv1_b");
    let w3 = buffer(&bufs, "conv3_w"); // (c, c, 3, 3)
    let b3 = buffer(&bufs, "conv3_b");

    let mut out = vec![0.0; b * ch * h * w];
    for bi in 0..b {
        for gi in 0..g {
            let at = |ci: usize, i: usize, j: usize| xd[((bi * ch + gi * c + ci) * h + i) * w + j];

            // Directional profiles: H row means first, then W column means.
            let mut prof = vec![0.0; c * (h + w)];
            for ci in 0..c {
                for i in 0..h {
                    let mut s = 0.0;
                    for j in 0..w {
                        s += at(ci, i, j);
                    }
                    prof[ci * (h + w) + i] = s / w as f64;
                }
                for j in 0..w {
                    let mut s = 0.0;
                    for i in 0..h {
                        s += at(ci, i, j);
                    }
                    prof[ci * (h + w) + h + j] = s / h as f64;
                }
            }

            // Shared biased 1x1 conv across the stacked profiles.
            let mut q = vec![0.0; c * (h + w)];
            for co in 0..c {
                for k in 0..h + w {
                    let mut s = b1[co];
                    for ci in 0..c {
                        s += w1[co * c + ci] * prof[ci * (h + w) + k];
                    }
                    q[co * (h + w) + k] = s;
                }
            }

            // Branch 1: the input gated by a sigmoid per direction.
            let mut x1 = vec![0.0; c * h * w];
            for co in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        x1[(co * h + i) * w + j] = at(co, i, j)
                            * sigmoid(q[co * (h + w) + i])
                            * sigmoid(q[co * (h + w) + h + j]);
                    }
                }
            }

            // Branch 2: biased stride-1 3x3 conv with zero padding.
            let mut x2 = vec![0.0; c * h * w];
            for co in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let mut s = b3[co];
                        for ci in 0..c {
                            for di in 0..3usize {
                                for dj in 0..3usize {
                                    let (ii, jj) = (i + di, j + dj);
                                    if (1..=h).contains(&ii) && (1..=w).contains(&jj) {
                                        s += w3[((co * c + ci) * 3 + di) * 3 + dj]
                                            * at(ci, ii - 1, jj - 1);
                                    }
                                }
                            }
                        }
                        x2[(co * h + i) * w + j] = s;
                    }
                }
            }

            let write = |out: &mut [f64], co: usize, i: usize, j: usize, v: f64| {
                out[((bi * ch + gi * c + co) * h + i) * w + j] = v;
            };
            match variant {
                EmaVariant::NoCrossSpatial => {
                    for co in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                let k = (co * h + i) * w + j;
                                write(&mut out, co, i, j, 0.5 * (x1[k] + x2[k]));
                            }
                        }
                    }
                }
                EmaVariant::Full => {
                    // Each branch's mean channel vector becomes a softmax
                    // weighting of the other branch's spatial map.
                    let mut a1 = vec![0.0; c];
                    let mut a2 = vec![0.0; c];
                    for ci in 0..c {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for k in 0..h * w {
                            s1 += x1[ci * h * w + k];
                            s2 += x2[ci * h * w + k];
                        }
                        a1[ci] = s1 / (h * w) as f64;
                        a2[ci] = s2 / (h * w) as f64;
                    }
                    softmax_in_place(&mut a1);
                    softmax_in_place(&mut a2);
                    for i in 0..h {
                        for j in 0..w {
                            let k = i * w + j;
                            let mut y = 0.0;
                            for ci in 0..c {
                                y += a1[ci] * x2[ci * h * w + k] + a2[ci] * x1[ci * h * w + k];
                            }
                            let gate = sigmoid(y);
                            for co in 0..c {
                                write(&mut out, co, i, j, at(co, i, j) * gate);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Coordinate attention as scalar loops: pooled profiles, reduced trunk with
/// ReLU, two routing heads, dual sigmoid gates.
pub fn ca_oracle(params: &CaParams, x: &Tensor) -> Vec<f64> {
    let dims = x.shape().dims();
    let (b, ch, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let m = ch / params.reduction();
    let xd = x.data();
    let bufs = params.buffers();
    let rw = buffer(&bufs, "reduce_w"); // (m, C, 1, 1)
    let rb = buffer(&bufs, "reduce_b");
    let hw_w = buffer(&bufs, "route_h_w"); // (C, m, 1, 1)
    let hw_b = buffer(&bufs, "route_h_b");
    let ww_w = buffer(&bufs, "route_w_w");
    let ww_b = buffer(&bufs, "route_w_b");

    let mut out = vec![0.0; b * ch * h * w];
    for bi in 0..b {
        let at = |ci: usize, i: usize, j: usize| xd[((bi * ch + ci) * h + i) * w + j];

        let mut prof = vec![0.0; ch * (h + w)];
        for ci in 0..ch {
            for i in 0..h {
                let mut s = 0.0;
                for j in 0..w {
                    s += at(ci, i, j);
                }
                prof[ci * (h + w) + i] = s / w as f64;
            }
            for j in 0..w {
                let mut s = 0.0;
                for i in 0..h {
                    s += at(ci, i, j);
                }
                prof[ci * (h + w) + h + j] = s / h as f64;
            }
        }

        // Reduction trunk with ReLU.
        let mut trunk = vec![0.0; m * (h + w)];
        for mo in 0..m {
            for k in 0..h + w {
                let mut s = rb[mo];
                for ci in 0..ch {
                    s += rw[mo * ch + ci] * prof[ci * (h + w) + k];
                }
                trunk[mo * (h + w) + k] = s.max(0.0);
            }
        }

        // Routing heads back to full width, one per direction.
        let mut gh = vec![0.0; ch * h];
        let mut gw = vec![0.0; ch * w];
        for co in 0..ch {
            for i in 0..h {
                let mut s = hw_b[co];
                for mo in 0..m {
                    s += hw_w[co * m + mo] * trunk[mo * (h + w) + i];
                }
                gh[co * h + i] = sigmoid(s);
            }
            for j in 0..w {
                let mut s = ww_b[co];
                for mo in 0..m {
                    s += ww_w[co * m + mo] * trunk[mo * (h + w) + h + j];
                }
                gw[co * w + j] = sigmoid(s);
            }
        }

        for co in 0..ch {
            for i in 0..h {
                for j in 0..w {
                    out[((bi * ch + co) * h + i) * w + j] =
                        at(co, i, j) * gh[co * h + i] * gw[co * w + j];
                }
            }
        }
    }
    out
}

/// Squeeze-excitation as scalar loops: global average, bottleneck with ReLU,
/// sigmoid gate per channel.
pub fn se_oracle(params: &SeParams, x: &Tensor) -> Vec<f64> {
    let dims = x.shape().dims();
    let (b, ch, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let m = ch / params.reduction();
    let xd = x.data();
    let bufs = params.buffers();
    let sw = buffer(&bufs, "squeeze_w"); // (m, C)
    let sb = buffer(&bufs, "squeeze_b");
    let ew = buffer(&bufs, "excite_w"); // (C, m)
    let eb = buffer(&bufs, "excite_b");

    let mut out = vec![0.0; b * ch * h * w];
    for bi in 0..b {
        let at = |ci: usize, i: usize, j: usize| xd[((bi * ch + ci) * h + i) * w + j];

        let mut pooled = vec![0.0; ch];
        for (ci, p) in pooled.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    s += at(ci, i, j);
                }
            }
            *p = s / (h * w) as f64;
        }

        let mut mid = vec![0.0; m];
        for (mo, v) in mid.iter_mut().enumerate() {
            let mut s = sb[mo];
            for ci in 0..ch {
                s += sw[mo * ch + ci] * pooled[ci];
            }
            *v = s.max(0.0);
        }

        let mut gate = vec![0.0; ch];
        for (co, v) in gate.iter_mut().enumerate() {
            let mut s = eb[co];
            for (mo, mv) in mid.iter().enumerate() {
                s += ew[co * m + mo] * mv;
            }
            *v = sigmoid(s);
        }

        for co in 0..ch {
            for i in 0..h {
                for j in 0..w {
                    out[((bi * ch + co) * h + i) * w + j] = at(co, i, j) * gate[co];
                }
            }
        }
    }
    out
}

pub fn max_abs_deviation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "deviation over mismatched lengths");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
