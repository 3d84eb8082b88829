//! Forward passes through the three attention modules on the same input.
//!
//! Shows that each module preserves the input shape, contracts magnitudes
//! (the gates are sigmoids in (0, 1)), and collapses to a closed-form map
//! when its parameters are all zero.

use emattn::attention::EmaVariant;
use emattn::sample::randn;
use emattn::{CaParams, EmaParams, SeParams, Tensor};

fn stats(name: &str, x: &Tensor, y: &Tensor) {
    let rms = |t: &Tensor| {
        (t.data().iter().map(|v| v * v).sum::<f64>() / t.data().len() as f64).sqrt()
    };
    // Gated modules scale each element by a sigmoid product, so they can
    // never grow any coordinate; the no-cross-spatial ablation averages in
    // a raw convolution branch and gives that bound up.
    let contractive = x
        .data()
        .iter()
        .zip(y.data())
        .all(|(xi, yi)| yi.abs() <= xi.abs() + 1e-12);
    println!(
        "{name:<22} out dims {:?}  rms in {:.4} -> out {:.4}  elementwise |out| <= |in|: {contractive}",
        y.shape().dims(),
        rms(x),
        rms(y)
    );
}

fn main() -> emattn::Result<()> {
    let x = randn(&[2, 16, 8, 8], 7);
    println!("input dims {:?}\n", x.shape().dims());

    let ema = EmaParams::init(16, 4, 1)?;
    stats("ema g=4 full", &x, &ema.forward(&x, EmaVariant::Full)?);
    stats("ema g=4 no_cross", &x, &ema.forward(&x, EmaVariant::NoCrossSpatial)?);

    let ca = CaParams::init(16, 4, 2)?;
    stats("ca r=4", &x, &ca.forward(&x)?);

    let se = SeParams::init(16, 4, 3)?;
    stats("se r=4", &x, &se.forward(&x)?);

    // With all parameters zero the modules reduce to fixed maps: the EMA
    // gate becomes sigmoid(1) on constant input (both fusion weights are
    // uniform softmax rows over a constant pooled map), CA multiplies by
    // sigmoid(0)^2 = 0.25, SE by sigmoid(0) = 0.5.
    let c4 = Tensor::full(&[1, 16, 4, 4], 4.0);
    let ema0 = EmaParams::zeros(16, 4)?;
    let y = ema0.forward(&c4, EmaVariant::Full)?;
    println!(
        "\nzero-param ema on constant 4: every output = {:.12} (4*sigmoid(1) = {:.12})",
        y.data()[0],
        4.0 / (1.0 + (-1.0f64).exp())
    );
    let ca0 = CaParams::zeros(16, 4)?;
    let y = ca0.forward(&c4)?;
    println!("zero-param ca  on constant 4: every output = {:.12} (0.25 * 4)", y.data()[0]);
    let se0 = SeParams::zeros(16, 4)?;
    let y = se0.forward(&c4)?;
    println!("zero-param se  on constant 4: every output = {:.12} (0.5 * 4)", y.data()[0]);
    Ok(())
}
