//! A minimal tour of the tape: record a small convolutional computation,
//! pull gradients back through it, and spot-check one partial derivative
//! against a central finite difference.

use emattn::gradcheck::relative_error;
use emattn::sample::randn;
use emattn::{Tape, Tensor};

fn loss_value(x: &Tensor, w: &Tensor, b: &Tensor) -> emattn::Result<f64> {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let wid = tape.leaf(w.clone());
    let bid = tape.leaf(b.clone());
    let y = tape.conv2d(xid, wid, bid, 1, 1)?;
    let s = tape.sigmoid(y)?;
    let sq = tape.mul(s, s)?;
    let loss = tape.sum_all(sq)?;
    Ok(tape.value(loss).item())
}

fn main() -> emattn::Result<()> {
    let x0 = randn(&[2, 3, 5, 5], 11);
    let w0 = randn(&[4, 3, 3, 3], 12);
    let b0 = Tensor::zeros(&[4]);

    // loss = sum(sigmoid(conv(x, w) + b)^2)
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let w = tape.leaf(w0.clone());
    let b = tape.leaf(b0.clone());
    let y = tape.conv2d(x, w, b, 1, 1)?;
    let s = tape.sigmoid(y)?;
    let sq = tape.mul(s, s)?;
    let loss = tape.sum_all(sq)?;

    println!("tape holds {} nodes, loss = {:.6}", tape.len(), tape.value(loss).item());

    // Replay every node from its recorded inputs; any mismatch with the
    // stored values would mean a forward rule is not a pure function.
    tape.verify_replay()?;
    println!("replay check passed: all stored values reproduce bit-exactly");

    let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
    for (name, id) in [("x", x), ("w", w), ("b", b)] {
        let g = grads.get(id).expect("leaf touched by the loss");
        let norm: f64 = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("d loss / d {name:<2} dims {:?}  l2 norm {norm:.6}", g.shape().dims());
    }

    // Central finite difference on one weight coordinate.
    let step = 1e-5;
    let probe = 17;
    let mut wp = w0.clone();
    wp.data_mut()[probe] += step;
    let mut wm = w0.clone();
    wm.data_mut()[probe] -= step;
    let numeric = (loss_value(&x0, &wp, &b0)? - loss_value(&x0, &wm, &b0)?) / (2.0 * step);
    let analytic = grads.get(w).unwrap().data()[probe];
    println!(
        "spot check dw[{probe}]: analytic {analytic:.9}, finite difference {numeric:.9}, rel err {:.2e}",
        relative_error(analytic, numeric)
    );
    Ok(())
}
