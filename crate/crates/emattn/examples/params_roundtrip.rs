//! Save attention parameters to the binary container format and load them
//! back. The container stores a magic tag, the module kind, its dimensions,
//! and raw little-endian f64 buffers; a roundtrip is bit-exact, and any
//! header damage is rejected rather than misread.

use emattn::attention::EmaVariant;
use emattn::sample::randn;
use emattn::{load_params, save_params, AttentionParams, EmaParams};

fn main() -> emattn::Result<()> {
    let dir = std::env::temp_dir().join("emattn-roundtrip-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("ema_32g8.bin");

    let ema = EmaParams::init(32, 8, 99)?;
    save_params(&AttentionParams::Ema(ema.clone()), &path)?;
    let bytes = std::fs::metadata(&path)?.len();
    println!(
        "saved ema(32 channels, 8 groups): {} parameters, {bytes} bytes at {}",
        ema.buffers().iter().map(|(_, t)| t.data().len()).sum::<usize>(),
        path.display()
    );

    let loaded = match load_params(&path)? {
        AttentionParams::Ema(p) => p,
        other => panic!("container kind changed on disk: {:?}", other.kind()),
    };
    let bit_exact = ema
        .buffers()
        .iter()
        .zip(loaded.buffers())
        .all(|((_, a), (_, b))| {
            a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    println!("loaded copy is bit-exact: {bit_exact}");

    let x = randn(&[1, 32, 6, 6], 5);
    let y0 = ema.forward(&x, EmaVariant::Full)?;
    let y1 = loaded.forward(&x, EmaVariant::Full)?;
    let same = y0.data().iter().zip(y1.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("forward passes agree bit-for-bit: {same}");

    // Damage the magic tag; the loader must refuse the file.
    let mut raw = std::fs::read(&path)?;
    raw[0] ^= 0xFF;
    let bad = dir.join("damaged.bin");
    std::fs::write(&bad, raw)?;
    match load_params(&bad) {
        Err(e) => println!("damaged header rejected: {e}"),
        Ok(_) => panic!("damaged file must not load"),
    }
    Ok(())
}
