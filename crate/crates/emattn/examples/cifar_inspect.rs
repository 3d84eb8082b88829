//! Inspect a CIFAR-100 binary file: record count, image dimensions, pixel
//! range, and the fine-label histogram of the leading records.
//!
//! Pass the path to a `cifar-100-binary` directory (or a `train.bin` /
//! `test.bin` file) as the first argument. Without one, the example writes
//! a small synthetic file in the same record layout and inspects that, so
//! it runs without any download.

use std::io::Write;
use std::path::PathBuf;

use emattn::{count_cifar100_records, load_cifar100, Split};

const RECORD_BYTES: usize = 3074;

fn synthetic_sample() -> emattn::Result<PathBuf> {
    let dir = std::env::temp_dir().join("emattn-cifar-sample");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("train.bin");
    let mut f = std::fs::File::create(&path)?;
    for i in 0..40usize {
        let mut rec = vec![0u8; RECORD_BYTES];
        rec[0] = (i % 20) as u8;
        rec[1] = (i % 100) as u8;
        for (j, b) in rec[2..].iter_mut().enumerate() {
            *b = ((i * 31 + j) % 256) as u8;
        }
        f.write_all(&rec)?;
    }
    Ok(path)
}

fn main() -> emattn::Result<()> {
    let (path, synthetic) = match std::env::args().nth(1) {
        Some(p) => (PathBuf::from(p), false),
        None => (synthetic_sample()?, true),
    };
    if synthetic {
        println!("no path given; inspecting a generated 40-record sample at {}", path.display());
        println!("point this example at a real cifar-100-binary directory to inspect it\n");
    }

    let data = load_cifar100(&path, Split::Train, Some(2000))?;
    let (c, h, w) = data.image_dims();
    println!("loaded {} records of {c}x{h}x{w}", data.len());
    if path.is_file() {
        println!("file holds {} records in total", count_cifar100_records(&path)?);
    }

    let (lo, hi) = data
        .images
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("pixel range after scaling: [{lo:.4}, {hi:.4}]");

    let mut histogram = vec![0usize; data.classes];
    for &label in &data.labels {
        histogram[label] += 1;
    }
    let mut ranked: Vec<(usize, usize)> =
        histogram.iter().copied().enumerate().filter(|&(_, n)| n > 0).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    println!("{} distinct fine labels present; most frequent:", ranked.len());
    for (label, count) in ranked.iter().take(5) {
        println!("  label {label:>3}: {count} records");
    }
    Ok(())
}
