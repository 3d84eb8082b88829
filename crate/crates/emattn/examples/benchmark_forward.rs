//! Time the grouped multi-scale attention forward pass over the four stage
//! shapes of a 32x32 classification trunk: channels double while the
//! spatial extent halves, so the per-call cost stays in one ballpark.

use emattn::{run_bench, BenchConfig};

fn main() -> emattn::Result<()> {
    let cfg = BenchConfig { reps: 10, ..BenchConfig::default() };
    let report = run_bench(&cfg)?;
    println!(
        "{:>8} {:>6} {:>7} {:>12} {:>14}",
        "channels", "hxw", "groups", "median (us)", "macs"
    );
    for row in &report.rows {
        println!(
            "{:>8} {:>6} {:>7} {:>12.1} {:>14}",
            row.channels,
            format!("{}x{}", row.height, row.width),
            row.groups,
            row.median_micros,
            row.macs
        );
    }
    let p = &report.spatial_doubling;
    println!(
        "\nspatial doubling at c={}: {}x{} -> {}x{} multiplies median cost by {:.2} (pass within slack {}: {})",
        p.channels, p.base_hw[0], p.base_hw[1], p.doubled_hw[0], p.doubled_hw[1], p.ratio, p.slack, p.pass
    );
    Ok(())
}
