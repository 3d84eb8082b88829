//! Check every module's tape gradients against central finite differences.
//!
//! Each run perturbs all parameters and the input coordinate by coordinate,
//! so the comparison covers the complete backward path of each module.

use emattn::attention::EmaVariant;
use emattn::{grad_check_attention, CheckTarget};

fn main() -> emattn::Result<()> {
    let targets = [
        ("ema g=4 full", CheckTarget::Ema { groups: 4, variant: EmaVariant::Full }),
        ("ema g=4 no_cross", CheckTarget::Ema { groups: 4, variant: EmaVariant::NoCrossSpatial }),
        ("ca r=4", CheckTarget::Ca { reduction: 4 }),
        ("se r=4", CheckTarget::Se { reduction: 4 }),
    ];
    println!(
        "{:<18} {:>12} {:>14} {:>6}",
        "module", "comparisons", "max rel err", "pass"
    );
    for (name, target) in targets {
        let report = grad_check_attention(target, 2, 8, 5, 7, 42, 1e-5, 1e-4)?;
        println!(
            "{name:<18} {:>12} {:>14.3e} {:>6}",
            report.comparisons, report.max_rel_error, report.pass
        );
        for entry in &report.entries {
            println!(
                "    {:<14} {:>12} {:>14.3e}",
                entry.name, entry.elements, entry.max_rel_error
            );
        }
    }
    Ok(())
}
