//! Parameter and multiply-accumulate budgets for the supported backbones,
//! bare and with each attention module spliced into its block slots.
//!
//! The CIFAR ResNets are counted at 32x32 with 100 classes, MobileNetV2 at
//! 224x224 with 1000 classes. The per-stage breakdown at the end shows
//! where an attached module spends its budget.

use emattn::{attach_attention, build_backbone, AttentionKind};

fn main() -> emattn::Result<()> {
    println!(
        "{:<28} {:>12} {:>9} {:>14} {:>9}",
        "model", "params", "(M)", "macs", "(G)"
    );
    for (backbone, classes) in [
        ("resnet50-cifar", 100),
        ("resnet101-cifar", 100),
        ("mobilenetv2", 1000),
    ] {
        let base = build_backbone(backbone, classes)?;
        let hw = base.default_hw;
        let mut rows = vec![(base.name.clone(), base.complexity(hw)?)];
        for (kind, hyper) in [
            (AttentionKind::Ema, 32),
            (AttentionKind::Ca, 32),
            (AttentionKind::Se, 16),
        ] {
            let attached = attach_attention(&base, kind, hyper)?;
            rows.push((format!("{} ({}={})", attached.name, match kind {
                AttentionKind::Ema => "g",
                _ => "r",
            }, hyper), attached.complexity(hw)?));
        }
        for (name, c) in rows {
            println!(
                "{name:<28} {:>12} {:>9.2} {:>14} {:>9.3}",
                c.params,
                c.params as f64 / 1e6,
                c.macs,
                c.macs as f64 / 1e9
            );
        }
        println!();
    }

    let rn50_ema = attach_attention(&build_backbone("resnet50-cifar", 100)?, AttentionKind::Ema, 32)?;
    let complexity = rn50_ema.complexity((32, 32))?;
    println!("stage breakdown, {} at 32x32:", rn50_ema.name);
    println!("{:<10} {:>12} {:>14}", "stage", "params", "macs");
    for row in &complexity.stages {
        println!("{:<10} {:>12} {:>14}", row.stage, row.params, row.macs);
    }
    Ok(())
}
