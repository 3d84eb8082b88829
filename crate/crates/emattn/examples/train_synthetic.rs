//! Train the toy convolutional net on the synthetic quadrant task with the
//! grouped multi-scale attention module inside, then report variant results
//! under the identical schedule.
//!
//! The quadrant task puts one Gaussian blob in a random quadrant of a 12x12
//! image; the label is the quadrant. 500 SGD steps take roughly a minute
//! per variant at this size.

use emattn::attention::EmaVariant;
use emattn::{synth_quadrant, train_toy, AttentionConfig, ToyNet, TrainConfig};

fn main() -> emattn::Result<()> {
    let train = synth_quadrant(2000, 12, 12, 1)?;
    let val = synth_quadrant(500, 12, 12, 2)?;
    println!(
        "quadrant task: {} train / {} val images of {:?}\n",
        train.len(),
        val.len(),
        train.image_dims()
    );

    let cfg = TrainConfig::default();
    for (name, attention) in [
        ("ema g=8 full", AttentionConfig::Ema { groups: 8, variant: EmaVariant::Full }),
        ("ema g=16 full", AttentionConfig::Ema { groups: 16, variant: EmaVariant::Full }),
        ("ema g=8 no_cross", AttentionConfig::Ema { groups: 8, variant: EmaVariant::NoCrossSpatial }),
        ("no attention", AttentionConfig::None),
    ] {
        let mut net = ToyNet::build(attention, 4, 42)?;
        println!(
            "{name}: {} params, {} steps at lr {}, batch {}",
            net.param_count(),
            cfg.steps,
            cfg.lr,
            cfg.batch
        );
        let report = train_toy(&mut net, &train, &val, &cfg)?;
        for epoch in &report.epochs {
            println!(
                "  epoch {:>2}: mean loss {:.4}  train acc {:.3}  val acc {:.3}",
                epoch.epoch, epoch.mean_loss, epoch.train_accuracy, epoch.val_accuracy
            );
        }
        println!(
            "  initial loss {:.4} -> final epoch mean {:.4}; val acc {:.3} -> {:.3}; checksum {}\n",
            report.initial_loss.unwrap(),
            report.final_epoch_mean_loss.unwrap(),
            report.initial_val_accuracy,
            report.final_val_accuracy,
            report.param_checksum
        );
    }
    Ok(())
}
