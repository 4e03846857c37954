//! Every fine-tuning method on the same frozen base: trainable parameter
//! counts and accuracy after a short round of centralised SGD.
//!
//!     cargo run --release --example peft_methods

use std::sync::Arc;

use dpfl::data::{generate_synthetic, SyntheticSpec};
use dpfl::model::{local_sgd, pretrain_base, ModelSnapshot, SgdParams};
use dpfl::numerics::RandomSource;
use dpfl::peft::PeftMethod;

fn main() -> dpfl::Result<()> {
    let spec = SyntheticSpec {
        classes: 6,
        dim: 12,
        per_class: 200,
        spread: 1.0,
        separation: 1.0,
    };
    let pretrain = generate_synthetic(&spec, &mut RandomSource::new(1, 0))?;
    // fine-tune on a task with the labels rotated by one
    let rotated: Vec<usize> = (0..spec.classes).map(|c| (c + 1) % spec.classes).collect();
    let task = generate_synthetic(&spec, &mut RandomSource::new(1, 1))?.relabel(&rotated)?;
    let (train, test) = task.split(0.25, &mut RandomSource::new(1, 2));

    let pre = SgdParams { epochs: 20, batch_size: 32, learning_rate: 0.05 };
    let base = Arc::new(pretrain_base(&pretrain, &[24, 24], &pre, &RandomSource::new(1, 3))?);
    let tune = SgdParams { epochs: 10, batch_size: 16, learning_rate: 0.05 };

    let methods = [
        PeftMethod::Full,
        PeftMethod::BitFit,
        PeftMethod::Adapter { rank: 4 },
        PeftMethod::Compacter { n: 2, rank: 2 },
        PeftMethod::Lora { rank: 4 },
        PeftMethod::LoHa { rank: 4 },
        PeftMethod::AdaLora { rank: 8, target_rank: 4, prune_interval: 5 },
        PeftMethod::DyLora { r_min: 1, r_max: 8 },
    ];
    println!("{:<10} {:>7} {:>9} {:>9}", "method", "params", "before", "after");
    for (i, method) in methods.into_iter().enumerate() {
        let peft = base.init_peft(method, &mut RandomSource::new(2, i as u64))?;
        let mut snap = ModelSnapshot::new(base.clone(), peft);
        let rank = method.rank_range().map(|(_, hi)| hi);
        let before = snap.evaluate(&test, rank)?;
        let update = local_sgd(&snap, &train, &tune, rank, &RandomSource::new(3, i as u64))?;
        snap.peft.apply_update(1.0, &update.delta)?;
        let after = snap.evaluate(&test, rank)?;
        println!("{:<10} {:>7} {before:>9.3} {after:>9.3}", method.name(), snap.peft.param_count());
    }
    Ok(())
}
