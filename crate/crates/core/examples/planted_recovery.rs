//! Trains a Matryoshka transcoder on the standard planted world and reports
//! how many planted directions it recovers.
//!
//! ```text
//! cargo run --release -p featscope --example planted_recovery -- [seed] [epochs] [lr] [batch]
//! ```

use std::time::Instant;

use featscope::dict::{DictKind, DictSpec};
use featscope::synth::{gen_planted, match_features, PlantedWorld, MATCH_COSINE};
use featscope::trainer::{train_dict, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let seed: u64 = arg(0).map_or(Ok(0), str::parse)?;
    let epochs: usize = arg(1).map_or(Ok(50), str::parse)?;
    let lr: f64 = arg(2).map_or(Ok(1e-3), str::parse)?;
    let batch_size: usize = arg(3).map_or(Ok(256), str::parse)?;

    let world = PlantedWorld::standard(seed);
    let data = gen_planted(&world, 20_000)?;
    let spec = DictSpec::new(DictKind::MatryoshkaTranscoder, 96, 48, vec![32, 64], vec![4, 8])?;
    let cfg = TrainConfig { lr, epochs, seed, batch_size, ..Default::default() };

    let start = Instant::now();
    let out = train_dict(&data.inputs, Some(&data.targets), spec, &cfg)?;
    let m = match_features(&out.model, &world, MATCH_COSINE)?;

    println!("seed {seed}, {epochs} epochs, lr {lr}, batch {batch_size}");
    println!("matched fraction {:.3} at cosine >= {MATCH_COSINE}", m.fraction);
    println!("final loss per level {:?}", out.report.epoch_level_loss.last().unwrap());
    println!("dead latents {:?}", out.report.dead_features);
    let mut cosines = m.best_cosine.clone();
    cosines.sort_by(f64::total_cmp);
    println!("best cosines {:.2?}", cosines);
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
