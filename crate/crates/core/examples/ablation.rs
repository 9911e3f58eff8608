//! Trains the four ablation variants on a shared synthetic split and prints a comparison table.
//!
//! `cargo run --release -p etnet --example ablation -- [epochs]`

use std::time::Instant;

use etnet::config::RunConfig;
use etnet::data::generate_synthetic;
use etnet::training::{ablate, ablation_table};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(40);
    let seed: u64 = std::env::args().nth(2).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let train = generate_synthetic(32, 96, 3, 100)?;
    let test = generate_synthetic(16, 96, 3, 200)?;

    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.augment.crop_size = 96;
    cfg.augment.scale_range = [0.75, 1.25];
    cfg.schedule.batch_size = 8;
    cfg.schedule.epochs = epochs;

    let start = Instant::now();
    let rows = ablate(&cfg, &train, &test, None)?;
    print!("{}", ablation_table(&rows));
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
