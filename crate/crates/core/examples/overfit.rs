//! Overfits the full network on eight synthetic 96×96 images and reports training-set metrics.
//!
//! `cargo run --release -p etnet --example overfit -- [iterations]`

use std::time::Instant;

use etnet::config::RunConfig;
use etnet::data::generate_synthetic;
use etnet::network::Variant;
use etnet::training::{evaluate, fit_samples};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iterations: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let data = generate_synthetic(8, 96, 3, 0)?;

    let mut cfg = RunConfig {
        seed: 0,
        variant: Some(Variant::Full),
        ..RunConfig::default()
    };
    cfg.augment.enabled = false;
    cfg.schedule.batch_size = 8;
    cfg.schedule.epochs = iterations;

    let start = Instant::now();
    let out = fit_samples(&cfg, &data, None, None)?;
    let elapsed = start.elapsed();
    let ev = evaluate(&out.state.net, &data, false, &out.config_hash)?;
    let first = out.history.first().map_or(f64::NAN, |r| r.total);
    let last = out.history.last().map_or(f64::NAN, |r| r.total);
    println!("iterations      {}", out.history.len());
    println!("loss            {first:.4} -> {last:.4}");
    println!("train mIoU      {:.4}", ev.report.miou);
    println!("train accuracy  {:.4}", ev.report.accuracy);
    println!("train edge Dice {:.4}", ev.report.edge_dice.unwrap_or(f64::NAN));
    println!("elapsed         {:.1}s", elapsed.as_secs_f64());
    Ok(())
}
