//! Trains into a run directory, reloads the last checkpoint, evaluates it and segments one image.
//!
//! `cargo run --release -p etnet --example checkpoint_eval -- [run_dir]`

use std::path::PathBuf;

use etnet::config::RunConfig;
use etnet::data::{generate_synthetic, write_image, write_mask};
use etnet::training::{evaluate, fit_samples, overlay, predict_image, Checkpoint};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "runs/checkpoint_eval".into()).into();
    let train = generate_synthetic(8, 64, 3, 1)?;
    let val = generate_synthetic(4, 64, 3, 2)?;

    let mut cfg = RunConfig::from_toml_str(
        "seed = 1\n[augment]\ncrop_size = 64\n[schedule]\nepochs = 10\nbatch_size = 4\n[eval]\nevery = 5\nwrite_predictions = true\n",
        &[],
    )?;
    cfg.output_dir = dir.clone();
    let out = fit_samples(&cfg, &train, Some(&val), Some(&dir))?;
    println!("best checkpoint: {:?}", out.best);

    let ck = Checkpoint::load(&dir.join("checkpoints/last"))?;
    let ev = evaluate(&ck.state.net, &val, false, &ck.config_hash)?;
    assert_eq!(Some(&ev.report), out.final_report.as_ref());
    println!("reloaded checkpoint at iteration {}: mIoU {:.4}", ck.state.iteration, ev.report.miou);

    let (mask, edge) = predict_image(&ck.state.net, &val[0].image)?;
    write_mask(&dir.join("single_mask.png"), &mask)?;
    write_image(&dir.join("single_overlay.png"), &overlay(&val[0].image, &mask, edge.as_ref()))?;
    println!("run directory: {}", dir.display());
    Ok(())
}
