use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, train_step, write_predictions, Checkpoint, TrainState};
use crate::config::RunConfig;
use crate::data::{augment, load_dataset_with_kernel, Sample};
use crate::metrics::MetricReport;
use crate::network::build_network;
use crate::{Error, Result};

/// One line of `history.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: u64,
    pub lr: f64,
    pub total: f64,
    pub seg: f64,
    pub edge: Option<f64>,
    pub eval_miou: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub state: TrainState,
    pub history: Vec<HistoryRow>,
    /// Iteration count and validation mIoU of the best checkpoint.
    pub best: Option<(u64, f64)>,
    pub final_report: Option<MetricReport>,
    pub config_hash: String,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("iteration,lr,total_loss,seg_loss,edge_loss,eval_miou,eval_accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.lr,
            r.total,
            r.seg,
            opt(r.edge),
            opt(r.eval_miou),
            opt(r.eval_accuracy)
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Cycles through the training set in a fresh seeded permutation every epoch.
struct BatchOrder {
    rng: ChaCha8Rng,
    n: usize,
    queue: Vec<usize>,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464c_4500),
            n,
            queue: Vec::new(),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.queue.is_empty() {
                self.queue = (0..self.n).collect();
                self.queue.shuffle(&mut self.rng);
                self.queue.reverse();
            }
            out.push(self.queue.pop().expect("queue was refilled"));
        }
        out
    }
}

/// Loads the configured datasets and trains into `cfg.output_dir`.
pub fn fit(cfg: &RunConfig) -> Result<FitOutcome> {
    let classes = cfg.resolved_network().num_classes;
    let train_dir = cfg
        .data
        .train_dir
        .as_deref()
        .ok_or_else(|| Error::Config("data.train_dir is not set".into()))?;
    let train = load_dataset_with_kernel(train_dir, classes, cfg.data.edge_kernel)?;
    if train.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no training images found under {}",
            train_dir.join("images").display()
        )));
    }
    let val = match &cfg.data.val_dir {
        Some(dir) => Some(load_dataset_with_kernel(dir, classes, cfg.data.edge_kernel)?),
        None => None,
    };
    fit_samples(cfg, &train, val.as_deref(), Some(&cfg.output_dir))
}

/// Trains on in-memory samples. With `run_dir`, writes the config snapshot, `history.csv`,
/// `checkpoints/{best,last}`, the final `report.json` and optional predictions.
pub fn fit_samples(
    cfg: &RunConfig,
    train: &[Sample],
    val: Option<&[Sample]>,
    run_dir: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let sched = super::ScheduleConfig {
        num_images: train.len(),
        ..cfg.schedule.clone()
    };
    let aug = cfg.resolved_augment();
    let config_hash = cfg.hash()?;
    let net = build_network(&cfg.resolved_network(), cfg.seed)?;
    let mut state = TrainState::new(net);

    if let Some(dir) = run_dir {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("config.snapshot"), &cfg.to_toml()?)?;
    }
    let checkpoint = |state: &TrainState| Checkpoint {
        state: state.clone(),
        seed: cfg.seed,
        config_hash: config_hash.clone(),
    };

    let iterations = sched.iterations();
    let mut order = BatchOrder::new(train.len(), cfg.seed);
    let mut history = Vec::with_capacity(iterations as usize);
    let mut best: Option<(u64, f64)> = None;
    let mut final_eval = None;
    for it in 0..iterations {
        let batch: Vec<Sample> = order
            .next_batch(sched.batch_size)
            .into_iter()
            .map(|i| {
                if aug.enabled {
                    augment(&train[i], &aug, it)
                } else {
                    Ok(train[i].clone())
                }
            })
            .collect::<Result<_>>()?;
        let rec = train_step(&mut state, &batch, &cfg.loss, &sched, &cfg.optimizer)?;
        if it % 10 == 0 || it + 1 == iterations {
            log::info!(
                "iter {}/{} lr {:.6} loss {:.4} (seg {:.4}, edge {})",
                it + 1,
                iterations,
                rec.lr,
                rec.total,
                rec.seg,
                rec.edge.map_or("-".to_string(), |e| format!("{e:.4}"))
            );
        }
        let mut row = HistoryRow {
            iteration: rec.iteration,
            lr: rec.lr,
            total: rec.total,
            seg: rec.seg,
            edge: rec.edge,
            eval_miou: None,
            eval_accuracy: None,
        };
        let last = it + 1 == iterations;
        let periodic = cfg.eval.every > 0 && (it + 1) % cfg.eval.every == 0;
        if let (Some(val), true) = (val, last || periodic) {
            let ev = evaluate(&state.net, val, cfg.eval.per_image, &config_hash)?;
            row.eval_miou = Some(ev.report.miou);
            row.eval_accuracy = Some(ev.report.accuracy);
            log::info!("iter {} validation mIoU {:.4} acc {:.4}", it + 1, ev.report.miou, ev.report.accuracy);
            if best.is_none_or(|(_, m)| ev.report.miou > m) {
                best = Some((state.iteration, ev.report.miou));
                if let Some(dir) = run_dir {
                    checkpoint(&state).save(&dir.join("checkpoints/best"))?;
                }
            }
            if last {
                final_eval = Some(ev);
            }
        }
        history.push(row);
    }

    if let Some(dir) = run_dir {
        let last = checkpoint(&state);
        last.save(&dir.join("checkpoints/last"))?;
        if best.is_none() {
            last.save(&dir.join("checkpoints/best"))?;
        }
        write_file(&dir.join("history.csv"), &history_csv(&history))?;
        if let Some(ev) = &final_eval {
            write_file(&dir.join("report.json"), &ev.report.to_json()?)?;
            if cfg.eval.write_predictions {
                write_predictions(&dir.join("predictions"), val.unwrap_or_default(), &ev.predictions)?;
            }
        }
    }
    Ok(FitOutcome {
        state,
        history,
        best,
        final_report: final_eval.map(|e| e.report),
        config_hash,
    })
}
