//! Confusion-matrix metrics on hand-written label maps, pooled and per image.
//!
//! `cargo run -p etnet --example metrics`

use etnet::data::LabelMap;
use etnet::metrics::{ConfusionMatrix, MetricReport};

fn main() -> anyhow::Result<()> {
    let pred = LabelMap::new(2, 2, vec![0, 1, 1, 1])?;
    let gt = LabelMap::new(2, 2, vec![0, 0, 1, 1])?;
    let a = ConfusionMatrix::new(2).accumulate(&pred, &gt)?;
    println!("2x2 example: IoU {:?} {:?}, mIoU {}, accuracy {}", a.iou(0), a.iou(1), a.miou()?, a.accuracy()?);

    let pred = LabelMap::new(2, 3, vec![1, 1, 1, 0, 0, 0])?;
    let gt = LabelMap::new(2, 3, vec![1, 1, 0, 0, 0, 0])?;
    let b = ConfusionMatrix::new(2).accumulate(&pred, &gt)?;

    let pooled = MetricReport::from_matrix(&a.merge(&b)?, None, 2, "example")?;
    let per_image = MetricReport::per_image(&[a, b], &[], "example")?;
    println!("pooled:\n{}", pooled.to_json()?);
    println!("per image mIoU {:.4}, accuracy {:.4}", per_image.miou, per_image.accuracy);
    Ok(())
}
