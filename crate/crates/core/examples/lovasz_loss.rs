//! Lovász-Softmax loss and its logit gradient on a tiny hand-made batch.
//!
//! `cargo run -p etnet --example lovasz_loss`

use etnet::losses::{lovasz_softmax, softmax, softmax_backward, total_loss, ClassAveraging, GroundTruth, LossWeights};

fn main() -> anyhow::Result<()> {
    // Four pixels, three classes.
    let logits = [2.0, 0.5, -1.0, 0.1, 1.5, 0.3, -0.5, 0.2, 1.0, 1.2, 1.1, -2.0];
    let gt = GroundTruth::new(vec![0, 1, 2, 1], 3)?;
    let probs = softmax(&logits, 3)?;

    for averaging in [ClassAveraging::AllClasses, ClassAveraging::PresentOnly] {
        let out = lovasz_softmax(&probs, &gt, averaging)?;
        println!("{averaging:?}: loss {:.6}, per class {:?}", out.loss, out.per_class);
    }

    let out = lovasz_softmax(&probs, &gt, ClassAveraging::AllClasses)?;
    let dlogits = softmax_backward(&probs, &out.dprobs);
    for (i, row) in dlogits.chunks(3).enumerate() {
        println!("pixel {i} dL/dz = {row:+.4?}");
    }

    let edge_probs = softmax(&[3.0, -3.0, -3.0, 3.0, 3.0, -3.0, 0.0, 0.0], 2)?;
    let edge_gt = GroundTruth::new(vec![0, 1, 0, 1], 2)?;
    let joint = total_loss(&probs, &edge_probs, &gt, &edge_gt, &LossWeights::default())?;
    println!("joint: seg {:.4}, edge {:.4}, total {:.4}", joint.seg, joint.edge, joint.total);
    Ok(())
}
