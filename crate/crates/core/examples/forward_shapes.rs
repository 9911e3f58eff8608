//! Traces feature-map shapes through each stage of the toy and full-scale networks.
//!
//! `cargo run --release -p etnet --example forward_shapes -- [size]`

use etnet::network::{build_network, NetworkConfig};
use etnet_tensor::{Shape, Tensor};

fn main() -> anyhow::Result<()> {
    let size: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(128);
    let cfg = NetworkConfig::toy(3);
    let net = build_network(&cfg, 0)?;
    println!("toy network: {} parameters", net.param_count());
    println!("full-scale network: {} parameters", NetworkConfig::full_scale(3).param_count());

    let x = Tensor::from_fn(Shape::new(1, 3, size, size), |i| ((i % 97) as f32 / 97.0) - 0.5);
    let f = net.encode(&x)?;
    for (i, m) in f.iter().enumerate() {
        println!("encoder f{}: {:?} stride {}", i + 1, m.values.shape(), m.stride);
    }
    let d1 = net.dblock(1, &f[3], &f[2])?;
    let d2 = net.dblock(2, &d1, &f[1])?;
    let d3 = net.dblock(3, &d2, &f[0])?;
    for (i, d) in [&d1, &d2, &d3].iter().enumerate() {
        println!("decoder d{}: {:?} stride {}", i + 1, d.values.shape(), d.stride);
    }
    let (guide, edge) = net.edge_guidance(&f[0], &f[1])?;
    println!("edge guidance: {:?}, edge logits {:?}", guide.values.shape(), edge.values.shape());
    let w: Vec<_> = [&d1, &d2, &d3]
        .iter()
        .enumerate()
        .map(|(i, d)| net.weighted_block(i + 1, d))
        .collect::<Result<_, _>>()?;
    let head = net.aggregate([&w[0], &w[1], &w[2]], Some(&guide))?;
    println!("aggregated logits: {:?} stride {}", head.values.shape(), head.stride);

    let out = net.forward(&x)?;
    println!("segmentation output: {:?}", out.seg_logits.shape());
    if let Some(e) = &out.edge_logits {
        println!("edge output: {:?}", e.shape());
    }
    Ok(())
}
