//! Generates a nested-ellipse dataset, writes it to disk, reloads it and runs one augmentation.
//!
//! `cargo run -p etnet --example synthetic_data -- [out_dir]`

use std::path::PathBuf;

use etnet::data::{augment, generate, load_dataset, save_dataset, AugmentConfig, Manifest, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()).into();
    let spec = SyntheticSpec::new(6, 128, 3, 3);
    let samples = generate(&spec)?;
    let manifest = Manifest {
        generator: "nested-ellipses".into(),
        samples: samples.len(),
        params: spec.clone(),
    };
    save_dataset(&samples, &out, Some(&manifest))?;

    let loaded = load_dataset(&out, spec.classes)?;
    assert_eq!(loaded.len(), samples.len());
    for s in &loaded {
        let mut counts = [0usize; 3];
        for &l in s.mask.labels() {
            counts[l as usize] += 1;
        }
        let edges = s.edge.labels().iter().filter(|&&e| e == 1).count();
        println!("{}: {}x{}, class pixels {counts:?}, edge pixels {edges}", s.id, s.height(), s.width());
    }

    let cfg = AugmentConfig {
        crop_size: 96,
        ..AugmentConfig::default()
    };
    let aug = augment(&loaded[0], &cfg, 0)?;
    println!("augmented {} to {}x{}", aug.id, aug.height(), aug.width());
    println!("dataset written to {}", out.display());
    Ok(())
}
