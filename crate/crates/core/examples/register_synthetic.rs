//! Generate a synthetic scene, register it, and report the recovery ratio.
//!
//! cargo run --release --example register_synthetic -- [seed] [key=value ...]

use cortexreg::io::KeyValues;
use cortexreg::optimizer::{cascadic_register, DescentConfig};
use cortexreg::testbed::{SceneParams, SyntheticScene};

fn main() -> cortexreg::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let overrides = KeyValues::parse(&args.iter().skip(1).cloned().collect::<Vec<_>>().join("\n"), None)?;
    let params = SceneParams::from_kv(&overrides)?;
    let cfg = DescentConfig::from_kv(&overrides)?;

    let scene = SyntheticScene::generate(&params, seed)?;
    let start = std::time::Instant::now();
    let result = cascadic_register(&scene.surface, &scene.f_true, &scene.g_rendered, &scene.camera, &cfg)?;
    let metrics = scene.score(&result.psi)?;
    println!(
        "seed {seed}: curves {} lambda {:.4e} iterations {} time {:.1}s",
        scene.crease_curves.len(),
        result.lambda,
        result.trace.records.len(),
        start.elapsed().as_secs_f64()
    );
    for level in 0..result.level_dims.len() {
        let recs: Vec<_> = result.trace.records.iter().filter(|r| r.level == level).collect();
        if let (Some(a), Some(b)) = (recs.first(), recs.last()) {
            println!(
                "  level {level} {:?}: {} its, E {:.4e} -> {:.4e} (match {:.4e}, reg {:.4e}), |G| {:.2e} -> {:.2e}",
                result.level_dims[level],
                recs.len() - 1,
                a.e_total,
                b.e_total,
                b.e_match,
                b.e_reg,
                a.grad_norm,
                b.grad_norm
            );
        }
    }
    println!("{}", metrics.to_kv());
    Ok(())
}
