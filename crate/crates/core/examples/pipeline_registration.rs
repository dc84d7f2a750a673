//! Register a synthetic scene with `f` computed through the volumetric
//! route: voxelize, redistance, classify, read off the surface.
//!
//! cargo run --release --example pipeline_registration -- [seed]

use cortexreg::optimizer::{cascadic_register, DescentConfig};
use cortexreg::testbed::{pipeline_classifier, PipelineParams, SceneParams, SyntheticScene};

fn main() -> cortexreg::Result<()> {
    env_logger::init();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scene = SyntheticScene::generate(&SceneParams::default(), seed)?;
    let h = scene.surface.grid.spacing[0];

    let start = std::time::Instant::now();
    let f = pipeline_classifier(&scene.surface, &PipelineParams::for_spacing(h))?;
    println!("volumetric classifier {:.1}s", start.elapsed().as_secs_f64());

    // Agreement of the volumetric f with the crease strokes it stands in for.
    let n = f.values.len() as f64;
    let (ma, mb) = (f.values.iter().sum::<f64>() / n, scene.f_true.values.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in f.values.iter().zip(&scene.f_true.values) {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    println!("correlation with stroke classifier {:.3}", sab / (saa * sbb).sqrt());

    let cfg = DescentConfig::default();
    for (name, f_used) in [("strokes", &scene.f_true), ("volumetric", &f)] {
        let start = std::time::Instant::now();
        let result = cascadic_register(&scene.surface, f_used, &scene.g_rendered, &scene.camera, &cfg)?;
        let m = scene.score(&result.psi)?;
        println!(
            "{name:>10}: rms {:.3}h of initial {:.3}h, ratio {:.3}, {:.1}s",
            m.rms_surface_error,
            m.initial_rms,
            m.ratio,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
