//! Register a scene against the image of its own undeformed surface. The
//! result should stay at the identity.
//!
//! cargo run --release --example null_experiment -- [seed]

use cortexreg::energy::DeformationField;
use cortexreg::optimizer::{cascadic_register, DescentConfig};
use cortexreg::testbed::{SceneParams, SyntheticScene};

fn main() -> cortexreg::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scene = SyntheticScene::generate(&SceneParams::default(), seed)?.undeformed()?;
    let result = cascadic_register(&scene.surface, &scene.f_true, &scene.g_rendered, &scene.camera, &DescentConfig::default())?;
    let h = scene.surface.grid.spacing[0];
    let drift = result.psi.max_distance(&DeformationField::identity(&scene.surface)) / h;
    let last = result.trace.last().expect("non-empty trace");
    println!(
        "seed {seed}: {} accepted steps, final E {:.3e}, max displacement {drift:.4}h",
        result.trace.records.len() - result.level_dims.len(),
        last.e_total
    );
    Ok(())
}
