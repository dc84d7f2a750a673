//! Matching and bending energy along the straight path from the identity to
//! the ground-truth deformation of a synthetic scene.
//!
//! cargo run --release --example energy_profile -- [seed]

use cortexreg::energy::{DeformationField, RegistrationProblem};
use cortexreg::testbed::{SceneParams, SyntheticScene};

fn main() -> cortexreg::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scene = SyntheticScene::generate(&SceneParams::default(), seed)?;
    let problem = RegistrationProblem::new(
        scene.surface.clone(),
        scene.f_true.blurred(2.0),
        scene.g_rendered.blurred(2.0),
        scene.camera,
        1.0,
    )?;
    let lambda = problem.auto_lambda(0.1)?;
    let problem = problem.with_lambda(lambda);
    let id = DeformationField::identity(&scene.surface);
    let step = scene.psi_true.axpy(-1.0, &id);
    println!("lambda {lambda:.4e}");
    println!("{:>5} {:>12} {:>12} {:>12}", "t", "E_match", "E_reg", "E_total");
    for k in 0..=10 {
        let t = 0.125 * k as f64;
        let r = problem.total_energy(&id.axpy(t, &step))?;
        println!("{t:>5.3} {:>12.5e} {:>12.5e} {:>12.5e}", r.e_match, r.e_reg, r.e_total);
    }
    Ok(())
}
