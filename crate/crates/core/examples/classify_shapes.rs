//! Crease classifier on exact distance functions of a plane, a wedge edge,
//! a trihedral corner and a groove, swept over the ball radius.
//!
//! cargo run --release --example classify_shapes

use cortexreg::classifier::{classify_point, zero_moment_shift, ClassifierParams};
use cortexreg::volume::{Grid3, ScalarField3};

/// Exact distance to the solid `{p_a <= c_a for every listed axis}`.
fn orthant(p: [f64; 3], c: [f64; 3], axes: &[usize]) -> f64 {
    let over: Vec<f64> = axes.iter().map(|&a| p[a] - c[a]).collect();
    let outside = over.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
    if outside > 0.0 {
        outside
    } else {
        over.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Exact distance to a 90 degree V groove cut into `z <= c`: the negated
/// distance of the convex wedge `z >= |x|` above it.
fn groove(p: [f64; 3], c: [f64; 3]) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (x, z) = (p[0] - c[0], p[2] - c[2]);
    let faces = [s * (x - z), s * (-x - z)];
    let outside = faces.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
    let wedge = if outside > 0.0 { outside } else { faces[0].max(faces[1]) };
    -wedge
}

fn main() -> cortexreg::Result<()> {
    let n = 48;
    let grid = Grid3::new([n; 3], 1.0, [0.0; 3])?;
    let c = [(n / 2) as f64; 3];
    let shapes: Vec<(&str, ScalarField3)> = vec![
        ("plane", ScalarField3::from_fn(grid, |p| orthant(p, c, &[2]))?),
        ("edge", ScalarField3::from_fn(grid, |p| orthant(p, c, &[0, 2]))?),
        ("corner", ScalarField3::from_fn(grid, |p| orthant(p, c, &[0, 1, 2]))?),
        ("groove", ScalarField3::from_fn(grid, |p| groove(p, c))?),
    ];

    println!("{:>6} {:>8} {:>12} {:>8}", "eps", "shape", "|M|/eps^2", "C");
    for eps in [4.0, 6.0, 8.0, 10.0] {
        let params = ClassifierParams::with_eps(eps, 1.0);
        for (name, sdf) in &shapes {
            let m = zero_moment_shift(sdf, c, eps, params.quadrature_points_per_axis);
            let norm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt() / (eps * eps);
            println!("{:>5}h {:>8} {:>12.4} {:>8.4}", eps, name, norm, classify_point(sdf, c, &params));
        }
    }
    Ok(())
}
