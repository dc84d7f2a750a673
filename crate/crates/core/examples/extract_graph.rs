//! Extract a height field from the distance function of a sphere cap and
//! compare it with the analytic cap.
//!
//! cargo run --release --example extract_graph

use cortexreg::camera::{check_no_self_occlusion, Camera};
use cortexreg::graph::{area_element, extract_graph, Frame, Rect};
use cortexreg::volume::{Grid3, ScalarField3};

fn main() -> cortexreg::Result<()> {
    let radius = 30.0;
    let centre = [24.0, 24.0, -10.0];
    let grid = Grid3::new([49, 49, 40], 1.0, [0.0, 0.0, 0.0])?;
    let sdf = ScalarField3::from_fn(grid, |p| {
        ((p[0] - centre[0]).powi(2) + (p[1] - centre[1]).powi(2) + (p[2] - centre[2]).powi(2)).sqrt() - radius
    })?;

    let region = Rect { min: [8.0, 8.0], max: [40.0, 40.0] };
    let surface = extract_graph(&sdf, region, Frame::identity(), [33, 33])?;
    let mut worst: f64 = 0.0;
    for j in 0..33 {
        for i in 0..33 {
            let p = surface.grid.position(i, j);
            let r2 = (p[0] - centre[0]).powi(2) + (p[1] - centre[1]).powi(2);
            let exact = centre[2] + (radius * radius - r2).sqrt();
            worst = worst.max((surface.height(i, j) - exact).abs());
        }
    }
    let (zmin, zmax) = surface.height_field().min_max();
    let (amin, amax) = area_element(&surface).min_max();
    println!("heights in [{zmin:.3}, {zmax:.3}], max error vs cap {worst:.4}");
    println!("area element in [{amin:.4}, {amax:.4}]");

    let cam = Camera::orthographic(4.0, 4.0, 0.0, 0.0, 192, 192)?;
    let report = check_no_self_occlusion(&surface, &cam);
    println!("seen from above: injective {} ({} flagged nodes)", report.injective, report.nodes.len());
    Ok(())
}
