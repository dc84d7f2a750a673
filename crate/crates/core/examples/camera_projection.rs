//! Project a bumpy graph surface with orthographic and perspective cameras
//! and test each view for self-occlusion.
//!
//! cargo run --release --example camera_projection

use cortexreg::camera::{check_no_self_occlusion, Camera};
use cortexreg::field2::Grid2;
use cortexreg::graph::{Frame, GraphSurface};

fn tilt(angle: f64) -> [[f64; 3]; 3] {
    let (c, s) = (angle.cos(), angle.sin());
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn main() -> cortexreg::Result<()> {
    let grid = Grid2::new([65, 65], [1.0, 1.0], [-32.0, -32.0])?;
    let surface = GraphSurface::from_fn(grid, Frame::identity(), |p| {
        10.0 * (-(p[0] * p[0] + p[1] * p[1]) / 60.0).exp()
    })?;

    let centre = surface.world_point(32, 32);
    for deg in [0.0, 30.0, 60.0, 80.0] {
        let angle = f64::to_radians(deg);
        let r = tilt(angle);
        // Camera looking down -z of the tilted frame, 120 units away.
        let t = [0.0, 0.0, 120.0];
        let ortho = Camera::orthographic(2.0, 2.0, 80.0, 80.0, 160, 160)?.with_extrinsics(r, t)?;
        let persp = Camera::perspective(200.0, 200.0, 80.0, 80.0, 160, 160)?.with_extrinsics(r, t)?;
        for (name, cam) in [("orthographic", ortho), ("perspective", persp)] {
            let uv = cam.project(centre)?;
            let report = check_no_self_occlusion(&surface, &cam);
            println!(
                "tilt {deg:>4.0} deg {name:>12}: summit at ({:6.1}, {:6.1}) px, injective {:5} ({} nodes flagged)",
                uv[0],
                uv[1],
                report.injective,
                report.nodes.len()
            );
        }
    }
    Ok(())
}
