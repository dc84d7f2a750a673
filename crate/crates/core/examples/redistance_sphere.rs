//! Redistance a voxelized ball with fast marching and compare to the exact
//! distance.
//!
//! cargo run --release --example redistance_sphere -- [n] [radius_voxels]

use cortexreg::fmm::redistance_fmm;
use cortexreg::volume::{BinaryMask3, Grid3};

fn main() -> cortexreg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(64);
    let radius: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10.0);

    let grid = Grid3::new([n; 3], 1.0, [0.0; 3])?;
    let c = 0.5 * (n - 1) as f64;
    let exact = |p: [f64; 3]| ((p[0] - c).powi(2) + (p[1] - c).powi(2) + (p[2] - c).powi(2)).sqrt() - radius;
    let mask = BinaryMask3::from_fn(grid, |p| exact(p) < 0.0);

    let start = std::time::Instant::now();
    let sdf = redistance_fmm(&mask)?;
    println!("{n}^3 grid, {} voxels inside, fast marching {:.2}s", mask.count_inside(), start.elapsed().as_secs_f64());

    println!("{:>8} {:>10} {:>10}", "band", "max err", "mean err");
    for band in [2.0, 4.0, 8.0] {
        let (mut max, mut sum, mut count) = (0.0f64, 0.0, 0usize);
        for idx in 0..grid.len() {
            let [i, j, k] = grid.coords(idx);
            let d = exact(grid.position(i, j, k));
            if d.abs() < band {
                let e = (sdf.values[idx] - d).abs();
                max = max.max(e);
                sum += e;
                count += 1;
            }
        }
        println!("{:>7}h {:>9.3}h {:>9.3}h", band, max, sum / count.max(1) as f64);
    }
    Ok(())
}
