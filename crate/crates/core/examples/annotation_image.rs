//! Turn hand-drawn crease polylines into an image classifier and save it.
//!
//! cargo run --release --example annotation_image -- [out_dir]

use cortexreg::classifier::{rasterize_annotation, Annotation};

const MARKS: &str = "\
sigma=3
# two sulci traced on a 160x120 photograph
20,30 60,42 100,40 140,55
35,95 70,80 90,60
";

fn main() -> cortexreg::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let ann = Annotation::parse(MARKS)?;
    let img = rasterize_annotation(&ann, 160, 120)?;
    let (lo, hi) = img.min_max();
    let covered = img.values.iter().filter(|&&v| v > 0.5).count();
    println!(
        "{} polylines, values in [{lo:.3}, {hi:.3}], {covered} of {} pixels above 0.5",
        ann.polylines.len(),
        img.values.len()
    );
    let pgm = out.join("annotation.pgm");
    img.write_pgm(&pgm)?;
    println!("wrote {}", pgm.display());
    Ok(())
}
