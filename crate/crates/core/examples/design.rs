//! Training designs: bounding boxes and Latin hypercubes.
//!
//! cargo run --example design

use dynemu::prelude::*;

fn main() -> dynemu::Result<()> {
    let lorenz = DynamicalSystem::lorenz(LORENZ_A, LORENZ_B, LORENZ_C);
    // extremes of one long trajectory plus 5% on each side
    let bbox = estimate_bounds(&lorenz, &[0.01; 3], 100.0, 0.05, 0.01, Tolerance::default())?;
    for i in 0..bbox.dim() {
        println!("x{}: [{:8.3}, {:8.3}]", i + 1, bbox.lower()[i], bbox.upper()[i]);
    }

    let square = BoundingBox::cube(2, 0.0, 1.0)?;
    let design = latin_hypercube(6, &square, 42)?;
    println!("\n6-point LHS on the unit square (one point per row and column stratum):");
    for row in design.row_iter() {
        println!("  ({:.3}, {:.3})", row[0], row[1]);
    }
    // same seed, same design
    assert_eq!(design, latin_hypercube(6, &square, 42)?);
    Ok(())
}
