//! Single change-point detection on a noisy step.
//!
//! cargo run --example change_point

use dynemu::prelude::*;

fn main() -> dynemu::Result<()> {
    let series: Vec<f64> = (0..80).map(|i| if i < 30 { 0.1 } else { 2.0 } + 0.05 * (i as f64 * 1.7).sin()).collect();
    println!("change at index {}", detect_change_point(&series)?);

    // constant input has no change; the sentinel is the series length
    let flat = vec![3.0; 20];
    println!("constant series -> {}", detect_change_point(&flat)?);
    Ok(())
}
