//! The Monte-Carlo variance report, with the unitary transform and with the
//! unnormalized inverse as a negative control.

use gredp::harness::verify::verify_theorems_with;
use gredp::spectral::Normalization;

fn main() -> gredp::Result<()> {
    let good = verify_theorems_with(1_000_000, 0.02, 0, Normalization::Unitary)?;
    print!("{good}");
    println!("all pass: {}\n", good.all_pass());
    let bad = verify_theorems_with(200_000, 0.02, 0, Normalization::Backward)?;
    print!("{bad}");
    println!("all pass: {}", bad.all_pass());
    Ok(())
}
