//! Finite-difference check of every prompt tensor and the head through the
//! full prompted network and cross-entropy.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use vgp::verify::prompted_gradcheck;

fn main() -> vgp::Result<()> {
    let rep = prompted_gradcheck(0, 1e-5, 1e-4)?;
    for t in &rep.tensors {
        println!("{:<14} max relative error {:.2e}  flagged {}", t.name, t.max_rel_error, t.flagged.len());
    }
    println!("eps {:e}, tol {:e}: {}", rep.eps, rep.tol, if rep.passed() { "pass" } else { "FAIL" });
    Ok(())
}
