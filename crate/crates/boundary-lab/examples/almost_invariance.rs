//! How far the constant function is from invariant under π_s, as s grows towards D/p.

use boundary_lab::boundary_core::{Tree, Word};
use boundary_lab::lab_cli::commands::almost_invariance_defect;

fn main() -> boundary_lab::error::Result<()> {
    let tree = Tree::new(2)?;
    let p = 2.0;
    let ball = Word::ball(&tree, 1);
    let top = tree.dim() / p;
    for i in 1..=10 {
        let s = top * i as f64 / 11.0;
        let (value, g) = almost_invariance_defect(&tree, &ball, s, p)?;
        println!("s = {s:.4}: max |π_s(g)1 - 1|_(W^(s,2)) = {value:.6} at g = {g}");
    }
    Ok(())
}
