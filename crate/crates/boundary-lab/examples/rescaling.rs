//! Rescaled Laplacian forms along g_n = h x^n h^-1 approaching the bundle form at a = h x^∞.

use boundary_lab::boundary_core::{BoundaryPoint, Tree};
use boundary_lab::function_space::ShellFunction;
use boundary_lab::operators::{rescaling_check, rescaling_support_threshold};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> boundary_lab::error::Result<()> {
    let tree = Tree::new(2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = BoundaryPoint::parse("B/ab")?;
    let phi = ShellFunction::random(tree, a.clone(), 1, 4, &mut rng)?;
    let psi = ShellFunction::random(tree, a.clone(), 1, 4, &mut rng)?;
    println!("a = {a}, support threshold n0 = {}", rescaling_support_threshold(&a, &phi));
    for row in rescaling_check(&a, 0.3, &phi, &psi, 10)? {
        println!(
            "n = {:>2}, |g_n| = {:>2}: residual {:.3e}, residual e^(2sn|x|) = {:.4}",
            row.n, row.word_length, row.residual, row.scaled_residual
        );
    }
    Ok(())
}
