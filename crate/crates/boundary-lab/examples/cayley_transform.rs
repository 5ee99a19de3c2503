//! The chart at a boundary point, the Cayley transform Ω(a) and the bundle Laplacian.

use boundary_lab::boundary_core::{BoundaryPoint, Params, Tree, Word};
use boundary_lab::conformal_ops::{
    cayley_cocycle, cayley_forward, cayley_inverse, derivative_drop, laplacian_a_apply, pushforward, BundleChart,
};
use boundary_lab::function_space::{gagliardo_seminorm_on_za, CylinderFunction, ShellFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> boundary_lab::error::Result<()> {
    let tree = Tree::new(2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = Params::new(2, 0.3, 2.0, 1.5)?;
    let a = BoundaryPoint::parse("/ab")?;
    let chart = BundleChart::new(tree, a.clone(), 6)?;
    println!("chart at {a}: shell distances {:?}", (1..=4).map(|j| chart.shell_distance(j)).collect::<Vec<_>>());

    let f = CylinderFunction::random_gaussian(tree, 4, &mut rng);
    let phi = cayley_forward(&f, &chart, &params)?;
    let back = cayley_inverse(&phi, &chart, &params)?.into_cylinder_function()?;
    println!("round trip error: {:.2e}", f.refine(back.depth()).max_abs_diff(&back));
    let semi = gagliardo_seminorm_on_za(&phi, 0.3, 2.0)?;
    println!("seminorm of Ω(a)f on Z_a: {:.6} (truncation bound {:.1e})", semi.value, semi.truncation_error_bound);

    let b = BundleChart::new(tree, BoundaryPoint::parse("B/a")?, 6)?;
    let there = cayley_cocycle(&b, &chart, &params, &phi)?;
    let again = cayley_cocycle(&chart, &b, &params, &there)?;
    println!("c(a, b) c(b, a) = id up to {:.2e}", again.max_abs_diff(&phi)?);

    // Conformality: Δ at g·a of g_*φ equals |g'|^{2s}(a) g_*(Δ at a of φ).
    let s = 0.3;
    let psi = ShellFunction::random(tree, a.clone(), 2, 4, &mut rng)?;
    for g in ["a", "Ba", "bb"] {
        let g = Word::parse(g)?;
        let lhs = laplacian_a_apply(&pushforward(&g, &psi)?, s)?;
        let factor = (-2.0 * s * derivative_drop(&g, &a) as f64).exp();
        let rhs = pushforward(&g, &laplacian_a_apply(&psi, s)?)?.scale(factor.into());
        println!("conformality for g = {g}: residual {:.2e}", lhs.max_abs_diff(&rhs)? / lhs.max_abs());
    }
    Ok(())
}
