//! Gagliardo seminorms, Lorentz norms and the fractional Sobolev inequality ratio.

use boundary_lab::boundary_core::{Cylinder, Tree};
use boundary_lab::function_space::{gagliardo_seminorm, gagliardo_seminorm_pow, lorentz_norm, lp_norm, CylinderFunction};
use boundary_lab::lab_cli::commands::sobolev_ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> boundary_lab::error::Result<()> {
    let tree = Tree::new(2)?;
    let ind = CylinderFunction::indicator(tree, &Cylinder::parse("a")?, 1)?;
    for (s, p) in [(0.1, 1.5), (0.3, 2.0), (0.5, 3.0)] {
        // A depth-1 indicator only sees level-0 pairs, so the value is 2 (1/4)(3/4) = 3/8.
        println!("[1_a]^p at s = {s}, p = {p}: {:.15}", gagliardo_seminorm_pow(&ind, s, p));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = CylinderFunction::random_gaussian(tree, 5, &mut rng);
    let (s, p) = (0.3, 2.0);
    let p_star = p * tree.dim() / (tree.dim() - s * p);
    println!("random f at depth 5: |f|_2 = {:.6}, [f]_(0.3,2) = {:.6}", lp_norm(&f, p), gagliardo_seminorm(&f, s, p));
    println!("Lorentz norm L(p*, p) with p* = {p_star:.4}: {:.6}", lorentz_norm(&f, p_star, p)?);
    println!("refined to depth 7, the seminorm is unchanged: {:.6}", gagliardo_seminorm(&f.refine(7), s, p));

    let (lhs, rhs) = sobolev_ratio(&f, s, p)?;
    println!("Sobolev ratio |f|_(p*,p) / (|f|_p + [f]_(s,p)) = {:.6}", lhs / rhs);
    Ok(())
}
