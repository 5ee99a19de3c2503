//! The weighted integrals controlling the representation, as η moves along the ray to a.

use boundary_lab::boundary_core::{BoundaryPoint, Tree};
use boundary_lab::lab_cli::commands::diverging_point;
use boundary_lab::operators::geometric_control;

fn main() -> boundary_lab::error::Result<()> {
    let tree = Tree::new(2)?;
    let a = BoundaryPoint::parse("b/a")?;
    let (s, p, t) = (0.3, 2.0, 1.0);
    let sigma = tree.dim() / p - s;
    println!("a = {a}, σ = {sigma:.4}, s = {s}, p = {p}, t = {t}");
    for l in 0..8 {
        let eta = diverging_point(&tree, &a, l)?;
        let gc = geometric_control(&tree, &a, &eta, sigma, t, s, p)?;
        println!(
            "⟨a, η⟩ = {l} (η = {eta}): on Z {:.6} (tail {:.1e}), on chart {:.6} (tail {:.1e})",
            gc.on_z, gc.on_z_tail_bound, gc.on_chart, gc.on_chart_tail_bound
        );
    }
    Ok(())
}
