//! Restriction norms of π_{s+it}(g) on W^{s,2}, reduced to symmetry orbits of the ball.

use boundary_lab::boundary_core::{BoundaryPoint, Params, Tree, Word};
use boundary_lab::operators::{cayley_norms_p2, rep_pi_norm, symmetry_orbits, SobolevDomain};

fn main() -> boundary_lab::error::Result<()> {
    let tree = Tree::new(2)?;
    let ball = Word::ball(&tree, 2);
    let orbits = symmetry_orbits(&tree, &ball);
    println!("{} words of length <= 2 fall into {} orbits", ball.len(), orbits.len());

    for s in [0.1, 0.3, 0.5] {
        for depth in [3, 5] {
            let domain = SobolevDomain::new(&tree, depth, s)?;
            let norms: Vec<String> = orbits
                .iter()
                .map(|(g, _)| Ok(format!("{g}:{:.4}", rep_pi_norm(g, &domain, &Params::new(2, s, 2.0, 0.0)?, 0)?)))
                .collect::<boundary_lab::error::Result<_>>()?;
            println!("s = {s}, depth {depth}: {}", norms.join(" "));
        }
    }

    let a = BoundaryPoint::parse("/a")?;
    for t in [0.0, 5.0] {
        let c = cayley_norms_p2(&a, 4, &Params::new(2, 0.3, 2.0, t)?, 0)?;
        println!("t = {t}: |Ω(a)| = {:.6}, |Ω(a)^-1| = {:.6}", c.forward, c.inverse);
    }
    Ok(())
}
