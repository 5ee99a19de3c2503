//! The resolvent (I + Δ^s)^{-1}, the heat semigroup and the Knapp–Stein operator.

use boundary_lab::boundary_core::Tree;
use boundary_lab::operators::{
    heat_matrix, kernel_value, knapp_stein_matrix, potential_matrix, resolvent_kernel_series, resolvent_window,
};
use nalgebra::SymmetricEigen;

fn main() -> boundary_lab::error::Result<()> {
    let tree = Tree::new(2)?;
    let (s, n) = (0.3, 4);
    let alpha = tree.dim() - 2.0 * s;
    let j = potential_matrix(&tree, s, n)?;
    println!("resolvent kernel at depth {n}, scaled by d^(D-2s):");
    for level in 0..n {
        let v = (1..tree.count(n)).find(|&v| tree.gromov_idx(0, v, n) == level).unwrap();
        let k = kernel_value(&j, 0, v);
        println!(
            "  level {level}: k = {k:.6}, series {:.6}, ratio {:.4}",
            resolvent_kernel_series(&tree, s, level),
            k * (-alpha * level as f64).exp()
        );
    }
    for levels in [4, 8, 16, 300] {
        println!("ratio window over {levels} levels: {:.4}", resolvent_window(&tree, s, levels));
    }

    let h = heat_matrix(&tree, s, (-3.0f64).exp(), n)?;
    println!("heat kernel on the diagonal at t = e^-3: {:.4}", kernel_value(&h, 0, 0));

    let ks = knapp_stein_matrix(&tree, s, n)?;
    let eig = SymmetricEigen::new(ks.entries.map(|v| v.re)).eigenvalues;
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    println!("Knapp–Stein smallest eigenvalue at depth {n}: {min:.6}");
    Ok(())
}
