//! Words, cylinders and the Möbius action of F_2 on the boundary of its Cayley tree.

use boundary_lab::boundary_core::{
    act_on_cylinder, cross_ratio, cylinder_measure, metric_derivative, visual_distance, BoundaryPoint, Cylinder, Tree,
    Word,
};

fn main() -> boundary_lab::error::Result<()> {
    let tree = Tree::new(2)?;
    println!("F_2: k = {}, D = ln 3 = {:.6}, {} cylinders at depth 4", tree.k, tree.dim(), tree.count(4));

    let g = Word::parse("abA")?;
    let h = Word::parse("aB")?;
    println!("g = {g}, h = {h}, gh = {}, g^-1 = {}", g.mul(&h), g.inverse());

    let u = Cylinder::parse("baab")?;
    let v = Cylinder::parse("bAbb")?;
    let (gu, gv) = (act_on_cylinder(&g, &u)?, act_on_cylinder(&g, &v)?);
    println!("g maps {u} to {gu} and {v} to {gv}");

    // Geometric mean value: d(gu, gv)^2 = |g'|(u) |g'|(v) d(u, v)^2.
    let lhs = visual_distance(&gu, &gv)?.powi(2);
    let rhs = metric_derivative(&g, &u)? * metric_derivative(&g, &v)? * visual_distance(&u, &v)?.powi(2);
    println!("mean value property: {lhs:.6e} vs {rhs:.6e}");

    // Change of variables on cylinders.
    println!(
        "measure of g.u = {:.6e}, |g'|(u)^D measure of u = {:.6e}",
        cylinder_measure(&tree, &gu),
        metric_derivative(&g, &u)?.powf(tree.dim()) * cylinder_measure(&tree, &u)
    );

    let q = ["ab", "ba", "aa", "bb"].map(|c| Cylinder::parse(c).unwrap());
    let moved: Vec<Cylinder> = q.iter().map(|c| act_on_cylinder(&h, c)).collect::<Result<_, _>>()?;
    println!(
        "cross-ratio before {:.6}, after {:.6}",
        cross_ratio(&q[0], &q[1], &q[2], &q[3])?,
        cross_ratio(&moved[0], &moved[1], &moved[2], &moved[3])?
    );

    let a = BoundaryPoint::parse("b/ab")?;
    println!("boundary point {a} translated by g: {}", a.translate(&g));
    Ok(())
}
