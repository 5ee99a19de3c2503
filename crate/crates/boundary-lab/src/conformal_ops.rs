//! The chart `(Z_a, d_a, ν_a)` at a boundary point, the Cayley multiplication operators between
//! `Z` and `Z_a`, the chart Laplacian `Δ_a^s`, and how all of these move under the group.
//!
//! Writing `w = 2D/p − 2z`, the forward operator multiplies by `d(a, ·)^w` and the inverse by
//! `d(a, ·)^{-w}`. Since `d(a, ·)` is constant on every shell, both are exact on shell functions,
//! and the part near `a` is carried as a symbolic power tail.

use num_complex::Complex64;

use crate::boundary_core::{cancellation, cross_ratio, BoundaryPoint, Cylinder, Letter, Params, Tree, Word};
use crate::error::{Error, Result};
use crate::function_space::{AtomicForm, CylinderFunction, ShellFunction, Tail};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// The chart at `a`, truncated at the cylinder `C_{a|M}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleChart {
    tree: Tree,
    basepoint: BoundaryPoint,
    truncation: usize,
}

impl BundleChart {
    pub fn new(tree: Tree, basepoint: BoundaryPoint, truncation: usize) -> Result<Self> {
        basepoint.check_in(&tree)?;
        if truncation < 2 {
            return Err(Error::ParamError("chart truncation must be at least 2".into()));
        }
        Ok(BundleChart { tree, basepoint, truncation })
    }

    pub fn tree(&self) -> Tree {
        self.tree
    }
    pub fn basepoint(&self) -> &BoundaryPoint {
        &self.basepoint
    }
    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn with_truncation(&self, truncation: usize) -> BundleChart {
        BundleChart { truncation, ..self.clone() }
    }

    /// `d(a, ·)` on the shell of level `j`.
    pub fn shell_distance(&self, j: usize) -> f64 {
        (-((j - 1) as f64)).exp()
    }

    /// `ν_a(C) = d(a, C)^{-2D} ν(C)` for a cylinder not containing `a`.
    pub fn nu_a(&self, c: &Cylinder) -> Result<f64> {
        if self.basepoint.in_cylinder(c) {
            return Err(Error::ContainsBasepoint);
        }
        let l = self.basepoint.common_prefix_with(c.letters()) as f64;
        Ok((2.0 * self.tree.dim() * l).exp() * self.tree.measure(c.depth()))
    }

    pub fn d_a(&self, u: &Cylinder, v: &Cylinder) -> Result<f64> {
        crate::boundary_core::d_a_distance(&self.basepoint, u, v)
    }

    /// Cross-ratio computed with `d_a`.
    pub fn cross_ratio(&self, x: &Cylinder, y: &Cylinder, z: &Cylinder, w: &Cylinder) -> Result<f64> {
        Ok(self.d_a(x, z)? * self.d_a(y, w)? / (self.d_a(x, w)? * self.d_a(y, z)?))
    }

    /// Cross-ratio computed with the visual metric, for comparison.
    pub fn cross_ratio_on_z(x: &Cylinder, y: &Cylinder, z: &Cylinder, w: &Cylinder) -> Result<f64> {
        cross_ratio(x, y, z, w)
    }
}

/// The exponent `w = 2D/p − 2z` of the Cayley weight `d(a, ·)^w`.
pub fn cayley_exponent(params: &Params) -> Complex64 {
    Complex64::new(2.0 * params.dim() / params.p, 0.0) - params.z() * 2.0
}

/// `Ω(a) f = d(a, ·)^w f` for `f` in `LC_n`, `n <= M`.
pub fn cayley_forward(f: &CylinderFunction, chart: &BundleChart, params: &Params) -> Result<ShellFunction> {
    params.check_sobolev()?;
    let n = f.depth();
    if n > chart.truncation {
        return Err(Error::ParamError(format!("function depth {n} exceeds chart truncation {}", chart.truncation)));
    }
    let w = cayley_exponent(params);
    let near = f.value_on(&chart.basepoint.prefix(n)).unwrap();
    let weight = |level: usize| (-w * (level - 1) as f64).exp();
    ShellFunction::from_fn(chart.tree, chart.basepoint.clone(), n, chart.truncation, Tail::Power { coef: near, exponent: w }, |atom| {
        if atom.level <= n {
            f.value_on(&atom.prefix).unwrap() * weight(atom.level)
        } else {
            near * weight(atom.level)
        }
    })
}

/// Result of `Ω(a)^{-1}`: a depth-`M` cylinder function off `C_{a|M}` plus an exact description
/// of the values on `C_{a|M}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CayleyPreimage {
    /// Coefficient of `C_{a|M}` is the tail value when that is constant, and zero otherwise.
    pub function: CylinderFunction,
    pub near_basepoint: Tail,
    pub basepoint: BoundaryPoint,
}

impl CayleyPreimage {
    /// The preimage as a plain cylinder function, when it is constant near `a`.
    pub fn into_cylinder_function(self) -> Result<CylinderFunction> {
        match self.near_basepoint {
            Tail::Const(_) => Ok(self.function),
            Tail::Power { coef, .. } if coef == ZERO => Ok(self.function),
            _ => Err(Error::ParamError("preimage is not locally constant near the basepoint".into())),
        }
    }

    /// `‖·‖_p^p` including the exact contribution near `a`.
    pub fn lp_norm_pow(&self, p: f64) -> Result<f64> {
        let f = &self.function;
        let tree = f.tree();
        let m = f.depth();
        let a_idx = tree.index_of(&self.basepoint.prefix(m));
        let body: f64 = f
            .coeffs()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != a_idx)
            .map(|(_, v)| v.norm().powf(p))
            .sum::<f64>()
            * tree.measure(m);
        let near = match self.near_basepoint {
            Tail::Const(c) => c.norm().powf(p) * tree.measure(m),
            Tail::Power { coef, exponent } => {
                let decay = p * exponent.re + tree.dim();
                if coef == ZERO {
                    0.0
                } else if decay <= 0.0 {
                    return Err(Error::TailDivergence("preimage is not p-integrable near the basepoint".into()));
                } else {
                    let q = (tree.k - 2) as f64 / tree.k as f64;
                    coef.norm().powf(p) * q * (-decay * m as f64).exp() / (1.0 - (-decay).exp())
                }
            }
        };
        Ok(body + near)
    }
}

/// `Ω(a)^{-1} φ = d(a, ·)^{-w} φ`.
pub fn cayley_inverse(phi: &ShellFunction, chart: &BundleChart, params: &Params) -> Result<CayleyPreimage> {
    params.check_sobolev()?;
    if phi.basepoint() != chart.basepoint() {
        return Err(Error::ParamError("shell function lives on a different chart".into()));
    }
    let w = cayley_exponent(params);
    let tree = chart.tree;
    let m = phi.truncation();
    let a = chart.basepoint.clone();
    let near = match phi.tail() {
        Tail::Const(c) if c == ZERO => Tail::Const(ZERO),
        Tail::Const(c) => Tail::Power { coef: c, exponent: -w },
        Tail::Power { coef, exponent } if exponent == w => Tail::Const(coef),
        Tail::Power { coef, exponent } => Tail::Power { coef, exponent: exponent - w },
    };
    let a_idx = tree.index_of(&a.prefix(m));
    let mut coeffs = Vec::with_capacity(tree.count(m));
    for idx in 0..tree.count(m) {
        if idx == a_idx {
            coeffs.push(if let Tail::Const(c) = near { c } else { ZERO });
            continue;
        }
        let word = tree.word_of(m, idx);
        let level = a.common_prefix_with(&word) + 1;
        coeffs.push(phi.eval_cylinder(&word)? * (w * (level - 1) as f64).exp());
    }
    Ok(CayleyPreimage { function: CylinderFunction::new(tree, m, coeffs)?, near_basepoint: near, basepoint: a })
}

/// `c_z(b, a) = Ω(b) Ω(a)^{-1}`, defined on the image of cylinder functions under `Ω(a)`.
pub fn cayley_cocycle(b: &BundleChart, a: &BundleChart, params: &Params, f: &ShellFunction) -> Result<ShellFunction> {
    let pre = cayley_inverse(f, a, params)?.into_cylinder_function()?;
    let chart = b.with_truncation(b.truncation.max(pre.depth()));
    cayley_forward(&pre, &chart, params)
}

/// `δ = |g| − 2⟨g⁻¹, a⟩`, so that `|g'|(a) = e^{-δ}`.
pub fn derivative_drop(g: &Word, a: &BoundaryPoint) -> i64 {
    let c = a.common_prefix_with(g.inverse().letters());
    g.len() as i64 - 2 * c as i64
}

/// `g_* φ = φ ∘ g⁻¹`, a shell function on the chart at `g·a`.
///
/// The partition grows by `|g|` in resolution, and the tail cylinder is chosen so that `g⁻¹`
/// maps it into the tail cylinder of `φ`, where `d(a, g⁻¹ ·) = e^{δ} d(ga, ·)` exactly.
pub fn pushforward(g: &Word, phi: &ShellFunction) -> Result<ShellFunction> {
    let a = phi.basepoint();
    let b = a.translate(g);
    let delta = derivative_drop(g, a);
    let r = phi.resolution() + g.len();
    let m = ((phi.truncation() as i64 + delta).max(r as i64)) as usize;
    let g_inv = g.inverse();
    let tail = match phi.tail() {
        Tail::Const(c) => Tail::Const(c),
        Tail::Power { coef, exponent } => Tail::Power { coef: coef * (exponent * delta as f64).exp(), exponent },
    };
    let mut err = None;
    let out = ShellFunction::from_fn(phi.tree(), b, r, m, tail, |atom| {
        match pull_back_value(&g_inv, &atom.prefix, phi) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                ZERO
            }
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn pull_back_value(g_inv: &Word, prefix: &[Letter], phi: &ShellFunction) -> Result<Complex64> {
    if cancellation(g_inv, prefix) >= prefix.len() {
        return Err(Error::FullCancellation);
    }
    let image = g_inv.mul(&Word::from_letters(prefix));
    phi.eval_cylinder(image.letters())
}

/// `Δ_a^s φ(ξ) = ∫ (φ(ξ) − φ(η)) d_a(ξ, η)^{-(D+2s)} dν_a(η)` for `φ` vanishing near `a`.
///
/// The result lives on the same partition; near `a` it equals `−(Σ φ ν_a) d(a, ·)^{D+2s}`.
pub fn laplacian_a_apply(phi: &ShellFunction, s: f64) -> Result<ShellFunction> {
    if !phi.tail().is_zero() {
        return Err(Error::NonzeroNearBasepoint);
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::ParamError(format!("s = {s} must lie in (0, 1)")));
    }
    let tree = phi.tree();
    let m = phi.truncation();
    let atoms = phi.atoms();
    let form = AtomicForm::for_chart(&tree, &atoms, (m + 1)..=m, 2.0 * s)?;
    let values = phi.values();
    let masses = phi.atom_masses();
    let applied = form.laplacian_apply(&values, ZERO);
    let out: Vec<Complex64> = applied.iter().zip(&masses).map(|(v, m)| v / m).collect();
    let total: Complex64 = values.iter().zip(&masses).map(|(v, m)| v * m).sum();
    let mut result = phi.clone();
    result.set_values(&out);
    result.set_tail(Tail::Power { coef: -total, exponent: Complex64::new(tree.dim() + 2.0 * s, 0.0) });
    Ok(result)
}
