//! Locally constant functions on the boundary `Z` and on the chart `Z_a`, with exact `L^p`,
//! Lorentz, Gagliardo and Sobolev norms.
//!
//! A function constant on the cylinders of depth `n` turns every double integral into a finite
//! pair sum: within one cylinder the integrand vanishes, and between two disjoint cylinders the
//! kernel is constant. On `Z_a` the same holds for the shell partition around `a`, except that
//! `Z_a` is unbounded: the region near `a` is an infinite stack of shells whose contribution is a
//! geometric series, summed in closed form or bounded explicitly.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::boundary_core::{common_prefix, inv, BoundaryPoint, Cylinder, Letter, Tree};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A function on `Z` constant on each cylinder of depth `depth` (the space `LC_depth`).
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderFunction {
    tree: Tree,
    depth: usize,
    coeffs: Vec<Complex64>,
}

impl CylinderFunction {
    pub fn new(tree: Tree, depth: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if depth == 0 {
            return Err(Error::ParamError("cylinder functions start at depth 1".into()));
        }
        if coeffs.len() != tree.count(depth) {
            return Err(Error::ParamError(format!(
                "depth {depth} needs {} coefficients, got {}",
                tree.count(depth),
                coeffs.len()
            )));
        }
        Ok(CylinderFunction { tree, depth, coeffs })
    }

    pub fn zeros(tree: Tree, depth: usize) -> Self {
        Self::constant(tree, depth, ZERO)
    }

    pub fn constant(tree: Tree, depth: usize, c: Complex64) -> Self {
        CylinderFunction { tree, depth, coeffs: vec![c; tree.count(depth)] }
    }

    /// Indicator of `c`, represented at `depth >= c.depth()`.
    pub fn indicator(tree: Tree, c: &Cylinder, depth: usize) -> Result<Self> {
        let depth = depth.max(c.depth());
        Ok(Self::from_fn(tree, depth, |w| {
            if common_prefix(w, c.letters()) == c.depth() {
                Complex64::new(1.0, 0.0)
            } else {
                ZERO
            }
        }))
    }

    /// Builds a function from its value on each depth-`depth` cylinder prefix.
    pub fn from_fn(tree: Tree, depth: usize, mut f: impl FnMut(&[Letter]) -> Complex64) -> Self {
        let coeffs = (0..tree.count(depth)).map(|i| f(&tree.word_of(depth, i))).collect();
        CylinderFunction { tree, depth, coeffs }
    }

    /// Complex Gaussian coefficients.
    pub fn random_gaussian(tree: Tree, depth: usize, rng: &mut impl Rng) -> Self {
        let coeffs = (0..tree.count(depth))
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        CylinderFunction { tree, depth, coeffs }
    }

    pub fn tree(&self) -> Tree {
        self.tree
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Value on a cylinder at least as deep as the representation.
    pub fn value_on(&self, letters: &[Letter]) -> Option<Complex64> {
        (letters.len() >= self.depth).then(|| self.coeffs[self.tree.index_of(&letters[..self.depth])])
    }

    /// The same function on the finer partition of depth `m`.
    pub fn refine(&self, m: usize) -> CylinderFunction {
        assert!(m >= self.depth, "refine target {m} is coarser than {}", self.depth);
        let b = (self.tree.k - 1).pow((m - self.depth) as u32);
        let coeffs = (0..self.tree.count(m)).map(|i| self.coeffs[i / b]).collect();
        CylinderFunction { tree: self.tree, depth: m, coeffs }
    }

    /// The representation at depth `n`, if the function is constant on depth-`n` cylinders.
    pub fn coarsen(&self, n: usize) -> Option<CylinderFunction> {
        if n > self.depth || n == 0 {
            return None;
        }
        let b = (self.tree.k - 1).pow((self.depth - n) as u32);
        let coarse: Vec<Complex64> = self.coeffs.chunks(b).map(|c| c[0]).collect();
        let ok = self.coeffs.chunks(b).all(|c| c.iter().all(|&v| v == c[0]));
        ok.then_some(CylinderFunction { tree: self.tree, depth: n, coeffs: coarse })
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> CylinderFunction {
        CylinderFunction { tree: self.tree, depth: self.depth, coeffs: self.coeffs.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination after refining both to the common depth.
    pub fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> CylinderFunction {
        let n = self.depth.max(other.depth);
        let (a, b) = (self.refine(n), other.refine(n));
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(&x, &y)| f(x, y)).collect();
        CylinderFunction { tree: self.tree, depth: n, coeffs }
    }

    pub fn sub(&self, other: &Self) -> CylinderFunction {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn add(&self, other: &Self) -> CylinderFunction {
        self.zip_with(other, |x, y| x + y)
    }

    /// Largest coefficient difference on the common refinement.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).coeffs.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// The same function on a finer partition.
pub fn refine(f: &CylinderFunction, m: usize) -> CylinderFunction {
    f.refine(m)
}

/// `(Σ |f_u|^p ν(C_u))^{1/p}`; `p = ∞` gives the sup norm.
pub fn lp_norm(f: &CylinderFunction, p: f64) -> f64 {
    if p.is_infinite() {
        return f.max_abs();
    }
    let nu = f.tree.measure(f.depth);
    (f.coeffs.iter().map(|v| v.norm().powf(p)).sum::<f64>() * nu).powf(1.0 / p)
}

/// Distinct absolute values in decreasing order with the measure of `{|f| >= value}`.
fn level_sets(f: &CylinderFunction) -> Vec<(f64, f64)> {
    let nu = f.tree.measure(f.depth);
    let mut vals: Vec<f64> = f.coeffs.iter().map(|v| v.norm()).filter(|&v| v > 0.0).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in vals.iter().enumerate() {
        let mass = (i + 1) as f64 * nu;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = mass,
            _ => out.push((*v, mass)),
        }
    }
    out
}

fn check_lorentz(p: f64, q: f64) -> Result<()> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::ParamError(format!("Lorentz indices must be >= 1, got ({p}, {q})")));
    }
    if p.is_infinite() && q.is_finite() {
        return Err(Error::ParamError("L(∞, q) with finite q is trivial".into()));
    }
    Ok(())
}

/// `‖t^{1/p} f*(t) | L^q(dt/t)‖`, exact for the step rearrangement of a simple function.
pub fn lorentz_norm(f: &CylinderFunction, p: f64, q: f64) -> Result<f64> {
    check_lorentz(p, q)?;
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    let levels = level_sets(f);
    if q.is_infinite() {
        return Ok(levels.iter().map(|&(v, t)| v * t.powf(1.0 / p)).fold(0.0, f64::max));
    }
    let mut prev = 0.0f64;
    let mut acc = 0.0;
    for &(v, t) in &levels {
        acc += v.powf(q) * (p / q) * (t.powf(q / p) - prev.powf(q / p));
        prev = t;
    }
    Ok(acc.powf(1.0 / q))
}

/// The distribution-function form `p^{1/q} ‖s ν(|f|>s)^{1/p} | L^q(ds/s)‖`.
pub fn lorentz_norm_distribution_form(f: &CylinderFunction, p: f64, q: f64) -> Result<f64> {
    check_lorentz(p, q)?;
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    let levels = level_sets(f);
    if q.is_infinite() {
        return Ok(levels.iter().map(|&(v, t)| v * t.powf(1.0 / p)).fold(0.0, f64::max));
    }
    let mut acc = 0.0;
    for (i, &(v, t)) in levels.iter().enumerate() {
        let next = levels.get(i + 1).map_or(0.0, |l| l.0);
        acc += t.powf(q / p) * (v.powf(q) - next.powf(q)) / q;
    }
    Ok(p.powf(1.0 / q) * acc.powf(1.0 / q))
}

/// Pair weight `e^{(D+sp)ℓ} ν²` of two depth-`n` cylinders with Gromov product `ℓ`.
fn gagliardo_level_weights(tree: &Tree, n: usize, sp: f64) -> Vec<f64> {
    let nu = tree.measure(n);
    (0..n).map(|l| ((tree.dim() + sp) * l as f64).exp() * nu * nu).collect()
}

/// `[f]_{s,p}^p = Σ_{u≠v} |f_u − f_v|^p e^{(D+sp)⟨u,v⟩} ν(C_u) ν(C_v)` over ordered pairs.
pub fn gagliardo_seminorm_pow(f: &CylinderFunction, s: f64, p: f64) -> f64 {
    let (tree, n) = (f.tree, f.depth);
    let w = gagliardo_level_weights(&tree, n, s * p);
    let c = &f.coeffs;
    let mut acc = 0.0;
    for u in 0..c.len() {
        for v in (u + 1)..c.len() {
            let d = (c[u] - c[v]).norm();
            if d > 0.0 {
                acc += d.powf(p) * w[tree.gromov_idx(u, v, n)];
            }
        }
    }
    2.0 * acc
}

/// The Gagliardo seminorm `[f]_{s,p}`.
pub fn gagliardo_seminorm(f: &CylinderFunction, s: f64, p: f64) -> f64 {
    gagliardo_seminorm_pow(f, s, p).powf(1.0 / p)
}

/// Applies `x ↦ (Σ_{v≠u} c_{⟨u,v⟩} (x_u − x_v))_u` for a kernel depending only on the Gromov
/// product, in `O(N·n)` via subtree sums.
pub fn ultrametric_apply(tree: &Tree, n: usize, level_weights: &[f64], x: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(level_weights.len(), n);
    let b = tree.k - 1;
    // sums[j][w]: total of x over the descendants of the depth-j node w (sums[0] is the root).
    let mut sums: Vec<Vec<Complex64>> = vec![Vec::new(); n + 1];
    sums[n] = x.to_vec();
    for j in (1..n).rev() {
        sums[j] = sums[j + 1].chunks(b).map(|c| c.iter().sum()).collect();
    }
    sums[0] = vec![sums[1].iter().sum()];
    let counts: Vec<f64> = (0..=n).map(|j| if j == 0 { tree.count(n) as f64 } else { b.pow((n - j) as u32) as f64 }).collect();
    (0..x.len())
        .map(|u| {
            let mut acc = ZERO;
            for l in 0..n {
                let anc_l = if l == 0 { 0 } else { tree.ancestor(u, n, l) };
                let anc_next = tree.ancestor(u, n, l + 1);
                let group_sum = sums[l][anc_l] - sums[l + 1][anc_next];
                let group_count = counts[l] - counts[l + 1];
                acc += (x[u] * group_count - group_sum) * level_weights[l];
            }
            acc
        })
        .collect()
}

/// Applies the `W^{s,2}` Gram matrix `ν I + 2L` on `LC_n`.
pub fn sobolev_gram_apply(tree: &Tree, n: usize, s: f64, x: &[Complex64]) -> Vec<Complex64> {
    let w = gagliardo_level_weights(tree, n, 2.0 * s);
    let nu = tree.measure(n);
    ultrametric_apply(tree, n, &w, x).into_iter().zip(x).map(|(l, &xi)| xi * nu + l * 2.0).collect()
}

/// Sesquilinear Gagliardo form `Σ_{u≠v} (f_u − f_v) conj(g_u − g_v) e^{(D+2s)⟨u,v⟩} ν²`.
pub fn gagliardo_bilinear(f: &CylinderFunction, g: &CylinderFunction, s: f64) -> Complex64 {
    let n = f.depth.max(g.depth);
    let (f, g) = (f.refine(n), g.refine(n));
    let w = gagliardo_level_weights(&f.tree, n, 2.0 * s);
    let lf = ultrametric_apply(&f.tree, n, &w, &f.coeffs);
    lf.iter().zip(&g.coeffs).map(|(l, gv)| l * gv.conj()).sum::<Complex64>() * 2.0
}

/// `‖f | W^{s,p}‖ = (‖f‖_p^p + [f]_{s,p}^p)^{1/p}`, for `sp < D`.
pub fn sobolev_norm(f: &CylinderFunction, s: f64, p: f64) -> Result<f64> {
    if s * p >= f.tree.dim() {
        return Err(Error::ParamError(format!("need s·p < D, got s·p = {}", s * p)));
    }
    Ok((lp_norm(f, p).powf(p) + gagliardo_seminorm_pow(f, s, p)).powf(1.0 / p))
}

/// `∫_{B(ξ, e^{-n})} d^{-α}(ξ, η) dν(η)` for `0 <= α < D`; the ball is a depth-`n+1` cylinder.
pub fn ball_riesz_integral(tree: &Tree, n: usize, alpha: f64) -> Result<f64> {
    let ratio = (alpha - tree.dim()).exp();
    if ratio >= 1.0 {
        return Err(Error::TailDivergence(format!("α = {alpha} must stay below D")));
    }
    // Points at Gromov product ℓ >= n+1 form a shell of mass ν_ℓ (k−2)/(k−1).
    let first = (alpha * (n + 1) as f64).exp() * tree.measure(n + 1) * (tree.k - 2) as f64 / (tree.k - 1) as f64;
    Ok(first / (1.0 - ratio))
}

/// `∫_{Z∖B(ξ, e^{-n})} d^{-(D+α)}(ξ, η) dν(η)`, a finite sum over shells `ℓ = 0..=n`.
pub fn complement_riesz_integral(tree: &Tree, n: usize, alpha: f64) -> f64 {
    (0..=n)
        .map(|l| {
            let shell = tree.ball_measure(l) - tree.measure(l + 1);
            ((tree.dim() + alpha) * l as f64).exp() * shell
        })
        .sum()
}

/// Value of a norm on `Z_a` together with a bound on what truncating the tail near `a` missed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormReport {
    pub value: f64,
    pub truncation_error_bound: f64,
    pub depth_used: usize,
}

/// Values on the tail cylinder `C_{a|M}`, as a function of `d(a, ·)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tail {
    Const(Complex64),
    /// `coef · d(a, ξ)^exponent`.
    Power { coef: Complex64, exponent: Complex64 },
}

impl Tail {
    pub fn zero() -> Self {
        Tail::Const(ZERO)
    }

    /// Value on the shell of level `j` (where `d(a, ·) = e^{-(j-1)}`).
    pub fn at_level(&self, j: usize) -> Complex64 {
        match *self {
            Tail::Const(c) => c,
            Tail::Power { coef, exponent } => coef * (-exponent * (j - 1) as f64).exp(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Tail::Const(c) => c == ZERO,
            Tail::Power { coef, .. } => coef == ZERO,
        }
    }

    pub fn scale(&self, c: Complex64) -> Tail {
        match *self {
            Tail::Const(v) => Tail::Const(v * c),
            Tail::Power { coef, exponent } => Tail::Power { coef: coef * c, exponent },
        }
    }

    /// Difference between two tail descriptions, `∞` when they are not comparable.
    pub fn distance(&self, other: &Tail) -> f64 {
        match (*self, *other) {
            (Tail::Const(a), Tail::Const(b)) => (a - b).norm(),
            (Tail::Power { coef: a, exponent: x }, Tail::Power { coef: b, exponent: y }) => {
                if (x - y).norm() <= 1e-12 * (1.0 + x.norm()) {
                    (a - b).norm()
                } else if a == ZERO && b == ZERO {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            (Tail::Const(c), Tail::Power { coef, .. }) | (Tail::Power { coef, .. }, Tail::Const(c)) => {
                if c == ZERO && coef == ZERO {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// A function on `Z_a` constant on the adaptive shell partition around `a`:
///
/// * cells: the depth-`resolution` cylinders other than `C_{a|resolution}`;
/// * shells: for each level `j` in `resolution+1..=truncation`, the `k−2` sibling cylinders of
///   depth `j` that branch off the ray of `a` (on them `d(a, ·) = e^{-(j-1)}`);
/// * tail: the cylinder `C_{a|truncation}`, described by a [`Tail`].
///
/// With `resolution = 1` this is exactly the partition into sibling cylinders of the ray of `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShellFunction {
    tree: Tree,
    basepoint: BoundaryPoint,
    resolution: usize,
    truncation: usize,
    cells: Vec<Complex64>,
    shells: Vec<Complex64>,
    tail: Tail,
}

/// One piece of the shell partition: a cylinder not containing `a`.
#[derive(Clone, Debug)]
pub struct Atom {
    pub prefix: Vec<Letter>,
    /// `⟨atom, a⟩ + 1`, so that `d(a, ·) = e^{-(level-1)}` on the atom.
    pub level: usize,
}

impl ShellFunction {
    pub fn new(
        tree: Tree,
        basepoint: BoundaryPoint,
        resolution: usize,
        truncation: usize,
        cells: Vec<Complex64>,
        shells: Vec<Complex64>,
        tail: Tail,
    ) -> Result<Self> {
        basepoint.check_in(&tree)?;
        if resolution == 0 || truncation < resolution {
            return Err(Error::ParamError(format!(
                "need 1 <= resolution <= truncation, got {resolution} and {truncation}"
            )));
        }
        let f = ShellFunction { tree, basepoint, resolution, truncation, cells: Vec::new(), shells: Vec::new(), tail };
        if cells.len() != f.cell_count() || shells.len() != f.shell_count() {
            return Err(Error::ParamError("coefficient count does not match the shell partition".into()));
        }
        Ok(ShellFunction { cells, shells, ..f })
    }

    pub fn zeros(tree: Tree, basepoint: BoundaryPoint, resolution: usize, truncation: usize) -> Result<Self> {
        Self::from_fn(tree, basepoint, resolution, truncation, Tail::zero(), |_| ZERO)
    }

    /// Builds a shell function from a value per atom.
    pub fn from_fn(
        tree: Tree,
        basepoint: BoundaryPoint,
        resolution: usize,
        truncation: usize,
        tail: Tail,
        mut f: impl FnMut(&Atom) -> Complex64,
    ) -> Result<Self> {
        basepoint.check_in(&tree)?;
        if resolution == 0 || truncation < resolution {
            return Err(Error::ParamError(format!(
                "need 1 <= resolution <= truncation, got {resolution} and {truncation}"
            )));
        }
        let mut out =
            ShellFunction { tree, basepoint, resolution, truncation, cells: Vec::new(), shells: Vec::new(), tail };
        let atoms = out.atoms();
        let values: Vec<Complex64> = atoms.iter().map(&mut f).collect();
        out.set_values(&values);
        Ok(out)
    }

    /// Random complex Gaussian values on every atom; the tail is zero.
    pub fn random(
        tree: Tree,
        basepoint: BoundaryPoint,
        resolution: usize,
        truncation: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::from_fn(tree, basepoint, resolution, truncation, Tail::zero(), |_| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    pub fn tree(&self) -> Tree {
        self.tree
    }
    pub fn basepoint(&self) -> &BoundaryPoint {
        &self.basepoint
    }
    pub fn resolution(&self) -> usize {
        self.resolution
    }
    pub fn truncation(&self) -> usize {
        self.truncation
    }
    pub fn cells(&self) -> &[Complex64] {
        &self.cells
    }
    pub fn shells(&self) -> &[Complex64] {
        &self.shells
    }
    pub fn tail(&self) -> Tail {
        self.tail
    }
    pub fn set_tail(&mut self, tail: Tail) {
        self.tail = tail;
    }

    fn cell_count(&self) -> usize {
        self.tree.count(self.resolution) - 1
    }

    fn shell_count(&self) -> usize {
        (self.truncation - self.resolution) * (self.tree.k - 2)
    }

    /// Letters that branch off the ray of `a` at depth `j >= 2`, in increasing order.
    fn sibling_letters(&self, j: usize) -> impl Iterator<Item = Letter> + '_ {
        let on_ray = self.basepoint.letter(j - 1);
        let back = inv(self.basepoint.letter(j - 2));
        self.tree.letters().filter(move |&l| l != on_ray && l != back)
    }

    /// The atoms in storage order: cells, then shells level by level.
    pub fn atoms(&self) -> Vec<Atom> {
        let (tree, r) = (self.tree, self.resolution);
        let a_idx = tree.index_of(&self.basepoint.prefix(r));
        let mut out = Vec::with_capacity(self.cell_count() + self.shell_count());
        for idx in (0..tree.count(r)).filter(|&i| i != a_idx) {
            let prefix = tree.word_of(r, idx);
            let level = self.basepoint.common_prefix_with(&prefix) + 1;
            out.push(Atom { prefix, level });
        }
        for j in (r + 1)..=self.truncation {
            let base = self.basepoint.prefix(j - 1);
            for l in self.sibling_letters(j) {
                let mut prefix = base.clone();
                prefix.push(l);
                out.push(Atom { prefix, level: j });
            }
        }
        out
    }

    /// Values in atom order.
    pub fn values(&self) -> Vec<Complex64> {
        self.cells.iter().chain(&self.shells).copied().collect()
    }

    pub fn set_values(&mut self, values: &[Complex64]) {
        let nc = self.cell_count();
        assert_eq!(values.len(), nc + self.shell_count());
        self.cells = values[..nc].to_vec();
        self.shells = values[nc..].to_vec();
    }

    /// Value on a cylinder lying inside a single atom or inside the tail region.
    pub fn eval_cylinder(&self, letters: &[Letter]) -> Result<Complex64> {
        let (r, m) = (self.resolution, self.truncation);
        let l = self.basepoint.common_prefix_with(letters);
        if l == letters.len() {
            return match self.tail {
                Tail::Const(c) if l >= m => Ok(c),
                _ => Err(Error::ContainsBasepoint),
            };
        }
        let level = l + 1;
        if level <= r {
            if letters.len() < r {
                return Err(Error::ParamError(format!("cylinder of depth {} is coarser than the cells", letters.len())));
            }
            let idx = self.tree.index_of(&letters[..r]);
            let a_idx = self.tree.index_of(&self.basepoint.prefix(r));
            Ok(self.cells[if idx < a_idx { idx } else { idx - 1 }])
        } else if level <= m {
            let rank = self.sibling_letters(level).position(|x| x == letters[level - 1]).unwrap();
            Ok(self.shells[(level - r - 1) * (self.tree.k - 2) + rank])
        } else {
            Ok(self.tail.at_level(level))
        }
    }

    /// The same function on a finer partition.
    pub fn refine_to(&self, resolution: usize, truncation: usize) -> Result<ShellFunction> {
        if resolution < self.resolution || truncation < self.truncation || truncation < resolution {
            return Err(Error::ParamError("refinement must not coarsen the partition".into()));
        }
        let mut out = ShellFunction {
            resolution,
            truncation,
            cells: Vec::new(),
            shells: Vec::new(),
            ..self.clone()
        };
        let values: Result<Vec<Complex64>> = out.atoms().iter().map(|a| self.eval_cylinder(&a.prefix)).collect();
        out.set_values(&values?);
        Ok(out)
    }

    /// Largest difference from `other` on a common refinement (including the tail description).
    pub fn max_abs_diff(&self, other: &ShellFunction) -> Result<f64> {
        if self.basepoint != other.basepoint {
            return Err(Error::ParamError("shell functions live on different charts".into()));
        }
        let r = self.resolution.max(other.resolution);
        let m = self.truncation.max(other.truncation).max(r);
        let (a, b) = (self.refine_to(r, m)?, other.refine_to(r, m)?);
        let body = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        Ok(body.max(a.tail.distance(&b.tail)))
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, c: Complex64) -> ShellFunction {
        let mut out = self.clone();
        out.cells.iter_mut().chain(out.shells.iter_mut()).for_each(|v| *v *= c);
        out.tail = self.tail.scale(c);
        out
    }

    /// `ν_a` of every atom.
    pub fn atom_masses(&self) -> Vec<f64> {
        let d = self.tree.dim();
        self.atoms()
            .iter()
            .map(|a| (2.0 * d * (a.level - 1) as f64).exp() * self.tree.measure(a.prefix.len()))
            .collect()
    }
}

/// `ν_a` of the whole level-`j` shell (all `k−2` siblings), `j >= 2`.
pub fn shell_level_mass(tree: &Tree, j: usize) -> f64 {
    (tree.k - 2) as f64 * ((tree.k - 1) as f64).powi(j as i32 - 1) / tree.k as f64
}

/// Pair weights `d_a^{-(D+σ)} ν_a ⊗ ν_a` between the pieces of a shell partition, optionally
/// extended by whole shell levels `truncation+1..=levels_to`, plus the weight of each piece
/// against everything beyond `levels_to` (the "far" region, treated as one constant piece).
#[derive(Clone, Debug)]
pub struct AtomicForm {
    pub n: usize,
    pub weights: Vec<f64>,
    pub far: Vec<f64>,
}

impl AtomicForm {
    /// `atoms` are the explicit pieces; `extra_levels` lists whole shell levels appended after them.
    pub fn for_chart(tree: &Tree, atoms: &[Atom], extra_levels: std::ops::RangeInclusive<usize>, sigma: f64) -> Result<Self> {
        if sigma <= 0.0 {
            return Err(Error::TailDivergence(format!("kernel exponent D + {sigma} leaves a non-summable tail")));
        }
        let d = tree.dim();
        let mut levels: Vec<usize> = atoms.iter().map(|a| a.level).collect();
        let mut masses: Vec<f64> = atoms
            .iter()
            .map(|a| (2.0 * d * (a.level - 1) as f64).exp() * tree.measure(a.prefix.len()))
            .collect();
        let n_explicit = atoms.len();
        let last_level = *extra_levels.end();
        for j in extra_levels.clone() {
            levels.push(j);
            masses.push(shell_level_mass(tree, j));
        }
        let far_from = atoms.iter().map(|a| a.level).max().unwrap_or(1).max(last_level);
        let n = levels.len();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let gp = if i < n_explicit && j < n_explicit {
                    common_prefix(&atoms[i].prefix, &atoms[j].prefix)
                } else {
                    levels[i].min(levels[j]) - 1
                };
                let log_da = -(gp as f64) + (levels[i] - 1) as f64 + (levels[j] - 1) as f64;
                let w = (-(d + sigma) * log_da).exp() * masses[i] * masses[j];
                weights[i * n + j] = w;
                weights[j * n + i] = w;
            }
        }
        let rho = (-sigma).exp();
        let far_factor = (tree.k - 2) as f64 / tree.k as f64 * (-sigma * far_from as f64).exp() / (1.0 - rho);
        let far = masses.iter().map(|m| m * far_factor).collect();
        Ok(AtomicForm { n, weights, far })
    }

    #[inline]
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// `Σ_{α≠β} |f_α − f_β|^p W_αβ + 2 Σ_α |f_α − far_value|^p far_α` over ordered pairs.
    pub fn seminorm_pow(&self, values: &[Complex64], far_value: Complex64, p: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let d = (values[i] - values[j]).norm();
                if d > 0.0 {
                    acc += d.powf(p) * self.w(i, j);
                }
            }
            acc += (values[i] - far_value).norm().powf(p) * self.far[i];
        }
        2.0 * acc
    }

    /// Sesquilinear version of the `p = 2` form, over ordered pairs.
    pub fn bilinear(&self, f: &[Complex64], g: &[Complex64], far_f: Complex64, far_g: Complex64) -> Complex64 {
        let mut acc = ZERO;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                acc += (f[i] - f[j]) * (g[i] - g[j]).conj() * self.w(i, j);
            }
            acc += (f[i] - far_f) * (g[i] - far_g).conj() * self.far[i];
        }
        acc * 2.0
    }

    /// `(Lf)_α = Σ_β W_αβ (f_α − f_β) + far_α (f_α − far_value)`.
    pub fn laplacian_apply(&self, values: &[Complex64], far_value: Complex64) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| {
                let mut acc = (values[i] - far_value) * self.far[i];
                for j in 0..self.n {
                    if j != i {
                        acc += (values[i] - values[j]) * self.w(i, j);
                    }
                }
                acc
            })
            .collect()
    }

    /// Gram matrix of the `p = 2` form with far value zero: `2 (diag(Σ_β W + far) − W)`.
    pub fn gram(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n;
        nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * ((0..n).filter(|&l| l != i).map(|l| self.w(i, l)).sum::<f64>() + self.far[i])
            } else {
                -2.0 * self.w(i, j)
            }
        })
    }
}

/// Refines two shell functions on the same chart to their common partition.
fn common_partition(f: &ShellFunction, g: &ShellFunction) -> Result<(ShellFunction, ShellFunction)> {
    if f.basepoint != g.basepoint {
        return Err(Error::ParamError("shell functions live on different charts".into()));
    }
    let r = f.resolution.max(g.resolution);
    let m = f.truncation.max(g.truncation).max(r);
    Ok((f.refine_to(r, m)?, g.refine_to(r, m)?))
}

/// `⟨f, g⟩` in `L²(ν_a)`; one of the two must vanish near `a`.
pub fn l2_inner_on_za(f: &ShellFunction, g: &ShellFunction) -> Result<Complex64> {
    if !(f.tail.is_zero() || g.tail.is_zero()) {
        return Err(Error::NonzeroNearBasepoint);
    }
    let (f, g) = common_partition(f, g)?;
    let masses = f.atom_masses();
    Ok(f.values().iter().zip(g.values()).zip(masses).map(|((x, y), m)| x * y.conj() * m).sum())
}

/// The sesquilinear `Ẇ^{s,2}(Z_a)` form `Σ (f(ξ)−f(η)) conj(g(ξ)−g(η)) d_a^{−(D+2s)} dν_a dν_a`,
/// for functions that are constant near `a`.
pub fn gagliardo_bilinear_on_za(f: &ShellFunction, g: &ShellFunction, s: f64) -> Result<Complex64> {
    let (f, g) = common_partition(f, g)?;
    let (Tail::Const(cf), Tail::Const(cg)) = (f.tail, g.tail) else {
        return Err(Error::ParamError("the bilinear form needs constant tails".into()));
    };
    let m = f.truncation;
    let form = AtomicForm::for_chart(&f.tree, &f.atoms(), (m + 1)..=m, 2.0 * s)?;
    Ok(form.bilinear(&f.values(), &g.values(), cf, cg))
}

/// Number of whole tail levels to expand explicitly so that the neglected part of a power tail
/// decays by a factor `1e-32` relative to the first tail level.
fn tail_levels_needed(decay: f64) -> usize {
    ((32.0 * 10f64.ln()) / decay).ceil().min(4000.0) as usize
}

/// `[f]_{s,p}` on `(Z_a, d_a, ν_a)`.
///
/// Constant tails are summed in closed form. Power tails `c·d(a,·)^w` are expanded level by level
/// and the remainder is bounded by a geometric series; this needs `p·Re w + s·p > D`.
pub fn gagliardo_seminorm_on_za(f: &ShellFunction, s: f64, p: f64) -> Result<NormReport> {
    let tree = f.tree;
    let d = tree.dim();
    let sp = s * p;
    if f.truncation < 2 {
        return Err(Error::ParamError("truncation depth must be at least 2".into()));
    }
    let atoms = f.atoms();
    let mut values = f.values();
    let m = f.truncation;
    match f.tail {
        Tail::Const(c) => {
            let form = AtomicForm::for_chart(&tree, &atoms, (m + 1)..=m, sp)?;
            Ok(NormReport { value: form.seminorm_pow(&values, c, p).powf(1.0 / p), truncation_error_bound: 0.0, depth_used: m })
        }
        Tail::Power { coef, exponent } => {
            let rho = exponent.re;
            let decay = rho * p + sp - d;
            if rho <= 0.0 || decay <= 0.0 {
                return Err(Error::TailDivergence(format!("power tail with Re w = {rho} is not summable at s·p = {sp}")));
            }
            let j_max = m + tail_levels_needed(decay);
            let form = AtomicForm::for_chart(&tree, &atoms, (m + 1)..=j_max, sp)?;
            values.extend(((m + 1)..=j_max).map(|j| f.tail.at_level(j)));
            let value = form.seminorm_pow(&values, ZERO, p).powf(1.0 / p);
            let bound = power_tail_bound(&tree, &form, coef.norm(), rho, s, p, j_max)?;
            Ok(NormReport { value, truncation_error_bound: bound, depth_used: j_max })
        }
    }
}

/// Bound on `[c·d(a,·)^w · 1_{levels > J}]_{s,p}` (the piece replaced by zero beyond level `J`).
fn power_tail_bound(tree: &Tree, form: &AtomicForm, c: f64, rho: f64, s: f64, p: f64, j: usize) -> Result<f64> {
    let (d, sp) = (tree.dim(), s * p);
    let q = (tree.k - 2) as f64 / tree.k as f64;
    let far_factor = q * (-sp * j as f64).exp() / (1.0 - (-sp).exp());
    let total_mass: f64 = form.far.iter().sum::<f64>() / far_factor;
    let a = rho * p + sp;
    let part1 = 2.0 * total_mass * q * c.powf(p) * (-a * j as f64).exp() / (1.0 - (-a).exp());
    let r = (d - rho * p - sp).exp();
    if r >= 1.0 {
        return Err(Error::TailDivergence("power tail decays too slowly".into()));
    }
    let part2 = 2f64.powf(p + 1.0) * c.powf(p) * q * q * (-sp).exp() / (1.0 - (-sp).exp()) * r.powi(j as i32) / (1.0 - r);
    Ok((part1 + part2).powf(1.0 / p))
}
