//! Free groups, the boundary of their Cayley tree, the visual metric and the Möbius action.
//!
//! Letters are small integers: generator `i` is `2i`, its inverse is `2i + 1`, so inversion is
//! `l ^ 1`. In text, generators are lowercase (`a`, `b`, ...) and inverses uppercase.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Letter = u8;

#[inline]
pub fn inv(l: Letter) -> Letter {
    l ^ 1
}

/// Length of the longest common prefix of two letter sequences.
#[inline]
pub fn common_prefix(a: &[Letter], b: &[Letter]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// The tree of the free group on `m` generators: valence `k = 2m`, boundary dimension `ln(k-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tree {
    pub m: usize,
    pub k: usize,
}

impl Tree {
    pub fn new(m: usize) -> Result<Self> {
        if !(2..=13).contains(&m) {
            return Err(Error::ParamError(format!("m = {m} must lie in 2..=13")));
        }
        Ok(Tree { m, k: 2 * m })
    }

    /// Hausdorff dimension of the boundary.
    pub fn dim(&self) -> f64 {
        ((self.k - 1) as f64).ln()
    }

    /// Number of cylinders of depth `n >= 1`.
    pub fn count(&self, n: usize) -> usize {
        assert!(n >= 1, "cylinder depth starts at 1");
        self.k * (self.k - 1).pow(n as u32 - 1)
    }

    /// Measure of a single depth-`n` cylinder.
    pub fn measure(&self, n: usize) -> f64 {
        assert!(n >= 1, "cylinder depth starts at 1");
        1.0 / (self.k as f64 * ((self.k - 1) as f64).powi(n as i32 - 1))
    }

    /// Measure of the cylinder of depth `n`, with `n = 0` meaning the whole boundary.
    pub fn ball_measure(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.measure(n)
        }
    }

    pub fn letters(&self) -> impl Iterator<Item = Letter> {
        0..self.k as Letter
    }

    /// Canonical (lexicographic) index of a reduced word among the cylinders of its depth.
    pub fn index_of(&self, w: &[Letter]) -> usize {
        let b = self.k - 1;
        let mut idx = w[0] as usize;
        for i in 1..w.len() {
            let l = w[i];
            let forbidden = inv(w[i - 1]);
            let rank = if l < forbidden { l } else { l - 1 } as usize;
            idx = idx * b + rank;
        }
        idx
    }

    /// Inverse of [`Tree::index_of`].
    pub fn word_of(&self, n: usize, mut idx: usize) -> Vec<Letter> {
        let b = self.k - 1;
        let mut ranks = vec![0usize; n];
        for i in (1..n).rev() {
            ranks[i] = idx % b;
            idx /= b;
        }
        let mut w = Vec::with_capacity(n);
        w.push(idx as Letter);
        for i in 1..n {
            let forbidden = inv(w[i - 1]) as usize;
            let r = ranks[i];
            w.push(if r < forbidden { r } else { r + 1 } as Letter);
        }
        w
    }

    /// Index of the depth-`j` ancestor of the depth-`n` cylinder `idx`.
    #[inline]
    pub fn ancestor(&self, idx: usize, n: usize, j: usize) -> usize {
        idx / (self.k - 1).pow((n - j) as u32)
    }

    /// Gromov product of two distinct depth-`n` cylinders given by index.
    #[inline]
    pub fn gromov_idx(&self, mut u: usize, mut v: usize, n: usize) -> usize {
        let b = self.k - 1;
        let mut l = n;
        while u != v {
            if l == 1 {
                return 0;
            }
            u /= b;
            v /= b;
            l -= 1;
        }
        l
    }
}

/// A freely reduced word; the empty word is the identity (the root vertex `o`).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    letters: Vec<Letter>,
}

/// Free reduction of an arbitrary letter sequence.
pub fn reduce(letters: &[Letter]) -> Word {
    let mut out: Vec<Letter> = Vec::with_capacity(letters.len());
    for &l in letters {
        if out.last() == Some(&inv(l)) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    Word { letters: out }
}

impl Word {
    pub fn identity() -> Self {
        Word::default()
    }

    pub fn from_letters(raw: &[Letter]) -> Self {
        reduce(raw)
    }

    /// Parses `a`..`z` as generators and `A`..`Z` as their inverses; `1` or `""` is the identity.
    pub fn parse(s: &str) -> Result<Self> {
        let mut raw = Vec::new();
        for ch in s.trim().chars() {
            match ch {
                'a'..='z' => raw.push(2 * (ch as u8 - b'a')),
                'A'..='Z' => raw.push(2 * (ch as u8 - b'A') + 1),
                '1' => {}
                _ => return Err(Error::ParamError(format!("bad letter {ch:?} in word {s:?}"))),
            }
        }
        Ok(reduce(&raw))
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn inverse(&self) -> Word {
        Word { letters: self.letters.iter().rev().map(|&l| inv(l)).collect() }
    }

    pub fn mul(&self, other: &Word) -> Word {
        let mut raw = self.letters.clone();
        raw.extend_from_slice(&other.letters);
        reduce(&raw)
    }

    pub fn pow(&self, n: usize) -> Word {
        let raw: Vec<Letter> = (0..n).flat_map(|_| self.letters.iter().copied()).collect();
        reduce(&raw)
    }

    /// Largest generator index used plus one.
    pub fn rank_used(&self) -> usize {
        self.letters.iter().map(|&l| l as usize / 2 + 1).max().unwrap_or(0)
    }

    /// All reduced words of length at most `radius` over `tree`, shortest first, then canonical.
    pub fn ball(tree: &Tree, radius: usize) -> Vec<Word> {
        let mut out = vec![Word::identity()];
        for n in 1..=radius {
            for idx in 0..tree.count(n) {
                out.push(Word { letters: tree.word_of(n, idx) });
            }
        }
        out
    }
}

fn fmt_letters(f: &mut fmt::Formatter<'_>, letters: &[Letter]) -> fmt::Result {
    for &l in letters {
        let base = if l % 2 == 0 { b'a' } else { b'A' };
        write!(f, "{}", (base + l / 2) as char)?;
    }
    Ok(())
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            write!(f, "1")
        } else {
            fmt_letters(f, &self.letters)
        }
    }
}

/// The set of boundary points whose ray starts with `prefix`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cylinder {
    prefix: Word,
}

impl Cylinder {
    pub fn new(prefix: Word) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::ParamError("a cylinder needs a non-empty prefix".into()));
        }
        Ok(Cylinder { prefix })
    }

    pub fn parse(s: &str) -> Result<Self> {
        Cylinder::new(Word::parse(s)?)
    }

    pub fn from_index(tree: &Tree, depth: usize, idx: usize) -> Self {
        Cylinder { prefix: Word { letters: tree.word_of(depth, idx) } }
    }

    pub fn prefix(&self) -> &Word {
        &self.prefix
    }

    pub fn letters(&self) -> &[Letter] {
        self.prefix.letters()
    }

    pub fn depth(&self) -> usize {
        self.prefix.len()
    }

    pub fn index(&self, tree: &Tree) -> usize {
        tree.index_of(self.letters())
    }

    pub fn contains(&self, other: &Cylinder) -> bool {
        other.depth() >= self.depth() && common_prefix(self.letters(), other.letters()) == self.depth()
    }

    pub fn children(&self, tree: &Tree) -> Vec<Cylinder> {
        let last = *self.letters().last().unwrap();
        tree.letters()
            .filter(|&l| l != inv(last))
            .map(|l| {
                let mut w = self.letters().to_vec();
                w.push(l);
                Cylinder { prefix: Word { letters: w } }
            })
            .collect()
    }
}

impl fmt::Display for Cylinder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C[{}]", self.prefix)
    }
}

/// An eventually periodic boundary point `head · period · period · …`, kept in canonical form
/// (shortest head, primitive period) so that equality of values is equality of points.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoundaryPoint {
    head: Vec<Letter>,
    period: Vec<Letter>,
}

impl BoundaryPoint {
    pub fn new(head: &Word, period: &Word) -> Result<Self> {
        Self::from_raw(head.letters().to_vec(), period.letters().to_vec())
    }

    fn from_raw(mut head: Vec<Letter>, mut period: Vec<Letter>) -> Result<Self> {
        if period.is_empty() {
            return Err(Error::ParamError("boundary point needs a non-empty period".into()));
        }
        let reduced = |w: &[Letter]| w.windows(2).all(|p| p[1] != inv(p[0]));
        let cyclic_ok = period.len() == 1 || *period.last().unwrap() != inv(period[0]);
        let junction_ok = head.last().is_none_or(|&l| l != inv(period[0]));
        if !(reduced(&head) && reduced(&period) && cyclic_ok && junction_ok) {
            return Err(Error::ParamError("head·period^∞ is not freely reduced".into()));
        }
        let n = period.len();
        if let Some(d) = (1..=n).find(|&d| n.is_multiple_of(d) && (0..n).all(|i| period[i] == period[i % d])) {
            period.truncate(d);
        }
        while let Some(&h) = head.last() {
            if h != *period.last().unwrap() {
                break;
            }
            head.pop();
            period.rotate_right(1);
        }
        Ok(BoundaryPoint { head, period })
    }

    /// Parses `head/period`, e.g. `/a` for `a^∞` or `bA/ab`.
    pub fn parse(s: &str) -> Result<Self> {
        let (h, p) = s
            .split_once('/')
            .ok_or_else(|| Error::ParamError(format!("boundary point {s:?} must be head/period")))?;
        let parse_raw = |t: &str| -> Result<Vec<Letter>> {
            let w = Word::parse(t)?;
            let raw_len = t.trim().chars().filter(|c| *c != '1').count();
            if w.len() != raw_len {
                return Err(Error::ParamError(format!("{t:?} is not freely reduced")));
            }
            Ok(w.letters().to_vec())
        };
        Self::from_raw(parse_raw(h)?, parse_raw(p)?)
    }

    pub fn head(&self) -> Word {
        Word { letters: self.head.clone() }
    }

    pub fn period(&self) -> Word {
        Word { letters: self.period.clone() }
    }

    pub fn letter(&self, i: usize) -> Letter {
        if i < self.head.len() {
            self.head[i]
        } else {
            self.period[(i - self.head.len()) % self.period.len()]
        }
    }

    /// The first `n` letters of the ray.
    pub fn prefix(&self, n: usize) -> Vec<Letter> {
        (0..n).map(|i| self.letter(i)).collect()
    }

    pub fn in_cylinder(&self, c: &Cylinder) -> bool {
        c.letters().iter().enumerate().all(|(i, &l)| self.letter(i) == l)
    }

    /// Common prefix length with a finite letter sequence.
    pub fn common_prefix_with(&self, w: &[Letter]) -> usize {
        w.iter().enumerate().take_while(|(i, &l)| self.letter(*i) == l).count()
    }

    /// The image `g·ξ`.
    pub fn translate(&self, g: &Word) -> BoundaryPoint {
        let reps = g.len() / self.period.len() + 2;
        let mut raw = g.letters().to_vec();
        raw.extend_from_slice(&self.head);
        for _ in 0..reps {
            raw.extend_from_slice(&self.period);
        }
        let w = reduce(&raw);
        BoundaryPoint::from_raw(w.letters, self.period.clone()).expect("translate keeps reduction")
    }

    fn max_letter(&self) -> usize {
        self.head.iter().chain(&self.period).map(|&l| l as usize / 2 + 1).max().unwrap_or(0)
    }

    pub fn check_in(&self, tree: &Tree) -> Result<()> {
        if self.max_letter() > tree.m {
            return Err(Error::ParamError(format!("{self} uses more than {} generators", tree.m)));
        }
        Ok(())
    }
}

impl fmt::Display for BoundaryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_letters(f, &self.head)?;
        write!(f, "/")?;
        fmt_letters(f, &self.period)
    }
}

/// Anything the Gromov product accepts: vertices, cylinders and boundary points.
#[derive(Clone, Copy, Debug)]
pub enum Obj<'a> {
    Vertex(&'a Word),
    Cylinder(&'a Cylinder),
    Point(&'a BoundaryPoint),
}

impl<'a> From<&'a Word> for Obj<'a> {
    fn from(w: &'a Word) -> Self {
        Obj::Vertex(w)
    }
}
impl<'a> From<&'a Cylinder> for Obj<'a> {
    fn from(c: &'a Cylinder) -> Self {
        Obj::Cylinder(c)
    }
}
impl<'a> From<&'a BoundaryPoint> for Obj<'a> {
    fn from(p: &'a BoundaryPoint) -> Self {
        Obj::Point(p)
    }
}

impl Obj<'_> {
    fn finite_letters(&self) -> Option<&[Letter]> {
        match self {
            Obj::Vertex(w) => Some(w.letters()),
            Obj::Cylinder(c) => Some(c.letters()),
            Obj::Point(_) => None,
        }
    }
}

/// Gromov product at the root, with `Infinite` for a point paired with itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Extended {
    Finite(usize),
    Infinite,
}

impl Extended {
    pub fn finite(self) -> Option<usize> {
        match self {
            Extended::Finite(n) => Some(n),
            Extended::Infinite => None,
        }
    }
}

/// Common-prefix length. Cylinders must not be nested in each other (a boundary point inside a
/// cylinder counts as nested); vertices never raise.
pub fn gromov_product<'a, 'b>(u: impl Into<Obj<'a>>, v: impl Into<Obj<'b>>) -> Result<Extended> {
    let (u, v) = (u.into(), v.into());
    let l = match (u.finite_letters(), v.finite_letters()) {
        (Some(a), Some(b)) => common_prefix(a, b),
        (Some(a), None) => match v {
            Obj::Point(p) => p.common_prefix_with(a),
            _ => unreachable!(),
        },
        (None, Some(b)) => match u {
            Obj::Point(p) => p.common_prefix_with(b),
            _ => unreachable!(),
        },
        (None, None) => {
            let (Obj::Point(p), Obj::Point(q)) = (u, v) else { unreachable!() };
            if p == q {
                return Ok(Extended::Infinite);
            }
            let bound = p.head.len() + q.head.len() + p.period.len() * q.period.len() + 1;
            (0..bound).take_while(|&i| p.letter(i) == q.letter(i)).count()
        }
    };
    let nested = |o: &Obj| matches!(o, Obj::Cylinder(c) if c.depth() == l);
    let is_vertex = matches!(u, Obj::Vertex(_)) || matches!(v, Obj::Vertex(_));
    if !is_vertex && (nested(&u) || nested(&v)) {
        return Err(Error::NestedCylinders);
    }
    Ok(Extended::Finite(l))
}

/// `d = exp(-⟨u, v⟩)`.
pub fn visual_distance<'a, 'b>(u: impl Into<Obj<'a>>, v: impl Into<Obj<'b>>) -> Result<f64> {
    Ok(match gromov_product(u, v)? {
        Extended::Finite(n) => (-(n as f64)).exp(),
        Extended::Infinite => 0.0,
    })
}

/// Normalised Hausdorff measure: every cylinder of a given depth has the same mass, total 1.
pub fn cylinder_measure(tree: &Tree, c: &Cylinder) -> f64 {
    tree.measure(c.depth())
}

/// Number of letters of `w` cancelled when multiplying by `g` on the left.
pub fn cancellation(g: &Word, w: &[Letter]) -> usize {
    common_prefix(g.inverse().letters(), w)
}

/// The cylinder `g·C`.
pub fn act_on_cylinder(g: &Word, c: &Cylinder) -> Result<Cylinder> {
    if cancellation(g, c.letters()) >= c.depth() {
        return Err(Error::FullCancellation);
    }
    Ok(Cylinder { prefix: g.mul(c.prefix()) })
}

/// `ln |g'|` on `obj`, i.e. `2⟨g⁻¹, obj⟩ - |g|`; cylinders must be at least `|g|` deep.
pub fn log_metric_derivative<'a>(g: &Word, obj: impl Into<Obj<'a>>) -> Result<i64> {
    Ok(-busemann(&g.inverse(), obj)?)
}

/// `|g'|` on a cylinder of depth at least `|g|`.
pub fn metric_derivative(g: &Word, c: &Cylinder) -> Result<f64> {
    Ok((log_metric_derivative(g, c)? as f64).exp())
}

/// `|g'|^z` for complex `z`.
pub fn metric_derivative_pow<'a>(g: &Word, obj: impl Into<Obj<'a>>, z: Complex64) -> Result<Complex64> {
    Ok((z * log_metric_derivative(g, obj)? as f64).exp())
}

/// Busemann function `β(ξ, x, o) = |x| - 2⟨x, ξ⟩`.
pub fn busemann<'a>(x: &Word, xi: impl Into<Obj<'a>>) -> Result<i64> {
    let xi = xi.into();
    if let Obj::Cylinder(c) = xi {
        if c.depth() < x.len() {
            return Err(Error::DepthTooShallow { depth: c.depth(), required: x.len() });
        }
    }
    let l = gromov_product(x, xi)?.finite().expect("vertex products are finite");
    Ok(x.len() as i64 - 2 * l as i64)
}

/// `[x, y; z, w] = d(x,z) d(y,w) / (d(x,w) d(y,z))`.
pub fn cross_ratio<'a, 'b, 'c, 'd>(
    x: impl Into<Obj<'a>>,
    y: impl Into<Obj<'b>>,
    z: impl Into<Obj<'c>>,
    w: impl Into<Obj<'d>>,
) -> Result<f64> {
    let (x, y, z, w) = (x.into(), y.into(), z.into(), w.into());
    let e = |a: Obj, b: Obj| -> Result<i64> {
        gromov_product(a, b)?
            .finite()
            .map(|n| n as i64)
            .ok_or_else(|| Error::ParamError("cross-ratio needs distinct points".into()))
    };
    // Work with exponents so deep configurations do not underflow.
    let log = -e(x, z)? - e(y, w)? + e(x, w)? + e(y, z)?;
    Ok((log as f64).exp())
}

/// Distance in the chart at `a`: `d_a(u, v) = d(u, v) / (d(u, a) d(v, a))`.
pub fn d_a_distance(a: &BoundaryPoint, u: &Cylinder, v: &Cylinder) -> Result<f64> {
    if a.in_cylinder(u) || a.in_cylinder(v) {
        return Err(Error::ContainsBasepoint);
    }
    let uv = gromov_product(u, v)?.finite().unwrap() as f64;
    let ua = gromov_product(u, a)?.finite().unwrap() as f64;
    let va = gromov_product(v, a)?.finite().unwrap() as f64;
    Ok((-uv + ua + va).exp())
}

/// Analysis parameters on top of a tree: smoothness `s`, integrability `p` and twist `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Params {
    pub tree: Tree,
    pub s: f64,
    pub p: f64,
    pub t: f64,
}

impl Params {
    pub fn new(m: usize, s: f64, p: f64, t: f64) -> Result<Self> {
        let tree = Tree::new(m)?;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::ParamError(format!("s = {s} must be positive")));
        }
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::ParamError(format!("p = {p} must be at least 1")));
        }
        if !t.is_finite() {
            return Err(Error::ParamError("t must be finite".into()));
        }
        Ok(Params { tree, s, p, t })
    }

    pub fn dim(&self) -> f64 {
        self.tree.dim()
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.s, self.t)
    }

    /// The Sobolev-side requirement `sp < D`.
    pub fn check_sobolev(&self) -> Result<()> {
        if self.s * self.p >= self.dim() {
            return Err(Error::ParamError(format!(
                "need s·p < D, got s·p = {} and D = {}",
                self.s * self.p,
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn with_t(&self, t: f64) -> Self {
        Params { t, ..*self }
    }

    pub fn with_s(&self, s: f64) -> Self {
        Params { s, ..*self }
    }
}
