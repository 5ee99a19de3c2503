//! Randomised exact-identity suites behind `lab selftest`.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::random_basepoints;
use crate::boundary_core::{act_on_cylinder, cross_ratio, log_metric_derivative, visual_distance, Cylinder, Params, Tree, Word};
use crate::conformal_ops::{cayley_forward, cayley_inverse, BundleChart};
use crate::error::Result;
use crate::function_space::CylinderFunction;
use crate::operators::{factorization_check, rep_pi};

pub const TOLERANCE: f64 = 1e-10;

/// Deliberate corruption, used to check that the suites can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Injection {
    None,
    /// Scales every metric derivative by `1 + 1e-6`.
    Derivative,
}

pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_residual: f64,
}

struct Ctx<'a> {
    tree: Tree,
    words: Vec<Word>,
    rng: &'a mut ChaCha8Rng,
    injection: Injection,
}

impl Ctx<'_> {
    fn word(&mut self) -> Word {
        self.words.choose(self.rng).expect("ball is never empty").clone()
    }

    fn cylinder(&mut self, depth: usize) -> Cylinder {
        let idx = self.rng.random_range(0..self.tree.count(depth));
        Cylinder::from_index(&self.tree, depth, idx)
    }

    fn distinct_cylinders(&mut self, depth: usize, k: usize) -> Vec<Cylinder> {
        let mut out: Vec<Cylinder> = Vec::with_capacity(k);
        while out.len() < k {
            let c = self.cylinder(depth);
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    fn derivative(&self, g: &Word, c: &Cylinder) -> Result<f64> {
        let d = (log_metric_derivative(g, c)? as f64).exp();
        Ok(match self.injection {
            Injection::None => d,
            Injection::Derivative => d * (1.0 + 1e-6),
        })
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Runs every suite with `config.trials` instances each.
pub fn run_suites(config: &ExperimentConfig, injection: Injection, rng: &mut ChaCha8Rng) -> Result<Vec<SuiteResult>> {
    let tree = config.tree();
    let radius = config.group_radius;
    let n = config.depth;
    let trials = config.trials.max(1);
    let s = config.s_grid[0];
    let basepoints = random_basepoints(config, rng)?;
    let mut ctx = Ctx { tree, words: Word::ball(&tree, radius), rng, injection };
    let mut out = Vec::new();
    let mut suite = |name: &'static str, f: &mut dyn FnMut(&mut Ctx) -> Result<f64>| -> Result<()> {
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            worst = worst.max(f(&mut ctx)?);
        }
        out.push(SuiteResult { name, instances: trials, max_residual: worst });
        Ok(())
    };

    suite("geometric_mean_value", &mut |c| {
        let g = c.word();
        let extra = c.rng.random_range(0..3);
        let depth = g.len() + 1 + extra;
        let uv = c.distinct_cylinders(depth, 2);
        let (gu, gv) = (act_on_cylinder(&g, &uv[0])?, act_on_cylinder(&g, &uv[1])?);
        let lhs = visual_distance(&gu, &gv)?.powi(2);
        let rhs = c.derivative(&g, &uv[0])? * c.derivative(&g, &uv[1])? * visual_distance(&uv[0], &uv[1])?.powi(2);
        Ok(rel(lhs, rhs))
    })?;
    suite("derivative_cocycle", &mut |c| {
        let (g, h) = (c.word(), c.word());
        let u = c.cylinder(g.len() + h.len() + 1);
        let hu = act_on_cylinder(&h, &u)?;
        let lhs = c.derivative(&g.mul(&h), &u)?;
        let rhs = c.derivative(&g, &hu)? * c.derivative(&h, &u)?;
        Ok(rel(lhs, rhs))
    })?;
    suite("change_of_variables", &mut |c| {
        let g = c.word();
        let extra = c.rng.random_range(0..3);
        let u = c.cylinder(g.len() + 1 + extra);
        let image = act_on_cylinder(&g, &u)?;
        let lhs = c.tree.measure(image.depth());
        let rhs = c.derivative(&g, &u)?.powf(c.tree.dim()) * c.tree.measure(u.depth());
        Ok(rel(lhs, rhs))
    })?;
    suite("cross_ratio_invariance", &mut |c| {
        let g = c.word();
        let q = c.distinct_cylinders(g.len() + 2, 4);
        let img: Vec<Cylinder> = q.iter().map(|x| act_on_cylinder(&g, x)).collect::<Result<_>>()?;
        let before = cross_ratio(&q[0], &q[1], &q[2], &q[3])?;
        let after = cross_ratio(&img[0], &img[1], &img[2], &img[3])?;
        Ok(rel(before, after))
    })?;
    suite("cayley_round_trip", &mut |c| {
        let t = *config.t_grid.choose(c.rng).expect("non-empty");
        let params = Params::new(config.m, s, config.p, t)?;
        let a = basepoints.choose(c.rng).expect("non-empty").clone();
        let chart = BundleChart::new(c.tree, a, config.truncation().max(n))?;
        let f = CylinderFunction::random_gaussian(c.tree, n, c.rng);
        let back = cayley_inverse(&cayley_forward(&f, &chart, &params)?, &chart, &params)?.into_cylinder_function()?;
        Ok(f.refine(back.depth()).max_abs_diff(&back) / f.max_abs())
    })?;
    suite("factorization", &mut |c| {
        let t = *config.t_grid.choose(c.rng).expect("non-empty");
        let params = Params::new(config.m, s, config.p, t)?;
        let g = c.word();
        let a = basepoints.choose(c.rng).expect("non-empty").clone();
        let chart = BundleChart::new(c.tree, a, config.truncation().max(g.len() + 1))?;
        let f = CylinderFunction::random_gaussian(c.tree, n.min(4), c.rng);
        factorization_check(&g, &chart, &f, &params)
    })?;
    suite("representation_group_law", &mut |c| {
        let t = *config.t_grid.choose(c.rng).expect("non-empty");
        let params = Params::new(config.m, s, config.p, t)?;
        let (g, h) = (c.word(), c.word());
        let f = CylinderFunction::random_gaussian(c.tree, n.min(4), c.rng);
        let lhs = rep_pi(&g.mul(&h), &f, &params)?;
        let rhs = rep_pi(&g, &rep_pi(&h, &f, &params)?, &params)?;
        let depth = lhs.depth().max(rhs.depth());
        Ok(lhs.refine(depth).max_abs_diff(&rhs.refine(depth)) / lhs.max_abs().max(f64::MIN_POSITIVE))
    })?;
    Ok(out)
}
