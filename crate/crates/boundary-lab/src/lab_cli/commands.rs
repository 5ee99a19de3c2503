//! The experiments. Each returns a [`Report`] whose summary is recomputable from its rows.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::random_basepoints;
use super::report::{PlotSpec, Report, Value};
use super::selftest::{run_suites, Injection, TOLERANCE};
use crate::boundary_core::{inv, BoundaryPoint, Cylinder, Params, Tree, Word};
use crate::conformal_ops::{cayley_forward, BundleChart};
use crate::error::{Error, Result};
use crate::function_space::{
    gagliardo_seminorm, gagliardo_seminorm_on_za, lorentz_norm, lp_norm, sobolev_norm, CylinderFunction, ShellFunction,
};
use crate::operators::{
    cayley_norms_p2, geometric_control, heat_matrix, kernel_value, knapp_stein_matrix, laplacian_matrix,
    operator_norm_general_p, potential_matrix, rep_pi, resolvent_window, rep_pi_norm, rep_pi_selection, rescaling_check,
    rescaling_support_threshold, symmetry_orbits, SobolevDomain,
};

fn rng(config: &ExperimentConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed)
}

fn params(config: &ExperimentConfig, s: f64, t: f64) -> Result<Params> {
    Params::new(config.m, s, config.p, t)
}

fn require_p2(config: &ExperimentConfig, what: &str) -> Result<()> {
    if config.p != 2.0 {
        return Err(Error::ParamError(format!("{what} needs p = 2, got p = {}", config.p)));
    }
    Ok(())
}

fn new_report(name: &str, config: &ExperimentConfig, columns: &[&str]) -> Report {
    Report::new(name, config.echo(), columns)
}

/// Relative spread `max/min − 1` of positive values.
fn spread(values: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = values.into_iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi / lo - 1.0
}

fn drift(from: f64, to: f64) -> f64 {
    (to / from - 1.0).abs()
}

pub fn cmd_selftest(config: &ExperimentConfig) -> Result<Report> {
    selftest_with(config, Injection::None)
}

/// `selftest` with an optional deliberate corruption, so tests can check the suites bite.
pub fn selftest_with(config: &ExperimentConfig, injection: Injection) -> Result<Report> {
    let mut rng = rng(config);
    let results = run_suites(config, injection, &mut rng)?;
    let mut r = new_report("selftest", config, &["suite", "instances", "max_residual", "tolerance", "pass"]);
    let mut worst: f64 = 0.0;
    for res in &results {
        let pass = res.max_residual <= TOLERANCE;
        r.push(vec![res.name.into(), res.instances.into(), res.max_residual.into(), TOLERANCE.into(), pass.into()]);
        r.check(pass, format!("{}: residual {:e} above {TOLERANCE:e}", res.name, res.max_residual));
        worst = worst.max(res.max_residual);
    }
    r.summarize("max_residual", worst);
    r.summarize("suites", results.len());
    Ok(r)
}

/// Random test functions of several shapes: noise, cylinder indicators and localised noise.
pub fn sample_function(tree: Tree, depth: usize, trial: usize, rng: &mut ChaCha8Rng) -> CylinderFunction {
    match trial % 3 {
        0 => CylinderFunction::random_gaussian(tree, depth, rng),
        1 => {
            let d = rng.random_range(1..=depth);
            let c = Cylinder::from_index(&tree, d, rng.random_range(0..tree.count(d)));
            CylinderFunction::indicator(tree, &c, depth).expect("depth at least the cylinder's")
        }
        _ => {
            let d = rng.random_range(1..=depth);
            let c = Cylinder::from_index(&tree, d, rng.random_range(0..tree.count(d)));
            let noise = CylinderFunction::random_gaussian(tree, depth, rng);
            let ind = CylinderFunction::indicator(tree, &c, depth).expect("depth at least the cylinder's");
            noise.zip_with(&ind, |a, b| a * b)
        }
    }
}

/// `‖f‖_{L^{p*,p}} / (‖f‖_p + [f]_{s,p})` with `p* = pD/(D − sp)`.
pub fn sobolev_ratio(f: &CylinderFunction, s: f64, p: f64) -> Result<(f64, f64)> {
    let d = f.tree().dim();
    if s * p >= d {
        return Err(Error::ParamError(format!("need s·p < D, got s·p = {}", s * p)));
    }
    let p_star = p * d / (d - s * p);
    let lhs = lorentz_norm(f, p_star, p)?;
    let rhs = lp_norm(f, p) + gagliardo_seminorm(f, s, p);
    Ok((lhs, rhs))
}

pub fn cmd_sobolev(config: &ExperimentConfig) -> Result<Report> {
    let tree = config.tree();
    let p = config.p;
    for &s in &config.s_grid {
        params(config, s, 0.0)?.check_sobolev()?;
    }
    let mut r = new_report("sobolev", config, &["depth", "s", "p", "trial", "lhs", "rhs", "ratio"]);
    let depths = config.depths();
    for &s in &config.s_grid {
        let mut maxima = Vec::new();
        for &n in &depths {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (n as u64) << 32);
            let mut best: f64 = 0.0;
            for trial in 0..config.trials {
                let f = sample_function(tree, n, trial, &mut rng);
                let (lhs, rhs) = sobolev_ratio(&f, s, p)?;
                let ratio = lhs / rhs;
                r.push(vec![n.into(), s.into(), p.into(), trial.into(), lhs.into(), rhs.into(), ratio.into()]);
                r.check(ratio.is_finite(), format!("non-finite ratio at depth {n}, s = {s}, trial {trial}"));
                best = best.max(ratio);
            }
            r.summarize(format!("max_ratio.s={s}.depth={n}"), best);
            maxima.push(best);
        }
        for (w, ns) in maxima.windows(2).zip(depths.windows(2)) {
            let dr = drift(w[0], w[1]);
            r.summarize(format!("drift.s={s}.depth={}->{}", ns[0], ns[1]), dr);
            r.check(dr < 0.2, format!("max ratio drifts by {dr:.3} from depth {} to {} at s = {s}", ns[0], ns[1]));
        }
    }
    r.plot = Some(PlotSpec { x: "depth".into(), y: "ratio".into(), series: Some("s".into()), log_y: false });
    Ok(r)
}

/// A point `η` with `⟨a, η⟩ = l`: follow `a` for `l` letters, then turn and go straight.
pub fn diverging_point(tree: &Tree, a: &BoundaryPoint, l: usize) -> Result<BoundaryPoint> {
    let mut head = a.prefix(l);
    let turn = tree
        .letters()
        .find(|&x| x != a.letter(l) && head.last().is_none_or(|&h| x != inv(h)))
        .expect("a tree with k >= 3 always has a free letter");
    head.push(turn);
    BoundaryPoint::new(&Word::from_letters(&head), &Word::from_letters(&[turn]))
}

pub fn cmd_geometric_control(config: &ExperimentConfig) -> Result<Report> {
    let tree = config.tree();
    let p = config.p;
    let mut rng = rng(config);
    let bps = random_basepoints(config, &mut rng)?;
    let mut r = new_report(
        "geometric_control",
        config,
        &["basepoint", "eta", "gromov", "sigma", "s", "t", "p", "on_z", "on_z_tail_bound", "on_chart", "on_chart_tail_bound"],
    );
    let (mut max_z, mut max_chart) = (0.0f64, 0.0f64);
    let mut max_bound = 0.0f64;
    for a in &bps {
        for l in 0..config.depth {
            let eta = diverging_point(&tree, a, l)?;
            for &s in &config.s_grid {
                // The twist exponent of the representation: σ = D/p − s.
                let sigma = tree.dim() / p - s;
                for &t in &config.t_grid {
                    let gc = geometric_control(&tree, a, &eta, sigma, t, s, p)?;
                    r.push(vec![
                        a.to_string().into(),
                        eta.to_string().into(),
                        l.into(),
                        sigma.into(),
                        s.into(),
                        t.into(),
                        p.into(),
                        gc.on_z.into(),
                        gc.on_z_tail_bound.into(),
                        gc.on_chart.into(),
                        gc.on_chart_tail_bound.into(),
                    ]);
                    r.check(gc.on_z.is_finite() && gc.on_chart.is_finite(), format!("non-finite control at {a}, {eta}"));
                    max_z = max_z.max(gc.on_z);
                    max_chart = max_chart.max(gc.on_chart);
                    max_bound = max_bound.max(gc.on_z_tail_bound).max(gc.on_chart_tail_bound);
                }
            }
        }
    }
    r.summarize("max_on_z", max_z);
    r.summarize("max_on_chart", max_chart);
    r.summarize("max_tail_bound", max_bound);
    r.plot = Some(PlotSpec { x: "gromov".into(), y: "on_z".into(), series: Some("t".into()), log_y: false });
    Ok(r)
}

/// Lower bounds for `‖Ω(a)‖` and `‖Ω(a)^{-1}‖` by ascent, for `p ≠ 2`.
pub fn cayley_norms_general_p(a: &BoundaryPoint, depth: usize, params: &Params, trials: usize, seed: u64) -> Result<(f64, f64)> {
    params.check_sobolev()?;
    let tree = params.tree;
    let chart = BundleChart::new(tree, a.clone(), depth.max(2))?;
    let (s, p) = (params.s, params.p);
    let dim = tree.count(depth);
    let to_f = |x: &[Complex64]| CylinderFunction::new(tree, depth, x.to_vec()).expect("matching length");
    let image_norm = |x: &[Complex64]| -> f64 {
        cayley_forward(&to_f(x), &chart, params)
            .and_then(|phi| gagliardo_seminorm_on_za(&phi, s, p))
            .map(|rep| rep.value)
            .unwrap_or(f64::NAN)
    };
    let dom_norm = |x: &[Complex64]| sobolev_norm(&to_f(x), s, p).unwrap_or(f64::NAN);
    let id = |x: &[Complex64]| x.to_vec();
    let fwd = operator_norm_general_p(dim, &id, &dom_norm, &image_norm, trials, 30, seed);
    let inv = operator_norm_general_p(dim, &id, &image_norm, &dom_norm, trials, 30, seed ^ 1);
    Ok((fwd.best, inv.best))
}

pub fn cmd_cayley_norms(config: &ExperimentConfig) -> Result<Report> {
    let mut rng = rng(config);
    let bps = random_basepoints(config, &mut rng)?;
    for &s in &config.s_grid {
        params(config, s, 0.0)?.check_sobolev()?;
    }
    let depths = config.depths();
    let mut grid = Vec::new();
    for &n in &depths {
        for (bi, a) in bps.iter().enumerate() {
            for &s in &config.s_grid {
                for &t in &config.t_grid {
                    grid.push((n, bi, a.clone(), s, t));
                }
            }
        }
    }
    let results: Vec<Result<(f64, f64, usize)>> = grid
        .par_iter()
        .map(|(n, _, a, s, t)| {
            let pr = params(config, *s, *t)?;
            if config.p == 2.0 {
                let c = cayley_norms_p2(a, *n, &pr, config.seed)?;
                Ok((c.forward, c.inverse, c.levels_used))
            } else {
                let (f, i) = cayley_norms_general_p(a, *n, &pr, config.trials.clamp(1, 8), config.seed)?;
                Ok((f, i, 0))
            }
        })
        .collect();
    let mut r = new_report("cayley_norms", config, &["depth", "basepoint", "s", "t", "forward", "inverse", "levels_used"]);
    let mut values = Vec::with_capacity(grid.len());
    for ((n, bi, a, s, t), res) in grid.iter().zip(results) {
        let (f, i, lv) = res?;
        r.push(vec![(*n).into(), a.to_string().into(), (*s).into(), (*t).into(), f.into(), i.into(), lv.into()]);
        r.check(f.is_finite() && i.is_finite(), format!("non-finite norm at depth {n}, {a}"));
        values.push((*n, *bi, *s, *t, f, i));
    }
    let pick = |n: usize, s: f64, t: f64| values.iter().filter(move |v| v.0 == n && v.2 == s && v.3 == t);
    let mut worst_drift: f64 = 0.0;
    let mut worst_window: f64 = 1.0;
    let mut worst_t: f64 = 0.0;
    for &s in &config.s_grid {
        for &t in &config.t_grid {
            // Window = max/min across basepoints, of the forward and the inverse norms.
            let window = |n: usize| (1.0 + spread(pick(n, s, t).map(|v| v.4))).max(1.0 + spread(pick(n, s, t).map(|v| v.5)));
            for &n in &depths {
                let top = pick(n, s, t).map(|v| v.4.max(v.5)).fold(0.0, f64::max);
                r.summarize(format!("max_norm.s={s}.t={t}.depth={n}"), top);
                r.summarize(format!("window.s={s}.t={t}.depth={n}"), window(n));
                worst_window = worst_window.max(window(n));
            }
            let dr = drift(window(depths[0]), window(*depths.last().unwrap()));
            worst_drift = worst_drift.max(dr);
            r.check(dr < 0.2, format!("basepoint window drifts by {dr:.3} across depths at s = {s}, t = {t}"));
        }
        for &n in &depths {
            for bi in 0..bps.len() {
                let at = values.iter().filter(|v| v.0 == n && v.1 == bi && v.2 == s);
                worst_t = worst_t.max(spread(at.clone().map(|v| v.4))).max(spread(at.map(|v| v.5)));
            }
        }
    }
    r.summarize("basepoint_window", worst_window);
    r.summarize("window_depth_drift", worst_drift);
    r.summarize("t_variation", worst_t);
    r.plot = Some(PlotSpec { x: "depth".into(), y: "forward".into(), series: Some("t".into()), log_y: false });
    Ok(r)
}

/// Smallest singular value of the generators composed with the conditional expectation onto
/// `LC_n`, stacked as `[E π(g) − I]`; zero would mean a common fixed vector.
pub fn invariant_vector_probe(tree: &Tree, n: usize, params: &Params) -> Result<f64> {
    let count = tree.count(n);
    let mut stacked = DMatrix::<Complex64>::zeros(tree.m * 2 * count, count);
    for (gi, l) in tree.letters().enumerate() {
        let sel = rep_pi_selection(&Word::from_letters(&[l]), n, params)?;
        let per = sel.src.len() / count;
        for (u, (&src, w)) in sel.src.iter().zip(&sel.weight).enumerate() {
            stacked[(gi * count + u / per, src)] += w / per as f64;
        }
        for u in 0..count {
            stacked[(gi * count + u, u)] -= Complex64::new(1.0, 0.0);
        }
    }
    let sv = stacked.svd(false, false).singular_values;
    Ok(sv.iter().cloned().fold(f64::MAX, f64::min))
}

pub fn cmd_rep_bound(config: &ExperimentConfig) -> Result<Report> {
    require_p2(config, "rep_bound")?;
    let tree = config.tree();
    for &s in &config.s_grid {
        params(config, s, 0.0)?.check_sobolev()?;
    }
    let depths = config.depths();
    let orbits = symmetry_orbits(&tree, &Word::ball(&tree, config.group_radius));
    let domain_keys: Vec<(usize, f64)> = depths.iter().flat_map(|&n| config.s_grid.iter().map(move |&s| (n, s))).collect();
    let domains: Vec<SobolevDomain> =
        domain_keys.par_iter().map(|&(n, s)| SobolevDomain::new(&tree, n, s)).collect::<Result<_>>()?;
    let mut grid = Vec::new();
    for (di, &(n, s)) in domain_keys.iter().enumerate() {
        for &t in &config.t_grid {
            for (oi, _) in orbits.iter().enumerate() {
                grid.push((di, n, s, t, oi));
            }
        }
    }
    let norms: Vec<f64> = grid
        .par_iter()
        .map(|&(di, _, s, t, oi)| rep_pi_norm(&orbits[oi].0, &domains[di], &params(config, s, t)?, config.seed))
        .collect::<Result<_>>()?;
    let mut r = new_report("rep_bound", config, &["depth", "s", "t", "g", "word_length", "orbit_size", "norm"]);
    for (&(_, n, s, t, oi), &v) in grid.iter().zip(&norms) {
        let (g, orbit) = &orbits[oi];
        r.push(vec![n.into(), s.into(), t.into(), g.to_string().into(), g.len().into(), orbit.len().into(), v.into()]);
        r.check(v.is_finite(), format!("non-finite norm for {g} at depth {n}"));
    }
    let find = |n: usize, s: f64, t: f64, oi: usize| {
        grid.iter().zip(&norms).find(|(k, _)| k.1 == n && k.2 == s && k.3 == t && k.4 == oi).map(|(_, &v)| v).expect("grid point")
    };
    let mut overall: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    let mut worst_t: f64 = 0.0;
    let mut non_monotone = 0usize;
    for &s in &config.s_grid {
        for &t in &config.t_grid {
            let top = |n: usize| (0..orbits.len()).map(|oi| find(n, s, t, oi)).fold(0.0, f64::max);
            for &n in &depths {
                overall = overall.max(top(n));
            }
            let dr = drift(top(depths[0]), top(*depths.last().unwrap()));
            worst_drift = worst_drift.max(dr);
            r.check(dr < 0.2, format!("max norm drifts by {dr:.3} across depths at s = {s}, t = {t}"));
            for oi in 0..orbits.len() {
                for w in depths.windows(2) {
                    if find(w[1], s, t, oi) < find(w[0], s, t, oi) * (1.0 - 1e-9) {
                        non_monotone += 1;
                    }
                }
            }
        }
        for &n in &depths {
            for oi in 0..orbits.len() {
                worst_t = worst_t.max(spread(config.t_grid.iter().map(|&t| find(n, s, t, oi))));
            }
        }
        // Growth fit ‖π(g)‖ <= C e^{A'|g|} at the deepest level and t = first grid value.
        let n = *depths.last().unwrap();
        let t0 = config.t_grid[0];
        let c = orbits.iter().enumerate().filter(|(_, o)| o.0.is_empty()).map(|(oi, _)| find(n, s, t0, oi)).fold(1.0, f64::max);
        let rate = orbits
            .iter()
            .enumerate()
            .filter(|(_, o)| !o.0.is_empty())
            .map(|(oi, o)| (find(n, s, t0, oi) / c).ln() / o.0.len() as f64)
            .fold(0.0, f64::max);
        r.summarize(format!("growth_const.s={s}"), c);
        r.summarize(format!("growth_rate.s={s}"), rate);
        let probe_depth = n.min(4);
        r.summarize(format!("invariant_probe_min_sv.s={s}"), invariant_vector_probe(&tree, probe_depth, &params(config, s, 0.0)?)?);
    }
    r.check(non_monotone == 0, format!("{non_monotone} norms decrease with depth"));
    r.summarize("max_norm", overall);
    r.summarize("depth_drift", worst_drift);
    r.summarize("non_monotone", non_monotone);
    r.summarize("t_variation", worst_t);
    r.summarize("orbits", orbits.len());
    r.plot = Some(PlotSpec { x: "word_length".into(), y: "norm".into(), series: Some("depth".into()), log_y: false });
    Ok(r)
}

/// `max_{g ∈ K} ‖π_s(g) 1 − 1‖_{W^{s,p}}` together with the maximising element.
pub fn almost_invariance_defect(tree: &Tree, ball: &[Word], s: f64, p: f64) -> Result<(f64, Word)> {
    let pr = Params::new(tree.m, s, p, 0.0)?;
    let one = CylinderFunction::constant(*tree, 1, Complex64::new(1.0, 0.0));
    let mut best = (0.0, Word::identity());
    for g in ball {
        let img = rep_pi(g, &one, &pr)?;
        let diff = img.sub(&one.refine(img.depth()));
        let v = sobolev_norm(&diff, s, p)?;
        if v > best.0 {
            best = (v, g.clone());
        }
    }
    Ok(best)
}

pub fn cmd_almost_invariant(config: &ExperimentConfig) -> Result<Report> {
    let tree = config.tree();
    if config.p <= tree.dim() {
        return Err(Error::ParamError(format!("almost invariance needs p > D = {}", tree.dim())));
    }
    let ball = Word::ball(&tree, config.group_radius);
    let mut r = new_report("almost_invariant", config, &["s", "value", "argmax"]);
    let mut curve = Vec::new();
    for &s in &config.s_grid {
        let (v, g) = almost_invariance_defect(&tree, &ball, s, config.p)?;
        r.push(vec![s.into(), v.into(), g.to_string().into()]);
        curve.push(v);
    }
    let tail = (curve.len() / 4).max(2).min(curve.len());
    let decreasing = curve[curve.len() - tail..].windows(2).all(|w| w[1] < w[0]);
    let (first, last) = (curve[0], *curve.last().unwrap());
    let ratio = if first > 0.0 { last / first } else { f64::NAN };
    r.summarize("tail_points", tail);
    r.summarize("tail_strictly_decreasing", decreasing);
    r.summarize("final_over_initial", ratio);
    if ball.len() > 1 {
        r.check(decreasing, "curve is not strictly decreasing on its tail");
        r.check(ratio < 0.1, format!("final/initial = {ratio:.4} is not below 0.1"));
    }
    r.plot = Some(PlotSpec { x: "s".into(), y: "value".into(), series: None, log_y: false });
    Ok(r)
}

/// Index of some cell `v` at depth `n` with `⟨0, v⟩ = level`.
fn partner(tree: &Tree, n: usize, level: usize) -> usize {
    (0..tree.count(n)).find(|&v| v != 0 && tree.gromov_idx(0, v, n) == level).expect("every level is realised")
}

/// Heat times used by `potential`.
pub const HEAT_TIMES: [f64; 5] = [
    0.36787944117144233,
    0.1353352832366127,
    0.049787068367863944,
    0.01831563888873418,
    0.006737946999085467,
];

/// `(‖φ‖_{H^{-s}}, dual norm at the maximiser)` for a seeded random `φ`; the two agree.
pub fn negative_norm_spot_check(tree: &Tree, s: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let phi = CylinderFunction::random_gaussian(*tree, n, rng);
    let j = potential_matrix(tree, s, n)?;
    let x = DVector::from_column_slice(phi.coeffs());
    let nu = tree.measure(n);
    let direct = ((x.adjoint() * &j.entries * &x)[(0, 0)].re * nu).sqrt();
    let lap = laplacian_matrix(tree, s, n).entries;
    let f = &j.entries * &x;
    let h_s = ((f.adjoint() * (&f + &lap * &f))[(0, 0)].re * nu).sqrt();
    let dual = (f.adjoint() * &x)[(0, 0)].norm() * nu / h_s;
    Ok((direct, dual))
}

pub fn cmd_potential(config: &ExperimentConfig) -> Result<Report> {
    let tree = config.tree();
    let d = tree.dim();
    let mut rng = rng(config);
    let mut r = new_report("potential", config, &["s", "depth", "kind", "time", "level", "value", "reference", "ratio"]);
    let blank = || Value::Text(String::new());
    let mut heat_lo = f64::MAX;
    let mut heat_hi: f64 = 0.0;
    for &s in &config.s_grid {
        if 2.0 * s >= d {
            return Err(Error::ParamError(format!("potential needs 2s < D, got s = {s}")));
        }
        let mut windows = Vec::new();
        for n in config.depths() {
            let lap = laplacian_matrix(&tree, s, n).entries.map(|v| v.re);
            let min_eig = |m: DMatrix<f64>| SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
            let resolvent_min = min_eig(lap.clone() + DMatrix::identity(lap.nrows(), lap.nrows()));
            let j = potential_matrix(&tree, s, n)?;
            let j_min = min_eig(j.entries.map(|v| v.re));
            let ks = SymmetricEigen::new(knapp_stein_matrix(&tree, s, n)?.entries.map(|v| v.re)).eigenvalues;
            let ks_min = ks.iter().cloned().fold(f64::MAX, f64::min);
            for (kind, v) in [("identity_plus_laplacian_min_eig", resolvent_min), ("resolvent_min_eig", j_min), ("knapp_stein_min_eig", ks_min)] {
                r.push(vec![s.into(), n.into(), kind.into(), blank(), blank(), v.into(), blank(), blank()]);
            }
            r.check(resolvent_min > 0.0 && j_min > 0.0, format!("resolvent not positive definite at s = {s}, depth {n}"));
            let (mut lo, mut hi) = (f64::MAX, 0.0f64);
            for level in 0..n {
                let v = partner(&tree, n, level);
                let k = kernel_value(&j, 0, v);
                let reference = ((d - 2.0 * s) * level as f64).exp();
                let ratio = k / reference;
                r.push(vec![s.into(), n.into(), "resolvent_kernel".into(), blank(), level.into(), k.into(), reference.into(), ratio.into()]);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            let window = hi / lo;
            r.summarize(format!("resolvent_window.s={s}.depth={n}"), window);
            windows.push(window);
            for &time in &HEAT_TIMES {
                let h = heat_matrix(&tree, s, time, n)?;
                for level in 0..=n {
                    let v = if level == n { 0 } else { partner(&tree, n, level) };
                    let p = kernel_value(&h, 0, v);
                    let on_diag = time.powf(-d / (2.0 * s));
                    let reference = if level == n { on_diag } else { on_diag.min(time * ((d + 2.0 * s) * level as f64).exp()) };
                    let ratio = p / reference;
                    r.push(vec![s.into(), n.into(), "heat_kernel".into(), time.into(), level.into(), p.into(), reference.into(), ratio.into()]);
                    r.check(ratio.is_finite() && ratio > 0.0, format!("heat ratio {ratio} at s = {s}, depth {n}"));
                    heat_lo = heat_lo.min(ratio);
                    heat_hi = heat_hi.max(ratio);
                }
            }
            let (direct, dual) = negative_norm_spot_check(&tree, s, n, &mut rng)?;
            r.push(vec![s.into(), n.into(), "negative_norm".into(), blank(), blank(), direct.into(), dual.into(), (direct / dual).into()]);
        }
        let dr = windows.windows(2).map(|w| drift(w[0], w[1])).fold(0.0, f64::max);
        r.summarize(format!("resolvent_window_drift.s={s}"), dr);
        // The infinite-depth window, which the finite-depth ones increase towards.
        r.summarize(format!("resolvent_window_limit.s={s}"), resolvent_window(&tree, s, 300));
        r.check(dr < 0.2, format!("resolvent kernel window drifts by {dr:.3} at s = {s}"));
    }
    r.summarize("heat_ratio_min", heat_lo);
    r.summarize("heat_ratio_max", heat_hi);
    r.plot = Some(PlotSpec { x: "level".into(), y: "ratio".into(), series: Some("kind".into()), log_y: true });
    Ok(r)
}

pub fn cmd_rescaling(config: &ExperimentConfig) -> Result<Report> {
    require_p2(config, "rescaling")?;
    let tree = config.tree();
    let mut rng = rng(config);
    let bps = random_basepoints(config, &mut rng)?;
    let n_max = 3 * config.depth;
    let mut r = new_report(
        "rescaling",
        config,
        &["basepoint", "s", "n", "word_length", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "residual", "scaled_residual"],
    );
    for a in &bps {
        let phi = ShellFunction::random(tree, a.clone(), 1, config.truncation(), &mut rng)?;
        let psi = ShellFunction::random(tree, a.clone(), 1, config.truncation(), &mut rng)?;
        let n0 = rescaling_support_threshold(a, &phi);
        for &s in &config.s_grid {
            let rows = rescaling_check(a, s, &phi, &psi, n_max)?;
            for row in &rows {
                r.push(vec![
                    a.to_string().into(),
                    s.into(),
                    row.n.into(),
                    row.word_length.into(),
                    row.lhs.re.into(),
                    row.lhs.im.into(),
                    row.rhs.re.into(),
                    row.rhs.im.into(),
                    row.residual.into(),
                    row.scaled_residual.into(),
                ]);
            }
            let beyond = rows.iter().filter(|row| row.n >= n0).map(|row| row.residual).fold(0.0, f64::max);
            r.summarize(format!("n0.{a}.s={s}"), n0);
            r.summarize(format!("max_residual_beyond_n0.{a}.s={s}"), beyond);
            r.check(beyond <= 1e-10, format!("{a}, s = {s}: residual {beyond:e} beyond n0 = {n0}"));
        }
    }
    r.plot = Some(PlotSpec { x: "n".into(), y: "residual".into(), series: Some("basepoint".into()), log_y: true });
    Ok(r)
}
