//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use zdq_core::coding::{evaluate_policy, optimal_decoder, stage_cost, Codebook};
use zdq_core::planner::{value_iteration, vanishing_discount, FrozenKernel, ValueTable};
use zdq_core::rng::stream_rng;
use zdq_core::verify::{check_equicontinuity, check_second_moment, check_value_table, coupled_gaps, rate_report, BoundConstants};
use zdq_core::{
    bellman_backup, design, wasserstein2, Belief, ConvexQuantizer, Design, DesignParams, FilterSettings,
    InitialDistribution, Matrix, PolicyFile, SourceModel,
};

type Outcome = Result<String, String>;

fn scalar_model() -> SourceModel<f64> {
    SourceModel::scalar(0.5, 1.0).unwrap()
}

fn scalar_init() -> InitialDistribution<f64> {
    InitialDistribution::PointMass(vec![1.0])
}

fn scalar_params() -> DesignParams<f64> {
    DesignParams {
        m: 2,
        n_actions: 8,
        lloyd_iters: 20,
        cover_radius: 0.25,
        n_rollouts: 32,
        rollout_horizon: 64,
        cover_cap: 4000,
        beta_schedule: vec![0.9, 0.99, 0.999, 0.9999],
        tol: 1e-6,
        max_iter: 10_000_000,
        reference: 0,
        filter: FilterSettings {
            n_particles: 64,
            mass_floor: 1e-9,
            exact_budget: 512,
        },
    }
}

fn planar_model() -> SourceModel<f64> {
    SourceModel::gaussian(
        Matrix::from_row_major(2, vec![0.6, 0.3, 0.0, 0.6]).unwrap(),
        Matrix::identity(2),
    )
    .unwrap()
}

fn planar_init() -> InitialDistribution<f64> {
    InitialDistribution::PointMass(vec![1.0, 0.0])
}

fn planar_params() -> DesignParams<f64> {
    DesignParams {
        m: 4,
        n_actions: 6,
        cover_radius: 0.7,
        n_rollouts: 16,
        rollout_horizon: 32,
        filter: FilterSettings {
            n_particles: 32,
            mass_floor: 1e-9,
            exact_budget: 512,
        },
        ..scalar_params()
    }
}

const DESIGN_SEED: u64 = 2024;

/// Every permutation of `0..n` (Heap's algorithm).
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            let j = if k % 2 == 0 { i } else { 0 };
            p.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

fn criterion_1() -> Outcome {
    let mut rng = stream_rng(101, 0);
    let mut worst = 0.0f64;
    for inst in 0..200 {
        let d = 1 + inst % 3;
        let n = rng.random_range(1..=4usize);
        let xs: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ys: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = Belief::equal_weight(d, xs.clone()).unwrap();
        let b = Belief::equal_weight(d, ys.clone()).unwrap();
        let oracle = permutations(n)
            .iter()
            .map(|p| {
                (0..n)
                    .map(|i| (0..d).map(|r| (xs[i * d + r] - ys[p[i] * d + r]).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / n as f64
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        let got = wasserstein2(&a, &b).map_err(|e| e.to_string())?;
        let err = (got - oracle).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            return Err(format!("instance {inst} (n={n}, d={d}): {got} vs oracle {oracle}"));
        }
    }
    Ok(format!("200 instances, max |ρ₂ − oracle| = {worst:.2e}"))
}

/// Minimiser of a convex function on `[lo, hi]` by golden-section search.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    while hi - lo > 1e-11 {
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - g * (hi - lo);
        d = lo + g * (hi - lo);
    }
    0.5 * (lo + hi)
}

fn criterion_2() -> Outcome {
    let mut rng = stream_rng(202, 0);
    let mut worst = 0.0f64;
    let mut perturbations = 0usize;
    for inst in 0..500 {
        let d = 1 + inst % 2;
        let n = rng.random_range(1..=32usize);
        let m = rng.random_range(1..=4usize);
        let pts: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let belief = Belief::from_unnormalized(d, pts, ws).unwrap();
        let sites: Vec<f64> = (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
        let q = ConvexQuantizer::new(d, sites, weights).unwrap();

        // Per-cell, per-coordinate search over the reproduction point.
        let mut oracle = 0.0;
        for i in 0..m {
            let members: Vec<(&[f64], f64)> = belief.iter().filter(|(x, _)| q.encode(x) == i).collect();
            for r in 0..d {
                let mse = |u: f64| members.iter().map(|(x, w)| w * (x[r] - u).powi(2)).sum::<f64>();
                let u = golden_section(mse, -2.5, 2.5);
                oracle += mse(u);
            }
        }
        let got = stage_cost(&belief, &q);
        let err = (got - oracle).abs();
        worst = worst.max(err);
        if err > 1e-6 {
            return Err(format!("instance {inst}: stage cost {got} vs search {oracle}"));
        }

        let cb = optimal_decoder(&belief, &q);
        let base = cb.distortion(&belief, &q);
        let probs = belief.symbol_probs(&q);
        for i in 0..m {
            for &scale in &[1e-2, 1e-1, 1.0] {
                let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let mut points: Vec<f64> = (0..m).flat_map(|k| cb.point(k).to_vec()).collect();
                for r in 0..d {
                    points[i * d + r] += scale * dir[r] / norm;
                }
                let moved = Codebook::new(d, points).unwrap().distortion(&belief, &q);
                perturbations += 1;
                if moved < base || (probs[i] > 0.0 && moved <= base) {
                    return Err(format!("instance {inst}, cell {i}: perturbed {moved} vs centroid {base}"));
                }
            }
        }
    }
    Ok(format!(
        "500 instances, max |c − search| = {worst:.2e}, {perturbations} perturbations all increase the cost"
    ))
}

fn toy_kernel() -> FrozenKernel<f64> {
    FrozenKernel::from_parts(
        vec![vec![1.0, 0.6], vec![0.2, 0.5]],
        vec![
            vec![vec![(0, 0.7), (1, 0.3)], vec![(0, 0.2), (1, 0.8)]],
            vec![vec![(0, 0.9), (1, 0.1)], vec![(1, 1.0)]],
        ],
    )
    .unwrap()
}

/// Transition matrix and cost vector of a deterministic stationary policy.
fn toy_policy(k: &FrozenKernel<f64>, p: [usize; 2]) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut mat = [[0.0; 2]; 2];
    let mut c = [0.0; 2];
    for s in 0..2 {
        c[s] = k.cost(s, p[s]);
        for &(n, pr) in k.transitions(s, p[s]) {
            mat[s][n] += pr;
        }
    }
    (mat, c)
}

/// `(I − βP)⁻¹ c` by Cramer's rule.
fn discounted_value(mat: [[f64; 2]; 2], c: [f64; 2], beta: f64) -> [f64; 2] {
    let (a, b, cc, d) = (1.0 - beta * mat[0][0], -beta * mat[0][1], -beta * mat[1][0], 1.0 - beta * mat[1][1]);
    let det = a * d - b * cc;
    [(d * c[0] - b * c[1]) / det, (a * c[1] - cc * c[0]) / det]
}

/// Long-run average of a two-state chain from its stationary law.
fn average_value(mat: [[f64; 2]; 2], c: [f64; 2]) -> f64 {
    let (p, q) = (mat[0][1], mat[1][0]);
    if p + q == 0.0 {
        return c[0];
    }
    (q * c[0] + p * c[1]) / (p + q)
}

fn criterion_3() -> Outcome {
    let k = toy_kernel();
    let policies = [[0, 0], [0, 1], [1, 0], [1, 1]];
    let mut worst = 0.0f64;
    for &beta in &[0.5, 0.9, 0.99] {
        let mut best = [f64::INFINITY; 2];
        for &p in &policies {
            let (mat, c) = toy_policy(&k, p);
            let v = discounted_value(mat, c, beta);
            best = [best[0].min(v[0]), best[1].min(v[1])];
        }
        let t = value_iteration(&k, beta, 1e-10, 100_000_000).map_err(|e| e.to_string())?;
        t.ensure_converged().map_err(|e| e.to_string())?;
        for s in 0..2 {
            let err = (t.values[s] - best[s]).abs();
            worst = worst.max(err);
            if err > 1e-8 {
                return Err(format!("beta {beta}, state {s}: {} vs enumeration {}", t.values[s], best[s]));
            }
        }
    }
    let rho = policies
        .iter()
        .map(|&p| {
            let (mat, c) = toy_policy(&k, p);
            average_value(mat, c)
        })
        .fold(f64::INFINITY, f64::min);
    let schedule = [0.9, 0.99, 0.999, 0.9999, 0.99999, 0.999999];
    let sol = vanishing_discount(&k, &schedule, 0, 1e-3, 200_000_000).map_err(|e| e.to_string())?;
    let err = (sol.rho_star - rho).abs();
    if !sol.converged || err > 1e-6 {
        return Err(format!("rho* {} vs best average {rho} (converged {})", sol.rho_star, sol.converged));
    }
    Ok(format!("max VI error {worst:.1e}; rho* = {:.9} vs {rho:.9} (|err| {err:.1e})", sol.rho_star))
}

fn random_kernel(rng: &mut impl Rng) -> FrozenKernel<f64> {
    let ns = rng.random_range(1..=8usize);
    let na = rng.random_range(1..=4usize);
    let mut costs = Vec::new();
    let mut trans = Vec::new();
    for _ in 0..ns {
        costs.push((0..na).map(|_| rng.random_range(0.0..5.0)).collect());
        trans.push(
            (0..na)
                .map(|_| {
                    let w: Vec<f64> = (0..ns).map(|_| rng.random::<f64>()).collect();
                    let total: f64 = w.iter().sum();
                    let mut row: Vec<(usize, f64)> = w.iter().enumerate().map(|(s, &x)| (s, x / total)).collect();
                    let head: f64 = row[..ns - 1].iter().map(|e| e.1).sum();
                    row[ns - 1].1 = 1.0 - head;
                    row
                })
                .collect(),
        );
    }
    FrozenKernel::from_parts(costs, trans).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = stream_rng(404, 0);
    let mut worst_ratio = 0.0f64;
    for inst in 0..50 {
        let k = random_kernel(&mut rng);
        let beta = rng.random_range(0.05..0.995);
        let mut t = ValueTable::zeros(beta, k.n_states());
        for it in 0..300 {
            let next = bellman_backup(&t, &k);
            if next.values.iter().zip(&t.values).any(|(a, b)| a < b) {
                return Err(format!("instance {inst}: iterate {it} decreased"));
            }
            t = next;
        }
        for _ in 0..20 {
            let mut v = ValueTable::zeros(beta, k.n_states());
            let mut w = ValueTable::zeros(beta, k.n_states());
            v.values = (0..k.n_states()).map(|_| rng.random_range(-50.0..50.0)).collect();
            w.values = (0..k.n_states()).map(|_| rng.random_range(-50.0..50.0)).collect();
            let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let before = sup(&v.values, &w.values);
            let after = sup(&bellman_backup(&v, &k).values, &bellman_backup(&w, &k).values);
            if after > beta * before + 1e-12 {
                return Err(format!("instance {inst}: {after} > {beta}·{before}"));
            }
            if before > 0.0 {
                worst_ratio = worst_ratio.max(after / (beta * before));
            }
        }
    }
    Ok(format!("50 instances; max ‖Hv−Hw‖/(β‖v−w‖) = {worst_ratio:.4}"))
}

fn criterion_5(d1: &Design<f64>) -> Outcome {
    let model = scalar_model();
    let init = scalar_init();
    let consts = BoundConstants::new(&model, init.second_moment());
    let cap = consts.discounted_cap(0.9);
    if (cap - 23.333).abs() > 1e-3 {
        return Err(format!("discounted cap {cap}"));
    }
    let table = value_iteration(&d1.kernel, 0.9, 1e-9, 10_000_000).map_err(|e| e.to_string())?;
    let max_v = table.values.iter().copied().fold(0.0, f64::max);
    if max_v > cap {
        return Err(format!("value entry {max_v} above {cap}"));
    }
    let per_rep = check_value_table(&model, &d1.cover, 0.9, &table.values);
    if !per_rep.pass {
        return Err(format!("{per_rep:?}"));
    }
    let mc = check_second_moment(&model, &init, 64, 100_000, 5050, 1.0).map_err(|e| e.to_string())?;
    if !mc.pass {
        return Err(format!("{mc:?}"));
    }
    Ok(format!(
        "max J^0.9 entry {max_v:.4} <= {cap:.3}; worst second-moment margin {:.2e} at {} ({:.4} vs {:.4})",
        mc.margin, mc.name, mc.lhs, mc.rhs
    ))
}

fn criterion_6(d1: &Design<f64>) -> Outcome {
    let model = scalar_model();
    for seed in 0..20 {
        let gaps = coupled_gaps(&model, &[0.0], &[1.0], 20, seed);
        for (t, g) in gaps.iter().enumerate() {
            let exact = 0.5f64.powi(t as i32);
            if (g - exact).abs() > 1e-9 * exact {
                return Err(format!("seed {seed}, t={t}: gap {g} vs {exact}"));
            }
        }
    }
    let consts = BoundConstants::new(&model, 1.0);
    let bound = consts.g(1.0);
    if (bound - 7.443).abs() > 1e-3 {
        return Err(format!("bound {bound}"));
    }
    let nu0 = Belief::point_mass(vec![0.0]);
    let mu0 = Belief::point_mass(vec![1.0]);
    let mut lines = Vec::new();
    for &beta in &[0.9, 0.99] {
        let checks = check_equicontinuity(&model, &nu0, &mu0, beta, &d1.policy, 10_000, 606, 512).map_err(|e| e.to_string())?;
        for c in &checks {
            if !c.pass {
                return Err(format!("{c:?}"));
            }
        }
        lines.push(format!("beta {beta}: {:.4} ± {:.4} <= {:.4}", checks[0].lhs, checks[0].stderr, checks[0].rhs));
    }
    Ok(format!("pathwise gaps exact to 1e-9 over t <= 20; {}", lines.join("; ")))
}

fn criterion_7(d1: &Design<f64>) -> Outcome {
    let model = scalar_model();
    let init = scalar_init();
    let report = rate_report(&model, &d1.policy, &init, &[8, 16, 32, 64, 128, 256], 10_000, 707).map_err(|e| e.to_string())?;
    let checks = report.checks();
    for c in &checks {
        if !c.pass {
            return Err(format!("{c:?}; deviations {:?}", report.deviation));
        }
    }
    let scaled: Vec<String> = report
        .t_grid
        .iter()
        .zip(&report.deviation)
        .map(|(&t, &d)| format!("{:.3}", t as f64 * d))
        .collect();
    Ok(format!(
        "T·|J_T − J∞| = [{}] vs K(π₀) = {:.3}; slope {:.3}",
        scaled.join(", "),
        report.rate_constant,
        report.slope.unwrap_or(f64::NAN)
    ))
}

fn criterion_8(d1: &Design<f64>, d2: &Design<f64>) -> Outcome {
    let mut parts = Vec::new();
    for (name, d) in [("d=1", d1), ("d=2", d2)] {
        let sol = &d.solution;
        let last = *sol.beta_schedule.last().unwrap_or(&0.0);
        if last != 0.9999 || !sol.converged {
            return Err(format!("{name}: beta_last {last}, converged {}", sol.converged));
        }
        let rel = sol.acoe_residual / sol.rho_star;
        if !(rel <= 0.05) {
            return Err(format!("{name}: residual {} vs rho* {}", sol.acoe_residual, sol.rho_star));
        }
        parts.push(format!(
            "{name}: residual {:.2e} = {:.3}% of rho* {:.4} ({} representatives)",
            sol.acoe_residual,
            100.0 * rel,
            sol.rho_star,
            d.cover.len()
        ));
    }
    Ok(parts.join("; "))
}

fn criterion_9(d1: &Design<f64>) -> Outcome {
    let model = scalar_model();
    let init = scalar_init();
    let first = d1.policy_file(&model).and_then(|f| f.to_json()).map_err(|e| e.to_string())?;
    let again = design(&model, &init, &scalar_params(), DESIGN_SEED).map_err(|e| e.to_string())?;
    let second = again.policy_file(&model).and_then(|f| f.to_json()).map_err(|e| e.to_string())?;
    if first != second {
        return Err("policy files differ between identical designs".into());
    }
    let reloaded = PolicyFile::<f64>::read(first.as_bytes()).map_err(|e| e.to_string())?;
    let policy = reloaded.policy().map_err(|e| e.to_string())?;
    let model2 = reloaded.model().map_err(|e| e.to_string())?;
    if reloaded.to_json().map_err(|e| e.to_string())? != first {
        return Err("reloaded policy file serialises differently".into());
    }
    let a = evaluate_policy(&model, &d1.policy, &init, 64, 200, 909, Some(0.9)).map_err(|e| e.to_string())?;
    let b = evaluate_policy(&model2, &policy, &init, 64, 200, 909, Some(0.9)).map_err(|e| e.to_string())?;
    if a != b {
        return Err("reloaded policy evaluates differently".into());
    }
    Ok(format!("{} byte policy file reproduced; reload reproduces J = {:.6}", first.len(), a.average().unwrap_or(f64::NAN)))
}

fn report(results: &mut BTreeMap<usize, bool>, n: usize, title: &str, run: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = run();
    let took = start.elapsed();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d.clone()),
        Err(e) => ("FAIL", e.clone()),
    };
    println!("criterion {n} {tag} [{}] {title}: {detail}", fmt_duration(took));
    results.insert(n, outcome.is_ok());
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn main() {
    let mut results = BTreeMap::new();
    report(&mut results, 1, "OT oracle equivalence", criterion_1);
    report(&mut results, 2, "stage cost and decoder oracle", criterion_2);
    report(&mut results, 3, "toy MDP exactness", criterion_3);
    report(&mut results, 4, "VI monotonicity and contraction", criterion_4);

    let start = Instant::now();
    let d1 = design(&scalar_model(), &scalar_init(), &scalar_params(), DESIGN_SEED);
    let d2 = design(&planar_model(), &planar_init(), &planar_params(), DESIGN_SEED);
    println!("designed reference policies in {}", fmt_duration(start.elapsed()));
    match (&d1, &d2) {
        (Ok(d1), Ok(d2)) => {
            report(&mut results, 5, "discounted and second-moment bounds", || criterion_5(d1));
            report(&mut results, 6, "coupling and equicontinuity", || criterion_6(d1));
            report(&mut results, 7, "1/T rate of the average cost", || criterion_7(d1));
            report(&mut results, 8, "ACOE residual", || criterion_8(d1, d2));
            report(&mut results, 9, "reproducibility and persistence", || criterion_9(d1));
        }
        _ => {
            let err = format!("design failed: {:?} / {:?}", d1.as_ref().err(), d2.as_ref().err());
            for n in 5..=9 {
                println!("criterion {n} FAIL {err}");
                results.insert(n, false);
            }
        }
    }
    let failed: Vec<usize> = results.iter().filter(|(_, &ok)| !ok).map(|(&n, _)| n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
