use zdq_core::coding::ClosedLoop;
use zdq_core::rng::stream_rng;
use zdq_core::verify::{check_receiver_convergence, check_value_table};
use zdq_core::{
    build_cover, design, design_action_library, evaluate_policy, value_iteration, wasserstein2, Belief, BeliefCover,
    ConvexQuantizer, CoverSpec, DesignParams, FilterSettings, InitialDistribution, SourceModel, StationaryPolicy,
};

fn settings(n: usize) -> FilterSettings<f64> {
    FilterSettings {
        n_particles: n,
        mass_floor: 1e-9,
        exact_budget: 512,
    }
}

fn small_params() -> DesignParams<f64> {
    DesignParams {
        m: 2,
        n_actions: 3,
        lloyd_iters: 10,
        cover_radius: 0.6,
        n_rollouts: 4,
        rollout_horizon: 8,
        cover_cap: 500,
        beta_schedule: vec![0.9, 0.99, 0.999],
        tol: 1e-7,
        max_iter: 1_000_000,
        reference: 0,
        filter: settings(16),
    }
}

fn library(model: &SourceModel<f64>, m: usize) -> Vec<ConvexQuantizer<f64>> {
    let chol = model.noise().cholesky().clone();
    let b = Belief::gaussian_sample(&vec![0.0; model.dim()], &chol, 200, &mut stream_rng(1, 0));
    design_action_library(&[b], m, 3, 10, 2).unwrap()
}

/// Policy over a one-representative cover using the first action everywhere.
fn single_policy(model: &SourceModel<f64>, rep: Belief<f64>, actions: Vec<ConvexQuantizer<f64>>, n: usize) -> StationaryPolicy<f64> {
    let cover = BeliefCover::new(vec![rep], 1.0, "test".into(), 512).unwrap();
    StationaryPolicy::new(model, cover, actions, vec![0], settings(n)).unwrap()
}

#[test]
fn cover_with_huge_radius_is_the_initial_belief() {
    let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
    let init = InitialDistribution::PointMass(vec![1.0]);
    let spec = CoverSpec {
        n_rollouts: 6,
        horizon: 10,
        radius: 1e6,
        cap: 100,
    };
    let cover = build_cover(&model, &library(&model, 2), &init, &spec, &settings(16), 3).unwrap();
    assert_eq!(cover.len(), 1);
    assert!(cover.representatives()[0].same_measure(&init.belief()));
}

#[test]
fn cover_without_rollouts_holds_only_the_initial_belief() {
    let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
    let init = InitialDistribution::PointMass(vec![-0.5]);
    let spec = CoverSpec {
        n_rollouts: 0,
        horizon: 10,
        radius: 0.01,
        cap: 100,
    };
    let cover = build_cover(&model, &library(&model, 2), &init, &spec, &settings(16), 3).unwrap();
    assert_eq!(cover.len(), 1);
}

#[test]
fn cover_is_deterministic_and_separated() {
    let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
    let init = InitialDistribution::PointMass(vec![1.0]);
    let lib = library(&model, 2);
    let spec = CoverSpec {
        n_rollouts: 6,
        horizon: 10,
        radius: 0.4,
        cap: 1000,
    };
    let a = build_cover(&model, &lib, &init, &spec, &settings(16), 11).unwrap();
    let b = build_cover(&model, &lib, &init, &spec, &settings(16), 11).unwrap();
    assert_eq!(a, b);
    assert!(a.len() > 1);
    let reps = a.representatives();
    for i in 0..reps.len() {
        for j in 0..i {
            assert!(wasserstein2(&reps[i], &reps[j]).unwrap() > 0.4);
        }
    }
    let tight = CoverSpec { cap: 1, ..spec };
    assert!(build_cover(&model, &lib, &init, &tight, &settings(16), 11).is_err());
}

#[test]
fn point_mass_first_step_is_free() {
    let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
    let init = InitialDistribution::PointMass(vec![0.7]);
    let policy = single_policy(&model, init.belief(), library(&model, 2), 16);
    let r = evaluate_policy(&model, &policy, &init, 1, 100, 5, None).unwrap();
    assert_eq!(r.mean_cost, vec![0.0]);
    assert_eq!(r.stderr, vec![0.0]);
}

#[test]
fn memoryless_source_with_one_cell_costs_the_noise_variance() {
    let model = SourceModel::<f64>::scalar(0.0, 1.0).unwrap();
    let init = InitialDistribution::PointMass(vec![0.0]);
    let one = ConvexQuantizer::<f64>::nearest_neighbor(1, vec![0.0]).unwrap();
    let n = 256;
    let policy = single_policy(&model, init.belief(), vec![one], n);
    let r = evaluate_policy(&model, &policy, &init, 40, 500, 6, None).unwrap();
    let tot: f64 = r.mean_cost[1..].iter().sum::<f64>() / 39.0;
    // The reproduction is the particle mean, off by O(1/n) in mean square.
    let want = 1.0 + 1.0 / n as f64;
    assert!((tot - want).abs() < 0.03, "{tot}");
}

#[test]
fn symbol_frequencies_match_the_belief() {
    let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
    let chol = model.noise().cholesky().clone();
    let prior = Belief::gaussian_sample(&[0.3], &chol, 1000, &mut stream_rng(9, 0));
    let q = ConvexQuantizer::<f64>::nearest_neighbor(1, vec![-1.0, 0.0, 0.8]).unwrap();
    let init = InitialDistribution::Particles(prior.clone());
    let policy = single_policy(&model, prior.clone(), vec![q.clone()], 16);
    let n = 20_000u64;
    let mut counts = [0f64; 3];
    for k in 0..n {
        let mut lp = ClosedLoop::new(&model, &policy, &init, 17, k).unwrap();
        counts[lp.step().unwrap().symbol] += 1.0;
    }
    let p = prior.symbol_probs(&q);
    let chi2: f64 = (0..3).map(|i| (counts[i] - n as f64 * p[i]).powi(2) / (n as f64 * p[i])).sum();
    // 99.9% quantile of chi-square with 2 degrees of freedom.
    assert!(chi2 < 13.82, "chi2 = {chi2}, counts {counts:?}, p {p:?}");
}

#[test]
fn receiver_centroids_converge_with_the_belief() {
    let limit = Belief::<f64>::equal_weight(1, vec![-1.0, -0.5, 0.2, 0.9, 1.4]).unwrap();
    let q = ConvexQuantizer::<f64>::nearest_neighbor(1, vec![-0.7, 1.0]).unwrap();
    let shifted = |eps: f64| Belief::new(1, limit.points().iter().map(|x| x + eps).collect(), limit.weights().to_vec()).unwrap();
    let beliefs: Vec<Belief<f64>> = (1..=12).map(|n| shifted(0.1 / (n * n) as f64)).collect();
    let qs = vec![q.clone(); beliefs.len()];
    let rc = check_receiver_convergence(&beliefs, &qs, &limit, &q).unwrap();
    assert!(rc.pass, "{:?}", rc.gaps);
    assert!(rc.gaps.windows(2).all(|w| w[1] <= w[0]));

    let stuck: Vec<Belief<f64>> = (0..12).map(|_| shifted(0.05)).collect();
    let rc = check_receiver_convergence(&stuck, &qs, &limit, &q).unwrap();
    assert!(!rc.pass);
}

#[test]
fn value_tables_respect_the_discounted_cap() {
    let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
    let init = InitialDistribution::PointMass(vec![1.0]);
    let d = design(&model, &init, &small_params(), 4).unwrap();
    for beta in [0.0, 0.5, 0.9, 0.99] {
        let t = value_iteration(&d.kernel, beta, 1e-8, 1_000_000).unwrap();
        let c = check_value_table(&model, &d.cover, beta, &t.values);
        assert!(c.pass, "{c:?}");
        assert!(t.values.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn discounted_averages_approach_the_average_cost() {
    let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
    let init = InitialDistribution::PointMass(vec![1.0]);
    let d = design(&model, &init, &small_params(), 4).unwrap();
    let s = &d.solution;
    assert!(s.converged);
    let gaps: Vec<f64> = s.rho_trend.iter().map(|r| (r - s.rho_star).abs()).collect();
    assert!(gaps.last().unwrap() <= &gaps[0], "{:?} vs {}", s.rho_trend, s.rho_star);
    assert!(s.rho_star > 0.0 && s.rho_star < 1.0 / (1.0 - 0.25));
}

#[test]
fn single_precision_pipeline() {
    let model = zdq_core::SourceModel32::scalar(0.5, 1.0).unwrap();
    let init = InitialDistribution::PointMass(vec![1.0f32]);
    let p = small_params();
    let params = DesignParams::<f32> {
        m: p.m,
        n_actions: p.n_actions,
        lloyd_iters: p.lloyd_iters,
        cover_radius: 0.6,
        n_rollouts: p.n_rollouts,
        rollout_horizon: p.rollout_horizon,
        cover_cap: p.cover_cap,
        beta_schedule: vec![0.9, 0.99],
        tol: 1e-4,
        max_iter: 1_000_000,
        reference: 0,
        filter: FilterSettings {
            n_particles: 16,
            mass_floor: 1e-6,
            exact_budget: 512,
        },
    };
    let d = design(&model, &init, &params, 4).unwrap();
    assert!(d.solution.rho_star.is_finite() && d.solution.rho_star > 0.0);
    let r = evaluate_policy(&model, &d.policy, &init, 16, 64, 1, Some(0.9f32)).unwrap();
    let avg = r.average().unwrap();
    assert!(avg > 0.0 && avg < 2.0, "{avg}");
}
