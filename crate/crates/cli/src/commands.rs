use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;
use zdq_core::rng::derive_seed;
use zdq_core::verify::{run_suite, write_checks_csv, SuiteParams};
use zdq_core::{design, evaluate_policy, BoundCheck, CostReport, InitialDistribution, PolicyFile, SourceModel};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Everything a subcommand needs once flags and config are merged.
pub struct Context {
    pub config: ExperimentConfig,
    /// Directory the config file lives in.
    pub base: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub policy: PathBuf,
    pub strict: bool,
    pub sabotage_alpha: Option<f64>,
}

impl Context {
    pub fn new(
        config: ExperimentConfig,
        base: PathBuf,
        out: Option<PathBuf>,
        seed: Option<u64>,
        policy: Option<PathBuf>,
    ) -> Self {
        let out = out
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let policy = policy.unwrap_or_else(|| out.join("policy.json"));
        let seed = seed.unwrap_or(config.seed);
        Self {
            config,
            base,
            out,
            seed,
            policy,
            strict: false,
            sabotage_alpha: None,
        }
    }

    fn model(&self) -> Result<SourceModel<f64>, CliError> {
        self.config.model()
    }

    fn init(&self) -> Result<InitialDistribution<f64>, CliError> {
        self.config.initial(&self.base)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|source| CliError::Io {
            path: self.out.clone(),
            source,
        })?;
        let path = self.out.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|source| CliError::Io { path, source })
    }

    /// Loads the policy file and checks it was designed for the configured model.
    fn load_policy(&self) -> Result<PolicyFile<f64>, CliError> {
        let file = File::open(&self.policy).map_err(|source| CliError::Io {
            path: self.policy.clone(),
            source,
        })?;
        let pf = PolicyFile::read(std::io::BufReader::new(file))?;
        pf.model()?;
        pf.policy()?.check_model(&self.model()?)?;
        Ok(pf)
    }
}

fn flush(mut w: BufWriter<File>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Core(e.into()))
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let model = ctx.model()?;
    let init = ctx.init()?;
    let s = &ctx.config.simulate;
    let paths = model.simulate_many(&init, s.horizon, s.n_traj, derive_seed(ctx.seed, "simulate"));
    let d = model.dim();

    let out = ctx.create("trajectories.csv")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["traj".to_string(), "t".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(zdq_core::ZdqError::from)?;
    for (k, path) in paths.iter().enumerate() {
        for (t, x) in path.iter().enumerate() {
            let mut row = vec![k.to_string(), t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(zdq_core::ZdqError::from)?;
        }
    }
    let out = w.into_inner().map_err(|e| CliError::Core(e.into_error().into()))?;
    flush(out)?;

    let n = paths.len() as f64;
    let mut mean = vec![0.0; d];
    let mut second = 0.0;
    let mut worst: f64 = 0.0;
    let m0 = init.second_moment();
    for t in 0..=s.horizon {
        let m = paths.iter().map(|p| p[t].iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n;
        worst = worst.max(m / model.second_moment_bound(m0, t));
        if t == s.horizon {
            second = m;
            for p in &paths {
                for (acc, v) in mean.iter_mut().zip(&p[t]) {
                    *acc += v / n;
                }
            }
        }
    }
    println!("trajectories: {} x {} steps -> {}", s.n_traj, s.horizon, ctx.out.join("trajectories.csv").display());
    println!("alpha = {}  sigma^2 = {}", model.alpha(), model.sigma_sq());
    println!("mean X_T = {mean:?}");
    println!("E|X_T|^2 = {second}  (bound {})", model.second_moment_bound(m0, s.horizon));
    println!("max_t E|X_t|^2 / bound = {worst}");
    Ok(())
}

#[derive(Serialize)]
struct DesignReport {
    rho_star: f64,
    converged: bool,
    acoe_residual: f64,
    cover_size: usize,
    cover_radius: f64,
    n_actions: usize,
    reference: usize,
    beta_schedule: Vec<f64>,
    rho_trend: Vec<f64>,
    iterations: Vec<usize>,
    last_sup_residual: f64,
    /// Decimal strings: TOML integers stop at `i64::MAX`.
    seeds: BTreeMap<String, String>,
}

pub fn design_cmd(ctx: &Context) -> Result<(), CliError> {
    let model = ctx.model()?;
    let init = ctx.init()?;
    let d = design(&model, &init, &ctx.config.design_params(), ctx.seed)?;
    let pf = d.policy_file(&model)?;
    let mut out = ctx.create("policy.json")?;
    pf.write(&mut out)?;
    flush(out)?;

    let sol = &d.solution;
    let report = DesignReport {
        rho_star: sol.rho_star,
        converged: sol.converged,
        acoe_residual: sol.acoe_residual,
        cover_size: d.cover.len(),
        cover_radius: d.cover.radius(),
        n_actions: d.library.len(),
        reference: sol.reference,
        beta_schedule: sol.beta_schedule.clone(),
        rho_trend: sol.rho_trend.clone(),
        iterations: sol.iterations.clone(),
        last_sup_residual: sol.last_table.sup_residual,
        seeds: d.seeds.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
    };
    let text = toml::to_string(&report).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = ctx.create("design_report.toml")?;
    out.write_all(text.as_bytes()).map_err(|e| CliError::Core(e.into()))?;
    flush(out)?;

    println!("cover: {} representatives, {} actions", d.cover.len(), d.library.len());
    for (b, r) in sol.beta_schedule.iter().zip(&sol.rho_trend) {
        println!("beta = {b:<8} (1-beta) V(ref) = {r}");
    }
    println!("rho* = {}  ACOE residual = {:e}  converged = {}", sol.rho_star, sol.acoe_residual, sol.converged);
    println!("wrote {}", ctx.out.join("policy.json").display());
    if ctx.strict && !sol.converged {
        return Err(CliError::NotConverged);
    }
    Ok(())
}

fn write_grid(ctx: &Context, report: &CostReport<f64>) -> Result<(), CliError> {
    let out = ctx.create("evaluation_grid.csv")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "J_T", "stderr"]).map_err(zdq_core::ZdqError::from)?;
    for &t in &ctx.config.evaluation.t_grid {
        let (j, se) = report.average_at(t).expect("grid inside horizon");
        w.write_record([t.to_string(), j.to_string(), se.to_string()])
            .map_err(zdq_core::ZdqError::from)?;
        println!("T = {t:<6} J_T = {j:.6}  stderr = {se:.2e}");
    }
    let out = w.into_inner().map_err(|e| CliError::Core(e.into_error().into()))?;
    flush(out)
}

pub fn evaluate(ctx: &Context) -> Result<(), CliError> {
    let pf = ctx.load_policy()?;
    let model = ctx.model()?;
    let policy = pf.policy()?;
    let init = ctx.init()?;
    let ev = &ctx.config.evaluation;
    let horizon = *ev.t_grid.last().expect("validated");
    let report = evaluate_policy(
        &model,
        &policy,
        &init,
        horizon,
        ev.n_traj,
        derive_seed(ctx.seed, "evaluate"),
        ev.beta,
    )?;
    let mut out = ctx.create("cost_report.csv")?;
    report.write_csv(&mut out)?;
    flush(out)?;
    write_grid(ctx, &report)?;
    if let (Some(b), Some((v, se))) = (ev.beta, report.discounted()) {
        println!("discounted (beta = {b}, T = {horizon}) = {v:.6}  stderr = {se:.2e}");
    }
    println!("design rho* = {}", pf.rho_star);
    Ok(())
}

pub fn verify(ctx: &Context) -> Result<Vec<BoundCheck>, CliError> {
    let pf = ctx.load_policy()?;
    let model = ctx.model()?;
    let policy = pf.policy()?;
    let init = ctx.init()?;
    let cfg = &ctx.config;
    let params = SuiteParams {
        moment_horizon: cfg.verify.moment_horizon,
        moment_traj: cfg.verify.moment_traj,
        betas: cfg.verify.betas.clone(),
        n_traj: cfg.evaluation.n_traj,
        t_trunc: cfg.verify.t_trunc,
        t_grid: cfg.evaluation.t_grid.clone(),
        exact_budget: cfg.filter.exact_budget,
        alpha_scale: ctx.sabotage_alpha.unwrap_or(1.0),
    };
    let table = Some((pf.value_table.beta, pf.value_table.values.as_slice()));
    let checks = run_suite(&model, &policy, &init, table, &params, derive_seed(ctx.seed, "verify"))?;
    let mut out = ctx.create("checks.csv")?;
    write_checks_csv(&checks, &mut out)?;
    flush(out)?;
    for c in &checks {
        let tag = match (c.pass, c.is_tight()) {
            (false, _) => "FAIL",
            (true, true) => "tight",
            (true, false) => "ok",
        };
        println!("{tag:<5} {:<28} lhs = {:.6e}  se = {:.2e}  rhs = {:.6e}", c.name, c.lhs, c.stderr, c.rhs);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(CliError::VerifyFailed {
            failed,
            total: checks.len(),
        });
    }
    Ok(checks)
}

pub fn export(ctx: &Context) -> Result<(), CliError> {
    let pf = ctx.load_policy()?;
    let dim = pf.model.dim;
    let csv_err = |e: csv::Error| CliError::Core(e.into());

    let mut w = csv::Writer::from_writer(ctx.create("cover_representatives.csv")?);
    let mut header = vec!["rep".to_string(), "w".to_string()];
    header.extend((1..=dim).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (k, b) in pf.cover.representatives().iter().enumerate() {
        for (x, wt) in b.iter() {
            let mut row = vec![k.to_string(), wt.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    finish(w)?;

    let mut w = csv::Writer::from_writer(ctx.create("value_table.csv")?);
    w.write_record(["rep", "value", "h", "action"]).map_err(csv_err)?;
    let vt = &pf.value_table;
    for k in 0..vt.values.len() {
        w.write_record([
            k.to_string(),
            vt.values[k].to_string(),
            pf.h[k].to_string(),
            pf.map[k].to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)?;

    let mut w = csv::Writer::from_writer(ctx.create("rho_trend.csv")?);
    w.write_record(["beta", "rho"]).map_err(csv_err)?;
    for (b, r) in pf.beta_schedule.iter().zip(&pf.rho_trend) {
        w.write_record([b.to_string(), r.to_string()]).map_err(csv_err)?;
    }
    finish(w)?;

    let mut w = csv::Writer::from_writer(ctx.create("actions.csv")?);
    let mut header = vec!["action".to_string(), "cell".to_string(), "weight".to_string()];
    header.extend((1..=dim).map(|k| format!("site{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (a, q) in pf.actions.iter().enumerate() {
        for i in 0..q.n_cells() {
            let mut row = vec![a.to_string(), i.to_string(), q.weights()[i].to_string()];
            row.extend(q.site(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    finish(w)?;

    println!(
        "exported {} representatives, {} actions to {}",
        pf.cover.len(),
        pf.actions.len(),
        ctx.out.display()
    );
    Ok(())
}

fn finish(w: csv::Writer<BufWriter<File>>) -> Result<(), CliError> {
    let out = w.into_inner().map_err(|e| CliError::Core(e.into_error().into()))?;
    flush(out)
}
