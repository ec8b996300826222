//! Subcommand implementations. Each resolves its flags against defaults, does
//! the work, and finishes by writing `manifest.json` next to its outputs.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use otws_core::data::{
    decode_raw_grid, gen_random_r3, parse_idx_images, save_pgm, save_raw_grid, DEFAULT_FLOOR,
};
use otws_core::{
    barycenter_descent, sinkhorn_run, solve_exact, verify_certificate, warm_start_vector,
    BarycenterConfig, CostMatrix, DatasetSpec, DiscreteMeasure, Domain, Error, ExactPotentials,
    PotentialOracle, PotentialSource, SimplexHandling, SinkhornConfig, SinkhornTrace, StepRule,
};
use otws_learn::checkpoint::{Checkpoint, Progress};
use otws_learn::models::{
    grid_cost, Approximator, ApproximatorConfig, ApproximatorPotentials, Generator, GeneratorConfig,
};
use otws_learn::train::{stream_rng, LossKind, Stream, TrainConfig, Trainer};

use crate::args::*;
use crate::dataset::{self, Dataset};
use crate::manifest::RunManifest;
use crate::summary::{self, SummaryRow, TraceRow};
use crate::{resolve_seed, CliError};

type CliResult<T> = Result<T, CliError>;

pub const DEFAULT_N: usize = 196;
pub const DEFAULT_EPS: f64 = 0.00025;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const DEFAULT_CHECK_EVERY: usize = 25;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Solve(a) => cmd_solve(a),
        Command::Sinkhorn(a) => cmd_sinkhorn(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Barycenter(a) => cmd_barycenter(a),
        Command::GenData(a) => cmd_gen_data(a),
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Fills `slot` with `default` if unset and returns the value.
fn fill<T: Clone>(slot: &mut Option<T>, default: T) -> T {
    slot.get_or_insert(default).clone()
}

fn out_dir(slot: &mut Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    let dir = fill(slot, PathBuf::from(format!("otws-{name}")));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    summary::write_rows(BufWriter::new(file), rows)?;
    Ok(())
}

/// Loads a dataset, generating random data on an `n`-point grid or checking
/// that a file's grid has `n` points when `n` was given.
fn load_dataset(
    spec: &str,
    n: &mut Option<usize>,
    measures: usize,
    seed: u64,
) -> CliResult<Dataset> {
    let d = dataset::load(spec, n.unwrap_or(DEFAULT_N), measures, seed)?;
    let got = d.measures[0].len();
    match *n {
        Some(want) if want != got => {
            return Err(CliError::Usage(format!(
                "{spec} has {got} points per measure, --n is {want}"
            )))
        }
        _ => *n = Some(got),
    }
    Ok(d)
}

fn load_approximator(model: Option<&Path>, n: usize) -> CliResult<Approximator> {
    let path =
        model.ok_or_else(|| CliError::Usage("--init net and --source net need --model".into()))?;
    let approx = Checkpoint::load(path)?.approximator;
    if approx.config.n != n {
        return Err(CliError::Usage(format!(
            "{} was trained on n = {}, data has n = {n}",
            path.display(),
            approx.config.n
        )));
    }
    Ok(approx)
}

fn domain(d: DomainArg) -> Domain {
    match d {
        DomainArg::Linear => Domain::Linear,
        DomainArg::Log => Domain::Log,
    }
}

fn init_name(i: Init) -> &'static str {
    match i {
        Init::Ones => "ones",
        Init::Net => "net",
    }
}

/// One Sinkhorn run; for `net` the prediction and warm-start construction
/// are timed and added to every record.
fn sinkhorn_instance(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
    init: Init,
    approx: Option<&Approximator>,
) -> CliResult<SinkhornTrace> {
    match (init, approx) {
        (Init::Ones, _) => Ok(sinkhorn_run(
            mu,
            nu,
            cost,
            cfg,
            Array1::ones(nu.len()).view(),
        )?),
        (Init::Net, Some(a)) => {
            let started = Instant::now();
            let f = a.predict_pair(mu, nu)?;
            let v0 = warm_start_vector(f.view(), cost, cfg)?;
            let setup = started.elapsed().as_nanos() as u64;
            let mut trace = sinkhorn_run(mu, nu, cost, cfg, v0.view())?;
            trace.shift_wall_time(setup);
            Ok(trace)
        }
        (Init::Net, None) => Err(CliError::Usage("--init net needs --model".into())),
    }
}

/// `|⟨C, Γ⟩ - W| / W`, NaN when the exact value is zero.
fn trace_rows(id: usize, init: Init, trace: &SinkhornTrace, exact_value: f64) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            instance_id: id,
            init: init_name(init).into(),
            iteration: r.iteration,
            mcv: r.mcv,
            rel_err: if exact_value > 0.0 {
                (r.primal_cost - exact_value).abs() / exact_value
            } else {
                f64::NAN
            },
            wall_time_ns: r.wall_time_ns,
        })
        .collect()
}

fn sinkhorn_config(
    eps: f64,
    max_iters: usize,
    check_every: usize,
    stop_mcv: Option<f64>,
    dom: DomainArg,
) -> CliResult<SinkhornConfig> {
    let cfg = SinkhornConfig {
        max_iters,
        check_every,
        stop_mcv,
        domain: domain(dom),
        ..SinkhornConfig::new(eps)
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SolutionRow {
    instance_id: usize,
    primal_value: f64,
    dual_value: f64,
    gap: f64,
    pivots: usize,
    certified: bool,
}

#[derive(Serialize)]
struct PotentialRow {
    instance_id: usize,
    side: &'static str,
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct PlanRow {
    instance_id: usize,
    i: usize,
    j: usize,
    mass: f64,
}

pub fn cmd_solve(args: SolveArgs) -> CliResult<()> {
    let mut a = crate::config::merge(&args, args.config.as_deref())?;
    let spec = fill(&mut a.dataset, "random".into());
    let count = fill(&mut a.count, 10);
    let pairing = fill(&mut a.pairing, Pairing::Consecutive);
    let plans = fill(&mut a.plans, false);
    let seed = resolve_seed(a.seed);
    a.seed = Some(seed);
    let dir = out_dir(&mut a.out, "solve")?;
    let data = load_dataset(
        &spec,
        &mut a.n,
        dataset::measures_needed(count, pairing),
        seed,
    )?;
    let cost = dataset::cost_for(&data)?;

    let solved: Vec<_> = dataset::instances(&data, pairing)
        .par_iter()
        .map(|(mu, nu)| {
            let sol = solve_exact(mu, nu, &cost)?;
            let certified = verify_certificate(&sol, mu, nu, &cost).passed();
            Ok((sol, certified))
        })
        .collect::<Result<_, Error>>()?;

    let (mut rows, mut potentials, mut plan_rows) = (Vec::new(), Vec::new(), Vec::new());
    for (k, (sol, certified)) in solved.iter().enumerate() {
        println!(
            "instance {k}: primal {:.12e} gap {:.3e} certified {certified}",
            sol.primal_value, sol.gap
        );
        rows.push(SolutionRow {
            instance_id: k,
            primal_value: sol.primal_value,
            dual_value: sol.dual_value,
            gap: sol.gap,
            pivots: sol.iterations,
            certified: *certified,
        });
        for (side, v) in [("f", &sol.duals.f), ("g", &sol.duals.g)] {
            potentials.extend(v.iter().enumerate().map(|(index, &value)| PotentialRow {
                instance_id: k,
                side,
                index,
                value,
            }));
        }
        if plans {
            for ((i, j), &mass) in sol.plan.entries().indexed_iter() {
                if mass > 0.0 {
                    plan_rows.push(PlanRow {
                        instance_id: k,
                        i,
                        j,
                        mass,
                    });
                }
            }
        }
    }

    let mut m = RunManifest::new("solve", &a, Some(seed))?;
    if let Some(p) = &data.path {
        m.input(p);
    }
    let mut outputs = vec![dir.join("solutions.csv"), dir.join("potentials.csv")];
    write_csv(&outputs[0], &rows)?;
    write_csv(&outputs[1], &potentials)?;
    if plans {
        outputs.push(dir.join("plans.csv"));
        write_csv(&outputs[2], &plan_rows)?;
    }
    for o in &outputs {
        m.output(o);
    }
    m.finish(&dir)?;
    if let Some(bad) = solved.iter().position(|(_, c)| !c) {
        return Err(Error::SolverFailure {
            iterations: solved[bad].0.iterations,
            reason: format!("instance {bad} failed certification"),
        }
        .into());
    }
    Ok(())
}

pub fn cmd_sinkhorn(args: SinkhornArgs) -> CliResult<()> {
    let mut a = crate::config::merge(&args, args.config.as_deref())?;
    let spec = fill(&mut a.dataset, "random".into());
    let count = fill(&mut a.count, 10);
    let pairing = fill(&mut a.pairing, Pairing::Consecutive);
    let init = fill(&mut a.init, Init::Ones);
    let cfg = sinkhorn_config(
        fill(&mut a.eps, DEFAULT_EPS),
        fill(&mut a.max_iters, DEFAULT_MAX_ITERS),
        fill(&mut a.check_every, DEFAULT_CHECK_EVERY),
        a.stop_mcv,
        fill(&mut a.domain, DomainArg::Log),
    )?;
    let seed = resolve_seed(a.seed);
    a.seed = Some(seed);
    let dir = out_dir(&mut a.out, "sinkhorn")?;
    let data = load_dataset(
        &spec,
        &mut a.n,
        dataset::measures_needed(count, pairing),
        seed,
    )?;
    let cost = dataset::cost_for(&data)?;
    let n = data.measures[0].len();
    let approx = match init {
        Init::Net => Some(load_approximator(a.model.as_deref(), n)?),
        Init::Ones => None,
    };

    let traces: Vec<Vec<TraceRow>> = dataset::instances(&data, pairing)
        .par_iter()
        .enumerate()
        .map(|(k, (mu, nu))| {
            let exact = solve_exact(mu, nu, &cost)?.primal_value;
            let trace = sinkhorn_instance(mu, nu, &cost, &cfg, init, approx.as_ref())?;
            Ok(trace_rows(k, init, &trace, exact))
        })
        .collect::<CliResult<_>>()?;
    for (k, t) in traces.iter().enumerate() {
        if let Some(last) = t.last() {
            println!(
                "instance {k}: {} iterations, mcv {:.3e}, rel_err {:.3e}",
                last.iteration, last.mcv, last.rel_err
            );
        }
    }

    let mut m = RunManifest::new("sinkhorn", &a, Some(seed))?;
    if let Some(p) = &data.path {
        m.input(p);
    }
    if let Some(p) = a.model.as_deref().filter(|_| init == Init::Net) {
        m.input(p);
    }
    let path = dir.join("trace.csv");
    write_csv(&path, &traces.concat())?;
    m.output(&path);
    m.finish(&dir)?;
    Ok(())
}

pub fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    let mut a = crate::config::merge(&args, args.config.as_deref())?;
    if a.dataset.is_empty() {
        a.dataset.push("random".into());
    }
    if a.init.is_empty() {
        a.init.push(Init::Ones);
        if a.model.is_some() {
            a.init.push(Init::Net);
        }
    }
    let count = fill(&mut a.count, 100);
    let pairing = fill(&mut a.pairing, Pairing::Consecutive);
    let cfg = sinkhorn_config(
        fill(&mut a.eps, DEFAULT_EPS),
        fill(&mut a.max_iters, DEFAULT_MAX_ITERS),
        fill(&mut a.check_every, DEFAULT_CHECK_EVERY),
        a.stop_mcv,
        fill(&mut a.domain, DomainArg::Log),
    )?;
    let seed = resolve_seed(a.seed);
    a.seed = Some(seed);
    let dir = out_dir(&mut a.out, "bench")?;
    let inits = a.init.clone();

    let mut datasets = Vec::new();
    let mut names = HashSet::new();
    let mut n = a.n;
    for spec in &a.dataset {
        let d = load_dataset(spec, &mut n, dataset::measures_needed(count, pairing), seed)?;
        if !names.insert(d.name.clone()) {
            return Err(CliError::Usage(format!(
                "two datasets are both named {:?}",
                d.name
            )));
        }
        datasets.push(d);
    }
    a.n = n;
    let n = n.unwrap_or(DEFAULT_N);
    let approx = match inits.contains(&Init::Net) {
        true => Some(load_approximator(a.model.as_deref(), n)?),
        false => None,
    };

    let mut m = RunManifest::new("bench", &a, Some(seed))?;
    let mut summary_rows: Vec<SummaryRow> = Vec::new();
    for d in &datasets {
        let cost = dataset::cost_for(d)?;
        // Per instance, one trace per init in `inits` order.
        let per_instance: Vec<Vec<Vec<TraceRow>>> = dataset::instances(d, pairing)
            .par_iter()
            .enumerate()
            .map(|(k, (mu, nu))| {
                let exact = solve_exact(mu, nu, &cost)?.primal_value;
                inits
                    .iter()
                    .map(|&init| {
                        let trace = sinkhorn_instance(mu, nu, &cost, &cfg, init, approx.as_ref())?;
                        Ok(trace_rows(k, init, &trace, exact))
                    })
                    .collect::<CliResult<Vec<_>>>()
            })
            .collect::<CliResult<_>>()?;
        for (slot, &init) in inits.iter().enumerate() {
            let traces: Vec<Vec<TraceRow>> = per_instance.iter().map(|t| t[slot].clone()).collect();
            let rows = summary::summarize(&d.name, init_name(init), &traces);
            for r in &rows {
                println!(
                    "{} {} mcv<={:e}: {:.1} ± {:.1} iterations ({} of {} instances)",
                    r.dataset,
                    r.init,
                    r.threshold,
                    r.mean_iters,
                    r.ci95,
                    r.samples,
                    traces.len()
                );
            }
            summary_rows.extend(rows);
        }
        let path = dir.join(format!("trace-{}.csv", d.name));
        let all: Vec<TraceRow> = per_instance.into_iter().flatten().flatten().collect();
        write_csv(&path, &all)?;
        m.output(&path);
        if let Some(p) = &d.path {
            m.input(p);
        }
    }
    if let Some(p) = a.model.as_deref().filter(|_| approx.is_some()) {
        m.input(p);
    }
    let path = dir.join("summary.csv");
    write_csv(&path, &summary_rows)?;
    m.output(&path);
    m.finish(&dir)?;
    Ok(())
}

/// `l = 128` at `n = 784`; otherwise two latent images each of side
/// `⌈side / 2⌉`.
pub fn default_latent_dim(n: usize) -> usize {
    if n == 784 {
        return 128;
    }
    let side = (n as f64).sqrt().round() as usize;
    2 * side.div_ceil(2).pow(2)
}

pub fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut a = crate::config::merge(&args, args.config.as_deref())?;
    let n = fill(&mut a.n, DEFAULT_N);
    let defaults = GeneratorConfig::default();
    let gcfg = GeneratorConfig {
        latent_dim: fill(&mut a.latent_dim, default_latent_dim(n)),
        n,
        lambda: fill(&mut a.lambda, defaults.lambda),
        c: fill(&mut a.c, defaults.c),
    };
    gcfg.validate().map_err(usage)?;
    let seed = resolve_seed(a.seed);
    a.seed = Some(seed);
    let base = TrainConfig::default();
    let tcfg = TrainConfig {
        batch_size: fill(&mut a.batch_size, base.batch_size),
        minibatch_size: fill(&mut a.minibatch_size, base.minibatch_size),
        inner_epochs: fill(&mut a.epochs, base.inner_epochs),
        lr_approximator: fill(&mut a.lr_approximator, base.lr_approximator),
        lr_generator: fill(&mut a.lr_generator, base.lr_generator),
        lr_decay: fill(&mut a.lr_decay, base.lr_decay),
        total_unique_samples: fill(&mut a.samples, base.total_unique_samples),
        seed,
        loss: match fill(&mut a.loss, LossArg::Potential) {
            LossArg::Potential => LossKind::Potential,
            LossArg::Transport => LossKind::Transport,
        },
    };
    tcfg.validate().map_err(usage)?;
    if a.checkpoint_every == Some(0) {
        return Err(CliError::Usage(
            "--checkpoint-every must be at least 1".into(),
        ));
    }
    let dir = out_dir(&mut a.out, "train")?;

    let mut rng = stream_rng(seed, Stream::Init, 0, 0);
    let gen = Generator::new(gcfg, &mut rng)?;
    let approx = Approximator::new(ApproximatorConfig { n }, &mut rng)?;
    let mut trainer = Trainer::new(gen, approx, grid_cost(n)?, tcfg)?;
    let mut m = RunManifest::new("train", &a, Some(seed))?;
    let snapshot = |t: &Trainer| Checkpoint {
        generator: t.gen.clone(),
        approximator: t.approx.clone(),
        seed,
        progress: Progress {
            outer_iterations: t.outer(),
            samples_seen: t.samples_seen(),
        },
    };
    let total = trainer.cfg.outer_iterations();
    while !trainer.finished() {
        let r = trainer.step()?;
        log::info!(
            "outer {}/{total}: loss {:.4e} -> {:.4e}, generator {:.4e}, kept {}/{}",
            r.outer + 1,
            r.loss_pre,
            r.loss_post,
            r.generator_objective,
            r.kept,
            r.kept + r.dropped
        );
        if a.checkpoint_every.is_some_and(|k| trainer.outer() % k == 0) && !trainer.finished() {
            let path = dir.join(format!("checkpoint-{:05}.ckpt", trainer.outer()));
            snapshot(&trainer).save(&path)?;
            m.output(&path);
        }
    }

    let model = dir.join("model.ckpt");
    snapshot(&trainer).save(&model)?;
    let log_path = dir.join("train_log.csv");
    let timing_path = dir.join("train_timing.csv");
    let create = |p: &Path| {
        File::create(p)
            .map(BufWriter::new)
            .map_err(|e| Error::io(p, e))
    };
    trainer.log.write_csv(create(&log_path)?)?;
    trainer.log.write_timing_csv(create(&timing_path)?)?;
    for p in [&model, &log_path, &timing_path] {
        m.output(p);
    }
    m.finish(&dir)?;
    println!("wrote {}", model.display());
    Ok(())
}

#[derive(Serialize)]
struct ObjectiveRow {
    step: usize,
    objective: f64,
}

pub fn cmd_barycenter(args: BarycenterArgs) -> CliResult<()> {
    let mut a = crate::config::merge(&args, args.config.as_deref())?;
    let spec = fill(&mut a.dataset, "random".into());
    let count = fill(&mut a.count, 5);
    let source = fill(&mut a.source, SourceArg::Exact);
    let base = BarycenterConfig::default();
    let cfg = BarycenterConfig {
        step: fill(&mut a.step, base.step),
        max_steps: fill(&mut a.max_steps, base.max_steps),
        source: match source {
            SourceArg::Exact => PotentialSource::Exact,
            SourceArg::Net => PotentialSource::Approximator,
        },
        simplex: match fill(&mut a.simplex, SimplexArg::Project) {
            SimplexArg::Project => SimplexHandling::EuclideanProject,
            SimplexArg::Softmax => SimplexHandling::SoftmaxReparam,
        },
        step_rule: match fill(&mut a.step_rule, StepRuleArg::Bundle) {
            StepRuleArg::Bundle => StepRule::Bundle,
            StepRuleArg::Fixed => StepRule::Fixed,
        },
        ..base
    };
    cfg.validate().map_err(usage)?;
    let pgm = fill(&mut a.pgm, false);
    let seed = resolve_seed(a.seed);
    a.seed = Some(seed);
    let dir = out_dir(&mut a.out, "barycenter")?;
    let data = load_dataset(&spec, &mut a.n, count, seed)?;
    let cost = dataset::cost_for(&data)?;

    let approx = match source {
        SourceArg::Net => Some(load_approximator(
            a.model.as_deref(),
            data.measures[0].len(),
        )?),
        SourceArg::Exact => None,
    };
    let exact = ExactPotentials { cost: &cost };
    let oracle: &dyn PotentialOracle = match &approx {
        Some(approx) => &ApproximatorPotentials { approx },
        None => &exact,
    };
    let res = barycenter_descent(&data.measures, &cost, &cfg, oracle, None)?;
    println!(
        "{} steps, {} evaluations, objective {:.6e} -> {:.6e}",
        res.steps,
        res.evaluations,
        res.objective.first().copied().unwrap_or(f64::NAN),
        res.objective.last().copied().unwrap_or(f64::NAN)
    );

    let mut m = RunManifest::new("barycenter", &a, Some(seed))?;
    if let Some(p) = &data.path {
        m.input(p);
    }
    if let Some(p) = a.model.as_deref().filter(|_| approx.is_some()) {
        m.input(p);
    }
    let grid = dir.join("barycenter.otg");
    save_raw_grid(&grid, std::slice::from_ref(&res.mu))?;
    m.output(&grid);
    if pgm {
        let p = dir.join("barycenter.pgm");
        save_pgm(&p, &res.mu)?;
        m.output(&p);
    }
    let rows: Vec<ObjectiveRow> = res
        .objective
        .iter()
        .enumerate()
        .map(|(step, &objective)| ObjectiveRow { step, objective })
        .collect();
    let p = dir.join("objective.csv");
    write_csv(&p, &rows)?;
    m.output(&p);
    m.finish(&dir)?;
    Ok(())
}

pub fn cmd_gen_data(args: GenDataArgs) -> CliResult<()> {
    let mut a = crate::config::merge(&args, args.config.as_deref())?;
    let kind = fill(&mut a.kind, Kind::RandomR3);
    let floor = fill(&mut a.floor, DEFAULT_FLOOR);
    let pgm = fill(&mut a.pgm, false);
    let dir = out_dir(&mut a.out, "data")?;
    let read_input = |a: &GenDataArgs| -> CliResult<(PathBuf, Vec<u8>)> {
        let p = a
            .input
            .clone()
            .ok_or_else(|| CliError::Usage("--kind idx_images and raw_grid need --input".into()))?;
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, bytes))
    };
    let (measures, input, seed) = match kind {
        Kind::RandomR3 => {
            let count = fill(&mut a.count, 10);
            let side = dataset::side_of(fill(&mut a.n, DEFAULT_N)).map_err(usage)?;
            let seed = resolve_seed(a.seed);
            a.seed = Some(seed);
            let spec = DatasetSpec {
                floor,
                ..DatasetSpec::random_r3(side, count, seed)
            };
            spec.validate().map_err(usage)?;
            (gen_random_r3(&spec)?, None, Some(seed))
        }
        Kind::IdxImages => {
            let (p, bytes) = read_input(&a)?;
            (
                parse_idx_images(&bytes, floor, a.count.unwrap_or(usize::MAX))?,
                Some(p),
                None,
            )
        }
        Kind::RawGrid => {
            let (p, bytes) = read_input(&a)?;
            let mut ms = decode_raw_grid(&bytes, floor)?;
            if let Some(c) = a.count {
                ms.truncate(c);
            }
            (ms, Some(p), None)
        }
    };

    let mut m = RunManifest::new("gen-data", &a, seed)?;
    if let Some(p) = &input {
        m.input(p);
    }
    let path = dir.join("measures.otg");
    save_raw_grid(&path, &measures)?;
    m.output(&path);
    if pgm {
        for (k, mu) in measures.iter().enumerate() {
            let p = dir.join(format!("measure-{k:05}.pgm"));
            save_pgm(&p, mu)?;
            m.output(&p);
        }
    }
    m.finish(&dir)?;
    println!("wrote {} measures to {}", measures.len(), path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_dim_rule() {
        assert_eq!(default_latent_dim(784), 128);
        assert_eq!(default_latent_dim(196), 98);
        assert_eq!(default_latent_dim(64), 32);
        assert_eq!(default_latent_dim(25), 18);
    }
}
