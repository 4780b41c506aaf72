use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use seqloc::analysis::{bias_lspm_d, check_crlb_ordering, crlb, fim};
use seqloc::estimators::{
    initial_guess, solve_ilspm_kvd, solve_ilspm_pvd, solve_ilspm_uvd, EstimateReport, SolverConfig,
};
use seqloc::model::{FullParams, MeasurementBatch, Variant, VelocityPrior};
use seqloc::simulator::{run_trial, ScenarioConfig};
use seqloc::Error;
use seqloc_harness::batch_io::{read_measurements, write_batch};
use seqloc_harness::config::ConfigFile;
use seqloc_harness::experiments::{default_scenario, resolve, run_experiment, ExperimentName};
use seqloc_harness::output::{fmt_float, write_outputs};

#[derive(Parser)]
#[command(name = "seqloc", version, about = "Sequential pseudorange localization toolkit")]
struct Cli {
    /// Worker threads for Monte Carlo trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one batch and write it as CSV; the truth goes to stderr
    /// (stdout when --out is given).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Trial (fix) index.
        #[arg(long, default_value_t = 0)]
        fix: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one estimator on a batch CSV and print a key=value report.
    Solve {
        #[arg(long)]
        batch: PathBuf,
        /// Supplies the base station positions and the epoch index.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        estimator: Estimator,
        /// Known velocity for kvd, e.g. `5,0`.
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        velocity: Option<DVector<f64>>,
        /// Prior mean velocity for pvd.
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        prior_mean: Option<DVector<f64>>,
        #[arg(long, default_value_t = 2.0)]
        prior_std: f64,
        #[arg(long, default_value_t = 20)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
    },
    /// Bounds and error budgets for one synthesized fix.
    Crlb {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        fix: usize,
        #[arg(long, default_value_t = 2.0)]
        prior_std: f64,
    },
    /// Run a full Monte Carlo sweep and write its CSV files.
    Experiment {
        #[arg(value_enum)]
        name: ExperimentName,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Also write an SVG chart.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Kvd,
    Uvd,
    Pvd,
    LspmD,
}

fn parse_vector(s: &str) -> Result<DVector<f64>, String> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(DVector::from_vec(v)),
        _ => Err(format!("expected comma-separated numbers, got `{s}`")),
    }
}

fn join(v: &DVector<f64>) -> String {
    v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(",")
}

fn load(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    path.map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
}

/// Scenario for the single-fix commands: the speed-compare defaults (30 m
/// square, random placement at 5 m/s) under the config file.
fn single_fix_scenario(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = load(path)?.scenario(&default_scenario(ExperimentName::SpeedCompare))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn synthesize(cfg: &ScenarioConfig, fix: usize) -> anyhow::Result<(MeasurementBatch, FullParams)> {
    let rec = run_trial(cfg, fix, &[], &SolverConfig::default())?;
    Ok((rec.batch, rec.truth))
}

fn truth_lines(truth: &FullParams, t_l: f64) -> String {
    format!(
        "truth.t_l={}\ntruth.position={}\ntruth.clock_offset={}\ntruth.clock_drift={}\ntruth.velocity={}\n",
        fmt_float(t_l),
        join(&truth.p),
        fmt_float(truth.b),
        fmt_float(truth.d),
        join(&truth.v)
    )
}

fn simulate(config: Option<&Path>, seed: Option<u64>, fix: usize, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = single_fix_scenario(config, seed)?;
    let (batch, truth) = synthesize(&cfg, fix)?;
    let truth = truth_lines(&truth, batch.t_l());
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_batch(file, &batch)?;
            print!("{truth}");
        }
        None => {
            write_batch(std::io::stdout().lock(), &batch)?;
            eprint!("{truth}");
        }
    }
    Ok(())
}

fn report(name: &str, rep: &EstimateReport<FullParams>, estimates_velocity: bool) -> String {
    let n = rep.params.dim();
    let std: DVector<f64> = rep.covariance.diagonal().rows(0, n).map(f64::sqrt);
    let mut s = format!(
        "estimator={name}\nconverged=true\niterations={}\nfinal_step_norm={}\nposition={}\nclock_offset={}\nclock_drift={}\n",
        rep.iterations,
        fmt_float(rep.final_step_norm),
        join(&rep.params.p),
        fmt_float(rep.params.b),
        fmt_float(rep.params.d),
    );
    if estimates_velocity {
        s += &format!("velocity={}\n", join(&rep.params.v));
    }
    s += &format!("position_std={}\n", join(&std));
    s
}

#[allow(clippy::too_many_arguments)]
fn solve(
    batch_path: &Path,
    config: Option<&Path>,
    estimator: Estimator,
    velocity: Option<DVector<f64>>,
    prior_mean: Option<DVector<f64>>,
    prior_std: f64,
    solver: SolverConfig,
) -> anyhow::Result<()> {
    let cfg = single_fix_scenario(config, None)?;
    let file = std::fs::File::open(batch_path).with_context(|| format!("opening {}", batch_path.display()))?;
    let entries = read_measurements(file)?;
    let epoch = entries
        .get(cfg.epoch_index)
        .map(|m| m.t)
        .context("batch is shorter than the epoch index")?;
    let batch = MeasurementBatch::new(entries, epoch)?;
    let bs = &cfg.bs;
    let n = bs.dim();
    let zero = DVector::zeros(n);
    let check = |v: &DVector<f64>| -> anyhow::Result<()> {
        if v.len() != n {
            bail!("vector has {} components, base stations are {n}-D", v.len());
        }
        Ok(())
    };
    let name = match estimator {
        Estimator::Kvd => "kvd",
        Estimator::Uvd => "uvd",
        Estimator::Pvd => "pvd",
        Estimator::LspmD => "lspm-d",
    };
    let result = match estimator {
        Estimator::Kvd | Estimator::LspmD => {
            let v = match estimator {
                Estimator::Kvd => velocity.context("kvd needs --velocity")?,
                _ => zero.clone(),
            };
            check(&v)?;
            let init = initial_guess(&batch, bs, &v)?.kvd();
            solve_ilspm_kvd(&batch, bs, &v, &init, &solver).map(|rep| EstimateReport {
                params: rep.params.with_velocity(v.clone()),
                iterations: rep.iterations,
                converged: rep.converged,
                covariance: rep.covariance,
                final_step_norm: rep.final_step_norm,
            })
        }
        Estimator::Uvd => {
            let init = initial_guess(&batch, bs, &zero)?;
            solve_ilspm_uvd(&batch, bs, &init, &solver)
        }
        Estimator::Pvd => {
            let mean = prior_mean.context("pvd needs --prior-mean")?;
            check(&mean)?;
            let prior = VelocityPrior::isotropic(mean, prior_std)?;
            let init = initial_guess(&batch, bs, prior.mean())?;
            solve_ilspm_pvd(&batch, bs, &prior, &init, &solver)
        }
    };
    match result {
        Ok(rep) => {
            print!(
                "{}",
                report(name, &rep, matches!(estimator, Estimator::Uvd | Estimator::Pvd))
            );
            Ok(())
        }
        Err(Error::NotConverged {
            iterations,
            step_norm,
            last,
        }) => {
            println!(
                "estimator={name}\nconverged=false\niterations={iterations}\nfinal_step_norm={}\nposition={}",
                fmt_float(step_norm),
                join(&last.rows(0, n).into_owned())
            );
            std::io::stdout().flush()?;
            bail!("{name} did not converge in {iterations} iterations")
        }
        Err(e) => Err(e.into()),
    }
}

fn theory(config: Option<&Path>, seed: Option<u64>, fix: usize, prior_std: f64) -> anyhow::Result<()> {
    let cfg = single_fix_scenario(config, seed)?;
    let (batch, truth) = synthesize(&cfg, fix)?;
    let bs = &cfg.bs;
    let n = truth.dim();
    let prior = VelocityPrior::isotropic(truth.v.clone(), prior_std)?;
    print!("{}", truth_lines(&truth, batch.t_l()));
    for (name, variant) in [("kvd", Variant::Kvd), ("pvd", Variant::Pvd), ("uvd", Variant::Uvd)] {
        let f = fim(&batch, bs, &truth, variant, Some(&prior))?;
        let bound = crlb(&f);
        println!("{name}.crlb={}", join(&bound));
        println!("{name}.position_rmse={}", fmt_float(bound.rows(0, n).sum().sqrt()));
    }
    let d = bias_lspm_d(&batch, bs, &truth)?;
    println!("lspm-d.bias={}", join(&d.bias));
    println!("lspm-d.position_rmse={}", fmt_float(d.rmse));
    let o = check_crlb_ordering(&batch, bs, &truth, &prior)?;
    println!("ordering.min_eig_pvd_minus_kvd={}", fmt_float(o.min_eig_pvd_minus_kvd));
    println!("ordering.min_eig_uvd_minus_pvd={}", fmt_float(o.min_eig_uvd_minus_pvd));
    println!("ordering.holds={}", o.holds);
    Ok(())
}

fn experiment(
    name: ExperimentName,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
    svg: bool,
) -> anyhow::Result<()> {
    let file = config.map(ConfigFile::load).transpose()?;
    let (spec, cfg) = resolve(name, file.as_ref(), seed, trials)?;
    let result = run_experiment(&spec, &cfg)?;
    for path in write_outputs(&result, out, svg)? {
        println!("wrote {}", path.display());
    }
    println!(
        "{:>14} {:>14} {:>12} {:>12} {:>12} {:>8}",
        "sweep_value", "estimator", "empirical", "theory", "crlb", "failed"
    );
    for r in &result.table.rows {
        println!(
            "{:>14.6} {:>14} {:>12.6} {:>12.6} {:>12.6} {:>8}",
            r.sweep_value, r.estimator, r.empirical_rmse, r.theoretical_rmse, r.crlb_rmse, r.non_converged
        );
    }
    if let Some(c) = &result.circular {
        for r in &c.rows {
            let axes: Vec<String> = r.per_axis.iter().map(|x| format!("{:.2}", x * 100.0)).collect();
            println!(
                "{}: per-axis [{}] cm, position {:.2} cm over {} fixes",
                r.estimator,
                axes.join(", "),
                r.rmse * 100.0,
                r.fixes
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { config, seed, fix, out } => simulate(config.as_deref(), seed, fix, out.as_deref()),
        Command::Solve {
            batch,
            config,
            estimator,
            velocity,
            prior_mean,
            prior_std,
            max_iter,
            threshold,
        } => {
            let solver = SolverConfig {
                max_iter,
                threshold,
                ..SolverConfig::default()
            };
            solver.validate()?;
            solve(
                &batch,
                config.as_deref(),
                estimator,
                velocity,
                prior_mean,
                prior_std,
                solver,
            )
        }
        Command::Crlb {
            config,
            seed,
            fix,
            prior_std,
        } => theory(config.as_deref(), seed, fix, prior_std),
        Command::Experiment {
            name,
            config,
            out,
            seed,
            trials,
            svg,
        } => experiment(name, config.as_deref(), &out, seed, trials, svg),
    }
}

fn main() -> anyhow::Result<()> {
    let mut cli = Cli::parse();
    match cli.threads.take() {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
            pool.install(|| run(cli))
        }
        None => run(cli),
    }
}
