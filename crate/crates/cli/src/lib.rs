//! Command implementations behind the `chargegen` binary: ingest raw
//! sessions, train the diffusion model, sample scenarios, evaluate
//! generation quality, and solve the day-ahead bidding program.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ndarray::Array2;

use chargegen_core::bidding::{
    assemble_instance, read_price_csv, reduce_scenarios, solve_bidding, write_cost_summary,
    write_plan_csv, ArrivalHistogram, AssembleConfig, DAY_INTERVALS,
};
use chargegen_core::checkpoint::{load_checkpoint, save_checkpoint};
use chargegen_core::engine::{
    read_scenario_csv, sample, train, write_loss_history, write_scenario_csv,
    TrainConfig,
};
use chargegen_core::eval::{
    autocorrelation, bulk_rate_density_with, discriminative_score, duration_pdf,
    export_projection_input, marginal_score, recover_durations_with, recovery_threshold,
    tail_score, MetricReport,
};
use chargegen_core::ingest::{
    build_battery_curves, build_station_profiles, curves_to_batch, parse_sessions,
    profiles_to_batch,
};
use chargegen_core::network::NetworkConfig;
use chargegen_core::{seed, DenoiserModel, DiffusionSchedule};
use config::{RunConfig, Task};

#[derive(Parser)]
#[command(name = "chargegen", version, about = "EV charging scenario generation, evaluation, and day-ahead bidding")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert raw charging sessions into training corpora.
    Ingest {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Raw session file (overrides paths.sessions).
        #[arg(long, value_name = "PATH")]
        sessions: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the denoising model on an ingested corpus.
    Train {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Corpus CSV (overrides the task's default corpus file).
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Draw scenarios from a trained checkpoint.
    Sample {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(short = 'n', long, value_name = "COUNT", default_value_t = 100)]
        count: usize,
        /// Station name or label index (conditional checkpoints only).
        #[arg(long, value_name = "LABEL")]
        label: Option<String>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Score a generated corpus against a real one.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "PATH")]
        real: PathBuf,
        #[arg(long = "gen", value_name = "PATH")]
        generated: PathBuf,
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Solve the day-ahead bidding program over scenarios.
    Bid {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Scenario CSV (generated battery curves).
        #[arg(long, value_name = "PATH")]
        scenarios: PathBuf,
        /// Price CSV (overrides bidding.price_file).
        #[arg(long, value_name = "PATH")]
        prices: Option<PathBuf>,
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { config, sessions, out } => cmd_ingest(&config, sessions.as_deref(), out.as_deref()),
        Command::Train { config, corpus, seed, out } => cmd_train(&config, corpus.as_deref(), seed, out.as_deref()),
        Command::Sample { config, count, label, checkpoint, seed, out } => {
            cmd_sample(&config, count, label.as_deref(), checkpoint.as_deref(), seed, out.as_deref())
        }
        Command::Evaluate { config, real, generated, seed, out } => {
            cmd_evaluate(&config, &real, &generated, seed, out.as_deref())
        }
        Command::Bid { config, scenarios, prices, seed, out } => {
            cmd_bid(&config, &scenarios, prices.as_deref(), seed, out.as_deref())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn seed_header(stage: &str, root: u64, stage_seed: u64) -> Vec<String> {
    vec![format!("stage={stage} root_seed={root} stage_seed={stage_seed}")]
}

fn schedule_of(config: &RunConfig) -> Result<DiffusionSchedule> {
    Ok(DiffusionSchedule::quadratic(
        config.diffusion.steps,
        config.diffusion.beta_start,
        config.diffusion.beta_end,
    )?)
}

fn cmd_ingest(config_path: &Path, sessions_override: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let sessions_path = sessions_override.unwrap_or(&config.paths.sessions);
    let out_dir = out.unwrap_or(&config.paths.corpus_dir);
    ensure_dir(out_dir)?;

    let (sessions, mut report) = parse_sessions(sessions_path)?;

    let curves = build_battery_curves(&sessions, &mut report);
    let batch = curves_to_batch(&curves);
    write_scenario_csv(&batch, &out_dir.join("battery_curves.csv"), &[])?;

    // Arrival minutes feed the bidding stage's arrival resampling.
    let arrivals: Vec<String> = sessions
        .iter()
        .map(|s| {
            let midnight = s.connection_time.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc();
            ((s.connection_time - midnight).num_minutes() as usize).to_string()
        })
        .collect();
    fs::write(
        out_dir.join("arrivals.csv"),
        format!("arrival_minute\n{}\n", arrivals.join("\n")),
    )?;

    let mut profiles = Vec::new();
    for (label, station) in config.ingest.stations.iter().enumerate() {
        profiles.extend(build_station_profiles(&sessions, station, label, config.rate_unit(), &mut report));
    }
    if !profiles.is_empty() {
        let batch = profiles_to_batch(&profiles);
        write_scenario_csv(&batch, &out_dir.join("station_profiles.csv"), &[])?;
    }

    fs::write(out_dir.join("ingest_report.txt"), report.to_string())?;
    println!(
        "ingested {} sessions -> {} curves, {} profiles ({} rows skipped)",
        report.valid_rows,
        curves.len(),
        profiles.len(),
        report.skipped.len()
    );
    Ok(())
}

fn corpus_file(config: &RunConfig) -> PathBuf {
    match config.task {
        Task::Battery => config.paths.corpus_dir.join("battery_curves.csv"),
        Task::Station => config.paths.corpus_dir.join("station_profiles.csv"),
    }
}

fn cmd_train(config_path: &Path, corpus_override: Option<&Path>, seed_override: Option<u64>, out: Option<&Path>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let root_seed = seed_override.unwrap_or(config.seed);
    let corpus_path = corpus_override.map(Path::to_path_buf).unwrap_or_else(|| corpus_file(&config));
    let out_dir = out.unwrap_or(&config.paths.output_dir);
    ensure_dir(out_dir)?;

    let raw = read_scenario_csv(&corpus_path)
        .with_context(|| format!("reading corpus {}", corpus_path.display()))?;
    if config.task == Task::Station && raw.labels.is_none() {
        bail!("station task requires a labeled corpus (leading 'label' column)");
    }
    if config.task == Task::Battery && raw.labels.is_some() {
        bail!("battery task expects an unlabeled corpus");
    }

    let n_labels = raw.labels.as_ref().map(|_| config.ingest.stations.len().max(2));
    let normalized = raw.normalized();
    let record = normalized.normalization.expect("normalized batch carries its record");

    let net = NetworkConfig {
        seq_len: raw.seq_len(),
        hidden: config.network.hidden,
        heads: config.network.heads,
        head_dim: config.network.head_dim,
        n_labels,
    };
    let sched = schedule_of(&config)?;
    let init_seed = seed::derive(root_seed, "init");
    let train_seed = seed::derive(root_seed, "train");
    let model = DenoiserModel::init(net, init_seed)?;
    let cfg = TrainConfig {
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        learning_rate: config.train.learning_rate,
        patience: config.train.patience.min(config.train.epochs),
        seed: train_seed,
    };

    let outcome = train(&normalized, model, &sched, &cfg)?;
    let checkpoint_path = out_dir.join(
        config.paths.checkpoint.file_name().unwrap_or_else(|| "checkpoint.json".as_ref()),
    );
    save_checkpoint(&outcome.model, Some(&record), &checkpoint_path)?;
    write_loss_history(
        &outcome.loss_history,
        &out_dir.join("loss_history.csv"),
        &seed_header("train", root_seed, train_seed),
    )?;
    println!(
        "trained {} epochs (final loss {:.6}); checkpoint at {}",
        outcome.loss_history.len(),
        outcome.loss_history.last().unwrap(),
        checkpoint_path.display()
    );
    Ok(())
}

fn cmd_sample(
    config_path: &Path,
    count: usize,
    label_raw: Option<&str>,
    checkpoint_override: Option<&Path>,
    seed_override: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let root_seed = seed_override.unwrap_or(config.seed);
    let out_dir = out.unwrap_or(&config.paths.output_dir);
    ensure_dir(out_dir)?;
    let checkpoint_path = checkpoint_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.paths.output_dir.join(config.paths.checkpoint.file_name().unwrap_or_else(|| "checkpoint.json".as_ref())));

    let (model, record) = load_checkpoint(&checkpoint_path)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    let record = record.ok_or_else(|| anyhow::anyhow!("checkpoint lacks a normalization record"))?;

    let label = match (model.config().is_conditional(), label_raw) {
        (true, Some(raw)) => Some(config.label_of(raw)?),
        (true, None) => bail!("conditional checkpoint requires --label"),
        (false, Some(_)) => bail!("unconditional checkpoint does not accept --label"),
        (false, None) => None,
    };

    let sched = schedule_of(&config)?;
    let sample_seed = seed::derive(root_seed, "sample");
    let batch = sample(&model, &sched, count, label, &record, sample_seed)?;
    let path = out_dir.join("samples.csv");
    write_scenario_csv(&batch, &path, &seed_header("sample", root_seed, sample_seed))?;
    println!("wrote {count} scenarios to {}", path.display());
    Ok(())
}

fn mean_acf_rows(values: &Array2<f64>, durations: &[usize], max_lag: usize) -> Vec<f64> {
    let mut sums = vec![0.0; max_lag + 1];
    let mut n = 0.0;
    for (row, &valid) in values.rows().into_iter().zip(durations) {
        if let Ok(acf) = autocorrelation(row.as_slice().unwrap(), valid, max_lag) {
            for (s, a) in sums.iter_mut().zip(&acf) {
                *s += a;
            }
            n += 1.0;
        }
    }
    if n > 0.0 {
        sums.iter_mut().for_each(|s| *s /= n);
    }
    sums
}

fn cmd_evaluate(config_path: &Path, real_path: &Path, gen_path: &Path, seed_override: Option<u64>, out: Option<&Path>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let root_seed = seed_override.unwrap_or(config.seed);
    let out_dir = out.unwrap_or(&config.paths.output_dir);
    ensure_dir(out_dir)?;

    let real = read_scenario_csv(real_path).with_context(|| format!("reading {}", real_path.display()))?;
    let generated = read_scenario_csv(gen_path).with_context(|| format!("reading {}", gen_path.display()))?;
    if real.seq_len() != generated.seq_len() {
        bail!("real ({}) and generated ({}) sequence lengths differ", real.seq_len(), generated.seq_len());
    }

    let mut report = MetricReport::default();
    let artifact = |name: &str, file: &Path| -> (String, String) {
        (name.to_string(), file.file_name().unwrap().to_string_lossy().into_owned())
    };

    report.marginal_score = marginal_score(&real.values.view(), &generated.values.view(), config.evaluation.bins)?;

    let disc_seed = seed::derive(root_seed, "discriminative");
    let disc = discriminative_score(&real.values.view(), &generated.values.view(), config.evaluation.repeats, disc_seed)?;
    report.discriminative_mean = disc.mean;
    report.discriminative_std = disc.std;

    // Duration, tail, bulk and ACF analyses assume curve-shaped rows; they
    // run for the battery task and are skipped for station profiles.
    if config.task == Task::Battery {
        let threshold = recovery_threshold(&real.values.view());
        let real_durations = recover_durations_with(&real.values.view(), threshold);
        let gen_durations = recover_durations_with(&generated.values.view(), threshold);

        let real_hist = duration_pdf(&real_durations, chargegen_core::eval::DEFAULT_DURATION_BIN_MINUTES)?;
        let gen_hist = duration_pdf(&gen_durations, chargegen_core::eval::DEFAULT_DURATION_BIN_MINUTES)?;
        let duration_path = out_dir.join("duration_hist.csv");
        let mut text = String::from("bin_upper_hours,real,gen\n");
        for (i, (r, g)) in real_hist.iter().zip(&gen_hist).enumerate() {
            text.push_str(&format!("{},{r},{g}\n", (i + 1) as f64 * 0.5));
        }
        fs::write(&duration_path, text)?;
        report.artifacts.push(artifact("duration_hist", &duration_path));

        let tail_seed = seed::derive(root_seed, "tail");
        let tail = tail_score(&real.values.view(), &generated.values.view(), config.evaluation.tail_clusters, tail_seed)?;
        report.tail_mean = tail.mean;
        report.tail_std = tail.std;

        for (tag, batch) in [("real", &real), ("gen", &generated)] {
            let density = bulk_rate_density_with(&batch.values.view(), config.evaluation.bins, threshold)?;
            let path = out_dir.join(format!("bulk_density_{tag}.csv"));
            let mut text = String::from("x,density\n");
            for (x, f) in &density.density {
                text.push_str(&format!("{x},{f}\n"));
            }
            fs::write(&path, text)?;
            report.artifacts.push(artifact(&format!("bulk_density_{tag}"), &path));
        }

        let max_lag = config.evaluation.acf_max_lag;
        let real_acf = mean_acf_rows(&real.values, &real_durations, max_lag);
        let gen_acf = mean_acf_rows(&generated.values, &gen_durations, max_lag);
        let acf_path = out_dir.join("acf.csv");
        let mut text = String::from("lag,real_mean,gen_mean\n");
        for lag in 0..=max_lag {
            text.push_str(&format!("{lag},{},{}\n", real_acf[lag], gen_acf[lag]));
        }
        fs::write(&acf_path, text)?;
        report.artifacts.push(artifact("acf", &acf_path));
    }

    let proj_path = out_dir.join("projection_input.csv");
    export_projection_input(&real.values.view(), &generated.values.view(), &proj_path)?;
    report.artifacts.push(artifact("projection_input", &proj_path));

    let metrics_path = out_dir.join("metrics.txt");
    report.write(&metrics_path)?;
    println!(
        "marginal {:.4}; discriminative {:.4} +/- {:.4}; tail {:.4} +/- {:.4}; report at {}",
        report.marginal_score,
        report.discriminative_mean,
        report.discriminative_std,
        report.tail_mean,
        report.tail_std,
        metrics_path.display()
    );
    Ok(())
}

fn cmd_bid(config_path: &Path, scenarios_path: &Path, prices_override: Option<&Path>, seed_override: Option<u64>, out: Option<&Path>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let root_seed = seed_override.unwrap_or(config.seed);
    let out_dir = out.unwrap_or(&config.paths.output_dir);
    ensure_dir(out_dir)?;

    let scenarios = read_scenario_csv(scenarios_path)
        .with_context(|| format!("reading scenarios {}", scenarios_path.display()))?;
    let prices_path = prices_override.unwrap_or(&config.bidding.price_file);
    let prices = read_price_csv(prices_path)
        .with_context(|| format!("reading prices {}", prices_path.display()))?;

    let reduce_seed = seed::derive(root_seed, "reduce");
    let (demand_curves, weights) = if config.bidding.reduce_to > 0 && config.bidding.reduce_to < scenarios.len() {
        let reduced = reduce_scenarios(&scenarios, config.bidding.reduce_to, reduce_seed)?;
        (reduced.scenarios, Some(reduced.weights))
    } else {
        (scenarios.values.clone(), None)
    };

    // Arrival times resampled from the ingested empirical distribution when
    // available; otherwise curves start at midnight.
    let n = demand_curves.nrows();
    let arrival_seed = seed::derive(root_seed, "arrivals");
    let arrivals: Vec<usize> = if config.bidding.arrivals_file.exists() {
        let text = fs::read_to_string(&config.bidding.arrivals_file)?;
        let observed: Vec<usize> = text
            .lines()
            .skip(1)
            .filter_map(|l| l.trim().parse().ok())
            .collect();
        let hist = ArrivalHistogram::estimate(&observed)?;
        let mut rng = seed::rng(arrival_seed);
        (0..n).map(|_| hist.sample(&mut rng)).collect()
    } else {
        vec![0; n]
    };

    let assemble = AssembleConfig {
        unit: config.rate_unit(),
        power_cap_kw: config.bidding.power_cap_kw,
        penalty_price: None,
        curve_resolution_min: 1,
    };
    let mut instance = assemble_instance(&demand_curves, &arrivals, &prices, &assemble)?;
    let max_price = prices.iter().cloned().fold(0.0, f64::max);
    instance.penalty_price = config.bidding.penalty_factor * max_price;

    let plan = solve_bidding(&instance)?;
    let plan_path = out_dir.join("bidding_plan.csv");
    write_plan_csv(&plan, &plan_path, &seed_header("bid", root_seed, arrival_seed))?;
    write_cost_summary(&plan.costs, &out_dir.join("cost_summary.txt"))?;
    if let Some(weights) = weights {
        let mut text = String::from("scenario,weight\n");
        for (i, w) in weights.iter().enumerate() {
            text.push_str(&format!("{i},{w}\n"));
        }
        fs::write(out_dir.join("scenario_weights.csv"), text)?;
    }
    println!(
        "bidding over {n} EVs x {DAY_INTERVALS} intervals: energy {:.4}, penalty {:.4}, total {:.4}",
        plan.costs.energy, plan.costs.penalty, plan.costs.total
    );
    Ok(())
}
