//! `asbart` command line: fit, predict, bench and Friedman data generation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use asbart::bench::{run_bench, threads_from_env, BenchConfig, Method};
use asbart::data::{load_dataset, ColumnKind, ColumnSpec, DatasetSchema};
use asbart::friedman::{gen_friedman, FriedmanSpec, Noise};
use asbart::model_io::{load_model, save_model, write_atomic};
use asbart::{fit, Aggregation, FitConfig, GateFamily};

#[derive(Parser)]
#[command(name = "asbart", version, about = "Accelerated soft Bayesian additive regression trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV file and save it as JSON.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Run the Friedman benchmark.
    Bench(BenchArgs),
    /// Write a Friedman data set as CSV.
    GenFriedman(GenArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Response column name.
    #[arg(long, default_value = "y")]
    target: String,
    /// JSON schema; without it every non-target column is ordinal.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    trees: usize,
    #[arg(long, default_value_t = 40)]
    sweeps: usize,
    #[arg(long, default_value_t = 15)]
    burnin: usize,
    #[arg(long, default_value = "linear")]
    gate: GateFamily,
    /// Largest bandwidth percent; the grid is 0, 1, ..., P.
    #[arg(long, default_value_t = 20)]
    grid_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    #[arg(long, default_value_t = 5)]
    min_node_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "high")]
    noise: Noise,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Comma separated, e.g. `hard,soft-linear,soft-sigmoid-80`.
    #[arg(long, value_delimiter = ',', default_value = "hard,soft-linear,soft-sigmoid")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 50)]
    trees: usize,
    /// Per-replication CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "high")]
    noise: Noise,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the noiseless `f` as a `truth` column.
    #[arg(long)]
    with_truth: bool,
}

fn cmd_fit(a: FitArgs) -> asbart::Result<()> {
    let schema = match &a.schema {
        Some(p) => DatasetSchema::from_json_file(p)?,
        None => DatasetSchema::infer_ordinal(&a.data, &a.target)?,
    };
    if schema.target != a.target {
        return Err(asbart::Error::SchemaMismatch(format!(
            "schema target '{}' differs from --target '{}'",
            schema.target, a.target
        )));
    }
    let data = load_dataset(&a.data, &schema, true)?;
    let mut config = FitConfig {
        trees: a.trees,
        sweeps: a.sweeps,
        burn_in: a.burnin,
        gate: a.gate,
        grid_percents: (0..=a.grid_max).map(f64::from).collect(),
        seed: a.seed,
        ..FitConfig::default()
    };
    config.limits.max_depth = a.max_depth;
    config.limits.min_node_size = a.min_node_size;

    let start = Instant::now();
    let mut model = fit(&data, &config)?;
    let elapsed = start.elapsed().as_secs_f64();
    model.schema = Some(schema);
    save_model(&model, &a.out)?;

    println!("sweeps: {}", model.config.sweeps);
    println!("retained forests: {}", model.forests.len());
    println!("final sigma^2: {:.6}", model.final_sigma2());
    println!("elapsed seconds: {elapsed:.3}");
    if config.is_hard_mode() {
        println!("hard mode: bandwidth grid forced to [0]");
    } else {
        let smoothed = model.trace.smoothed.last().copied().unwrap_or(0);
        println!("gate: {}, smoothed trees in last sweep: {smoothed}", config.gate);
    }
    println!("model written to {}", a.out.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> asbart::Result<()> {
    let model = load_model(&a.model)?;
    let schema = match &model.schema {
        Some(s) => s.clone(),
        None => DatasetSchema {
            target: String::new(),
            columns: model
                .feature_names
                .iter()
                .map(|n| ColumnSpec {
                    name: n.clone(),
                    kind: ColumnKind::Ordinal,
                })
                .collect(),
        },
    };
    let data = load_dataset(&a.data, &schema, false)?;
    let pred = model
        .predict_dataset(&data, Aggregation::PosteriorMean)?
        .into_mean();
    write_atomic(&a.out, |w| {
        writeln!(w, "row_index,prediction")?;
        for (i, p) in pred.iter().enumerate() {
            writeln!(w, "{i},{p}")?;
        }
        Ok(())
    })?;
    println!("{} predictions written to {}", pred.len(), a.out.display());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> asbart::Result<()> {
    let cfg = BenchConfig {
        noise: a.noise,
        reps: a.reps,
        n: a.n,
        seed: a.seed,
        methods: a.methods,
        trees: a.trees,
        threads: threads_from_env(),
    };
    let report = run_bench(&cfg)?;
    if let Some(out) = &a.out {
        write_atomic(out, |w| report.write_csv(w))?;
    }
    print!("{}", report.summary_table());
    Ok(())
}

fn cmd_gen(a: GenArgs) -> asbart::Result<()> {
    let d = gen_friedman(&FriedmanSpec {
        n: a.n,
        noise: a.noise,
        seed: a.seed,
    })?;
    write_friedman_csv(&a.out, &d, a.with_truth)?;
    println!("{} rows written to {}", a.n, a.out.display());
    Ok(())
}

fn write_friedman_csv(path: &Path, d: &asbart::friedman::FriedmanData, with_truth: bool) -> asbart::Result<()> {
    write_atomic(path, |w| {
        let mut header: Vec<String> = d.data.names.clone();
        header.push("y".into());
        if with_truth {
            header.push("truth".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..d.data.n_rows() {
            let mut row: Vec<String> = d.data.x.row(i).iter().map(f64::to_string).collect();
            row.push(d.data.y[i].to_string());
            if with_truth {
                row.push(d.truth[i].to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Bench(a) => cmd_bench(a),
        Command::GenFriedman(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
