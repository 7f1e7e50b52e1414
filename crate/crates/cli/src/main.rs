use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use covspread_core::pipeline::{self, PipelineError, RunConfig, Stage};
use covspread_core::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "covspread", version, about = "County spread networks, motif census and market statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage in order.
    Run(Opts),
    /// Build the daily spread networks.
    Network(Opts),
    /// Motif census of the cached networks.
    Motifs(Opts),
    /// Lagged Spearman correlation tables.
    Correlate(Opts),
    /// Granger causality tables.
    Granger(Opts),
    /// Random-forest forecast comparison.
    Forecast(Opts),
    /// EGARCH Model 0 vs Model X.
    Egarch(Opts),
    /// Write a synthetic input fixture and a matching config file.
    Synth(SynthOpts),
}

#[derive(Args, Default)]
struct Opts {
    /// key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cases: Option<String>,
    #[arg(long)]
    geo: Option<String>,
    #[arg(long)]
    prices: Option<String>,
    #[arg(long)]
    trends: Option<String>,
    #[arg(long)]
    covid: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// Edge distance threshold in miles.
    #[arg(long)]
    delta: Option<String>,
    /// `new` or `cumulative` node gating.
    #[arg(long)]
    gating: Option<String>,
    /// `combinatorial` or `enumeration`.
    #[arg(long)]
    census_method: Option<String>,
    #[arg(long)]
    z_window: Option<String>,
    #[arg(long)]
    ap_window: Option<String>,
    #[arg(long)]
    max_lag: Option<String>,
    #[arg(long)]
    corr_max_lag: Option<String>,
    /// e.g. `1..6` or `1,3,5`.
    #[arg(long)]
    horizons: Option<String>,
    /// e.g. `P0,P3`.
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    n_trees: Option<String>,
    #[arg(long)]
    mtry: Option<String>,
    #[arg(long)]
    min_leaf: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    split_date: Option<String>,
    #[arg(long)]
    start_date: Option<String>,
    #[arg(long)]
    end_date: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Opts {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("cases", &self.cases),
            ("geo", &self.geo),
            ("prices", &self.prices),
            ("trends", &self.trends),
            ("covid", &self.covid),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("delta", &self.delta),
            ("gating", &self.gating),
            ("census_method", &self.census_method),
            ("z_window", &self.z_window),
            ("ap_window", &self.ap_window),
            ("max_lag", &self.max_lag),
            ("corr_max_lag", &self.corr_max_lag),
            ("horizons", &self.horizons),
            ("models", &self.models),
            ("n_trees", &self.n_trees),
            ("mtry", &self.mtry),
            ("min_leaf", &self.min_leaf),
            ("seed", &self.seed),
            ("split_date", &self.split_date),
            ("start_date", &self.start_date),
            ("end_date", &self.end_date),
            ("output_dir", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthOpts {
    /// Directory for the fixture files and `covspread.conf`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().n_counties)]
    counties: usize,
}

fn synth(opts: &SynthOpts) -> Result<(), PipelineError> {
    let data = synth::generate(&SynthConfig {
        seed: opts.seed,
        n_counties: opts.counties,
        ..Default::default()
    });
    let paths = synth::write_fixture(&opts.out, &data).map_err(|e| PipelineError::Data {
        stage: "synth",
        message: e.to_string(),
    })?;
    let name = |p: &PathBuf| p.file_name().unwrap().to_string_lossy().into_owned();
    let conf = format!(
        "cases = {}\ngeo = {}\nprices = {}\ntrends = {}\ncovid = {}\nseed = 42\noutput_dir = out\n",
        name(&paths.cases),
        name(&paths.geo),
        name(&paths.prices),
        name(&paths.trends),
        name(&paths.covid),
    );
    let conf_path = opts.out.join("covspread.conf");
    std::fs::write(&conf_path, conf).map_err(|source| PipelineError::Io {
        stage: "synth",
        path: conf_path.clone(),
        source,
    })?;
    println!("{}", conf_path.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let (opts, stages): (&Opts, Vec<Stage>) = match &cli.command {
        Command::Synth(s) => return synth(s),
        Command::Run(o) => (o, Stage::ALL.to_vec()),
        Command::Network(o) => (o, vec![Stage::Network]),
        Command::Motifs(o) => (o, vec![Stage::Motifs]),
        Command::Correlate(o) => (o, vec![Stage::Correlate]),
        Command::Granger(o) => (o, vec![Stage::Granger]),
        Command::Forecast(o) => (o, vec![Stage::Forecast]),
        Command::Egarch(o) => (o, vec![Stage::Egarch]),
    };
    if let Some(j) = opts.jobs {
        pipeline::set_parallelism(j)?;
    }
    let cfg = opts.config()?;
    let manifest = pipeline::run_stages(&cfg, &stages)?;
    for s in &manifest.stages {
        let rows: usize = s.rows.values().sum();
        println!("{:<10} {:>8} rows {:>8.2}s", s.stage.name(), rows, s.seconds);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
