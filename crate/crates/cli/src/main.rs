use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use domcert::adversary::{verify_bound_under_attack, PromptSpace, MAX_PROMPTS};
use domcert::analysis::{default_k_grid, frr_trr_sweep, write_sweep_csv};
use domcert::model::EnumerableModel;
use domcert::SequenceModel;
use domcert_cli::config::ExperimentConfig;
use domcert_cli::error::{exit_code, StageError, StageExt};
use domcert_cli::manifest::Manifest;
use domcert_cli::pipeline::{self, Datasets};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "domcert", version, about = "Domain certification of sequence models by rejection sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to the config's output_dir.
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write a bundle with a manifest.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
    },
    /// Generate the target, general and out-of-domain datasets.
    GenerateData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
    },
    /// Train L, G and the full-sequence guide from generated data.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
    },
    /// Score ground-truth responses and write the record CSV.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Domain certificates over the configured (k, T) grid and k for each epsilon.
    Certify {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// FRR/TRR sweep over a record CSV.
    Sweep {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 1)]
        t: usize,
        #[arg(long, default_value_t = domcert::analysis::DEFAULT_GRID_POINTS)]
        points: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive prompt attack on random enumerable models.
    Attack {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        alphabet: usize,
        #[arg(long, default_value_t = 5)]
        max_len: usize,
        #[arg(long, default_value_t = domcert::adversary::DEFAULT_PROMPT_LEN)]
        prompt_len: usize,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 1)]
        t: usize,
        /// Peakedness of the random tables.
        #[arg(long, default_value_t = 1.5)]
        sharpness: f64,
        /// Largest prompt space to search.
        #[arg(long, default_value_t = MAX_PROMPTS)]
        max_prompts: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark score at each epsilon of the config's grid.
    BenchAtEps {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Verify a run directory against its manifest and print its summary.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load(args: &ConfigArgs, seed: Option<u64>) -> Result<(ExperimentConfig, PathBuf), StageError> {
    let mut cfg = ExperimentConfig::load(&args.config).stage("config")?;
    if let Some(seed) = seed {
        if seed != cfg.seed {
            log::info!("--seed {seed} overrides config seed {}", cfg.seed);
        }
        cfg.seed = seed;
    }
    if let Some(dir) = &args.dir {
        cfg.output_dir = dir.clone();
    }
    let dir = cfg.output_dir.clone();
    Ok((cfg, dir))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), StageError> {
    match out {
        Some(p) => std::fs::write(p, text).stage("output"),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn load_run(dir: &Path) -> Result<(Datasets, pipeline::Models), StageError> {
    Ok((pipeline::read_datasets(dir)?, pipeline::read_models(dir)?))
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Run { cfg, seed } => {
            let (cfg, _) = load(&cfg, Some(seed))?;
            let summary = pipeline::run_experiment(&cfg)?;
            print!("{}", json(&summary));
        }
        Command::GenerateData { cfg, seed } => {
            let (cfg, dir) = load(&cfg, Some(seed))?;
            let ds = pipeline::generate_data(&cfg)?;
            for f in pipeline::write_datasets(&dir, &cfg, &ds)? {
                println!("{}", f.display());
            }
        }
        Command::Train { cfg, seed } => {
            let (cfg, dir) = load(&cfg, Some(seed))?;
            let ds = pipeline::read_datasets(&dir)?;
            let models = pipeline::train_models(&cfg, &ds)?;
            for f in pipeline::write_models(&dir, &models)? {
                println!("{}", f.display());
            }
        }
        Command::Evaluate { cfg } => {
            let (cfg, dir) = load(&cfg, None)?;
            let (ds, models) = load_run(&dir)?;
            let inf = pipeline::inference_models(&cfg, &models)?;
            let items = pipeline::eval_items(&cfg, &ds)?;
            let records = pipeline::evaluate(&cfg, &inf, &items)?;
            println!("{}", pipeline::write_records(&dir, &records)?.display());
        }
        Command::Certify { cfg } => {
            let (cfg, dir) = load(&cfg, None)?;
            let (ds, _) = load_run(&dir)?;
            let records = pipeline::read_records(&dir.join(pipeline::RECORDS_FILE))?;
            let d_f = pipeline::forbidden_set(&pipeline::eval_items(&cfg, &ds)?);
            let out = pipeline::certify(&cfg, &records, &d_f)?;
            std::fs::write(dir.join(pipeline::CERTIFICATES_FILE), json(&out.certificates)).stage("certify")?;
            std::fs::write(dir.join(pipeline::SOLVED_K_FILE), json(&out.solved_k)).stage("certify")?;
            print!("{}", json(&out));
        }
        Command::Sweep { records, t, points, out } => {
            let records = pipeline::read_records(&records)?;
            let grid = default_k_grid(&records, points).stage("sweep")?;
            let sweep = frr_trr_sweep(&records, &grid, t).stage("sweep")?;
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &sweep).stage("sweep")?;
            emit(out.as_deref(), &String::from_utf8(buf).expect("utf-8"))?;
            eprint!("{}", json(&sweep.targets));
        }
        Command::Attack { seed, alphabet, max_len, prompt_len, k, t, sharpness, max_prompts, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = EnumerableModel::random(alphabet, prompt_len, max_len, sharpness, &mut rng).stage("attack")?;
            let g = EnumerableModel::random(alphabet, prompt_len, max_len, sharpness, &mut rng).stage("attack")?;
            let space = PromptSpace::for_model(&l, prompt_len);
            if space.size() > max_prompts {
                return Err(domcert::Error::Resource(format!(
                    "prompt space has {} prompts, above --max-prompts {max_prompts}",
                    space.size()
                )))
                .stage("attack");
            }
            let targets: Vec<_> =
                l.enumerate_support(&[], max_len).stage("attack")?.entries.into_iter().map(|(y, _)| y).collect();
            let summary = verify_bound_under_attack(&l, &g, k, t, &targets, &space, max_len).stage("attack")?;
            emit(out.as_deref(), &json(&summary))?;
            eprintln!("{} targets, {} prompts, {} violations", summary.reports.len(), summary.prompts_searched, summary.violations);
            if summary.violations > 0 {
                return Err(domcert::Error::Resource("certificate violated under attack".into())).stage("attack");
            }
        }
        Command::BenchAtEps { cfg } => {
            let (cfg, dir) = load(&cfg, None)?;
            let (ds, models) = load_run(&dir)?;
            let inf = pipeline::inference_models(&cfg, &models)?;
            let records = pipeline::read_records(&dir.join(pipeline::RECORDS_FILE))?;
            let bench = pipeline::run_bench(&cfg, &inf, &ds, &records)?;
            std::fs::write(dir.join(pipeline::BENCH_FILE), json(&bench)).stage("bench-at-eps")?;
            print!("{}", json(&bench));
        }
        Command::Report { dir } => {
            let manifest = Manifest::read(&dir).stage("report")?;
            let bad = manifest.verify(&dir).stage("report")?;
            println!("config hash {}  seed {}  files {}", manifest.config_hash, manifest.seed, manifest.files.len());
            for name in [pipeline::CERTIFICATES_FILE, pipeline::SOLVED_K_FILE, "sweep_summary.json", pipeline::BENCH_FILE, pipeline::ACCURACY_FILE] {
                if let Ok(text) = std::fs::read_to_string(dir.join(name)) {
                    println!("== {name}\n{text}");
                }
            }
            if !bad.is_empty() {
                return Err(domcert::Error::Format(format!("checksum mismatch: {}", bad.join(", ")))).stage("report");
            }
            println!("all {} files match the manifest", manifest.files.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()) as u8)
        }
    }
}
