use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use envrobust::attack::{collect_attack_trajectories, grad_attack, random_attack, AttackResult};
use envrobust::defense::{bat_finetune, bat_perturbations, build_distill_dataset, train_kickstart, BatConfig};
use envrobust::gridworld::{enumerate_unit_perturbations, Layout};
use envrobust::harness::{
    emit_report, evaluate, run_attack_experiment, run_defense_experiment, write_episode_log, AttackExperimentConfig,
    DefenseExperimentConfig, EvalSpec, Format, Report, ReportRow, RowValue,
};
use envrobust::nn::{load_checkpoint, save_checkpoint, PolicyParams};
use envrobust::rl::{
    train_div_start, train_fcp, train_self_play, write_metrics_csv, InitDistribution, PartnerPool, TrainConfig,
    TrainOutcome, POOL_PARTNERS,
};

/// Environment-perturbation attacks and boosted adversarial training for
/// two-player cooperative cooking agents.
#[derive(Parser)]
#[command(name = "envrobust", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Layout utilities.
    #[command(subcommand)]
    Layout(LayoutCmd),
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Generate adversarial initial states against a policy.
    Attack(AttackArgs),
    /// Boosted adversarial training stages.
    #[command(subcommand)]
    Bat(BatCmd),
    /// Evaluate a policy from the standard state or from attack states.
    Eval(EvalArgs),
    /// Run a full experiment from a TOML config.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Subcommand)]
enum LayoutCmd {
    /// Parse a layout file (or builtin name) and print a summary.
    Validate { file: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Sp,
    Fcp,
    DivStart,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    /// Builtin layout name or layout file.
    #[arg(long)]
    layout: String,
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Training config (TOML); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// FCP: partner pool directory. Trained and saved there when missing.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// FCP: steps per partner when the pool has to be trained.
    #[arg(long)]
    partner_steps: Option<u64>,
    /// Div. start: attack file whose states, plus the standard state, form
    /// a uniform initial-state distribution.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    Grad,
    Random,
    RandomF,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    layout: String,
    #[arg(long, value_enum, default_value = "grad")]
    method: AttackKind,
    /// Maximum number of unit perturbations per state.
    #[arg(long, default_value_t = envrobust::attack::DEFAULT_EPSILON)]
    budget: usize,
    /// Number of states to generate.
    #[arg(long, default_value_t = envrobust::attack::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = envrobust::attack::DEFAULT_P_FREQ)]
    pfreq: f64,
    /// Trajectories collected from the standard state.
    #[arg(long, default_value_t = envrobust::attack::DEFAULT_N_TRAJ)]
    traj: usize,
    #[arg(long, default_value_t = envrobust::attack::DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BatCmd {
    /// Distil the policy onto perturbed observations.
    Kickstart(KickstartArgs),
    /// PPO fine-tuning from the standard and perturbed initial states.
    Finetune(FinetuneArgs),
}

/// Options shared by both BAT stages. The perturbation set is rebuilt from
/// `--adv`, `--seed` and the BAT config, so pass the same values to both.
#[derive(Args)]
struct BatCommon {
    #[arg(long)]
    policy: PathBuf,
    /// Attack result against the policy.
    #[arg(long)]
    adv: PathBuf,
    /// Layout; defaults to the one named in the attack file.
    #[arg(long)]
    layout: Option<String>,
    /// BAT config (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KickstartArgs {
    #[command(flatten)]
    common: BatCommon,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: BatCommon,
    #[arg(long)]
    steps: Option<u64>,
    /// Training config (TOML) for PPO.
    #[arg(long)]
    train_config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    policy: Vec<PathBuf>,
    #[arg(long)]
    layout: String,
    /// `standard` or an attack result file.
    #[arg(long, default_value = "standard")]
    states: String,
    #[arg(long, default_value_t = envrobust::harness::DEFAULT_GAMES)]
    games: usize,
    #[arg(long, default_value_t = envrobust::harness::DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Greedy instead of sampled actions.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value = "md")]
    report: Format,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the raw per-episode scores here.
    #[arg(long)]
    episodes: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Attack {
        #[arg(long)]
        config: PathBuf,
    },
    Defense {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Layout(LayoutCmd::Validate { file }) => validate_layout(&file),
        Command::Train(args) => train(args),
        Command::Attack(args) => attack(args),
        Command::Bat(BatCmd::Kickstart(args)) => kickstart(args),
        Command::Bat(BatCmd::Finetune(args)) => finetune(args),
        Command::Eval(args) => eval(args),
        Command::Experiment(ExperimentCmd::Attack { config }) => {
            let cfg = AttackExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let out = run_attack_experiment(&cfg)?;
            print!("{}", out.report.to_grid_markdown());
            println!("reports written to {}", out.dir.display());
            Ok(())
        }
        Command::Experiment(ExperimentCmd::Defense { config }) => {
            let cfg = DefenseExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let out = run_defense_experiment(&cfg)?;
            print!("{}", out.report.to_grid_markdown());
            println!("reports written to {}", out.dir.display());
            Ok(())
        }
    }
}

fn load_layout(name: &str) -> Result<Layout> {
    Layout::load(name).with_context(|| format!("loading layout {name}"))
}

fn load_policy(path: &Path) -> Result<PolicyParams<f32>> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn save_policy(policy: &PolicyParams<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(policy, path).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {} ({})", path.display(), policy.id());
    Ok(())
}

fn load_attack(path: &Path, layout: &Layout) -> Result<AttackResult> {
    let result = AttackResult::load(path).with_context(|| format!("loading attack file {}", path.display()))?;
    result.validate(layout).with_context(|| format!("attack file {} does not fit {}", path.display(), layout.name))?;
    Ok(result)
}

fn validate_layout(file: &str) -> Result<()> {
    let layout = load_layout(file)?;
    let units = enumerate_unit_perturbations(&layout);
    println!("{}: {}x{}, soup size {}, cook time {}", layout.name, layout.width, layout.height, layout.soup_size, layout.cook_time);
    println!("{} unit perturbations", units.len());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let layout = load_layout(&args.layout)?;
    let cfg = match &args.config {
        Some(p) => toml::from_str::<TrainConfig>(&std::fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    let outcome: TrainOutcome = match args.algo {
        Algo::Sp => train_self_play(&layout, args.steps, args.seed, &cfg)?,
        Algo::DivStart => {
            let Some(init) = &args.init else { bail!("--algo div-start needs --init <attack file>") };
            let states = load_attack(init, &layout)?.perturbations();
            train_div_start(&layout, &InitDistribution::uniform_with_standard(&states), args.steps, args.seed, &cfg)?
        }
        Algo::Fcp => {
            let Some(dir) = &args.pool else { bail!("--algo fcp needs --pool <dir>") };
            let pool = match PartnerPool::load(dir) {
                Ok(pool) => pool,
                Err(_) => {
                    let Some(steps) = args.partner_steps else {
                        bail!("no partner pool in {}; pass --partner-steps to train one", dir.display())
                    };
                    let mut histories = Vec::new();
                    for j in 0..POOL_PARTNERS {
                        info!("training partner {j}");
                        histories.push(train_self_play(&layout, steps, args.seed.wrapping_add(1 + j as u64), &cfg)?.history);
                    }
                    let pool = PartnerPool::from_histories(&histories)?;
                    pool.save(dir)?;
                    pool
                }
            };
            train_fcp(&layout, &pool, args.steps, args.seed, &cfg)?
        }
    };
    std::fs::create_dir_all(args.out.join("history"))?;
    save_policy(&outcome.policy, &args.out.join("final.ckpt"))?;
    for p in &outcome.history {
        save_checkpoint(p, args.out.join("history").join(format!("step_{}.ckpt", p.meta.steps)))?;
    }
    write_metrics_csv(&outcome.metrics, args.out.join("metrics.csv"))?;
    if let Some(last) = outcome.metrics.last() {
        println!("final training score {:.1} after {} steps", last.mean_score, last.step);
    }
    Ok(())
}

fn attack(args: AttackArgs) -> Result<()> {
    let layout = load_layout(&args.layout)?;
    let result = match args.method {
        AttackKind::Grad => {
            let policy = load_policy(&args.policy)?;
            grad_attack(&policy, &layout, args.budget, args.k, args.pfreq, args.traj, args.horizon, args.seed)?
        }
        AttackKind::Random => random_attack(&layout, args.budget, args.k, None, args.seed)?,
        AttackKind::RandomF => {
            let policy = load_policy(&args.policy)?;
            let trajectories = collect_attack_trajectories(&policy, &layout, args.traj, args.horizon, args.seed)?;
            random_attack(&layout, args.budget, args.k, Some((&trajectories, args.pfreq)), args.seed)?
        }
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    result.save(&args.out)?;
    for s in &result.states {
        match s.score {
            Some(score) => println!("{:>12.6}  {}", score, s.perturbation),
            None => println!("{:>12}  {}", "-", s.perturbation),
        }
    }
    Ok(())
}

struct BatInputs {
    layout: Layout,
    policy: PolicyParams<f32>,
    perturbations: Vec<envrobust::gridworld::Perturbation>,
}

fn bat_inputs(c: &BatCommon, cfg: &BatConfig) -> Result<BatInputs> {
    let policy = load_policy(&c.policy)?;
    let raw = AttackResult::load(&c.adv).with_context(|| format!("loading attack file {}", c.adv.display()))?;
    let layout = load_layout(c.layout.as_deref().unwrap_or(&raw.layout))?;
    let attack = load_attack(&c.adv, &layout)?;
    let perturbations = bat_perturbations(&layout, &attack, cfg, c.seed)?;
    Ok(BatInputs { layout, policy, perturbations })
}

fn bat_config(path: &Option<PathBuf>) -> Result<BatConfig> {
    Ok(match path {
        Some(p) => BatConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => BatConfig::default(),
    })
}

fn kickstart(args: KickstartArgs) -> Result<()> {
    let mut cfg = bat_config(&args.common.config)?;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.temp {
        cfg.temperature = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    cfg.validate()?;
    let inp = bat_inputs(&args.common, &cfg)?;
    let ds = build_distill_dataset(&inp.policy, &inp.layout, &inp.perturbations, &cfg, args.common.seed)?;
    info!("distillation set: {} train / {} validation samples", ds.train.len(), ds.val.len());
    let (student, report) = train_kickstart(&inp.policy, &ds, &cfg, args.common.seed)?;
    save_policy(&student, &args.common.out)?;
    let csv = args.common.out.with_extension("losses.csv");
    report.write_csv(&csv)?;
    println!("selected epoch {} (validation loss {:.6}); losses in {}", report.selected_epoch, report.selected_val, csv.display());
    Ok(())
}

fn finetune(args: FinetuneArgs) -> Result<()> {
    let cfg = bat_config(&args.common.config)?;
    let train_cfg = match &args.train_config {
        Some(p) => toml::from_str::<TrainConfig>(&std::fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    let inp = bat_inputs(&args.common, &cfg)?;
    let init = cfg.init_distribution(&inp.perturbations)?;
    let steps = args.steps.unwrap_or(cfg.finetune_steps);
    let outcome = bat_finetune(&inp.policy, &inp.layout, &init, steps, args.common.seed, &train_cfg)?;
    save_policy(&outcome.policy, &args.common.out)?;
    write_metrics_csv(&outcome.metrics, args.common.out.with_extension("metrics.csv"))?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let layout = load_layout(&args.layout)?;
    let (states, label) = if args.states == "standard" {
        (vec![None], "none".to_string())
    } else {
        let attack = load_attack(Path::new(&args.states), &layout)?;
        (attack.perturbations().into_iter().map(Some).collect(), attack.method.to_string())
    };
    let spec = EvalSpec { states, games: args.games, horizon: args.horizon, seed: args.seed, deterministic: args.deterministic };
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for path in &args.policy {
        let policy = load_policy(path)?;
        let (stats, log) = evaluate(&policy, &layout, &spec)?;
        rows.push(ReportRow {
            method: path.display().to_string(),
            attack: label.clone(),
            layout: layout.name.clone(),
            value: RowValue::Score { mean: stats.grand_mean, stderr: stats.pooled_stderr, n: stats.n },
        });
        groups.push((path.display().to_string(), log));
    }
    let report = Report {
        title: format!("Evaluation on {}", layout.name),
        metadata: vec![
            ("states".into(), args.states.clone()),
            ("games".into(), format!("{} x {} steps", args.games, args.horizon)),
            ("seed".into(), args.seed.to_string()),
            ("actions".into(), if args.deterministic { "greedy" } else { "sampled" }.into()),
        ],
        rows,
    };
    if let Some(p) = &args.episodes {
        write_episode_log(p, &groups)?;
    }
    match &args.out {
        Some(p) => emit_report(&report, args.report, p)?,
        None => print!("{}", if matches!(args.report, Format::Csv) { report.to_csv() } else { report.to_markdown() }),
    }
    Ok(())
}
