use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{emit_report, Format, Report, ReportSpec, RowSpec};
use super::{evaluate, read_episode_log, write_episode_log, EpisodeRecord, EvalSpec, HarnessError};
use crate::attack::{
    collect_attack_trajectories, grad_attack, random_attack, AttackResult, DEFAULT_EPSILON, DEFAULT_HORIZON, DEFAULT_K, DEFAULT_N_TRAJ, DEFAULT_P_FREQ,
    DEFAULT_RANDOM_K,
};
use crate::defense::{bat_perturbations, run_bat, BatConfig};
use crate::gridworld::{Layout, Perturbation};
use crate::nn::{load_checkpoint, save_checkpoint, PolicyParams};
use crate::rl::{
    continue_fcp, continue_training, train_div_start, train_fcp, train_self_play, InitDistribution, PartnerPool,
    TrainConfig, POOL_PARTNERS,
};

/// Attack conditions of the defense table.
pub const ATTACK_CONDITIONS: [&str; 3] = ["none", "random", "grad"];

/// `(config key, table label)` of every defense method, in table order.
pub const DEFENSE_METHODS: [(&str, &str); 5] = [
    ("extra_sp", "Extra SP"),
    ("extra_fcp", "Extra FCP"),
    ("div_start", "Div. Start"),
    ("bat_sp", "BAT+SP"),
    ("bat_fcp", "BAT+FCP"),
];

const ATTACK_METHODS: [&str; 5] = ["none", "random", "random_f", "grad", "transfer"];

/// Where the evaluated self-play agents come from: explicit checkpoints, or
/// `count` fresh training runs (cached on disk).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    pub count: usize,
    pub steps: u64,
    /// Training seeds; derived from the experiment seed when empty.
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<PathBuf>,
    /// Where trained policies are cached; `<out_dir>/agents` when absent.
    pub cache_dir: Option<PathBuf>,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        AgentsConfig { count: 2, steps: 2_000_000, seeds: Vec::new(), checkpoints: Vec::new(), cache_dir: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub epsilon: usize,
    pub k: usize,
    pub random_k: usize,
    pub p_freq: f64,
    pub n_traj: usize,
    pub horizon: usize,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            epsilon: DEFAULT_EPSILON,
            k: DEFAULT_K,
            random_k: DEFAULT_RANDOM_K,
            p_freq: DEFAULT_P_FREQ,
            n_traj: DEFAULT_N_TRAJ,
            horizon: DEFAULT_HORIZON,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackExperimentConfig {
    pub layout: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub agents: AgentsConfig,
    pub train: TrainConfig,
    pub attack: AttackParams,
    /// Subset of `none`, `random`, `random_f`, `grad`, `transfer`.
    pub methods: Vec<String>,
    pub games: usize,
    pub horizon: usize,
    pub deterministic: bool,
}

impl Default for AttackExperimentConfig {
    fn default() -> Self {
        AttackExperimentConfig {
            layout: "coordination_ring".into(),
            seed: 0,
            out_dir: PathBuf::from("attack_experiment"),
            agents: AgentsConfig::default(),
            train: TrainConfig::default(),
            attack: AttackParams::default(),
            methods: ATTACK_METHODS.iter().map(|s| s.to_string()).collect(),
            games: 20,
            horizon: 800,
            deterministic: false,
        }
    }
}

/// Partner pool and learner budgets for the FCP rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcpConfig {
    pub partner_steps: u64,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseExperimentConfig {
    pub layout: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub agents: AgentsConfig,
    pub train: TrainConfig,
    pub attack: AttackParams,
    pub bat: BatConfig,
    /// Extra-training budget; defaults to the BAT fine-tune budget.
    pub extra_steps: Option<u64>,
    /// Diversified-start budget; defaults to the agents' training budget.
    pub div_start_steps: Option<u64>,
    /// FCP rows are marked skipped when absent.
    pub fcp: Option<FcpConfig>,
    /// Keys from [`DEFENSE_METHODS`]; the others are marked skipped.
    pub methods: Vec<String>,
    pub games: usize,
    pub horizon: usize,
    pub deterministic: bool,
}

impl Default for DefenseExperimentConfig {
    fn default() -> Self {
        DefenseExperimentConfig {
            layout: "coordination_ring".into(),
            seed: 0,
            out_dir: PathBuf::from("defense_experiment"),
            agents: AgentsConfig::default(),
            train: TrainConfig::default(),
            attack: AttackParams::default(),
            bat: BatConfig::default(),
            extra_steps: None,
            div_start_steps: None,
            fcp: None,
            methods: DEFENSE_METHODS.iter().map(|(k, _)| k.to_string()).collect(),
            games: 20,
            horizon: 800,
            deterministic: false,
        }
    }
}

macro_rules! config_io {
    ($t:ty) => {
        impl $t {
            pub fn load(path: impl AsRef<Path>) -> Result<$t, HarnessError> {
                Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
            }

            pub fn to_toml(&self) -> String {
                toml::to_string(self).expect("config serializes")
            }
        }
    };
}
config_io!(AttackExperimentConfig);
config_io!(DefenseExperimentConfig);

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub report: Report,
    /// Undefended agents under the same attack conditions (defense only).
    pub baseline: Option<Report>,
}

/// Independent seed for `(tag, index)` under the experiment seed. Kept below
/// 2^63 so it fits a TOML integer.
fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap()) >> 1
}

fn short_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

/// Loads `dir/name-<hash of key>.ckpt`, or builds, saves and returns it.
fn cached<F>(dir: &Path, name: &str, key: &str, make: F) -> Result<PolicyParams<f32>, HarnessError>
where
    F: FnOnce() -> Result<PolicyParams<f32>, HarnessError>,
{
    let path = dir.join(format!("{name}-{}.ckpt", short_hash(key)));
    if let Ok(p) = load_checkpoint(&path) {
        info!("using cached {}", path.display());
        return Ok(p);
    }
    let p = make()?;
    save_checkpoint(&p, &path)?;
    Ok(p)
}

fn train_key(layout: &Layout, train: &TrainConfig, what: &str) -> String {
    format!("{}\n{}\n{what}", layout.to_text(), toml::to_string(train).expect("config serializes"))
}

/// Labelled self-play agents: the configured checkpoints, or `cfg.count`
/// training runs cached under `cfg.cache_dir` (else `default_dir`).
pub fn load_or_train_agents(
    cfg: &AgentsConfig,
    layout: &Layout,
    train: &TrainConfig,
    seed: u64,
    default_dir: &Path,
) -> Result<Vec<(String, PolicyParams<f32>)>, HarnessError> {
    let dir = cfg.cache_dir.as_deref().unwrap_or(default_dir);
    std::fs::create_dir_all(dir)?;
    if !cfg.checkpoints.is_empty() {
        return cfg
            .checkpoints
            .iter()
            .enumerate()
            .map(|(i, path)| Ok((format!("agent{i}"), load_checkpoint(path)?)))
            .collect();
    }
    if cfg.count == 0 {
        return Err(HarnessError::Config("no agents configured".into()));
    }
    (0..cfg.count)
        .map(|i| {
            let s = cfg.seeds.get(i).copied().unwrap_or_else(|| derive_seed(seed, "agent", i as u64));
            let key = train_key(layout, train, &format!("sp steps={} seed={s}", cfg.steps));
            let p = cached(dir, &format!("sp{i}"), &key, || {
                info!("training self-play agent {i} (seed {s}) for {} steps", cfg.steps);
                Ok(train_self_play(layout, cfg.steps, s, train)?.policy)
            })?;
            Ok((format!("sp{i}"), p))
        })
        .collect()
}

/// Creates the output layout and returns the agent cache directory.
fn prepare_dir(dir: &Path, agents: &AgentsConfig) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir.join("attacks"))?;
    let cache = agents.cache_dir.clone().unwrap_or_else(|| dir.join("agents"));
    std::fs::create_dir_all(&cache)?;
    Ok(cache)
}

fn write_outputs(
    dir: &Path,
    stem: &str,
    spec: &ReportSpec,
    groups: &[(String, Vec<EpisodeRecord>)],
) -> Result<Report, HarnessError> {
    spec.save(dir.join(format!("{stem}_spec.toml")))?;
    let report = spec.build(groups)?;
    emit_report(&report, Format::Csv, dir.join(format!("{stem}.csv")))?;
    emit_report(&report, Format::Md, dir.join(format!("{stem}.md")))?;
    Ok(report)
}

/// Rebuilds a report from a finished experiment directory's persisted
/// episode log and report spec.
pub fn replay_report(dir: impl AsRef<Path>, stem: &str) -> Result<Report, HarnessError> {
    let dir = dir.as_ref();
    let spec = ReportSpec::load(dir.join(format!("{stem}_spec.toml")))?;
    spec.build(&read_episode_log(dir.join("episodes.csv"))?)
}

fn eval_spec(states: Vec<Option<Perturbation>>, games: usize, horizon: usize, seed: u64, det: bool) -> EvalSpec {
    EvalSpec { states, games, horizon, seed, deterministic: det }
}

fn some(states: &AttackResult) -> Vec<Option<Perturbation>> {
    states.perturbations().into_iter().map(Some).collect()
}

/// Evaluates every agent under each attack method. Transfer evaluates an
/// agent on the gradient attacks generated against all other agents.
pub fn run_attack_experiment(cfg: &AttackExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let layout = Layout::load(&cfg.layout)?;
    for m in &cfg.methods {
        if !ATTACK_METHODS.contains(&m.as_str()) {
            return Err(HarnessError::Config(format!("unknown attack method {m}")));
        }
    }
    let dir = &cfg.out_dir;
    let cache = prepare_dir(dir, &cfg.agents)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let agents = load_or_train_agents(&cfg.agents, &layout, &cfg.train, cfg.seed, &cache)?;
    let wants = |m: &str| cfg.methods.iter().any(|x| x == m);
    if wants("transfer") && agents.len() < 2 {
        return Err(HarnessError::Config("transfer attacks need at least 2 agents".into()));
    }
    let a = &cfg.attack;

    let mut grads: Vec<Option<AttackResult>> = Vec::new();
    let mut randoms: Vec<Option<AttackResult>> = Vec::new();
    let mut random_fs: Vec<Option<AttackResult>> = Vec::new();
    for (i, (label, policy)) in agents.iter().enumerate() {
        let i = i as u64;
        let trajectories = if wants("random_f") {
            collect_attack_trajectories(policy, &layout, a.n_traj, a.horizon, derive_seed(cfg.seed, "trajectories", i))?
        } else {
            Vec::new()
        };
        let grad = if wants("grad") || wants("transfer") {
            let s = derive_seed(cfg.seed, "trajectories", i);
            Some(grad_attack(policy, &layout, a.epsilon, a.k, a.p_freq, a.n_traj, a.horizon, s)?)
        } else {
            None
        };
        let random = if wants("random") {
            Some(random_attack(&layout, a.epsilon, a.random_k, None, derive_seed(cfg.seed, "random", i))?)
        } else {
            None
        };
        let random_f = if wants("random_f") {
            let s = derive_seed(cfg.seed, "random_f", i);
            Some(random_attack(&layout, a.epsilon, a.random_k, Some((&trajectories, a.p_freq)), s)?)
        } else {
            None
        };
        for (tag, r) in [("grad", &grad), ("random", &random), ("random_f", &random_f)] {
            if let Some(r) = r {
                r.save(dir.join("attacks").join(format!("{label}_{tag}.toml")))?;
            }
        }
        grads.push(grad);
        randoms.push(random);
        random_fs.push(random_f);
    }

    let eval_seed = derive_seed(cfg.seed, "eval", 0);
    let mut groups = Vec::new();
    let mut rows = Vec::new();
    for method in ATTACK_METHODS.iter().filter(|m| wants(m)) {
        let mut names = Vec::new();
        for (i, (label, policy)) in agents.iter().enumerate() {
            let states = match *method {
                "none" => vec![None],
                "random" => some(randoms[i].as_ref().expect("computed")),
                "random_f" => some(random_fs[i].as_ref().expect("computed")),
                "grad" => some(grads[i].as_ref().expect("computed")),
                _ => (0..agents.len())
                    .filter(|&j| j != i)
                    .flat_map(|j| some(grads[j].as_ref().expect("computed")))
                    .collect(),
            };
            let spec = eval_spec(states, cfg.games, cfg.horizon, eval_seed, cfg.deterministic);
            let (stats, log) = evaluate(policy, &layout, &spec)?;
            info!("{label} under {method}: {:.1}", stats.grand_mean);
            let name = format!("{label}/{method}");
            rows.push(RowSpec { method: label.clone(), attack: method.to_string(), groups: vec![name.clone()], skipped: false });
            names.push(name.clone());
            groups.push((name, log));
        }
        rows.push(RowSpec { method: "all".into(), attack: method.to_string(), groups: names, skipped: false });
    }
    write_episode_log(dir.join("episodes.csv"), &groups)?;
    let spec = ReportSpec {
        title: format!("Attack experiment on {}", layout.name),
        layout: layout.name.clone(),
        metadata: vec![
            ["seed".into(), cfg.seed.to_string()],
            ["agents".into(), agents.iter().map(|(l, p)| format!("{l}={}", p.id())).collect::<Vec<_>>().join(" ")],
            ["epsilon".into(), a.epsilon.to_string()],
            ["k".into(), a.k.to_string()],
            ["random_k".into(), a.random_k.to_string()],
            ["p_freq".into(), a.p_freq.to_string()],
            ["trajectories".into(), format!("{} x {} steps", a.n_traj, a.horizon)],
            ["evaluation".into(), format!("{} games x {} steps, {}", cfg.games, cfg.horizon, action_mode(cfg.deterministic))],
            ["evaluation seed".into(), eval_seed.to_string()],
        ],
        rows,
    };
    let report = write_outputs(dir, "report", &spec, &groups)?;
    Ok(ExperimentOutput { dir: dir.clone(), report, baseline: None })
}

fn action_mode(deterministic: bool) -> &'static str {
    if deterministic {
        "greedy actions"
    } else {
        "sampled actions"
    }
}

struct DefenseEval<'a> {
    cfg: &'a DefenseExperimentConfig,
    layout: &'a Layout,
    random_states: Vec<Option<Perturbation>>,
    groups: Vec<(String, Vec<EpisodeRecord>)>,
    attacks_dir: PathBuf,
}

impl DefenseEval<'_> {
    /// White-box gradient attack against `policy`.
    fn attack(&self, policy: &PolicyParams<f32>, name: &str) -> Result<AttackResult, HarnessError> {
        let a = &self.cfg.attack;
        let seed = derive_seed(self.cfg.seed, "attack", 0);
        let r = grad_attack(policy, self.layout, a.epsilon, a.k, a.p_freq, a.n_traj, a.horizon, seed)?;
        r.save(self.attacks_dir.join(format!("{}.toml", name.replace('/', "_"))))?;
        Ok(r)
    }

    /// Evaluates under all attack conditions; returns group names per
    /// condition and the regenerated gradient attack.
    fn run(&mut self, policy: &PolicyParams<f32>, name: &str) -> Result<(Vec<String>, AttackResult), HarnessError> {
        let grad = self.attack(policy, name)?;
        let eval_seed = derive_seed(self.cfg.seed, "eval", 0);
        let mut names = Vec::new();
        for cond in ATTACK_CONDITIONS {
            let states = match cond {
                "none" => vec![None],
                "random" => self.random_states.clone(),
                _ => some(&grad),
            };
            let spec = eval_spec(states, self.cfg.games, self.cfg.horizon, eval_seed, self.cfg.deterministic);
            let (stats, log) = evaluate(policy, self.layout, &spec)?;
            info!("{name} under {cond}: {:.1}", stats.grand_mean);
            let group = format!("{name}/{cond}");
            names.push(group.clone());
            self.groups.push((group, log));
        }
        Ok((names, grad))
    }
}

fn build_pool(
    cfg: &DefenseExperimentConfig,
    fcp: &FcpConfig,
    layout: &Layout,
    dir: &Path,
) -> Result<PartnerPool, HarnessError> {
    let key = train_key(layout, &cfg.train, &format!("pool steps={} seed={}", fcp.partner_steps, cfg.seed));
    let pool_dir = dir.join(format!("pool-{}", short_hash(&key)));
    if let Ok(pool) = PartnerPool::load(&pool_dir) {
        return Ok(pool);
    }
    let mut histories = Vec::new();
    for j in 0..POOL_PARTNERS {
        let s = derive_seed(cfg.seed, "partner", j as u64);
        info!("training FCP partner {j} (seed {s}) for {} steps", fcp.partner_steps);
        histories.push(train_self_play(layout, fcp.partner_steps, s, &cfg.train)?.history);
    }
    let pool = PartnerPool::from_histories(&histories)?;
    pool.save(&pool_dir)?;
    Ok(pool)
}

/// Trains and evaluates the defense grid: each enabled method × {none,
/// random, grad}, with the gradient attack regenerated against every
/// defended policy. Undefended agents go to a separate baseline report.
pub fn run_defense_experiment(cfg: &DefenseExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let layout = Layout::load(&cfg.layout)?;
    for m in &cfg.methods {
        if !DEFENSE_METHODS.iter().any(|(k, _)| k == m) {
            return Err(HarnessError::Config(format!("unknown defense method {m}")));
        }
    }
    cfg.bat.validate()?;
    let dir = &cfg.out_dir;
    let agents_dir = prepare_dir(dir, &cfg.agents)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let base = load_or_train_agents(&cfg.agents, &layout, &cfg.train, cfg.seed, &agents_dir)?;
    let a = &cfg.attack;
    let random = random_attack(&layout, a.epsilon, a.random_k, None, derive_seed(cfg.seed, "random-eval", 0))?;
    random.save(dir.join("attacks").join("random_eval.toml"))?;
    let mut ev = DefenseEval {
        cfg,
        layout: &layout,
        random_states: some(&random),
        groups: Vec::new(),
        attacks_dir: dir.join("attacks"),
    };
    let enabled = |k: &str| cfg.methods.iter().any(|m| m == k);
    let needs_fcp = enabled("extra_fcp") || enabled("bat_fcp");
    let extra_steps = cfg.extra_steps.unwrap_or(cfg.bat.finetune_steps);
    let div_steps = cfg.div_start_steps.unwrap_or(cfg.agents.steps);
    let bat_key = format!(
        "{}\n{}",
        toml::to_string(&cfg.bat).expect("config serializes"),
        toml::to_string(&cfg.attack).expect("config serializes")
    );

    let mut baseline_rows: Vec<RowSpec> = Vec::new();
    let mut method_groups: Vec<Vec<Vec<String>>> = vec![Vec::new(); DEFENSE_METHODS.len()];

    // undefended self-play agents, their attacks and BAT perturbation sets
    let mut sp = Vec::new();
    let mut sp_names = Vec::new();
    for (i, (label, policy)) in base.iter().enumerate() {
        let (names, adv) = ev.run(policy, &format!("{label}/undefended"))?;
        let perts = bat_perturbations(&layout, &adv, &cfg.bat, derive_seed(cfg.seed, "bat", i as u64))?;
        sp_names.push(names);
        sp.push((label.clone(), policy.clone(), adv, perts));
    }
    push_rows(&mut baseline_rows, "SP", &sp_names);

    let pool = match (&cfg.fcp, needs_fcp) {
        (Some(f), true) => Some(build_pool(cfg, f, &layout, &agents_dir)?),
        _ => None,
    };
    let mut fcp_agents = Vec::new();
    if let (Some(pool), Some(f)) = (&pool, &cfg.fcp) {
        let mut fcp_names = Vec::new();
        for i in 0..base.len() {
            let s = derive_seed(cfg.seed, "fcp", i as u64);
            let key = train_key(&layout, &cfg.train, &format!("fcp steps={} seed={s} pool={}", f.steps, pool_id(pool)));
            let p = cached(&agents_dir, &format!("fcp{i}"), &key, || {
                info!("training FCP agent {i} for {} steps", f.steps);
                Ok(train_fcp(&layout, pool, f.steps, s, &cfg.train)?.policy)
            })?;
            let (names, adv) = ev.run(&p, &format!("fcp{i}/undefended"))?;
            fcp_names.push(names);
            fcp_agents.push((format!("fcp{i}"), p, adv));
        }
        push_rows(&mut baseline_rows, "FCP", &fcp_names);
    }

    for (mi, (key, _)) in DEFENSE_METHODS.iter().enumerate() {
        let fcp_method = key.ends_with("fcp");
        if !enabled(key) || (fcp_method && pool.is_none()) {
            continue;
        }
        let count = if fcp_method { fcp_agents.len() } else { sp.len() };
        for i in 0..count {
            let s = derive_seed(cfg.seed, key, i as u64);
            let (label, parent) = if fcp_method { (&fcp_agents[i].0, &fcp_agents[i].1) } else { (&sp[i].0, &sp[i].1) };
            let ckey = format!("{} {key} seed={s} extra={extra_steps} div={div_steps}\n{bat_key}\n{}", parent.fingerprint(), train_key(&layout, &cfg.train, ""));
            let name = format!("{key}{i}");
            let defended = cached(&agents_dir, &name, &ckey, || -> Result<PolicyParams<f32>, HarnessError> {
                info!("training {key} for {label}");
                Ok(match *key {
                    "extra_sp" => {
                        continue_training(parent, &layout, &InitDistribution::standard(), extra_steps, s, &cfg.train, "extra")?
                            .policy
                    }
                    "extra_fcp" => continue_fcp(parent, &layout, pool.as_ref().expect("pool"), extra_steps, s, &cfg.train)?.policy,
                    "div_start" => {
                        let init = cfg.bat.init_distribution(&sp[i].3)?;
                        train_div_start(&layout, &init, div_steps, s, &cfg.train)?.policy
                    }
                    _ => {
                        let adv = if fcp_method { &fcp_agents[i].2 } else { &sp[i].2 };
                        let out = run_bat(parent, &layout, adv, &cfg.bat, &cfg.train, s)?;
                        out.report.write_csv(dir.join(format!("kickstart_{name}.csv")))?;
                        out.robust.policy
                    }
                })
            })?;
            let (names, _) = ev.run(&defended, &format!("{name}/defended"))?;
            method_groups[mi].push(names);
        }
    }

    let mut rows = Vec::new();
    for (mi, (key, label)) in DEFENSE_METHODS.iter().enumerate() {
        if method_groups[mi].is_empty() {
            for cond in ATTACK_CONDITIONS {
                rows.push(RowSpec { method: label.to_string(), attack: cond.into(), groups: Vec::new(), skipped: true });
            }
            if enabled(key) {
                info!("{label} skipped: no FCP configuration");
            }
        } else {
            push_rows(&mut rows, label, &method_groups[mi]);
        }
    }

    write_episode_log(dir.join("episodes.csv"), &ev.groups)?;
    let metadata = vec![
        ["seed".into(), cfg.seed.to_string()],
        ["agents".into(), base.iter().map(|(l, p)| format!("{l}={}", p.id())).collect::<Vec<_>>().join(" ")],
        ["grad attack".into(), "regenerated against each evaluated policy (white-box re-attack)".into()],
        ["random attack".into(), format!("{} states shared by all methods", random.states.len())],
        ["epsilon".into(), a.epsilon.to_string()],
        ["k".into(), a.k.to_string()],
        ["p_freq".into(), a.p_freq.to_string()],
        [
            "BAT".into(),
            format!(
                "T={} alpha={} beta={} lr={} epochs={} split={} states={}+{}",
                cfg.bat.temperature,
                cfg.bat.alpha,
                cfg.bat.beta,
                cfg.bat.lr,
                cfg.bat.epochs,
                cfg.bat.train_fraction,
                cfg.bat.n_adversarial,
                cfg.bat.n_random
            ),
        ],
        [
            "budgets".into(),
            format!(
                "agents {} steps, BAT distill {} + fine-tune {} steps, extra {extra_steps}, div-start {div_steps}",
                cfg.agents.steps,
                cfg.bat.n_traj * cfg.bat.horizon,
                cfg.bat.finetune_steps
            ),
        ],
        ["evaluation".into(), format!("{} games x {} steps, {}", cfg.games, cfg.horizon, action_mode(cfg.deterministic))],
        ["evaluation seed".into(), derive_seed(cfg.seed, "eval", 0).to_string()],
    ];
    let spec = ReportSpec {
        title: format!("Defense experiment on {}", layout.name),
        layout: layout.name.clone(),
        metadata: metadata.clone(),
        rows,
    };
    let report = write_outputs(dir, "report", &spec, &ev.groups)?;
    let base_spec = ReportSpec {
        title: format!("Undefended agents on {}", layout.name),
        layout: layout.name.clone(),
        metadata,
        rows: baseline_rows,
    };
    let baseline = write_outputs(dir, "baseline", &base_spec, &ev.groups)?;
    Ok(ExperimentOutput { dir: dir.clone(), report, baseline: Some(baseline) })
}

fn pool_id(pool: &PartnerPool) -> String {
    let ids: Vec<String> = pool.entries().iter().map(|e| e.params.id()).collect();
    short_hash(&ids.join(","))
}

/// One row per attack condition pooling the given agents' groups.
fn push_rows(rows: &mut Vec<RowSpec>, label: &str, per_agent: &[Vec<String>]) {
    for (c, cond) in ATTACK_CONDITIONS.iter().enumerate() {
        rows.push(RowSpec {
            method: label.to_string(),
            attack: cond.to_string(),
            groups: per_agent.iter().map(|n| n[c].clone()).collect(),
            skipped: false,
        });
    }
}
