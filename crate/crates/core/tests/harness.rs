mod common;

use std::path::Path;

use envrobust::harness::{
    emit_report, evaluate, mean_stderr, read_episode_log, replay_report, run_attack_experiment, run_defense_experiment,
    AgentsConfig, AttackExperimentConfig, AttackParams, DefenseExperimentConfig, EpisodeRecord, EvalSpec, Format,
    Report, ReportRow, RowValue, ScoreStats, ATTACK_CONDITIONS, DEFENSE_METHODS,
};
use envrobust::defense::BatConfig;
use envrobust::nn::{ArchSpec, CheckpointMeta, PolicyParams};
use envrobust::rl::{PpoConfig, TrainConfig};
use proptest::prelude::*;

use common::ring;

#[test]
fn waiting_policy_scores_nothing() {
    let layout = ring();
    let mut arch = ArchSpec::for_layout(&layout);
    arch.hidden = vec![4];
    let n = PolicyParams::<f32>::init(arch.clone(), 0).unwrap().num_params();
    // all-zero weights tie every action; greedy picks joint action 0 = (wait, wait)
    let wait = PolicyParams::from_values(arch, vec![0.0; n], CheckpointMeta::default()).unwrap();
    let spec = EvalSpec { deterministic: true, ..EvalSpec::standard(5, 100, 1) };
    let (stats, log) = evaluate(&wait, &layout, &spec).unwrap();
    assert_eq!((stats.grand_mean, stats.pooled_stderr, stats.n), (0.0, 0.0, 5));
    assert_eq!(log.len(), 5);
}

/// Mean and standard error from exact integer sums; only the final division
/// and square root round.
fn exact_reference(xs: &[i64]) -> (f64, f64) {
    let n = xs.len() as i128;
    let s: i128 = xs.iter().map(|&x| x as i128).sum();
    let ss: i128 = xs.iter().map(|&x| (x as i128) * (x as i128)).sum();
    let mean = s as f64 / n as f64;
    // sample variance / n = (n ss - s^2) / (n^2 (n - 1))
    let num = n * ss - s * s;
    let se = (num as f64 / (n * n * (n - 1)) as f64).sqrt();
    (mean, se)
}

proptest! {
    #[test]
    fn statistics_match_exact_reference(xs in prop::collection::vec(0i64..2_000, 2..300)) {
        let vals: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
        let (m, s) = mean_stderr(&vals);
        let (rm, rs) = exact_reference(&xs);
        prop_assert!((m - rm).abs() <= 1e-12 * rm.abs().max(1.0));
        prop_assert!((s - rs).abs() <= 1e-9 * rs.max(1.0));
    }

    #[test]
    fn grand_mean_is_mean_of_state_means(scores in prop::collection::vec((0usize..5, 0i64..50), 1..100)) {
        let log: Vec<EpisodeRecord> = scores
            .iter()
            .enumerate()
            .map(|(g, &(s, x))| EpisodeRecord { state_index: s, state: format!("s{s}"), game: g, score: 20.0 * x as f64 })
            .collect();
        let st = ScoreStats::from_episodes(&log);
        let mut means = Vec::new();
        for s in 0..5 {
            let xs: Vec<f64> = log.iter().filter(|e| e.state_index == s).map(|e| e.score).collect();
            if !xs.is_empty() {
                means.push(xs.iter().sum::<f64>() / xs.len() as f64);
            }
        }
        let want = means.iter().sum::<f64>() / means.len() as f64;
        prop_assert!((st.grand_mean - want).abs() < 1e-9);
        prop_assert_eq!(st.per_state.len(), means.len());
    }
}

#[test]
fn empty_report_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    emit_report(&Report::default(), Format::Csv, &path).unwrap();
    assert_eq!(std::fs::read_to_string(path).unwrap(), "method,attack,layout,mean,stderr,n\n");
}

#[test]
fn markdown_and_csv_carry_the_same_numbers() {
    let rows = vec![
        ReportRow { method: "SP".into(), attack: "none".into(), layout: "ring".into(), value: RowValue::Score { mean: 341.8, stderr: 16.2, n: 20 } },
        ReportRow { method: "BAT+SP".into(), attack: "grad".into(), layout: "ring".into(), value: RowValue::Score { mean: 1.0 / 3.0, stderr: 0.0, n: 3 } },
        ReportRow { method: "BAT+FCP".into(), attack: "grad".into(), layout: "ring".into(), value: RowValue::Skipped },
    ];
    let report = Report { title: "t".into(), metadata: vec![("k".into(), "v".into())], rows };
    let csv = report.to_csv();
    let md = report.to_markdown();
    let md_rows: Vec<Vec<String>> = md
        .lines()
        .filter(|l| l.starts_with("| ") && !l.starts_with("| method"))
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect())
        .collect();
    let csv_rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(md_rows, csv_rows);
    assert_eq!(Report::rows_from_csv(&csv).unwrap()[2].value, RowValue::Skipped);
    assert!(csv.contains("0.333,0.000,3"));
}

pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        ppo: PpoConfig { minibatch: 40, epochs: 1, ..PpoConfig::default() },
        horizon: 40,
        episodes_per_update: 2,
        hidden: vec![16],
        checkpoint_every: 40,
        ..TrainConfig::default()
    }
}

fn tiny_attack_config(out: &Path) -> AttackExperimentConfig {
    AttackExperimentConfig {
        seed: 5,
        out_dir: out.to_path_buf(),
        agents: AgentsConfig { count: 2, steps: 160, ..AgentsConfig::default() },
        train: tiny_train(),
        attack: AttackParams { k: 3, random_k: 4, n_traj: 2, horizon: 40, p_freq: 1.0, ..AttackParams::default() },
        games: 2,
        horizon: 40,
        ..AttackExperimentConfig::default()
    }
}

#[test]
fn attack_experiment_replays_and_reproduces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = run_attack_experiment(&tiny_attack_config(a.path())).unwrap();
    // one row per agent plus the pooled row, for each of five methods
    assert_eq!(out.report.rows.len(), 5 * 3);
    let csv = std::fs::read(a.path().join("report.csv")).unwrap();
    assert_eq!(replay_report(a.path(), "report").unwrap().to_csv().into_bytes(), csv);

    run_attack_experiment(&tiny_attack_config(b.path())).unwrap();
    for f in ["report.csv", "report.md", "episodes.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    // none equals evaluating the standard state directly
    let groups = read_episode_log(a.path().join("episodes.csv")).unwrap();
    let none = &groups.iter().find(|(g, _)| g == "sp0/none").unwrap().1;
    assert!(none.iter().all(|e| e.state == "standard"));
    let agent = std::fs::read_dir(a.path().join("agents"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("sp0-"))
        .unwrap();
    let policy = envrobust::nn::load_checkpoint(agent).unwrap();
    let seed: u64 = out.report.metadata.iter().find(|(k, _)| k == "evaluation seed").unwrap().1.parse().unwrap();
    let (_, direct) = evaluate(&policy, &ring(), &EvalSpec::standard(2, 40, seed)).unwrap();
    assert_eq!(&direct, none);
}

#[test]
fn transfer_needs_two_agents() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_attack_config(dir.path());
    cfg.agents.count = 1;
    assert!(run_attack_experiment(&cfg).is_err());
    cfg.methods = vec!["none".into(), "grad".into()];
    assert_eq!(run_attack_experiment(&cfg).unwrap().report.rows.len(), 4);
}

#[test]
fn defense_grid_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DefenseExperimentConfig {
        seed: 1,
        out_dir: dir.path().to_path_buf(),
        agents: AgentsConfig { count: 1, steps: 120, ..AgentsConfig::default() },
        train: tiny_train(),
        attack: AttackParams { k: 2, random_k: 2, n_traj: 2, horizon: 40, p_freq: 1.0, ..AttackParams::default() },
        bat: BatConfig { n_traj: 3, horizon: 20, epochs: 2, finetune_steps: 80, n_adversarial: 2, n_random: 1, ..BatConfig::default() },
        methods: vec!["extra_sp".into(), "bat_sp".into(), "bat_fcp".into()],
        games: 2,
        horizon: 40,
        ..DefenseExperimentConfig::default()
    };
    let out = run_defense_experiment(&cfg).unwrap();
    let rows = &out.report.rows;
    assert_eq!(rows.len(), DEFENSE_METHODS.len() * ATTACK_CONDITIONS.len());
    for (i, (key, label)) in DEFENSE_METHODS.iter().enumerate() {
        for (j, cond) in ATTACK_CONDITIONS.iter().enumerate() {
            let r = &rows[i * ATTACK_CONDITIONS.len() + j];
            assert_eq!((r.method.as_str(), r.attack.as_str()), (*label, *cond));
            let filled = matches!(r.value, RowValue::Score { .. });
            assert_eq!(filled, *key == "extra_sp" || *key == "bat_sp", "{label} {cond}");
        }
    }
    assert!(out.report.metadata.iter().any(|(k, v)| k == "grad attack" && v.contains("regenerated")));
    let baseline = out.baseline.unwrap();
    assert_eq!(baseline.rows.len(), ATTACK_CONDITIONS.len());
    let csv = std::fs::read(dir.path().join("report.csv")).unwrap();
    assert_eq!(replay_report(dir.path(), "report").unwrap().to_csv().into_bytes(), csv);
}

#[test]
fn shipped_configs_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let a = envrobust::harness::AttackExperimentConfig::load(root.join("attack_desk.toml")).unwrap();
    assert_eq!(a.agents.seeds, vec![1, 2]);
    assert_eq!(a.attack.random_k, 100);
    assert!(a.train.shaping.is_some());
    let d = envrobust::harness::DefenseExperimentConfig::load(root.join("defense_desk.toml")).unwrap();
    assert_eq!(d.methods.len(), 5);
    assert!(d.fcp.is_some());
    assert!((d.bat.n_traj * d.bat.horizon) as u64 + d.bat.finetune_steps <= d.agents.steps);
}
