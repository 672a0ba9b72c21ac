use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use group_elicit::graph::{train, HeteroGraph, TrainConfig};
use group_elicit::harness::{
    generate_population, relative_recovery, run_experiment, sensitivity_table, summarize,
    tier_recovery, write_jsonl, write_plot_csv, write_summary_csv, DataSource, ExperimentConfig,
    FitOptions, Method, MetricRecord, SensitivityTable, SyntheticSpec, TrialSummary, TIER_PERCENTS,
};
use group_elicit::lab::{
    adversarial_search, coverage_corpus, evaluate_instance, joint_greedy_bound, write_records_csv,
    SquareOracle,
};
use group_elicit::population::InteractionHistory;
use group_elicit::population::{load_dataset_dir, partition_queries, split_by_region, Dataset};
use group_elicit::population::{MEMBERS_FILE, RESPONSES_FILE, SCHEMA_FILE};
use group_elicit::predictive::{fit_em, martingale_check, EmConfig, LatentClassModel};
use group_elicit::rng::rng_for;
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::manifest::RunManifest;
use crate::CliError;

pub const PREDICTOR_FILE: &str = "predictor.json";
pub const GNN_FILE: &str = "gnn.json";

pub fn need<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Input(format!("--{flag} is required")))
}

pub fn load_dataset(dir: &Path, manifest: &mut RunManifest) -> Result<Dataset, CliError> {
    let d = load_dataset_dir(dir)?;
    for f in [MEMBERS_FILE, RESPONSES_FILE, SCHEMA_FILE] {
        manifest.input(&dir.join(f))?;
    }
    Ok(d)
}

pub fn region_subset(d: &Dataset, region: &str) -> Result<Dataset, CliError> {
    let ids: Vec<usize> = d
        .members
        .iter()
        .filter(|m| m.region.as_deref() == Some(region))
        .map(|m| m.id)
        .collect();
    if ids.is_empty() {
        return Err(CliError::Input(format!("no members tagged {region:?}")));
    }
    Ok(d.subset(&ids))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string(value).expect("snapshot serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_spec(path: &Path) -> Result<SyntheticSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory holding members.csv, responses.csv and schema.toml.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Fit only on members with this region tag.
    #[arg(long)]
    pub train_region: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pseudo_count: Option<f64>,
    /// Add demographic attributes to the predictor as extra items.
    #[arg(long, value_name = "BOOL")]
    pub demographic_prior: Option<bool>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn fit(args: FitArgs) -> Result<ExitCode, CliError> {
    let a = resolve(&args, args.config.as_deref(), "fit")?;
    let dir = need(a.dataset.clone(), "dataset")?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("snapshots"));
    let seed = a.seed.unwrap_or(0);
    let mut manifest = RunManifest::new("fit", &a, vec![seed]);
    let data = load_dataset(&dir, &mut manifest)?;
    let train_set = match &a.train_region {
        Some(r) => region_subset(&data, r)?,
        None => data,
    };
    let em = EmConfig {
        n_classes: a.classes.unwrap_or(8),
        seed,
        pseudo_count: a.pseudo_count.unwrap_or(0.1),
        ..EmConfig::default()
    };
    let model: LatentClassModel<f64> = if a.demographic_prior.unwrap_or(true) {
        fit_em(&train_set.with_attribute_queries().0, &em)?
    } else {
        fit_em(&train_set, &em)?
    };
    let defaults = TrainConfig::default();
    let gnn = train::<f64>(
        &HeteroGraph::build(&train_set, true)?,
        &TrainConfig {
            dim: a.dim.unwrap_or(defaults.dim),
            epochs: a.epochs.unwrap_or(defaults.epochs),
            seed,
            ..defaults
        },
    )?;
    create_dir(&out)?;
    write_json(&out.join(PREDICTOR_FILE), &model)?;
    write_json(&out.join(GNN_FILE), &gnn)?;
    manifest.output(PREDICTOR_FILE);
    manifest.output(GNN_FILE);
    let m = manifest.write(&out)?;
    println!(
        "predictor: {} classes, log-likelihood {:.4} after {} iterations",
        model.n_classes(),
        model.meta.log_likelihood,
        model.meta.iterations
    );
    println!(
        "graph network: probe cross-entropy {:.4} -> {:.4}",
        gnn.report.probe_start, gnn.report.probe_end
    );
    println!("wrote {}", m.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Synthetic population spec (TOML); a fresh population per trial.
    #[arg(long, conflicts_with = "dataset")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub train_region: Option<String>,
    #[arg(long)]
    pub test_region: Option<String>,
    /// Method names, comma separated, or `all`.
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    /// Respondent fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub budget: Option<Vec<f64>>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub targets: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub pseudo_count: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub shortlist: Option<usize>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, CliError> {
    let mut out = Vec::new();
    for n in names {
        if n == "all" {
            out.extend(Method::ALL);
        } else {
            out.push(n.parse()?);
        }
    }
    out.dedup();
    Ok(out)
}

fn experiment_config(a: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let d = ExperimentConfig::default();
    let methods = match &a.method {
        Some(names) => parse_methods(names)?,
        None => d.methods.clone(),
    };
    let cfg = ExperimentConfig {
        methods,
        budgets: a.budget.clone().unwrap_or(d.budgets.clone()),
        rounds: a.rounds.unwrap_or(d.rounds),
        n_candidates: a.candidates.unwrap_or(d.n_candidates),
        n_targets: a.targets.unwrap_or(d.n_targets),
        trials: a.trials.unwrap_or(d.trials),
        seed: a.seed.unwrap_or(d.seed),
        em: EmConfig {
            n_classes: a.classes.unwrap_or(d.em.n_classes),
            pseudo_count: a.pseudo_count.unwrap_or(d.em.pseudo_count),
            ..d.em.clone()
        },
        gnn: TrainConfig {
            dim: a.dim.unwrap_or(d.gnn.dim),
            epochs: a.epochs.unwrap_or(d.gnn.epochs),
            ..d.gnn.clone()
        },
        shortlist: a.shortlist.unwrap_or(d.shortlist),
        rollouts: a.rollouts.unwrap_or(d.rollouts),
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: RunArgs) -> Result<ExitCode, CliError> {
    let a = resolve(&args, args.config.as_deref(), "run")?;
    let cfg = experiment_config(&a)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let mut manifest = RunManifest::new("run", &cfg, vec![cfg.seed]);
    let source = match (&a.spec, &a.dataset) {
        (Some(p), _) => {
            manifest.input(p)?;
            DataSource::Synthetic {
                spec: read_spec(p)?,
            }
        }
        (None, Some(dir)) => DataSource::Dataset {
            data: load_dataset(dir, &mut manifest)?,
            train_tag: a.train_region.clone().unwrap_or_else(|| "train".into()),
            test_tag: a.test_region.clone().unwrap_or_else(|| "test".into()),
        },
        (None, None) => {
            return Err(CliError::Input(
                "one of --spec or --dataset is required".into(),
            ))
        }
    };
    let result = run_experiment(&cfg, &source)?;
    manifest.seeds.extend(result.trials.iter().map(|t| t.seed));
    create_dir(&out)?;
    let rows = summarize(&result.records);
    write_jsonl(&out.join("records.jsonl"), &result.records)?;
    write_jsonl(&out.join("trials.jsonl"), &result.trials)?;
    write_summary_csv(&out.join("summary.csv"), &rows)?;
    write_plot_csv(&out.join("plot.csv"), &rows)?;
    for f in ["records.jsonl", "trials.jsonl", "summary.csv", "plot.csv"] {
        manifest.output(f);
    }
    manifest.write(&out)?;
    println!("method,budget,round,accuracy,se");
    for r in rows.iter().filter(|r| r.round == cfg.rounds) {
        println!(
            "{},{},{},{:.4},{:.4}",
            r.method, r.budget, r.round, r.accuracy_mean, r.accuracy_se
        );
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Random coverage instances to check exhaustively.
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random latent-class models for the martingale identity.
    #[arg(long)]
    pub models: Option<usize>,
    /// Hill-climbing restarts searching for a bad joint-greedy instance.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Also report a supermodular fixture; it is never part of the gate.
    #[arg(long, value_name = "BOOL")]
    pub with_fixture: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const MARTINGALE_TOL: f64 = 1e-12;

fn random_model(seed: u64) -> Result<LatentClassModel<f64>, CliError> {
    use rand::Rng as _;
    let mut rng = rng_for(seed, "verify-model", 0);
    let k = rng.random_range(1..6);
    let choices: Vec<usize> = (0..5).map(|_| rng.random_range(2..5)).collect();
    let mut simplex = |n: usize| -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    };
    let prior = simplex(k);
    let rows = (0..k)
        .map(|_| choices.iter().map(|&c| simplex(c)).collect())
        .collect();
    Ok(LatentClassModel::new(prior, rows)?)
}

/// Worst martingale deviation over every (next, probe) pair of a random
/// model after a random history.
fn martingale_worst(seed: u64) -> Result<f64, CliError> {
    use rand::Rng as _;
    let m = random_model(seed)?;
    let mut rng = rng_for(seed, "verify-history", 0);
    let mut h = InteractionHistory::new(1);
    for q in 0..m.n_queries() {
        if rng.random::<bool>() {
            h.record_observed(0, q, rng.random_range(0..m.n_choices(q)))?;
        }
    }
    let mut worst: f64 = 0.0;
    for next in 0..m.n_queries() {
        for probe in 0..m.n_queries() {
            worst = worst.max(martingale_check(&m, h.member(0), next, probe)?);
        }
    }
    Ok(worst)
}

pub fn verify(args: VerifyArgs) -> Result<ExitCode, CliError> {
    let a = resolve(&args, args.config.as_deref(), "verify")?;
    let seed = a.seed.unwrap_or(0);
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("verify"));
    let mut manifest = RunManifest::new("verify", &a, vec![seed]);
    let mut records = coverage_corpus(seed, a.instances.unwrap_or(400))?;
    if a.with_fixture.unwrap_or(false) {
        records.push(evaluate_instance(&SquareOracle::new(3, 3)?, seed, 2, 2)?);
    }
    let certified: Vec<_> = records.iter().filter(|r| r.certified).collect();
    let failed: Vec<_> = certified.iter().filter(|r| !r.pass()).collect();
    let max = |f: fn(&group_elicit::lab::InstanceRecord) -> f64| {
        certified.iter().map(|r| f(r)).fold(0.0, f64::max)
    };
    println!(
        "coverage instances: {} certified, {} uncertified, {} failed; max ratio joint {:.4}, two-stage {:.4}, inner {:.4}",
        certified.len(),
        records.len() - certified.len(),
        failed.len(),
        max(|r| r.ratio_joint),
        max(|r| r.ratio_2stage),
        max(|r| r.ratio_inner)
    );
    for r in &failed {
        println!(
            "WITNESS instance-seed={} T={} k={} members={} queries={} f_opt={} f_joint={} f_2stage={}",
            r.instance_seed, r.rounds, r.budget, r.members, r.queries, r.f_opt, r.f_greedy_joint, r.f_greedy_2stage
        );
    }

    let models = a.models.unwrap_or(100);
    let mut worst: f64 = 0.0;
    let mut martingale_failed = Vec::new();
    for i in 0..models as u64 {
        let s = group_elicit::rng::derive_seed(seed, "verify-martingale", i);
        let w = martingale_worst(s)?;
        if w > MARTINGALE_TOL {
            martingale_failed.push((s, w));
        }
        worst = worst.max(w);
    }
    println!("martingale: {models} models, max deviation {worst:.3e}");
    for (s, w) in &martingale_failed {
        println!("WITNESS martingale model-seed={s} deviation={w:.3e}");
    }

    let (ratio, _, t, k) = adversarial_search(seed, a.restarts.unwrap_or(8), 40)?;
    let adversarial_ok = ratio <= joint_greedy_bound() + 1e-9;
    println!(
        "adversarial search: worst joint-greedy ratio {ratio:.4} (T={t}, k={k}) against bound {:.4}",
        joint_greedy_bound()
    );

    create_dir(&out)?;
    write_records_csv(&out.join("verify.csv"), &records)?;
    manifest.output("verify.csv");
    manifest.write(&out)?;
    let ok = failed.is_empty() && martingale_failed.is_empty() && adversarial_ok;
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "dataset")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub train_region: Option<String>,
    #[arg(long)]
    pub test_region: Option<String>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub targets: Option<usize>,
    /// Seed of the candidate/target split.
    #[arg(long)]
    pub partition_seed: Option<u64>,
    /// Fit seeds to average over, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn sensitivity(args: SensitivityArgs) -> Result<ExitCode, CliError> {
    let a = resolve(&args, args.config.as_deref(), "sensitivity")?;
    let seeds = a.seeds.clone().unwrap_or_else(|| vec![0]);
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("sensitivity"));
    let mut manifest = RunManifest::new("sensitivity", &a, seeds.clone());
    let (train_set, test_set) = match (&a.spec, &a.dataset) {
        (Some(p), _) => {
            manifest.input(p)?;
            let pop = generate_population(&read_spec(p)?)?;
            split_by_region(&pop.dataset, "south", "west")?
        }
        (None, Some(dir)) => {
            let d = load_dataset(dir, &mut manifest)?;
            split_by_region(
                &d,
                a.train_region.as_deref().unwrap_or("train"),
                a.test_region.as_deref().unwrap_or("test"),
            )?
        }
        (None, None) => {
            return Err(CliError::Input(
                "one of --spec or --dataset is required".into(),
            ))
        }
    };
    let d = ExperimentConfig::default();
    let partition = partition_queries(
        &test_set,
        a.candidates.unwrap_or(d.n_candidates),
        a.targets.unwrap_or(d.n_targets),
        a.partition_seed.unwrap_or(0),
    )?;
    let fit = FitOptions {
        em: EmConfig {
            n_classes: a.classes.unwrap_or(d.em.n_classes),
            ..d.em.clone()
        },
        gnn: TrainConfig {
            dim: a.dim.unwrap_or(d.gnn.dim),
            epochs: a.epochs.unwrap_or(d.gnn.epochs),
            ..d.gnn.clone()
        },
        demographic_prior: d.demographic_prior,
    };
    let table = sensitivity_table(&train_set, &test_set, &partition, &fit, &seeds)?;
    create_dir(&out)?;
    write_sensitivity_csv(&out.join("sensitivity.csv"), &test_set, &table)?;
    manifest.output("sensitivity.csv");
    manifest.write(&out)?;
    for t in &table.tiers {
        let mean = t.members.iter().map(|&m| table.scores[m]).sum::<f64>() / t.members.len() as f64;
        println!(
            "top {}%: {} members, mean sensitivity {mean:.4}",
            t.percent,
            t.members.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn write_sensitivity_csv(
    path: &Path,
    test: &Dataset,
    table: &SensitivityTable,
) -> Result<(), CliError> {
    let mut rank = vec![0; table.scores.len()];
    for (r, &m) in table.ranking.iter().enumerate() {
        rank[m] = r + 1;
    }
    let mut text = String::from("member,score,rank,tier\n");
    for (m, member) in test.members.iter().enumerate() {
        // the tightest tier holding the member
        let tier = TIER_PERCENTS
            .iter()
            .rev()
            .find(|&&p| table.tier(p).is_some_and(|t| t.contains(&m)))
            .map_or(String::new(), |p| p.to_string());
        text.push_str(&format!(
            "{},{},{},{}\n",
            member.key, table.scores[m], rank[m], tier
        ));
    }
    fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// records.jsonl written by `run`.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// trials.jsonl written by `run`; enables tier recovery.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Sensitivity tier (percent) for the recovery table.
    #[arg(long)]
    pub tier: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn report(args: ReportArgs) -> Result<ExitCode, CliError> {
    let a = resolve(&args, args.config.as_deref(), "report")?;
    let path = need(a.records.clone(), "records")?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    let mut manifest = RunManifest::new("report", &a, Vec::new());
    manifest.input(&path)?;
    let records: Vec<MetricRecord> = read_jsonl(&path)?;
    let rows = summarize(&records);
    create_dir(&out)?;
    write_summary_csv(&out.join("summary.csv"), &rows)?;
    write_plot_csv(&out.join("plot.csv"), &rows)?;
    manifest.output("summary.csv");
    manifest.output("plot.csv");
    if let Some(tp) = &a.trials {
        manifest.input(tp)?;
        let trials: Vec<TrialSummary> = read_jsonl(tp)?;
        let percent = a.tier.unwrap_or(10);
        let mut text =
            String::from("method,budget,round,trial,tier,tier_recovery,global_recovery\n");
        for t in &trials {
            let table = SensitivityTable::from_accuracies(&t.member_full, &t.member_cold)?;
            let members = table.tier(percent).ok_or_else(|| {
                CliError::Input(format!("no {percent}% tier; use one of {TIER_PERCENTS:?}"))
            })?;
            for r in records.iter().filter(|r| r.trial == t.trial) {
                let Some(r0) = records.iter().find(|x| {
                    x.trial == t.trial
                        && x.method == r.method
                        && x.budget == r.budget
                        && x.round == 0
                }) else {
                    continue;
                };
                let fmt = |v: group_elicit::Result<f64>| v.map_or(String::new(), |x| x.to_string());
                text.push_str(&format!(
                    "{},{},{},{},{percent},{},{}\n",
                    r.method,
                    r.budget,
                    r.round,
                    t.trial,
                    fmt(tier_recovery(r, r0, &t.member_full, members)),
                    fmt(relative_recovery(r.accuracy, r0.accuracy, t.acc_full))
                ));
            }
        }
        let p = out.join("recovery.csv");
        fs::write(&p, text).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
        manifest.output("recovery.csv");
    }
    manifest.write(&out)?;
    println!("{} records, {} summary rows", records.len(), rows.len());
    Ok(ExitCode::SUCCESS)
}
