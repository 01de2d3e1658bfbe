use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pedp_core::baselines::{BaselineKind, MultiClass, MultiClassConfig, MultiDense, SeqConfig, SeqModel};
use pedp_core::checkpoint::{self, PolicyModel};
use pedp_core::domain::{load_corpus, Corpus};
use pedp_core::evaluation::{
    episode_plan, interactive_metrics, simulate, summarize_runs, InteractiveReport, MetricSet, ModelPolicy,
    StandardReport, Summary,
};
use pedp_core::model::{default_max_plan_len, DecodeMode, PedpConfig, PedpModel, PredictOptions, SigmoidInput};
use pedp_core::training::{evaluate_standard, fit, FitSettings, PedpTrainer};
use pedp_core::user_sim::{generate_corpus, run_episode, DialogPolicy, DomainSchema, EpisodeLog, ExpertPolicy, ToyWorld, UserGoal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{require_file, Ablation, RunConfig};
use crate::{
    Command, Common, DumpDialogsArgs, EvalInteractiveArgs, EvalStandardArgs, GenDataArgs, InferenceFlags, TrainArgs,
    UsageError,
};

/// Policy name accepted in place of a checkpoint path.
pub const EXPERT: &str = "expert";

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::EvalStandard(a) => eval_standard(a),
        Command::EvalInteractive(a) => eval_interactive(a),
        Command::DumpDialogs(a) => dump_dialogs(a),
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    cfg.resolve_seeds()?;
    Ok(cfg)
}

fn apply_inference(ab: &mut Ablation, f: &InferenceFlags) {
    if f.k_paths.is_some() {
        ab.k_paths = f.k_paths;
    }
    ab.no_planning |= f.no_planning;
    ab.no_ensemble |= f.no_ensemble;
    ab.no_sample |= f.no_sample;
    ab.paper_literal_gumbel_sigmoid |= f.paper_literal_gs;
}

/// Overrides only the switches that are on; unset flags keep the model's own options.
fn adjust_predict(p: &mut PredictOptions, ab: &Ablation) {
    if let Some(k) = ab.k_paths {
        p.paths = Some(k);
    }
    if ab.no_planning {
        p.planning = false;
    }
    if ab.no_ensemble {
        p.ensemble = false;
    }
    if ab.no_sample {
        p.mode = DecodeMode::Threshold;
    }
    if ab.paper_literal_gumbel_sigmoid {
        p.sigmoid_input = SigmoidInput::Probability;
    }
}

fn apply_to_model(model: &mut PolicyModel, ab: &Ablation) {
    match model.predict_options_mut() {
        Some(p) => adjust_predict(p, ab),
        None if *ab != Ablation::default() => log::warn!("{} ignores prediction switches", model.kind()),
        None => {}
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_world(schema: Option<&Path>) -> Result<ToyWorld> {
    match schema {
        None => Ok(ToyWorld::toy()),
        Some(p) => {
            let p = require_file(Some(p), "--schema")?;
            Ok(ToyWorld::new(DomainSchema::read(&p)?)?)
        }
    }
}

fn load_input_corpus(cfg: &RunConfig) -> Result<(PathBuf, Corpus)> {
    let path = require_file(cfg.corpus.as_deref(), "--corpus")?;
    let corpus = load_corpus(&path)?;
    Ok((path, corpus))
}

// ---- gen-data ----

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if a.schema.is_some() {
        cfg.schema = a.schema;
    }
    if let Some(n) = a.dialogs {
        cfg.dialogs = n;
    }
    cfg.single_action |= a.single_action;
    let world = load_world(cfg.schema.as_deref())?;
    let out = cfg.out_dir()?.to_path_buf();
    let seed = cfg.seeds[0];
    let corpus = generate_corpus(&world, cfg.dialogs, !cfg.single_action, &mut ChaCha8Rng::seed_from_u64(seed))?;
    create_dir(&out)?;
    let corpus_path = out.join("corpus.jsonl");
    pedp_core::domain::write_corpus(&corpus_path, &corpus)?;
    world.schema().write(&out.join("schema.json"))?;
    let mut cardinality: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &corpus.samples {
        *cardinality.entry(s.macro_action.len()).or_default() += 1;
    }
    let manifest = json!({
        "run_config_digest": cfg.digest(),
        "seed": seed,
        "dialogs": cfg.dialogs,
        "turns": corpus.samples.len(),
        "multi_action": !cfg.single_action,
        "vocab_digest": corpus.vocab.digest(),
        "state_width": corpus.state_width(),
        "actions": corpus.vocab.len(),
        "macro_cardinality": cardinality,
        "files": ["corpus.jsonl", "corpus.schema.json", "schema.json"],
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    cfg.write_effective(&out)?;
    println!(
        "wrote {} turns from {} dialogs to {}",
        corpus.samples.len(),
        cfg.dialogs,
        corpus_path.display()
    );
    Ok(())
}

// ---- train ----

/// Fresh, untrained model of the configured kind for `corpus`.
pub fn build_model(cfg: &RunConfig, corpus: &Corpus, rng: &mut ChaCha8Rng) -> Result<PolicyModel> {
    let s = corpus.state_width();
    let m = corpus.vocab.len();
    let horizon = cfg
        .model
        .max_plan_len
        .unwrap_or_else(|| default_max_plan_len(corpus.max_macro_len()));
    let pedp_config = PedpConfig {
        state_width: s,
        hidden: cfg.model.hidden,
        actions: m,
        paths: cfg.ablation.k_paths.unwrap_or(cfg.model.paths),
        max_plan_len: horizon,
        action_embedding: cfg.model.action_embedding,
        decoder_hidden: cfg.model.decoder_hidden,
        gumbel: cfg.model.gumbel,
    };
    // K is a model setting at training time, not a prediction override.
    let ab = Ablation {
        k_paths: None,
        ..cfg.ablation
    };
    let mut model = match cfg.baseline {
        None => PolicyModel::Pedp(PedpTrainer {
            model: PedpModel::new(pedp_config, rng)?,
            weights: cfg.loss_weights,
            predict: PredictOptions::default(),
        }),
        Some(BaselineKind::MultiDense) => {
            PolicyModel::MultiDense(MultiDense::new(PedpModel::new(pedp_config, rng)?, PredictOptions::default()))
        }
        Some(BaselineKind::MultiClass) => PolicyModel::MultiClass(MultiClass::new(
            MultiClassConfig {
                state_width: s,
                hidden: cfg.model.hidden,
                actions: m,
                tau_out: cfg.model.gumbel.tau_out,
            },
            rng,
        )?),
        Some(BaselineKind::Seq) => PolicyModel::Seq(SeqModel::new(
            SeqConfig {
                state_width: s,
                hidden: cfg.model.hidden,
                actions: m,
                embedding: cfg.model.action_embedding,
                max_len: horizon,
                decode: cfg.seq_decode,
            },
            rng,
        )?),
    };
    apply_to_model(&mut model, &ab);
    Ok(model)
}

#[derive(Debug, Serialize)]
struct TrainRun {
    seed: u64,
    checkpoint: String,
    log: String,
    best_epoch: usize,
    best_val_f1: f64,
    n_train: usize,
    n_val: usize,
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if a.corpus.is_some() {
        cfg.corpus = a.corpus;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.n_max.is_some() {
        cfg.model.max_plan_len = a.n_max;
    }
    if a.baseline.is_some() {
        cfg.baseline = a.baseline;
    }
    apply_inference(&mut cfg.ablation, &a.inference);
    let (_, corpus) = load_input_corpus(&cfg)?;
    let out = cfg.out_dir()?.to_path_buf();
    cfg.loss_weights.validate()?;
    create_dir(&out)?;
    cfg.write_effective(&out)?;
    let digest = cfg.digest();
    let mut runs = Vec::new();
    let mut kind = "";
    for &seed in &cfg.seeds {
        let mut model = build_model(&cfg, &corpus, &mut ChaCha8Rng::seed_from_u64(seed))?;
        kind = model.kind();
        let stem = format!("{kind}-seed{seed}");
        let log_name = format!("{stem}.log.jsonl");
        let log_path = out.join(&log_name);
        let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
        let settings = FitSettings {
            epochs: cfg.epochs,
            optimizer: cfg.optimizer,
            val_fraction: cfg.val_fraction,
            seed,
        };
        let mut write_err = None;
        let outcome = fit(&mut model, &corpus.samples, &settings, |rec| {
            let mut line = serde_json::to_value(rec).expect("record serializes");
            line["seed"] = json!(seed);
            line["run_config_digest"] = json!(digest);
            let res = serde_json::to_writer(&mut log, &line)
                .map_err(anyhow::Error::from)
                .and_then(|_| log.write_all(b"\n").map_err(anyhow::Error::from));
            if let Err(e) = res {
                write_err.get_or_insert(e);
            }
            log::info!(
                "seed {seed} epoch {} loss {:.4} val f1 {:.4}",
                rec.epoch,
                rec.loss_total,
                rec.val_f1
            );
        });
        log.flush()?;
        if let Some(e) = write_err {
            return Err(e.context(format!("writing {}", log_path.display())));
        }
        let outcome = outcome.with_context(|| format!("training seed {seed}"))?;
        let ckpt_name = format!("{stem}.ckpt");
        checkpoint::save(&out.join(&ckpt_name), &model, corpus.vocab.digest(), &digest)?;
        println!(
            "seed {seed}: best epoch {} val f1 {:.4} -> {}",
            outcome.best_epoch,
            outcome.best_val_f1,
            out.join(&ckpt_name).display()
        );
        runs.push(TrainRun {
            seed,
            checkpoint: ckpt_name,
            log: log_name,
            best_epoch: outcome.best_epoch,
            best_val_f1: outcome.best_val_f1,
            n_train: outcome.n_train,
            n_val: outcome.n_val,
        });
    }
    write_json(
        &out.join("train-summary.json"),
        &json!({ "run_config_digest": digest, "kind": kind, "runs": runs }),
    )
}

// ---- eval-standard ----

#[derive(Debug, Serialize)]
struct StandardRun {
    checkpoint: String,
    kind: String,
    seed: u64,
    report: StandardReport,
}

fn summary_of<T: MetricSet>(reports: &[&T]) -> Result<BTreeMap<String, Summary>> {
    let runs: Vec<_> = reports.iter().map(|r| r.metrics()).collect();
    Ok(summarize_runs(&runs)?)
}

fn eval_standard(a: EvalStandardArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if !a.checkpoints.is_empty() {
        cfg.checkpoints = a.checkpoints;
    }
    if a.corpus.is_some() {
        cfg.corpus = a.corpus;
    }
    apply_inference(&mut cfg.ablation, &a.inference);
    if cfg.checkpoints.is_empty() {
        return Err(UsageError("--checkpoint is required".into()).into());
    }
    for c in &cfg.checkpoints {
        require_file(Some(c), "--checkpoint")?;
    }
    let (_, corpus) = load_input_corpus(&cfg)?;
    let mut runs = Vec::new();
    for path in &cfg.checkpoints {
        let (mut model, _) = checkpoint::load_for_vocab(path, corpus.vocab.digest())
            .with_context(|| format!("loading {}", path.display()))?;
        apply_to_model(&mut model, &cfg.ablation);
        for &seed in &cfg.seeds {
            let report = evaluate_standard(&model, &corpus.samples, seed)?;
            runs.push(StandardRun {
                checkpoint: path.display().to_string(),
                kind: model.kind().into(),
                seed,
                report,
            });
        }
    }
    let summary = summary_of(&runs.iter().map(|r| &r.report).collect::<Vec<_>>())?;
    let digest = cfg.digest();
    let doc = json!({ "run_config_digest": digest, "summary": summary, "runs": runs });
    print_summary(&summary);
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        cfg.write_effective(out)?;
        write_json(&out.join("standard-report.json"), &doc)?;
    } else {
        println!("{}", serde_json::to_string_pretty(&doc)?);
    }
    Ok(())
}

fn print_summary(summary: &BTreeMap<String, Summary>) {
    for (k, s) in summary {
        println!("{k:>16}: {:.4} ± {:.4} (n={})", s.mean, s.std, s.n);
    }
}

// ---- eval-interactive / dump-dialogs ----

enum Loaded {
    Expert,
    Model(Box<PolicyModel>),
}

struct NamedPolicy {
    label: String,
    policy: Loaded,
}

impl NamedPolicy {
    fn load(path: &Path, world: &ToyWorld, ab: &Ablation) -> Result<Self> {
        let label = path.display().to_string();
        if label == EXPERT {
            return Ok(NamedPolicy {
                label,
                policy: Loaded::Expert,
            });
        }
        let path = require_file(Some(path), "--checkpoint")?;
        let (mut model, _) = checkpoint::load_for_vocab(&path, world.system_vocab().digest())
            .with_context(|| format!("loading {}", path.display()))?;
        apply_to_model(&mut model, ab);
        Ok(NamedPolicy {
            label,
            policy: Loaded::Model(Box::new(model)),
        })
    }

    fn with<R>(&self, world: &ToyWorld, f: impl FnOnce(&mut dyn DialogPolicy) -> R) -> R {
        match &self.policy {
            Loaded::Expert => f(&mut ExpertPolicy(world)),
            Loaded::Model(m) => f(&mut ModelPolicy(m.as_ref())),
        }
    }
}

#[derive(Debug, Serialize)]
struct InteractiveRun {
    policy: String,
    seed: u64,
    report: InteractiveReport,
}

fn eval_interactive(a: EvalInteractiveArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if !a.checkpoints.is_empty() {
        cfg.checkpoints = a.checkpoints;
    }
    if a.schema.is_some() {
        cfg.schema = a.schema;
    }
    if let Some(n) = a.episodes {
        cfg.episodes = n;
    }
    if let Some(n) = a.max_turns {
        cfg.max_turns = n;
    }
    apply_inference(&mut cfg.ablation, &a.inference);
    if cfg.checkpoints.is_empty() {
        return Err(UsageError("--checkpoint is required (a path or `expert`)".into()).into());
    }
    let world = load_world(cfg.schema.as_deref())?;
    let policies = cfg
        .checkpoints
        .iter()
        .map(|p| NamedPolicy::load(p, &world, &cfg.ablation))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::new();
    for p in &policies {
        for &seed in &cfg.seeds {
            let logs = p.with(&world, |pol| simulate(&world, pol, cfg.episodes, cfg.max_turns, seed))?;
            runs.push(InteractiveRun {
                policy: p.label.clone(),
                seed,
                report: interactive_metrics(&logs)?,
            });
        }
    }
    let mut summaries = BTreeMap::new();
    for p in &policies {
        let reports: Vec<&InteractiveReport> = runs.iter().filter(|r| r.policy == p.label).map(|r| &r.report).collect();
        let s = summary_of(&reports)?;
        println!("{}", p.label);
        print_summary(&s);
        summaries.insert(p.label.clone(), s);
    }
    let doc = json!({ "run_config_digest": cfg.digest(), "summary": summaries, "runs": runs });
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        cfg.write_effective(out)?;
        write_json(&out.join("interactive-report.json"), &doc)?;
    } else {
        println!("{}", serde_json::to_string_pretty(&doc)?);
    }
    Ok(())
}

pub fn describe_goal(goal: &UserGoal) -> String {
    goal.domains
        .iter()
        .map(|g| {
            let cons: Vec<String> = g.constraints.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let mut s = format!("{}: {} | request {}", g.domain, cons.join(", "), g.requests.join(", "));
            if g.book {
                s.push_str(" | book");
            }
            s
        })
        .collect::<Vec<_>>()
        .join("\n      ")
}

pub fn transcript(label: &str, log: &EpisodeLog) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "== {label} ==");
    for (i, t) in log.turns.iter().enumerate() {
        let _ = writeln!(s, "turn {}", i + 1);
        let _ = writeln!(s, "  user:   {}", t.user_acts.join(" "));
        let _ = writeln!(s, "  system: {}", t.system_acts.join(" "));
    }
    let score = pedp_core::evaluation::episode_score(log);
    let _ = writeln!(
        s,
        "result: turns={} done={} inform_recall={:.3} match={} success={}",
        log.n_turns, log.done, score.inform_recall, log.matched, score.success
    );
    s
}

fn dump_dialogs(a: DumpDialogsArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if !a.checkpoints.is_empty() {
        cfg.checkpoints = a.checkpoints;
    }
    if a.schema.is_some() {
        cfg.schema = a.schema;
    }
    if let Some(n) = a.goals {
        cfg.goals = n;
    }
    if let Some(n) = a.max_turns {
        cfg.max_turns = n;
    }
    apply_inference(&mut cfg.ablation, &a.inference);
    if cfg.checkpoints.len() != 2 {
        return Err(UsageError("dump-dialogs needs exactly two --checkpoint values".into()).into());
    }
    if cfg.goals == 0 {
        bail!(UsageError("--goals must be at least 1".into()));
    }
    let out = cfg.out_dir()?.to_path_buf();
    let world = load_world(cfg.schema.as_deref())?;
    let a_pol = NamedPolicy::load(&cfg.checkpoints[0], &world, &cfg.ablation)?;
    let b_pol = NamedPolicy::load(&cfg.checkpoints[1], &world, &cfg.ablation)?;
    create_dir(&out)?;
    cfg.write_effective(&out)?;
    let digest = cfg.digest();
    let plan = episode_plan(&world, cfg.goals, cfg.seeds[0])?;
    let jsonl_path = out.join("pairs.jsonl");
    let mut jsonl = BufWriter::new(File::create(&jsonl_path).with_context(|| format!("creating {}", jsonl_path.display()))?);
    for (i, (goal, ep_seed)) in plan.iter().enumerate() {
        let run = |p: &NamedPolicy| {
            p.with(&world, |pol| {
                run_episode(&world, pol, goal, cfg.max_turns, &mut ChaCha8Rng::seed_from_u64(*ep_seed))
            })
        };
        let log_a = run(&a_pol)?;
        let log_b = run(&b_pol)?;
        let mut text = format!("# run_config_digest {digest}\n# pair {i:03}\ngoal: {}\n\n", describe_goal(goal));
        text.push_str(&transcript(&format!("A {}", a_pol.label), &log_a));
        text.push('\n');
        text.push_str(&transcript(&format!("B {}", b_pol.label), &log_b));
        let path = out.join(format!("pair-{i:03}.txt"));
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        let line = json!({
            "run_config_digest": digest,
            "pair": i,
            "goal": goal,
            "a": { "policy": a_pol.label, "episode": log_a },
            "b": { "policy": b_pol.label, "episode": log_b },
        });
        serde_json::to_writer(&mut jsonl, &line)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;
    println!("wrote {} paired transcripts to {}", plan.len(), out.display());
    Ok(())
}
