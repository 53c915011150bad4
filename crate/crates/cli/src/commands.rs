use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crsim_core::agents::{AgentPolicy, PolicySpec};
use crsim_core::corpus::{export_all, filter_corpus, rec_context_leaks, SourceDialogue};
use crsim_core::engine::{
    rec_at_ground_truth_batch, replay_batch, simulate_batch, single_turn_batch, ContextAudit, EngineError,
    SimulationConfig, SimulationTask,
};
use crsim_core::io::{read_jsonl_lenient, Header};
use crsim_core::metrics::{
    evaluate, EmbeddingCatalog, EvalOptions, MatchGranularity, RemoteSimilarity, SimilarityProvider, TitleMode,
    TokenOverlapF1,
};
use crsim_core::protocol::Role;
use crsim_core::record::{DialogueRecord, Termination};
use crsim_server::ServerConfig;
use crsim_toytrain::audit::{audit_role, held_out_prompts, sample_turns};
use crsim_toytrain::checkpoint::Checkpoint;
use crsim_toytrain::gradcheck::{check_coordinates, sample_coordinates};
use crsim_toytrain::synth::{generate_synthetic_corpus, toy_vocab};
use crsim_toytrain::train::{encode_corpus, train_role_pair_with, TrainConfig, ViewAssignment};
use crsim_toytrain::{ModelConfig, TinyLm};

use crate::error::{data, usage, CliError};
use crate::output::{
    document, load_catalog_index, prepare_output, print_document, read_lines, require_file, write_document, write_lines,
};
use crate::{
    EvalArgs, ExportViewsArgs, GradCheckArgs, PreprocessArgs, ReplayArgs, ReplayMode, SampleArgs, ServeArgs,
    SimulateArgs, TrainToyArgs,
};

fn check_jobs(jobs: usize) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    Ok(())
}

fn load_policy(path: &Path, role: Role) -> Result<Box<dyn AgentPolicy>, CliError> {
    let spec = PolicySpec::load(path).map_err(data)?;
    spec.build(role).map_err(data)
}

pub fn preprocess(a: &PreprocessArgs) -> Result<(), CliError> {
    require_file(&a.corpus, "corpus")?;
    require_file(&a.catalog, "catalog")?;
    prepare_output(&a.out)?;
    if let Some(r) = &a.report {
        prepare_output(r)?;
    }
    let catalog = load_catalog_index(&a.catalog)?;
    let (_, lines) = read_jsonl_lenient::<SourceDialogue>(&a.corpus).map_err(data)?;
    let (kept, report) = filter_corpus(lines, &catalog);
    let header = Header::new("preprocess", a, None);
    write_lines(&a.out, &header, &kept)?;
    let doc = document(&header, &report)?;
    if let Some(r) = &a.report {
        write_document(r, &doc)?;
    }
    print_document(&doc);
    Ok(())
}

pub fn export_views(a: &ExportViewsArgs) -> Result<(), CliError> {
    require_file(&a.corpus, "corpus")?;
    check_jobs(a.jobs)?;
    prepare_output(&a.out_user)?;
    prepare_output(&a.out_rec)?;
    let dialogues: Vec<SourceDialogue> = read_lines(&a.corpus)?;
    let n = dialogues.len();
    let mut user = Vec::with_capacity(n);
    let mut rec = Vec::with_capacity(n);
    for r in export_all(dialogues, a.jobs) {
        let (u, r) = r.map_err(data)?;
        user.push(u);
        rec.push(r);
    }
    let header = Header::new("export-views", a, None);
    write_lines(&a.out_user, &header, &user)?;
    write_lines(&a.out_rec, &header, &rec)?;
    print_document(&document(&header, &serde_json::json!({ "dialogues": n }))?);
    Ok(())
}

/// A personas-file line: a prepared task, or a corpus dialogue to build one from.
#[derive(Deserialize)]
#[serde(untagged)]
enum PersonaLine {
    Task(Box<SimulationTask>),
    Source(SourceDialogue),
}

#[derive(Debug, Default, Serialize)]
struct BatchSummary {
    records: usize,
    accepted: usize,
    max_turns: usize,
    exhausted: usize,
    completed: usize,
    errors: usize,
    /// Dialogues that could not be run at all.
    skipped: Vec<SkippedDialogue>,
    rec_contexts_scanned: usize,
    oracle_leaks: usize,
}

#[derive(Debug, Serialize)]
struct SkippedDialogue {
    index: usize,
    error: String,
}

impl BatchSummary {
    fn count(&mut self, records: &[DialogueRecord]) {
        self.records = records.len();
        for r in records {
            match r.outcome.terminated_by {
                Termination::Accept => self.accepted += 1,
                Termination::MaxTurns => self.max_turns += 1,
                Termination::Exhausted => self.exhausted += 1,
                Termination::Completed => self.completed += 1,
                Termination::Error => self.errors += 1,
            }
        }
    }
}

/// Checks every recommender context against its dialogue's ground-truth
/// title and target attributes. Any hit is a data error.
fn scan_contexts(
    audit: ContextAudit,
    secrets: &HashMap<String, (crsim_core::persona::GroundTruth, String)>,
    out: Option<&Path>,
    header: &Header,
    summary: &mut BatchSummary,
) -> Result<(), CliError> {
    let entries = audit.into_entries();
    summary.rec_contexts_scanned = entries.len();
    let mut first = None;
    for e in &entries {
        if let Some((gt, attrs)) = secrets.get(&e.dialogue_id) {
            let leaks = rec_context_leaks(&e.context, gt, attrs);
            if !leaks.is_empty() {
                summary.oracle_leaks += 1;
                first.get_or_insert_with(|| format!("{}: {}", e.dialogue_id, leaks.join(", ")));
            }
        }
    }
    if let Some(path) = out {
        write_lines(path, header, &entries)?;
    }
    match first {
        Some(f) => Err(data(format!(
            "{} recommender context(s) leak target information, first: {f}",
            summary.oracle_leaks
        ))),
        None => Ok(()),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    require_file(&a.personas, "personas file")?;
    require_file(&a.user_policy, "user policy")?;
    require_file(&a.rec_policy, "recommender policy")?;
    check_jobs(a.jobs)?;
    prepare_output(&a.out)?;
    if let Some(p) = &a.contexts_out {
        prepare_output(p)?;
    }
    let config = SimulationConfig {
        max_turns: a.max_turns,
        seed: a.seed,
        jobs: a.jobs,
        score_all_turns: false,
    };
    config.validate().map_err(usage)?;
    let user = load_policy(&a.user_policy, Role::User)?;
    let rec = load_policy(&a.rec_policy, Role::Recommender)?;
    let tasks = read_lines::<PersonaLine>(&a.personas)?
        .into_iter()
        .map(|line| match line {
            PersonaLine::Task(t) => Ok(*t),
            PersonaLine::Source(s) => SimulationTask::from_source(&s),
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(data)?;
    let secrets = tasks
        .iter()
        .map(|t| {
            (
                t.dialogue_id.clone(),
                (t.ground_truth.clone(), t.persona.target_attributes.clone()),
            )
        })
        .collect();
    let audit = ContextAudit::new();
    let records = simulate_batch(user.as_ref(), rec.as_ref(), tasks, &config, Some(&audit));
    let header = Header::new("simulate", a, Some(a.seed));
    let mut summary = BatchSummary::default();
    summary.count(&records);
    scan_contexts(audit, &secrets, a.contexts_out.as_deref(), &header, &mut summary)?;
    write_lines(&a.out, &header, &records)?;
    print_document(&document(&header, &summary)?);
    Ok(())
}

pub fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    require_file(&a.corpus, "corpus")?;
    let policy_path = match a.mode {
        ReplayMode::MultiTurn | ReplayMode::UserSingleTurn => a
            .user_policy
            .as_ref()
            .ok_or_else(|| usage("--user-policy is required for this mode"))?,
        ReplayMode::RecAtGt => a
            .rec_policy
            .as_ref()
            .ok_or_else(|| usage("--rec-policy is required for rec-at-gt"))?,
    };
    require_file(policy_path, "policy")?;
    check_jobs(a.jobs)?;
    prepare_output(&a.out)?;
    if let Some(p) = &a.contexts_out {
        prepare_output(p)?;
    }
    let config = SimulationConfig {
        seed: a.seed,
        jobs: a.jobs,
        score_all_turns: a.score_all_turns,
        ..SimulationConfig::default()
    };
    let sources: Vec<SourceDialogue> = read_lines(&a.corpus)?;
    let header = Header::new("replay", a, Some(a.seed));
    let mut summary = BatchSummary::default();
    let audit = ContextAudit::new();
    let results: Vec<Result<DialogueRecord, EngineError>> = match a.mode {
        ReplayMode::MultiTurn => replay_batch(load_policy(policy_path, Role::User)?.as_ref(), sources.clone(), &config),
        ReplayMode::UserSingleTurn => {
            single_turn_batch(load_policy(policy_path, Role::User)?.as_ref(), sources.clone(), &config)
        }
        ReplayMode::RecAtGt => rec_at_ground_truth_batch(
            load_policy(policy_path, Role::Recommender)?.as_ref(),
            sources.clone(),
            &config,
            Some(&audit),
        ),
    };
    let mut records = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("skipping: {e}");
                summary.skipped.push(SkippedDialogue {
                    index,
                    error: e.to_string(),
                });
            }
        }
    }
    summary.count(&records);
    let secrets = sources
        .iter()
        .map(|s| {
            (
                s.dialogue_id.clone(),
                (s.ground_truth.clone(), s.persona.target_attributes.clone()),
            )
        })
        .collect();
    scan_contexts(audit, &secrets, a.contexts_out.as_deref(), &header, &mut summary)?;
    write_lines(&a.out, &header, &records)?;
    print_document(&document(&header, &summary)?);
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    for r in &a.records {
        require_file(r, "records file")?;
    }
    if let Some(c) = &a.catalog {
        require_file(c, "catalog")?;
    }
    if let Some(o) = &a.out {
        prepare_output(o)?;
    }
    let title_mode: TitleMode = a.titles.parse().map_err(usage)?;
    let granularity: MatchGranularity = a.granularity.parse().map_err(usage)?;
    let mut records = Vec::new();
    for r in &a.records {
        records.extend(read_lines::<DialogueRecord>(r)?);
    }
    let catalog = a
        .catalog
        .as_deref()
        .map(EmbeddingCatalog::load)
        .transpose()
        .map_err(data)?;
    let remote = a
        .similarity_url
        .as_ref()
        .map(|u| RemoteSimilarity::new(u.clone(), Duration::from_secs(30)));
    let similarity: Option<&dyn SimilarityProvider> = match (&remote, a.token_f1) {
        (Some(r), _) => Some(r),
        (None, true) => Some(&TokenOverlapF1),
        (None, false) => None,
    };
    let options = EvalOptions {
        title_mode,
        granularity,
        catalog: catalog.as_ref(),
        similarity,
        role: a.role.map(Role::from),
        include_errors: a.include_errors,
    };
    let mut report = evaluate(&records, &options).map_err(data)?;
    if !a.audit {
        report.match_audit.clear();
    }
    let header = Header::new("eval", a, None);
    let doc = document(&header, &report)?;
    if let Some(o) = &a.out {
        write_document(o, &doc)?;
    }
    if a.table {
        print!("{}", report.to_table());
    } else {
        print_document(&doc);
    }
    Ok(())
}

pub fn train_toy(a: &TrainToyArgs) -> Result<(), CliError> {
    if a.out_dir.is_file() {
        return Err(usage(format!("--out-dir `{}` is a file", a.out_dir.display())));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(usage)?;
    let config = TrainConfig {
        seed: a.seed,
        n_dialogues: a.n_dialogues,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        ..TrainConfig::default()
    };
    config.validate().map_err(usage)?;
    let vocab = toy_vocab();
    let corpus = generate_synthetic_corpus(config.seed, config.n_dialogues);
    let assignment = if a.swap_views {
        ViewAssignment::Swapped
    } else {
        ViewAssignment::Matched
    };
    let started = std::time::Instant::now();
    let pair = train_role_pair_with(&corpus, &vocab, &config, assignment).map_err(data)?;
    let train_seconds = started.elapsed().as_secs_f64();
    let header = Header::new("train-toy", a, Some(a.seed));

    let mut audits = Vec::new();
    for role in Role::ALL {
        let view_role = if a.swap_views { role.other() } else { role };
        let ckpt = Checkpoint::new(pair.model(role), &vocab, role, view_role, Some(config.clone()));
        ckpt.save(&a.out_dir.join(format!("{role}.ckpt.json"))).map_err(data)?;
        let prompts = held_out_prompts(a.audit_seed, &vocab, role, a.audit_prompts).map_err(data)?;
        audits.push(audit_role(pair.model(role), &vocab, role, &prompts).map_err(data)?);
    }
    let log = serde_json::json!({ "user": pair.user_log, "recommender": pair.rec_log });
    write_document(&a.out_dir.join("train_log.json"), &document(&header, &log)?)?;
    let summary = serde_json::json!({
        "assignment": if a.swap_views { "swapped" } else { "matched" },
        "train_seconds": train_seconds,
        "final_epoch_loss": {
            "user": pair.user_log.epoch_means.last(),
            "recommender": pair.rec_log.epoch_means.last(),
        },
        "audit": audits,
    });
    let doc = document(&header, &summary)?;
    write_document(&a.out_dir.join("audit.json"), &doc)?;
    print_document(&doc);
    Ok(())
}

pub fn grad_check(a: &GradCheckArgs) -> Result<(), CliError> {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(usage("--eps must be positive"));
    }
    if a.coords == 0 {
        return Err(usage("--coords must be at least 1"));
    }
    let vocab = toy_vocab();
    let model = TinyLm::new(ModelConfig::toy(vocab.len()), a.seed).map_err(data)?;
    let corpus = generate_synthetic_corpus(a.seed, 1);
    let (user, _) = encode_corpus(&corpus, &vocab, model.config().max_len).map_err(data)?;
    let seq = &user[0];
    let coords = sample_coordinates(&model, seq, a.coords, a.seed);
    let report = check_coordinates(&model, seq, a.eps, &coords).map_err(data)?;
    let header = Header::new("grad-check", a, Some(a.seed));
    let passed = report.max_rel_error < a.tolerance;
    print_document(&document(
        &header,
        &serde_json::json!({
            "max_rel_error": report.max_rel_error,
            "tolerance": a.tolerance,
            "passed": passed,
            "report": report,
        }),
    )?);
    if passed {
        Ok(())
    } else {
        Err(data(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, a.tolerance
        )))
    }
}

pub fn sample(a: &SampleArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(&a.checkpoint).map_err(data)?;
    let model = ckpt.model().map_err(data)?;
    let turns = sample_turns(&model, &ckpt.vocab, ckpt.trained_role, a.seed, a.n).map_err(data)?;
    for t in turns {
        println!("{t}");
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(p) => {
            require_file(p, "server config")?;
            ServerConfig::load(p).map_err(data)?
        }
        None => ServerConfig::default(),
    }
    .with_env();
    if let Some(b) = &a.bind {
        config.bind = b.clone();
    }
    if let Some(d) = &a.data_dir {
        config.data_dir = d.clone();
    }
    if let Some(d) = &a.records_dir {
        config.records_dir = d.clone();
    }
    if let Some(d) = &a.static_dir {
        config.static_dir = Some(d.clone());
    }
    config.validate().map_err(usage)?;
    let runtime = tokio::runtime::Runtime::new().map_err(data)?;
    runtime.block_on(crsim_server::serve(config)).map_err(data)
}
