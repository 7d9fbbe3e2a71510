//! Subcommand wiring: argument surfaces, dispatch, and the per-command
//! pipelines.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use conflictkit::confidence::{
    max_confidence_select, max_confidence_shift_select, min_variance_select, option_confidence,
    Disturbance, MinVarianceConfig,
};
use conflictkit::contrastive::{
    contrast_score_with_rule, elicit_visual_memory, separation_stats, ContrastScore,
    ElicitConfig, EvalTokenRule, StopRule, DEFAULT_BIN_WIDTH,
};
use conflictkit::datamodel::{
    read_jsonl, write_jsonl, ConflictReport, McqaItem, Modality, OptionKey, SkippedItem,
};
use conflictkit::dataset_builder::{
    build_dataset, downsample, stats, BuilderConfig, RawQaItem,
};
use conflictkit::dcd::{dcd_from_report, DcdReport};
use conflictkit::detector::{answer, detect, recognize, DetectorConfig};
use conflictkit::mitigate::{evaluate_strategy, MitigateConfig, Strategy, StrategyReport};
use conflictkit::parallel::map_bounded;

use crate::backend_setup::build_backend;
use crate::config::Config;
use crate::meta::{read_json, write_json, Artifact, RunMeta};
use crate::render;
use crate::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "conflictkit",
    version,
    about = "Detect, quantify, and mitigate cross-modality knowledge conflicts in vision-language models"
)]
pub struct Cli {
    /// TOML config file (backend, seeds, parallelism, prompts, thresholds).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Backend override: replay:<path>, synthetic:<path>, or http:<url>.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parallelism override (worker threads for per-item processing).
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a multiple-choice dataset from free-form QA items.
    BuildDataset {
        /// Raw QA items, one JSON object per line.
        #[arg(long)]
        input: PathBuf,
        /// Output multiple-choice dataset.
        #[arg(long)]
        output: PathBuf,
        /// Down-sample to this many items after synthesis.
        #[arg(long)]
        n: Option<usize>,
        /// Provenance tag for the produced items.
        #[arg(long, value_enum, default_value_t = SourceArg::Custom)]
        source: SourceArg,
    },
    /// Run the detection pipeline and write the conflict report.
    Detect {
        #[arg(long)]
        dataset: PathBuf,
        /// Report path; a flat per-sample CSV is written alongside.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a confidence-based answer-selection strategy.
    AnalyzeConfidence {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        strategy: ConfidenceStrategy,
        #[arg(long)]
        out: PathBuf,
        /// Disturbance samples per modality for the min-variance strategies.
        #[arg(long, default_value_t = 10)]
        n_samples: usize,
        /// Track the gold answer's confidence instead of the model's own.
        #[arg(long)]
        track_gold: bool,
    },
    /// Compute the contrastive metric per item plus separation statistics.
    Contrast {
        #[arg(long)]
        dataset: PathBuf,
        /// Per-item scores CSV.
        #[arg(long)]
        out: PathBuf,
        /// Histogram CSV (bin lower edge, count) for external plotting.
        #[arg(long)]
        hist: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin_width: f64,
        /// Which option anchors the metric.
        #[arg(long, value_enum, default_value_t = EvalTokenArg::Visual)]
        eval_token: EvalTokenArg,
    },
    /// Elicit the visual components' memory for one item.
    Elicit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        item_id: String,
        #[arg(long, default_value_t = 64)]
        max_tokens: usize,
        /// Stop decoding after emitting this exact token.
        #[arg(long)]
        stop_token: Option<String>,
        /// Optional JSON output; the elicited text always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dynamic contrastive decoding over option logits.
    Dcd {
        /// Reuse the distributions recorded in a prior detection report.
        #[arg(long, conflicts_with = "dataset")]
        report: Option<PathBuf>,
        /// Query fresh distributions instead.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-query conflicting items with a mitigation prompt and score the
    /// strategy against the visual baseline.
    Mitigate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        out: PathBuf,
        /// Re-query every item, not only flipped ones.
        #[arg(long)]
        requery_all: bool,
    },
    /// Render prior reports into a combined summary (text and CSV).
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        dcd: Option<PathBuf>,
        /// Strategy reports to include; repeatable.
        #[arg(long)]
        mitigate: Vec<PathBuf>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SourceArg {
    Viquae,
    Infoseek,
    Custom,
}

impl SourceArg {
    fn to_core(self) -> conflictkit::datamodel::SourceDataset {
        match self {
            SourceArg::Viquae => conflictkit::datamodel::SourceDataset::ViQuAE,
            SourceArg::Infoseek => conflictkit::datamodel::SourceDataset::InfoSeek,
            SourceArg::Custom => conflictkit::datamodel::SourceDataset::Custom,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ConfidenceStrategy {
    /// Highest own-answer confidence wins.
    Max,
    /// Largest confidence shift wins.
    Shift,
    /// Smallest variance under prompt rephrasing wins.
    MinvarPrompt,
    /// Smallest variance under backend stochastic mode wins.
    MinvarStochastic,
}

impl ConfidenceStrategy {
    fn name(self) -> &'static str {
        match self {
            ConfidenceStrategy::Max => "max_confidence",
            ConfidenceStrategy::Shift => "max_confidence_shift",
            ConfidenceStrategy::MinvarPrompt => "min_variance_prompt",
            ConfidenceStrategy::MinvarStochastic => "min_variance_stochastic",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum EvalTokenArg {
    Visual,
    Textual,
    MaxAbs,
}

impl EvalTokenArg {
    fn to_rule(self) -> EvalTokenRule {
        match self {
            EvalTokenArg::Visual => EvalTokenRule::VisualAnswer,
            EvalTokenArg::Textual => EvalTokenRule::TextualAnswer,
            EvalTokenArg::MaxAbs => EvalTokenRule::MaxAbsDifference,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum StrategyArg {
    Reminder,
    AnswerConflict,
}

impl StrategyArg {
    fn to_core(self) -> Strategy {
        match self {
            StrategyArg::Reminder => Strategy::Reminder,
            StrategyArg::AnswerConflict => Strategy::AnswerConflict,
        }
    }
}

/// One selected answer in a confidence-strategy report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRow {
    pub item_id: String,
    pub answer: OptionKey,
    pub modality: Modality,
    pub correct: bool,
    pub recognized: bool,
}

/// Accuracy of a confidence-based selection strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub strategy: String,
    pub n_total: usize,
    pub n_recognized: usize,
    pub n_skipped: usize,
    pub acc: f64,
    pub racc: f64,
    pub selections: Vec<SelectionRow>,
    pub skipped: Vec<SkippedItem>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::BuildDataset { input, output, n, source } => {
            build_dataset_cmd(&cli, input, output, *n, *source)
        }
        Command::Detect { dataset, out } => detect_cmd(&cli, dataset, out),
        Command::AnalyzeConfidence { dataset, strategy, out, n_samples, track_gold } => {
            analyze_confidence_cmd(&cli, dataset, *strategy, out, *n_samples, *track_gold)
        }
        Command::Contrast { dataset, out, hist, bin_width, eval_token } => {
            contrast_cmd(&cli, dataset, out, hist, *bin_width, *eval_token)
        }
        Command::Elicit { dataset, item_id, max_tokens, stop_token, out } => {
            elicit_cmd(&cli, dataset, item_id, *max_tokens, stop_token.as_deref(), out.as_deref())
        }
        Command::Dcd { report, dataset, out } => {
            dcd_cmd(&cli, report.as_deref(), dataset.as_deref(), out)
        }
        Command::Mitigate { report, dataset, strategy, out, requery_all } => {
            mitigate_cmd(&cli, report, dataset, *strategy, out, *requery_all)
        }
        Command::Report { report, dcd, mitigate, out_csv } => {
            report_cmd(report, dcd.as_deref(), mitigate, out_csv.as_deref())
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("this subcommand requires --config"))?;
    let mut config = Config::load(path)?;
    config.apply_overrides(cli.backend.as_deref(), cli.seed, cli.parallel)?;
    Ok(config)
}

fn load_items(path: &Path) -> Result<Vec<McqaItem>, CliError> {
    read_jsonl(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn detector_config(config: &Config) -> DetectorConfig {
    DetectorConfig {
        parallelism: config.parallelism,
        max_skip_fraction: config.thresholds.max_skip_fraction,
        templates: config.prompt_templates(),
    }
}

fn build_dataset_cmd(
    cli: &Cli,
    input: &Path,
    output: &Path,
    n: Option<usize>,
    source: SourceArg,
) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let runtime = build_backend(&config)?;
    let raws: Vec<RawQaItem> =
        read_jsonl(input).map_err(|e| CliError::config(format!("{}: {e}", input.display())))?;
    if raws.is_empty() {
        return Err(CliError::config(format!("{}: no raw items", input.display())));
    }

    let builder_config = BuilderConfig {
        seed: config.seed,
        retry_limit: config.thresholds.retry_limit,
        parallelism: config.parallelism,
        source_dataset: source.to_core(),
    };
    let (mut items, build_stats) = build_dataset(&raws, runtime.backend(), &builder_config);
    if items.is_empty() {
        return Err(CliError::pipeline(format!(
            "all {} items failed synthesis; first failure: {}",
            build_stats.n_input,
            build_stats
                .failures
                .first()
                .map(|(id, err)| format!("{id}: {err}"))
                .unwrap_or_default()
        )));
    }
    if let Some(n) = n {
        items = downsample(&items, n, config.seed).map_err(CliError::pipeline)?;
    }
    write_jsonl(output, &items)
        .map_err(|e| CliError::pipeline(format!("{}: {e}", output.display())))?;

    let dataset_stats = stats(&items);
    println!(
        "built {} items ({} skipped, {} normalized-gold) -> {}",
        dataset_stats.count,
        build_stats.n_skipped,
        build_stats.n_normalized_gold,
        output.display()
    );
    println!("gold distribution: {:?}", dataset_stats.gold_distribution);
    if dataset_stats.gold_skewed() {
        log::warn!(
            "gold placement is skewed: {:?} holds more than 90% of golds",
            dataset_stats.dominant_gold_share()
        );
    }
    runtime.finalize()?;
    Ok(())
}

fn detect_cmd(cli: &Cli, dataset: &Path, out: &Path) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let runtime = build_backend(&config)?;
    let items = load_items(dataset)?;

    let report = detect(&items, runtime.backend(), &detector_config(&config))
        .map_err(CliError::pipeline)?;

    let meta = RunMeta::new(config.seed, config.sha256()).with_dataset(dataset)?;
    write_json(out, &Artifact { meta, report: report.clone() })?;
    std::fs::write(out.with_extension("csv"), render::records_csv(&report)?)
        .map_err(|e| CliError::pipeline(format!("writing csv: {e}")))?;

    print!("{}", render::detect_text(&report));
    println!("report written to {}", out.display());
    runtime.finalize()?;
    Ok(())
}

fn analyze_confidence_cmd(
    cli: &Cli,
    dataset: &Path,
    strategy: ConfidenceStrategy,
    out: &Path,
    n_samples: usize,
    track_gold: bool,
) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let runtime = build_backend(&config)?;
    let backend = runtime.backend();
    let items = load_items(dataset)?;
    let templates = config.prompt_templates();

    let (mut selections, skipped): (Vec<SelectionRow>, Vec<SkippedItem>) = match strategy {
        ConfidenceStrategy::Max | ConfidenceStrategy::Shift => {
            let report = detect(&items, backend, &detector_config(&config))
                .map_err(CliError::pipeline)?;
            let selections = report
                .records
                .iter()
                .map(|record| {
                    let textual = option_confidence(&record.textual_dist);
                    let visual = option_confidence(&record.visual_dist);
                    let selection = match strategy {
                        ConfidenceStrategy::Max => max_confidence_select(
                            &textual,
                            &visual,
                            record.textual_answer,
                            record.visual_answer,
                        ),
                        _ => max_confidence_shift_select(
                            &textual,
                            &visual,
                            record.textual_answer,
                            record.visual_answer,
                        ),
                    };
                    SelectionRow {
                        item_id: record.item_id.clone(),
                        answer: selection.answer,
                        modality: selection.modality,
                        correct: selection.answer == record.gold,
                        recognized: record.recognized,
                    }
                })
                .collect();
            (selections, report.skipped.clone())
        }
        ConfidenceStrategy::MinvarPrompt | ConfidenceStrategy::MinvarStochastic => {
            let disturbance = match strategy {
                ConfidenceStrategy::MinvarPrompt => Disturbance::PromptRephrase,
                _ => Disturbance::Stochastic,
            };
            let mv_config = MinVarianceConfig {
                n_samples,
                disturbance,
                seed: config.seed,
                track_gold,
                rephrase_prompt: config.rephrase_prompt(),
                parallelism: 1,
            };
            let results = map_bounded(config.parallelism, &items, |item| {
                let recognition = recognize(item, backend, &templates)
                    .map_err(|e| SkippedItem { item_id: item.id.clone(), error: e.to_string() })?;
                let outcome = min_variance_select(item, backend, &templates, &mv_config)
                    .map_err(|e| SkippedItem { item_id: item.id.clone(), error: e.to_string() })?;
                Ok(SelectionRow {
                    item_id: item.id.clone(),
                    answer: outcome.answer,
                    modality: outcome.modality,
                    correct: outcome.answer == item.gold,
                    recognized: recognition.matched,
                })
            });
            let mut selections = Vec::new();
            let mut skipped = Vec::new();
            for result in results {
                match result {
                    Ok(row) => selections.push(row),
                    Err(skip) => skipped.push(skip),
                }
            }
            if (skipped.len() as f64) > config.thresholds.max_skip_fraction * items.len() as f64 {
                return Err(CliError::pipeline(format!(
                    "{} of {} items skipped, above the configured maximum fraction",
                    skipped.len(),
                    items.len()
                )));
            }
            (selections, skipped)
        }
    };

    selections.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let n_total = selections.len();
    let correct = selections.iter().filter(|s| s.correct).count();
    let recognized: Vec<&SelectionRow> = selections.iter().filter(|s| s.recognized).collect();
    let n_recognized = recognized.len();
    let r_correct = recognized.iter().filter(|s| s.correct).count();

    let report = ConfidenceReport {
        strategy: strategy.name().to_string(),
        n_total,
        n_recognized,
        n_skipped: skipped.len(),
        acc: if n_total == 0 { 0.0 } else { correct as f64 / n_total as f64 },
        racc: if n_recognized == 0 { 0.0 } else { r_correct as f64 / n_recognized as f64 },
        selections,
        skipped,
    };

    let meta = RunMeta::new(config.seed, config.sha256()).with_dataset(dataset)?;
    write_json(out, &Artifact { meta, report: report.clone() })?;
    println!(
        "{}: Acc {:.2} / R.Acc {:.2} over {} items ({} recognized)",
        report.strategy,
        report.acc * 100.0,
        report.racc * 100.0,
        report.n_total,
        report.n_recognized
    );
    println!("report written to {}", out.display());
    runtime.finalize()?;
    Ok(())
}

fn contrast_cmd(
    cli: &Cli,
    dataset: &Path,
    out: &Path,
    hist: &Path,
    bin_width: f64,
    eval_token: EvalTokenArg,
) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let runtime = build_backend(&config)?;
    let backend = runtime.backend();
    let items = load_items(dataset)?;
    let templates = config.prompt_templates();
    let rule = eval_token.to_rule();

    let results = map_bounded(config.parallelism, &items, |item| {
        let scored = (|| -> Result<(ContrastScore, bool), conflictkit::backend::BackendError> {
            let (textual_answer, textual_dist) =
                answer(item, backend, Modality::Textual, &templates)?;
            let (visual_answer, visual_dist) =
                answer(item, backend, Modality::Visual, &templates)?;
            let score = contrast_score_with_rule(
                &visual_dist,
                &textual_dist,
                rule,
                textual_answer,
                visual_answer,
            );
            Ok((score, textual_answer != visual_answer))
        })();
        scored.map(|s| (item.id.clone(), s)).map_err(|e| SkippedItem {
            item_id: item.id.clone(),
            error: e.to_string(),
        })
    });

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for result in results {
        match result {
            Ok(row) => rows.push(row),
            Err(skip) => skipped.push(skip),
        }
    }
    if (skipped.len() as f64) > config.thresholds.max_skip_fraction * items.len() as f64 {
        return Err(CliError::pipeline(format!(
            "{} of {} items skipped, above the configured maximum fraction",
            skipped.len(),
            items.len()
        )));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));

    let scores: Vec<(ContrastScore, bool)> =
        rows.iter().map(|(_, pair)| pair.clone()).collect();
    let stats = separation_stats(&scores, bin_width).map_err(CliError::pipeline)?;

    // Per-item scores CSV.
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "item_id".to_string(),
        "flipped".to_string(),
        "eval_token".to_string(),
        "metric".to_string(),
    ];
    for key in OptionKey::ALL {
        header.push(format!("diff_{key}"));
    }
    writer
        .write_record(&header)
        .map_err(|e| CliError::pipeline(format!("writing csv: {e}")))?;
    for (item_id, (score, flipped)) in &rows {
        let mut row = vec![
            item_id.clone(),
            flipped.to_string(),
            score.eval_token.to_string(),
            format!("{}", score.metric),
        ];
        for key in OptionKey::ALL {
            row.push(format!("{}", score.per_option[&key]));
        }
        writer
            .write_record(&row)
            .map_err(|e| CliError::pipeline(format!("writing csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::pipeline(format!("finalizing csv: {e}")))?;
    std::fs::write(out, bytes).map_err(|e| CliError::pipeline(format!("{}: {e}", out.display())))?;

    // Histogram CSV for external plotting.
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["bin_lower", "count"])
        .map_err(|e| CliError::pipeline(format!("writing csv: {e}")))?;
    for bin in &stats.histogram {
        writer
            .write_record([format!("{}", bin.lower), bin.count.to_string()])
            .map_err(|e| CliError::pipeline(format!("writing csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::pipeline(format!("finalizing csv: {e}")))?;
    std::fs::write(hist, bytes)
        .map_err(|e| CliError::pipeline(format!("{}: {e}", hist.display())))?;

    println!(
        "median contrast: all {:.4}, consistent {}, conflicting {}",
        stats.median_all,
        stats
            .median_consistent
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "-".to_string()),
        stats
            .median_conflicting
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "-".to_string()),
    );
    println!("scores written to {}, histogram to {}", out.display(), hist.display());
    runtime.finalize()?;
    Ok(())
}

fn elicit_cmd(
    cli: &Cli,
    dataset: &Path,
    item_id: &str,
    max_tokens: usize,
    stop_token: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let runtime = build_backend(&config)?;
    let items = load_items(dataset)?;
    let item = items
        .iter()
        .find(|i| i.id == item_id)
        .ok_or_else(|| CliError::config(format!("item {item_id} not found in {}", dataset.display())))?;

    let elicit_config = ElicitConfig {
        max_tokens,
        stop_rule: stop_token
            .map(|t| StopRule::OnToken(t.to_string()))
            .unwrap_or(StopRule::None),
        ..ElicitConfig::default()
    };
    let memory =
        elicit_visual_memory(item, runtime.backend(), &elicit_config).map_err(CliError::pipeline)?;

    if memory.degenerate {
        log::warn!("elicited sequence is degenerate: the two contexts never disagreed");
    }
    println!("{}", memory.text);
    if let Some(out) = out {
        let meta = RunMeta::new(config.seed, config.sha256()).with_dataset(dataset)?;
        write_json(out, &Artifact { meta, report: memory })?;
    }
    runtime.finalize()?;
    Ok(())
}

fn dcd_cmd(
    cli: &Cli,
    report_path: Option<&Path>,
    dataset: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (artifact, baseline): (Artifact<DcdReport>, ConflictReport) = match (report_path, dataset) {
        (Some(report_path), None) => {
            // Offline decoding over recorded distributions; provenance is
            // inherited from the prior report.
            let prior: Artifact<ConflictReport> = read_json(report_path)?;
            let dcd_report = dcd_from_report(&prior.report);
            let meta = RunMeta {
                prior_report_sha256: Some(crate::meta::sha256_file(report_path)?),
                ..prior.meta
            };
            (Artifact { meta, report: dcd_report }, prior.report)
        }
        (None, Some(dataset)) => {
            let config = load_config(cli)?;
            let runtime = build_backend(&config)?;
            let items = load_items(dataset)?;
            let (detect_report, dcd_report) =
                conflictkit::dcd::dcd_run(&items, runtime.backend(), &detector_config(&config))
                    .map_err(CliError::pipeline)?;
            runtime.finalize()?;
            let meta = RunMeta::new(config.seed, config.sha256()).with_dataset(dataset)?;
            (Artifact { meta, report: dcd_report }, detect_report)
        }
        _ => {
            return Err(CliError::config(
                "dcd needs exactly one of --report (reuse recorded distributions) or --dataset (query fresh)",
            ))
        }
    };

    write_json(out, &artifact)?;
    print!("{}", render::dcd_text(&artifact.report, Some(&baseline)));
    println!("report written to {}", out.display());
    Ok(())
}

fn mitigate_cmd(
    cli: &Cli,
    report_path: &Path,
    dataset: &Path,
    strategy: StrategyArg,
    out: &Path,
    requery_all: bool,
) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let runtime = build_backend(&config)?;
    let items = load_items(dataset)?;
    let prior: Artifact<ConflictReport> = read_json(report_path)?;

    let mitigate_config = MitigateConfig {
        parallelism: config.parallelism,
        max_skip_fraction: config.thresholds.max_skip_fraction,
        requery_all,
        templates: config.prompt_templates(),
    };
    let report = evaluate_strategy(
        &items,
        &prior.report,
        runtime.backend(),
        strategy.to_core(),
        &mitigate_config,
    )
    .map_err(CliError::pipeline)?;

    let meta = RunMeta::new(config.seed, config.sha256())
        .with_dataset(dataset)?
        .with_prior_report(report_path)?;
    write_json(out, &Artifact { meta, report: report.clone() })?;
    print!("{}", render::strategy_text(&report));
    println!("report written to {}", out.display());
    runtime.finalize()?;
    Ok(())
}

fn report_cmd(
    report_path: &Path,
    dcd_path: Option<&Path>,
    mitigate_paths: &[PathBuf],
    out_csv: Option<&Path>,
) -> Result<(), CliError> {
    let detect_artifact: Artifact<ConflictReport> = read_json(report_path)?;
    let dcd_artifact: Option<Artifact<DcdReport>> =
        dcd_path.map(read_json).transpose()?;
    let strategies: Vec<StrategyReport> = mitigate_paths
        .iter()
        .map(|p| read_json::<Artifact<StrategyReport>>(p).map(|a| a.report))
        .collect::<Result<_, _>>()?;

    let text = render::summary_text(
        &detect_artifact.report,
        dcd_artifact.as_ref().map(|a| &a.report),
        &strategies,
    );
    print!("{text}");

    if let Some(out_csv) = out_csv {
        let csv = render::summary_csv(
            &detect_artifact.report,
            dcd_artifact.as_ref().map(|a| &a.report),
            &strategies,
        )?;
        std::fs::write(out_csv, csv)
            .map_err(|e| CliError::pipeline(format!("{}: {e}", out_csv.display())))?;
        println!("summary csv written to {}", out_csv.display());
    }
    Ok(())
}
