// SPDX-License-Identifier: MIT OR Apache-2.0

//! `commentcav` command-line tool.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use commentcav::comments::{concept_groups, scan_comments};
use commentcav::io::{read_json, read_jsonl, write_json, write_jsonl};
use commentcav::metrics::Metric;
use commentcav::pipeline::{
    self, EmbeddingRecord, ExperimentConfig, Generation, PromptRecord, Threshold,
};
use commentcav::probes::load_concept_probes;
use commentcav::profiler::{build_grid, builtin_tasks, load_tasks};
use commentcav::synth::{write_corpus, SynthOptions};
use commentcav::tinylm::{load_model, save_model};
use commentcav::{
    build_pairs, strip_concept, ConceptKind, Error, ExamplePair, Model, ModelConfig, Result,
    SteeringDirection, SteeringPlan, SteeringScope,
};

#[derive(Parser)]
#[command(
    name = "commentcav",
    version,
    about = "Probe and steer comment concepts in a toy transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the comments of a Java file as JSON lines
    Extract {
        file: PathBuf,
        /// Print concept groups instead of raw comment spans
        #[arg(long)]
        json: bool,
    },
    /// Print a Java file with one comment concept removed
    Strip {
        file: PathBuf,
        #[arg(long)]
        concept: ConceptKind,
    },
    /// Build positive/negative pairs from a corpus of Java files
    BuildDataset {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        concept: ConceptKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Capture per-layer last-token states for every pair
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one probe per layer and write a probe store
    TrainProbes {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        concept: ConceptKind,
        #[arg(long)]
        out: PathBuf,
        /// Test-set size N (default: sample size at 95% / 5%, capped at half the pairs)
        #[arg(long)]
        test_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate with activation steering
    SteerGenerate(SteerArgs),
    /// Score generations, or compare two metric reports
    Eval(EvalArgs),
    /// Mean concept probability per task and layer
    Profile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long, default_value = "comment")]
        concept: ConceptKind,
        /// JSON lines, each an object with a `code` field
        #[arg(long)]
        codes: PathBuf,
        /// Task list file, or `builtin`
        #[arg(long, default_value = "builtin")]
        tasks: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment from a JSON config file
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Merge completed runs into report.md and report.csv
    Report {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a randomly initialised model file
    InitModel {
        /// JSON model config; defaults apply to missing fields
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded corpus of small commented Java files
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SteerArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    probes: PathBuf,
    #[arg(long)]
    concept: ConceptKind,
    #[arg(long)]
    direction: SteeringDirection,
    /// Target probability (default 0.99 toward, 0.01 against)
    #[arg(long)]
    pt: Option<f64>,
    #[arg(long, default_value = "auto")]
    threshold: Threshold,
    /// Directory searched for probe stores when the threshold is `auto`
    /// (default: the --probes directory)
    #[arg(long)]
    stores: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    scope: SteeringScope,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    max_new_tokens: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "compare", conflicts_with = "compare")]
    pred: Option<PathBuf>,
    #[arg(long = "ref", required_unless_present = "compare")]
    reference: Option<PathBuf>,
    /// Comma-separated metric names
    #[arg(long, default_value = "em,em_trim,bleu4,bleu_trim,es,id_em,id_f1")]
    metrics: String,
    /// Two metric reports: treated, then baseline
    #[arg(long, num_args = 2, value_names = ["RUN_A", "RUN_B"])]
    compare: Option<Vec<PathBuf>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
struct CodeRecord {
    code: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("COMMENTCAV_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("COMMENTCAV_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn read_source(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn print_lines<T: serde::Serialize>(items: &[T]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for item in items {
        writeln!(out, "{}", serde_json::to_string(item)?)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Extract { file, json } => {
            let src = read_source(&file)?;
            if json {
                print_lines(&concept_groups(&src))
            } else {
                print_lines(&scan_comments(&src))
            }
        }
        Command::Strip { file, concept } => {
            let src = read_source(&file)?;
            print!("{}", strip_concept(&src, concept));
            Ok(())
        }
        Command::BuildDataset {
            corpus,
            concept,
            out,
        } => {
            let set = build_pairs(&corpus, concept)?;
            for w in &set.warnings {
                eprintln!("skipped {}: {}", w.path.display(), w.reason);
            }
            write_jsonl(&out, &set.pairs)?;
            eprintln!("{} pairs", set.pairs.len());
            Ok(())
        }
        Command::Embed { model, input, out } => {
            let model = load_model(&model)?;
            let pairs: Vec<ExamplePair> = read_jsonl(&input)?;
            for p in &pairs {
                p.validate()?;
            }
            write_jsonl(&out, &pipeline::embed_pairs(&model, &pairs)?)
        }
        Command::TrainProbes {
            embeddings,
            concept,
            out,
            test_size,
            seed,
        } => {
            let records: Vec<EmbeddingRecord> = read_jsonl(&embeddings)?;
            let training = pipeline::train_probes(&records, concept, test_size, seed)?;
            pipeline::write_probe_store(&out, &training)?;
            for p in &training.probes {
                eprintln!("layer {:>3}  test accuracy {:.4}", p.layer, p.test_accuracy);
            }
            Ok(())
        }
        Command::SteerGenerate(args) => steer_generate(args),
        Command::Eval(args) => eval(args),
        Command::Profile {
            model,
            probes,
            concept,
            codes,
            tasks,
            out,
        } => {
            let model = load_model(&model)?;
            let probes = load_concept_probes(&probes, concept)?;
            let codes: Vec<CodeRecord> = read_jsonl(&codes)?;
            let codes: Vec<String> = codes.into_iter().map(|c| c.code).collect();
            let tasks = if tasks == "builtin" {
                builtin_tasks()
            } else {
                load_tasks(Path::new(&tasks))?
            };
            let profile = commentcav::profiler::activation_profile(
                &model,
                &probes,
                &build_grid(&tasks, &codes)?,
            )?;
            for (task, n) in profile.skipped.iter().filter(|(_, &n)| n > 0) {
                eprintln!("{task}: skipped {n} prompts longer than the model context");
            }
            pipeline::write_profile(&out, &profile)?;
            Ok(())
        }
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config)?;
            pipeline::clear_manifest(&config.output_dir)?;
            let manifest = pipeline::run_experiment(&config)?;
            eprintln!(
                "threshold {:.4}, steering layers {:?}, {} outputs in {}",
                manifest.threshold.unwrap_or(f64::NAN),
                manifest.qualifying_layers,
                manifest.outputs.len(),
                config.output_dir.display()
            );
            Ok(())
        }
        Command::Report { runs, out } => {
            let (md, csv) = pipeline::report(&runs, &out)?;
            eprintln!("wrote {} and {}", md.display(), csv.display());
            Ok(())
        }
        Command::InitModel { config, seed, out } => {
            let mut cfg: ModelConfig = match config {
                Some(p) => read_json(&p)?,
                None => ModelConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            save_model(&Model::new(cfg)?, &out)
        }
        Command::Synth { count, seed, out } => {
            let opts = SynthOptions {
                seed,
                ..SynthOptions::default()
            };
            write_corpus(&out, count, &opts)?;
            Ok(())
        }
    }
}

fn steer_generate(args: SteerArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let probes = load_concept_probes(&args.probes, args.concept)?;
    let stores = args.stores.as_deref().unwrap_or(&args.probes);
    let threshold = pipeline::resolve_threshold(args.threshold, stores)?;
    let mut plan =
        SteeringPlan::new(args.concept, args.direction, threshold, probes)?.with_scope(args.scope);
    if let Some(pt) = args.pt {
        plan = plan.with_target(pt)?;
    }
    eprintln!(
        "threshold {threshold:.4}, steering layers {:?}",
        plan.qualifying_layers()
    );
    let records: Vec<PromptRecord> = read_jsonl(&args.input)?;
    let prompts: Vec<(String, String)> =
        records.iter().map(|r| (r.id.clone(), r.prompt())).collect();
    let setting = format!("steered_{}", args.direction);
    let gens =
        pipeline::generate_all(&model, Some(&plan), &prompts, args.max_new_tokens, &setting)?;
    write_jsonl(&args.out, &gens)
}

fn eval(args: EvalArgs) -> Result<()> {
    if let Some(paths) = args.compare {
        let name = |p: &Path| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        };
        let treated = read_json(&paths[0])?;
        let baseline = read_json(&paths[1])?;
        let cmp =
            pipeline::compare_reports(&name(&paths[0]), &treated, &name(&paths[1]), &baseline);
        return write_json(&args.out, &cmp);
    }
    let (Some(pred), Some(reference)) = (args.pred, args.reference) else {
        unreachable!("clap requires --pred and --ref without --compare");
    };
    let preds: Vec<Generation> = read_jsonl(&pred)?;
    let refs: Vec<PromptRecord> = read_jsonl(&reference)?;
    let report =
        pipeline::evaluate_generations(&preds, &refs, &Metric::parse_list(&args.metrics)?)?;
    write_json(&args.out, &report)
}
