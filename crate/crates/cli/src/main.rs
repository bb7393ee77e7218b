use std::collections::{HashMap, HashSet};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qagen::ablation::{run_batch, BatchInputs, MaskConfig, PoolPassage, Transform};
use qagen::bins::BinEdges;
use qagen::categorize::{assign_all, build_train_index, Adjudication, CategoryAssignment, ClassifyConfig, FinalizeConfig, NoveltyRule, Subsets};
use qagen::data::{load_checked, load_jsonl, write_jsonl, AnnotationBundle, Prediction, Question, RetrievalSet, VerificationLabel};
use qagen::decompose::{decompose_all, AtomSet};
use qagen::evaluate::{evaluate, Analysis, EntityRule, EvalInputs};
use qagen::pattern::{fill_pattern_freq, pattern_report, PatternConfig, PatternInputs};
use qagen::report::ReportFormat;
use qagen::{Category, Execution};

#[derive(Parser)]
#[command(name = "qagen", version, about = "Generalization-subset tooling for open-domain QA")]
struct Cli {
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose questions into atoms.
    Decompose {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify test questions into candidate categories and pair them with
    /// training questions.
    Categorize(CategorizeArgs),
    /// Combine candidate assignments and verification labels into final
    /// subsets.
    Finalize {
        #[arg(long)]
        assignments: PathBuf,
        /// Label JSONL (an export from the annotation service). Optional
        /// with --auto-accept.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Policy::Unanimous)]
        policy: Policy,
        /// Admit candidates that have no labels.
        #[arg(long)]
        auto_accept: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Question-pattern frequency analysis.
    Patterns(PatternArgs),
    /// Exact match, retrieval accuracy and binned analyses.
    Evaluate(EvaluateArgs),
    /// Build modified reader inputs.
    Ablate {
        #[command(subcommand)]
        kind: AblateKind,
    },
    /// Run the annotation service.
    Serve {
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory with the built annotation UI.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// JSON file overriding the bundled per-category guidance.
        #[arg(long)]
        guidance: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Unanimous,
    Majority,
    Manual,
}

#[derive(Clone, Copy, ValueEnum)]
enum Novelty {
    Entities,
    AnyAtom,
}

#[derive(Clone, Copy, ValueEnum)]
enum EntityKey {
    Most,
    Least,
}

#[derive(Args)]
struct CategorizeArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    train_atoms: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    test_atoms: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 5)]
    pairs_k: usize,
    #[arg(long, value_enum, default_value_t = Novelty::Entities)]
    novelty: Novelty,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PatternArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    train_atoms: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    test_atoms: PathBuf,
    #[arg(long)]
    subsets: Option<PathBuf>,
    #[arg(long, default_value = "0,1,5,20,100,500")]
    bins: BinEdges,
    /// Keep prepositions as words instead of mapping them to [prep].
    #[arg(long)]
    keep_prepositions: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    subsets: PathBuf,
    #[arg(long)]
    retrievals: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "20,100", allow_hyphen_values = true)]
    ks: Vec<i64>,
    /// Training questions; together with --train-atoms and --test-atoms
    /// enables the frequency and atom breakdowns.
    #[arg(long, requires_all = ["train_atoms", "test_atoms"])]
    train: Option<PathBuf>,
    #[arg(long)]
    train_atoms: Option<PathBuf>,
    #[arg(long)]
    test_atoms: Option<PathBuf>,
    #[arg(long, default_value = "0,1,5,20,100,500")]
    bins: BinEdges,
    #[arg(long, value_enum, default_value_t = EntityKey::Most)]
    entity_key: EntityKey,
    /// json or csv; inferred from --out when omitted.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateCommon {
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    retrievals: PathBuf,
    /// Restrict to one final subset.
    #[arg(long)]
    subsets: Option<PathBuf>,
    /// Subset used with --subsets.
    #[arg(long)]
    subset: Option<String>,
    /// Keep a random sample of this many eligible outputs.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write `id<TAB>reason` for every ineligible question.
    #[arg(long)]
    ineligible_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AblateKind {
    /// Replace the single entity of each question (and its passages) with a
    /// training entity absent from both.
    Swap {
        #[command(flatten)]
        common: AblateCommon,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        train_atoms: PathBuf,
        #[arg(long)]
        test_atoms: PathBuf,
    },
    /// Mask predicted-answer mentions until they are as frequent as gold
    /// mentions.
    Mask {
        #[command(flatten)]
        common: AblateCommon,
        #[arg(long)]
        predictions: PathBuf,
        /// Model whose predictions to use; needed when the file has several.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value = "")]
        mask_token: String,
    },
    /// Replace a fraction of each passage list with random pool passages.
    Randomize {
        #[command(flatten)]
        common: AblateCommon,
        /// JSONL pool of {"title", "text"} passages.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        keep_gold: bool,
    },
}

fn ids(questions: &[Question]) -> HashSet<String> {
    questions.iter().map(|q| q.id.clone()).collect()
}

fn warn_all(warnings: impl IntoIterator<Item = String>) {
    for w in warnings {
        log::warn!("{w}");
    }
}

fn load_atoms(path: &Path, questions: &[Question]) -> Result<Vec<AtomSet>> {
    let loaded = load_checked::<AtomSet>(path, &ids(questions)).with_context(|| format!("loading {}", path.display()))?;
    warn_all(loaded.warnings);
    Ok(loaded.records)
}

fn load<T: qagen::data::Record>(path: &Path) -> Result<Vec<T>> {
    load_jsonl(path).with_context(|| format!("loading {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Decompose { questions, annotations, out } => {
            let qs: Vec<Question> = load(&questions)?;
            let bundles = load_checked::<AnnotationBundle>(&annotations, &ids(&qs))?;
            warn_all(bundles.warnings);
            let (results, warnings) = decompose_all(&qs, &bundles.records, exec);
            warn_all(warnings);
            let atoms = results.into_iter().collect::<qagen::Result<Vec<_>>>()?;
            write_jsonl(&out, &atoms)?;
            log::info!("{} atom sets written to {}", atoms.len(), out.display());
        }
        Command::Categorize(a) => {
            let train: Vec<Question> = load(&a.train)?;
            let test: Vec<Question> = load(&a.test)?;
            let idx = build_train_index(&train, &load_atoms(&a.train_atoms, &train)?)?;
            let cfg = ClassifyConfig {
                tau: a.tau,
                novelty: match a.novelty {
                    Novelty::Entities => NoveltyRule::EntitiesOnly,
                    Novelty::AnyAtom => NoveltyRule::AnyAtom,
                },
            };
            let (assignments, warnings) = assign_all(&test, &load_atoms(&a.test_atoms, &test)?, &idx, &cfg, a.pairs_k, exec);
            warn_all(warnings);
            write_jsonl(&a.out, &assignments)?;
            let mut counts: HashMap<Category, usize> = HashMap::new();
            for x in &assignments {
                *counts.entry(x.category).or_default() += 1;
            }
            log::info!("{} assignments written to {}: {counts:?}", assignments.len(), a.out.display());
        }
        Command::Finalize {
            assignments,
            labels,
            policy,
            auto_accept,
            out,
        } => {
            let assignments: Vec<CategoryAssignment> = load(&assignments)?;
            let labels: Vec<VerificationLabel> = match labels {
                Some(p) => load(&p)?,
                None if auto_accept => Vec::new(),
                None => bail!("--labels is required unless --auto-accept is given"),
            };
            let cfg = FinalizeConfig {
                adjudication: match policy {
                    Policy::Unanimous => Adjudication::Unanimous,
                    Policy::Majority => Adjudication::Majority,
                    Policy::Manual => Adjudication::Manual,
                },
                auto_accept,
            };
            let subsets = qagen::categorize::finalize_subsets(&assignments, &labels, &cfg);
            warn_all(subsets.warnings.clone());
            write_json(&out, &subsets)?;
            log::info!(
                "overlap {}, comp_gen {}, novel_entity {}, uncategorized {} (coverage {:.3})",
                subsets.overlap.len(),
                subsets.comp_gen.len(),
                subsets.novel_entity.len(),
                subsets.uncategorized.len(),
                subsets.coverage
            );
        }
        Command::Patterns(a) => {
            let train: Vec<Question> = load(&a.train)?;
            let test: Vec<Question> = load(&a.test)?;
            let train_atoms = load_atoms(&a.train_atoms, &train)?;
            let test_atoms = load_atoms(&a.test_atoms, &test)?;
            let subsets = a.subsets.as_deref().map(Subsets::load).transpose()?;
            let inputs = PatternInputs {
                train: &train,
                train_atoms: &train_atoms,
                test: &test,
                test_atoms: &test_atoms,
                subsets: subsets.as_ref(),
            };
            let cfg = PatternConfig {
                unify_prepositions: !a.keep_prepositions,
            };
            let report = pattern_report(&inputs, a.bins, &cfg, exec);
            write_json(&a.out, &report)?;
        }
        Command::Evaluate(a) => run_evaluate(a, exec)?,
        Command::Ablate { kind } => run_ablate(kind, exec)?,
        Command::Serve {
            assignments,
            labels,
            port,
            host,
            static_dir,
            guidance,
        } => {
            let cfg = qagen_service::ServeConfig {
                assignments,
                labels,
                guidance,
                static_dir,
                addr: SocketAddr::new(host, port),
            };
            tokio::runtime::Runtime::new()?.block_on(qagen_service::serve(cfg))?;
        }
    }
    Ok(())
}

fn run_evaluate(a: EvaluateArgs, exec: Execution) -> Result<()> {
    let questions: Vec<Question> = load(&a.questions)?;
    let known = ids(&questions);
    let predictions: Vec<Prediction> = load(&a.predictions)?;
    let subsets = Subsets::load(&a.subsets)?;
    let retrievals = match &a.retrievals {
        Some(p) => {
            let l = load_checked::<RetrievalSet>(p, &known)?;
            warn_all(l.warnings);
            Some(l.records)
        }
        None => None,
    };
    let format = match &a.format {
        Some(f) => f.parse()?,
        None => ReportFormat::from_path(&a.out)?,
    };

    let mut index = None;
    let mut test_atoms = Vec::new();
    if let (Some(train), Some(train_atoms), Some(ta)) = (&a.train, &a.train_atoms, &a.test_atoms) {
        let train: Vec<Question> = load(train)?;
        let mut idx = build_train_index(&train, &load_atoms(train_atoms, &train)?)?;
        warn_all(fill_pattern_freq(&mut idx, &PatternConfig::default(), exec));
        index = Some(idx);
        test_atoms = load_atoms(ta, &questions)?;
    }
    let analysis = index.as_ref().map(|idx| Analysis {
        index: idx,
        test_atoms: &test_atoms,
        bins: a.bins.clone(),
        entity_rule: match a.entity_key {
            EntityKey::Most => EntityRule::MostFrequent,
            EntityKey::Least => EntityRule::LeastFrequent,
        },
        pattern: PatternConfig::default(),
    });
    let inputs = EvalInputs {
        questions: &questions,
        predictions: &predictions,
        subsets: &subsets,
        retrievals: retrievals.as_deref(),
        ks: &a.ks,
        analysis,
    };
    let report = evaluate(&inputs, exec)?;
    warn_all(report.warnings.clone());
    report.save(&a.out, format)?;
    for (model, m) in &report.models {
        let em: Vec<String> = m.em.iter().map(|(s, sc)| format!("{s} {:.2}", sc.value)).collect();
        log::info!("{model}: {}", em.join(", "));
    }
    Ok(())
}

fn subset_filter(common: &AblateCommon, default: Option<Category>) -> Result<Option<HashSet<String>>> {
    let Some(path) = &common.subsets else {
        return Ok(None);
    };
    let subsets = Subsets::load(path)?;
    let category = match (&common.subset, default) {
        (Some(s), _) => s.parse::<Category>()?,
        (None, Some(d)) => d,
        (None, None) => bail!("--subset is required with --subsets"),
    };
    Ok(Some(subsets.get(category).iter().cloned().collect()))
}

fn run_ablate(kind: AblateKind, exec: Execution) -> Result<()> {
    let common = match &kind {
        AblateKind::Swap { common, .. } | AblateKind::Mask { common, .. } | AblateKind::Randomize { common, .. } => common,
    };
    let default_subset = matches!(kind, AblateKind::Swap { .. }).then_some(Category::NovelEntity);
    let mut questions: Vec<Question> = load(&common.questions)?;
    if let Some(keep) = subset_filter(common, default_subset)? {
        questions.retain(|q| keep.contains(&q.id));
    }
    let loaded = load_checked::<RetrievalSet>(&common.retrievals, &ids(&questions))?;
    let retrievals = loaded.records;

    let mut atoms = Vec::new();
    let mut index = None;
    let mut predictions = HashMap::new();
    let mut pool = Vec::new();
    let transform = match &kind {
        AblateKind::Swap {
            train,
            train_atoms,
            test_atoms,
            ..
        } => {
            let train: Vec<Question> = load(train)?;
            index = Some(build_train_index(&train, &load_atoms(train_atoms, &train)?)?);
            atoms = load_atoms(test_atoms, &questions)?;
            Transform::Swap { seed: common.seed }
        }
        AblateKind::Mask {
            predictions: path,
            model,
            mask_token,
            ..
        } => {
            let preds: Vec<Prediction> = load(path)?;
            let models: HashSet<&str> = preds.iter().map(|p| p.model_name.as_str()).collect();
            let chosen = match model {
                Some(m) => m.clone(),
                None if models.len() == 1 => models.iter().next().map(|s| s.to_string()).unwrap_or_default(),
                None => bail!("predictions hold {} models; pick one with --model", models.len()),
            };
            for p in preds.into_iter().filter(|p| p.model_name == chosen) {
                predictions.insert(p.question_id, (p.model_name, p.answer));
            }
            Transform::Mask {
                config: MaskConfig { token: mask_token.clone() },
            }
        }
        AblateKind::Randomize {
            corpus,
            fraction,
            keep_gold,
            ..
        } => {
            pool = load::<PoolPassage>(corpus)?;
            Transform::Randomize {
                fraction: *fraction,
                keep_gold: *keep_gold,
                seed: common.seed,
            }
        }
    };
    let inputs = BatchInputs {
        questions: &questions,
        retrievals: &retrievals,
        atoms: &atoms,
        index: index.as_ref(),
        predictions: &predictions,
        pool: &pool,
    };
    let out = run_batch(&inputs, &transform, common.sample.map(|n| (n, common.seed)), exec);
    write_jsonl(&common.out, &out.records)?;
    if let Some(p) = &common.ineligible_out {
        let text: String = out.ineligible.iter().map(|(id, why)| format!("{id}\t{why}\n")).collect();
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    log::info!("{} records written to {}; {} ineligible", out.records.len(), common.out.display(), out.ineligible.len());
    Ok(())
}
