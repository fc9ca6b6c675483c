//! Command-line front end: `train`, `eval`, `query`, `inspect`, `synth`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::eval::{self, aggregate, build_easy_queries, evaluate_with, EvalError};
use crate::kg::{scan_relations, KgError, KnowledgeGraph, Schema, Split, TripleIndex, TypeLabels};
use crate::model::checkpoint::{self, CheckpointError};
use crate::model::{orthogonality_penalty, relation_discrepancy, SheafModel};
use crate::query::io::{read_queries, write_queries, Vocabulary};
use crate::query::{
    answer_graph, answer_query, naive_traversal_score, Query, QueryError, QueryGraph,
    QueryStructure,
};
use crate::rng::{self, Stream};
use crate::synth::{self, SynthConfig, SynthError};
use crate::train::{self, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unusable input files.
    #[error("{0}")]
    Usage(String),
    /// Failures after the inputs were accepted: numerics, integrity, output.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::Model(_) | QueryError::Sheaf(_) | QueryError::Budget { .. } => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Query(q) => q.into(),
            EvalError::Empty | EvalError::NoAnswers => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(
    name = "kgsheaf",
    version,
    about = "Sheaf embeddings for knowledge graphs"
)]
pub struct Cli {
    /// Worker threads for evaluation (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed and write checkpoints.
    Train(TrainArgs),
    /// Evaluate checkpoints on complex queries.
    Eval(EvalArgs),
    /// Rank entities for a single query.
    Query(QueryArgs),
    /// Summarize a checkpoint.
    Inspect(InspectArgs),
    /// Generate a planted-sheaf dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// `entity<TAB>type` labels; without it every entity has one type.
    #[arg(long)]
    pub types: Option<PathBuf>,
}

impl DataArgs {
    fn splits(&self) -> Vec<(&Path, Split)> {
        [
            (&self.train, Split::Train),
            (&self.valid, Split::Valid),
            (&self.test, Split::Test),
        ]
        .into_iter()
        .filter_map(|(p, s)| p.as_deref().map(|p| (p, s)))
        .collect()
    }

    fn check_exist(&self) -> Result<(), CliError> {
        for (p, _) in self.splits() {
            if !p.is_file() {
                return Err(CliError::Usage(format!(
                    "input file {} does not exist",
                    p.display()
                )));
            }
        }
        if let Some(p) = &self.types {
            if !p.is_file() {
                return Err(CliError::Usage(format!(
                    "type label file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Comma-separated seeds; defaults to the config's `seed`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory for checkpoints and the training report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Harmonic,
    Naive,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint manifest; repeat for several seeds.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Query file; repeatable. Without it easy queries are sampled from the
    /// data.
    #[arg(long)]
    pub queries: Vec<PathBuf>,
    /// Structures to sample when no query file is given.
    #[arg(long, default_value = "1p,2p,3p,2i,3i,ip,pi")]
    pub structures: String,
    /// Queries sampled per structure.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Seed for query sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Method::Harmonic)]
    pub method: Method,
    /// Flat report output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One of 1p, 2p, 3p, 2i, 3i, ip, pi.
    #[arg(
        long,
        conflicts_with = "template",
        required_unless_present = "template"
    )]
    pub structure: Option<String>,
    /// Custom template such as `a0>r>u1;u1>r>t`.
    #[arg(long)]
    pub template: Option<String>,
    /// Comma-separated anchor entity names.
    #[arg(long)]
    pub anchors: String,
    /// Comma-separated relation names (structure queries only).
    #[arg(long, default_value = "")]
    pub relations: String,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training triples for per-relation discrepancy.
    #[arg(long)]
    pub train: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub entities: usize,
    #[arg(long, default_value_t = 5)]
    pub relations: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write this many easy queries per structure.
    #[arg(long, default_value_t = 0)]
    pub queries: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    log::info!("resolved arguments: {:?}", cli.command);
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Query(a) => cmd_query(&a),
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let seeds = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("invalid seed `{s}`")))
        })
        .collect::<Result<Vec<u64>, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::Usage("empty seed list".into()));
    }
    Ok(seeds)
}

/// Schema for typed data: type names come from the labels and each
/// relation takes the types of the first triple it appears in.
fn typed_schema(
    paths: &[&Path],
    labels: &TypeLabels,
    entity_dim: usize,
    relation_dim: usize,
) -> Result<Schema, CliError> {
    let types = labels.types();
    let type_index: HashMap<&str, usize> = types
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let lookup = |e: &str| -> Result<usize, CliError> {
        let t = labels
            .get(e)
            .ok_or_else(|| KgError::MissingTypeLabel(e.to_string()))?;
        Ok(type_index[t])
    };
    let mut relations: Vec<(String, usize, usize, usize)> = Vec::new();
    let mut seen = HashMap::new();
    for path in paths {
        let file = fs::File::open(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let f: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if f.len() != 3 || seen.contains_key(f[1]) {
                continue;
            }
            seen.insert(f[1].to_string(), relations.len());
            relations.push((f[1].to_string(), lookup(f[0])?, lookup(f[2])?, relation_dim));
        }
    }
    Ok(Schema::new(
        types.into_iter().map(|t| (t, entity_dim)).collect(),
        relations,
    )?)
}

fn load_training_graph(data: &DataArgs, config: &RunConfig) -> Result<KnowledgeGraph, CliError> {
    let splits = data.splits();
    let paths: Vec<&Path> = splits.iter().map(|(p, _)| *p).collect();
    let mut kg = match &data.types {
        Some(types) => {
            let labels = TypeLabels::load(types)?;
            let schema = typed_schema(&paths, &labels, config.entity_dim, config.relation_dim)?;
            KnowledgeGraph::with_type_labels(schema, labels)
        }
        None => {
            let names = scan_relations(&paths)?;
            KnowledgeGraph::new(Schema::single_type(
                names,
                config.entity_dim,
                config.relation_dim,
            )?)
        }
    };
    for (p, s) in splits {
        let n = kg.load_split(p, s)?;
        log::info!("{}: {n} {s} triples", p.display());
    }
    Ok(kg)
}

/// Loads the data over a checkpoint's vocabulary so that entity indices
/// agree with the model.
fn load_graph_for(model: &SheafModel, data: &DataArgs) -> Result<KnowledgeGraph, CliError> {
    let mut kg = KnowledgeGraph::new(model.schema.clone());
    for (name, &ty) in model.entity_names.iter().zip(&model.entity_types) {
        kg.add_entity(name, ty)?;
    }
    for (p, s) in data.splits() {
        kg.load_split(p, s)?;
    }
    if kg.num_entities() != model.num_entities() {
        return Err(CliError::Runtime(format!(
            "the data names {} entities that the checkpoint does not contain",
            kg.num_entities() - model.num_entities()
        )));
    }
    Ok(kg)
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let train_path = a
        .data
        .train
        .as_ref()
        .ok_or_else(|| CliError::Usage("train requires --train".into()))?;
    let mut config = match &a.config {
        Some(p) if !p.is_file() => {
            return Err(CliError::Usage(format!(
                "config file {} does not exist",
                p.display()
            )))
        }
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    config.apply_overrides(a.overrides.iter().map(String::as_str))?;
    config.train.validate()?;
    config
        .model
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    a.data.check_exist()?;
    let seeds = match &a.seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![config.train.seed],
    };
    log::info!("resolved configuration:\n{}", config.to_text().trim_end());
    log::info!("training data: {}", train_path.display());

    let kg = load_training_graph(&a.data, &config)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.txt"), &config.to_text())?;
    let mut report = String::new();
    for &seed in &seeds {
        let mut run = config.clone();
        run.train.seed = seed;
        let mut model = SheafModel::for_graph(run.model.clone(), &kg, seed)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let result = train::train_with_hook(&kg, &run.train, &mut model, |stats, _| {
            log::debug!(
                "seed {seed} epoch {} loss {:.6}",
                stats.epoch,
                stats.mean_loss
            );
            std::ops::ControlFlow::Continue(())
        })?;
        let path = a.out.join(format!("model.seed{seed}.ckpt"));
        checkpoint::save(&model, &path)?;
        log::info!(
            "seed {seed}: final loss {:.6} in {:.1}s, wrote {}",
            result.epoch_loss.last().copied().unwrap_or(f64::NAN),
            result.wall_time.as_secs_f64(),
            path.display()
        );
        let _ = writeln!(
            report,
            "{seed}\tinitial_penalty\t{:.9}",
            result.initial_penalty
        );
        for (i, (l, p)) in result
            .epoch_loss
            .iter()
            .zip(&result.epoch_penalty)
            .enumerate()
        {
            let _ = writeln!(report, "{seed}\tepoch{}.loss\t{l:.9}", i + 1);
            let _ = writeln!(report, "{seed}\tepoch{}.penalty\t{p:.9}", i + 1);
        }
        for (r, d) in &result.discrepancy {
            let _ = writeln!(
                report,
                "{seed}\tdiscrepancy.{}\t{d:.9}",
                kg.schema().relation_name(*r)
            );
        }
        let _ = writeln!(
            report,
            "{seed}\twall_time_s\t{:.3}",
            result.wall_time.as_secs_f64()
        );
    }
    write_file(&a.out.join("train_report.txt"), &report)
}

fn parse_structures(text: &str) -> Result<Vec<QueryStructure>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<QueryStructure>().map_err(CliError::from))
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    a.data.check_exist()?;
    for q in &a.queries {
        if !q.is_file() {
            return Err(CliError::Usage(format!(
                "query file {} does not exist",
                q.display()
            )));
        }
    }
    let models = a
        .checkpoint
        .iter()
        .map(|p| checkpoint::load(p).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &models[0];
    for (m, p) in models.iter().zip(&a.checkpoint).skip(1) {
        if m.entity_names != first.entity_names
            || m.schema.relation_names() != first.schema.relation_names()
        {
            return Err(CliError::Runtime(format!(
                "{} has a different vocabulary from {}",
                p.display(),
                a.checkpoint[0].display()
            )));
        }
    }
    let kg = load_graph_for(first, &a.data)?;
    let queries: Vec<Query> = if a.queries.is_empty() {
        if kg.count_in(Split::Test) == 0 {
            return Err(CliError::Usage(
                "either --queries or test triples (--train and --test) are required".into(),
            ));
        }
        let index = TripleIndex::build(kg.triples());
        let mut rng = rng::stream(a.seed, Stream::Queries);
        let mut all = Vec::new();
        for s in parse_structures(&a.structures)? {
            let qs = build_easy_queries(&kg, &index, s, a.count, &mut rng);
            log::info!("sampled {} {s} queries", qs.len());
            all.extend(qs);
        }
        all
    } else {
        let vocab = Vocabulary::of_model(first);
        let mut all = Vec::new();
        for p in &a.queries {
            all.extend(read_queries(p, &vocab)?);
        }
        all
    };
    let mut runs = Vec::new();
    for model in &models {
        let report = match a.method {
            Method::Harmonic => eval::evaluate(model, &queries, &kg)?,
            Method::Naive => evaluate_with(&queries, &kg, |q| naive_traversal_score(q, model))?,
        };
        runs.push((model.seed, report));
    }
    let agg = aggregate(runs)?;
    print!("{}", agg.table());
    if let Some(out) = &a.out {
        write_file(out, &agg.to_flat_text())?;
    }
    Ok(())
}

fn split_names(text: &str) -> Vec<&str> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn cmd_query(a: &QueryArgs) -> Result<(), CliError> {
    let model = checkpoint::load(&a.checkpoint)?;
    let vocab = Vocabulary::of_model(&model);
    let anchors = split_names(&a.anchors)
        .into_iter()
        .map(|n| vocab.entity(n))
        .collect::<Result<Vec<_>, _>>()?;
    let ranking = match (&a.template, &a.structure) {
        (Some(t), _) => answer_graph(
            &QueryGraph::from_template(t, &model.schema)?,
            &anchors,
            &model,
        )?,
        (None, Some(s)) => {
            let relations = split_names(&a.relations)
                .into_iter()
                .map(|n| vocab.relation(n))
                .collect::<Result<Vec<_>, _>>()?;
            let q = Query::new(s.parse()?, anchors, relations, Default::default())?;
            answer_query(&q, &model)?
        }
        (None, None) => {
            return Err(CliError::Usage(
                "--structure or --template is required".into(),
            ))
        }
    };
    for (i, &(e, v)) in ranking.top(a.top_k).iter().enumerate() {
        println!("{}\t{}\t{v:.6}", i + 1, vocab.entity_name(e));
    }
    Ok(())
}

fn cmd_inspect(a: &InspectArgs) -> Result<(), CliError> {
    let model = checkpoint::load(&a.checkpoint)?;
    let s = &model.schema;
    println!("variant\t{}", model.config.variant);
    println!("sections\t{}", model.config.sections);
    println!("alpha\t{}", model.config.alpha);
    println!("seed\t{}", model.seed);
    println!("entities\t{}", model.num_entities());
    for t in 0..s.num_entity_types() {
        println!("type\t{}\tdim={}", s.entity_type_name(t), s.vertex_dim(t));
    }
    println!(
        "orthogonality_penalty\t{:.6}",
        orthogonality_penalty(&model.sections)
    );
    let discrepancy = match &a.train {
        Some(p) => {
            let data = DataArgs {
                train: Some(p.clone()),
                valid: None,
                test: None,
                types: None,
            };
            data.check_exist()?;
            let kg = load_graph_for(&model, &data)?;
            relation_discrepancy(&model, kg.triples_in(Split::Train))
                .map_err(|e| CliError::Runtime(e.to_string()))?
        }
        None => Default::default(),
    };
    for (r, maps) in model.sheaf.relations.iter().enumerate() {
        let mut line = format!(
            "relation\t{}\t{} -> {}\tdim={}\t{}\t|head|={:.4}\t|tail|={:.4}",
            s.relation_name(r),
            s.entity_type_name(s.head_type(r)),
            s.entity_type_name(s.tail_type(r)),
            s.edge_dim(r),
            maps.constraint,
            maps.head.norm(),
            maps.tail.norm()
        );
        if let Some(t) = &maps.translation {
            let _ = write!(line, "\t|translation|={:.4}", t.norm());
        }
        if let Some(d) = discrepancy.get(&r) {
            let _ = write!(line, "\tdiscrepancy={d:.6}");
        }
        println!("{line}");
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig::sized(a.entities, a.relations, a.dim, a.noise, a.seed);
    log::info!("synth configuration: {config:?}");
    let planted = synth::generate(&config)?;
    create_dir(&a.out)?;
    let kg = &planted.kg;
    for (name, split) in [
        ("train.txt", Split::Train),
        ("valid.txt", Split::Valid),
        ("test.txt", Split::Test),
    ] {
        kg.write_split(&a.out.join(name), split)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    checkpoint::save(&planted.truth, &a.out.join("truth.ckpt"))?;
    if a.queries > 0 {
        let index = TripleIndex::build(kg.triples());
        let mut rng = rng::stream(a.seed, Stream::Queries);
        let vocab = Vocabulary::of_model(&planted.truth);
        for s in QueryStructure::ALL {
            let qs = build_easy_queries(kg, &index, s, a.queries, &mut rng);
            write_queries(&a.out.join(format!("queries_{s}.txt")), &qs, &vocab)?;
        }
    }
    println!(
        "{} entities, {} relations, {} train / {} valid / {} test triples",
        kg.num_entities(),
        kg.num_relations(),
        kg.count_in(Split::Train),
        kg.count_in(Split::Valid),
        kg.count_in(Split::Test)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_and_structures() {
        assert_eq!(parse_seeds("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(matches!(parse_seeds("1,x"), Err(CliError::Usage(_))));
        assert!(parse_seeds("").is_err());
        assert_eq!(
            parse_structures("1p,pi").unwrap(),
            vec![QueryStructure::P1, QueryStructure::Pi]
        );
        assert_eq!(parse_structures("2u").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn typed_schema_from_labels() {
        let dir = tempfile::tempdir().unwrap();
        let triples = dir.path().join("t.txt");
        fs::write(&triples, "ann\tchild_of\tbob\nann\thas_gender\tfemale\n").unwrap();
        let mut labels = TypeLabels::default();
        labels.insert("ann", "person");
        labels.insert("bob", "person");
        labels.insert("female", "gender");
        let schema = typed_schema(&[&triples], &labels, 4, 3).unwrap();
        assert_eq!(schema.num_entity_types(), 2);
        let r = schema.relation_index("has_gender").unwrap();
        assert_eq!(schema.entity_type_name(schema.tail_type(r)), "gender");
        assert_eq!(schema.edge_dim(r), 3);
    }

    #[test]
    fn error_classes() {
        assert_eq!(
            CliError::from(QueryError::UnknownStructure("x".into())).exit_code(),
            2
        );
        assert_eq!(
            CliError::from(TrainError::NonFinite {
                epoch: 1,
                batch: 0,
                relation: 0,
                detail: String::new()
            })
            .exit_code(),
            1
        );
    }
}
