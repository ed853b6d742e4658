//! Command-line front end.
//!
//! Settings are resolved per key as: command-line flag, then `AMRSAT_*`
//! environment variable, then `--config` file, then built-in default.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use amrsat::eval::{bleu, bucket_report, length_ratio, parse_edges, tokenize, BucketMode};
use amrsat::model::{
    generate, parse_bool, parse_config_text, Batch, GenerateOptions, Model, ModelConfig, Strategy,
};
use amrsat::numerics::Checkpoint;
use amrsat::penman::{read_corpus, serialize, AmrGraph};
use amrsat::pipeline::{
    extract_paths, join_subwords, preprocess, read_records, write_records, Artifacts, BpeModel,
    PreprocessOptions, Record, Vocabulary, FEATURE_UNK,
};
use amrsat::relation_repr::RelationMethod;
use amrsat::training::{TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "amrsat", version, about = "Structure-aware AMR-to-text generation")]
struct Cli {
    /// File of key=value settings.
    #[arg(long, global = true, env = "AMRSAT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "AMRSAT_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "AMRSAT_RELATION_METHOD")]
    relation_method: Option<String>,
    #[arg(long, global = true, env = "AMRSAT_STRUCTURE_AWARE")]
    structure_aware: Option<String>,
    #[arg(long, global = true, env = "AMRSAT_MAX_PATH_LEN")]
    max_path_len: Option<usize>,
    #[arg(long, global = true, env = "AMRSAT_BPE_MERGES")]
    bpe_merges: Option<usize>,
    #[arg(long, global = true, env = "AMRSAT_BEAM")]
    beam: Option<usize>,
    /// Bucket specs such as `reentrancy:0,2,5;size:10,20,30,40`.
    #[arg(long, global = true, env = "AMRSAT_BUCKETS")]
    buckets: Option<String>,
    /// Any other setting as key=value; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn BPE and vocabularies and write model-ready records.
    Preprocess(PreprocessArgs),
    /// Train a model on preprocessed records.
    Train(TrainArgs),
    /// Decode sentences for preprocessed records.
    Generate(GenerateArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Print the structural path between two concepts of a graph.
    InspectPaths(InspectArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Apply the BPE model and vocabularies of an earlier run.
    #[arg(long)]
    reuse: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Structural,
    Baseline,
}

impl Split {
    fn file(self) -> &'static str {
        match self {
            Split::Structural => "structural.jsonl",
            Split::Baseline => "baseline.jsonl",
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Output directory of `preprocess`.
    #[arg(long)]
    data: PathBuf,
    /// Defaults to structural for structure-aware models.
    #[arg(long, value_enum)]
    split: Option<Split>,
    /// Preprocessed validation directory; the training data otherwise.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: u64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    split: Option<Split>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// AMR corpus aligned with the hypotheses, for bucketed reports.
    #[arg(long)]
    graphs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Also write the bucket reports as CSV here.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Concept label or variable of the first node.
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    /// Which graph of the file to use (0-based).
    #[arg(long, default_value_t = 0)]
    entry: usize,
}

/// Every setting, resolved from defaults, config file and flags.
#[derive(Debug, Clone)]
struct Settings {
    model: ModelConfig,
    train: TrainConfig,
    prep: PreprocessOptions,
    beam: usize,
    max_gen_len: usize,
    buckets: Vec<(BucketMode, Vec<usize>)>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            prep: PreprocessOptions::default(),
            beam: 1,
            max_gen_len: 100,
            buckets: vec![
                (BucketMode::Reentrancy, BucketMode::Reentrancy.default_edges()),
                (BucketMode::Size, BucketMode::Size.default_edges()),
            ],
        }
    }
}

fn parse_buckets(spec: &str) -> Result<Vec<(BucketMode, Vec<usize>)>> {
    spec.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|part| {
            let (name, edges) = match part.split_once(':') {
                Some((n, e)) => (n.trim(), Some(e)),
                None => (part.trim(), None),
            };
            let mode = match name {
                "reentrancy" => BucketMode::Reentrancy,
                "size" => BucketMode::Size,
                other => bail!("unknown bucket mode {other:?}"),
            };
            let edges = match edges {
                Some(e) => parse_edges(e)?,
                None => mode.default_edges(),
            };
            Ok((mode, edges))
        })
        .collect()
}

impl Settings {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? || self.train.set(key, value)? {
            if key == "max_path_len" {
                self.prep.max_path_len = self.model.max_path_len;
            }
            return Ok(());
        }
        let num = |v: &str| -> Result<usize> {
            v.trim().parse().with_context(|| format!("invalid value {v:?} for {key}"))
        };
        match key {
            "bpe_merges" => self.prep.bpe_merges = num(value)?,
            "max_vocab_size" => {
                self.prep.vocab_size = match value.trim() {
                    "none" | "" => None,
                    v => Some(num(v)?),
                }
            }
            "feature_vocab_size" => self.prep.feature_vocab_size = num(value)?,
            "mask_indirect" => self.prep.mask_indirect = parse_bool(key, value)?,
            "remove_wiki" => self.prep.simplify.remove_wiki = parse_bool(key, value)?,
            "remove_sense_tags" => self.prep.simplify.remove_sense_tags = parse_bool(key, value)?,
            "lowercase" => self.prep.lowercase = parse_bool(key, value)?,
            "beam" => self.beam = num(value)?,
            "max_gen_len" => self.max_gen_len = num(value)?,
            "buckets" => self.buckets = parse_buckets(value)?,
            _ => bail!("unknown setting {key:?}"),
        }
        Ok(())
    }

    fn resolve(cli: &Cli) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = &cli.config {
            let text = read(path)?;
            for (k, v) in parse_config_text(&text).with_context(|| format!("{}", path.display()))? {
                s.set(&k, &v).with_context(|| format!("{}", path.display()))?;
            }
        }
        let flags: [(&str, Option<String>); 7] = [
            ("seed", cli.seed.map(|v| v.to_string())),
            ("relation_method", cli.relation_method.clone()),
            ("structure_aware", cli.structure_aware.clone()),
            ("max_path_len", cli.max_path_len.map(|v| v.to_string())),
            ("bpe_merges", cli.bpe_merges.map(|v| v.to_string())),
            ("beam", cli.beam.map(|v| v.to_string())),
            ("buckets", cli.buckets.clone()),
        ];
        for kv in &cli.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects key=value, got {kv:?}"))?;
            s.set(k.trim(), v.trim())?;
        }
        for (k, v) in flags {
            if let Some(v) = v {
                s.set(k, &v)?;
            }
        }
        Ok(s)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    let settings = Settings::resolve(&cli)?;
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a, &settings),
        Command::Train(a) => cmd_train(a, &settings),
        Command::Generate(a) => cmd_generate(a, &settings),
        Command::Evaluate(a) => cmd_evaluate(a, &settings),
        Command::InspectPaths(a) => cmd_inspect_paths(a, &settings),
    }
}

const BPE_FILE: &str = "bpe.codes";
const VOCAB_FILE: &str = "vocab.txt";
const LABELS_FILE: &str = "labels.txt";
const FEATURES_FILE: &str = "features.txt";

fn load_artifacts(dir: &Path) -> Result<Artifacts> {
    Ok(Artifacts {
        bpe: BpeModel::from_text(&read(&dir.join(BPE_FILE))?)?,
        vocab: Vocabulary::from_text(&read(&dir.join(VOCAB_FILE))?)?,
        labels: Vocabulary::from_text(&read(&dir.join(LABELS_FILE))?)?,
        features: Vocabulary::from_text_with_unk(&read(&dir.join(FEATURES_FILE))?, FEATURE_UNK)?,
    })
}

fn graphs_text(graphs: &[AmrGraph], refs: &[String]) -> Result<String> {
    let mut out = String::new();
    for (g, r) in graphs.iter().zip(refs) {
        out.push_str(&format!("# ::snt {r}\n{}\n\n", serialize(g)?));
    }
    Ok(out)
}

fn preprocess_conf(p: &PreprocessOptions) -> String {
    let vocab = p.vocab_size.map_or("none".to_string(), |v| v.to_string());
    format!(
        "bpe_merges={}\nmax_path_len={}\nmax_vocab_size={vocab}\nfeature_vocab_size={}\n\
         mask_indirect={}\nremove_wiki={}\nremove_sense_tags={}\nlowercase={}\n",
        p.bpe_merges,
        p.max_path_len,
        p.feature_vocab_size,
        p.mask_indirect,
        p.simplify.remove_wiki,
        p.simplify.remove_sense_tags,
        p.lowercase
    )
}

fn cmd_preprocess(a: &PreprocessArgs, s: &Settings) -> Result<()> {
    let text = read(&a.input)?;
    let entries = read_corpus(&text).with_context(|| format!("{}", a.input.display()))?;
    let reuse = a.reuse.as_deref().map(load_artifacts).transpose()?;
    let p = preprocess(&entries, &s.prep, reuse)
        .with_context(|| format!("preprocessing {}", a.input.display()))?;

    fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let d = &a.out_dir;
    write(&d.join(BPE_FILE), &p.artifacts.bpe.to_text())?;
    write(&d.join(VOCAB_FILE), &p.artifacts.vocab.to_text())?;
    write(&d.join(LABELS_FILE), &p.artifacts.labels.to_text())?;
    write(&d.join(FEATURES_FILE), &p.artifacts.features.to_text())?;
    write(&d.join(Split::Baseline.file()), &write_records(&p.baseline))?;
    write(&d.join(Split::Structural.file()), &write_records(&p.structural))?;
    let mut refs = p.references.join("\n");
    refs.push('\n');
    write(&d.join("references.txt"), &refs)?;
    write(&d.join("graphs.amr"), &graphs_text(&p.graphs, &p.references)?)?;
    write(&d.join("preprocess.conf"), &preprocess_conf(&s.prep))?;
    eprintln!(
        "{} examples, vocabulary {}, labels {}, features {}",
        p.structural.len(),
        p.artifacts.vocab.len(),
        p.artifacts.labels.len(),
        p.artifacts.features.len()
    );
    Ok(())
}

fn load_records(dir: &Path, split: Split) -> Result<Vec<Record>> {
    let path = dir.join(split.file());
    let records = read_records(&read(&path)?).with_context(|| format!("{}", path.display()))?;
    ensure!(!records.is_empty(), "{} holds no records", path.display());
    Ok(records)
}

fn choose_split(requested: Option<Split>, structure_aware: bool) -> Result<Split> {
    let split = requested.unwrap_or(if structure_aware {
        Split::Structural
    } else {
        Split::Baseline
    });
    match (split, structure_aware) {
        (Split::Baseline, true) => bail!("structure-aware models need the structural split"),
        (Split::Structural, false) => {
            eprintln!("warning: structural records with structure_aware=false; paths are ignored")
        }
        _ => {}
    }
    Ok(split)
}

fn path_len(records: &[Record]) -> Option<usize> {
    records.iter().find(|r| !r.paths.is_empty()).map(|r| r.paths.len() / (r.src.len() * r.src.len()))
}

fn attach_features(model: &mut Model, artifacts: &Artifacts) {
    if let Some(enc) = model.relation_encoder_mut() {
        if enc.method() == RelationMethod::Feature {
            *enc = enc.clone().with_features(&artifacts.features, &artifacts.labels);
        }
    }
}

fn cmd_train(a: &TrainArgs, s: &Settings) -> Result<()> {
    let artifacts = load_artifacts(&a.data)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("{}", path.display()))?;
            let mut t = Trainer::from_checkpoint(&ck)?;
            t.config.max_steps = s.train.max_steps;
            t
        }
        None => {
            let mut mc = s.model.clone();
            mc.vocab_size = artifacts.vocab.len();
            mc.num_labels = artifacts.labels.len();
            mc.num_features = artifacts.features.len();
            Trainer::new(Model::new(mc, s.train.seed)?, s.train.clone())?
        }
    };
    attach_features(&mut trainer.model, &artifacts);
    let split = choose_split(a.split, trainer.model.config().structure_aware)?;
    let train = load_records(&a.data, split)?;
    let valid = match &a.valid {
        Some(dir) => load_records(dir, split)?,
        None => train.clone(),
    };
    if split == Split::Structural {
        let l = path_len(&train).context("structural records without paths")?;
        ensure!(
            l == trainer.model.config().max_path_len || !trainer.model.config().structure_aware,
            "records carry paths of length {l} but the model expects {}",
            trainer.model.config().max_path_len
        );
    }

    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let log_path = a.out_dir.join("train.log.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("cannot open {}", log_path.display()))?;
    let mut log_err = None;
    let every = a.checkpoint_every.max(1);
    loop {
        let until = trainer.step() + every;
        let summary = trainer.run(&train, &valid, Some(until), &mut |r| {
            let line = serde_json::to_string(r).expect("log record serializes");
            if let Err(e) = writeln!(log, "{line}") {
                log_err.get_or_insert(e);
            }
            eprintln!("{line}");
        })?;
        if let Some(e) = log_err.take() {
            return Err(e).context("writing the training log");
        }
        trainer
            .to_checkpoint()
            .save(&a.out_dir.join("last.ckpt"))
            .context("writing last.ckpt")?;
        if summary.reached_target || summary.steps >= trainer.config.max_steps {
            break;
        }
    }
    trainer
        .best_model()
        .to_checkpoint()
        .save(&a.out_dir.join("best.ckpt"))
        .context("writing best.ckpt")?;
    eprintln!("trained {} steps", trainer.step());
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, s: &Settings) -> Result<()> {
    let artifacts = load_artifacts(&a.data)?;
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("{}", a.checkpoint.display()))?;
    let mut model = Model::from_checkpoint(&ck)?;
    attach_features(&mut model, &artifacts);
    let split = choose_split(a.split, model.config().structure_aware)?;
    let records = load_records(&a.data, split)?;
    let strategy = match s.beam {
        0 => bail!("beam width must be at least 1"),
        1 => Strategy::Greedy,
        k => Strategy::Beam(k),
    };
    let opts = GenerateOptions {
        strategy,
        max_len: s.max_gen_len,
    };
    let mut out = String::new();
    for chunk in records.chunks(16) {
        let batch = Batch::from_records(chunk)?;
        for ids in generate(&model, &batch, model.default_structure(), opts)? {
            let pieces: Vec<&str> = ids.iter().map(|&i| artifacts.vocab.token(i)).collect();
            out.push_str(&join_subwords(&pieces).join(" "));
            out.push('\n');
        }
    }
    match &a.out {
        Some(p) => write(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn lines(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read(path)?.lines().map(tokenize).collect())
}

fn cmd_evaluate(a: &EvaluateArgs, s: &Settings) -> Result<()> {
    let hyps = lines(&a.hyp)?;
    let refs = lines(&a.reference)?;
    let score = bleu(&hyps, &refs)?;
    let ratio = length_ratio(&hyps, &refs)?;
    let mut reports = Vec::new();
    if let Some(path) = &a.graphs {
        let graphs: Vec<AmrGraph> = read_corpus(&read(path)?)
            .with_context(|| format!("{}", path.display()))?
            .into_iter()
            .map(|e| e.graph)
            .collect();
        for (mode, edges) in &s.buckets {
            reports.push(bucket_report(&graphs, &hyps, &refs, *mode, edges)?);
        }
    }
    let mut out = String::new();
    match a.format {
        Format::Table => {
            out.push_str(&format!("BLEU {score:.2}\nlength ratio {ratio:.3}\n"));
            for r in &reports {
                out.push('\n');
                out.push_str(&r.to_table());
            }
        }
        Format::Jsonl => {
            let corpus = serde_json::json!({ "bleu": score, "length_ratio": ratio, "count": hyps.len() });
            out.push_str(&format!("{corpus}\n"));
            for r in &reports {
                out.push_str(&r.to_jsonl());
            }
        }
        Format::Csv => {
            out.push_str(&format!("mode,bucket,count,bleu,length_ratio\ncorpus,all,{},{score},{ratio}\n", hyps.len()));
            for r in &reports {
                out.extend(r.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
            }
        }
    }
    print!("{out}");
    if let Some(p) = &a.csv_out {
        let mut csv = String::from("mode,bucket,count,bleu,length_ratio\n");
        for r in &reports {
            csv.extend(r.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
        }
        write(p, &csv)?;
    }
    Ok(())
}

fn find_node(g: &AmrGraph, key: &str) -> Result<usize> {
    g.node_index(key)
        .or_else(|| g.find_concept(key))
        .or_else(|| {
            g.nodes()
                .iter()
                .position(|n| amrsat::penman::strip_sense_tag(&n.concept) == key)
        })
        .with_context(|| format!("no node {key:?} in the graph"))
}

fn cmd_inspect_paths(a: &InspectArgs, s: &Settings) -> Result<()> {
    let entries = read_corpus(&read(&a.input)?).with_context(|| format!("{}", a.input.display()))?;
    let entry = entries
        .get(a.entry)
        .with_context(|| format!("{} holds {} graphs", a.input.display(), entries.len()))?;
    let g = &entry.graph;
    let (i, j) = (find_node(g, &a.from)?, find_node(g, &a.to)?);
    let order: Vec<usize> = if i == j { vec![i] } else { vec![i, j] };
    let pm = extract_paths(g, &order, s.model.max_path_len)?;
    let col = if i == j { 0 } else { 1 };
    println!("{}", pm.entry_string(0, col));
    Ok(())
}

