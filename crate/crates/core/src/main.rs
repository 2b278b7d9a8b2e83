use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use waffle_core::concepts::{derive_concept, HttpLlmClient, LlmEndpointConfig};
use waffle_core::corpus::{load_category_set, load_descriptor_set, mean_descriptor_count, DatasetManifest};
use waffle_core::embedstore::{read_embeddings, write_embeddings, CachedTextEmbeddings};
use waffle_core::eval::{flip_report, ResultsDocument, SeedAggregate};
use waffle_core::pipeline::{required_prompts, run, Dataset, Method, RunConfig, RunInputs, SeedRun, VmfSettings};
use waffle_core::wafflegen::{
    gen_waffle_set, interchange, scramble, subsample_random, subsample_same, WaffleConfig, WaffleMode, Wordlist,
};
use waffle_core::{Error, Result};

#[derive(Parser)]
#[command(name = "waffle", version, about = "Zero-shot classification over precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated or reshuffled descriptor file.
    Gen(GenArgs),
    /// Run one method for a single seed.
    Classify(ClassifyArgs),
    /// Run methods over all seeds and print the results table.
    Eval(EvalArgs),
    /// Compare per-sample correctness of two methods.
    Flips(FlipsArgs),
    /// Derive (or echo) the dataset-level concept for a class list.
    Concept(ConceptArgs),
    /// Print every prompt a run will need embedded, one per line.
    Prompts(PromptsArgs),
    /// Validate embedding files.
    FmtCheck(FmtCheckArgs),
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

/// `0,1,2`, `0..7`, or a mix such as `0..3,10`.
fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|e| format!("{part}: {e}"))?;
            let b: u64 = b.trim().parse().map_err(|e| format!("{part}: {e}"))?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|e| format!("{part}: {e}"))?);
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(Seeds(out))
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset_manifest: Option<PathBuf>,
    #[arg(long)]
    class_list: Option<PathBuf>,
    #[arg(long)]
    descriptors: Option<PathBuf>,
    #[arg(long)]
    concept: Option<String>,
    #[arg(long)]
    pair_count: Option<usize>,
    #[arg(long, value_enum)]
    waffle_mode: Option<WaffleMode>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    multiplier: Option<f64>,
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long)]
    text_cache: Option<PathBuf>,
    #[arg(long)]
    image_embeddings: Option<PathBuf>,
    /// Opaque label stored with results.
    #[arg(long)]
    backbone: Option<String>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    wordlist: Option<PathBuf>,
    #[arg(long)]
    ensemble_size: Option<usize>,
}

impl RunArgs {
    fn config(&self, method: Option<Method>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None if method.is_none() => return Err(Error::invalid("--method or --config is required")),
            None => RunConfig::default(),
        };
        if let Some(m) = method {
            cfg.method = m;
        }
        set(&mut cfg.dataset_manifest, &self.dataset_manifest);
        set(&mut cfg.class_list, &self.class_list);
        set(&mut cfg.descriptor_path, &self.descriptors);
        set(&mut cfg.concept, &self.concept);
        set(&mut cfg.multiplier, &self.multiplier);
        set(&mut cfg.text_cache, &self.text_cache);
        set(&mut cfg.image_embeddings, &self.image_embeddings);
        set(&mut cfg.template_path, &self.templates);
        set(&mut cfg.waffle.wordlist, &self.wordlist);
        if let Some(n) = self.pair_count {
            cfg.waffle.pair_count = n;
        }
        if let Some(mode) = self.waffle_mode {
            cfg.waffle.mode = mode;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.0.clone();
        }
        if let Some(b) = &self.backbone {
            cfg.backbone_tag = b.clone();
        }
        if let Some(k) = self.ensemble_size {
            cfg.ensemble_size = k;
        }
        match (self.kappa, cfg.vmf.as_mut()) {
            (Some(kappa), Some(v)) => v.kappa = kappa,
            (Some(kappa), None) => {
                cfg.vmf = Some(VmfSettings {
                    kappa,
                    sample_count: 30,
                })
            }
            (None, None) if self.samples.is_some() => return Err(Error::invalid("--samples needs --kappa")),
            _ => {}
        }
        if let (Some(n), Some(v)) = (self.samples, cfg.vmf.as_mut()) {
            v.sample_count = n;
        }
        Ok(cfg)
    }
}

fn set<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[command(flatten)]
    run: RunArgs,
    /// Seed for this run (default: the first configured seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Results JSON to create or update.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the images x classes score matrix as an embedding file.
    #[arg(long)]
    scores_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// One or more methods.
    #[arg(long, value_enum, num_args = 1..)]
    method: Vec<Method>,
    #[command(flatten)]
    run: RunArgs,
    /// Results JSON to create or update; the table covers its whole content.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FlipsArgs {
    #[arg(long, value_enum)]
    base_method: Method,
    #[arg(long, value_enum)]
    method: Method,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConceptArgs {
    #[arg(long)]
    class_list: PathBuf,
    /// JSON endpoint configuration.
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Use this concept instead of querying the LLM.
    #[arg(long)]
    concept: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PromptsArgs {
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[command(flatten)]
    run: RunArgs,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FmtCheckArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Waffle,
    Scrambled,
    Interchanged,
    Random,
    Same,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long)]
    class_list: PathBuf,
    /// Source descriptor file (all kinds except waffle).
    #[arg(long)]
    descriptors: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    pair_count: usize,
    #[arg(long, value_enum, default_value = "joint")]
    waffle_mode: WaffleMode,
    #[arg(long)]
    wordlist: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    multiplier: f64,
    #[arg(long)]
    out: PathBuf,
}

struct Loaded {
    inputs: RunInputs,
    dataset: Dataset,
    cache: CachedTextEmbeddings,
}

fn required<'a>(slot: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    slot.as_deref()
        .ok_or_else(|| Error::invalid(format!("{flag} is required")))
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let inputs = RunInputs::load(cfg)?;
    let manifest = DatasetManifest::load(required(&cfg.dataset_manifest, "--dataset-manifest")?)?;
    let dataset = Dataset::load(&manifest, cfg.image_embeddings.as_deref(), &inputs.categories)?;
    let cache = CachedTextEmbeddings::load(required(&cfg.text_cache, "--text-cache")?)?;
    Ok(Loaded { inputs, dataset, cache })
}

fn run_all(cfg: &RunConfig, loaded: &Loaded) -> Result<Vec<SeedRun>> {
    run(cfg, &loaded.inputs, &loaded.dataset, &loaded.cache)
}

fn save_results(path: &Option<PathBuf>, doc_update: impl FnOnce(&mut ResultsDocument)) -> Result<Option<ResultsDocument>> {
    let Some(path) = path else { return Ok(None) };
    let mut doc = if path.exists() {
        ResultsDocument::load(path)?
    } else {
        ResultsDocument::default()
    };
    doc_update(&mut doc);
    doc.save(path)?;
    Ok(Some(doc))
}

fn classify(args: ClassifyArgs) -> Result<()> {
    let mut cfg = args.run.config(args.method)?;
    cfg.seeds = vec![args.seed.unwrap_or(cfg.seeds.first().copied().unwrap_or(0))];
    let loaded = load(&cfg)?;
    let seed_run = run_all(&cfg, &loaded)?.remove(0);
    let r = &seed_run.report;
    println!(
        "{} {} seed {}: {:.2} ({}/{})",
        r.dataset, cfg.method, seed_run.seed, r.accuracy, r.correct, r.total
    );
    if let Some(path) = &args.scores_out {
        write_embeddings(path, &seed_run.scores.to_embedding_matrix(loaded.dataset.images.keys())?)?;
    }
    save_results(&args.out, |doc| doc.merge([seed_run.record(cfg.method, &cfg.backbone_tag)]))?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let methods = if args.method.is_empty() {
        vec![args.run.config(None)?.method]
    } else {
        args.method.clone()
    };
    let mut records = Vec::new();
    let mut shared: Option<(Dataset, CachedTextEmbeddings)> = None;
    for method in methods {
        let cfg = args.run.config(Some(method))?;
        let inputs = RunInputs::load(&cfg)?;
        let (dataset, cache) = match shared.take() {
            Some(s) => s,
            None => {
                let l = load(&cfg)?;
                (l.dataset, l.cache)
            }
        };
        let runs = run(&cfg, &inputs, &dataset, &cache)?;
        let agg = SeedAggregate::from_values(runs.iter().map(|r| (r.seed, r.report.accuracy)).collect())?;
        println!("{} {}: {}", dataset.name, method, agg.display());
        records.extend(runs.iter().map(|r| r.record(method, &cfg.backbone_tag)));
        shared = Some((dataset, cache));
    }
    let doc = match save_results(&args.out, |doc| doc.merge(records.clone()))? {
        Some(doc) => doc,
        None => {
            let mut doc = ResultsDocument::default();
            doc.merge(records);
            doc
        }
    };
    println!();
    print!("{}", doc.render_table());
    Ok(())
}

fn flips(args: FlipsArgs) -> Result<()> {
    let base_cfg = args.run.config(Some(args.base_method))?;
    let new_cfg = args.run.config(Some(args.method))?;
    let loaded = load(&base_cfg)?;
    let new_inputs = RunInputs::load(&new_cfg)?;
    let base = run_all(&base_cfg, &loaded)?;
    let new = run(&new_cfg, &new_inputs, &loaded.dataset, &loaded.cache)?;
    let mut reports = Vec::new();
    for (b, n) in base.iter().zip(&new) {
        let r = flip_report(&b.predictions, &n.predictions, &loaded.dataset.labels)?;
        println!("seed {}: positive {:.2} negative {:.2}", b.seed, r.positive_pct, r.negative_pct);
        reports.push((b.seed, r));
    }
    let count = reports.len() as f64;
    let pos = reports.iter().map(|(_, r)| r.positive_pct).sum::<f64>() / count;
    let neg = reports.iter().map(|(_, r)| r.negative_pct).sum::<f64>() / count;
    println!(
        "{} -> {}: positive {pos:.2} negative {neg:.2}",
        args.base_method, args.method
    );
    if let Some(path) = &args.out {
        let json = serde_json::json!({
            "base_method": args.base_method,
            "method": args.method,
            "per_seed": reports.iter().map(|(s, r)| serde_json::json!({"seed": s, "report": r})).collect::<Vec<_>>(),
            "mean_positive_pct": pos,
            "mean_negative_pct": neg,
        });
        write_text(path, &(serde_json::to_string_pretty(&json).expect("serializable") + "\n"))?;
    }
    Ok(())
}

fn concept(args: ConceptArgs) -> Result<()> {
    let categories = load_category_set(&args.class_list)?;
    let result = match (&args.concept, &args.llm_config) {
        (Some(c), _) => {
            println!("{c}");
            serde_json::json!({"concept": c, "raw_responses": [], "filtered": false})
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let cfg: LlmEndpointConfig = serde_json::from_str(&text).map_err(|e| Error::Malformed {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let mut client = HttpLlmClient::new(cfg.clone())?;
            let result = derive_concept(&categories, &cfg, &mut client)?;
            match &result.concept {
                Some(c) => println!("{c}"),
                None => println!("(no concept: filtered)"),
            }
            serde_json::to_value(&result).expect("serializable")
        }
        (None, None) => return Err(Error::invalid("--llm-config or --concept is required")),
    };
    if let Some(path) = &args.out {
        write_text(path, &(serde_json::to_string_pretty(&result).expect("serializable") + "\n"))?;
    }
    Ok(())
}

fn prompts(args: PromptsArgs) -> Result<()> {
    let cfg = args.run.config(args.method)?;
    let inputs = RunInputs::load(&cfg)?;
    let prompts = required_prompts(&cfg, &inputs, &cfg.seeds)?;
    if let Some(p) = prompts.iter().find(|p| p.contains(['\n', '\r'])) {
        return Err(Error::invalid(format!("prompt contains a line break: {p:?}")));
    }
    let mut text = prompts.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    match &args.out {
        Some(path) => write_text(path, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn fmt_check(args: FmtCheckArgs) -> Result<()> {
    for path in &args.files {
        let m = read_embeddings(path)?;
        if let Some(i) = m.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                path: path.clone(),
                message: format!("non-finite value in row {}", i / m.dim().max(1)),
            });
        }
        println!("ok {}: {} rows x {} dims", path.display(), m.rows(), m.dim());
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let categories = load_category_set(&args.class_list)?;
    let source = || -> Result<_> {
        let path = args
            .descriptors
            .as_ref()
            .ok_or_else(|| Error::invalid("--descriptors is required for this kind"))?;
        load_descriptor_set(path, &categories)
    };
    let set = match args.kind {
        GenKind::Waffle => {
            let mut cfg = WaffleConfig::new(args.waffle_mode, args.pair_count, args.seed);
            if let Some(p) = &args.wordlist {
                cfg.wordlist = Wordlist::load(p)?;
            }
            gen_waffle_set(&cfg, &categories)?.assign_to_all(&categories)
        }
        GenKind::Scrambled => scramble(&source()?, args.seed)?,
        GenKind::Interchanged => interchange(&source()?, args.seed)?,
        GenKind::Random => subsample_random(&source()?, args.seed, args.multiplier)?,
        GenKind::Same => {
            let d = source()?;
            let k = (mean_descriptor_count(&d) as f64 * args.multiplier).ceil() as usize;
            subsample_same(&d, args.seed, k.max(1))?.assign_to_all(&categories)
        }
    };
    set.save(&args.out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Classify(a) => classify(a),
        Command::Eval(a) => eval(a),
        Command::Flips(a) => flips(a),
        Command::Concept(a) => concept(a),
        Command::Prompts(a) => prompts(a),
        Command::FmtCheck(a) => fmt_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
