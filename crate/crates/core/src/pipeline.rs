//! End-to-end runs: method configuration, prompt planning, embedding lookup,
//! scoring and accuracy.

use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    mean_class_matrix, predict, score, score_prototypes, vmf_noise_ensemble, AggregationMode, ClassScoreMatrix,
    VmfParams,
};
use crate::corpus::{load_category_set, load_descriptor_set, mean_descriptor_count, CategorySet, DatasetManifest, DescriptorSet};
use crate::embedstore::{normalize, read_embeddings, EmbeddingMatrix, TextEmbeddingProvider};
use crate::error::{Error, Result};
use crate::eval::{accuracy, AccuracyReport, ResultRecord};
use crate::prompts::{connector_for, ensemble_select, render, PromptMode, RenderedPrompt, TemplatePool, RANDOM_CONNECTOR};
use crate::wafflegen::{
    gen_waffle_set, interchange, scramble, subsample_random, subsample_same, WaffleConfig, WaffleMode, Wordlist,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Clip,
    Dclip,
    DclipMax,
    DclipSame,
    DclipInterchanged,
    DclipScrambled,
    DclipRandom,
    Waffle,
    WaffleConcept,
    WaffleGpt,
    WaffleGptConcept,
    PromptEnsemble,
    PromptEnsembleConcept,
    VmfNoise,
}

impl Method {
    pub const ALL: [Method; 14] = [
        Method::Clip,
        Method::Dclip,
        Method::DclipMax,
        Method::DclipSame,
        Method::DclipInterchanged,
        Method::DclipScrambled,
        Method::DclipRandom,
        Method::Waffle,
        Method::WaffleConcept,
        Method::WaffleGpt,
        Method::WaffleGptConcept,
        Method::PromptEnsemble,
        Method::PromptEnsembleConcept,
        Method::VmfNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Clip => "clip",
            Method::Dclip => "dclip",
            Method::DclipMax => "dclip_max",
            Method::DclipSame => "dclip_same",
            Method::DclipInterchanged => "dclip_interchanged",
            Method::DclipScrambled => "dclip_scrambled",
            Method::DclipRandom => "dclip_random",
            Method::Waffle => "waffle",
            Method::WaffleConcept => "waffle_concept",
            Method::WaffleGpt => "waffle_gpt",
            Method::WaffleGptConcept => "waffle_gpt_concept",
            Method::PromptEnsemble => "prompt_ensemble",
            Method::PromptEnsembleConcept => "prompt_ensemble_concept",
            Method::VmfNoise => "vmf_noise",
        }
    }

    pub fn needs_descriptors(self) -> bool {
        matches!(
            self,
            Method::Dclip
                | Method::DclipMax
                | Method::DclipSame
                | Method::DclipInterchanged
                | Method::DclipScrambled
                | Method::DclipRandom
                | Method::WaffleGpt
                | Method::WaffleGptConcept
        )
    }

    pub fn needs_concept(self) -> bool {
        matches!(
            self,
            Method::WaffleConcept | Method::WaffleGptConcept | Method::PromptEnsembleConcept
        )
    }

    pub fn aggregation(self) -> AggregationMode {
        match self {
            Method::DclipMax => AggregationMode::Max,
            _ => AggregationMode::Mean,
        }
    }
}


impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaffleSettings {
    pub mode: WaffleMode,
    /// Zero means an empty random set, which reduces to the plain prompt.
    pub pair_count: usize,
    pub wordlist: Option<PathBuf>,
    pub alphabet: Option<String>,
}

impl Default for WaffleSettings {
    fn default() -> Self {
        Self {
            mode: WaffleMode::Joint,
            pair_count: 15,
            wordlist: None,
            alphabet: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmfSettings {
    pub kappa: f64,
    #[serde(default = "default_vmf_samples")]
    pub sample_count: usize,
}

fn default_vmf_samples() -> usize {
    30
}

pub const DEFAULT_SEEDS: [u64; 7] = [0, 1, 2, 3, 4, 5, 6];
pub const DEFAULT_ENSEMBLE_SIZE: usize = 30;

/// Everything a run needs besides the embeddings themselves. Loadable from a
/// JSON file; CLI flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub backbone_tag: String,
    pub seeds: Vec<u64>,
    pub class_list: Option<PathBuf>,
    pub descriptor_path: Option<PathBuf>,
    pub concept: Option<String>,
    pub waffle: WaffleSettings,
    pub vmf: Option<VmfSettings>,
    /// Descriptor-count factor for dclip_same and dclip_random (default 1).
    pub multiplier: Option<f64>,
    pub ensemble_size: usize,
    pub template_path: Option<PathBuf>,
    pub dataset_manifest: Option<PathBuf>,
    pub text_cache: Option<PathBuf>,
    /// Overrides the manifest's image embedding path.
    pub image_embeddings: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Clip,
            backbone_tag: "default".into(),
            seeds: DEFAULT_SEEDS.to_vec(),
            class_list: None,
            descriptor_path: None,
            concept: None,
            waffle: WaffleSettings::default(),
            vmf: None,
            multiplier: None,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            template_path: None,
            dataset_manifest: None,
            text_cache: None,
            image_embeddings: None,
        }
    }
}

impl RunConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// Checks the fields the method itself needs; file paths are checked by
    /// [`RunConfig::validate`].
    pub fn validate_method(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        let m = self.method;
        if m.needs_concept() && self.concept.as_deref().is_none_or(|c| c.trim().is_empty()) {
            return Err(Error::invalid(format!("method {m} requires a concept")));
        }
        if let Some(mult) = self.multiplier {
            if !(mult.is_finite() && mult > 0.0) {
                return Err(Error::invalid(format!("multiplier must be positive, got {mult}")));
            }
        }
        if matches!(m, Method::PromptEnsemble | Method::PromptEnsembleConcept) && self.ensemble_size == 0 {
            return Err(Error::invalid("ensemble size must be positive"));
        }
        if m == Method::VmfNoise {
            let v = self
                .vmf
                .ok_or_else(|| Error::invalid("method vmf_noise requires kappa"))?;
            VmfParams {
                kappa: v.kappa,
                sample_count: v.sample_count,
                seed: 0,
            }
            .validate()?;
        }
        if let Some(a) = &self.waffle.alphabet {
            if a.is_empty() {
                return Err(Error::invalid("alphabet is empty"));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_method()?;
        if self.class_list.is_none() {
            return Err(Error::invalid("a class list is required"));
        }
        if self.method.needs_descriptors() && self.descriptor_path.is_none() {
            return Err(Error::invalid(format!("method {} requires a descriptor file", self.method)));
        }
        Ok(())
    }
}

/// Loaded, seed-independent inputs of a run.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub categories: CategorySet,
    pub descriptors: Option<DescriptorSet>,
    pub templates: TemplatePool,
    pub wordlist: Wordlist,
}

impl RunInputs {
    pub fn new(categories: CategorySet) -> Self {
        Self {
            categories,
            descriptors: None,
            templates: TemplatePool::bundled(),
            wordlist: Wordlist::bundled(),
        }
    }

    pub fn with_descriptors(mut self, descriptors: DescriptorSet) -> Self {
        self.descriptors = Some(descriptors);
        self
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let class_list = cfg.class_list.as_ref().expect("validated");
        let categories = load_category_set(class_list)?;
        let descriptors = match &cfg.descriptor_path {
            Some(p) if cfg.method.needs_descriptors() => Some(load_descriptor_set(p, &categories)?),
            _ => None,
        };
        let templates = match &cfg.template_path {
            Some(p) => TemplatePool::load(p)?,
            None => TemplatePool::bundled(),
        };
        let wordlist = match &cfg.waffle.wordlist {
            Some(p) => Wordlist::load(p)?,
            None => Wordlist::bundled(),
        };
        Ok(Self {
            categories,
            descriptors,
            templates,
            wordlist,
        })
    }

    fn descriptors(&self, method: Method) -> Result<&DescriptorSet> {
        self.descriptors
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("method {method} requires a descriptor set")))
    }
}

/// Normalized image embeddings with their labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub images: EmbeddingMatrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    /// Normalizes `images` and checks labels against `categories`.
    pub fn new(name: impl Into<String>, images: &EmbeddingMatrix, labels: Vec<usize>, categories: &CategorySet) -> Result<Self> {
        let manifest = DatasetManifest {
            name: name.into(),
            image_embedding_path: PathBuf::new(),
            labels,
        };
        manifest.validate(categories, images.rows())?;
        Ok(Self {
            name: manifest.name,
            images: normalize(images)?,
            labels: manifest.labels,
        })
    }

    pub fn load(manifest: &DatasetManifest, image_override: Option<&std::path::Path>, categories: &CategorySet) -> Result<Self> {
        let path = image_override.unwrap_or(&manifest.image_embedding_path);
        let images = read_embeddings(path)?;
        Self::new(manifest.name.clone(), &images, manifest.labels.clone(), categories)
    }
}

fn gpt_prompts(
    descriptors: &DescriptorSet,
    categories: &CategorySet,
    concept: Option<&str>,
) -> Result<Vec<Vec<RenderedPrompt>>> {
    descriptors
        .entries()
        .iter()
        .enumerate()
        .map(|(c, entry)| {
            entry
                .descriptors
                .iter()
                .enumerate()
                .map(|(d, desc)| {
                    let connector = connector_for(desc)?;
                    let mode = match concept {
                        None => PromptMode::Descriptor {
                            descriptor: desc,
                            connector,
                        },
                        Some(concept) => PromptMode::ConceptDescriptor {
                            concept,
                            descriptor: desc,
                            connector,
                        },
                    };
                    render(&mode, c, categories.get(c).expect("bound set").name.as_str())
                        .map(|p| p.with_descriptor_index(d))
                })
                .collect()
        })
        .collect()
}

/// Same descriptor list for every class; an empty list falls back to the
/// plain prompt (or the concept prompt) as the only descriptor.
fn shared_prompts(
    descriptors: &[String],
    connector: impl Fn(&str) -> Result<&'static str>,
    categories: &CategorySet,
    concept: Option<&str>,
) -> Result<Vec<Vec<RenderedPrompt>>> {
    categories
        .iter()
        .map(|cat| {
            if descriptors.is_empty() {
                return Ok(vec![render(&base_mode(concept), cat.index, &cat.name)?]);
            }
            descriptors
                .iter()
                .enumerate()
                .map(|(d, desc)| {
                    let connector = connector(desc)?;
                    let mode = match concept {
                        None => PromptMode::Descriptor {
                            descriptor: desc,
                            connector,
                        },
                        Some(concept) => PromptMode::ConceptDescriptor {
                            concept,
                            descriptor: desc,
                            connector,
                        },
                    };
                    render(&mode, cat.index, &cat.name).map(|p| p.with_descriptor_index(d))
                })
                .collect()
        })
        .collect()
}

fn base_mode(concept: Option<&str>) -> PromptMode<'_> {
    match concept {
        None => PromptMode::Plain,
        Some(concept) => PromptMode::Concept { concept },
    }
}

fn random_connector(_: &str) -> Result<&'static str> {
    Ok(RANDOM_CONNECTOR)
}

fn waffle_config(cfg: &RunConfig, inputs: &RunInputs, seed: u64) -> WaffleConfig {
    let mut wc = WaffleConfig::new(cfg.waffle.mode, cfg.waffle.pair_count, seed);
    wc.wordlist = inputs.wordlist.clone();
    if let Some(a) = &cfg.waffle.alphabet {
        wc.alphabet = a.chars().collect();
    }
    wc
}

fn waffle_descriptors(cfg: &RunConfig, inputs: &RunInputs, seed: u64) -> Result<Vec<String>> {
    if cfg.waffle.pair_count == 0 {
        return Ok(Vec::new());
    }
    Ok(gen_waffle_set(&waffle_config(cfg, inputs, seed), &inputs.categories)?.descriptors)
}

/// Per-class prompt lists for one seed. For vmf_noise these are the plain
/// prompts the noise is centred on.
pub fn plan_prompts(cfg: &RunConfig, inputs: &RunInputs, seed: u64) -> Result<Vec<Vec<RenderedPrompt>>> {
    cfg.validate_method()?;
    let cats = &inputs.categories;
    if cats.is_empty() {
        return Err(Error::invalid("class list is empty"));
    }
    let concept = cfg.concept.as_deref().filter(|c| !c.trim().is_empty());
    let multiplier = cfg.multiplier.unwrap_or(1.0);
    let m = cfg.method;
    match m {
        Method::Clip => shared_prompts(&[], random_connector, cats, concept),
        Method::VmfNoise => shared_prompts(&[], random_connector, cats, None),
        Method::Dclip | Method::DclipMax => gpt_prompts(inputs.descriptors(m)?, cats, None),
        Method::DclipInterchanged => gpt_prompts(&interchange(inputs.descriptors(m)?, seed)?, cats, None),
        Method::DclipScrambled => gpt_prompts(&scramble(inputs.descriptors(m)?, seed)?, cats, None),
        Method::DclipRandom => gpt_prompts(&subsample_random(inputs.descriptors(m)?, seed, multiplier)?, cats, None),
        Method::DclipSame => {
            let d = inputs.descriptors(m)?;
            let k = (mean_descriptor_count(d) as f64 * multiplier).ceil() as usize;
            let shared = subsample_same(d, seed, k.max(1))?;
            shared_prompts(&shared.descriptors, connector_for, cats, None)
        }
        Method::Waffle | Method::WaffleConcept => {
            let concept = if m == Method::WaffleConcept { concept } else { None };
            shared_prompts(&waffle_descriptors(cfg, inputs, seed)?, random_connector, cats, concept)
        }
        Method::WaffleGpt | Method::WaffleGptConcept => {
            let concept = if m == Method::WaffleGptConcept { concept } else { None };
            let mut gpt = gpt_prompts(inputs.descriptors(m)?, cats, concept)?;
            let waffle = waffle_descriptors(cfg, inputs, seed)?;
            if !waffle.is_empty() {
                let random = shared_prompts(&waffle, random_connector, cats, concept)?;
                for (class, extra) in gpt.iter_mut().zip(random) {
                    let offset = class.len();
                    class.extend(extra.into_iter().map(|p| {
                        let d = p.descriptor_index.unwrap_or(0);
                        p.with_descriptor_index(offset + d)
                    }));
                }
            }
            Ok(gpt)
        }
        Method::PromptEnsemble | Method::PromptEnsembleConcept => {
            let concept = if m == Method::PromptEnsembleConcept { concept } else { None };
            let templates = ensemble_select(&inputs.templates, cfg.ensemble_size, seed)?;
            cats.iter()
                .map(|cat| {
                    templates
                        .iter()
                        .enumerate()
                        .map(|(t, template)| {
                            render(&PromptMode::EnsembleTemplate { template, concept }, cat.index, &cat.name)
                                .map(|p| p.with_descriptor_index(t))
                        })
                        .collect()
                })
                .collect()
        }
    }
}

fn unique_in_order<'a>(prompts: impl IntoIterator<Item = &'a str>, out: &mut Vec<String>, seen: &mut HashMap<String, usize>) {
    for p in prompts {
        if !seen.contains_key(p) {
            seen.insert(p.to_owned(), out.len());
            out.push(p.to_owned());
        }
    }
}

/// Every prompt the run will request from the provider, deduplicated, in
/// first-use order across `seeds`.
pub fn required_prompts(cfg: &RunConfig, inputs: &RunInputs, seeds: &[u64]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for &seed in seeds {
        let plan = plan_prompts(cfg, inputs, seed)?;
        unique_in_order(plan.iter().flatten().map(|p| p.text.as_str()), &mut out, &mut seen);
    }
    Ok(out)
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub predictions: Vec<usize>,
    pub scores: ClassScoreMatrix,
    pub report: AccuracyReport,
}

impl SeedRun {
    pub fn record(&self, method: Method, backbone: &str) -> ResultRecord {
        ResultRecord {
            dataset: self.report.dataset.clone(),
            method: method.to_string(),
            backbone: backbone.to_owned(),
            seed: self.seed,
            accuracy: self.report.accuracy,
            correct: self.report.correct,
            total: self.report.total,
        }
    }
}

/// Per-class descriptor embeddings (unit rows) for one seed's plan.
fn class_embeddings<P>(plan: &[Vec<RenderedPrompt>], provider: &P, dim: usize) -> Result<Vec<EmbeddingMatrix>>
where
    P: TextEmbeddingProvider + ?Sized,
{
    let mut unique = Vec::new();
    let mut seen = HashMap::new();
    unique_in_order(plan.iter().flatten().map(|p| p.text.as_str()), &mut unique, &mut seen);
    let embedded = provider.embed(&unique)?;
    if embedded.rows() != unique.len() {
        return Err(Error::LengthMismatch {
            left: embedded.rows(),
            right: unique.len(),
        });
    }
    if embedded.rows() > 0 && embedded.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            found: embedded.dim(),
        });
    }
    let embedded = normalize(&embedded)?;
    Ok(plan
        .iter()
        .map(|prompts| {
            let rows: Vec<usize> = prompts.iter().map(|p| seen[p.text.as_str()]).collect();
            embedded.select(&rows)
        })
        .collect())
}

pub fn run_seed<P>(cfg: &RunConfig, inputs: &RunInputs, dataset: &Dataset, provider: &P, seed: u64) -> Result<SeedRun>
where
    P: TextEmbeddingProvider + ?Sized,
{
    let plan = plan_prompts(cfg, inputs, seed)?;
    let per_class = class_embeddings(&plan, provider, dataset.images.dim())?;
    let scores = match cfg.method {
        Method::VmfNoise => {
            let v = cfg.vmf.expect("validated");
            let centres = EmbeddingMatrix::new(
                dataset.images.dim(),
                per_class.iter().flat_map(|m| m.row(0).iter().copied()).collect(),
                per_class.iter().map(|m| m.keys()[0].clone()).collect(),
            )?;
            let noisy = vmf_noise_ensemble(
                &centres,
                &VmfParams {
                    kappa: v.kappa,
                    sample_count: v.sample_count,
                    seed,
                },
            )?;
            score_prototypes(&dataset.images, &mean_class_matrix(&noisy)?)?
        }
        m => match m.aggregation() {
            AggregationMode::Mean => score_prototypes(&dataset.images, &mean_class_matrix(&per_class)?)?,
            AggregationMode::Max => score(&dataset.images, &per_class, AggregationMode::Max)?,
        },
    };
    let predictions = predict(&scores);
    let report = accuracy(&predictions, &dataset.labels)?.for_dataset(dataset.name.clone());
    Ok(SeedRun {
        seed,
        predictions,
        scores,
        report,
    })
}

/// One [`SeedRun`] per configured seed, in configuration order. Seeds run in
/// parallel.
pub fn run<P>(cfg: &RunConfig, inputs: &RunInputs, dataset: &Dataset, provider: &P) -> Result<Vec<SeedRun>>
where
    P: TextEmbeddingProvider + Sync + ?Sized,
{
    cfg.validate_method()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, inputs, dataset, provider, seed))
        .collect()
}
