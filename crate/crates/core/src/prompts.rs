//! Prompt rendering and prompt-ensemble template selection.

use std::fs;
use std::path::Path;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::stream;

const BUNDLED_TEMPLATES: &str = include_str!("../data/templates.txt");

/// Connector used for every random (class-independent) descriptor.
pub const RANDOM_CONNECTOR: &str = "which has";

const PLACEHOLDER: &str = "{}";

/// Which prompt shape to produce, with the fields that shape needs.
#[derive(Debug, Clone, Copy)]
pub enum PromptMode<'a> {
    /// `A photo of a {c}.`
    Plain,
    /// `A photo of a {c}, {connector} {descriptor}.`
    Descriptor {
        descriptor: &'a str,
        connector: &'a str,
    },
    /// `A photo of a {concept}: a {c}.`
    Concept { concept: &'a str },
    /// `A photo of a {concept}: a {c}, {connector} {descriptor}.`
    ConceptDescriptor {
        concept: &'a str,
        descriptor: &'a str,
        connector: &'a str,
    },
    /// A handcrafted template, optionally with the concept spliced in.
    EnsembleTemplate {
        template: &'a Template,
        concept: Option<&'a str>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub class_index: usize,
    pub descriptor_index: Option<usize>,
}

impl RenderedPrompt {
    pub fn with_descriptor_index(mut self, index: usize) -> Self {
        self.descriptor_index = Some(index);
        self
    }
}

fn non_empty<'a>(what: &str, s: &'a str) -> Result<&'a str> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::invalid(format!("{what} is required for this prompt mode")));
    }
    Ok(s)
}

fn clean_descriptor(d: &str) -> Result<&str> {
    // the template supplies the final period
    let d = non_empty("descriptor", d)?.trim_end_matches('.').trim_end();
    non_empty("descriptor", d)
}

fn clean_concept(c: &str) -> Result<String> {
    Ok(non_empty("concept", c)?.to_lowercase())
}

pub fn render(mode: &PromptMode<'_>, class_index: usize, classname: &str) -> Result<RenderedPrompt> {
    let c = non_empty("classname", classname)?;
    let text = match *mode {
        PromptMode::Plain => format!("A photo of a {c}."),
        PromptMode::Descriptor {
            descriptor,
            connector,
        } => format!(
            "A photo of a {c}, {} {}.",
            non_empty("connector", connector)?,
            clean_descriptor(descriptor)?
        ),
        PromptMode::Concept { concept } => {
            format!("A photo of a {}: a {c}.", clean_concept(concept)?)
        }
        PromptMode::ConceptDescriptor {
            concept,
            descriptor,
            connector,
        } => format!(
            "A photo of a {}: a {c}, {} {}.",
            clean_concept(concept)?,
            non_empty("connector", connector)?,
            clean_descriptor(descriptor)?
        ),
        PromptMode::EnsembleTemplate { template, concept } => match concept {
            None => template.fill(c),
            Some(concept) => template.fill(&format!("a {}: a {c}", clean_concept(concept)?)),
        },
    };
    Ok(RenderedPrompt {
        text,
        class_index,
        descriptor_index: None,
    })
}

/// `"which"` when the descriptor already starts with a verb-like word,
/// otherwise `"which has"`.
pub fn connector_for(descriptor: &str) -> Result<&'static str> {
    let first = descriptor
        .split_whitespace()
        .next()
        .ok_or_else(|| Error::invalid("descriptor is empty"))?;
    const VERBS: [&str; 5] = ["is", "has", "can", "often", "usually"];
    if VERBS.iter().any(|v| first.eq_ignore_ascii_case(v)) {
        Ok("which")
    } else {
        Ok("which has")
    }
}

/// A prompt template with exactly one `{}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template(String);

impl Template {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::BadTemplate(text));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn fill(&self, with: &str) -> String {
        self.0.replacen(PLACEHOLDER, with, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePool(Vec<Template>);

impl TemplatePool {
    pub fn new(templates: Vec<Template>) -> Self {
        Self(templates)
    }

    /// The 80 handcrafted ImageNet prompt templates.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn parse(text: &str) -> Result<Self> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(Template::new)
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn templates(&self) -> &[Template] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `k` distinct templates, in pool order.
pub fn ensemble_select(pool: &TemplatePool, k: usize, seed: u64) -> Result<Vec<Template>> {
    if k == 0 {
        return Err(Error::invalid("ensemble size must be positive"));
    }
    if k > pool.len() {
        return Err(Error::PoolTooSmall {
            requested: k,
            available: pool.len(),
        });
    }
    let mut picked = index::sample(&mut stream(seed, "ensemble_select"), pool.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool.0[i].clone()).collect())
}
