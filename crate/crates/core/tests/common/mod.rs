#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use waffle_core::corpus::CategorySet;
use waffle_core::embedstore::{CachedTextEmbeddings, EmbeddingMatrix};
use waffle_core::pipeline::{required_prompts, Dataset, RunConfig, RunInputs};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

pub fn unit(v: &[f32]) -> Vec<f32> {
    let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|x| (f64::from(*x) / n) as f32).collect()
}

pub fn unit_rows(rng: &mut impl Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = (0..rows).map(|_| unit(&gaussian(rng, dim))).collect();
    EmbeddingMatrix::from_rows(dim, &rows).unwrap()
}

pub fn class_names(n: usize) -> CategorySet {
    const WORDS: [&str; 10] = [
        "waffle", "peking duck", "tabby cat", "golden retriever", "fire truck",
        "sea lion", "red fox", "maple leaf", "church", "hot air balloon",
    ];
    CategorySet::from_names((0..n).map(|i| {
        if i < WORDS.len() {
            WORDS[i].to_owned()
        } else {
            format!("thing number {i}")
        }
    }))
    .unwrap()
}

pub struct Fixture {
    pub inputs: RunInputs,
    pub dataset: Dataset,
    pub cache: CachedTextEmbeddings,
}

/// Random text embeddings for every prompt any of `configs` needs, and
/// images scattered around the plain-prompt embedding of their label so
/// that class margins are comfortable.
pub fn fixture(rng: &mut impl Rng, inputs: RunInputs, images: usize, dim: usize, configs: &[&RunConfig]) -> Fixture {
    let mut prompts: Vec<String> = Vec::new();
    for cfg in configs {
        for p in required_prompts(cfg, &inputs, &cfg.seeds).unwrap() {
            if !prompts.contains(&p) {
                prompts.push(p);
            }
        }
    }
    let plain = required_prompts(&RunConfig::default(), &inputs, &[0]).unwrap();
    for p in &plain {
        if !prompts.contains(p) {
            prompts.push(p.clone());
        }
    }
    let vectors: Vec<Vec<f32>> = prompts.iter().map(|_| unit(&gaussian(rng, dim))).collect();
    let text = EmbeddingMatrix::new(dim, vectors.concat(), prompts.clone()).unwrap();

    let classes = inputs.categories.len();
    let labels: Vec<usize> = (0..images).map(|_| rng.random_range(0..classes)).collect();
    let image_rows: Vec<Vec<f32>> = labels
        .iter()
        .map(|&l| {
            let centre = &vectors[prompts.iter().position(|p| *p == plain[l]).unwrap()];
            let noise = gaussian(rng, dim);
            unit(&centre.iter().zip(&noise).map(|(c, n)| c + 0.3 * n / (dim as f32).sqrt()).collect::<Vec<_>>())
        })
        .collect();
    let images = EmbeddingMatrix::from_rows(dim, &image_rows).unwrap();
    let dataset = Dataset::new("fixture", &images, labels, &inputs.categories).unwrap();
    Fixture {
        inputs,
        dataset,
        cache: CachedTextEmbeddings::new(text).unwrap(),
    }
}
