//! Retrieval scoring: per-class aggregation of image/descriptor similarities.
//!
//! Similarity is the dot product of unit vectors. A class is represented by
//! one or more descriptor embeddings; its score for an image is the mean (or
//! max) of the image's similarity to each of them. Because the mean is
//! linear, mean scores can also be computed against a single prototype row
//! per class (the unnormalized average of its descriptor embeddings), which
//! is what full runs use.

mod vmf;

pub use vmf::{vmf_noise_ensemble, vmf_sample, VmfParams};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    Mean,
    Max,
}

/// images x classes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScoreMatrix {
    images: usize,
    classes: usize,
    scores: Vec<f32>,
    pub aggregation: AggregationMode,
}

impl ClassScoreMatrix {
    pub fn new(images: usize, classes: usize, scores: Vec<f32>, aggregation: AggregationMode) -> Result<Self> {
        if scores.len() != images * classes {
            return Err(Error::invalid("score matrix shape does not match data"));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite score at flat index {i}")));
        }
        Ok(Self {
            images,
            classes,
            scores,
            aggregation,
        })
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, image: usize, class: usize) -> f32 {
        self.scores[image * self.classes + class]
    }

    pub fn row(&self, image: usize) -> &[f32] {
        &self.scores[image * self.classes..(image + 1) * self.classes]
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    /// The matrix as an embedding file payload: one row per image, keyed by
    /// `image_keys`, one column per class.
    pub fn to_embedding_matrix(&self, image_keys: &[String]) -> Result<EmbeddingMatrix> {
        if image_keys.len() != self.images {
            return Err(Error::LengthMismatch {
                left: image_keys.len(),
                right: self.images,
            });
        }
        EmbeddingMatrix::new(self.classes, self.scores.clone(), image_keys.to_vec())
    }
}

/// Tree summation; keeps rounding error growth logarithmic in `xs.len()`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn check_classes(images: &EmbeddingMatrix, classes: &[EmbeddingMatrix]) -> Result<()> {
    for (c, m) in classes.iter().enumerate() {
        if m.rows() == 0 {
            return Err(Error::EmptyClassEmbeddings(c));
        }
        if m.dim() != images.dim() {
            return Err(Error::DimMismatch {
                expected: images.dim(),
                found: m.dim(),
            });
        }
    }
    Ok(())
}

/// Scores every image against every class's descriptor embeddings.
pub fn score(
    images: &EmbeddingMatrix,
    class_descriptor_embeddings: &[EmbeddingMatrix],
    agg: AggregationMode,
) -> Result<ClassScoreMatrix> {
    check_classes(images, class_descriptor_embeddings)?;
    let classes = class_descriptor_embeddings.len();
    let scores: Vec<f32> = (0..images.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let image = images.row(i);
            class_descriptor_embeddings.iter().map(move |descs| {
                let sims: Vec<f64> = descs.row_iter().map(|d| dot(image, d)).collect();
                let s = match agg {
                    AggregationMode::Mean => pairwise_sum(&sims) / sims.len() as f64,
                    AggregationMode::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                };
                s as f32
            })
        })
        .collect();
    ClassScoreMatrix::new(images.rows(), classes, scores, agg)
}

/// One unnormalized mean row per class.
pub fn mean_class_matrix(class_descriptor_embeddings: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    let dim = class_descriptor_embeddings.first().map_or(0, EmbeddingMatrix::dim);
    let mut data = Vec::with_capacity(class_descriptor_embeddings.len() * dim);
    let mut column = Vec::new();
    for (c, descs) in class_descriptor_embeddings.iter().enumerate() {
        if descs.rows() == 0 {
            return Err(Error::EmptyClassEmbeddings(c));
        }
        if descs.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: descs.dim(),
            });
        }
        let n = descs.rows() as f64;
        for j in 0..dim {
            column.clear();
            column.extend(descs.row_iter().map(|r| f64::from(r[j])));
            data.push((pairwise_sum(&column) / n) as f32);
        }
    }
    EmbeddingMatrix::new(
        dim,
        data,
        (0..class_descriptor_embeddings.len()).map(|c| c.to_string()).collect(),
    )
}

/// Mean-aggregated scores against precomputed class prototypes.
pub fn score_prototypes(images: &EmbeddingMatrix, prototypes: &EmbeddingMatrix) -> Result<ClassScoreMatrix> {
    if prototypes.rows() > 0 && prototypes.dim() != images.dim() {
        return Err(Error::DimMismatch {
            expected: images.dim(),
            found: prototypes.dim(),
        });
    }
    let scores: Vec<f32> = (0..images.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let image = images.row(i);
            prototypes.row_iter().map(move |p| dot(image, p) as f32)
        })
        .collect();
    ClassScoreMatrix::new(images.rows(), prototypes.rows(), scores, AggregationMode::Mean)
}

/// Argmax per image; ties go to the lowest class index.
pub fn predict(scores: &ClassScoreMatrix) -> Vec<usize> {
    (0..scores.images())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (c, &s) in row.iter().enumerate().skip(1) {
                if s > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
