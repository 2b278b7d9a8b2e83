mod common;

use waffle_core::corpus::{CategorySet, ClassDescriptors, DatasetManifest, DescriptorSet};
use waffle_core::embedstore::{CachedTextEmbeddings, EmbeddingMatrix};
use waffle_core::eval::concept_matrix;
use waffle_core::pipeline::{required_prompts, run, Dataset, Method, RunConfig, RunInputs, VmfSettings};
use waffle_core::Error;

fn config(method: Method, seeds: &[u64]) -> RunConfig {
    RunConfig {
        seeds: seeds.to_vec(),
        ..RunConfig::new(method)
    }
}

#[test]
fn clip_matches_brute_force_retrieval() {
    let mut rng = common::rng(11);
    let cfg = config(Method::Clip, &[0]);
    let fx = common::fixture(&mut rng, RunInputs::new(common::class_names(6)), 60, 12, &[&cfg]);
    let got = run(&cfg, &fx.inputs, &fx.dataset, &fx.cache).unwrap().remove(0);

    // oracle: normalize everything in f64 and take the argmax of cosines
    let f64_unit = |v: &[f32]| {
        let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        v.iter().map(|x| f64::from(*x) / n).collect::<Vec<_>>()
    };
    let texts: Vec<Vec<f64>> = fx
        .inputs
        .categories
        .iter()
        .map(|c| {
            let m = waffle_core::embedstore::TextEmbeddingProvider::embed(&fx.cache, &[format!("A photo of a {}.", c.name)]).unwrap();
            f64_unit(m.row(0))
        })
        .collect();
    let expected: Vec<usize> = fx
        .dataset
        .images
        .row_iter()
        .map(|img| {
            let img = f64_unit(img);
            let sims: Vec<f64> = texts.iter().map(|t| t.iter().zip(&img).map(|(a, b)| a * b).sum()).collect();
            (0..sims.len()).fold(0, |best, c| if sims[c] > sims[best] { c } else { best })
        })
        .collect();
    assert_eq!(got.predictions, expected);
    assert_eq!(got.report.total, 60);
}

#[test]
fn waffle_runs_repeat_exactly() {
    let mut rng = common::rng(12);
    let cfg = config(Method::Waffle, &[0]);
    assert_eq!(cfg.waffle.pair_count, 15);
    let fx = common::fixture(&mut rng, RunInputs::new(common::class_names(5)), 40, 16, &[&cfg]);
    let a = run(&cfg, &fx.inputs, &fx.dataset, &fx.cache).unwrap();
    let b = run(&cfg, &fx.inputs, &fx.dataset, &fx.cache).unwrap();
    assert_eq!(a, b);
    let bits = |r: &[waffle_core::pipeline::SeedRun]| r[0].scores.scores().iter().map(|s| s.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn max_aggregation_follows_the_dominant_descriptor() {
    // image (1, 0). Class "a" has descriptors (1, 0) and (-1, 0): mean 0, max 1.
    // Class "b" has two copies of (0.8, 0.6): mean = max = 0.8.
    let cats = CategorySet::from_names(["a", "b"]).unwrap();
    let descriptors = DescriptorSet::new(
        vec![
            ClassDescriptors {
                class: "a".into(),
                descriptors: vec!["a hit".into(), "a miss".into()],
            },
            ClassDescriptors {
                class: "b".into(),
                descriptors: vec!["a near hit".into(), "a near hit".into()],
            },
        ],
        &cats,
    )
    .unwrap();
    let text = EmbeddingMatrix::new(
        2,
        vec![1.0, 0.0, -1.0, 0.0, 0.8, 0.6],
        vec![
            "A photo of a a, which has a hit.".into(),
            "A photo of a a, which has a miss.".into(),
            "A photo of a b, which has a near hit.".into(),
        ],
    )
    .unwrap();
    let cache = CachedTextEmbeddings::new(text).unwrap();
    let images = EmbeddingMatrix::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
    let dataset = Dataset::new("constructed", &images, vec![0], &cats).unwrap();
    let inputs = RunInputs::new(cats).with_descriptors(descriptors);

    let mean = run(&config(Method::Dclip, &[0]), &inputs, &dataset, &cache).unwrap();
    let max = run(&config(Method::DclipMax, &[0]), &inputs, &dataset, &cache).unwrap();
    assert_eq!(mean[0].predictions, [1]);
    assert_eq!(max[0].predictions, [0]);
    assert_eq!(max[0].scores.get(0, 0), 1.0);
}

#[test]
fn concentrated_noise_reproduces_plain_predictions() {
    for seed in 0..5 {
        let mut rng = common::rng(100 + seed);
        let mut cfg = config(Method::VmfNoise, &[seed]);
        cfg.vmf = Some(VmfSettings {
            kappa: 1e7,
            sample_count: 30,
        });
        let plain = config(Method::Clip, &[seed]);
        let fx = common::fixture(&mut rng, RunInputs::new(common::class_names(8)), 80, 16, &[&plain]);
        let noisy = run(&cfg, &fx.inputs, &fx.dataset, &fx.cache).unwrap();
        let base = run(&plain, &fx.inputs, &fx.dataset, &fx.cache).unwrap();
        assert_eq!(noisy[0].predictions, base[0].predictions);
    }
}

#[test]
fn cache_built_from_required_prompts_suffices() {
    let cats = common::class_names(4);
    let descriptors = DescriptorSet::new(
        cats.names()
            .map(|n| ClassDescriptors {
                class: n.into(),
                descriptors: vec![format!("a {n} feature"), "is large".into(), "can swim".into()],
            })
            .collect(),
        &cats,
    )
    .unwrap();
    let inputs = RunInputs::new(cats).with_descriptors(descriptors);
    let mut concept = config(Method::WaffleGptConcept, &[0, 1, 2]);
    concept.concept = Some("Thing Group".into());
    let methods: Vec<RunConfig> = waffle_core::pipeline::Method::ALL
        .iter()
        .map(|&m| {
            let mut c = concept.clone();
            c.method = m;
            c.multiplier = Some(2.0);
            if m == Method::VmfNoise {
                c.vmf = Some(VmfSettings {
                    kappa: 50.0,
                    sample_count: 5,
                });
            }
            c
        })
        .collect();
    for cfg in &methods {
        let mut rng = common::rng(7);
        // the fixture's cache holds exactly this method's prompts plus the plain ones
        let fx = common::fixture(&mut rng, inputs.clone(), 10, 8, &[cfg]);
        run(cfg, &fx.inputs, &fx.dataset, &fx.cache).unwrap_or_else(|e| panic!("{}: {e}", cfg.method));
        let needed = required_prompts(cfg, &fx.inputs, &cfg.seeds).unwrap();
        assert!(!needed.is_empty());
    }
}

#[test]
fn cache_miss_names_missing_prompts() {
    let mut rng = common::rng(3);
    let clip = config(Method::Clip, &[0]);
    let fx = common::fixture(&mut rng, RunInputs::new(common::class_names(3)), 5, 4, &[&clip]);
    match run(&config(Method::Waffle, &[0]), &fx.inputs, &fx.dataset, &fx.cache) {
        Err(Error::CacheMiss { missing_count, first }) => {
            assert_eq!(missing_count, 90);
            assert_eq!(first.len(), 5);
            assert!(first[0].starts_with("A photo of a waffle, which has "));
        }
        other => panic!("expected a cache miss, got {other:?}"),
    }
}

#[test]
fn own_concepts_help_most_on_constructed_data() {
    // Dataset k's images sit on the embedding of "A photo of a {concept_k}: a {c}.";
    // the other concept's prompts and the plain prompts are unrelated directions.
    let concepts = vec!["Food".to_string(), "Bird".to_string()];
    let cats = [
        CategorySet::from_names(["waffle", "pancake", "bagel"]).unwrap(),
        CategorySet::from_names(["sparrow", "robin", "heron"]).unwrap(),
    ];
    let mut rng = common::rng(5);
    let dim = 24;
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    let mut datasets = Vec::new();
    let mut images_per_dataset = Vec::new();
    for (k, set) in cats.iter().enumerate() {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (c, name) in set.names().enumerate() {
            let mut prompts = vec![format!("A photo of a {name}.")];
            prompts.extend(concepts.iter().map(|con| format!("A photo of a {}: a {name}.", con.to_lowercase())));
            for (j, p) in prompts.into_iter().enumerate() {
                let v = common::unit(&common::gaussian(&mut rng, dim));
                if j == k + 1 {
                    for _ in 0..4 {
                        let noise = common::gaussian(&mut rng, dim);
                        images.push(common::unit(&v.iter().zip(&noise).map(|(a, b)| a + 0.05 * b).collect::<Vec<_>>()));
                        labels.push(c);
                    }
                }
                keys.push(p);
                rows.push(v);
            }
        }
        let manifest = DatasetManifest {
            name: format!("d{k}"),
            image_embedding_path: "unused".into(),
            labels: labels.clone(),
        };
        images_per_dataset.push(Dataset::new(manifest.name.clone(), &EmbeddingMatrix::from_rows(dim, &images).unwrap(), labels, set).unwrap());
        datasets.push((manifest, set.clone()));
    }
    let cache = CachedTextEmbeddings::new(EmbeddingMatrix::new(dim, rows.concat(), keys).unwrap()).unwrap();

    let matrix = concept_matrix(&datasets, &concepts, |manifest, cats, concept| {
        let k: usize = manifest.name[1..].parse().unwrap();
        let mut cfg = config(Method::Clip, &[0]);
        cfg.concept = concept.map(str::to_owned);
        let r = run(&cfg, &RunInputs::new(cats.clone()), &images_per_dataset[k], &cache)?;
        Ok(r[0].report.accuracy)
    })
    .unwrap();
    assert_eq!(matrix.deltas.len(), 2);
    for (k, row) in matrix.deltas.iter().enumerate() {
        let other = 1 - k;
        assert!(row[k] > row[other], "{:?}", matrix.deltas);
    }
}
