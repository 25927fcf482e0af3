//! Few-shot train/dev set construction.
//!
//! "Shots" is mode-dependent, exactly as the experiment grid defines it:
//! in `per_class` it is the TOTAL set size (shots/2 per label), in `add_neg`
//! and `add_source` it counts POSITIVE examples only, with `n_neg` target
//! negatives and, for `add_source`, `n_source` source-language documents of
//! any label added on top. The dev set always mirrors the train composition
//! with disjoint documents, drawn from one shuffled pool (train first).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShotMode {
    PerClass,
    AddNeg,
    AddSource,
}

impl FewShotMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FewShotMode::PerClass => "per_class",
            FewShotMode::AddNeg => "add_neg",
            FewShotMode::AddSource => "add_source",
        }
    }
}

/// Full description of one sampled train/dev pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub mode: FewShotMode,
    /// Mode-dependent: total examples (per_class) or positives (add_*).
    pub shots: usize,
    pub n_neg: usize,
    pub n_source: usize,
    pub sampling_seed: u64,
}

impl FewShotSpec {
    pub fn per_class(shots: usize, sampling_seed: u64) -> Self {
        Self {
            mode: FewShotMode::PerClass,
            shots,
            n_neg: 0,
            n_source: 0,
            sampling_seed,
        }
    }

    pub fn add_neg(shots: usize, n_neg: usize, sampling_seed: u64) -> Self {
        Self {
            mode: FewShotMode::AddNeg,
            shots,
            n_neg,
            n_source: 0,
            sampling_seed,
        }
    }

    pub fn add_source(shots: usize, n_neg: usize, n_source: usize, sampling_seed: u64) -> Self {
        Self {
            mode: FewShotMode::AddSource,
            shots,
            n_neg,
            n_source,
            sampling_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::Argument("shots must be positive".into()));
        }
        match self.mode {
            FewShotMode::PerClass => {
                if self.shots % 2 != 0 {
                    return Err(Error::Argument(format!(
                        "per_class shots must be even, got {}",
                        self.shots
                    )));
                }
                if self.n_neg != 0 || self.n_source != 0 {
                    return Err(Error::Argument(
                        "per_class takes no added negatives or source documents".into(),
                    ));
                }
            }
            FewShotMode::AddNeg => {
                if self.n_neg == 0 {
                    return Err(Error::Argument("add_neg requires n_neg > 0".into()));
                }
                if self.n_source != 0 {
                    return Err(Error::Argument("add_neg takes no source documents".into()));
                }
            }
            FewShotMode::AddSource => {
                if self.n_neg == 0 || self.n_source == 0 {
                    return Err(Error::Argument(
                        "add_source requires n_neg > 0 and n_source > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// (positives, target negatives, source documents) per side.
    pub fn composition(&self) -> (usize, usize, usize) {
        match self.mode {
            FewShotMode::PerClass => (self.shots / 2, self.shots / 2, 0),
            FewShotMode::AddNeg => (self.shots, self.n_neg, 0),
            FewShotMode::AddSource => (self.shots, self.n_neg, self.n_source),
        }
    }

    /// Total documents in each of train and dev.
    pub fn side_size(&self) -> usize {
        let (p, n, s) = self.composition();
        p + n + s
    }

    /// Scenario label used in run directories and reports.
    pub fn scenario_label(&self) -> String {
        match self.mode {
            FewShotMode::PerClass => format!("per_class_{}", self.shots),
            FewShotMode::AddNeg => format!("add_neg_{}+{}", self.shots, self.n_neg),
            FewShotMode::AddSource => format!(
                "add_source_{}+{}+{}",
                self.shots, self.n_neg, self.n_source
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    Train,
    Dev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleOrigin {
    Target,
    Source,
}

/// One audit line per sampled document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub role: SampleRole,
    pub origin: SampleOrigin,
}

/// A sampled train/dev pair plus its audit manifest.
#[derive(Debug, Clone)]
pub struct FewShotSets {
    pub train: Corpus,
    pub dev: Corpus,
    pub spec: FewShotSpec,
    pub manifest: Vec<ManifestEntry>,
}

fn take_split<'a>(
    docs: &mut Vec<&'a Document>,
    per_side: usize,
    label: u8,
    context: &str,
) -> Result<(Vec<&'a Document>, Vec<&'a Document>)> {
    if docs.len() < 2 * per_side {
        return Err(Error::Capacity {
            context: context.to_string(),
            label,
            required: 2 * per_side,
            available: docs.len(),
        });
    }
    let train: Vec<_> = docs.drain(..per_side).collect();
    let dev: Vec<_> = docs.drain(..per_side).collect();
    Ok((train, dev))
}

/// Sample train and dev sets for one spec, deterministically from its seed.
pub fn build_fewshot_sets(
    target_pool: &Corpus,
    source_pool: Option<&Corpus>,
    spec: &FewShotSpec,
) -> Result<FewShotSets> {
    spec.validate()?;
    let (n_pos, n_neg, n_src) = spec.composition();
    match (spec.mode, source_pool) {
        (FewShotMode::AddSource, None) => {
            return Err(Error::Argument(
                "add_source requires a source pool".into(),
            ))
        }
        (FewShotMode::AddSource, Some(p)) if p.is_empty() => {
            return Err(Error::Argument("source pool is empty".into()))
        }
        (FewShotMode::PerClass | FewShotMode::AddNeg, Some(_)) => {
            return Err(Error::Argument(format!(
                "mode {} takes no source pool",
                spec.mode.as_str()
            )))
        }
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.sampling_seed);
    let mut positives: Vec<&Document> =
        target_pool.iter().filter(|d| d.label == 1).collect();
    let mut negatives: Vec<&Document> =
        target_pool.iter().filter(|d| d.label == 0).collect();
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);

    let label = spec.scenario_label();
    let (train_pos, dev_pos) = take_split(&mut positives, n_pos, 1, &label)?;
    let (train_neg, dev_neg) = take_split(&mut negatives, n_neg, 0, &label)?;

    let (train_src, dev_src) = if n_src > 0 {
        let source = source_pool.expect("checked above");
        let mut source_docs: Vec<&Document> = source.iter().collect();
        source_docs.shuffle(&mut rng);
        if source_docs.len() < 2 * n_src {
            return Err(Error::Capacity {
                context: format!("{label} (source pool)"),
                label: 2,
                required: 2 * n_src,
                available: source_docs.len(),
            });
        }
        let train: Vec<_> = source_docs.drain(..n_src).collect();
        let dev: Vec<_> = source_docs.drain(..n_src).collect();
        (train, dev)
    } else {
        (Vec::new(), Vec::new())
    };

    let mut manifest = Vec::new();
    let assemble = |pos: &[&Document],
                        neg: &[&Document],
                        src: &[&Document],
                        role: SampleRole,
                        manifest: &mut Vec<ManifestEntry>|
     -> Vec<Document> {
        let mut docs = Vec::with_capacity(pos.len() + neg.len() + src.len());
        for (group, origin) in [
            (pos, SampleOrigin::Target),
            (neg, SampleOrigin::Target),
            (src, SampleOrigin::Source),
        ] {
            for d in group {
                manifest.push(ManifestEntry {
                    id: d.id.clone(),
                    role,
                    origin,
                });
                docs.push((*d).clone());
            }
        }
        docs
    };
    let train_docs = assemble(&train_pos, &train_neg, &train_src, SampleRole::Train, &mut manifest);
    let dev_docs = assemble(&dev_pos, &dev_neg, &dev_src, SampleRole::Dev, &mut manifest);

    let train = Corpus::new(
        format!("{}/{}-train-s{}", target_pool.name(), label, spec.sampling_seed),
        train_docs,
    )?;
    let dev = Corpus::new(
        format!("{}/{}-dev-s{}", target_pool.name(), label, spec.sampling_seed),
        dev_docs,
    )?;

    let overlap: Vec<&str> = train.ids().intersection(&dev.ids()).copied().collect();
    if !overlap.is_empty() {
        return Err(Error::Internal(format!(
            "train/dev overlap on ids {overlap:?}"
        )));
    }
    Ok(FewShotSets {
        train,
        dev,
        spec: *spec,
        manifest,
    })
}

/// Reshuffled views of the pool, one per sampling seed.
pub fn enumerate_seed_pools(train_dev: &Corpus, seeds: &[u64]) -> Result<Vec<Corpus>> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::Argument("sampling seeds must be distinct".into()));
    }
    seeds
        .iter()
        .map(|&seed| {
            let mut docs: Vec<Document> = train_dev.documents().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            docs.shuffle(&mut rng);
            Corpus::new(format!("{}/pool-{}", train_dev.name(), seed), docs)
        })
        .collect()
}

/// Serialize a manifest as one JSON object per line.
pub fn manifest_to_jsonl(manifest: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for entry in manifest {
        out.push_str(&serde_json::to_string(entry).expect("manifest entry serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;
    use std::collections::BTreeMap;

    fn weights() -> BTreeMap<String, f64> {
        BTreeMap::from([("general".to_string(), 1.0)])
    }

    fn pool(n_pos: usize, n_neg: usize, seed: u64) -> Corpus {
        generate_synthetic(n_pos, n_neg, &weights(), "de", seed).unwrap()
    }

    fn label_counts(c: &Corpus) -> (usize, usize) {
        c.label_counts()
    }

    #[test]
    fn per_class_ten_shots() {
        let target = pool(20, 40, 1);
        let sets =
            build_fewshot_sets(&target, None, &FewShotSpec::per_class(10, 7)).unwrap();
        assert_eq!(label_counts(&sets.train), (5, 5));
        assert_eq!(label_counts(&sets.dev), (5, 5));
        assert_eq!(sets.manifest.len(), 20);
    }

    #[test]
    fn add_neg_ten_shots_two_hundred_negatives() {
        let target = pool(30, 500, 2);
        let sets =
            build_fewshot_sets(&target, None, &FewShotSpec::add_neg(10, 200, 3)).unwrap();
        assert_eq!(label_counts(&sets.train), (10, 200));
        assert_eq!(label_counts(&sets.dev), (10, 200));
    }

    #[test]
    fn add_source_forty_shots_total_640() {
        let target = pool(90, 700, 3);
        let source = generate_synthetic(400, 400, &weights(), "en", 4).unwrap().renamed("source");
        let spec = FewShotSpec::add_source(40, 300, 300, 5);
        let sets = build_fewshot_sets(&target, Some(&source), &spec).unwrap();
        assert_eq!(sets.train.len(), 640);
        assert_eq!(sets.dev.len(), 640);
        let src_train = sets
            .manifest
            .iter()
            .filter(|e| e.role == SampleRole::Train && e.origin == SampleOrigin::Source)
            .count();
        assert_eq!(src_train, 300);
    }

    #[test]
    fn capacity_error_states_required_vs_available() {
        let target = pool(30, 200, 4);
        let err =
            build_fewshot_sets(&target, None, &FewShotSpec::add_neg(40, 100, 1)).unwrap_err();
        match err {
            Error::Capacity {
                required,
                available,
                label,
                ..
            } => {
                assert_eq!(required, 80);
                assert_eq!(available, 30);
                assert_eq!(label, 1);
            }
            other => panic!("expected capacity error, got {other}"),
        }
    }

    #[test]
    fn train_and_dev_are_disjoint_and_exclude_nothing_twice() {
        let target = pool(40, 400, 5);
        for seed in 0..10u64 {
            let sets =
                build_fewshot_sets(&target, None, &FewShotSpec::add_neg(10, 100, seed)).unwrap();
            assert!(sets.train.ids().is_disjoint(&sets.dev.ids()));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let target = pool(40, 400, 6);
        let spec = FewShotSpec::per_class(40, 11);
        let a = build_fewshot_sets(&target, None, &spec).unwrap();
        let b = build_fewshot_sets(&target, None, &spec).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.train.documents(), b.train.documents());
    }

    #[test]
    fn source_documents_only_in_add_source() {
        let target = pool(20, 200, 7);
        let sets =
            build_fewshot_sets(&target, None, &FewShotSpec::add_neg(10, 100, 1)).unwrap();
        assert!(sets
            .manifest
            .iter()
            .all(|e| e.origin == SampleOrigin::Target));
        let source = generate_synthetic(50, 50, &weights(), "en", 8).unwrap().renamed("src");
        let sets = build_fewshot_sets(
            &target,
            Some(&source),
            &FewShotSpec::add_source(10, 100, 20, 1),
        )
        .unwrap();
        let n_src: usize = sets
            .manifest
            .iter()
            .filter(|e| e.origin == SampleOrigin::Source)
            .count();
        assert_eq!(n_src, 40);
    }

    #[test]
    fn spec_invariants_enforced() {
        assert!(FewShotSpec::per_class(9, 0).validate().is_err());
        assert!(FewShotSpec::add_neg(10, 0, 0).validate().is_err());
        assert!(FewShotSpec::add_source(10, 0, 100, 0).validate().is_err());
        assert!(FewShotSpec::add_source(10, 100, 0, 0).validate().is_err());
        assert!(FewShotSpec {
            mode: FewShotMode::PerClass,
            shots: 10,
            n_neg: 5,
            n_source: 0,
            sampling_seed: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn seed_pools_are_permutations() {
        let target = pool(20, 80, 9);
        let pools = enumerate_seed_pools(&target, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(pools.len(), 5);
        for p in &pools {
            assert_eq!(p.ids(), target.ids());
            assert_eq!(p.len(), target.len());
        }
    }

    #[test]
    fn seed_pools_deterministic_and_duplicate_seeds_rejected() {
        let target = pool(10, 40, 10);
        let a = enumerate_seed_pools(&target, &[1, 2, 3, 4, 5]).unwrap();
        let b = enumerate_seed_pools(&target, &[1, 2, 3, 4, 5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.documents(), y.documents());
        }
        assert!(enumerate_seed_pools(&target, &[1, 1, 2]).is_err());
    }

    #[test]
    fn distinct_seeds_rarely_collide() {
        // Order collisions between two distinct seeds should never show up
        // across 1000 random pools.
        let mut collisions = 0;
        for trial in 0..1000u64 {
            let target = pool(10, 10, 1000 + trial);
            let pools = enumerate_seed_pools(&target, &[trial, trial + 7919]).unwrap();
            let order_a: Vec<&str> = pools[0].iter().map(|d| d.id.as_str()).collect();
            let order_b: Vec<&str> = pools[1].iter().map(|d| d.id.as_str()).collect();
            if order_a == order_b {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }
}
