mod common;

use std::collections::{BTreeMap, HashSet};

use common::{review_corpus, tweet_corpus};
use fairprune::calibkit::{
    build_fair_input, build_fairness_testset, build_mixed_input, build_output_conditioned,
    build_single_sided, read_collections, write_collections, CalibError, Corpus, Domain,
    InputCollection, SetKind, SpdIndexedCollection,
};
use fairprune::iofmt::Document;

fn counts(c: &InputCollection) -> BTreeMap<String, usize> {
    c.label_counts()
}

fn assert_well_formed(c: &InputCollection, domain: Domain) {
    assert_eq!(c.docs().len(), domain.collection_size());
    let ids: HashSet<&str> = c.docs().iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids.len(), c.docs().len(), "duplicate document in {}", c.id());
    if domain == Domain::Review {
        let g = &c.docs()[0].group;
        assert!(c.docs().iter().all(|d| &d.group == g));
    }
}

fn n(c: &InputCollection, label: &str) -> usize {
    counts(c).get(label).copied().unwrap_or(0)
}

#[test]
fn input_side_builders_hold_their_constraints() {
    let tweets = Corpus::new(tweet_corpus(200, 150)).unwrap();
    let reviews = Corpus::new(review_corpus(6, 9, 8)).unwrap();
    for (corpus, domain, a, b) in [
        (&tweets, Domain::Political, "right", "left"),
        (&reviews, Domain::Review, "pos", "neg"),
    ] {
        let size = domain.collection_size();
        for side in [a, b] {
            let set = build_single_sided(corpus, domain, side, 4).unwrap();
            assert_eq!(set.kind, SetKind::SingleSided);
            assert_eq!(set.collections.len(), 128);
            for c in &set.collections {
                assert_well_formed(c, domain);
                assert_eq!(n(c, side), size);
            }
        }

        let fair = build_fair_input(corpus, domain, 4).unwrap();
        assert_eq!(fair.collections.len(), 128);
        for c in &fair.collections {
            assert_well_formed(c, domain);
            assert_eq!((n(c, a), n(c, b)), (size / 2, size / 2));
        }

        let mixed = build_mixed_input(corpus, domain, 4).unwrap();
        assert_eq!(mixed.collections.len(), 128);
        let single = mixed.collections.iter().filter(|c| counts(c).len() == 1).count();
        let balanced = mixed
            .collections
            .iter()
            .filter(|c| n(c, a) == size / 2 && n(c, b) == size / 2)
            .count();
        assert_eq!((single, balanced), (64, 64));
        let single_a = mixed.collections.iter().filter(|c| n(c, a) == size).count();
        assert_eq!(single_a, 32);
        for c in &mixed.collections {
            assert_well_formed(c, domain);
        }

        let test = build_fairness_testset(corpus, domain, 4).unwrap();
        assert_eq!(test.len(), 100);
        for c in &test {
            assert_well_formed(c, domain);
            assert_eq!((n(c, a), n(c, b)), (size / 2, size / 2));
        }
    }
}

#[test]
fn builders_are_pure_functions_of_seed() {
    let corpus = Corpus::new(review_corpus(6, 9, 9)).unwrap();
    let a = build_mixed_input(&corpus, Domain::Review, 21).unwrap();
    let b = build_mixed_input(&corpus, Domain::Review, 21).unwrap();
    let c = build_mixed_input(&corpus, Domain::Review, 22).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn pool(spds: &[f64]) -> Vec<SpdIndexedCollection> {
    let docs = tweet_corpus(30, 30);
    spds.iter()
        .enumerate()
        .map(|(i, &s)| {
            let start = i % 30;
            let c = InputCollection::new(
                format!("pool{i}"),
                Domain::Political,
                docs[start..start + 30].to_vec(),
            )
            .unwrap();
            SpdIndexedCollection::new(c, s).unwrap()
        })
        .collect()
}

#[test]
fn output_conditioned_sets_filter_on_spd() {
    let spds: Vec<f64> = (0..600).map(|i| [-1.0, 1.0, 0.0, 0.5, -0.25, 0.0][i % 6]).collect();
    let pool = pool(&spds);
    let by_id = |id: &str| spds[id.trim_start_matches("pool").parse::<usize>().unwrap()];

    let biased = build_output_conditioned(&pool, SetKind::BiasedOutput, 0.0, 1).unwrap();
    assert_eq!(biased.collections.len(), 128);
    assert!(biased.collections.iter().all(|c| by_id(c.id()).abs() == 1.0));

    let fair = build_output_conditioned(&pool, SetKind::FairOutput, 0.0, 1).unwrap();
    assert_eq!(fair.collections.len(), 128);
    assert!(fair.collections.iter().all(|c| by_id(c.id()) == 0.0));

    let mixed = build_output_conditioned(&pool, SetKind::MixedOutput, 0.0, 1).unwrap();
    let ids: HashSet<&str> = mixed.collections.iter().map(|c| c.id()).collect();
    assert_eq!(ids.len(), 128);
    let nb = mixed.collections.iter().filter(|c| by_id(c.id()).abs() == 1.0).count();
    let nf = mixed.collections.iter().filter(|c| by_id(c.id()) == 0.0).count();
    assert_eq!((nb, nf), (64, 64));

    let short = pool[..100].to_vec();
    assert!(matches!(
        build_output_conditioned(&short, SetKind::FairOutput, 0.0, 1),
        Err(CalibError::InsufficientPool { needed: 128, .. })
    ));
    assert!(matches!(
        build_output_conditioned(&pool, SetKind::FairInput, 0.0, 1),
        Err(CalibError::NotOutputKind(_))
    ));
}

#[test]
fn shortfalls_are_reported() {
    let corpus = Corpus::new(review_corpus(3, 3, 9)).unwrap();
    assert!(matches!(
        build_fair_input(&corpus, Domain::Review, 0),
        Err(CalibError::InsufficientCorpus { .. })
    ));
    let mut docs = review_corpus(2, 8, 8);
    docs[0] = Document::new("short", "too few words here", "pos").with_group("g0");
    let corpus = Corpus::new(docs).unwrap();
    assert!(matches!(
        build_fairness_testset(&corpus, Domain::Review, 0),
        Err(CalibError::ReviewLength { words: 4, .. })
    ));
}

#[test]
fn collections_round_trip_through_jsonl() {
    let corpus = Corpus::new(review_corpus(3, 6, 6)).unwrap();
    let set = build_fair_input(&corpus, Domain::Review, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.jsonl");
    write_collections(&path, &set.collections, Some(set.kind)).unwrap();
    assert_eq!(read_collections(&path).unwrap(), set.collections);
}
