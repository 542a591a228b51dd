use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trapdex::classify::ScoredLabel;
use trapdex::{
    retrieval_provider, route_and_classify, Arrangement, DetectionCategory, DetectionRecord, EmbeddingMatrix,
    EmptyStrategy, ImageRecord, MatchMode, Matcher, MatchingConfig, Metric, NormBox, PredictionTable, Provenance,
    RouterConfig, ScoreProvider, Variant,
};

fn ranking(label: u32) -> Vec<ScoredLabel> {
    vec![ScoredLabel { label, score: 1.0 }]
}

fn detection(id: &str) -> DetectionRecord {
    DetectionRecord::new(id, DetectionCategory::Animal, 0.9, NormBox::new(0.1, 0.1, 0.3, 0.3)).unwrap()
}

#[test]
fn every_branch_has_exactly_one_provenance() {
    let img = ImageRecord::new("i1", "loc");
    let mut crop = PredictionTable::new();
    crop.insert("i1", Variant::Cropped, ranking(1)).unwrap();
    crop.insert("i1", Variant::Full, ranking(2)).unwrap();
    let mut full = PredictionTable::new();
    full.insert("i1", Variant::Full, ranking(3)).unwrap();
    let det = detection("i1");

    for strategy in [EmptyStrategy::DeclareEmpty, EmptyStrategy::SecondClassifier] {
        for arrangement in [Arrangement::SingleShared, Arrangement::TwoSeparate] {
            for has_det in [true, false] {
                for with_full in [true, false] {
                    let cfg = RouterConfig {
                        empty_strategy: strategy,
                        arrangement,
                        empty_label: Some(0),
                        ..Default::default()
                    };
                    let full_p = with_full.then_some(&full as &dyn ScoreProvider);
                    let r = route_and_classify(&img, has_det.then_some(&det), &crop, full_p, &cfg);
                    let expected = match (has_det, strategy, arrangement, with_full) {
                        (true, ..) => Some((Provenance::CropClassifier, 1)),
                        (false, EmptyStrategy::DeclareEmpty, ..) => Some((Provenance::EmptyRule, 0)),
                        (false, EmptyStrategy::SecondClassifier, _, true) => Some((Provenance::FullClassifier, 3)),
                        (false, EmptyStrategy::SecondClassifier, Arrangement::SingleShared, false) => {
                            Some((Provenance::FullClassifier, 2))
                        }
                        (false, EmptyStrategy::SecondClassifier, Arrangement::TwoSeparate, false) => None,
                    };
                    match expected {
                        Some((prov, head)) => {
                            let p = r.unwrap();
                            assert_eq!(p.provenance, Some(prov));
                            assert_eq!(p.head(), Some(head));
                        }
                        None => assert!(r.is_err()),
                    }
                }
            }
        }
    }
}

#[test]
fn missing_coverage_is_an_error() {
    let img = ImageRecord::new("absent", "loc");
    let crop = PredictionTable::new();
    let cfg = RouterConfig::default();
    let det = detection("absent");
    let err = route_and_classify(&img, Some(&det), &crop, None, &cfg).unwrap_err();
    assert!(matches!(err, trapdex::Error::MissingCoverage { .. }));
    assert!(cfg.validate(false).is_err());
    assert!(RouterConfig {
        empty_strategy: EmptyStrategy::DeclareEmpty,
        ..cfg
    }
    .validate(true)
    .is_err());
}

fn clusters(
    seed: u64,
    classes: u32,
    per_class: usize,
    d: usize,
    sep: f64,
    sigma: f64,
) -> (Vec<Vec<f64>>, Vec<Option<u32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            let row = (0..d)
                .map(|j| if j == c as usize { sep } else { 0.0 } + rng.random_range(-sigma..sigma))
                .collect();
            rows.push(row);
            labels.push(Some(c));
        }
    }
    (rows, labels)
}

#[test]
fn planted_clusters_are_recovered_by_both_modes() {
    let (db_rows, db_labels) = clusters(1, 3, 30, 6, 10.0, 1.0);
    let (q_rows, q_labels) = clusters(2, 3, 10, 6, 10.0, 1.0);
    let db = EmbeddingMatrix::from_rows(&db_rows, db_labels).unwrap();
    let queries = EmbeddingMatrix::from_rows(&q_rows, q_labels.clone()).unwrap();
    let mut heads = Vec::new();
    for mode in [MatchMode::Knn, MatchMode::Centroid] {
        let cfg = MatchingConfig {
            mode,
            metric: Metric::L2,
            k: 1,
            ranking_len: 3,
        };
        let matcher = Matcher::build(db.clone(), &cfg).unwrap();
        let table = retrieval_provider(&matcher, &queries, Variant::Cropped, 3).unwrap();
        assert_eq!(table.len(), queries.len());
        let h: Vec<u32> = queries
            .ids()
            .iter()
            .map(|id| table.ranking(id, Variant::Cropped).unwrap()[0].label)
            .collect();
        assert_eq!(h, q_labels.iter().map(|l| l.unwrap()).collect::<Vec<_>>());
        heads.push(h);
    }
    assert_eq!(heads[0], heads[1]);
}

#[test]
fn query_equal_to_db_row_returns_its_label() {
    let rows = vec![vec![1.0f32, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]];
    let db = EmbeddingMatrix::from_rows(&rows, vec![Some(4), Some(2), Some(9)]).unwrap();
    let matcher = Matcher::build(db, &MatchingConfig::default()).unwrap();
    for (row, label) in rows.iter().zip([4, 2, 9]) {
        assert_eq!(matcher.classify(row).unwrap()[0].label, label);
    }
}
