mod common;

use std::collections::BTreeMap;

use common::fixture;
use proptest::prelude::*;
use trapdex::ingest::{DetectionFile, DetectionImage};
use trapdex::{
    parse_coco_cameratraps, parse_megadetector_json, DetectionCategory, DetectionRecord, Error, NormBox, SplitTag,
};

fn read(name: &str) -> Vec<u8> {
    std::fs::read(fixture(name)).unwrap()
}

#[test]
fn megadetector_fixture_parses() {
    let f = parse_megadetector_json(&read("md_batch.json"), "md_batch.json").unwrap();
    assert_eq!(f.images.len(), 7);
    assert_eq!(f.format_version.as_deref(), Some("1.3"));
    let b = f.detections_for("loc1/b.jpg").unwrap();
    assert_eq!(b.len(), 2);
    assert_eq!(b[0].category, DetectionCategory::Person);
    assert_eq!(b[1].image_id, "loc1/b.jpg");
    let failed = f.images.iter().find(|i| i.file == "loc10/f.jpg").unwrap();
    assert!(failed.detections.is_empty());
    assert!(failed.failure.is_some());
    assert!(f.detections_for("loc2/d.jpg").unwrap().is_empty());
}

#[test]
fn coco_fixture_parses() {
    let set = parse_coco_cameratraps(&read("coco_ct.json"), "coco_ct.json").unwrap();
    let names: Vec<&str> = set.label_space.labels().iter().map(|l| l.name.as_str()).collect();
    assert_eq!(names, ["empty", "bobcat", "coyote", "raccoon"]);
    assert_eq!(set.source_category_ids, [0, 1, 5, 9]);
    assert_eq!(set.excluded_multi_species.len(), 1);
    assert_eq!(set.excluded_multi_species[0].image_id, "img07");
    assert_eq!(set.excluded_multi_species[0].file_name, "loc10/g.jpg");
    assert_eq!(set.images.len(), 6);
    let gt = set.ground_truth();
    assert_eq!(gt["img01"], 1);
    assert_eq!(gt["img03"], 3);
    assert_eq!(gt["img04"], set.label_space.empty_id().unwrap());
    let e = set.image("img05").unwrap();
    assert_eq!(e.location_id, "10");
    assert_eq!(e.split_tag, Some(SplitTag::Trans));
    assert_eq!(e.timestamp.unwrap().to_string(), "2013-06-11 03:30:00");
    assert_eq!((e.width, e.height), (2048, 1536));
}

#[test]
fn errors_carry_file_and_index() {
    let doc = br#"{"images":[{"file":"a.jpg","detections":[]},
                             {"file":"b.jpg","detections":[{"category":"1","conf":1.5,"bbox":[0,0,1,1]}]}]}"#;
    let msg = parse_megadetector_json(doc, "batch7.json").unwrap_err().to_string();
    assert!(msg.contains("batch7.json") && msg.contains('1'), "{msg}");

    let coco = br#"{"images":[{"id":1,"file_name":"a","width":4,"height":4}],
                    "annotations":[{"image_id":"x","category_id":0}],
                    "categories":[{"id":0,"name":"cat"}]}"#;
    let err = parse_coco_cameratraps(coco, "ann.json").unwrap_err();
    assert!(matches!(&err, Error::Parse { index: Some(0), .. }), "{err}");
    assert!(err.to_string().contains("ann.json"));
}

fn category() -> impl Strategy<Value = DetectionCategory> {
    prop_oneof![
        Just(DetectionCategory::Animal),
        Just(DetectionCategory::Person),
        Just(DetectionCategory::Vehicle)
    ]
}

fn detection_file() -> impl Strategy<Value = DetectionFile> {
    let det = (category(), 0u32..=1000, 0u32..900, 0u32..900, 1u32..100, 1u32..100);
    let image = (
        "[a-z]{1,8}\\.jpg",
        prop::collection::vec(det, 0..4),
        prop::option::of("[A-Za-z ]{1,12}"),
    );
    (prop::collection::vec(image, 0..6), prop::option::of("1\\.[0-9]")).prop_map(|(images, version)| {
        let images = images
            .into_iter()
            .enumerate()
            .map(|(i, (name, dets, failure))| {
                let file = format!("{i}/{name}");
                // milli-units keep every coordinate exactly representable after a text round trip
                let detections = if failure.is_some() {
                    Vec::new()
                } else {
                    dets.into_iter()
                        .map(|(cat, conf, x, y, w, h)| {
                            let bbox = NormBox::new(
                                x as f64 / 1000.0,
                                y as f64 / 1000.0,
                                w as f64 / 1000.0,
                                h as f64 / 1000.0,
                            );
                            DetectionRecord::new(file.clone(), cat, conf as f64 / 1000.0, bbox).unwrap()
                        })
                        .collect()
                };
                DetectionImage {
                    file,
                    detections,
                    failure,
                }
            })
            .collect();
        let category_map = BTreeMap::from([
            ("1".to_string(), DetectionCategory::Animal),
            ("2".to_string(), DetectionCategory::Person),
            ("3".to_string(), DetectionCategory::Vehicle),
        ]);
        DetectionFile {
            images,
            category_map,
            format_version: version,
        }
    })
}

proptest! {
    #[test]
    fn parse_after_serialize_is_identity(file in detection_file()) {
        let text = serde_json::to_vec(&file.to_json()).unwrap();
        let back = parse_megadetector_json(&text, "generated.json").unwrap();
        prop_assert_eq!(back, file);
    }
}
