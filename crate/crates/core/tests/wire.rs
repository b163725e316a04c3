use std::fs;
use std::path::Path;

use cotrain_core::detector::wire::{self, DetectRequestFile, DetectionsFile, TrainRequestFile};
use cotrain_core::detector::{DetectImage, DetectRequest, TrainImage, TrainRequest};
use cotrain_core::labels::Thresholds;
use cotrain_core::types::{BoundingBox, LabelRecord, LabelSource, View};

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire").join(name)).unwrap()
}

#[test]
fn train_request_encodes_to_golden() {
    let label = |c: &str, b: [f64; 4], source| LabelRecord {
        category: c.into(),
        bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        source,
    };
    let req = TrainRequest {
        view: View::Two,
        cycle: 4,
        images: vec![
            TrainImage {
                id: "img_000000".into(),
                payload_ref: "depth/img_000000.png".into(),
                labels: vec![label("vehicle", [10.0, 20.0, 110.5, 80.0], LabelSource::Human)],
                mine_negatives: true,
            },
            TrainImage {
                id: "img_000007".into(),
                payload_ref: "depth/img_000007.png".into(),
                labels: vec![label("pedestrian", [300.0, 40.0, 325.0, 110.0], LabelSource::Pseudo { cycle: 3 })],
                mine_negatives: false,
            },
        ],
    };
    let text = golden("train.json");
    assert_eq!(wire::encode(&TrainRequestFile::from(&req)), text);
    let back: TrainRequestFile = wire::decode(&text).unwrap();
    assert_eq!(wire::encode(&back), text);
}

#[test]
fn detect_request_encodes_to_golden() {
    let req = DetectRequest {
        view: View::One,
        thresholds: Thresholds::uniform(["vehicle", "pedestrian"], 0.8),
        images: vec![DetectImage { id: "img_000003".into(), payload_ref: "rgb/img_000003.png".into() }],
    };
    let text = golden("detect.json");
    assert_eq!(wire::encode(&DetectRequestFile::from(&req)), text);
    let back: DetectRequestFile = wire::decode(&text).unwrap();
    assert_eq!(wire::encode(&back), text);
}

#[test]
fn detections_round_trip_byte_exact() {
    let text = golden("detections.json");
    let parsed: DetectionsFile = wire::decode(&text).unwrap();
    assert_eq!(parsed.results["img_000003"][0].confidence, 0.93);
    assert!(parsed.results["img_000004"].is_empty());
    assert_eq!(wire::encode(&parsed), text);
}

#[test]
fn malformed_response_is_a_protocol_error() {
    let text = golden("detections.json").replace("\"confidence\": 0.93", "\"score\": 0.93");
    let err = wire::decode::<DetectionsFile>(&text).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("results.img_000003[0].confidence"), "{err}");
}
