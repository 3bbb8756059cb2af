use wca_core::encoder::SyntheticEncoder;
use wca_core::text_prompt::{DescriptionSet, LabelCatalog};
use wca_core::visual_prompt::{ImageBuffer, PromptStyle};
use wca_core::{Aggregation, Classifier, RunConfig, WcaError};

fn catalog() -> LabelCatalog {
    LabelCatalog::new(vec![
        DescriptionSet {
            label: "cat".into(),
            descriptions: vec!["whiskers".into(), "pointed ears".into(), "fur".into()],
        },
        DescriptionSet {
            label: "car".into(),
            descriptions: vec!["wheels".into(), "headlights".into()],
        },
        DescriptionSet {
            label: "tree".into(),
            descriptions: vec!["bark".into(), "leaves".into(), "branches".into(), "roots".into()],
        },
    ])
    .unwrap()
}

fn image() -> ImageBuffer {
    ImageBuffer::from_fn(96, 72, |x, y| [(x * 2) as u8, (y * 3) as u8, ((x * y) % 251) as u8]).unwrap()
}

fn cfg(agg: Aggregation, style: PromptStyle) -> RunConfig {
    let mut cfg = RunConfig {
        aggregation: agg,
        ..RunConfig::default()
    };
    cfg.prompt.num_crops = 12;
    cfg.prompt.style = style;
    cfg
}

#[test]
fn pixel_classification_is_reproducible() {
    let enc = SyntheticEncoder::new(24, 5).unwrap();
    let cat = catalog();
    let img = image();
    for style in [PromptStyle::Crop, PromptStyle::RedCircle, PromptStyle::Blur, PromptStyle::Greyscale] {
        let c = Classifier::new(&cat, &enc, cfg(Aggregation::Wca, style)).unwrap();
        let a = c.classify("sample", Some(&img), false).unwrap();
        let b = c.classify("sample", Some(&img), false).unwrap();
        assert_eq!(a.per_class_scores, b.per_class_scores, "{style:?}");
        assert_eq!(a.per_class_scores.len(), 3);
    }
}

#[test]
fn crops_depend_on_image_id_and_seed() {
    let enc = SyntheticEncoder::new(24, 5).unwrap();
    let cat = catalog();
    let img = image();
    let c = Classifier::new(&cat, &enc, cfg(Aggregation::Wca, PromptStyle::Crop)).unwrap();
    let a = c.classify("one", Some(&img), false).unwrap();
    let b = c.classify("two", Some(&img), false).unwrap();
    assert_ne!(a.per_class_scores, b.per_class_scores);

    let mut reseeded = cfg(Aggregation::Wca, PromptStyle::Crop);
    reseeded.prompt.seed = 99;
    let c2 = Classifier::new(&cat, &enc, reseeded).unwrap();
    let a2 = c2.classify("one", Some(&img), false).unwrap();
    assert_ne!(a.per_class_scores, a2.per_class_scores);
}

#[test]
fn every_aggregation_scores_pixels() {
    let enc = SyntheticEncoder::new(24, 5).unwrap();
    let cat = catalog();
    let img = image();
    for agg in [
        Aggregation::Wca,
        Aggregation::Avg,
        Aggregation::Max,
        Aggregation::Llm,
        Aggregation::Clip,
        Aggregation::ClipE,
    ] {
        let c = Classifier::new(&cat, &enc, cfg(agg, PromptStyle::Crop)).unwrap();
        let r = c.classify("sample", Some(&img), false).unwrap();
        assert!(r.per_class_scores.values().all(|s| s.is_finite() && s.abs() <= 1.0 + 1e-9), "{agg:?}");
    }
    let mut mixed = cfg(Aggregation::Mixed, PromptStyle::Crop);
    mixed.lambda = Some(0.3);
    let r = Classifier::new(&cat, &enc, mixed).unwrap().classify("sample", Some(&img), false).unwrap();
    assert_eq!(r.per_class_scores.len(), 3);
}

#[test]
fn explanation_from_pixels_adds_up() {
    let enc = SyntheticEncoder::new(24, 5).unwrap();
    let cat = catalog();
    let c = Classifier::new(&cat, &enc, cfg(Aggregation::Wca, PromptStyle::Crop)).unwrap();
    let r = c.classify("sample", Some(&image()), true).unwrap();
    let ex = r.explanation.unwrap();
    assert_eq!(ex[0].label, r.predicted_label);
    for class in &ex {
        let total: f64 = class.rows.iter().map(|row| row.contribution).sum();
        assert!((total - class.score).abs() < 1e-9);
        let weights: f64 = class.rows.iter().map(|row| row.weight).sum();
        assert!((weights - 1.0).abs() < 1e-9);
    }
}

#[test]
fn one_pixel_image_still_classifies() {
    // crop sides clamp to one pixel, so every crop is the whole image and
    // the crop average collapses to the description average
    let enc = SyntheticEncoder::new(8, 5).unwrap();
    let cat = catalog();
    let tiny = ImageBuffer::from_fn(1, 1, |_, _| [10, 20, 30]).unwrap();
    let avg = Classifier::new(&cat, &enc, cfg(Aggregation::Avg, PromptStyle::Crop)).unwrap();
    let llm = Classifier::new(&cat, &enc, cfg(Aggregation::Llm, PromptStyle::Crop)).unwrap();
    let a = avg.classify("tiny", Some(&tiny), false).unwrap();
    let b = llm.classify("tiny", Some(&tiny), false).unwrap();
    for (x, y) in a.per_class_scores.values().zip(b.per_class_scores.values()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn missing_pixels_for_pixel_backend() {
    let enc = SyntheticEncoder::new(8, 5).unwrap();
    let cat = catalog();
    let c = Classifier::new(&cat, &enc, cfg(Aggregation::Wca, PromptStyle::Crop)).unwrap();
    assert!(matches!(c.classify("nopix", None, false), Err(WcaError::Config(_))));
}
