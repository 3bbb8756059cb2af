//! Class description sets and label prompts.

use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Result, WcaError};

pub const DEFAULT_TEMPLATE: &str = "a photo of a {}";
pub const DEFAULT_MAX_DESCRIPTIONS: usize = 50;

/// A class label and its generated descriptions, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DescriptionSet {
    pub label: String,
    pub descriptions: Vec<String>,
}

/// Ordered classes plus the label prompt templates. The first template
/// anchors the description weights; all of them feed the template-ensemble
/// baseline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    classes: Vec<DescriptionSet>,
    templates: Vec<String>,
}

impl LabelCatalog {
    pub fn new(classes: Vec<DescriptionSet>) -> Result<Self> {
        if classes.is_empty() {
            return Err(WcaError::domain("label catalog has no classes"));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &classes {
            if c.label.is_empty() {
                return Err(WcaError::domain("class label must be nonempty"));
            }
            if !seen.insert(c.label.as_str()) {
                return Err(WcaError::domain(format!("duplicate class {:?}", c.label)));
            }
            if c.descriptions.is_empty() {
                return Err(WcaError::domain(format!("class {:?} has no descriptions", c.label)));
            }
            if let Some(j) = c.descriptions.iter().position(String::is_empty) {
                return Err(WcaError::domain(format!(
                    "class {:?} description {j} is empty",
                    c.label
                )));
            }
        }
        Ok(LabelCatalog {
            classes,
            templates: vec![DEFAULT_TEMPLATE.to_string()],
        })
    }

    /// Replaces the template list; every template must have one `{}`.
    pub fn with_templates(mut self, templates: Vec<String>) -> Result<Self> {
        if templates.is_empty() {
            return Err(WcaError::config("at least one label template is required"));
        }
        for t in &templates {
            check_template(t)?;
        }
        self.templates = templates;
        Ok(self)
    }

    pub fn classes(&self) -> &[DescriptionSet] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.label == label)
    }

    pub fn template(&self) -> &str {
        &self.templates[0]
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    /// Label prompt of class `label` under the primary template.
    pub fn prompt_for(&self, label: &str) -> String {
        label_prompt(label, self.template()).expect("templates validated on construction")
    }

    /// Label -> descriptions, in catalog order.
    pub fn to_map(&self) -> IndexMap<String, Vec<String>> {
        self.classes
            .iter()
            .map(|c| (c.label.clone(), c.descriptions.clone()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_map()).expect("string map serializes")
    }
}

fn check_template(template: &str) -> Result<()> {
    let n = template.matches("{}").count();
    if n != 1 {
        return Err(WcaError::config(format!(
            "template {template:?} must contain exactly one {{}} placeholder, found {n}"
        )));
    }
    Ok(())
}

/// Substitutes `label` for the single `{}` in `template`.
pub fn label_prompt(label: &str, template: &str) -> Result<String> {
    check_template(template)?;
    Ok(template.replacen("{}", label, 1))
}

/// JSON object of class -> descriptions, keeping key order and rejecting
/// repeated keys.
struct OrderedClasses(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for OrderedClasses {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ClassVisitor;

        impl<'de> Visitor<'de> for ClassVisitor {
            type Value = OrderedClasses;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping class names to arrays of descriptions")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out: Vec<(String, Vec<String>)> = Vec::new();
                while let Some((label, descs)) = map.next_entry::<String, Vec<String>>()? {
                    if out.iter().any(|(l, _)| *l == label) {
                        return Err(serde::de::Error::custom(format!("duplicate class {label:?}")));
                    }
                    out.push((label, descs));
                }
                Ok(OrderedClasses(out))
            }
        }

        deserializer.deserialize_map(ClassVisitor)
    }
}

/// Parses description JSON. `max_descriptions` keeps the first `M` per class.
pub fn parse_descriptions(json: &str, max_descriptions: Option<usize>, path: &Path) -> Result<LabelCatalog> {
    let ingest = |message: String| WcaError::Ingestion {
        path: path.to_path_buf(),
        message,
    };
    if max_descriptions == Some(0) {
        return Err(WcaError::config("--max-descriptions must be at least 1"));
    }
    let OrderedClasses(entries) =
        serde_json::from_str(json).map_err(|e| ingest(format!("malformed JSON: {e}")))?;
    if entries.is_empty() {
        return Err(ingest("no classes".to_string()));
    }
    let mut classes = Vec::with_capacity(entries.len());
    for (label, mut descriptions) in entries {
        if label.is_empty() {
            return Err(ingest("empty class name".to_string()));
        }
        if descriptions.is_empty() {
            return Err(ingest(format!("class {label:?} has no descriptions")));
        }
        if let Some(j) = descriptions.iter().position(String::is_empty) {
            return Err(ingest(format!("class {label:?} description {j} is empty")));
        }
        if let Some(m) = max_descriptions {
            descriptions.truncate(m);
        }
        classes.push(DescriptionSet { label, descriptions });
    }
    LabelCatalog::new(classes).map_err(|e| ingest(e.to_string()))
}

/// Reads a description file.
pub fn load_descriptions(path: impl AsRef<Path>, max_descriptions: Option<usize>) -> Result<LabelCatalog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| WcaError::io(path, e))?;
    parse_descriptions(&text, max_descriptions, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(json: &str, m: Option<usize>) -> Result<LabelCatalog> {
        parse_descriptions(json, m, Path::new("d.json"))
    }

    #[test]
    fn minimal_file() {
        let c = parse(r#"{"cat": ["a small feline"], "dog": ["a loyal canine"]}"#, None).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.labels().collect::<Vec<_>>(), ["cat", "dog"]);
        assert!(c.classes().iter().all(|s| s.descriptions.len() == 1));
    }

    #[test]
    fn order_is_file_order() {
        let c = parse(r#"{"zebra": ["x"], "ant": ["y"], "moose": ["z"]}"#, None).unwrap();
        assert_eq!(c.labels().collect::<Vec<_>>(), ["zebra", "ant", "moose"]);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let c = parse(r#"{"cat": ["one", "two", "three"], "dog": ["a"]}"#, Some(1)).unwrap();
        assert_eq!(c.classes()[0].descriptions, ["one"]);
        assert_eq!(c.classes()[1].descriptions, ["a"]);
    }

    #[test]
    fn empty_class_rejected_by_name() {
        match parse(r#"{"cat": []}"#, None) {
            Err(WcaError::Ingestion { message, .. }) => assert!(message.contains("\"cat\"")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_empty_files() {
        assert!(matches!(parse("{\"cat\": [", None), Err(WcaError::Ingestion { .. })));
        assert!(matches!(parse("{}", None), Err(WcaError::Ingestion { .. })));
        assert!(matches!(parse("[1, 2]", None), Err(WcaError::Ingestion { .. })));
        assert!(matches!(parse(r#"{"a": ["x"], "a": ["y"]}"#, None), Err(WcaError::Ingestion { .. })));
        assert!(matches!(parse(r#"{"a": [""]}"#, None), Err(WcaError::Ingestion { .. })));
    }

    #[test]
    fn label_prompt_examples() {
        assert_eq!(label_prompt("jackfruit", "a photo of a {}").unwrap(), "a photo of a jackfruit");
        assert_eq!(label_prompt("dog", "{}").unwrap(), "dog");
        assert!(matches!(label_prompt("x", "no placeholder"), Err(WcaError::Config(_))));
        assert!(matches!(label_prompt("x", "{} and {}"), Err(WcaError::Config(_))));
    }

    #[test]
    fn templates_validated() {
        let c = parse(r#"{"cat": ["x"]}"#, None).unwrap();
        assert_eq!(c.prompt_for("cat"), "a photo of a cat");
        assert!(c.clone().with_templates(vec!["bad".into()]).is_err());
        let c = c.with_templates(vec!["{}".into(), "art of a {}".into()]).unwrap();
        assert_eq!(c.prompt_for("cat"), "cat");
    }

    fn catalog_map() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
        prop::collection::vec(
            ("[a-z]{1,8}", prop::collection::vec("[a-z ]{1,12}", 1..6)),
            1..8,
        )
        .prop_map(|mut v| {
            let mut seen = std::collections::HashSet::new();
            v.retain(|(l, _)| seen.insert(l.clone()));
            v
        })
    }

    proptest! {
        #[test]
        fn loading_is_lossless(entries in catalog_map()) {
            let map: IndexMap<String, Vec<String>> = entries.into_iter().collect();
            let json = serde_json::to_string(&map).unwrap();
            let c = parse(&json, None).unwrap();
            prop_assert_eq!(&c.to_map(), &map);
            let again = parse(&c.to_json(), None).unwrap();
            prop_assert_eq!(&again, &c);
            prop_assert_eq!(parse(&json, Some(usize::MAX)).unwrap(), c);
        }
    }
}
