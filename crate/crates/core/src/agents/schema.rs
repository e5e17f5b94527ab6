//! Structural validation of Extractor and Mapper outputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::cir::DomainTag;

const EXTRACTION_REQUIRED: [&str; 6] =
    ["domain_tags", "problem_summary", "entities", "time_model", "explicit_rules", "objective"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitRule {
    pub rid: String,
    pub text: String,
    #[serde(default, rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub applies_to: Vec<String>,
    #[serde(default = "yes")]
    pub hard: bool,
}

fn yes() -> bool {
    true
}

/// Validated Extractor output. `raw` keeps the record as produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub raw: Map<String, Value>,
    pub domain_tags: Vec<DomainTag>,
    pub explicit_rules: Vec<ExplicitRule>,
}

fn tag_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()),
        Value::Array(items) => items.iter().map(|i| i.as_str().map(|s| s.trim().to_string())).collect(),
        _ => None,
    }
}

impl Extraction {
    /// Checks required fields, domain tags, rule ids and the forbidden
    /// `domain_examples` field. Returns every violation found.
    pub fn validate(raw: Map<String, Value>) -> Result<Self, Vec<String>> {
        let mut errs = Vec::new();
        for key in EXTRACTION_REQUIRED {
            if !raw.contains_key(key) {
                errs.push(format!("missing required field {key}"));
            }
        }
        if raw.contains_key("domain_examples") {
            errs.push("forbidden field domain_examples present".to_string());
        }

        let mut domain_tags = Vec::new();
        if let Some(v) = raw.get("domain_tags") {
            match tag_list(v) {
                None => errs.push("domain_tags must be a string or a list of strings".to_string()),
                Some(tags) if tags.is_empty() => errs.push("domain_tags is empty".to_string()),
                Some(tags) => {
                    for t in tags {
                        match t.parse::<DomainTag>() {
                            Ok(tag) if !domain_tags.contains(&tag) => domain_tags.push(tag),
                            Ok(_) => {}
                            Err(_) => errs.push(format!("unknown domain tag {t:?}")),
                        }
                    }
                }
            }
        }
        if let Some(v) = raw.get("problem_summary") {
            if !v.is_string() {
                errs.push("problem_summary must be a string".to_string());
            }
        }
        for key in ["entities", "time_model", "objective"] {
            if let Some(v) = raw.get(key) {
                if !v.is_object() {
                    errs.push(format!("{key} must be an object"));
                }
            }
        }

        let mut explicit_rules = Vec::new();
        match raw.get("explicit_rules") {
            None => {}
            Some(Value::Array(items)) => {
                let mut seen = BTreeSet::new();
                for (i, item) in items.iter().enumerate() {
                    match serde_json::from_value::<ExplicitRule>(item.clone()) {
                        Err(e) => errs.push(format!("explicit_rules[{i}]: {e}")),
                        Ok(rule) if rule.rid.trim().is_empty() => {
                            errs.push(format!("explicit_rules[{i}]: empty rid"));
                        }
                        Ok(rule) => {
                            if !seen.insert(rule.rid.clone()) {
                                errs.push(format!("duplicate rid {}", rule.rid));
                            }
                            explicit_rules.push(rule);
                        }
                    }
                }
            }
            Some(_) => errs.push("explicit_rules must be a list".to_string()),
        }

        if errs.is_empty() {
            Ok(Extraction { raw, domain_tags, explicit_rules })
        } else {
            Err(errs)
        }
    }

    pub fn rule_ids(&self) -> Vec<&str> {
        self.explicit_rules.iter().map(|r| r.rid.as_str()).collect()
    }

    pub fn domain_tag_text(&self) -> String {
        self.domain_tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ")
    }

    /// `time_model.granularity` as prompt text; empty when absent.
    pub fn granularity(&self) -> String {
        match self.raw.get("time_model").and_then(|t| t.get("granularity")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(v) => v.to_string(),
        }
    }

    pub fn to_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.raw).expect("maps serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmScore {
    pub name: String,
    pub fit_score: f64,
    #[serde(default)]
    pub why: String,
    #[serde(default)]
    pub strengths: Vec<String>,
    #[serde(default)]
    pub risks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmCluster {
    pub class_name: String,
    pub rule_ids: Vec<String>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub relationship_strength: String,
    pub top_paradigms: Vec<ParadigmScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTemplateEntry {
    #[serde(default)]
    pub rule_ref: String,
    pub source_rule_ids: Vec<String>,
    #[serde(default)]
    pub intent: String,
}

/// Validated Mapper output.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperSpec {
    pub raw: Map<String, Value>,
    pub constraint_templates: Vec<ConstraintTemplateEntry>,
    pub clusters: Vec<ParadigmCluster>,
    /// Extraction rule ids not referenced by any constraint template.
    pub coverage_gaps: Vec<String>,
}

/// Both spellings of the cluster list are accepted.
pub const CLUSTER_KEYS: [&str; 2] = ["constraint_clusters", "cir_implementation_clusters"];

#[derive(Debug, Clone, PartialEq)]
pub enum MapperProblem {
    Schema(Vec<String>),
    FitScore { cluster: String, paradigm: String, score: f64 },
}

impl MapperSpec {
    pub fn validate(raw: Map<String, Value>, extraction: &Extraction) -> Result<Self, MapperProblem> {
        let mut errs = Vec::new();

        let mut constraint_templates = Vec::new();
        match raw.get("constraint_templates") {
            None => errs.push("missing required field constraint_templates".to_string()),
            Some(Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    match serde_json::from_value::<ConstraintTemplateEntry>(item.clone()) {
                        Err(e) => errs.push(format!("constraint_templates[{i}]: {e}")),
                        Ok(t) if t.source_rule_ids.is_empty() => {
                            errs.push(format!("constraint_templates[{i}]: empty source_rule_ids"))
                        }
                        Ok(t) => constraint_templates.push(t),
                    }
                }
            }
            Some(_) => errs.push("constraint_templates must be a list".to_string()),
        }

        let mut clusters = Vec::new();
        match CLUSTER_KEYS.iter().find_map(|k| raw.get(*k).map(|v| (*k, v))) {
            None => errs.push("missing required field constraint_clusters".to_string()),
            Some((key, Value::Array(items))) => {
                for (i, item) in items.iter().enumerate() {
                    match serde_json::from_value::<ParadigmCluster>(item.clone()) {
                        Err(e) => errs.push(format!("{key}[{i}]: {e}")),
                        Ok(c) => {
                            if c.rule_ids.is_empty() {
                                errs.push(format!("{key}[{i}]: empty rule_ids"));
                            }
                            if c.top_paradigms.len() > 3 {
                                errs.push(format!("{key}[{i}]: more than three top_paradigms"));
                            }
                            clusters.push(c);
                        }
                    }
                }
            }
            Some((key, _)) => errs.push(format!("{key} must be a list")),
        }
        if !errs.is_empty() {
            return Err(MapperProblem::Schema(errs));
        }

        for c in &clusters {
            for p in &c.top_paradigms {
                if !(0.0..=1.0).contains(&p.fit_score) {
                    return Err(MapperProblem::FitScore {
                        cluster: c.class_name.clone(),
                        paradigm: p.name.clone(),
                        score: p.fit_score,
                    });
                }
            }
        }

        let covered: BTreeSet<&str> =
            constraint_templates.iter().flat_map(|t| t.source_rule_ids.iter().map(String::as_str)).collect();
        let coverage_gaps =
            extraction.rule_ids().into_iter().filter(|r| !covered.contains(r)).map(str::to_string).collect();

        Ok(MapperSpec { raw, constraint_templates, clusters, coverage_gaps })
    }

    pub fn to_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.raw).expect("maps serialize")
    }
}
