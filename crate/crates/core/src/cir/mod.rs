//! Canonical intermediate representation (CIR).
//!
//! A [`CirTemplate`] bundles semantically equivalent constraint forms for one
//! operational intent, one list of forms per modeling paradigm. A
//! [`CirImplementation`] picks a template, a source rule and a paradigm and
//! binds the template's placeholders to problem entities. A model is the
//! ordered union of every implementation's instantiated forms
//! ([`assemble_model`]).
//!
//! The [`oracle`] submodule checks, by exhaustive enumeration over a small
//! integer instance, that every model-feasible assignment satisfies the rule
//! predicates the model was built from.

pub mod expr;
pub mod oracle;
pub mod predicate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use expr::{Binding, Comparator, Expression, LinearRow};

use crate::kb::KnowledgeBase;

/// The ten application domains a template or problem can be tagged with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DomainTag {
    #[serde(rename = "crew")]
    Crew,
    #[serde(rename = "education")]
    Education,
    #[serde(rename = "energy")]
    Energy,
    #[serde(rename = "healthcare")]
    Healthcare,
    #[serde(rename = "supply_chain_and_production")]
    SupplyChainAndProduction,
    #[serde(rename = "project")]
    Project,
    #[serde(rename = "resource")]
    Resource,
    #[serde(rename = "sports")]
    Sports,
    #[serde(rename = "job shop")]
    JobShop,
    #[serde(rename = "transportation")]
    Transportation,
}

impl DomainTag {
    pub const ALL: [DomainTag; 10] = [
        DomainTag::Crew,
        DomainTag::Education,
        DomainTag::Energy,
        DomainTag::Healthcare,
        DomainTag::SupplyChainAndProduction,
        DomainTag::Project,
        DomainTag::Resource,
        DomainTag::Sports,
        DomainTag::JobShop,
        DomainTag::Transportation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Crew => "crew",
            DomainTag::Education => "education",
            DomainTag::Energy => "energy",
            DomainTag::Healthcare => "healthcare",
            DomainTag::SupplyChainAndProduction => "supply_chain_and_production",
            DomainTag::Project => "project",
            DomainTag::Resource => "resource",
            DomainTag::Sports => "sports",
            DomainTag::JobShop => "job shop",
            DomainTag::Transportation => "transportation",
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown domain tag {0:?}")]
pub struct UnknownDomainTag(pub String);

impl FromStr for DomainTag {
    type Err = UnknownDomainTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownDomainTag(s.to_string()))
    }
}

/// Name of a modeling paradigm, e.g. `continuous_time` or `time_indexed`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParadigmId(pub String);

impl ParadigmId {
    pub fn new(name: impl Into<String>) -> Self {
        ParadigmId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParadigmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Machine-checkable meaning of a template, used by the soundness oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SemanticKind {
    NoOverlap,
    CapacityLeq,
    Precedence,
    AtMostOnePerGroup,
    Opaque,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintForm {
    pub placeholders: Vec<String>,
    pub expr_template: String,
    #[serde(default)]
    pub quantifier_note: String,
    /// Free-text rendering of the general form, shown to the Mapper.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
}

impl ConstraintForm {
    pub fn parsed(&self) -> Result<Expression, expr::ExprError> {
        expr::parse_template(&self.expr_template)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirTemplate {
    pub template_id: String,
    pub domain_tag: DomainTag,
    pub intent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_kind: Option<SemanticKind>,
    pub supported_paradigms: Vec<ParadigmId>,
    pub forms: BTreeMap<ParadigmId, Vec<ConstraintForm>>,
    #[serde(default)]
    pub notes: String,
}

impl CirTemplate {
    /// Checks the template's structural invariants. Returns one message per
    /// violation, each prefixed with a field path.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.template_id.trim().is_empty() {
            out.push("template_id: must be non-empty".to_string());
        }
        if self.supported_paradigms.is_empty() {
            out.push("supported_paradigms: must be non-empty".to_string());
        }
        for (paradigm, forms) in &self.forms {
            if !self.supported_paradigms.contains(paradigm) {
                out.push(format!("forms.{paradigm}: paradigm not listed in supported_paradigms"));
            }
            for (i, form) in forms.iter().enumerate() {
                let path = format!("forms.{paradigm}[{i}]");
                match form.parsed() {
                    Err(e) => out.push(format!("{path}.expr_template: {e}")),
                    Ok(parsed) => {
                        for sym in parsed.symbols() {
                            if !form.placeholders.iter().any(|p| p == sym) {
                                out.push(format!(
                                    "{path}.expr_template: symbol {sym:?} is not a declared placeholder"
                                ));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forms_for(&self, paradigm: &ParadigmId) -> &[ConstraintForm] {
        self.forms.get(paradigm).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_oracle_checkable(&self) -> bool {
        !matches!(self.semantic_kind, None | Some(SemanticKind::Opaque))
    }
}

/// `(archetype, source rule, paradigm)` plus placeholder bindings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirImplementation {
    pub archetype_id: String,
    pub source_rule_id: String,
    pub paradigm: ParadigmId,
    #[serde(default)]
    pub bindings: BTreeMap<String, Binding>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    #[serde(default)]
    pub kind: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

/// Problem entities plus the CIR implementations chosen for its rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemCir {
    #[serde(default)]
    pub entities: BTreeMap<String, EntityRecord>,
    #[serde(default)]
    pub implementations: Vec<CirImplementation>,
}

impl ProblemCir {
    /// Every `source_rule_id` must name a rule of the originating extraction.
    pub fn check_rule_references<S: AsRef<str>>(&self, rule_ids: &[S]) -> Result<(), CirError> {
        for (index, imp) in self.implementations.iter().enumerate() {
            if !rule_ids.iter().any(|r| r.as_ref() == imp.source_rule_id) {
                return Err(CirError::UnknownRule { index, rule_id: imp.source_rule_id.clone() });
            }
        }
        Ok(())
    }
}

/// One instantiated constraint form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub implementation_index: usize,
    pub archetype_id: String,
    pub source_rule_id: String,
    pub paradigm: ParadigmId,
    pub quantifier_note: String,
    pub expression: Expression,
}

impl ConstraintBlock {
    pub fn text(&self) -> String {
        self.expression.to_string()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CirError {
    #[error("implementation #{index}: unknown archetype {archetype_id:?}")]
    UnknownArchetype { index: usize, archetype_id: String },
    #[error("implementation #{index}: archetype {archetype_id:?} does not support paradigm {paradigm:?}")]
    UnsupportedParadigm { index: usize, archetype_id: String, paradigm: String },
    #[error("implementation #{index}: placeholder {placeholder:?} of archetype {archetype_id:?} is unbound")]
    UnboundPlaceholder { index: usize, archetype_id: String, placeholder: String },
    #[error("implementation #{index}: {source}")]
    Expression {
        index: usize,
        #[source]
        source: expr::ExprError,
    },
    #[error("implementation #{index}: source rule {rule_id:?} is not in the extraction")]
    UnknownRule { index: usize, rule_id: String },
}

/// Instantiates every implementation against its template and concatenates
/// the resulting rows in implementation order. No deduplication.
pub fn assemble_model(cir: &ProblemCir, kb: &KnowledgeBase) -> Result<Vec<ConstraintBlock>, CirError> {
    let mut blocks = Vec::new();
    for (index, imp) in cir.implementations.iter().enumerate() {
        let template = kb.template(&imp.archetype_id).ok_or_else(|| CirError::UnknownArchetype {
            index,
            archetype_id: imp.archetype_id.clone(),
        })?;
        if !template.supported_paradigms.contains(&imp.paradigm) {
            return Err(CirError::UnsupportedParadigm {
                index,
                archetype_id: imp.archetype_id.clone(),
                paradigm: imp.paradigm.0.clone(),
            });
        }
        let forms = template.forms_for(&imp.paradigm);
        for form in forms {
            if let Some(p) = form.placeholders.iter().find(|p| !imp.bindings.contains_key(*p)) {
                return Err(CirError::UnboundPlaceholder {
                    index,
                    archetype_id: imp.archetype_id.clone(),
                    placeholder: p.clone(),
                });
            }
        }
        for form in forms {
            let expression = form
                .parsed()
                .and_then(|e| e.bind(&imp.bindings))
                .map_err(|source| CirError::Expression { index, source })?;
            blocks.push(ConstraintBlock {
                implementation_index: index,
                archetype_id: imp.archetype_id.clone(),
                source_rule_id: imp.source_rule_id.clone(),
                paradigm: imp.paradigm.clone(),
                quantifier_note: form.quantifier_note.clone(),
                expression,
            });
        }
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(id: &str) -> CirTemplate {
        let form = |e: &str, ph: &[&str]| ConstraintForm {
            placeholders: ph.iter().map(|s| s.to_string()).collect(),
            expr_template: e.to_string(),
            quantifier_note: String::new(),
            display: None,
        };
        let mut forms = BTreeMap::new();
        forms.insert(
            ParadigmId::new("continuous_time"),
            vec![form("S_b - S_a >= p_a", &["S_a", "S_b", "p_a"])],
        );
        forms.insert(ParadigmId::new("time_indexed"), vec![form("x_a + x_b <= 1", &["x_a", "x_b"])]);
        CirTemplate {
            template_id: id.into(),
            domain_tag: DomainTag::JobShop,
            intent: "test".into(),
            semantic_kind: Some(SemanticKind::Precedence),
            supported_paradigms: vec![ParadigmId::new("continuous_time"), ParadigmId::new("time_indexed")],
            forms,
            notes: String::new(),
        }
    }

    #[test]
    fn domain_tags_round_trip() {
        for tag in DomainTag::ALL {
            assert_eq!(tag.as_str().parse::<DomainTag>().unwrap(), tag);
            let json = serde_json::to_string(&tag).unwrap();
            assert_eq!(json, format!("\"{}\"", tag.as_str()));
        }
        assert!("jobshop".parse::<DomainTag>().is_err());
    }

    #[test]
    fn template_invariants() {
        let t = template("a");
        assert!(t.violations().is_empty());

        let mut bad = t.clone();
        bad.supported_paradigms.clear();
        let v = bad.violations();
        assert!(v.iter().any(|m| m.starts_with("supported_paradigms")));
        assert!(v.iter().any(|m| m.contains("not listed in supported_paradigms")));

        let mut bad = t.clone();
        bad.forms.get_mut(&ParadigmId::new("time_indexed")).unwrap()[0].placeholders.pop();
        assert!(bad.violations().iter().any(|m| m.contains("\"x_b\" is not a declared placeholder")));

        let mut bad = t;
        bad.forms.get_mut(&ParadigmId::new("time_indexed")).unwrap()[0].expr_template = "x_a + x_b".into();
        assert!(bad.violations().iter().any(|m| m.contains("missing comparator")));
    }

    #[test]
    fn rule_reference_check() {
        let cir = ProblemCir {
            entities: BTreeMap::new(),
            implementations: vec![CirImplementation {
                archetype_id: "a".into(),
                source_rule_id: "R9".into(),
                paradigm: ParadigmId::new("continuous_time"),
                bindings: BTreeMap::new(),
            }],
        };
        assert!(matches!(cir.check_rule_references(&["R1"]), Err(CirError::UnknownRule { index: 0, .. })));
        assert!(cir.check_rule_references(&["R1", "R9"]).is_ok());
    }
}
