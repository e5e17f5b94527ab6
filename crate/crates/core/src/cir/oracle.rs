//! Brute-force soundness oracle.
//!
//! Enumerates every assignment of a [`MicroInstance`] and checks that each
//! one satisfying all model rows also satisfies every rule predicate, i.e.
//! `F(M(d)) ⊆ F_rules(d)` on that instance. Only soundness is checked; a
//! model that cuts off rule-consistent assignments still passes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::expr::{self, ExprError, LinearRow};
use super::predicate::{CompiledPredicate, PredicateError, Valuation};
use super::{assemble_model, Binding, CirError, CirImplementation, ProblemCir, SemanticKind};
use crate::kb::KnowledgeBase;

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntVariable {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
}

impl IntVariable {
    pub fn new(name: impl Into<String>, lo: i64, hi: i64) -> Self {
        IntVariable { name: name.into(), lo, hi }
    }

    fn size(&self) -> u64 {
        if self.hi < self.lo {
            0
        } else {
            (self.hi - self.lo) as u64 + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulePredicate {
    pub rule_id: String,
    pub kind: SemanticKind,
    pub args: Value,
}

/// A finite integer instance: variables, instantiated model rows, and the
/// rule predicates those rows are meant to enforce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroInstance {
    pub variables: Vec<IntVariable>,
    /// Rows in the strict expression grammar.
    pub model_constraints: Vec<String>,
    pub rule_predicates: Vec<RulePredicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub holds: bool,
    /// A model-feasible assignment violating at least one predicate.
    pub witness: Option<BTreeMap<String, i64>>,
    /// Rule ids the witness violates.
    pub violated_rules: Vec<String>,
    pub assignments_checked: u64,
    pub model_feasible: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance has {count} assignments, above the enumeration cap of {cap}")]
    InstanceTooLarge { count: u128, cap: u64 },
    #[error("rule {0:?} is Opaque and cannot be checked")]
    OpaqueRulePresent(String),
    #[error("model row {index}: {source}")]
    Row {
        index: usize,
        #[source]
        source: ExprError,
    },
    #[error("model row {index} references undeclared variable {name:?}")]
    UnknownVariable { index: usize, name: String },
    #[error("rule {rule_id:?}: {source}")]
    Predicate {
        rule_id: String,
        #[source]
        source: PredicateError,
    },
    #[error("duplicate variable {0:?}")]
    DuplicateVariable(String),
    #[error("variable {0:?} has an empty domain")]
    EmptyDomain(String),
}

struct Frame<'a> {
    index: &'a HashMap<&'a str, usize>,
    values: &'a [i64],
}

impl Valuation for Frame<'_> {
    fn value(&self, name: &str) -> Option<i64> {
        self.index.get(name).map(|&i| self.values[i])
    }
}

struct CompiledRow {
    terms: Vec<(usize, f64)>,
    constant: f64,
    cmp: expr::Comparator,
}

impl CompiledRow {
    fn holds(&self, values: &[i64]) -> bool {
        let total = self.terms.iter().fold(self.constant, |acc, (i, c)| acc + c * values[*i] as f64);
        self.cmp.holds(total)
    }
}

/// Total assignment count, saturating well above any sensible cap.
pub fn assignment_count(variables: &[IntVariable]) -> u128 {
    variables.iter().fold(1u128, |acc, v| acc.saturating_mul(v.size() as u128))
}

pub fn check_soundness(instance: &MicroInstance) -> Result<SoundnessReport, OracleError> {
    check_soundness_with_cap(instance, DEFAULT_ENUMERATION_CAP)
}

pub fn check_soundness_with_cap(instance: &MicroInstance, cap: u64) -> Result<SoundnessReport, OracleError> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, v) in instance.variables.iter().enumerate() {
        if index.insert(v.name.as_str(), i).is_some() {
            return Err(OracleError::DuplicateVariable(v.name.clone()));
        }
        if v.size() == 0 {
            return Err(OracleError::EmptyDomain(v.name.clone()));
        }
    }
    let count = assignment_count(&instance.variables);
    if count > cap as u128 {
        return Err(OracleError::InstanceTooLarge { count, cap });
    }
    if let Some(p) = instance.rule_predicates.iter().find(|p| p.kind == SemanticKind::Opaque) {
        return Err(OracleError::OpaqueRulePresent(p.rule_id.clone()));
    }

    let mut rows = Vec::with_capacity(instance.model_constraints.len());
    for (i, text) in instance.model_constraints.iter().enumerate() {
        let row: LinearRow = expr::parse(text)
            .and_then(|e| e.to_row())
            .map_err(|source| OracleError::Row { index: i, source })?;
        let mut terms = Vec::with_capacity(row.coefficients.len());
        for (name, c) in row.coefficients {
            let vi = *index
                .get(name.as_str())
                .ok_or_else(|| OracleError::UnknownVariable { index: i, name: name.clone() })?;
            terms.push((vi, c));
        }
        rows.push(CompiledRow { terms, constant: row.constant, cmp: row.cmp });
    }
    let predicates = instance
        .rule_predicates
        .iter()
        .map(|p| {
            CompiledPredicate::compile(p.kind, &p.args)
                .map(|c| (p.rule_id.as_str(), c))
                .map_err(|source| OracleError::Predicate { rule_id: p.rule_id.clone(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut values: Vec<i64> = instance.variables.iter().map(|v| v.lo).collect();
    let mut checked = 0u64;
    let mut feasible = 0u64;
    loop {
        checked += 1;
        if rows.iter().all(|r| r.holds(&values)) {
            feasible += 1;
            let frame = Frame { index: &index, values: &values };
            let mut violated = Vec::new();
            for (rule_id, p) in &predicates {
                let ok = p
                    .evaluate(&frame)
                    .map_err(|source| OracleError::Predicate { rule_id: rule_id.to_string(), source })?;
                if !ok {
                    violated.push(rule_id.to_string());
                }
            }
            if !violated.is_empty() {
                let witness = instance
                    .variables
                    .iter()
                    .zip(&values)
                    .map(|(v, x)| (v.name.clone(), *x))
                    .collect();
                return Ok(SoundnessReport {
                    holds: false,
                    witness: Some(witness),
                    violated_rules: violated,
                    assignments_checked: checked,
                    model_feasible: feasible,
                });
            }
        }
        // odometer, last variable fastest
        let mut k = values.len();
        loop {
            if k == 0 {
                return Ok(SoundnessReport {
                    holds: true,
                    witness: None,
                    violated_rules: Vec::new(),
                    assignments_checked: checked,
                    model_feasible: feasible,
                });
            }
            k -= 1;
            if values[k] < instance.variables[k].hi {
                values[k] += 1;
                break;
            }
            values[k] = instance.variables[k].lo;
        }
    }
}

/// Big-M used by oracle fixtures: horizon length plus the longest duration.
pub fn fixture_big_m(horizon_lo: i64, horizon_hi: i64, max_duration: i64) -> i64 {
    (horizon_hi - horizon_lo + 1) + max_duration
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigMPolicy {
    pub placeholder: String,
    pub horizon: [i64; 2],
    pub max_duration: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutant {
    pub name: String,
    /// Indices into the assembled row list to remove.
    pub drop_rows: Vec<usize>,
}

/// A micro-instance stored on disk: implementations against the knowledge
/// base, extra rows, predicates, and weakened mutants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroFixture {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Archetypes this fixture exercises.
    pub archetypes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_m: Option<BigMPolicy>,
    pub variables: Vec<IntVariable>,
    #[serde(default)]
    pub implementations: Vec<CirImplementation>,
    #[serde(default)]
    pub model_constraints: Vec<String>,
    pub rule_predicates: Vec<RulePredicate>,
    #[serde(default)]
    pub mutants: Vec<Mutant>,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("fixture {fixture}: {source}")]
    Assemble {
        fixture: String,
        #[source]
        source: CirError,
    },
    #[error("fixture {fixture}: mutant {mutant}: row {row} out of range")]
    MutantRow { fixture: String, mutant: String, row: usize },
    #[error("fixture {fixture}: big-M binding {placeholder:?} in implementation #{index} is {found}, expected {expected}")]
    BigM { fixture: String, placeholder: String, index: usize, found: String, expected: i64 },
}

impl MicroFixture {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| FixtureError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| FixtureError::Parse { path: path.display().to_string(), source })
    }

    /// Loads every `*.json` under `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, FixtureError> {
        let io = |source| FixtureError::Io { path: dir.display().to_string(), source };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths.iter().map(|p| Self::load(p)).collect()
    }

    /// Every binding of the big-M placeholder must equal the fixture policy.
    pub fn check_big_m(&self) -> Result<(), FixtureError> {
        let Some(policy) = &self.big_m else { return Ok(()) };
        let expected = fixture_big_m(policy.horizon[0], policy.horizon[1], policy.max_duration);
        for (index, imp) in self.implementations.iter().enumerate() {
            if let Some(b) = imp.bindings.get(&policy.placeholder) {
                if *b != Binding::Number(expected as f64) {
                    return Err(FixtureError::BigM {
                        fixture: self.name.clone(),
                        placeholder: policy.placeholder.clone(),
                        index,
                        found: b.to_string(),
                        expected,
                    });
                }
            }
        }
        Ok(())
    }

    /// Assembled rows followed by the fixture's extra rows.
    pub fn rows(&self, kb: &KnowledgeBase) -> Result<Vec<String>, FixtureError> {
        let cir = ProblemCir { entities: BTreeMap::new(), implementations: self.implementations.clone() };
        let blocks = assemble_model(&cir, kb)
            .map_err(|source| FixtureError::Assemble { fixture: self.name.clone(), source })?;
        let mut rows: Vec<String> = blocks.iter().map(|b| b.text()).collect();
        rows.extend(self.model_constraints.iter().cloned());
        Ok(rows)
    }

    pub fn instance(&self, kb: &KnowledgeBase) -> Result<MicroInstance, FixtureError> {
        Ok(MicroInstance {
            variables: self.variables.clone(),
            model_constraints: self.rows(kb)?,
            rule_predicates: self.rule_predicates.clone(),
        })
    }

    pub fn mutant_instance(&self, kb: &KnowledgeBase, mutant: &Mutant) -> Result<MicroInstance, FixtureError> {
        let mut instance = self.instance(kb)?;
        let n = instance.model_constraints.len();
        if let Some(&row) = mutant.drop_rows.iter().find(|&&r| r >= n) {
            return Err(FixtureError::MutantRow { fixture: self.name.clone(), mutant: mutant.name.clone(), row });
        }
        instance.model_constraints = instance
            .model_constraints
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !mutant.drop_rows.contains(i))
            .map(|(_, r)| r)
            .collect();
        Ok(instance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn instance(rows: &[&str], preds: Vec<RulePredicate>) -> MicroInstance {
        MicroInstance {
            variables: vec![IntVariable::new("a", 0, 1), IntVariable::new("b", 0, 1)],
            model_constraints: rows.iter().map(|s| s.to_string()).collect(),
            rule_predicates: preds,
        }
    }

    fn capacity() -> RulePredicate {
        RulePredicate {
            rule_id: "R1".into(),
            kind: SemanticKind::CapacityLeq,
            args: json!({"capacity": 10, "items": [{"demand": 8, "active": "a"}, {"demand": 6, "active": "b"}]}),
        }
    }

    #[test]
    fn vacuous_instance_holds() {
        let empty = MicroInstance { variables: vec![], model_constraints: vec![], rule_predicates: vec![] };
        let r = check_soundness(&empty).unwrap();
        assert!(r.holds);
        assert_eq!(r.assignments_checked, 1);
    }

    #[test]
    fn conflict_pair_is_sound_and_its_removal_is_not() {
        let r = check_soundness(&instance(&["a + b <= 1"], vec![capacity()])).unwrap();
        assert!(r.holds);
        assert_eq!(r.assignments_checked, 4);
        assert_eq!(r.model_feasible, 3);

        let r = check_soundness(&instance(&[], vec![capacity()])).unwrap();
        assert!(!r.holds);
        let w = r.witness.unwrap();
        assert_eq!((w["a"], w["b"]), (1, 1));
        assert_eq!(r.violated_rules, vec!["R1"]);
    }

    #[test]
    fn cap_and_opaque_are_refused() {
        let big = MicroInstance {
            variables: (0..7).map(|i| IntVariable::new(format!("x{i}"), 0, 9)).collect(),
            model_constraints: vec![],
            rule_predicates: vec![],
        };
        assert!(matches!(check_soundness(&big), Err(OracleError::InstanceTooLarge { count: 10_000_000, .. })));
        assert!(check_soundness_with_cap(&big, 10_000_000).is_ok());

        let opaque = RulePredicate { rule_id: "R7".into(), kind: SemanticKind::Opaque, args: json!({}) };
        assert_eq!(
            check_soundness(&instance(&[], vec![opaque])).unwrap_err(),
            OracleError::OpaqueRulePresent("R7".into())
        );
    }

    #[test]
    fn undeclared_variable_in_row() {
        let err = check_soundness(&instance(&["a + z <= 1"], vec![])).unwrap_err();
        assert_eq!(err, OracleError::UnknownVariable { index: 0, name: "z".into() });
    }

    #[test]
    fn big_m_policy() {
        assert_eq!(fixture_big_m(0, 1, 1), 3);
    }
}
