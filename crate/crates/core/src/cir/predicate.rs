//! Executable rule semantics for the four checkable archetype kinds.
//!
//! Arguments are JSON records. Every numeric slot is an [`Operand`]: either a
//! variable name resolved against the assignment or an integer constant.
//!
//! | kind                | args                                                                  |
//! |---------------------|-----------------------------------------------------------------------|
//! | `NoOverlap`         | `intervals: [{start|end|occupancy, duration?, active?}]`              |
//! | `CapacityLeq`       | `capacity, items: [{demand, active} | {demand, start, duration}], slots?` |
//! | `Precedence`        | `pred: {end} | {start, duration}`, `succ: {start}`, `active?`         |
//! | `AtMostOnePerGroup` | `groups: [[selector, ...], ...]`                                      |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::SemanticKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredicateError {
    #[error("malformed {kind:?} arguments: {reason}")]
    MalformedArgs { kind: SemanticKind, reason: String },
    #[error("variable {0:?} has no value in the assignment")]
    UnboundVariable(String),
    #[error("Opaque rules have no executable semantics")]
    Opaque,
}

/// A variable reference or an integer constant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Const(i64),
    Var(String),
}

/// Read access to a full assignment.
pub trait Valuation {
    fn value(&self, name: &str) -> Option<i64>;
}

impl Valuation for BTreeMap<String, i64> {
    fn value(&self, name: &str) -> Option<i64> {
        self.get(name).copied()
    }
}

impl Operand {
    fn eval(&self, v: &dyn Valuation) -> Result<i64, PredicateError> {
        match self {
            Operand::Const(c) => Ok(*c),
            Operand::Var(name) => v.value(name).ok_or_else(|| PredicateError::UnboundVariable(name.clone())),
        }
    }

    pub fn variable(&self) -> Option<&str> {
        match self {
            Operand::Var(v) => Some(v),
            Operand::Const(_) => None,
        }
    }
}

fn active(op: &Option<Operand>, v: &dyn Valuation) -> Result<bool, PredicateError> {
    match op {
        None => Ok(true),
        Some(o) => Ok(o.eval(v)? >= 1),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntervalArg {
    start: Option<Operand>,
    end: Option<Operand>,
    duration: Option<Operand>,
    /// Per-slot occupancy indicators on a common slot axis.
    occupancy: Option<Vec<Operand>>,
    active: Option<Operand>,
}

enum Occupied {
    Span(i64, i64),
    Slots(Vec<bool>),
}

impl IntervalArg {
    fn validate(&self) -> Result<(), String> {
        match (&self.start, &self.end, &self.occupancy) {
            (Some(_), None, None) | (None, Some(_), None) => {
                if self.duration.is_none() {
                    return Err("interval with start/end needs a duration".into());
                }
                Ok(())
            }
            (None, None, Some(_)) => {
                if self.duration.is_some() {
                    return Err("occupancy intervals take no duration".into());
                }
                Ok(())
            }
            _ => Err("interval needs exactly one of start, end, occupancy".into()),
        }
    }

    fn occupied(&self, v: &dyn Valuation) -> Result<Occupied, PredicateError> {
        if let Some(slots) = &self.occupancy {
            return slots
                .iter()
                .map(|o| o.eval(v).map(|x| x >= 1))
                .collect::<Result<Vec<_>, _>>()
                .map(Occupied::Slots);
        }
        let d = self.duration.as_ref().expect("validated").eval(v)?;
        let s = match (&self.start, &self.end) {
            (Some(s), _) => s.eval(v)?,
            (None, Some(e)) => e.eval(v)? - d,
            _ => unreachable!("validated"),
        };
        Ok(Occupied::Span(s, s + d))
    }
}

fn overlaps(a: &Occupied, b: &Occupied) -> bool {
    match (a, b) {
        // half-open [s, e); empty spans never intersect
        (Occupied::Span(s1, e1), Occupied::Span(s2, e2)) => s1 < e1 && s2 < e2 && s1 < e2 && s2 < e1,
        (Occupied::Slots(x), Occupied::Slots(y)) => x.iter().zip(y).any(|(p, q)| *p && *q),
        _ => false,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoOverlapArgs {
    intervals: Vec<IntervalArg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapacityItem {
    demand: Operand,
    active: Option<Operand>,
    start: Option<Operand>,
    duration: Option<Operand>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapacityArgs {
    capacity: Operand,
    items: Vec<CapacityItem>,
    slots: Option<Vec<i64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredEndpoint {
    start: Option<Operand>,
    end: Option<Operand>,
    duration: Option<Operand>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuccEndpoint {
    start: Operand,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrecedenceArgs {
    pred: PredEndpoint,
    succ: SuccEndpoint,
    active: Option<Operand>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupArgs {
    groups: Vec<Vec<Operand>>,
}

/// Arguments decoded and checked once, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct CompiledPredicate {
    kind: SemanticKind,
    body: Body,
}

#[derive(Debug, Clone)]
enum Body {
    NoOverlap(NoOverlapArgs),
    Capacity(CapacityArgs),
    Precedence(PrecedenceArgs),
    Groups(GroupArgs),
}

fn decode<T: for<'de> Deserialize<'de>>(kind: SemanticKind, args: &Value) -> Result<T, PredicateError> {
    serde_json::from_value(args.clone())
        .map_err(|e| PredicateError::MalformedArgs { kind, reason: e.to_string() })
}

impl CompiledPredicate {
    pub fn compile(kind: SemanticKind, args: &Value) -> Result<Self, PredicateError> {
        let malformed = |reason: String| PredicateError::MalformedArgs { kind, reason };
        let body = match kind {
            SemanticKind::Opaque => return Err(PredicateError::Opaque),
            SemanticKind::NoOverlap => {
                let a: NoOverlapArgs = decode(kind, args)?;
                for (i, iv) in a.intervals.iter().enumerate() {
                    iv.validate().map_err(|r| malformed(format!("intervals[{i}]: {r}")))?;
                }
                let slot_lens: Vec<usize> =
                    a.intervals.iter().filter_map(|iv| iv.occupancy.as_ref().map(Vec::len)).collect();
                if !slot_lens.is_empty() && slot_lens.len() != a.intervals.len() {
                    return Err(malformed("cannot mix occupancy and start/end intervals".into()));
                }
                if slot_lens.windows(2).any(|w| w[0] != w[1]) {
                    return Err(malformed("occupancy vectors differ in length".into()));
                }
                Body::NoOverlap(a)
            }
            SemanticKind::CapacityLeq => {
                let a: CapacityArgs = decode(kind, args)?;
                for (i, item) in a.items.iter().enumerate() {
                    match (&item.active, &item.start, &item.duration) {
                        (_, None, None) => {}
                        (None, Some(_), Some(_)) => {
                            if a.slots.is_none() {
                                return Err(malformed(format!("items[{i}]: interval items need slots")));
                            }
                        }
                        _ => {
                            return Err(malformed(format!(
                                "items[{i}]: use either active or start+duration"
                            )))
                        }
                    }
                }
                Body::Capacity(a)
            }
            SemanticKind::Precedence => {
                let a: PrecedenceArgs = decode(kind, args)?;
                match (&a.pred.start, &a.pred.end, &a.pred.duration) {
                    (Some(_), None, Some(_)) | (None, Some(_), None) => {}
                    _ => return Err(malformed("pred needs {end} or {start, duration}".into())),
                }
                Body::Precedence(a)
            }
            SemanticKind::AtMostOnePerGroup => Body::Groups(decode(kind, args)?),
        };
        Ok(CompiledPredicate { kind, body })
    }

    pub fn kind(&self) -> SemanticKind {
        self.kind
    }

    pub fn evaluate(&self, v: &dyn Valuation) -> Result<bool, PredicateError> {
        match &self.body {
            Body::NoOverlap(a) => {
                let mut spans = Vec::with_capacity(a.intervals.len());
                for iv in &a.intervals {
                    if active(&iv.active, v)? {
                        spans.push(iv.occupied(v)?);
                    }
                }
                for i in 0..spans.len() {
                    for j in i + 1..spans.len() {
                        if overlaps(&spans[i], &spans[j]) {
                            return Ok(false);
                        }
                    }
                }
                Ok(true)
            }
            Body::Capacity(a) => {
                let cap = a.capacity.eval(v)?;
                let slots: Vec<Option<i64>> = match &a.slots {
                    None => vec![None],
                    Some(s) => s.iter().copied().map(Some).collect(),
                };
                for slot in slots {
                    let mut load = 0i64;
                    for item in &a.items {
                        let demand = item.demand.eval(v)?;
                        let level = match (&item.start, &item.duration, slot) {
                            (Some(s), Some(d), Some(t)) => {
                                let s = s.eval(v)?;
                                i64::from(s <= t && t < s + d.eval(v)?)
                            }
                            _ => match &item.active {
                                None => 1,
                                Some(a) => a.eval(v)?,
                            },
                        };
                        load += demand * level;
                    }
                    if load > cap {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Body::Precedence(a) => {
                if !active(&a.active, v)? {
                    return Ok(true);
                }
                let end = match (&a.pred.start, &a.pred.end, &a.pred.duration) {
                    (_, Some(e), _) => e.eval(v)?,
                    (Some(s), None, Some(d)) => s.eval(v)? + d.eval(v)?,
                    _ => unreachable!("validated"),
                };
                Ok(a.succ.start.eval(v)? >= end)
            }
            Body::Groups(a) => {
                for group in &a.groups {
                    let mut total = 0;
                    for sel in group {
                        total += sel.eval(v)?;
                    }
                    if total > 1 {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }
}

/// Truth value of a rule predicate under a full assignment.
pub fn evaluate_predicate(kind: SemanticKind, args: &Value, assignment: &dyn Valuation) -> Result<bool, PredicateError> {
    CompiledPredicate::compile(kind, args)?.evaluate(assignment)
}
