//! Domain-tagged CIR template library.
//!
//! Layout on disk is `<root>/<domain_tag>/<template_id>.json`, one template
//! per file. Retrieval is lexical: case-folded token overlap between the
//! query and a template's intent and notes, each matched token weighted by
//! its inverse document frequency over the whole library.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::cir::{CirTemplate, DomainTag, UnknownDomainTag};

pub const DEFAULT_TOP_K: usize = 8;
pub const NO_KNOWLEDGE_SENTINEL: &str = "NO DOMAIN KNOWLEDGE RETRIEVED";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("kb root not found: {0}")]
    RootNotFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    ParseError { path: PathBuf, message: String },
    #[error("{path}: schema violation: {}", .violations.join("; "))]
    SchemaViolation { path: PathBuf, violations: Vec<String> },
    #[error("duplicate template_id {template_id:?} in {first} and {second}")]
    DuplicateTemplateId { template_id: String, first: PathBuf, second: PathBuf },
    #[error(transparent)]
    UnknownDomainTag(#[from] UnknownDomainTag),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Default)]
struct Index {
    /// Token set per template id.
    tokens: HashMap<String, BTreeSet<String>>,
    document_frequency: HashMap<String, usize>,
    documents: usize,
}

impl Index {
    fn build<'a>(templates: impl Iterator<Item = &'a CirTemplate>) -> Self {
        let mut index = Index::default();
        for t in templates {
            let toks: BTreeSet<String> = tokenize(&format!("{} {}", t.intent, t.notes)).collect();
            for tok in &toks {
                *index.document_frequency.entry(tok.clone()).or_default() += 1;
            }
            index.tokens.insert(t.template_id.clone(), toks);
            index.documents += 1;
        }
        index
    }

    fn idf(&self, token: &str) -> f64 {
        match self.document_frequency.get(token) {
            Some(&df) if df > 0 => (self.documents as f64 / df as f64).ln(),
            _ => 0.0,
        }
    }
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// Immutable after load.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    domains: BTreeMap<DomainTag, Vec<CirTemplate>>,
    paths: HashMap<String, PathBuf>,
    index: Index,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalHit {
    pub template: CirTemplate,
    pub score: f64,
    pub matched_terms: Vec<String>,
}

/// Which templates the soundness oracle can check, and which it cannot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCoverage {
    pub checkable: Vec<String>,
    pub excluded: Vec<String>,
}

impl KnowledgeBase {
    pub fn load(root: &Path) -> Result<Self, KbError> {
        if !root.is_dir() {
            return Err(KbError::RootNotFound(root.to_path_buf()));
        }
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| KbError::Io { path, source }
        };
        let mut domain_dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(io(root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        domain_dirs.sort();

        let mut templates: Vec<(PathBuf, CirTemplate)> = Vec::new();
        for dir in domain_dirs {
            let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let tag: DomainTag = dir_name.parse().map_err(|_| KbError::SchemaViolation {
                path: dir.clone(),
                violations: vec![format!("directory {dir_name:?} is not a domain tag")],
            })?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(io(&dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for path in files {
                let text = std::fs::read_to_string(&path).map_err(io(&path))?;
                let template: CirTemplate = serde_json::from_str(&text)
                    .map_err(|e| KbError::ParseError { path: path.clone(), message: e.to_string() })?;
                let mut violations = template.violations();
                if template.domain_tag != tag {
                    violations.push(format!(
                        "domain_tag: {:?} does not match directory {:?}",
                        template.domain_tag.as_str(),
                        dir_name
                    ));
                }
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                if stem != template.template_id {
                    violations.push(format!("template_id: {:?} does not match file name {stem:?}", template.template_id));
                }
                if !violations.is_empty() {
                    return Err(KbError::SchemaViolation { path, violations });
                }
                templates.push((path, template));
            }
        }
        Self::from_templates(templates)
    }

    /// Builds a library from already-parsed templates; paths are used for
    /// error messages only.
    pub fn from_templates(templates: Vec<(PathBuf, CirTemplate)>) -> Result<Self, KbError> {
        let mut kb = KnowledgeBase::default();
        for (path, t) in templates {
            if let Some(first) = kb.paths.get(&t.template_id) {
                return Err(KbError::DuplicateTemplateId {
                    template_id: t.template_id.clone(),
                    first: first.clone(),
                    second: path,
                });
            }
            let violations = t.violations();
            if !violations.is_empty() {
                return Err(KbError::SchemaViolation { path, violations });
            }
            kb.paths.insert(t.template_id.clone(), path);
            kb.domains.entry(t.domain_tag).or_default().push(t);
        }
        for list in kb.domains.values_mut() {
            list.sort_by(|a, b| a.template_id.cmp(&b.template_id));
        }
        kb.index = Index::build(kb.domains.values().flatten());
        Ok(kb)
    }

    pub fn domains(&self) -> impl Iterator<Item = (DomainTag, &[CirTemplate])> {
        self.domains.iter().map(|(t, v)| (*t, v.as_slice()))
    }

    pub fn templates(&self) -> impl Iterator<Item = &CirTemplate> {
        self.domains.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.index.documents
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn template(&self, id: &str) -> Option<&CirTemplate> {
        self.templates().find(|t| t.template_id == id)
    }

    pub fn path_of(&self, id: &str) -> Option<&Path> {
        self.paths.get(id).map(PathBuf::as_path)
    }

    pub fn oracle_coverage(&self) -> OracleCoverage {
        let (checkable, excluded): (Vec<_>, Vec<_>) = self.templates().partition(|t| t.is_oracle_checkable());
        OracleCoverage {
            checkable: checkable.into_iter().map(|t| t.template_id.clone()).collect(),
            excluded: excluded.into_iter().map(|t| t.template_id.clone()).collect(),
        }
    }

    /// Top-`k` templates from the given domains, sorted by descending score
    /// then ascending template id.
    pub fn retrieve<S: AsRef<str>>(&self, domain_tags: &[S], query: &str, k: usize) -> Result<Vec<RetrievalHit>, KbError> {
        if k == 0 {
            return Err(KbError::ZeroK);
        }
        let tags: BTreeSet<DomainTag> =
            domain_tags.iter().map(|t| t.as_ref().parse()).collect::<Result<_, UnknownDomainTag>>()?;
        let query_tokens: BTreeSet<String> = tokenize(query).collect();
        let mut hits: Vec<RetrievalHit> = tags
            .iter()
            .filter_map(|t| self.domains.get(t))
            .flatten()
            .map(|t| {
                let doc = &self.index.tokens[&t.template_id];
                let matched: Vec<String> = query_tokens.intersection(doc).cloned().collect();
                let score = matched.iter().map(|tok| self.index.idf(tok)).fold(0.0, |a, b| a + b);
                RetrievalHit { template: t.clone(), score, matched_terms: matched }
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.template.template_id.cmp(&b.template.template_id))
        });
        hits.truncate(k);
        Ok(hits)
    }
}

/// Renders hits as the Mapper's domain-knowledge block.
pub fn render_domain_knowledge(hits: &[RetrievalHit]) -> String {
    if hits.is_empty() {
        return format!("{NO_KNOWLEDGE_SENTINEL}\n");
    }
    let mut out = String::new();
    for hit in hits {
        let t = &hit.template;
        let _ = writeln!(out, "### CIR archetype: {} [{}]", t.template_id, t.domain_tag);
        let _ = writeln!(out, "Intent: {}", t.intent);
        let paradigms: Vec<&str> = t.supported_paradigms.iter().map(|p| p.as_str()).collect();
        let _ = writeln!(out, "Supported paradigms: {}", paradigms.join(", "));
        for paradigm in &t.supported_paradigms {
            let forms = t.forms_for(paradigm);
            if forms.is_empty() {
                let _ = writeln!(out, "Forms ({paradigm}): not applicable");
                continue;
            }
            let _ = writeln!(out, "Forms ({paradigm}):");
            for form in forms {
                let body = form.display.as_deref().unwrap_or(&form.expr_template);
                if form.quantifier_note.is_empty() {
                    let _ = writeln!(out, "  - {body}");
                } else {
                    let _ = writeln!(out, "  - {body}  [{}]", form.quantifier_note);
                }
            }
        }
        if !t.notes.is_empty() {
            let _ = writeln!(out, "Notes: {}", t.notes);
        }
        out.push('\n');
    }
    out
}
