//! Frozen prompt texts and placeholder substitution.

/// Prompt template with its declared placeholders.
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub name: &'static str,
    text: &'static str,
    pub placeholders: &'static [&'static str],
    /// Template text uses `{{`/`}}` for literal braces.
    escaped_braces: bool,
}

macro_rules! prompt {
    ($name:literal, $file:literal, [$($ph:literal),*], $esc:expr) => {
        PromptTemplate {
            name: $name,
            text: include_str!(concat!("../../prompts/", $file)),
            placeholders: &[$($ph),*],
            escaped_braces: $esc,
        }
    };
}

pub const EXTRACTOR: PromptTemplate = prompt!("extractor", "extractor.txt", ["Entry"], false);
pub const MAPPER: PromptTemplate = prompt!(
    "mapper",
    "mapper.txt",
    ["domain_tag", "Original_Problem", "Extraction", "Domain_Knowledge", "time_model.granularity"],
    false
);
pub const FORMALIZER: PromptTemplate =
    prompt!("formalizer", "formalizer.txt", ["Original_problem_description", "Extraction", "Mapper"], false);
pub const CHECKER_EXTRACTION: PromptTemplate = prompt!("checker_extraction", "checker_extraction.txt", [], false);
pub const CHECKER_MAPPING: PromptTemplate = prompt!("checker_mapping", "checker_mapping.txt", [], false);
pub const CHECKER_FORMALIZATION: PromptTemplate =
    prompt!("checker_formalization", "checker_formalization.txt", [], false);
pub const STANDARD_BASELINE: PromptTemplate =
    prompt!("standard_baseline", "standard_baseline.txt", ["problem_statement"], false);
pub const BACKWARD_EXTRACTOR: PromptTemplate = prompt!(
    "backward_extractor",
    "backward_extractor.txt",
    ["problem_description", "previous_extraction", "feedback"],
    true
);
pub const BACKWARD_MAPPER: PromptTemplate = prompt!(
    "backward_mapper",
    "backward_mapper.txt",
    ["problem_description", "extraction", "previous_mapper", "feedback", "knowledge"],
    true
);
pub const BACKWARD_FORMALIZER: PromptTemplate = prompt!(
    "backward_formalizer",
    "backward_formalizer.txt",
    ["problem_description", "extraction", "mapper", "previous_code", "feedback"],
    true
);

/// Output schema sent alongside the Extractor prompt.
pub const EXTRACTOR_SCHEMA: &str = include_str!("../../prompts/extractor_schema.txt");
/// Output schema sent alongside the Mapper prompt.
pub const MAPPER_SCHEMA: &str = include_str!("../../prompts/mapper_schema.txt");

pub const ALL: [PromptTemplate; 10] = [
    EXTRACTOR,
    MAPPER,
    FORMALIZER,
    CHECKER_EXTRACTION,
    CHECKER_MAPPING,
    CHECKER_FORMALIZATION,
    STANDARD_BASELINE,
    BACKWARD_EXTRACTOR,
    BACKWARD_MAPPER,
    BACKWARD_FORMALIZER,
];

pub fn schema_text(schema: &'static str) -> &'static str {
    schema.strip_suffix('\n').unwrap_or(schema)
}

impl PromptTemplate {
    /// Template text as stored, without the file's trailing newline.
    pub fn raw(&self) -> &'static str {
        self.text.strip_suffix('\n').unwrap_or(self.text)
    }

    /// Single left-to-right pass: each `{name}` for a declared placeholder is
    /// replaced by its value; substituted text is never rescanned. Unknown
    /// brace groups are left untouched.
    ///
    /// Panics if `values` names a placeholder the template does not declare.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        for (k, _) in values {
            assert!(self.placeholders.contains(k), "{}: undeclared placeholder {k}", self.name);
        }
        let src = self.raw();
        let mut out = String::with_capacity(src.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut rest = src;
        'scan: while let Some(c) = rest.chars().next() {
            if self.escaped_braces && (rest.starts_with("{{") || rest.starts_with("}}")) {
                out.push(c);
                rest = &rest[2..];
                continue;
            }
            if c == '{' {
                for (k, v) in values {
                    let after = &rest[1..];
                    if after.starts_with(k) && after[k.len()..].starts_with('}') {
                        out.push_str(v);
                        rest = &after[k.len() + 1..];
                        continue 'scan;
                    }
                }
            }
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
        out
    }
}
