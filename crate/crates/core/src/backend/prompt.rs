use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::DocumentRecord;

/// Ordered documents placed in the prompt. Order is significant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingContext {
    pub documents: Vec<DocumentRecord>,
}

impl GroundingContext {
    pub fn new(documents: Vec<DocumentRecord>) -> Self {
        Self { documents }
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.documents.iter().map(|d| d.id.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Prompt template. `template` may use `{documents}`, `{history}` and
/// `{question}`; `document_template` may use `{index}` (1-based), `{title}`
/// and `{text}`. `{{` and `}}` produce literal braces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub system_preamble: String,
    pub template: String,
    pub document_template: String,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            system_preamble: "Answer the question using the documents when they help. Reply with a short answer."
                .into(),
            template: "Documents:\n{documents}\n\nConversation:\n{history}\n\nQuestion: {question}\nAnswer:".into(),
            document_template: "Document [{index}] (Title: {title}) {text}".into(),
        }
    }
}

/// A rendered prompt plus the structured parts it was rendered from.
/// Remote backends only see `text`; analytic backends read the parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub question: String,
    pub history: Vec<String>,
    pub documents: Vec<DocumentRecord>,
}

impl PromptSpec {
    pub fn validate(&self) -> Result<()> {
        let names = placeholders(&self.template)?;
        for required in ["documents", "question"] {
            if !names.iter().any(|n| n == required) {
                return Err(Error::Config(format!("prompt template lacks {{{required}}}")));
            }
        }
        check_names(&names, &["documents", "history", "question"])?;
        check_names(&placeholders(&self.document_template)?, &["index", "title", "text"])
    }
}

fn check_names(names: &[String], allowed: &[&str]) -> Result<()> {
    match names.iter().find(|n| !allowed.contains(&n.as_str())) {
        Some(bad) => Err(Error::Config(format!("unknown placeholder {{{bad}}}"))),
        None => Ok(()),
    }
}

fn placeholders(template: &str) -> Result<Vec<String>> {
    let mut names = Vec::new();
    render(template, |name| {
        names.push(name.to_string());
        Ok(String::new())
    })?;
    Ok(names)
}

fn render(template: &str, mut lookup: impl FnMut(&str) -> Result<String>) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => name.push(ch),
                        None => return Err(Error::Config("unterminated placeholder".into())),
                    }
                }
                out.push_str(&lookup(&name)?);
            }
            '}' => return Err(Error::Config("unmatched `}` in template".into())),
            _ => out.push(c),
        }
    }
    Ok(out)
}

/// Renders a prompt. With no context the `{documents}` block renders empty,
/// so grounded and ungrounded prompts differ only there.
pub fn assemble_prompt(
    spec: &PromptSpec,
    question: &str,
    history: &[String],
    context: Option<&GroundingContext>,
) -> Result<Prompt> {
    spec.validate()?;
    let documents: Vec<DocumentRecord> = context.map(|c| c.documents.clone()).unwrap_or_default();
    let mut rendered_docs = Vec::with_capacity(documents.len());
    for (i, d) in documents.iter().enumerate() {
        rendered_docs.push(render(&spec.document_template, |name| match name {
            "index" => Ok((i + 1).to_string()),
            "title" => Ok(d.title.clone()),
            "text" => Ok(d.contents.clone()),
            other => Err(Error::Config(format!("unknown placeholder {{{other}}}"))),
        })?);
    }
    let docs_block = rendered_docs.join("\n");
    let history_block = history.join("\n");
    let body = render(&spec.template, |name| match name {
        "documents" => Ok(docs_block.clone()),
        "history" => Ok(history_block.clone()),
        "question" => Ok(question.to_string()),
        other => Err(Error::Config(format!("unknown placeholder {{{other}}}"))),
    })?;
    let text = if spec.system_preamble.is_empty() {
        body
    } else {
        format!("{}\n\n{}", spec.system_preamble, body)
    };
    Ok(Prompt {
        text,
        question: question.to_string(),
        history: history.to_vec(),
        documents,
    })
}
