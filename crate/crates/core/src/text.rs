//! Prompt construction and answer parsing for caption-then-adjudicate
//! zero-shot classification.
//!
//! Model calls sit behind [`TextClient`]; the crate ships [`ReplayClient`],
//! which answers from a file of recorded responses keyed by prompt hash.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::EMPTY_LABEL;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionPrompt {
    pub id: String,
    pub text: String,
}

const CATALOG: [(&str, &str); 9] = [
    ("none", ""),
    ("cute_picture", "The picture shows a cute "),
    ("i_see_cute", "I see cute "),
    ("species_is", "The species of the animal is "),
    ("animal_in_picture", "The animal in the picture is "),
    ("running", "A running "),
    ("peeking", "A peeking "),
    ("called", "This animal is called "),
    ("name_of", "The name of the animal "),
];

/// Conditional caption prefixes, in ablation-table order.
pub fn caption_prompt_catalog() -> Vec<CaptionPrompt> {
    CATALOG
        .iter()
        .map(|(id, text)| CaptionPrompt {
            id: id.to_string(),
            text: text.to_string(),
        })
        .collect()
}

pub fn caption_prompt(id: &str) -> Option<CaptionPrompt> {
    caption_prompt_catalog().into_iter().find(|p| p.id == id)
}

/// Renders the one-word adjudication prompt for a language model.
pub fn build_adjudication_prompt<S: AsRef<str>>(categories: &[S], caption: &str) -> Result<String> {
    if categories.is_empty() {
        return Err(Error::invalid("adjudication prompt needs at least one category"));
    }
    if categories
        .iter()
        .any(|c| c.as_ref().trim().eq_ignore_ascii_case(EMPTY_LABEL))
    {
        return Err(Error::invalid("the \"empty\" label cannot be offered as a category"));
    }
    let list = categories.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(", ");
    Ok(format!(
        "Write a one-word answer to this question: \"Which of the following animals is in the picture: {list}?\" Consider this image description in the answer: {caption}."
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Category(String),
    Empty,
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercased, punctuation-free form of a category name, as returned in
/// [`Answer::Category`].
pub fn canonical_category(name: &str) -> String {
    words(name).join(" ")
}

/// Maps a free-text answer to a category.
///
/// Category names match as whole words (or contiguous word sequences),
/// case-insensitively and without stemming. Exactly one distinct matching
/// category wins; none or several mean [`Answer::Empty`].
pub fn parse_answer<S: AsRef<str>>(answer: &str, categories: &[S]) -> Answer {
    let answer_words = words(answer);
    let mut hit: Option<String> = None;
    for cat in categories {
        let name = words(cat.as_ref());
        if name.is_empty() {
            continue;
        }
        let found = answer_words.windows(name.len()).any(|w| w == name.as_slice());
        if !found {
            continue;
        }
        let canonical = name.join(" ");
        match &hit {
            None => hit = Some(canonical),
            Some(prev) if *prev == canonical => {}
            Some(_) => return Answer::Empty,
        }
    }
    hit.map_or(Answer::Empty, Answer::Category)
}

/// Hex SHA-256 of the UTF-8 prompt; the key of replay files.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Text-in, text-out model endpoint.
pub trait TextClient {
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Deserialize, Serialize)]
struct ReplayLine {
    prompt_hash: String,
    response: String,
}

/// Answers prompts from recorded `{"prompt_hash", "response"}` JSON lines.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    responses: HashMap<String, String>,
}

impl ReplayClient {
    pub fn from_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut responses = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayLine =
                serde_json::from_str(&line).map_err(|e| Error::parse(source_name, Some(i), e.to_string()))?;
            responses.insert(rec.prompt_hash, rec.response);
        }
        Ok(Self { responses })
    }

    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.responses.insert(prompt_hash(prompt), response.into());
    }
}

impl TextClient for ReplayClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let hash = prompt_hash(prompt);
        self.responses
            .get(&hash)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no recorded response for prompt {hash}")))
    }
}
