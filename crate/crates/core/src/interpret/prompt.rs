//! Prompt templates and rendering.
//!
//! A prompt is a sequence of text and image segments. Rendering to plain text
//! replaces image `i` (1-based) with the marker `<image i>`; the client sends
//! the actual image bytes at the same position.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a pair's image comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRef {
    Path(PathBuf),
    Base64 { mime: String, data: String },
    /// No image available; only the marker and caption are sent.
    Missing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub id: String,
    pub image: ImageRef,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub feature_index: usize,
    pub pairs: Vec<PromptPair>,
    pub error_count: usize,
    pub total_count: usize,
    /// Some activators had no readable image.
    pub images_missing: bool,
}

impl PromptBundle {
    pub fn error_ratio(&self) -> f64 {
        if self.total_count == 0 {
            0.0
        } else {
            self.error_count as f64 / self.total_count as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Segment {
    Text(String),
    /// Index into the bundle's pairs.
    Image(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub segments: Vec<Segment>,
}

impl Prompt {
    fn push_text(&mut self, s: &str) {
        match self.segments.last_mut() {
            Some(Segment::Text(t)) => t.push_str(s),
            _ => self.segments.push(Segment::Text(s.to_string())),
        }
    }

    /// Plain-text form with `<image i>` markers.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => out.push_str(t),
                Segment::Image(i) => out.push_str(&image_marker(*i)),
            }
        }
        out
    }
}

pub fn image_marker(pair: usize) -> String {
    format!("<image {}>", pair + 1)
}

const PAIRS: &str = "{pairs}";
const N: &str = "{n}";
const COMMONALITY: &str = "{commonality}";
const RATIO: &str = "{ratio}";
const COUNT: &str = "{error_count}";
const TOTAL: &str = "{total_count}";

pub const SUM_TEMPLATE: &str = concat!(
    "You are an expert in multimodal feature analysis. \n",
    "\n",
    "Given the following images and their captions: {pairs}.\n",
    "\n",
    "Analyze the commonalities among these images. Identify: If there exist one common feature that is possessed by all the instances. \n",
    "\n",
    "Summarize and output exactly one feature, for example: '[Commonality: Animal wildlife in natural habitats]' and '[Commonality: Strawberry-based dessert or dish]'. \n",
    "\n",
    "Only answer in general, do not analyze each image one by one, only generate one single concise phrase. Start answer with '[Commonality:'. End with ']'",
);

pub const INTERP_TEMPLATE: &str = concat!(
    "You are an expert in analyzing visual content for physical plausibility errors, anatomical accuracy, and generation artifacts in AI-generated images.\n",
    "\n",
    "I will show you {n} sample images from a learned feature in an interpretability module trained to detect physical plausibility errors.\n",
    "\n",
    "**Feature Commonality**: \"{commonality}\"\n",
    "**Error Ratio**: {ratio} of these images contain physical errors ({error_count}/{total_count}). \n",
    "Be strict with the evaluations. Usually only error ratios larger than 0.95 indicate clear physical plausibility failure mode as these features should not be activated in the presence of any correct images. Other features can be unusable and should be considered as no such error mode.\n",
    "\n",
    "Here are the sample images:\n",
    "\n",
    "{pairs}.\n",
    "\n",
    "Based on the {n} images shown above and knowing that:\n",
    "- Feature commonality: \"{commonality}\"\n",
    "- {ratio} contain physical plausibility errors\n",
    "\n",
    "Analyze whether these images share a **common physical plausibility error or anatomical inaccuracy**. Focus ONLY on:\n",
    "\n",
    "**Physical Errors:**\n",
    "- Incorrect number of fingers, toes, or limbs\n",
    "- Extra or missing body parts\n",
    "- Distorted anatomy or impossible body proportions\n",
    "- Unnatural poses or joint configurations\n",
    "- Incorrect object physics (floating, defying gravity)\n",
    "- Impossible spatial arrangements or perspectives\n",
    "- Anatomically incorrect faces or features\n",
    "- Object inconsistencies or impossible constructions\n",
    "\n",
    "**Important:**\n",
    "- Ignore style, artistic choices, or image quality\n",
    "- Ignore semantic content unless it relates to physical errors\n",
    "- Focus ONLY on violations of physical or anatomical plausibility\n",
    "\n",
    "**Response Format:**\n",
    "If there IS a common physical error across these images:\n",
    "[Error: Brief description of the specific error]\n",
    "\n",
    "If there are NO clear physical plausibility errors for all images or if the error ratio does not suggest clear and monosemantic error pattern:\n",
    "[No common errors]\n",
    "\n",
    "Your response MUST start with either \"[Error:\" or \"[No common errors]\" and end with \"]\".",
);

/// Fills `template`, expanding `{pairs}` into one `\n<image i>\nCaption: c`
/// block per pair.
fn fill(template: &str, bundle: &PromptBundle, vars: &[(&str, String)]) -> Prompt {
    let mut prompt = Prompt { segments: Vec::new() };
    for (k, chunk) in template.split(PAIRS).enumerate() {
        if k > 0 {
            for (i, pair) in bundle.pairs.iter().enumerate() {
                prompt.push_text("\n");
                prompt.segments.push(Segment::Image(i));
                prompt.push_text(&format!("\nCaption: {}", pair.caption));
            }
        }
        prompt.push_text(&substitute(chunk, vars));
    }
    prompt
}

/// Replaces `{key}` placeholders in one left-to-right pass; substituted
/// values are not rescanned.
fn substitute(text: &str, vars: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        for (key, value) in vars {
            if let Some(after) = rest.strip_prefix(key) {
                out.push_str(value);
                rest = after;
                continue 'scan;
            }
        }
        out.push('{');
        rest = &rest[1..];
    }
    out.push_str(rest);
    out
}

/// The pattern-summarization prompt.
pub fn build_sum_prompt(bundle: &PromptBundle) -> Result<Prompt> {
    if bundle.pairs.is_empty() {
        return Err(Error::Contract(format!("feature {} has no image-caption pairs", bundle.feature_index)));
    }
    Ok(fill(SUM_TEMPLATE, bundle, &[]))
}

/// The error-interpretation prompt. `commonality` may be the raw bracketed
/// Stage-1 answer or its inner text.
pub fn build_interp_prompt(commonality: &str, bundle: &PromptBundle) -> Result<Prompt> {
    if bundle.pairs.is_empty() {
        return Err(Error::Contract(format!("feature {} has no image-caption pairs", bundle.feature_index)));
    }
    let inner = super::parse::parse_commonality(commonality).unwrap_or_else(|_| commonality.trim().to_string());
    if inner.is_empty() {
        return Err(Error::Contract("empty commonality".into()));
    }
    let vars = [
        (N, bundle.pairs.len().to_string()),
        (COMMONALITY, inner),
        (RATIO, format!("{:.2}", bundle.error_ratio())),
        (COUNT, bundle.error_count.to_string()),
        (TOTAL, bundle.total_count.to_string()),
    ];
    Ok(fill(INTERP_TEMPLATE, bundle, &vars))
}
