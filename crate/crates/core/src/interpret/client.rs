//! Model clients.
//!
//! Requests use a provider-neutral message `{role, parts: [text | image]}`.
//! [`HttpClient`] maps it onto a provider wire format; [`MockClient`] answers
//! from canned files.

use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{image_marker, ImageRef, Prompt, PromptBundle, Segment};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "LMM_API_KEY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Summarize,
    Interpret,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image { mime: String, data: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub parts: Vec<Part>,
}

impl Message {
    /// Resolves the prompt's image segments against the bundle. Images that
    /// are [`ImageRef::Missing`] are sent as their text marker.
    pub fn from_prompt(prompt: &Prompt, bundle: &PromptBundle) -> Result<Self> {
        let mut parts = Vec::new();
        let mut text = String::new();
        for seg in &prompt.segments {
            match seg {
                Segment::Text(t) => text.push_str(t),
                Segment::Image(i) => {
                    let pair = bundle
                        .pairs
                        .get(*i)
                        .ok_or_else(|| Error::Contract(format!("image segment {i} has no pair")))?;
                    text.push_str(&image_marker(*i));
                    let image = match &pair.image {
                        ImageRef::Path(p) => Some(load_image(p)?),
                        ImageRef::Base64 { mime, data } => Some(Part::Image { mime: mime.clone(), data: data.clone() }),
                        ImageRef::Missing => None,
                    };
                    if let Some(image) = image {
                        parts.push(Part::Text { text: std::mem::take(&mut text) });
                        parts.push(image);
                    }
                }
            }
        }
        if !text.is_empty() {
            parts.push(Part::Text { text });
        }
        Ok(Message { role: "user".into(), parts })
    }
}

pub fn mime_for(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    Some(match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "webp" => "image/webp",
        "gif" => "image/gif",
        _ => return None,
    })
}

pub fn load_image(path: &Path) -> Result<Part> {
    let mime = mime_for(path).ok_or_else(|| Error::Config(format!("unsupported image type {}", path.display())))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Part::Image {
        mime: mime.to_string(),
        data: base64::engine::general_purpose::STANDARD.encode(bytes),
    })
}

#[derive(Debug)]
pub struct Request<'a> {
    pub feature: usize,
    pub stage: Stage,
    pub message: &'a Message,
}

pub trait LmmClient: Sync {
    /// The raw text of the model's reply. Transport failures return
    /// [`Error::Transport`] and are retried by the caller.
    fn complete(&self, req: &Request<'_>) -> Result<String>;
}

/// Reads `<feature>.sum.txt` / `<feature>.interp.txt` from a directory,
/// falling back to `default.sum.txt` / `default.interp.txt`. A missing file
/// yields an empty reply.
#[derive(Clone, Debug)]
pub struct MockClient {
    dir: PathBuf,
}

impl MockClient {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::Config(format!("mock directory {} does not exist", dir.display())));
        }
        Ok(MockClient { dir })
    }
}

impl LmmClient for MockClient {
    fn complete(&self, req: &Request<'_>) -> Result<String> {
        let suffix = match req.stage {
            Stage::Summarize => "sum.txt",
            Stage::Interpret => "interp.txt",
        };
        for name in [format!("{}.{suffix}", req.feature), format!("default.{suffix}")] {
            let p = self.dir.join(name);
            if p.is_file() {
                return std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e));
            }
        }
        Ok(String::new())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// Posts `{model, max_tokens, messages: [Message]}` and reads `text`.
    Neutral,
    Anthropic,
    OpenAi,
}

impl std::str::FromStr for Provider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neutral" => Ok(Provider::Neutral),
            "anthropic" => Ok(Provider::Anthropic),
            "openai" => Ok(Provider::OpenAi),
            other => Err(Error::Config(format!("unknown provider {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    pub provider: Provider,
    pub max_tokens: u32,
    pub timeout_secs: u64,
}

impl Provider {
    pub fn request_body(self, model: &str, max_tokens: u32, msg: &Message) -> Value {
        match self {
            Provider::Neutral => json!({ "model": model, "max_tokens": max_tokens, "messages": [msg] }),
            Provider::Anthropic => {
                let content: Vec<Value> = msg
                    .parts
                    .iter()
                    .map(|p| match p {
                        Part::Text { text } => json!({ "type": "text", "text": text }),
                        Part::Image { mime, data } => json!({
                            "type": "image",
                            "source": { "type": "base64", "media_type": mime, "data": data },
                        }),
                    })
                    .collect();
                json!({
                    "model": model,
                    "max_tokens": max_tokens,
                    "messages": [{ "role": msg.role, "content": content }],
                })
            }
            Provider::OpenAi => {
                let content: Vec<Value> = msg
                    .parts
                    .iter()
                    .map(|p| match p {
                        Part::Text { text } => json!({ "type": "text", "text": text }),
                        Part::Image { mime, data } => json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:{mime};base64,{data}") },
                        }),
                    })
                    .collect();
                json!({
                    "model": model,
                    "max_tokens": max_tokens,
                    "messages": [{ "role": msg.role, "content": content }],
                })
            }
        }
    }

    pub fn response_text(self, body: &Value) -> Result<String> {
        let text = match self {
            Provider::Neutral => body.get("text").and_then(Value::as_str).map(str::to_string),
            Provider::Anthropic => body.get("content").and_then(Value::as_array).map(|blocks| {
                blocks
                    .iter()
                    .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                    .filter_map(|b| b.get("text").and_then(Value::as_str))
                    .collect::<String>()
            }),
            Provider::OpenAi => body
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string),
        };
        text.ok_or_else(|| Error::Transport("response has no text content".into()))
    }

    fn auth_headers(self, key: &str) -> Vec<(&'static str, String)> {
        match self {
            Provider::Anthropic => vec![("x-api-key", key.to_string()), ("anthropic-version", "2023-06-01".into())],
            Provider::Neutral | Provider::OpenAi => vec![("authorization", format!("Bearer {key}"))],
        }
    }
}

/// Blocking HTTP client. The API key is read from [`API_KEY_ENV`] at
/// construction and never serialized.
pub struct HttpClient {
    config: EndpointConfig,
    key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("config", &self.config).finish_non_exhaustive()
    }
}

impl HttpClient {
    pub fn from_env(config: EndpointConfig) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::Config(format!("{API_KEY_ENV} is not set")))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient { config, key, agent })
    }
}

impl LmmClient for HttpClient {
    fn complete(&self, req: &Request<'_>) -> Result<String> {
        let c = &self.config;
        let body = c.provider.request_body(&c.model, c.max_tokens, req.message);
        let mut call = self.agent.post(&c.url).header("content-type", "application/json");
        for (k, v) in c.provider.auth_headers(&self.key) {
            call = call.header(k, v);
        }
        let mut resp = call.send_json(&body).map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("status {status}: {e}")))?;
        if status >= 400 {
            return Err(Error::Transport(format!("status {status}: {value}")));
        }
        c.provider.response_text(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpret::prompt::{build_sum_prompt, PromptPair};

    fn bundle(images: Vec<ImageRef>) -> PromptBundle {
        let pairs: Vec<PromptPair> = images
            .into_iter()
            .enumerate()
            .map(|(i, image)| PromptPair { id: format!("r{i}"), image, caption: format!("cap {i}") })
            .collect();
        PromptBundle { feature_index: 0, total_count: pairs.len(), error_count: 0, pairs, images_missing: false }
    }

    #[test]
    fn message_interleaves_images_and_text() {
        let b = bundle(vec![
            ImageRef::Base64 { mime: "image/png".into(), data: "AAAA".into() },
            ImageRef::Missing,
        ]);
        let p = build_sum_prompt(&b).unwrap();
        let m = Message::from_prompt(&p, &b).unwrap();
        assert_eq!(m.parts.len(), 3);
        assert!(matches!(&m.parts[0], Part::Text { text } if text.ends_with("<image 1>")));
        assert!(matches!(&m.parts[1], Part::Image { data, .. } if data == "AAAA"));
        let joined: String = m
            .parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(joined, p.render());
    }

    #[test]
    fn images_are_base64_encoded_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.PNG");
        std::fs::write(&path, b"\x89PNG").unwrap();
        assert_eq!(load_image(&path).unwrap(), Part::Image { mime: "image/png".into(), data: "iVBORw==".into() });
        assert!(load_image(&dir.path().join("a.bmp")).is_err());
    }

    #[test]
    fn wire_formats() {
        let msg = Message {
            role: "user".into(),
            parts: vec![Part::Text { text: "hi".into() }, Part::Image { mime: "image/jpeg".into(), data: "Zg==".into() }],
        };
        let neutral = Provider::Neutral.request_body("m", 10, &msg);
        assert_eq!(neutral["messages"][0]["parts"][1]["type"], "image");
        let a = Provider::Anthropic.request_body("m", 10, &msg);
        assert_eq!(a["messages"][0]["content"][1]["source"]["media_type"], "image/jpeg");
        let o = Provider::OpenAi.request_body("m", 10, &msg);
        assert_eq!(o["messages"][0]["content"][1]["image_url"]["url"], "data:image/jpeg;base64,Zg==");

        assert_eq!(Provider::Neutral.response_text(&json!({"text": "[No common errors]"})).unwrap(), "[No common errors]");
        let body = json!({"content": [{"type": "text", "text": "[Error: "}, {"type": "text", "text": "x]"}]});
        assert_eq!(Provider::Anthropic.response_text(&body).unwrap(), "[Error: x]");
        let body = json!({"choices": [{"message": {"content": "ok"}}]});
        assert_eq!(Provider::OpenAi.response_text(&body).unwrap(), "ok");
        assert!(Provider::OpenAi.response_text(&json!({})).is_err());
    }

    #[test]
    fn mock_client_falls_back_to_default() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("3.sum.txt"), "[Commonality: three]").unwrap();
        std::fs::write(dir.path().join("default.sum.txt"), "[Commonality: any]").unwrap();
        let c = MockClient::new(dir.path()).unwrap();
        let msg = Message { role: "user".into(), parts: vec![] };
        let ask = |feature, stage| c.complete(&Request { feature, stage, message: &msg }).unwrap();
        assert_eq!(ask(3, Stage::Summarize), "[Commonality: three]");
        assert_eq!(ask(4, Stage::Summarize), "[Commonality: any]");
        assert_eq!(ask(4, Stage::Interpret), "");
        assert!(MockClient::new(dir.path().join("nope")).is_err());
    }
}
