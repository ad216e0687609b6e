//! Policies: whatever produces the next turn of a rollout.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::ConversationContext;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot read policy script {path}: {source}")]
    ScriptIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("policy script {path} is not a JSON array of strings: {source}")]
    ScriptFormat {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot start policy process `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("policy process i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy reply is not a {{\"turn_text\": ...}} object: {0}")]
    Protocol(String),
    #[error("policy endpoint failed: {0}")]
    Http(String),
}

/// Maps the conversation so far to the policy's next output. `Ok(None)`
/// means the policy stopped without producing a turn.
pub trait Policy {
    fn next_turn(&mut self, ctx: &ConversationContext) -> Result<Option<String>, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn next_turn(&mut self, ctx: &ConversationContext) -> Result<Option<String>, PolicyError> {
        (**self).next_turn(ctx)
    }
}

/// Replays a fixed list of turns, then stops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPolicy {
    turns: Vec<String>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(turns: Vec<String>) -> Self {
        ScriptedPolicy { turns, next: 0 }
    }

    /// Reads a JSON array of turn strings.
    pub fn from_file(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::ScriptIo {
            path: path.display().to_string(),
            source,
        })?;
        let turns = serde_json::from_str(&text).map_err(|source| PolicyError::ScriptFormat {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::new(turns))
    }

    pub fn turns(&self) -> &[String] {
        &self.turns
    }
}

impl Policy for ScriptedPolicy {
    fn next_turn(&mut self, _ctx: &ConversationContext) -> Result<Option<String>, PolicyError> {
        let turn = self.turns.get(self.next).cloned();
        self.next += 1;
        Ok(turn)
    }
}

#[derive(Debug, Deserialize)]
struct Reply {
    turn_text: Option<String>,
}

fn parse_reply(line: &str) -> Result<Option<String>, PolicyError> {
    serde_json::from_str::<Reply>(line.trim())
        .map(|r| r.turn_text)
        .map_err(|e| PolicyError::Protocol(e.to_string()))
}

/// Talks to a child process: one JSON context per line on its stdin, one
/// `{"turn_text": ...}` reply per line on its stdout. End of output or a
/// null `turn_text` stops the episode.
#[derive(Debug)]
pub struct ExternalProcessPolicy {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ExternalProcessPolicy {
    /// Runs `command` through the shell.
    pub fn spawn(command: &str) -> Result<Self, PolicyError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| PolicyError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(ExternalProcessPolicy { child, stdin, stdout })
    }
}

impl Policy for ExternalProcessPolicy {
    fn next_turn(&mut self, ctx: &ConversationContext) -> Result<Option<String>, PolicyError> {
        let request = serde_json::to_string(ctx).map_err(|e| PolicyError::Protocol(e.to_string()))?;
        if writeln!(self.stdin, "{request}").and_then(|_| self.stdin.flush()).is_err() {
            return Ok(None);
        }
        let mut line = String::new();
        if self.stdout.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        parse_reply(&line)
    }
}

impl Drop for ExternalProcessPolicy {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// POSTs the context as JSON and expects a `{"turn_text": ...}` body back.
#[derive(Debug)]
pub struct HttpPolicy {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpPolicy {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpPolicy {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

impl Policy for HttpPolicy {
    fn next_turn(&mut self, ctx: &ConversationContext) -> Result<Option<String>, PolicyError> {
        let request = serde_json::to_string(ctx).map_err(|e| PolicyError::Protocol(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(request.as_str())
            .map_err(|e| PolicyError::Http(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(PolicyError::Http(format!("HTTP {status}")));
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| PolicyError::Http(e.to_string()))?;
        parse_reply(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{build_context, EpisodeConfig};
    use crate::mask::BinaryMask;
    use crate::trajectory::Mode;
    use crate::SampleAnnotation;

    fn ctx() -> ConversationContext {
        let ann = SampleAnnotation::from_masks(
            "s",
            "the singer",
            Mode::Video,
            vec![BinaryMask::empty(4, 4).unwrap()],
            vec![],
        )
        .unwrap();
        build_context(&ann, &EpisodeConfig::default()).unwrap()
    }

    #[test]
    fn scripted_replays_then_stops() {
        let mut p = ScriptedPolicy::new(vec!["<think>a</think>".into(), "<think>b</think>".into()]);
        let c = ctx();
        assert_eq!(p.next_turn(&c).unwrap().as_deref(), Some("<think>a</think>"));
        assert_eq!(p.next_turn(&c).unwrap().as_deref(), Some("<think>b</think>"));
        assert_eq!(p.next_turn(&c).unwrap(), None);
    }

    #[test]
    fn scripted_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(&path, r#"["<think>x</think>"]"#).unwrap();
        assert_eq!(ScriptedPolicy::from_file(&path).unwrap().turns().len(), 1);
        std::fs::write(&path, r#"{"turns": 1}"#).unwrap();
        assert!(matches!(
            ScriptedPolicy::from_file(&path),
            Err(PolicyError::ScriptFormat { .. })
        ));
    }

    #[test]
    fn external_process_round_trip() {
        let script = r#"while read -r line; do echo '{"turn_text": "<think>hi</think>"}'; done"#;
        let mut p = ExternalProcessPolicy::spawn(script).unwrap();
        let c = ctx();
        assert_eq!(p.next_turn(&c).unwrap().as_deref(), Some("<think>hi</think>"));
        assert_eq!(p.next_turn(&c).unwrap().as_deref(), Some("<think>hi</think>"));
    }

    #[test]
    fn external_process_eof_and_garbage() {
        let mut p = ExternalProcessPolicy::spawn("read -r line; echo nonsense").unwrap();
        assert!(matches!(p.next_turn(&ctx()), Err(PolicyError::Protocol(_))));
        let mut p = ExternalProcessPolicy::spawn("true").unwrap();
        assert_eq!(p.next_turn(&ctx()).unwrap(), None);
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_reply(r#"{"turn_text": null}"#).unwrap(), None);
        assert_eq!(parse_reply(r#"{"turn_text": "x"}"#).unwrap().as_deref(), Some("x"));
        assert!(parse_reply("[]").is_err());
    }
}
