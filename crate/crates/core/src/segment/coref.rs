//! Coreference resolvers. A resolver maps an ordered list of sentences to an
//! equal-length list of rewritten sentences.
//!
//! Process and HTTP adapters exchange a JSON array of strings in each
//! direction; the command adapter uses one array per line.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;

use parking_lot::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum ResolverError {
    #[error("resolver I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("resolver protocol: {0}")]
    Protocol(String),
    #[error("resolver HTTP: {0}")]
    Http(String),
}

pub trait CoreferenceResolver: Send + Sync {
    fn resolve(&self, sentences: &[String]) -> Result<Vec<String>, ResolverError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityResolver;

impl CoreferenceResolver for IdentityResolver {
    fn resolve(&self, sentences: &[String]) -> Result<Vec<String>, ResolverError> {
        Ok(sentences.to_vec())
    }
}

impl<F> CoreferenceResolver for F
where
    F: Fn(&[String]) -> Result<Vec<String>, ResolverError> + Send + Sync,
{
    fn resolve(&self, sentences: &[String]) -> Result<Vec<String>, ResolverError> {
        self(sentences)
    }
}

/// Long-running subprocess speaking line-delimited JSON arrays on stdin/stdout.
pub struct CommandResolver {
    program: Vec<String>,
    child: Mutex<Option<(Child, ChildStdin, BufReader<ChildStdout>)>>,
}

impl CommandResolver {
    pub fn new(command_line: &str) -> Result<Self, ResolverError> {
        let program: Vec<String> = command_line.split_whitespace().map(str::to_owned).collect();
        if program.is_empty() {
            return Err(ResolverError::Protocol("empty resolver command".into()));
        }
        Ok(Self {
            program,
            child: Mutex::new(None),
        })
    }

    fn spawn(&self) -> Result<(Child, ChildStdin, BufReader<ChildStdout>), ResolverError> {
        let mut child = Command::new(&self.program[0])
            .args(&self.program[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok((child, stdin, stdout))
    }
}

impl CoreferenceResolver for CommandResolver {
    fn resolve(&self, sentences: &[String]) -> Result<Vec<String>, ResolverError> {
        let mut slot = self.child.lock();
        if slot.is_none() {
            *slot = Some(self.spawn()?);
        }
        let (_, stdin, stdout) = slot.as_mut().expect("spawned above");
        let exchange = (|| {
            let mut line = serde_json::to_string(sentences).expect("strings serialize");
            line.push('\n');
            stdin.write_all(line.as_bytes())?;
            stdin.flush()?;
            let mut reply = String::new();
            if stdout.read_line(&mut reply)? == 0 {
                return Err(ResolverError::Protocol("resolver closed its output".into()));
            }
            serde_json::from_str::<Vec<String>>(&reply).map_err(|e| ResolverError::Protocol(e.to_string()))
        })();
        if exchange.is_err() {
            // Restart on the next call rather than reuse a child in an unknown state.
            if let Some((mut child, ..)) = slot.take() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
        exchange
    }
}

impl Drop for CommandResolver {
    fn drop(&mut self) {
        if let Some((mut child, stdin, _)) = self.child.lock().take() {
            drop(stdin);
            let _ = child.wait();
        }
    }
}

/// POSTs the sentence array to an HTTP endpoint and reads the rewritten array back.
pub struct HttpResolver {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpResolver {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl CoreferenceResolver for HttpResolver {
    fn resolve(&self, sentences: &[String]) -> Result<Vec<String>, ResolverError> {
        let response = self
            .client
            .post(&self.url)
            .json(sentences)
            .send()
            .map_err(|e| ResolverError::Http(e.to_string()))?;
        if !response.status().is_success() {
            return Err(ResolverError::Http(format!("status {}", response.status())));
        }
        response
            .json::<Vec<String>>()
            .map_err(|e| ResolverError::Protocol(e.to_string()))
    }
}

/// `identity`, `cmd:<command line>` or `http:<url>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolverSpec {
    Identity,
    Command(String),
    Http(String),
}

impl FromStr for ResolverSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "identity" {
            Ok(ResolverSpec::Identity)
        } else if let Some(cmd) = s.strip_prefix("cmd:").filter(|c| !c.trim().is_empty()) {
            Ok(ResolverSpec::Command(cmd.to_owned()))
        } else if let Some(url) = s.strip_prefix("http:").filter(|u| !u.is_empty()) {
            // Accept both `http:http://host/x` and `http://host/x`.
            let url = if url.starts_with("//") { format!("http:{url}") } else { url.to_owned() };
            Ok(ResolverSpec::Http(url))
        } else {
            Err(format!("unknown resolver {s:?}; expected identity, cmd:<exec> or http:<url>"))
        }
    }
}

impl ResolverSpec {
    pub fn build(&self) -> Result<Box<dyn CoreferenceResolver>, ResolverError> {
        Ok(match self {
            ResolverSpec::Identity => Box::new(IdentityResolver),
            ResolverSpec::Command(cmd) => Box::new(CommandResolver::new(cmd)?),
            ResolverSpec::Http(url) => Box::new(HttpResolver::new(url.clone())),
        })
    }
}
