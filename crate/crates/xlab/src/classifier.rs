//! Classifier backends for the teaching stage.
//!
//! The builtin template-softmax classifier is loaded from a directory of
//! per-class FGRID templates. The external backend talks newline-delimited
//! JSON to a child process:
//!
//! ```text
//! -> {"hello":"xlab-classifier","version":1}
//! <- {"ok":true,"classes":[...]}
//! -> {"id":0,"classes":["cat","dog"],"grid":{"w":2,"h":2,"c":1,"values":[...]}}
//! <- {"id":0,"probs":[0.9,0.1]}
//! ```
//!
//! One request is in flight at a time. Crashes, timeouts, and protocol
//! violations surface as errors carrying a transcript excerpt.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xlab_core::teaching::{validate_probs, BuiltinClassifier, Classifier, TeachingError};
use xlab_core::FloatGrid;

use crate::fgrid::{self, FgridError};

pub const PROTOCOL_HELLO: &str = "xlab-classifier";
pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

/// Transcript lines kept for error excerpts.
const TRANSCRIPT_KEEP: usize = 12;
const TRANSCRIPT_LINE_CAP: usize = 200;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("template for class {class:?} not found at {path}")]
    MissingTemplate { class: String, path: String },
    #[error(transparent)]
    Grid(#[from] FgridError),
    #[error(transparent)]
    Teaching(#[from] TeachingError),
    #[error("failed to spawn {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("external classifier {command:?}: {message}\ntranscript:\n{transcript}")]
    Protocol {
        command: String,
        message: String,
        transcript: String,
    },
}

/// Loads `<class>.fgrid` for every required class from a template directory.
pub fn load_builtin(
    templates_dir: &Path,
    classes: &BTreeSet<String>,
    temperature: f64,
) -> Result<BuiltinClassifier, ClassifierError> {
    let mut templates = BTreeMap::new();
    for class in classes {
        let path = templates_dir.join(format!("{class}.fgrid"));
        if !path.exists() {
            return Err(ClassifierError::MissingTemplate {
                class: class.clone(),
                path: path.display().to_string(),
            });
        }
        templates.insert(class.clone(), fgrid::read_grid(&path)?);
    }
    Ok(BuiltinClassifier::new(templates, temperature)?)
}

#[derive(Serialize)]
struct HelloMsg {
    hello: &'static str,
    version: u32,
}

#[derive(Deserialize)]
struct HelloReply {
    ok: bool,
    #[serde(default)]
    #[allow(dead_code)]
    classes: Vec<String>,
}

#[derive(Serialize)]
struct RequestMsg<'a> {
    id: u64,
    classes: &'a [&'a str],
    grid: GridMsg<'a>,
}

#[derive(Serialize)]
struct GridMsg<'a> {
    w: usize,
    h: usize,
    c: usize,
    values: &'a [f64],
}

#[derive(Deserialize)]
struct ResponseMsg {
    id: u64,
    probs: Vec<f64>,
}

enum Incoming {
    Line(String),
    Eof,
    Err(std::io::Error),
}

/// Client for the external classifier protocol. Owns the child process and
/// kills it on drop.
pub struct ExternalClassifier {
    child: Child,
    stdin: Option<ChildStdin>,
    rx: mpsc::Receiver<Incoming>,
    timeout: Duration,
    next_id: u64,
    command: String,
    transcript: VecDeque<String>,
}

impl ExternalClassifier {
    pub fn spawn(
        program: &str,
        args: &[String],
        timeout: Duration,
    ) -> Result<Self, ClassifierError> {
        let command = if args.is_empty() {
            program.to_string()
        } else {
            format!("{program} {}", args.join(" "))
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ClassifierError::Spawn {
                command: command.clone(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = child.stdout.take().expect("stdout was piped");

        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let msg = match line {
                    Ok(l) => Incoming::Line(l),
                    Err(e) => {
                        let _ = tx.send(Incoming::Err(e));
                        return;
                    }
                };
                if tx.send(msg).is_err() {
                    return;
                }
            }
            let _ = tx.send(Incoming::Eof);
        });

        let mut client = Self {
            child,
            stdin: Some(stdin),
            rx,
            timeout,
            next_id: 0,
            command,
            transcript: VecDeque::new(),
        };

        let hello = serde_json::to_string(&HelloMsg {
            hello: PROTOCOL_HELLO,
            version: PROTOCOL_VERSION,
        })
        .expect("hello serializes");
        client.send_line(&hello)?;
        let reply_line = client.recv_line("handshake reply")?;
        let reply: HelloReply = serde_json::from_str(&reply_line)
            .map_err(|e| client.protocol_err(format!("handshake reply is not valid JSON: {e}")))?;
        if !reply.ok {
            return Err(client.protocol_err("handshake reply has ok=false".to_string()));
        }
        Ok(client)
    }

    fn record(&mut self, direction: &str, line: &str) {
        let mut shown: String = line.chars().take(TRANSCRIPT_LINE_CAP).collect();
        if shown.len() < line.len() {
            shown.push('…');
        }
        self.transcript.push_back(format!("{direction} {shown}"));
        while self.transcript.len() > TRANSCRIPT_KEEP {
            self.transcript.pop_front();
        }
    }

    fn protocol_err(&self, message: String) -> ClassifierError {
        let transcript = self
            .transcript
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join("\n");
        ClassifierError::Protocol {
            command: self.command.clone(),
            message,
            transcript,
        }
    }

    fn send_line(&mut self, line: &str) -> Result<(), ClassifierError> {
        self.record("->", line);
        let result = {
            let stdin = self.stdin.as_mut().expect("stdin present until drop");
            stdin
                .write_all(line.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .and_then(|_| stdin.flush())
        };
        result.map_err(|e| self.protocol_err(format!("writing to child failed: {e}")))
    }

    fn recv_line(&mut self, waiting_for: &str) -> Result<String, ClassifierError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(Incoming::Line(l)) => {
                self.record("<-", &l);
                Ok(l)
            }
            Ok(Incoming::Eof) => Err(self.protocol_err(format!(
                "child closed stdout while waiting for {waiting_for} (crashed?)"
            ))),
            Ok(Incoming::Err(e)) => {
                Err(self.protocol_err(format!("reading from child failed: {e}")))
            }
            Err(mpsc::RecvTimeoutError::Timeout) => Err(self.protocol_err(format!(
                "timed out after {:?} waiting for {waiting_for}",
                self.timeout
            ))),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(self.protocol_err(format!("reader thread gone while waiting for {waiting_for}")))
            }
        }
    }

    fn request(&mut self, image: &FloatGrid, classes: &[&str]) -> Result<Vec<f64>, ClassifierError> {
        let id = self.next_id;
        self.next_id += 1;
        let msg = serde_json::to_string(&RequestMsg {
            id,
            classes,
            grid: GridMsg {
                w: image.width(),
                h: image.height(),
                c: image.channels(),
                values: image.values(),
            },
        })
        .expect("request serializes");
        self.send_line(&msg)?;
        let line = self.recv_line("classification reply")?;
        let reply: ResponseMsg = serde_json::from_str(&line)
            .map_err(|e| self.protocol_err(format!("reply is not valid JSON: {e}")))?;
        if reply.id != id {
            return Err(self.protocol_err(format!(
                "reply id {} does not match request id {id}",
                reply.id
            )));
        }
        validate_probs(&reply.probs, classes.len())
            .map_err(|e| self.protocol_err(format!("bad probabilities: {e}")))?;
        Ok(reply.probs)
    }
}

impl Classifier for ExternalClassifier {
    fn classify(&mut self, image: &FloatGrid, classes: &[&str]) -> Result<Vec<f64>, TeachingError> {
        self.request(image, classes)
            .map_err(|e| TeachingError::Classifier(e.to_string()))
    }
}

impl Drop for ExternalClassifier {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved child exit; kill covers the rest.
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn builtin_loader_reports_missing_class() {
        let dir = tempfile::tempdir().unwrap();
        let mut classes = BTreeSet::new();
        classes.insert("cat".to_string());
        let err = load_builtin(dir.path(), &classes, 1.0).unwrap_err();
        assert!(matches!(err, ClassifierError::MissingTemplate { .. }));
    }

    #[test]
    fn builtin_loader_round_trips_templates() {
        let dir = tempfile::tempdir().unwrap();
        let g = FloatGrid::new(2, 1, 1, vec![0.25, 0.75]).unwrap();
        fgrid::write_grid(&g, dir.path().join("cat.fgrid")).unwrap();
        fgrid::write_grid(&g, dir.path().join("dog.fgrid")).unwrap();
        let mut classes = BTreeSet::new();
        classes.insert("cat".to_string());
        classes.insert("dog".to_string());
        let mut clf = load_builtin(dir.path(), &classes, 1.0).unwrap();
        let probs = clf.classify(&g, &["cat", "dog"]).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-12);
    }
}
