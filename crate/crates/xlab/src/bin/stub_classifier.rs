//! Reference implementation of the external-classifier protocol.
//!
//! Serves newline-delimited JSON on stdin/stdout. Useful as a template for
//! wiring a real model, and as a test double: the misbehavior modes let the
//! client's crash/timeout/protocol-violation handling be exercised.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Deserialize;
use serde_json::json;

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Mode {
    /// Uniform probabilities over the requested classes.
    Uniform,
    /// Two classes only: p = [v, 1-v] where v is the grid's first value.
    Pixel0,
    /// Read a request, then never answer (exercises client timeouts).
    Hang,
    /// Answer with a mismatched request id.
    BadId,
    /// Answer with a line that is not JSON.
    BadJson,
    /// Exit immediately after the handshake.
    CrashAfterHandshake,
}

#[derive(Parser)]
#[command(name = "xlab-stub-classifier", about = "NDJSON classifier stub")]
struct Args {
    #[arg(long, value_enum, default_value = "uniform")]
    mode: Mode,
    /// Fixed probabilities (comma-separated) returned for every request;
    /// overrides --mode. Length must match each request's class count.
    #[arg(long, value_delimiter = ',')]
    probs: Vec<f64>,
    /// Classes announced in the handshake reply.
    #[arg(long, value_delimiter = ',', default_value = "")]
    classes: Vec<String>,
}

#[derive(Deserialize)]
struct Hello {
    hello: String,
    version: u32,
}

#[derive(Deserialize)]
struct Request {
    id: u64,
    classes: Vec<String>,
    grid: Grid,
}

#[derive(Deserialize)]
struct Grid {
    w: usize,
    h: usize,
    c: usize,
    values: Vec<f64>,
}

fn answer(args: &Args, req: &Request) -> Result<Vec<f64>, String> {
    if req.classes.is_empty() {
        return Err("request has no classes".into());
    }
    if req.grid.values.len() != req.grid.w * req.grid.h * req.grid.c {
        return Err("grid length does not match dimensions".into());
    }
    if !args.probs.is_empty() {
        if args.probs.len() != req.classes.len() {
            return Err(format!(
                "--probs has {} entries but request names {} classes",
                args.probs.len(),
                req.classes.len()
            ));
        }
        return Ok(args.probs.clone());
    }
    match args.mode {
        Mode::Pixel0 => {
            if req.classes.len() != 2 {
                return Err("pixel0 mode needs exactly 2 classes".into());
            }
            let v = req.grid.values[0].clamp(1e-6, 1.0 - 1e-6);
            Ok(vec![v, 1.0 - v])
        }
        _ => Ok(vec![1.0 / req.classes.len() as f64; req.classes.len()]),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let stdout = io::stdout();
    let mut out = stdout.lock();

    let first = match lines.next() {
        Some(Ok(l)) => l,
        _ => {
            eprintln!("stub: no handshake received");
            return ExitCode::FAILURE;
        }
    };
    let hello: Hello = match serde_json::from_str(&first) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("stub: bad handshake: {e}");
            return ExitCode::FAILURE;
        }
    };
    if hello.hello != "xlab-classifier" || hello.version != 1 {
        eprintln!("stub: unsupported handshake {}/{}", hello.hello, hello.version);
        return ExitCode::FAILURE;
    }
    let classes: Vec<&str> = args
        .classes
        .iter()
        .map(String::as_str)
        .filter(|c| !c.is_empty())
        .collect();
    let reply = json!({ "ok": true, "classes": classes });
    if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    if args.mode == Mode::CrashAfterHandshake {
        return ExitCode::FAILURE;
    }

    for line in lines {
        let line = match line {
            Ok(l) => l,
            Err(_) => break,
        };
        if line.is_empty() {
            continue;
        }
        let req: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("stub: bad request: {e}");
                return ExitCode::FAILURE;
            }
        };
        match args.mode {
            Mode::Hang => loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            },
            Mode::BadJson => {
                let _ = writeln!(out, "this is not json");
                let _ = out.flush();
                continue;
            }
            _ => {}
        }
        let probs = match answer(&args, &req) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("stub: {e}");
                return ExitCode::FAILURE;
            }
        };
        let id = if args.mode == Mode::BadId { req.id + 1 } else { req.id };
        let reply = json!({ "id": id, "probs": probs });
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
