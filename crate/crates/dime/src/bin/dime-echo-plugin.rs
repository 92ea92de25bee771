//! Reference embedder plugin: returns vector payloads unchanged and maps
//! text through the hash embedding. Flags inject protocol faults for tests.

use std::io::{BufRead, Write};

use clap::Parser;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "dime-echo-plugin")]
struct Args {
    #[arg(long, default_value = "echo")]
    name: String,
    /// Declared output dimension.
    #[arg(long)]
    dim: usize,
    /// Declared input dimension; defaults to `--dim` when vectors are accepted.
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "vector")]
    accepts: Vec<String>,
    #[arg(long, default_value = "echo")]
    space: String,
    #[arg(long, default_value = "dime-embedder/1")]
    protocol: String,
    /// Reply with vectors of this length instead.
    #[arg(long)]
    reply_dim: Option<usize>,
    /// Exit after answering this many requests.
    #[arg(long)]
    die_after: Option<usize>,
    /// Reply to every request with an error record.
    #[arg(long)]
    fail: bool,
    /// Echo back a different request id.
    #[arg(long)]
    wrong_id: bool,
}

fn main() {
    let args = Args::parse();
    let input_dim = match args.input_dim {
        Some(d) => Some(d),
        None if args.accepts.iter().any(|k| k == "vector") => Some(args.dim),
        None => None,
    };
    let mut hs = json!({
        "protocol": args.protocol,
        "name": args.name,
        "accepts": args.accepts,
        "output_dim": args.dim,
        "space": args.space,
    });
    if let Some(d) = input_dim {
        hs["input_dim"] = json!(d);
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{hs}").unwrap();
    out.flush().unwrap();
    eprintln!("{} ready", args.name);

    let mut served = 0;
    for line in std::io::stdin().lock().lines() {
        if args.die_after.is_some_and(|n| served >= n) {
            std::process::exit(3);
        }
        let Ok(line) = line else { break };
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("bad request: {e}");
                continue;
            }
        };
        let id = req["id"].as_str().unwrap_or_default().to_string();
        let id = if args.wrong_id { format!("{id}-x") } else { id };
        let reply_dim = args.reply_dim.unwrap_or(args.dim);
        let resp = if args.fail {
            json!({"id": id, "error": "injected failure"})
        } else if let Some(v) = req.get("vector").and_then(Value::as_array) {
            let mut v: Vec<f64> = v.iter().filter_map(Value::as_f64).collect();
            v.resize(reply_dim, 0.0);
            json!({"id": id, "embedding": v})
        } else if let Some(t) = req.get("text").and_then(Value::as_str) {
            let mut v = dime_core::text_hash_embed(t, args.dim.max(1)).unwrap();
            v.resize(reply_dim, 0.0);
            json!({"id": id, "embedding": v})
        } else if let Some(u) = req.get("uri").and_then(Value::as_str) {
            let mut v = dime_core::text_hash_embed(u, args.dim.max(1)).unwrap();
            v.resize(reply_dim, 0.0);
            json!({"id": id, "embedding": v})
        } else {
            json!({"id": id, "error": "unsupported payload"})
        };
        writeln!(out, "{resp}").unwrap();
        out.flush().unwrap();
        served += 1;
    }
}
