//! Stand-in for the Lean REPL that speaks its JSON protocol, for tests.
//!
//! Reads blank-line separated `{"cmd": ..., "env": n}` requests and answers
//! each with `{"env": m, "messages": [...], "sorries": [...]}`. Behaviour is
//! keyed on the text of the command:
//!
//! - `CRASH` exits immediately, `SLEEP` never answers
//! - `def x : := 3` is a parse error
//! - `undefined_ident` is an unknown identifier
//! - a theorem name declared twice (here or in the base env) is an error
//! - `exact?` suggests `exact rfl` when the goal mentions `1 = 1`, else fails
//! - `sorry` gives the usual warning and a sorries entry

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};

use serde_json::{json, Value};

fn message(severity: &str, line: usize, data: String) -> Value {
    json!({
        "severity": severity,
        "pos": {"line": line, "column": 0},
        "endPos": {"line": line, "column": 1},
        "data": data,
    })
}

fn theorem_name(line: &str) -> Option<&str> {
    let rest = line.trim_start().strip_prefix("theorem ")?;
    rest.split(|c: char| c.is_whitespace() || c == ':' || c == '{' || c == '(')
        .next()
}

fn evaluate(cmd: &str, names: &mut HashSet<String>) -> (Vec<Value>, Vec<Value>) {
    let mut messages = Vec::new();
    let mut sorries = Vec::new();
    let lines: Vec<&str> = cmd.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let n = i + 1;
        if line.contains("def x : := 3") {
            messages.push(message(
                "error",
                n,
                "unexpected token ':='; expected term".into(),
            ));
        }
        if line.contains("undefined_ident") {
            messages.push(message(
                "error",
                n,
                "unknown identifier 'undefined_ident'".into(),
            ));
        }
        if let Some(name) = theorem_name(line) {
            if !names.insert(name.to_string()) {
                messages.push(message(
                    "error",
                    n,
                    format!("'{name}' has already been declared"),
                ));
            }
        }
        if line.contains("exact?") {
            // The goal is whatever precedes the query in the same declaration.
            let start = (0..=i)
                .rev()
                .find(|&j| theorem_name(lines[j]).is_some())
                .unwrap_or(0);
            let goal = lines[start..=i].join("\n");
            if goal.contains("1 = 1") {
                messages.push(message("info", n, "Try this: exact rfl".into()));
            } else {
                messages.push(message(
                    "error",
                    n,
                    "`exact?` could not close the goal. Try `apply?` to see partial suggestions."
                        .into(),
                ));
            }
        } else if line.contains("sorry") {
            messages.push(message("warning", n, "declaration uses 'sorry'".into()));
            sorries.push(json!({"pos": {"line": n, "column": 0}, "goal": "⊢ ?"}));
        }
    }
    (messages, sorries)
}

fn main() {
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    let mut envs: HashMap<u64, HashSet<String>> = HashMap::new();
    let mut next_env = 0u64;
    let mut buffer = String::new();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { return };
        if !line.trim().is_empty() {
            buffer.push_str(&line);
            buffer.push('\n');
            continue;
        }
        if buffer.trim().is_empty() {
            continue;
        }
        let request: Value = match serde_json::from_str(&buffer) {
            Ok(v) => v,
            Err(e) => {
                let _ = writeln!(
                    stdout,
                    "{}\n",
                    json!({"message": format!("could not parse json: {e}")})
                );
                buffer.clear();
                continue;
            }
        };
        buffer.clear();
        let cmd = request.get("cmd").and_then(Value::as_str).unwrap_or("");
        if cmd.contains("CRASH") {
            std::process::exit(3);
        }
        if cmd.contains("SLEEP") {
            std::thread::sleep(std::time::Duration::from_secs(3600));
        }
        let mut names = match request.get("env").and_then(Value::as_u64) {
            Some(env) => match envs.get(&env) {
                Some(n) => n.clone(),
                None => {
                    let _ = writeln!(stdout, "{}\n", json!({"message": "Unknown environment."}));
                    let _ = stdout.flush();
                    continue;
                }
            },
            None => HashSet::new(),
        };
        let (messages, sorries) = evaluate(cmd, &mut names);
        let env = next_env;
        next_env += 1;
        envs.insert(env, names);
        let mut response = json!({"env": env});
        if !messages.is_empty() {
            response["messages"] = Value::Array(messages);
        }
        if !sorries.is_empty() {
            response["sorries"] = Value::Array(sorries);
        }
        let _ = writeln!(
            stdout,
            "{}\n",
            serde_json::to_string_pretty(&response).expect("json")
        );
        let _ = stdout.flush();
    }
}
