//! Prints contributions to the top-level context as they happen.

use std::io::Write;
use std::sync::Mutex;

use pdl_core::{TraceEvent, TraceKind, TraceSink, Value};

pub const GREEN: &str = "\x1b[32m";
pub const MAGENTA: &str = "\x1b[35m";
pub const RESET: &str = "\x1b[0m";

/// ANSI color for a contribution, by the kind of block that made it.
pub fn color_for(kind: &str) -> Option<&'static str> {
    match kind {
        "model" => Some(GREEN),
        "code" | "call" => Some(MAGENTA),
        _ => None,
    }
}

pub struct LivePrinter<W> {
    out: Mutex<W>,
    color: bool,
    context: i64,
}

impl<W: Write + Send> LivePrinter<W> {
    pub fn new(out: W, color: bool) -> Self {
        LivePrinter {
            out: Mutex::new(out),
            color,
            context: 0,
        }
    }
}

impl<W: Write + Send> TraceSink for LivePrinter<W> {
    fn record(&self, ev: &TraceEvent) {
        if ev.kind != TraceKind::ContextAppend
            || ev.payload.get("context") != Some(&Value::Int(self.context))
        {
            return;
        }
        let content = ev
            .payload
            .get("content")
            .and_then(Value::as_str)
            .unwrap_or_default();
        let kind = ev
            .payload
            .get("kind")
            .and_then(Value::as_str)
            .unwrap_or_default();
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        let _ = match color_for(kind).filter(|_| self.color) {
            Some(c) => writeln!(out, "{c}{content}{RESET}"),
            None => writeln!(out, "{content}"),
        };
        let _ = out.flush();
    }
}
