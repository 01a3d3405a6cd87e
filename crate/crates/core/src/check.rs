//! Static checks that need no provider: parsing plus a scan for variables
//! that are read before anything defines them.
//!
//! Undefined names are warnings, not errors, because callers may supply
//! them at run time.

use std::collections::HashSet;
use std::path::Path;

use crate::ast::{Block, BlockKind, CodeLang, Program, ReadSource};
use crate::expr::parse_expr;
use crate::parser::{parse_program_with_warnings, ParseDiagnostic, Severity, SourceSpan};
use crate::template::{expression_source, template_free_vars};
use crate::value::Value;
use crate::yaml::Span;

/// Parses `text` and scans it. Errors come first, then warnings in source
/// order.
pub fn check_source(text: &str, path: &Path) -> Vec<ParseDiagnostic> {
    match parse_program_with_warnings(text, path) {
        Err(diags) => diags,
        Ok((program, mut diags)) => {
            diags.extend(check_program(&program));
            diags.sort_by_key(|d| {
                (
                    d.severity != Severity::Error,
                    d.span.start_line,
                    d.span.start_col,
                )
            });
            diags
        }
    }
}

pub fn has_errors(diags: &[ParseDiagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Scans a parsed program for undefined variables and bad expressions.
pub fn check_program(program: &Program) -> Vec<ParseDiagnostic> {
    let mut s = Scanner {
        file: &program.source_path,
        dir: program
            .source_path
            .parent()
            .unwrap_or(Path::new("."))
            .to_path_buf(),
        defined: vec![HashSet::new()],
        opaque: false,
        diags: Vec::new(),
        last_span: None,
    };
    for (name, def) in &program.defs {
        s.block(def, Some(name));
        s.define(name);
    }
    s.block(&program.root, None);
    s.diags
}

struct Scanner<'a> {
    file: &'a Path,
    dir: std::path::PathBuf,
    defined: Vec<HashSet<String>>,
    /// Set once an import could not be resolved; its names are unknown.
    opaque: bool,
    diags: Vec<ParseDiagnostic>,
    last_span: Option<Span>,
}

impl Scanner<'_> {
    fn define(&mut self, name: &str) {
        self.defined
            .last_mut()
            .expect("frame")
            .insert(name.to_string());
    }

    fn is_defined(&self, name: &str) -> bool {
        self.defined.iter().any(|f| f.contains(name))
    }

    fn report(&mut self, severity: Severity, message: String) {
        let span = self.last_span.unwrap_or_default();
        self.diags.push(ParseDiagnostic {
            severity,
            message,
            span: SourceSpan::from_span(self.file, span),
        });
    }

    fn names(&mut self, names: impl IntoIterator<Item = String>) {
        if self.opaque {
            return;
        }
        let mut seen = HashSet::new();
        for n in names {
            if !self.is_defined(&n) && seen.insert(n.clone()) {
                self.report(
                    Severity::Warning,
                    format!("variable `{n}` is not defined before use (it must be supplied at run time)"),
                );
            }
        }
    }

    fn template(&mut self, s: &str) {
        match template_free_vars(s) {
            Ok(vars) => self.names(vars),
            Err(e) => self.report(Severity::Error, format!("invalid template: {e}")),
        }
    }

    fn expression(&mut self, s: &str) {
        match parse_expr(expression_source(s)) {
            Ok(ast) => self.names(ast.free_vars()),
            Err(e) => self.report(Severity::Error, format!("invalid expression `{s}`: {e}")),
        }
    }

    fn value(&mut self, v: &Value) {
        match v {
            Value::String(s) => self.template(s),
            Value::Array(items) => items.iter().for_each(|x| self.value(x)),
            Value::Object(m) => m.values().for_each(|x| self.value(x)),
            _ => {}
        }
    }

    fn import(&mut self, path: &str) {
        let full = self.dir.join(path);
        let parsed = std::fs::read_to_string(&full)
            .ok()
            .and_then(|text| crate::parser::parse_program(&text, &full).ok());
        match parsed {
            Some(p) => p.defs.keys().for_each(|k| self.define(k)),
            None => self.opaque = true,
        }
    }

    fn block(&mut self, b: &Block, name: Option<&str>) {
        if b.span.is_some() {
            self.last_span = b.span;
        }
        match &b.kind {
            BlockKind::Literal(s) => self.template(s),
            BlockKind::Text(parts) | BlockKind::LastOf(parts) | BlockKind::Array(parts) => {
                for p in parts {
                    self.block(p, None);
                }
            }
            BlockKind::Message { content } => self.block(content, None),
            BlockKind::Model(m) => {
                self.template(&m.model);
                if let Some(p) = &m.parameters {
                    self.value(&Value::Object(p.clone()));
                }
                if let Some(input) = &m.input {
                    self.block(input, None);
                }
            }
            BlockKind::Code { lang, code } => match lang {
                CodeLang::Python => {}
                CodeLang::Jinja | CodeLang::Command => self.template(code),
            },
            BlockKind::If {
                condition,
                then,
                otherwise,
            } => {
                self.expression(condition.source());
                self.block(then, None);
                if let Some(o) = otherwise {
                    self.block(o, None);
                }
            }
            BlockKind::Repeat(r) => {
                if let Some(f) = &r.for_each {
                    self.expression(f.iterable.source());
                    self.define(&f.var);
                }
                self.block(&r.body, None);
                if let Some(u) = &r.until {
                    self.last_span = b.span.or(self.last_span);
                    self.expression(u.source());
                }
            }
            BlockKind::Data { data, raw } => {
                if !raw {
                    self.value(data);
                }
            }
            BlockKind::Function(f) => {
                let mut frame: HashSet<String> = f.params.keys().cloned().collect();
                if let Some(n) = b.def.as_deref().or(name) {
                    frame.insert(n.to_string());
                }
                self.defined.push(frame);
                self.block(&f.body, None);
                self.defined.pop();
            }
            BlockKind::Call { callee, args } => {
                self.expression(callee.source());
                self.value(&Value::Object(args.clone()));
            }
            BlockKind::Import { path } => self.import(path),
            BlockKind::Read { source, message } => {
                if let ReadSource::File(p) = source {
                    self.template(p);
                }
                if let Some(m) = message {
                    self.template(m);
                }
            }
        }
        if let Some(d) = &b.def {
            self.define(d);
        }
    }
}
