//! Tree-walking evaluator.
//!
//! Every block yields a [`Value`] and may append messages to the
//! [`Context`] it runs in. Scope and context are threaded explicitly; the
//! [`Interpreter`] owns the [`Environment`] and the trace.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::ast::{
    Block, BlockKind, CodeLang, FunctionBlock, JoinMode, ModelBlock, ParserKind, Program,
    ReadSource, RepeatBlock,
};
use crate::code::{exportable_scope, CodeError, CodeRunner, NoRunner};
use crate::expr::{ExprError, Lookup};
use crate::parser::parse_program;
use crate::provider::{ModelProvider, ModelRequest, ProviderError};
use crate::template::{eval_field, expand_template, expand_value, render_template};
use crate::types::{check_value, decoding_params, merge_parameters, CheckResult, TypeExpr};
use crate::value::{stringify, Map, Message, Role, Value};

/// Iteration cap for `until` loops that set no `maxIterations`.
pub const DEFAULT_UNTIL_LIMIT: usize = 100;

/// A function value: parameters, body and the scope it was defined in.
pub struct Closure {
    pub name: String,
    pub params: IndexMap<String, TypeExpr>,
    pub body: Block,
    pub scope: Scope,
    pub signature: String,
    pub dir: PathBuf,
}

impl fmt::Debug for Closure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<function {}>", self.signature)
    }
}

/// `name(p1: t1, p2: t2)` using shorthand type names.
pub fn extract_signature(f: &FunctionBlock, name: &str) -> String {
    let params: Vec<String> = f.params.iter().map(|(k, t)| format!("{k}: {t}")).collect();
    format!("{name}({})", params.join(", "))
}

/// Chain of frames; lookups search innermost first.
#[derive(Debug, Clone)]
pub struct Scope {
    frames: Vec<Map>,
}

impl Default for Scope {
    fn default() -> Self {
        Scope {
            frames: vec![Map::new()],
        }
    }
}

impl Scope {
    pub fn new() -> Self {
        Scope::default()
    }

    pub fn from_map(m: Map) -> Self {
        Scope { frames: vec![m] }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.frames.iter().rev().find_map(|f| f.get(name))
    }

    /// Binds in the innermost frame.
    pub fn set(&mut self, name: impl Into<String>, v: Value) {
        self.frames
            .last_mut()
            .expect("scope has a frame")
            .insert(name.into(), v);
    }

    pub fn push(&mut self, frame: Map) {
        self.frames.push(frame);
    }

    pub fn pop(&mut self) -> Option<Map> {
        (self.frames.len() > 1).then(|| self.frames.pop()).flatten()
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    /// All visible bindings, inner frames shadowing outer ones.
    pub fn flatten(&self) -> Map {
        let mut out = Map::new();
        for frame in &self.frames {
            for (k, v) in frame {
                out.insert(k.clone(), v.clone());
            }
        }
        out
    }
}

impl Lookup for Scope {
    fn lookup(&self, name: &str) -> Option<&Value> {
        self.get(name)
    }
}

/// Append-only message list. Each context gets a fresh id so traces can tell
/// contexts apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    id: usize,
    messages: Vec<Message>,
}

impl Context {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.messages
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    BlockStart,
    BlockEnd,
    ModelCall,
    ModelResponse,
    CodeExec,
    ContextAppend,
    SpecViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: TraceKind,
    pub path: Vec<usize>,
    pub payload: Value,
    pub timestamp: u64,
}

pub trait Clock: Send {
    fn now_millis(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_millis(&self) -> u64 {
        self.0
    }
}

/// Receives trace events as they happen. Shared between runs, so
/// implementations synchronize internally.
pub trait TraceSink: Send + Sync {
    fn record(&self, ev: &TraceEvent);
}

/// Writes one JSON object per line.
pub struct JsonlSink {
    out: Mutex<Box<dyn Write + Send>>,
}

impl JsonlSink {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        JsonlSink {
            out: Mutex::new(Box::new(out)),
        }
    }

    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(JsonlSink::new(std::io::BufWriter::new(
            std::fs::File::create(path)?,
        )))
    }
}

impl TraceSink for JsonlSink {
    fn record(&self, ev: &TraceEvent) {
        let line = serde_json::to_string(ev).expect("trace events serialize");
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        let _ = writeln!(out, "{line}").and_then(|_| out.flush());
    }
}

/// What a run needs from the outside world.
pub struct Environment {
    pub provider: Box<dyn ModelProvider>,
    pub code_runner: Box<dyn CodeRunner>,
    pub clock: Box<dyn Clock>,
    pub seed: u64,
    pub lenient_specs: bool,
    pub sinks: Vec<Arc<dyn TraceSink>>,
    pub input: Box<dyn BufRead + Send>,
}

impl Environment {
    pub fn new(provider: impl ModelProvider + 'static) -> Self {
        Environment {
            provider: Box::new(provider),
            code_runner: Box::new(NoRunner),
            clock: Box::new(SystemClock),
            seed: 0,
            lenient_specs: false,
            sinks: Vec::new(),
            input: Box::new(std::io::BufReader::new(std::io::stdin())),
        }
    }

    pub fn with_code_runner(mut self, runner: impl CodeRunner + 'static) -> Self {
        self.code_runner = Box::new(runner);
        self
    }

    pub fn with_clock(mut self, clock: impl Clock + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lenient_specs(mut self, on: bool) -> Self {
        self.lenient_specs = on;
        self
    }

    pub fn with_sink(mut self, sink: Arc<dyn TraceSink>) -> Self {
        self.sinks.push(sink);
        self
    }

    pub fn with_input(mut self, input: impl BufRead + Send + 'static) -> Self {
        self.input = Box::new(input);
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{parser} parser failed: {message}")]
pub struct ParserError {
    pub parser: &'static str,
    pub message: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalErrorKind {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("model call failed: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Parser(#[from] ParserError),
    #[error("spec violation: {0}")]
    Spec(CheckResult),
    #[error("code block failed: {0}")]
    Code(#[from] CodeError),
    #[error("command exited with {status}: {stderr}")]
    Command { status: String, stderr: String },
    #[error("repeat exceeded maxIterations ({0})")]
    MaxIterations(usize),
    #[error("import cycle: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" -> "))]
    ImportCycle(Vec<PathBuf>),
    #[error("cannot import {path}: {message}")]
    Import { path: PathBuf, message: String },
    #[error("{0}")]
    Type(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind} (block path {path:?})")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub path: Vec<usize>,
}

#[derive(Debug)]
pub struct RunResult {
    pub result: Value,
    pub final_context: Vec<Message>,
    pub scope: Scope,
    pub trace: Vec<TraceEvent>,
    pub errors: Vec<EvalError>,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Strips one fenced code block wrapper around the whole text, if present.
pub fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    if t.len() >= 6 && t.starts_with("```") && t.ends_with("```") {
        let inner = &t[3..t.len() - 3];
        return match inner.find('\n') {
            Some(i) => &inner[i + 1..],
            None => inner,
        };
    }
    raw
}

pub fn apply_parser(raw: &str, parser: ParserKind) -> Result<Value, ParserError> {
    let fail = |message: String| ParserError {
        parser: parser.name(),
        message,
        raw: raw.to_string(),
    };
    match parser {
        ParserKind::None => Ok(Value::String(raw.to_string())),
        ParserKind::Json => {
            Value::from_json_str(strip_fence(raw).trim()).map_err(|e| fail(e.to_string()))
        }
        ParserKind::Yaml => {
            crate::yaml::load_value(strip_fence(raw)).map_err(|e| fail(e.to_string()))
        }
    }
}

pub struct Interpreter {
    env: Environment,
    trace: Vec<TraceEvent>,
    path: Vec<usize>,
    next_context: usize,
    imports: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

type EvalResult = Result<Value, EvalError>;

impl Interpreter {
    pub fn new(env: Environment) -> Self {
        Interpreter {
            env,
            trace: Vec::new(),
            path: Vec::new(),
            next_context: 0,
            imports: Vec::new(),
            dirs: Vec::new(),
        }
    }

    pub fn env_mut(&mut self) -> &mut Environment {
        &mut self.env
    }

    pub fn into_env(self) -> Environment {
        self.env
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.trace)
    }

    pub fn new_context(&mut self) -> Context {
        let id = self.next_context;
        self.next_context += 1;
        Context {
            id,
            messages: Vec::new(),
        }
    }

    fn fork_context(&mut self, ctx: &Context) -> Context {
        let mut c = self.new_context();
        c.messages = ctx.messages.clone();
        c
    }

    /// Sets the directory relative imports and reads resolve against.
    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.dirs = vec![dir.into()];
    }

    fn current_dir(&self) -> PathBuf {
        self.dirs
            .last()
            .cloned()
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn emit(&mut self, kind: TraceKind, payload: Map) {
        let ev = TraceEvent {
            kind,
            path: self.path.clone(),
            payload: Value::Object(payload),
            timestamp: self.env.clock.now_millis(),
        };
        for sink in &self.env.sinks {
            sink.record(&ev);
        }
        self.trace.push(ev);
    }

    fn err(&self, kind: impl Into<EvalErrorKind>) -> EvalError {
        EvalError {
            kind: kind.into(),
            path: self.path.clone(),
        }
    }

    /// Appends one message to `ctx` and records it.
    pub fn contribute(&mut self, ctx: &mut Context, msg: Message, kind: &str) {
        let mut p = Map::new();
        p.insert("context".into(), Value::Int(ctx.id as i64));
        p.insert("role".into(), Value::from(msg.role.as_str()));
        p.insert("content".into(), Value::from(msg.content.as_str()));
        p.insert("kind".into(), Value::from(kind));
        if let Some(d) = &msg.def_name {
            p.insert("def".into(), Value::from(d.as_str()));
        }
        self.emit(TraceKind::ContextAppend, p);
        ctx.messages.push(msg);
    }

    fn contribute_result(&mut self, ctx: &mut Context, b: &Block, role: Role, v: &Value) {
        let mut msg = Message::new(role, stringify(v));
        msg.def_name = b.def.clone();
        self.contribute(ctx, msg, b.kind_name());
    }

    /// Runs a whole program: defs in order into the outermost frame, then
    /// the root against an empty context.
    pub fn run(&mut self, program: &Program, initial: Scope) -> RunResult {
        let mut scope = initial;
        let canonical = program
            .source_path
            .canonicalize()
            .unwrap_or_else(|_| program.source_path.clone());
        if self.dirs.is_empty() {
            let dir = canonical
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default();
            self.dirs.push(dir);
        }
        self.imports.push(canonical);
        let mut errors = Vec::new();
        let mut root_ctx = self.new_context();
        let mut result = Value::Null;
        let n_defs = program.defs.len();
        let outcome = (|| {
            for (i, (name, def)) in program.defs.iter().enumerate() {
                let mut scratch = self.new_context();
                self.path.push(i);
                let v = self.eval_named(def, &mut scope, &mut scratch, Role::User, Some(name));
                self.path.pop();
                scope.set(name.clone(), v?);
            }
            self.path.push(n_defs);
            let v = self.eval_block(&program.root, &mut scope, &mut root_ctx, Role::User);
            self.path.pop();
            v
        })();
        self.imports.pop();
        match outcome {
            Ok(v) => result = v,
            Err(e) => errors.push(e),
        }
        RunResult {
            result,
            final_context: root_ctx.messages,
            scope,
            trace: self.take_trace(),
            errors,
        }
    }

    /// Evaluates one block; children inherit `role` unless they set their own.
    pub fn eval_block(
        &mut self,
        b: &Block,
        scope: &mut Scope,
        ctx: &mut Context,
        role: Role,
    ) -> EvalResult {
        self.eval_named(b, scope, ctx, role, None)
    }

    /// Evaluates `b` as child `idx` of the current trace path.
    pub fn eval_child(
        &mut self,
        idx: usize,
        b: &Block,
        scope: &mut Scope,
        ctx: &mut Context,
        role: Role,
    ) -> EvalResult {
        self.path.push(idx);
        let r = self.eval_block(b, scope, ctx, role);
        self.path.pop();
        r
    }

    fn eval_named(
        &mut self,
        b: &Block,
        scope: &mut Scope,
        ctx: &mut Context,
        inherited: Role,
        name: Option<&str>,
    ) -> EvalResult {
        let kind = b.kind_name();
        let mut start = Map::new();
        start.insert("kind".into(), Value::from(kind));
        if let Some(d) = &b.def {
            start.insert("def".into(), Value::from(d.as_str()));
        }
        self.emit(TraceKind::BlockStart, start);
        let name = b.def.as_deref().or(name);
        let res = self
            .eval_kind(b, scope, ctx, inherited, name)
            .and_then(|v| self.check_spec(b, v));
        let mut end = Map::new();
        end.insert("kind".into(), Value::from(kind));
        match &res {
            Ok(v) => {
                if let Some(d) = &b.def {
                    scope.set(d.clone(), v.clone());
                }
                end.insert("result".into(), Value::from(v.to_json()));
            }
            Err(e) => {
                end.insert("error".into(), Value::from(e.kind.to_string()));
            }
        }
        self.emit(TraceKind::BlockEnd, end);
        res
    }

    fn check_spec(&mut self, b: &Block, v: Value) -> EvalResult {
        let Some(spec) = &b.spec else { return Ok(v) };
        let check = check_value(&v, spec);
        if check.ok {
            return Ok(v);
        }
        let mut p = Map::new();
        p.insert("spec".into(), Value::from(spec.to_string()));
        p.insert(
            "violations".into(),
            Value::from(serde_json::to_value(&check.violations).expect("violations serialize")),
        );
        p.insert("lenient".into(), Value::Bool(self.env.lenient_specs));
        self.emit(TraceKind::SpecViolation, p);
        if self.env.lenient_specs {
            log::warn!("spec violation (ignored): {check}");
            Ok(v)
        } else {
            Err(self.err(EvalErrorKind::Spec(check)))
        }
    }

    fn eval_kind(
        &mut self,
        b: &Block,
        scope: &mut Scope,
        ctx: &mut Context,
        inherited: Role,
        name: Option<&str>,
    ) -> EvalResult {
        let role = b.role.unwrap_or(inherited);
        match &b.kind {
            BlockKind::Literal(s) => {
                let v = expand_template(s, scope).map_err(|e| self.err(e))?;
                self.contribute_result(ctx, b, role, &v);
                Ok(v)
            }
            BlockKind::Text(parts) => {
                let mut out = String::new();
                for (i, p) in parts.iter().enumerate() {
                    out.push_str(&stringify(&self.eval_child(i, p, scope, ctx, role)?));
                }
                Ok(Value::String(out))
            }
            BlockKind::LastOf(parts) => {
                let mut last = Value::Null;
                for (i, p) in parts.iter().enumerate() {
                    last = self.eval_child(i, p, scope, ctx, role)?;
                }
                Ok(last)
            }
            BlockKind::Array(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                for (i, p) in parts.iter().enumerate() {
                    out.push(self.eval_child(i, p, scope, ctx, role)?);
                }
                Ok(Value::Array(out))
            }
            BlockKind::Message { content } => {
                let mut inner = self.fork_context(ctx);
                let v = self.eval_child(0, content, scope, &mut inner, role)?;
                self.contribute_result(ctx, b, role, &v);
                Ok(v)
            }
            BlockKind::Model(m) => self.eval_model(b, m, scope, ctx),
            BlockKind::Code { lang, code } => {
                let v = self.eval_code(*lang, code, scope)?;
                self.contribute_result(ctx, b, role, &v);
                Ok(v)
            }
            BlockKind::If {
                condition,
                then,
                otherwise,
            } => {
                let cond = eval_field(condition.source(), scope).map_err(|e| self.err(e))?;
                if cond.is_truthy() {
                    self.eval_child(0, then, scope, ctx, role)
                } else if let Some(o) = otherwise {
                    self.eval_child(1, o, scope, ctx, role)
                } else {
                    Ok(Value::Null)
                }
            }
            BlockKind::Repeat(r) => self.eval_repeat(r, scope, ctx, role),
            BlockKind::Data { data, raw } => {
                let v = if *raw {
                    data.clone()
                } else {
                    expand_value(data, scope).map_err(|e| self.err(e))?
                };
                self.contribute_result(ctx, b, role, &v);
                Ok(v)
            }
            BlockKind::Function(f) => {
                let name = name.unwrap_or("anonymous").to_string();
                Ok(Value::Function(Arc::new(Closure {
                    signature: extract_signature(f, &name),
                    name,
                    params: f.params.clone(),
                    body: (*f.body).clone(),
                    scope: scope.clone(),
                    dir: self.current_dir(),
                })))
            }
            BlockKind::Call { callee, args } => {
                let v = self.eval_call(callee.source(), args, scope)?;
                self.contribute_result(ctx, b, role, &v);
                Ok(v)
            }
            BlockKind::Import { path } => self.eval_import(path, scope),
            BlockKind::Read { source, message } => {
                let v = self.eval_read(source, message.as_deref(), scope)?;
                self.contribute_result(ctx, b, role, &v);
                Ok(v)
            }
        }
    }

    fn eval_model(
        &mut self,
        b: &Block,
        m: &ModelBlock,
        scope: &mut Scope,
        ctx: &mut Context,
    ) -> EvalResult {
        let messages = match &m.input {
            Some(input) => {
                let mut sub = self.new_context();
                self.eval_child(0, input, scope, &mut sub, Role::User)?;
                sub.messages
            }
            None => ctx.messages.clone(),
        };
        let mut params = match &m.parameters {
            Some(p) => {
                match expand_value(&Value::Object(p.clone()), scope).map_err(|e| self.err(e))? {
                    Value::Object(o) => o,
                    _ => unreachable!("objects expand to objects"),
                }
            }
            None => Map::new(),
        };
        let mut warnings = Vec::new();
        if let Some(spec) = &b.spec {
            let dp = decoding_params(spec);
            if !dp.is_empty() {
                let (merged, w) = merge_parameters(&params, &dp);
                params = merged;
                warnings.extend(w);
            }
        }
        if params.contains_key("response_format")
            && !self.env.provider.supports_constrained_decoding()
        {
            params.shift_remove("response_format");
            warnings.push(
                "provider does not support constrained decoding; response_format dropped"
                    .to_string(),
            );
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        let model = render_template(&m.model, scope).map_err(|e| self.err(e))?;
        let mut call = Map::new();
        call.insert("model".into(), Value::from(model.as_str()));
        call.insert(
            "messages".into(),
            Value::from(serde_json::to_value(&messages).expect("messages serialize")),
        );
        call.insert("parameters".into(), Value::Object(params.clone()));
        if !warnings.is_empty() {
            call.insert(
                "warnings".into(),
                Value::Array(warnings.iter().map(|w| Value::from(w.as_str())).collect()),
            );
        }
        self.emit(TraceKind::ModelCall, call);
        let req = ModelRequest {
            model,
            messages,
            params,
        };
        let resp = self.env.provider.complete(&req).map_err(|e| self.err(e))?;
        let mut r = Map::new();
        r.insert("text".into(), Value::from(resp.text.as_str()));
        r.insert(
            "finishReason".into(),
            Value::from(serde_json::to_value(resp.finish_reason).expect("enum serializes")),
        );
        self.emit(TraceKind::ModelResponse, r);
        let mut msg = Message::new(b.role.unwrap_or(Role::Assistant), resp.text.as_str());
        msg.def_name = b.def.clone();
        self.contribute(ctx, msg, "model");
        apply_parser(&resp.text, m.parser).map_err(|e| self.err(e))
    }

    fn eval_code(&mut self, lang: CodeLang, code: &str, scope: &Scope) -> EvalResult {
        let (v, stdout) = match lang {
            CodeLang::Python => {
                let vars = exportable_scope(&scope.flatten());
                let out = self
                    .env
                    .code_runner
                    .execute(code, &vars)
                    .map_err(|e| self.err(e))?;
                (out.result, out.stdout)
            }
            CodeLang::Jinja => (
                Value::String(render_template(code, scope).map_err(|e| self.err(e))?),
                String::new(),
            ),
            CodeLang::Command => {
                let line = render_template(code, scope).map_err(|e| self.err(e))?;
                let out = std::process::Command::new("sh")
                    .arg("-c")
                    .arg(&line)
                    .stdin(std::process::Stdio::null())
                    .output()
                    .map_err(|e| self.err(EvalErrorKind::Io(format!("cannot run sh: {e}"))))?;
                if !out.status.success() {
                    return Err(self.err(EvalErrorKind::Command {
                        status: out.status.to_string(),
                        stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
                    }));
                }
                let mut text = String::from_utf8_lossy(&out.stdout).into_owned();
                if text.ends_with('\n') {
                    text.pop();
                }
                (Value::String(text), String::new())
            }
        };
        let mut p = Map::new();
        p.insert("lang".into(), Value::from(lang.name()));
        p.insert("code".into(), Value::from(code));
        p.insert("result".into(), Value::from(v.to_json()));
        if !stdout.is_empty() {
            p.insert("stdout".into(), Value::from(stdout));
        }
        self.emit(TraceKind::CodeExec, p);
        Ok(v)
    }

    fn eval_repeat(
        &mut self,
        r: &RepeatBlock,
        scope: &mut Scope,
        ctx: &mut Context,
        role: Role,
    ) -> EvalResult {
        let mut results = Vec::new();
        let until = |me: &Self, scope: &Scope| -> Result<bool, EvalError> {
            match &r.until {
                Some(u) => eval_field(u.source(), scope)
                    .map(|v| v.is_truthy())
                    .map_err(|e| me.err(e)),
                None => Ok(false),
            }
        };
        match &r.for_each {
            Some(fc) => {
                let items =
                    match eval_field(fc.iterable.source(), scope).map_err(|e| self.err(e))? {
                        Value::Array(items) => items,
                        other => {
                            return Err(self.err(EvalErrorKind::Type(format!(
                                "`for` needs an array, got {}",
                                other.type_name()
                            ))))
                        }
                    };
                let limit = r.max_iterations.unwrap_or(items.len());
                for (i, item) in items.into_iter().enumerate() {
                    if i >= limit {
                        return Err(self.err(EvalErrorKind::MaxIterations(limit)));
                    }
                    scope.set(fc.var.clone(), item);
                    results.push(self.eval_child(i, &r.body, scope, ctx, role)?);
                    if until(self, scope)? {
                        break;
                    }
                }
            }
            None => {
                let limit = r.max_iterations.unwrap_or(DEFAULT_UNTIL_LIMIT);
                let mut i = 0;
                loop {
                    if i >= limit {
                        return Err(self.err(EvalErrorKind::MaxIterations(limit)));
                    }
                    results.push(self.eval_child(i, &r.body, scope, ctx, role)?);
                    i += 1;
                    if until(self, scope)? {
                        break;
                    }
                }
            }
        }
        Ok(match r.join {
            JoinMode::LastOf => results.pop().unwrap_or(Value::Null),
            JoinMode::Array => Value::Array(results),
            JoinMode::Text => Value::String(results.iter().map(stringify).collect()),
        })
    }

    fn eval_call(&mut self, callee: &str, args: &Map, scope: &Scope) -> EvalResult {
        let f = match eval_field(callee, scope).map_err(|e| self.err(e))? {
            Value::Function(f) => f,
            other => {
                return Err(self.err(EvalErrorKind::Type(format!(
                    "`call` target is {}, not a function",
                    other.type_name()
                ))))
            }
        };
        let mut frame = Map::new();
        frame.insert(f.name.clone(), Value::Function(f.clone()));
        for (pname, ptype) in &f.params {
            let Some(raw) = args.get(pname) else {
                return Err(self.err(EvalErrorKind::Type(format!(
                    "missing argument `{pname}` for {}",
                    f.signature
                ))));
            };
            let v = expand_value(raw, scope).map_err(|e| self.err(e))?;
            let check = check_value(&v, ptype);
            if !check.ok {
                return Err(self.err(EvalErrorKind::Type(format!(
                    "argument `{pname}` of {}: {check}",
                    f.signature
                ))));
            }
            frame.insert(pname.clone(), v);
        }
        if let Some(extra) = args.keys().find(|k| !f.params.contains_key(*k)) {
            return Err(self.err(EvalErrorKind::Type(format!(
                "unexpected argument `{extra}` for {}",
                f.signature
            ))));
        }
        let mut fscope = f.scope.clone();
        fscope.push(frame);
        let mut fctx = self.new_context();
        self.dirs.push(f.dir.clone());
        let v = self.eval_child(0, &f.body, &mut fscope, &mut fctx, Role::User);
        self.dirs.pop();
        v
    }

    fn eval_import(&mut self, rel: &str, scope: &mut Scope) -> EvalResult {
        let path = self.current_dir().join(rel);
        let canonical = path.canonicalize().map_err(|e| {
            self.err(EvalErrorKind::Import {
                path: path.clone(),
                message: e.to_string(),
            })
        })?;
        if self.imports.contains(&canonical) {
            let mut chain = self.imports.clone();
            chain.push(canonical);
            return Err(self.err(EvalErrorKind::ImportCycle(chain)));
        }
        let text = std::fs::read_to_string(&canonical).map_err(|e| {
            self.err(EvalErrorKind::Import {
                path: canonical.clone(),
                message: e.to_string(),
            })
        })?;
        let program = parse_program(&text, &canonical).map_err(|diags| {
            self.err(EvalErrorKind::Import {
                path: canonical.clone(),
                message: diags
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            })
        })?;
        self.imports.push(canonical.clone());
        self.dirs.push(
            canonical
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        );
        let result = (|| {
            for (i, (name, def)) in program.defs.iter().enumerate() {
                let mut scratch = self.new_context();
                self.path.push(i);
                let v = self.eval_named(def, scope, &mut scratch, Role::User, Some(name));
                self.path.pop();
                scope.set(name.clone(), v?);
            }
            if matches!(
                &program.root.kind,
                BlockKind::Data {
                    data: Value::Null,
                    ..
                }
            ) {
                return Ok(Value::Null);
            }
            let mut isolated = self.new_context();
            self.eval_child(
                program.defs.len(),
                &program.root,
                scope,
                &mut isolated,
                Role::User,
            )
        })();
        self.dirs.pop();
        self.imports.pop();
        result
    }

    fn eval_read(
        &mut self,
        source: &ReadSource,
        message: Option<&str>,
        scope: &Scope,
    ) -> EvalResult {
        match source {
            ReadSource::Stdin => {
                if let Some(m) = message {
                    eprint!("{m}");
                }
                let mut line = String::new();
                self.env
                    .input
                    .read_line(&mut line)
                    .map_err(|e| self.err(EvalErrorKind::Io(e.to_string())))?;
                let trimmed = line.strip_suffix('\n').unwrap_or(&line);
                Ok(Value::from(trimmed.strip_suffix('\r').unwrap_or(trimmed)))
            }
            ReadSource::File(p) => {
                let rel = render_template(p, scope).map_err(|e| self.err(e))?;
                let path = self.current_dir().join(rel);
                std::fs::read_to_string(&path)
                    .map(Value::String)
                    .map_err(|e| self.err(EvalErrorKind::Io(format!("{}: {e}", path.display()))))
            }
        }
    }
}

/// Runs `p` with a fresh interpreter.
pub fn run_program(p: &Program, initial: Scope, env: Environment) -> RunResult {
    Interpreter::new(env).run(p, initial)
}
