//! Interpreter, type checker and agent-pattern runtime for PDL, a
//! YAML-embedded prompt programming language.
//!
//! A program is a tree of blocks. Each block produces a value and appends
//! messages to an implicit chat context that later model calls see.
//!
//! ```
//! use pdl_core::{parse_program, run_program, Environment, MockProvider, Scope, Value};
//!
//! let program = parse_program("text:\n  - 'Hello, '\n  - ${ name }\n", "hello.pdl".as_ref()).unwrap();
//! let mut scope = Scope::new();
//! scope.set("name", Value::from("world"));
//! let run = run_program(&program, scope, Environment::new(MockProvider::from_responses(Vec::<String>::new())));
//! assert_eq!(run.result, Value::from("Hello, world"));
//! assert_eq!(run.final_context.len(), 2);
//! ```

pub mod ast;
pub mod check;
pub mod code;
pub mod eval;
pub mod expr;
pub mod harness;
pub mod parser;
pub mod patterns;
pub mod provider;
pub mod template;
pub mod types;
pub mod value;
pub mod yaml;

pub use ast::{block_kind, Block, BlockKind, Expr, ParserKind, Program};
pub use code::{CodeError, CodeRunner, ExecOutput, FnRunner, NoRunner, SidecarRunner};
pub use eval::{
    apply_parser, extract_signature, run_program, Closure, Context, Environment, EvalError,
    EvalErrorKind, FixedClock, Interpreter, JsonlSink, RunResult, Scope, SystemClock, TraceEvent,
    TraceKind, TraceSink,
};
pub use expr::{eval_expr, ExprError};
pub use parser::{infer_block_kind, parse_program, ParseDiagnostic, Severity, SourceSpan};
pub use provider::{
    apply_fault, FaultConfig, FaultKind, MockProvider, ModelProvider, ModelRequest, ModelResponse,
    ProviderError, ProviderSpec,
};
pub use template::render_template;
pub use types::{
    check_value, compile_type, decoding_params, parse_type_expr, CheckResult, TypeExpr,
};
pub use value::{canonical_json, stringify, Map, Message, Role, Value};
