//! Program tree: one [`Block`] per YAML node.

use std::path::PathBuf;

use indexmap::IndexMap;

use crate::types::TypeExpr;
use crate::value::{Map, Role, Value};
use crate::yaml::Span;

/// An expression string, either bare (`x > 1`) or wrapped (`${ x > 1 }`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr(pub String);

impl Expr {
    pub fn new(src: impl Into<String>) -> Self {
        Expr(src.into())
    }

    pub fn source(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParserKind {
    Json,
    Yaml,
    #[default]
    None,
}

impl ParserKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(ParserKind::Json),
            "yaml" => Some(ParserKind::Yaml),
            "none" => Some(ParserKind::None),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParserKind::Json => "json",
            ParserKind::Yaml => "yaml",
            ParserKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeLang {
    Python,
    Jinja,
    Command,
}

impl CodeLang {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "python" => Some(CodeLang::Python),
            "jinja" => Some(CodeLang::Jinja),
            "command" => Some(CodeLang::Command),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodeLang::Python => "python",
            CodeLang::Jinja => "jinja",
            CodeLang::Command => "command",
        }
    }
}

/// How a repeat block combines its iteration results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JoinMode {
    #[default]
    LastOf,
    Array,
    Text,
}

impl JoinMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lastOf" => Some(JoinMode::LastOf),
            "array" => Some(JoinMode::Array),
            "text" => Some(JoinMode::Text),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            JoinMode::LastOf => "lastOf",
            JoinMode::Array => "array",
            JoinMode::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadSource {
    Stdin,
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub model: String,
    pub parameters: Option<Map>,
    pub input: Option<Box<Block>>,
    pub parser: ParserKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForClause {
    pub var: String,
    pub iterable: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatBlock {
    pub for_each: Option<ForClause>,
    pub until: Option<Expr>,
    pub max_iterations: Option<usize>,
    pub join: JoinMode,
    pub body: Box<Block>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionBlock {
    pub params: IndexMap<String, TypeExpr>,
    pub body: Box<Block>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    /// A bare YAML string; templates inside it are expanded.
    Literal(String),
    Text(Vec<Block>),
    LastOf(Vec<Block>),
    Array(Vec<Block>),
    Message {
        content: Box<Block>,
    },
    Model(ModelBlock),
    Code {
        lang: CodeLang,
        code: String,
    },
    If {
        condition: Expr,
        then: Box<Block>,
        otherwise: Option<Box<Block>>,
    },
    Repeat(RepeatBlock),
    Data {
        data: Value,
        raw: bool,
    },
    Function(FunctionBlock),
    Call {
        callee: Expr,
        args: Map,
    },
    Import {
        path: String,
    },
    Read {
        source: ReadSource,
        message: Option<String>,
    },
}

/// A block with its common envelope.
///
/// Equality is structural and ignores source spans.
#[derive(Debug, Clone)]
pub struct Block {
    pub def: Option<String>,
    pub spec: Option<TypeExpr>,
    pub role: Option<Role>,
    pub description: Option<String>,
    pub kind: BlockKind,
    pub span: Option<Span>,
}

impl PartialEq for Block {
    fn eq(&self, other: &Self) -> bool {
        self.def == other.def
            && self.spec == other.spec
            && self.role == other.role
            && self.description == other.description
            && self.kind == other.kind
    }
}

impl Block {
    pub fn new(kind: BlockKind) -> Self {
        Block {
            def: None,
            spec: None,
            role: None,
            description: None,
            kind,
            span: None,
        }
    }

    pub fn literal(s: impl Into<String>) -> Self {
        Block::new(BlockKind::Literal(s.into()))
    }

    pub fn text(parts: Vec<Block>) -> Self {
        Block::new(BlockKind::Text(parts))
    }

    pub fn last_of(parts: Vec<Block>) -> Self {
        Block::new(BlockKind::LastOf(parts))
    }

    pub fn data(v: impl Into<Value>) -> Self {
        Block::new(BlockKind::Data {
            data: v.into(),
            raw: false,
        })
    }

    pub fn raw_data(v: impl Into<Value>) -> Self {
        Block::new(BlockKind::Data {
            data: v.into(),
            raw: true,
        })
    }

    pub fn message(role: Role, content: Block) -> Self {
        Block::new(BlockKind::Message {
            content: Box::new(content),
        })
        .with_role(role)
    }

    pub fn model(model: impl Into<String>) -> Self {
        Block::new(BlockKind::Model(ModelBlock {
            model: model.into(),
            parameters: None,
            input: None,
            parser: ParserKind::None,
        }))
    }

    pub fn call(callee: impl Into<String>, args: Map) -> Self {
        Block::new(BlockKind::Call {
            callee: Expr::new(callee),
            args,
        })
    }

    pub fn with_def(mut self, name: impl Into<String>) -> Self {
        self.def = Some(name.into());
        self
    }

    pub fn with_spec(mut self, spec: TypeExpr) -> Self {
        self.spec = Some(spec);
        self
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }

    pub fn kind_name(&self) -> &'static str {
        block_kind(self)
    }

    /// Direct children in evaluation-path order.
    pub fn children(&self) -> Vec<&Block> {
        match &self.kind {
            BlockKind::Text(parts) | BlockKind::LastOf(parts) | BlockKind::Array(parts) => {
                parts.iter().collect()
            }
            BlockKind::Message { content } => vec![content],
            BlockKind::Model(m) => m.input.iter().map(|b| b.as_ref()).collect(),
            BlockKind::If {
                then, otherwise, ..
            } => std::iter::once(then.as_ref())
                .chain(otherwise.as_deref())
                .collect(),
            BlockKind::Repeat(r) => vec![&r.body],
            BlockKind::Function(f) => vec![&f.body],
            BlockKind::Literal(_)
            | BlockKind::Code { .. }
            | BlockKind::Data { .. }
            | BlockKind::Call { .. }
            | BlockKind::Import { .. }
            | BlockKind::Read { .. } => Vec::new(),
        }
    }
}

/// Name of a block's variant, as used in traces.
pub fn block_kind(b: &Block) -> &'static str {
    match &b.kind {
        BlockKind::Literal(_) => "string",
        BlockKind::Text(_) => "text",
        BlockKind::LastOf(_) => "lastOf",
        BlockKind::Array(_) => "array",
        BlockKind::Message { .. } => "message",
        BlockKind::Model(_) => "model",
        BlockKind::Code { .. } => "code",
        BlockKind::If { .. } => "if",
        BlockKind::Repeat(_) => "repeat",
        BlockKind::Data { .. } => "data",
        BlockKind::Function(_) => "function",
        BlockKind::Call { .. } => "call",
        BlockKind::Import { .. } => "import",
        BlockKind::Read { .. } => "read",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub description: Option<String>,
    pub defs: IndexMap<String, Block>,
    pub root: Block,
    pub source_path: PathBuf,
}
