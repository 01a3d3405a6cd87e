//! Generators, an emitter and law checkers shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use indexmap::IndexMap;
use pdl_core::ast::{
    CodeLang, ForClause, FunctionBlock, JoinMode, ModelBlock, ReadSource, RepeatBlock,
};
use pdl_core::patterns::Architecture;
use pdl_core::provider::FaultConfig;
use pdl_core::types::{Field, Primitive};
use pdl_core::{
    Block, BlockKind, Expr, Map, ParserKind, Program, Role, RunResult, TraceKind, TypeExpr, Value,
};
use proptest::collection::vec;
use proptest::prelude::*;
use serde_json::json;

pub fn arb_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 _.,:!?é-]{0,12}"
}

pub fn arb_ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

pub fn arb_role() -> impl Strategy<Value = Role> {
    prop::sample::select(vec![Role::System, Role::User, Role::Assistant, Role::Tool])
}

pub fn arb_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        (-1000i32..1000).prop_map(|n| Value::Float(f64::from(n) / 8.0)),
        arb_text().prop_map(Value::String),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            vec(inner.clone(), 0..4).prop_map(Value::Array),
            vec((arb_ident(), inner), 0..4).prop_map(|kv| Value::Object(kv.into_iter().collect())),
        ]
    })
}

pub fn arb_map() -> impl Strategy<Value = Map> {
    vec((arb_ident(), arb_value()), 0..3).prop_map(|kv| kv.into_iter().collect())
}

fn record(fields: Vec<(String, TypeExpr, bool)>) -> TypeExpr {
    let mut out = IndexMap::new();
    for (k, ty, required) in fields {
        out.entry(k).or_insert(Field { ty, required });
    }
    TypeExpr::Record(out)
}

pub fn arb_type() -> impl Strategy<Value = TypeExpr> {
    let leaf = prop::sample::select(Primitive::ALL.to_vec()).prop_map(TypeExpr::Primitive);
    leaf.prop_recursive(3, 16, 4, |inner| {
        prop_oneof![
            inner.clone().prop_map(TypeExpr::list),
            vec((arb_ident(), inner, any::<bool>()), 0..4).prop_map(record),
        ]
    })
}

/// Values that satisfy `t`, with optional record fields sometimes omitted.
pub fn value_for(t: &TypeExpr) -> BoxedStrategy<Value> {
    match t {
        TypeExpr::Primitive(p) => match p {
            Primitive::String => arb_text().prop_map(Value::String).boxed(),
            Primitive::Integer => prop_oneof![
                any::<i64>().prop_map(Value::Int),
                (-50i32..50).prop_map(|n| Value::Float(f64::from(n))),
            ]
            .boxed(),
            Primitive::Number => prop_oneof![
                any::<i64>().prop_map(Value::Int),
                (-1000i32..1000).prop_map(|n| Value::Float(f64::from(n) / 8.0)),
            ]
            .boxed(),
            Primitive::Boolean => any::<bool>().prop_map(Value::Bool).boxed(),
            Primitive::Object => arb_map().prop_map(Value::Object).boxed(),
            Primitive::Array => vec(arb_value(), 0..3).prop_map(Value::Array).boxed(),
            Primitive::Null => Just(Value::Null).boxed(),
        },
        TypeExpr::ListOf(item) => vec(value_for(item), 0..3).prop_map(Value::Array).boxed(),
        TypeExpr::Record(fields) => {
            let parts: Vec<BoxedStrategy<Option<(String, Value)>>> = fields
                .iter()
                .map(|(k, f)| {
                    let k = k.clone();
                    let present = if f.required {
                        Just(true).boxed()
                    } else {
                        any::<bool>().boxed()
                    };
                    (present, value_for(&f.ty))
                        .prop_map(move |(p, v)| p.then(|| (k.clone(), v)))
                        .boxed()
                })
                .collect();
            parts
                .prop_map(|kv| Value::Object(kv.into_iter().flatten().collect()))
                .boxed()
        }
        TypeExpr::RawSchema(_) => arb_value().boxed(),
    }
}

/// Small structural damage: an extra key, a wrapper array, or a null.
fn perturb(v: Value) -> BoxedStrategy<Value> {
    let wrapped = Value::Array(vec![v.clone()]);
    let mut with_extra = v.clone();
    if let Value::Object(m) = &mut with_extra {
        m.insert("zz_extra".into(), Value::Int(1));
    }
    prop_oneof![Just(wrapped), Just(with_extra), Just(Value::Null)].boxed()
}

/// (value, type) pairs: mostly conforming, some perturbed, some random.
pub fn arb_typed_pair() -> impl Strategy<Value = (Value, TypeExpr)> {
    arb_type().prop_flat_map(|t| {
        let v = prop_oneof![
            3 => value_for(&t),
            1 => value_for(&t).prop_flat_map(perturb),
            1 => arb_value().boxed(),
        ];
        (v, Just(t))
    })
}

/// Independent oracle: the `jsonschema` crate on the compiled schema.
pub fn schema_oracle(v: &Value, t: &TypeExpr) -> bool {
    let schema = pdl_core::compile_type(t).to_json();
    jsonschema::validator_for(&schema)
        .expect("compiled schemas are valid")
        .is_valid(&v.to_json())
}

// ---------------------------------------------------------------------------
// Arbitrary ASTs and an emitter for parser round trips.

fn arb_expr() -> impl Strategy<Value = Expr> {
    prop::sample::select(vec![
        "${ x == 1 }",
        "${ items | length > 2 }",
        "done",
        "${ not ready }",
        "${ a.b[0] }",
    ])
    .prop_map(Expr::new)
}

fn arb_literal_text() -> impl Strategy<Value = String> {
    prop_oneof![
        arb_text(),
        arb_text().prop_map(|t| format!("{t} ${{ name }}"))
    ]
}

fn arb_leaf_kind() -> impl Strategy<Value = BlockKind> {
    prop_oneof![
        (arb_value(), any::<bool>()).prop_map(|(data, raw)| BlockKind::Data { data, raw }),
        (
            arb_literal_text(),
            prop::sample::select(vec![CodeLang::Python, CodeLang::Jinja, CodeLang::Command])
        )
            .prop_map(|(code, lang)| BlockKind::Code { lang, code }),
        (
            "[a-z]{1,6}(/[a-z0-9.:]{1,8})?",
            proptest::option::of(arb_map()),
            prop::sample::select(vec![ParserKind::Json, ParserKind::Yaml, ParserKind::None])
        )
            .prop_map(|(model, parameters, parser)| BlockKind::Model(ModelBlock {
                model,
                parameters,
                input: None,
                parser,
            })),
        (arb_ident(), arb_map()).prop_map(|(f, args)| BlockKind::Call {
            callee: Expr::new(format!("${{ {f} }}")),
            args,
        }),
        "[a-z]{1,8}\\.pdl".prop_map(|path| BlockKind::Import { path }),
        (
            prop_oneof![
                Just(ReadSource::Stdin),
                "[a-z]{1,8}\\.txt".prop_map(ReadSource::File)
            ],
            proptest::option::of(arb_text())
        )
            .prop_map(|(source, message)| BlockKind::Read { source, message }),
    ]
}

fn with_envelope(kind: impl Strategy<Value = BlockKind>) -> impl Strategy<Value = Block> {
    (
        kind,
        proptest::option::of(arb_ident()),
        proptest::option::of(arb_type()),
        proptest::option::of(arb_role()),
        proptest::option::of(arb_text()),
    )
        .prop_map(|(kind, def, spec, role, description)| Block {
            def,
            spec,
            role,
            description,
            kind,
            span: None,
        })
}

pub fn arb_block() -> impl Strategy<Value = Block> {
    let leaf = prop_oneof![
        1 => arb_literal_text().prop_map(Block::literal),
        3 => with_envelope(arb_leaf_kind()),
    ];
    leaf.prop_recursive(4, 32, 4, |inner| {
        let b = inner.clone().prop_map(Box::new);
        let kind = prop_oneof![
            vec(inner.clone(), 0..4).prop_map(BlockKind::Text),
            vec(inner.clone(), 0..4).prop_map(BlockKind::LastOf),
            vec(inner.clone(), 0..4).prop_map(BlockKind::Array),
            b.clone().prop_map(|content| BlockKind::Message { content }),
            (arb_expr(), b.clone(), proptest::option::of(b.clone())).prop_map(
                |(condition, then, otherwise)| {
                    BlockKind::If {
                        condition,
                        then,
                        otherwise,
                    }
                }
            ),
            (
                b.clone(),
                prop_oneof![
                    (arb_ident(), arb_expr()).prop_map(|(v, e)| (Some((v, e)), None)),
                    arb_expr().prop_map(|u| (None, Some(u))),
                    (arb_ident(), arb_expr(), arb_expr())
                        .prop_map(|(v, e, u)| (Some((v, e)), Some(u))),
                ],
                proptest::option::of(1usize..5),
                prop::sample::select(vec![JoinMode::LastOf, JoinMode::Array, JoinMode::Text]),
            )
                .prop_map(|(body, (f, until), max_iterations, join)| {
                    BlockKind::Repeat(RepeatBlock {
                        for_each: f.map(|(var, iterable)| ForClause { var, iterable }),
                        until,
                        max_iterations,
                        join,
                        body,
                    })
                }),
            (vec((arb_ident(), arb_type()), 0..3), b.clone()).prop_map(|(ps, body)| {
                BlockKind::Function(FunctionBlock {
                    params: ps.into_iter().collect(),
                    body,
                })
            }),
            (
                "[a-z]{1,6}",
                proptest::option::of(arb_map()),
                b,
                prop::sample::select(vec![ParserKind::Json, ParserKind::None])
            )
                .prop_map(|(model, parameters, input, parser)| BlockKind::Model(
                    ModelBlock {
                        model,
                        parameters,
                        input: Some(input),
                        parser,
                    }
                )),
        ];
        prop_oneof![1 => inner, 3 => with_envelope(kind)]
    })
}

pub fn arb_program() -> impl Strategy<Value = Program> {
    (
        vec((arb_ident(), arb_block()), 0..3),
        with_envelope(prop_oneof![
            vec(arb_block(), 0..4).prop_map(BlockKind::Text),
            vec(arb_block(), 0..4).prop_map(BlockKind::LastOf),
        ]),
    )
        .prop_map(|(defs, root)| Program {
            description: root.description.clone(),
            defs: defs.into_iter().collect(),
            root,
            source_path: "gen.pdl".into(),
        })
}

fn emit_map(m: &Map) -> serde_json::Value {
    Value::Object(m.clone()).to_json()
}

/// Emits a block as JSON, which is also valid YAML.
pub fn emit_block(b: &Block) -> serde_json::Value {
    let mut out = serde_json::Map::new();
    match &b.kind {
        BlockKind::Literal(s) => return json!(s),
        BlockKind::Text(parts) => {
            out.insert("text".into(), parts.iter().map(emit_block).collect());
        }
        BlockKind::LastOf(parts) => {
            out.insert("lastOf".into(), parts.iter().map(emit_block).collect());
        }
        BlockKind::Array(parts) => {
            out.insert("array".into(), parts.iter().map(emit_block).collect());
        }
        BlockKind::Message { content } => {
            out.insert("content".into(), emit_block(content));
        }
        BlockKind::Model(m) => {
            out.insert("model".into(), json!(m.model));
            if let Some(p) = &m.parameters {
                out.insert("parameters".into(), emit_map(p));
            }
            if let Some(i) = &m.input {
                out.insert("input".into(), emit_block(i));
            }
            if m.parser != ParserKind::None {
                out.insert("parser".into(), json!(m.parser.name()));
            }
        }
        BlockKind::Code { lang, code } => {
            out.insert("code".into(), json!(code));
            out.insert("lang".into(), json!(lang.name()));
        }
        BlockKind::If {
            condition,
            then,
            otherwise,
        } => {
            out.insert("if".into(), json!(condition.source()));
            out.insert("then".into(), emit_block(then));
            if let Some(o) = otherwise {
                out.insert("else".into(), emit_block(o));
            }
        }
        BlockKind::Repeat(r) => {
            out.insert("repeat".into(), emit_block(&r.body));
            if let Some(f) = &r.for_each {
                out.insert("for".into(), json!({ f.var.clone(): f.iterable.source() }));
            }
            if let Some(u) = &r.until {
                out.insert("until".into(), json!(u.source()));
            }
            if let Some(n) = r.max_iterations {
                out.insert("maxIterations".into(), json!(n));
            }
            out.insert("join".into(), json!(r.join.name()));
        }
        BlockKind::Data { data, raw } => {
            out.insert("data".into(), data.to_json());
            out.insert("raw".into(), json!(raw));
        }
        BlockKind::Function(f) => {
            let params: serde_json::Map<String, serde_json::Value> = f
                .params
                .iter()
                .map(|(k, t)| (k.clone(), t.to_shorthand().to_json()))
                .collect();
            out.insert("function".into(), serde_json::Value::Object(params));
            out.insert("return".into(), emit_block(&f.body));
        }
        BlockKind::Call { callee, args } => {
            out.insert("call".into(), json!(callee.source()));
            out.insert("args".into(), emit_map(args));
        }
        BlockKind::Import { path } => {
            out.insert("import".into(), json!(path));
        }
        BlockKind::Read { source, message } => {
            let src = match source {
                ReadSource::Stdin => serde_json::Value::Null,
                ReadSource::File(p) => json!(p),
            };
            out.insert("read".into(), src);
            if let Some(m) = message {
                out.insert("message".into(), json!(m));
            }
        }
    }
    if let Some(d) = &b.def {
        out.insert("def".into(), json!(d));
    }
    if let Some(s) = &b.spec {
        out.insert("spec".into(), s.to_shorthand().to_json());
    }
    if let Some(r) = b.role {
        out.insert("role".into(), json!(r.as_str()));
    }
    if let Some(d) = &b.description {
        out.insert("description".into(), json!(d));
    }
    serde_json::Value::Object(out)
}

/// Emits a program whose root is a mapping block.
pub fn emit_program(p: &Program) -> String {
    let mut root = match emit_block(&p.root) {
        serde_json::Value::Object(m) => m,
        other => panic!("root must be a mapping block, got {other}"),
    };
    if !p.defs.is_empty() {
        let defs: serde_json::Map<String, serde_json::Value> = p
            .defs
            .iter()
            .map(|(k, b)| (k.clone(), emit_block(b)))
            .collect();
        root.insert("defs".into(), serde_json::Value::Object(defs));
    }
    serde_json::to_string(&serde_json::Value::Object(root)).expect("serializes")
}

// ---------------------------------------------------------------------------
// Model-free programs for the context laws.

const CONDITIONS: [&str; 8] = [
    "${ true }",
    "${ false }",
    "${ 1 < 2 }",
    "${ 'a' in ['b'] }",
    "${ [] }",
    "${ 0 }",
    "${ 'x' }",
    "${ 2 * 3 == 6 and not false }",
];

fn pure_leaf() -> impl Strategy<Value = Block> {
    prop_oneof![
        arb_text().prop_map(Block::literal),
        arb_text().prop_map(|t| Block::literal(format!("{t}${{ 1 + 1 }}"))),
        (arb_value(), any::<bool>())
            .prop_map(|(data, raw)| Block::new(BlockKind::Data { data, raw })),
    ]
}

fn with_role(kind: impl Strategy<Value = BlockKind>) -> impl Strategy<Value = Block> {
    (kind, proptest::option::of(arb_role())).prop_map(|(kind, role)| {
        let mut b = Block::new(kind);
        b.role = role;
        b
    })
}

/// Programs without model or code blocks, nesting depth at most 4.
pub fn arb_pure_block() -> impl Strategy<Value = Block> {
    pure_leaf().prop_recursive(3, 40, 4, |inner| {
        let b = inner.clone().prop_map(Box::new);
        let kind = prop_oneof![
            vec(inner.clone(), 0..4).prop_map(BlockKind::Text),
            vec(inner.clone(), 0..4).prop_map(BlockKind::LastOf),
            vec(inner.clone(), 0..4).prop_map(BlockKind::Array),
            b.clone().prop_map(|content| BlockKind::Message { content }),
            (
                prop::sample::select(CONDITIONS.to_vec()),
                b.clone(),
                proptest::option::of(b.clone())
            )
                .prop_map(|(c, then, otherwise)| BlockKind::If {
                    condition: Expr::new(c),
                    then,
                    otherwise,
                }),
            (
                b,
                prop::sample::select(vec!["${ [1, 2] }", "${ ['a'] }", "${ [] }"])
            )
                .prop_map(|(body, it)| {
                    BlockKind::Repeat(RepeatBlock {
                        for_each: Some(ForClause {
                            var: "i".into(),
                            iterable: Expr::new(it),
                        }),
                        until: None,
                        max_iterations: None,
                        join: JoinMode::Array,
                        body,
                    })
                }),
        ];
        prop_oneof![1 => inner, 2 => with_role(kind)]
    })
}

/// Number of blocks on the longest root-to-leaf path.
pub fn block_depth(b: &Block) -> usize {
    1 + b.children().into_iter().map(block_depth).max().unwrap_or(0)
}

pub fn pure_program(root: Block) -> Program {
    Program {
        description: None,
        defs: IndexMap::new(),
        root,
        source_path: Path::new("laws.pdl").to_path_buf(),
    }
}

/// Block at `path` (trace numbering) with the role it was evaluated under.
fn resolve<'a>(p: &'a Program, path: &[usize]) -> Option<(&'a Block, Role)> {
    let (first, rest) = path.split_first()?;
    let mut b = if *first < p.defs.len() {
        p.defs.get_index(*first)?.1
    } else {
        &p.root
    };
    let mut role = b.role.unwrap_or(Role::User);
    for idx in rest {
        b = match &b.kind {
            BlockKind::Text(ps) | BlockKind::LastOf(ps) | BlockKind::Array(ps) => ps.get(*idx)?,
            BlockKind::Message { content } => content,
            BlockKind::If {
                then, otherwise, ..
            } => {
                if *idx == 0 {
                    then
                } else {
                    otherwise.as_deref()?
                }
            }
            BlockKind::Repeat(r) => &r.body,
            _ => return None,
        };
        role = b.role.unwrap_or(role);
    }
    Some((b, role))
}

const CONTRIBUTING: [&str; 7] = ["string", "data", "message", "call", "model", "code", "read"];

/// Checks append-only monotonicity, the contribution law and if-purity on
/// one run. Returns human-readable violations.
pub fn context_law_violations(p: &Program, run: &RunResult) -> Vec<String> {
    let mut out = Vec::new();
    let trace = &run.trace;

    // Monotonicity: replaying the appends to the root context reproduces the
    // final context, so every intermediate state is a prefix of it.
    let root_appends: Vec<(String, String)> = trace
        .iter()
        .filter(|e| {
            e.kind == TraceKind::ContextAppend && e.payload.get("context") == Some(&Value::Int(0))
        })
        .map(|e| {
            (
                e.payload
                    .get("role")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string(),
                e.payload
                    .get("content")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string(),
            )
        })
        .collect();
    let final_ctx: Vec<(String, String)> = run
        .final_context
        .iter()
        .map(|m| (m.role.as_str().to_string(), m.content.clone()))
        .collect();
    if root_appends != final_ctx {
        out.push("root context differs from the sequence of its appends".into());
    }

    let mut stack: Vec<(Vec<usize>, usize)> = Vec::new();
    for (i, ev) in trace.iter().enumerate() {
        match ev.kind {
            TraceKind::BlockStart => stack.push((ev.path.clone(), i)),
            TraceKind::BlockEnd => {
                let Some((path, start)) = stack.pop() else {
                    out.push("unbalanced block_end".into());
                    continue;
                };
                if path != ev.path {
                    out.push(format!("block_end path {:?} closes {:?}", ev.path, path));
                }
                let kind = ev.payload.get("kind").and_then(Value::as_str).unwrap_or("");
                let own: Vec<_> = trace[start..i]
                    .iter()
                    .filter(|e| e.kind == TraceKind::ContextAppend && e.path == path)
                    .collect();
                let Some(result) = ev.payload.get("result") else {
                    continue;
                };
                if CONTRIBUTING.contains(&kind) {
                    let Some((_, role)) = resolve(p, &path) else {
                        out.push(format!("cannot resolve path {path:?}"));
                        continue;
                    };
                    match own.as_slice() {
                        [a] => {
                            if a.payload.get("content").and_then(Value::as_str)
                                != Some(pdl_core::stringify(result).as_str())
                            {
                                out.push(format!(
                                    "{kind} at {path:?}: content != stringify(result)"
                                ));
                            }
                            if a.payload.get("role").and_then(Value::as_str) != Some(role.as_str())
                            {
                                out.push(format!("{kind} at {path:?}: wrong role"));
                            }
                        }
                        _ => out.push(format!("{kind} at {path:?}: {} own appends", own.len())),
                    }
                } else if !own.is_empty() {
                    out.push(format!("{kind} at {path:?} appended its own message"));
                }
                if kind == "if" {
                    let Some((BlockKind::If { condition, .. }, _)) =
                        resolve(p, &path).map(|(b, r)| (&b.kind, r))
                    else {
                        continue;
                    };
                    let taken = pdl_core::template::eval_field(condition.source(), &Map::new())
                        .map(|v| v.is_truthy())
                        .unwrap_or(false);
                    let untaken = usize::from(taken);
                    let mut prefix = path.clone();
                    prefix.push(untaken);
                    if trace[start..i].iter().any(|e| e.path.starts_with(&prefix)) {
                        out.push(format!("if at {path:?}: untaken branch produced events"));
                    }
                }
            }
            _ => {}
        }
    }
    if !stack.is_empty() {
        out.push("unclosed block_start".into());
    }
    out
}

/// P(Bin(n, p) >= k).
pub fn binomial_tail(n: usize, k: usize, p: f64) -> f64 {
    (k..=n)
        .map(|i| {
            let choose = (0..i).fold(1.0, |c, j| c * (n - j) as f64 / (j + 1) as f64);
            choose * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)
        })
        .sum()
}

/// Expected failure fraction per architecture when only malformed-JSON and
/// wrong-key faults are active. An action step fails when both attempts
/// fail; the required calls are made iff at least `K` of `maxSteps` steps
/// succeed.
pub fn expected_failure(
    faults: &FaultConfig,
    arch: Architecture,
    scenarios: &[(usize, usize)],
) -> f64 {
    let (pm, pw) = (faults.p_malformed_json, faults.p_wrong_key);
    let per_attempt = match arch {
        Architecture::React => pm + (1.0 - pm) * pw,
        Architecture::Split => pm,
    };
    let step_ok = 1.0 - per_attempt * per_attempt;
    let total: f64 = scenarios
        .iter()
        .map(|&(k, max_steps)| 1.0 - binomial_tail(max_steps, k, step_ok))
        .sum();
    total / scenarios.len() as f64
}
