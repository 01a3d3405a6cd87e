//! Shorthand output types, their JSON-Schema compilation and value checking.
//!
//! Shorthand grammar:
//!
//! ```yaml
//! string | integer | number | boolean | object | array | null
//! {list: T}
//! {object: {field: T, optional?: T}}
//! {type: ...}            # raw JSON Schema, passed through
//! ```

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::value::{canonical_json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    String,
    Integer,
    Number,
    Boolean,
    Object,
    Array,
    Null,
}

impl Primitive {
    pub const ALL: [Primitive; 7] = [
        Primitive::String,
        Primitive::Integer,
        Primitive::Number,
        Primitive::Boolean,
        Primitive::Object,
        Primitive::Array,
        Primitive::Null,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::String => "string",
            Primitive::Integer => "integer",
            Primitive::Number => "number",
            Primitive::Boolean => "boolean",
            Primitive::Object => "object",
            Primitive::Array => "array",
            Primitive::Null => "null",
        }
    }

    pub fn parse(name: &str) -> Option<Primitive> {
        Primitive::ALL.into_iter().find(|p| p.name() == name)
    }

    fn accepts(self, v: &Value) -> bool {
        match (self, v) {
            (Primitive::String, Value::String(_)) => true,
            (Primitive::Integer, Value::Int(_)) => true,
            (Primitive::Integer, Value::Float(f)) => f.is_finite() && f.fract() == 0.0,
            (Primitive::Number, Value::Int(_) | Value::Float(_)) => true,
            (Primitive::Boolean, Value::Bool(_)) => true,
            (Primitive::Object, Value::Object(_)) => true,
            (Primitive::Array, Value::Array(_)) => true,
            (Primitive::Null, Value::Null) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub ty: TypeExpr,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeExpr {
    Primitive(Primitive),
    ListOf(Box<TypeExpr>),
    Record(IndexMap<String, Field>),
    RawSchema(Value),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypeExprError {
    #[error("unknown type `{0}`")]
    UnknownPrimitive(String),
    #[error("`list` expects a type, found {0}")]
    BadList(String),
    #[error("`object` expects a mapping of field names to types, found {0}")]
    BadObject(String),
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("not a type expression: {0}")]
    NotAType(String),
}

impl TypeExpr {
    pub fn record<'a>(fields: impl IntoIterator<Item = (&'a str, TypeExpr)>) -> TypeExpr {
        TypeExpr::Record(
            fields
                .into_iter()
                .map(|(k, ty)| (k.to_string(), Field { ty, required: true }))
                .collect(),
        )
    }

    pub fn list(item: TypeExpr) -> TypeExpr {
        TypeExpr::ListOf(Box::new(item))
    }

    /// The shorthand YAML form of this type, as a value. Inverse of
    /// [`parse_type_expr`].
    pub fn to_shorthand(&self) -> Value {
        match self {
            TypeExpr::Primitive(p) => Value::from(p.name()),
            TypeExpr::ListOf(item) => {
                Value::Object(Map::from_iter([("list".to_string(), item.to_shorthand())]))
            }
            TypeExpr::Record(fields) => {
                let inner: Map = fields
                    .iter()
                    .map(|(name, f)| {
                        let key = if f.required {
                            name.clone()
                        } else {
                            format!("{name}?")
                        };
                        (key, f.ty.to_shorthand())
                    })
                    .collect();
                Value::Object(Map::from_iter([(
                    "object".to_string(),
                    Value::Object(inner),
                )]))
            }
            TypeExpr::RawSchema(schema) => schema.clone(),
        }
    }
}

/// Compact rendering used in function signatures: `list<string>`,
/// `{x: integer, y?: number}`.
impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Primitive(p) => f.write_str(p.name()),
            TypeExpr::ListOf(item) => write!(f, "list<{item}>"),
            TypeExpr::Record(fields) => {
                f.write_str("{")?;
                for (i, (name, field)) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    let mark = if field.required { "" } else { "?" };
                    write!(f, "{name}{mark}: {}", field.ty)?;
                }
                f.write_str("}")
            }
            TypeExpr::RawSchema(schema) => f.write_str(&canonical_json(schema)),
        }
    }
}

/// Parses the shorthand type language from a YAML-derived value.
pub fn parse_type_expr(node: &Value) -> Result<TypeExpr, TypeExprError> {
    match node {
        Value::String(name) => Primitive::parse(name)
            .map(TypeExpr::Primitive)
            .ok_or_else(|| TypeExprError::UnknownPrimitive(name.clone())),
        Value::Null => Ok(TypeExpr::Primitive(Primitive::Null)),
        Value::Object(map) if map.contains_key("type") => Ok(TypeExpr::RawSchema(node.clone())),
        Value::Object(map) if map.len() == 1 && map.contains_key("list") => {
            let item = &map["list"];
            match item {
                Value::String(_) | Value::Object(_) | Value::Null => {
                    parse_type_expr(item).map(TypeExpr::list)
                }
                other => Err(TypeExprError::BadList(canonical_json(other))),
            }
        }
        Value::Object(map) if map.len() == 1 && map.contains_key("object") => {
            let Value::Object(fields) = &map["object"] else {
                return Err(TypeExprError::BadObject(canonical_json(&map["object"])));
            };
            let mut out = IndexMap::new();
            for (raw_name, ty) in fields {
                let (name, required) = match raw_name.strip_suffix('?') {
                    Some(stripped) => (stripped.to_string(), false),
                    None => (raw_name.clone(), true),
                };
                let ty = parse_type_expr(ty)?;
                if out.insert(name.clone(), Field { ty, required }).is_some() {
                    return Err(TypeExprError::DuplicateField(name));
                }
            }
            Ok(TypeExpr::Record(out))
        }
        other => Err(TypeExprError::NotAType(canonical_json(other))),
    }
}

fn schema_type(name: &str) -> Map {
    Map::from_iter([("type".to_string(), Value::from(name))])
}

/// Compiles a type to a JSON-Schema document.
pub fn compile_type(t: &TypeExpr) -> Value {
    match t {
        TypeExpr::Primitive(p) => Value::Object(schema_type(p.name())),
        TypeExpr::ListOf(item) => {
            let mut m = schema_type("array");
            m.insert("items".into(), compile_type(item));
            Value::Object(m)
        }
        TypeExpr::Record(fields) => {
            let mut m = schema_type("object");
            let properties: Map = fields
                .iter()
                .map(|(name, f)| (name.clone(), compile_type(&f.ty)))
                .collect();
            let required: Vec<Value> = fields
                .iter()
                .filter(|(_, f)| f.required)
                .map(|(name, _)| Value::from(name.as_str()))
                .collect();
            m.insert("properties".into(), Value::Object(properties));
            m.insert("required".into(), Value::Array(required));
            m.insert("additionalProperties".into(), Value::Bool(false));
            Value::Object(m)
        }
        TypeExpr::RawSchema(schema) => schema.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// JSON pointer to the offending value.
    pub path: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CheckResult {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl CheckResult {
    fn from_violations(violations: Vec<Violation>) -> Self {
        CheckResult {
            ok: violations.is_empty(),
            violations,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            let path = if v.path.is_empty() { "/" } else { &v.path };
            write!(f, "at {path}: expected {}, found {}", v.expected, v.actual)?;
        }
        Ok(())
    }
}

fn escape_pointer(seg: &str) -> String {
    seg.replace('~', "~0").replace('/', "~1")
}

fn describe(v: &Value) -> String {
    match v {
        Value::Array(_) | Value::Object(_) => v.type_name().to_string(),
        other => format!("{} {}", other.type_name(), canonical_json(other)),
    }
}

/// Checks `v` against `t`, collecting every failing path.
pub fn check_value(v: &Value, t: &TypeExpr) -> CheckResult {
    let mut violations = Vec::new();
    check_into(v, t, String::new(), &mut violations);
    CheckResult::from_violations(violations)
}

fn check_into(v: &Value, t: &TypeExpr, path: String, out: &mut Vec<Violation>) {
    match t {
        TypeExpr::Primitive(p) => {
            if !p.accepts(v) {
                out.push(Violation {
                    path,
                    expected: p.name().to_string(),
                    actual: describe(v),
                });
            }
        }
        TypeExpr::ListOf(item) => match v {
            Value::Array(items) => {
                for (i, x) in items.iter().enumerate() {
                    check_into(x, item, format!("{path}/{i}"), out);
                }
            }
            other => out.push(Violation {
                path,
                expected: "array".into(),
                actual: describe(other),
            }),
        },
        TypeExpr::Record(fields) => match v {
            Value::Object(map) => {
                for (name, field) in fields {
                    match map.get(name) {
                        Some(x) => check_into(
                            x,
                            &field.ty,
                            format!("{path}/{}", escape_pointer(name)),
                            out,
                        ),
                        None if field.required => out.push(Violation {
                            path: path.clone(),
                            expected: format!("required property `{name}`"),
                            actual: "missing".into(),
                        }),
                        None => {}
                    }
                }
                for key in map.keys().filter(|k| !fields.contains_key(*k)) {
                    out.push(Violation {
                        path: path.clone(),
                        expected: "no additional properties".into(),
                        actual: format!("property `{key}`"),
                    });
                }
            }
            other => out.push(Violation {
                path,
                expected: "object".into(),
                actual: describe(other),
            }),
        },
        TypeExpr::RawSchema(schema) => check_raw(v, schema, path, out),
    }
}

fn check_raw(v: &Value, schema: &Value, path: String, out: &mut Vec<Violation>) {
    let validator = match jsonschema::validator_for(&schema.to_json()) {
        Ok(validator) => validator,
        Err(e) => {
            out.push(Violation {
                path,
                expected: "a valid JSON Schema".into(),
                actual: e.to_string(),
            });
            return;
        }
    };
    let instance = v.to_json();
    for err in validator.iter_errors(&instance) {
        out.push(Violation {
            path: format!("{path}{}", err.instance_path()),
            expected: err.to_string(),
            actual: canonical_json(&Value::from(err.instance().clone().into_owned())),
        });
    }
}

/// Parameters asking a provider to constrain its output to `t`.
///
/// Bare `string` specs emit nothing: constraining free text to a JSON
/// string would wrap it in quotes.
pub fn decoding_params(t: &TypeExpr) -> Map {
    if matches!(t, TypeExpr::Primitive(Primitive::String)) {
        return Map::new();
    }
    let json_schema = Map::from_iter([
        ("name".to_string(), Value::from("pdl_spec")),
        ("schema".to_string(), compile_type(t)),
        ("strict".to_string(), Value::Bool(true)),
    ]);
    let response_format = Map::from_iter([
        ("type".to_string(), Value::from("json_schema")),
        ("json_schema".to_string(), Value::Object(json_schema)),
    ]);
    Map::from_iter([(
        "response_format".to_string(),
        Value::Object(response_format),
    )])
}

/// Merges decoding parameters under user parameters. User values win; each
/// collision is reported as a warning string.
pub fn merge_parameters(user: &Map, decoding: &Map) -> (Map, Vec<String>) {
    let mut merged = user.clone();
    let mut warnings = Vec::new();
    for (k, v) in decoding {
        if merged.contains_key(k) {
            warnings.push(format!(
                "parameter `{k}` supplied by the block overrides the one derived from its spec"
            ));
        } else {
            merged.insert(k.clone(), v.clone());
        }
    }
    (merged, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::yaml::load_value;

    fn ty(src: &str) -> TypeExpr {
        parse_type_expr(&load_value(src).unwrap()).unwrap()
    }

    fn json(src: &str) -> Value {
        Value::from_json_str(src).unwrap()
    }

    fn action_list_type() -> TypeExpr {
        ty("{list: {object: {name: string, arguments: object}}}")
    }

    #[test]
    fn parses_action_list_shorthand() {
        let expected = TypeExpr::list(TypeExpr::record([
            ("name", TypeExpr::Primitive(Primitive::String)),
            ("arguments", TypeExpr::Primitive(Primitive::Object)),
        ]));
        assert_eq!(action_list_type(), expected);
    }

    #[test]
    fn parses_primitive() {
        assert_eq!(ty("string"), TypeExpr::Primitive(Primitive::String));
    }

    #[test]
    fn optional_fields() {
        let t = ty("{object: {x: integer, y?: number}}");
        assert!(check_value(&json(r#"{"x": 1}"#), &t).ok);
        assert!(!check_value(&json(r#"{"y": 2.0}"#), &t).ok);
        assert_eq!(t.to_string(), "{x: integer, y?: number}");
    }

    #[test]
    fn rejects_unknown_primitive_and_bad_list() {
        assert_eq!(
            parse_type_expr(&Value::from("strng")),
            Err(TypeExprError::UnknownPrimitive("strng".into()))
        );
        assert!(matches!(
            parse_type_expr(&load_value("{list: 3}").unwrap()),
            Err(TypeExprError::BadList(_))
        ));
        assert!(matches!(
            parse_type_expr(&load_value("{name: string}").unwrap()),
            Err(TypeExprError::NotAType(_))
        ));
    }

    #[test]
    fn compiles_action_list() {
        let schema = compile_type(&action_list_type());
        assert_eq!(
            canonical_json(&schema),
            canonical_json(&json(
                r#"{"type":"array","items":{"type":"object","properties":{"name":{"type":"string"},"arguments":{"type":"object"}},"required":["name","arguments"],"additionalProperties":false}}"#
            ))
        );
        let validator = jsonschema::validator_for(&schema.to_json()).unwrap();
        let clean =
            json(r#"[{"name": "search", "arguments": {"topic": "circumference of Earth"}}]"#);
        assert!(validator.is_valid(&clean.to_json()));
    }

    #[test]
    fn compiles_primitives_and_raw() {
        assert_eq!(compile_type(&ty("string")), json(r#"{"type":"string"}"#));
        let raw = TypeExpr::RawSchema(json(r#"{"type":"integer"}"#));
        assert_eq!(compile_type(&raw), json(r#"{"type":"integer"}"#));
    }

    #[test]
    fn clean_action_list_checks_ok() {
        let v = json(r#"[{"name": "search", "arguments": {"topic": "circumference of Earth"}}]"#);
        assert!(check_value(&v, &action_list_type()).ok);
    }

    #[test]
    fn wrong_key_is_reported_at_element_path() {
        let r = check_value(&json(r#"[{"tool_name":"search"}]"#), &action_list_type());
        assert!(!r.ok);
        assert!(r.violations.iter().all(|v| v.path == "/0"));
        assert!(r.violations.iter().any(|v| v.expected.contains("`name`")));
        assert!(r.violations.iter().any(|v| v.actual.contains("tool_name")));
    }

    #[test]
    fn integer_accepts_integral_values() {
        let t = TypeExpr::Primitive(Primitive::Integer);
        assert!(check_value(&Value::Int(42), &t).ok);
        assert!(check_value(&Value::Float(3.0), &t).ok);
        assert!(!check_value(&Value::Float(3.5), &t).ok);
    }

    #[test]
    fn raw_schema_uses_full_vocabulary() {
        let t = TypeExpr::RawSchema(json(r#"{"type":"integer","minimum":10}"#));
        assert!(check_value(&Value::Int(12), &t).ok);
        let r = check_value(&Value::Int(3), &t);
        assert!(!r.ok);
        assert_eq!(r.violations[0].path, "");
    }

    #[test]
    fn decoding_params_for_action_list() {
        let p = decoding_params(&action_list_type());
        let rf = &p["response_format"];
        assert_eq!(rf.get("type"), Some(&Value::from("json_schema")));
        let js = rf.get("json_schema").unwrap();
        assert_eq!(js.get("name"), Some(&Value::from("pdl_spec")));
        assert_eq!(js.get("strict"), Some(&Value::Bool(true)));
        assert_eq!(js.get("schema"), Some(&compile_type(&action_list_type())));
    }

    #[test]
    fn decoding_params_skip_bare_strings() {
        assert!(decoding_params(&ty("string")).is_empty());
    }

    #[test]
    fn decoding_params_embed_raw_schema_verbatim() {
        let s = json(r#"{"type":"object","minProperties":1}"#);
        let p = decoding_params(&TypeExpr::RawSchema(s.clone()));
        assert_eq!(
            p["response_format"]
                .get("json_schema")
                .unwrap()
                .get("schema"),
            Some(&s)
        );
    }

    #[test]
    fn user_parameters_win_merge() {
        let user = Map::from_iter([("response_format".to_string(), Value::from("text"))]);
        let (merged, warnings) = merge_parameters(&user, &decoding_params(&action_list_type()));
        assert_eq!(merged["response_format"], Value::from("text"));
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn shorthand_round_trips() {
        for src in [
            "string",
            "{list: {object: {name: string, arguments: object}}}",
            "{object: {x: integer, y?: {list: number}}}",
        ] {
            let t = ty(src);
            assert_eq!(parse_type_expr(&t.to_shorthand()).unwrap(), t);
        }
    }
}
