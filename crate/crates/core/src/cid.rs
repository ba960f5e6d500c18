//! Component Interface Description (CID): a small textual language that marks
//! which parts of a component interface become LWM2M objects, resources and
//! nested object instances.
//!
//! ```text
//! # comments run to end of line
//! component SmartSilo root=SmartSilo;
//!
//! object-type SmartSilo id=16663 {
//!     resource filling id=0 ops=[read] type=boolean observable;
//!     resource fill id=2 ops=[execute];
//!     instance heater id=0 type=16668;
//! }
//! ```
//!
//! Object-type flags: `single` (default) or `multiple`, `mandatory` (default)
//! or `optional`, `description="…"`. Resource attributes: `id`, `ops`, `type`,
//! `units`, `range`, `description`, `observable`, and the same instance and
//! mandatory flags. A resource whose only operation is `execute` is an
//! operation resource and needs no `type`. Instance `type=` takes a numeric
//! object type id or the name of an object type declared in the document.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::object_model::{
    InstanceRefDescriptor, InstanceType, ObjectTypeDescriptor, OpSet, ResourceDescriptor, ResourceOp,
    ValueType,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CidDocument {
    pub component_name: String,
    pub root_type: String,
    pub object_types: Vec<CidObjectType>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CidObjectType {
    pub name: String,
    pub id: u16,
    pub instance_type: InstanceType,
    pub mandatory: bool,
    pub description: String,
    pub entries: Vec<CidEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CidEntry {
    Field(FieldResource),
    Operation(OperationResource),
    Instance(ObjectInstance),
}

impl CidEntry {
    pub fn name(&self) -> &str {
        match self {
            CidEntry::Field(f) => &f.name,
            CidEntry::Operation(o) => &o.name,
            CidEntry::Instance(i) => &i.name,
        }
    }
}

/// A property exposed as a readable and/or writable resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldResource {
    pub id: u16,
    pub name: String,
    pub value_type: ValueType,
    pub operations: OpSet,
    pub units: String,
    pub range: String,
    pub description: String,
    pub observable: bool,
    pub instance_type: InstanceType,
    pub mandatory: bool,
}

/// A method exposed as an executable resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationResource {
    pub id: u16,
    pub name: String,
    pub description: String,
    pub mandatory: bool,
}

/// A reference to a constituent part, exposed as a nested object instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectInstance {
    pub id: u16,
    pub name: String,
    pub object_type: TypeRef,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum TypeRef {
    Id(u16),
    Name(String),
}

/// How a component exposes its functionality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureStyle {
    /// Top-level methods only.
    Method,
    /// References to constituent parts only.
    Reference,
    /// Both methods and references.
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CidError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot resolve object type {0:?}")]
    Unresolved(String),
}

fn perr<T>(line: usize, message: impl Into<String>) -> Result<T, CidError> {
    Err(CidError::Parse {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num(u64),
    Str(String),
    Sym(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, CidError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '{' | '}' | '[' | ']' | '=' | ';' | ',' => {
                chars.next();
                out.push(Token { tok: Tok::Sym(c), line });
            }
            '"' => {
                chars.next();
                let start = line;
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return perr(start, "unterminated string"),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            other => {
                                return perr(line, format!("bad escape \\{}", other.unwrap_or(' ')))
                            }
                        },
                        Some('\n') => {
                            line += 1;
                            s.push('\n');
                        }
                        Some(c) => s.push(c),
                    }
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    line: start,
                });
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if !c.is_ascii_digit() {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                let n = s
                    .parse()
                    .or_else(|_| perr(line, format!("number {s} too large")))?;
                out.push(Token { tok: Tok::Num(n), line });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if !(c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                out.push(Token { tok: Tok::Word(s), line });
            }
            other => return perr(line, format!("unexpected character {other:?}")),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map_or(1, |t| t.line)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), CidError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            perr(self.line(), format!("expected '{c}'"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, CidError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Word(w)) => Ok(w),
            _ => perr(line, format!("expected {what}")),
        }
    }

    fn id_value(&mut self) -> Result<u16, CidError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Num(n)) => {
                u16::try_from(n).or_else(|_| perr(line, format!("id {n} exceeds 65535")))
            }
            _ => perr(line, "expected a numeric id"),
        }
    }

    fn string_value(&mut self) -> Result<String, CidError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Str(s)) => Ok(s),
            _ => perr(line, "expected a quoted string"),
        }
    }
}

/// Parses CID text into a validated document.
pub fn parse_cid(text: &str) -> Result<CidDocument, CidError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    let mut component: Option<(String, Option<String>, usize)> = None;
    let mut types: Vec<(CidObjectType, usize)> = Vec::new();

    while let Some(tok) = p.peek().cloned() {
        let line = p.line();
        match tok {
            Tok::Word(w) if w == "component" => {
                p.next();
                if component.is_some() {
                    return perr(line, "duplicate component declaration");
                }
                let name = p.ident("component name")?;
                let mut root = None;
                if let Some(Tok::Word(w)) = p.peek() {
                    if w == "root" {
                        p.next();
                        p.expect_sym('=')?;
                        root = Some(p.ident("root type name")?);
                    }
                }
                p.expect_sym(';')?;
                component = Some((name, root, line));
            }
            Tok::Word(w) if w == "object-type" => {
                p.next();
                types.push((parse_object_type(&mut p)?, line));
            }
            Tok::Word(w) => return perr(line, format!("unknown keyword {w:?}")),
            _ => return perr(line, "expected 'object-type' or 'component'"),
        }
    }

    if types.is_empty() {
        return perr(p.line(), "no object-type");
    }

    let mut names = BTreeSet::new();
    let mut ids = BTreeSet::new();
    for (t, line) in &types {
        if !names.insert(t.name.as_str()) {
            return perr(*line, format!("duplicate object type name {}", t.name));
        }
        if !ids.insert(t.id) {
            return perr(*line, format!("duplicate object type id {}", t.id));
        }
    }

    let (component_name, root_type) = match component {
        Some((name, root, line)) => {
            let root = root.unwrap_or_else(|| name.clone());
            if !names.contains(root.as_str()) {
                return perr(line, format!("root type {root} is not declared"));
            }
            (name, root)
        }
        None => {
            let first = types[0].0.name.clone();
            (first.clone(), first)
        }
    };

    // Name references must point at declared types; numeric ones are checked
    // when the lowered descriptors are registered.
    for (t, line) in &types {
        for e in &t.entries {
            if let CidEntry::Instance(ObjectInstance {
                object_type: TypeRef::Name(n),
                ..
            }) = e
            {
                if !names.contains(n.as_str()) {
                    return perr(*line, format!("instance {} refers to unknown type {n}", e.name()));
                }
            }
        }
    }

    Ok(CidDocument {
        component_name,
        root_type,
        object_types: types.into_iter().map(|(t, _)| t).collect(),
    })
}

fn parse_object_type(p: &mut Parser) -> Result<CidObjectType, CidError> {
    let line = p.line();
    let name = p.ident("object type name")?;
    let mut id = None;
    let mut instance_type = InstanceType::Single;
    let mut mandatory = true;
    let mut description = String::new();
    loop {
        let aline = p.line();
        match p.next() {
            Some(Tok::Sym('{')) => break,
            Some(Tok::Word(w)) => match w.as_str() {
                "id" => {
                    p.expect_sym('=')?;
                    id = Some(p.id_value()?);
                }
                "single" => instance_type = InstanceType::Single,
                "multiple" => instance_type = InstanceType::Multiple,
                "mandatory" => mandatory = true,
                "optional" => mandatory = false,
                "description" => {
                    p.expect_sym('=')?;
                    description = p.string_value()?;
                }
                other => return perr(aline, format!("unknown keyword {other:?}")),
            },
            _ => return perr(aline, "expected object-type attribute or '{'"),
        }
    }
    let Some(id) = id else {
        return perr(line, format!("object-type {name} is missing required attribute id"));
    };

    let mut entries = Vec::new();
    let mut res_ids = BTreeSet::new();
    let mut inst_ids = BTreeSet::new();
    let mut entry_names = BTreeSet::new();
    loop {
        let eline = p.line();
        let entry = match p.next() {
            Some(Tok::Sym('}')) => break,
            Some(Tok::Word(w)) if w == "resource" => parse_resource(p)?,
            Some(Tok::Word(w)) if w == "instance" => parse_instance(p)?,
            Some(Tok::Word(w)) => return perr(eline, format!("unknown keyword {w:?}")),
            None => return perr(eline, format!("object-type {name} is not closed")),
            _ => return perr(eline, "expected 'resource', 'instance' or '}'"),
        };
        let fresh = match &entry {
            CidEntry::Field(FieldResource { id, .. }) | CidEntry::Operation(OperationResource { id, .. }) => {
                res_ids.insert(*id)
            }
            CidEntry::Instance(i) => inst_ids.insert((i.object_type.clone(), i.id)),
        };
        if !fresh {
            return perr(eline, format!("duplicate id in {} of {name}", entry.name()));
        }
        if !entry_names.insert(entry.name().to_string()) {
            return perr(eline, format!("duplicate entry name {} in {name}", entry.name()));
        }
        entries.push(entry);
        if !p.eat_sym(';') && p.peek() != Some(&Tok::Sym('}')) {
            return perr(p.line(), "expected ';'");
        }
    }
    if entries.is_empty() {
        return perr(line, format!("object-type {name} has no entries"));
    }
    Ok(CidObjectType {
        name,
        id,
        instance_type,
        mandatory,
        description,
        entries,
    })
}

fn at_entry_end(p: &Parser) -> bool {
    matches!(p.peek(), None | Some(Tok::Sym(';')) | Some(Tok::Sym('}')))
}

fn parse_resource(p: &mut Parser) -> Result<CidEntry, CidError> {
    let line = p.line();
    let name = p.ident("resource name")?;
    let mut id = None;
    let mut ops: Option<Vec<ResourceOp>> = None;
    let mut value_type = None;
    let mut units = String::new();
    let mut range = String::new();
    let mut description = String::new();
    let mut observable = false;
    let mut instance_type = InstanceType::Single;
    let mut mandatory = true;

    while !at_entry_end(p) {
        let aline = p.line();
        let key = p.ident("resource attribute")?;
        match key.as_str() {
            "id" => {
                p.expect_sym('=')?;
                id = Some(p.id_value()?);
            }
            "ops" => {
                p.expect_sym('=')?;
                p.expect_sym('[')?;
                let mut list = Vec::new();
                loop {
                    let oline = p.line();
                    let op = match p.ident("operation")?.as_str() {
                        "read" => ResourceOp::Read,
                        "write" => ResourceOp::Write,
                        "execute" => ResourceOp::Execute,
                        other => return perr(oline, format!("unknown operation {other:?}")),
                    };
                    list.push(op);
                    if p.eat_sym(']') {
                        break;
                    }
                    p.expect_sym(',')?;
                }
                ops = Some(list);
            }
            "type" => {
                p.expect_sym('=')?;
                let t = p.ident("value type")?;
                value_type = Some(t.parse::<ValueType>().or_else(|e| perr(aline, e))?);
            }
            "units" => {
                p.expect_sym('=')?;
                units = p.string_value()?;
            }
            "range" => {
                p.expect_sym('=')?;
                range = p.string_value()?;
            }
            "description" => {
                p.expect_sym('=')?;
                description = p.string_value()?;
            }
            "observable" => observable = true,
            "single" => instance_type = InstanceType::Single,
            "multiple" => instance_type = InstanceType::Multiple,
            "mandatory" => mandatory = true,
            "optional" => mandatory = false,
            other => return perr(aline, format!("unknown keyword {other:?}")),
        }
    }

    let Some(id) = id else {
        return perr(line, format!("resource {name} is missing required attribute id"));
    };
    let Some(ops) = ops else {
        return perr(line, format!("resource {name} is missing required attribute ops"));
    };
    let set = OpSet::of(&ops);
    if set.contains(ResourceOp::Execute) {
        if set != OpSet::of(&[ResourceOp::Execute]) {
            return perr(line, format!("resource {name} mixes execute with read/write"));
        }
        if observable {
            return perr(line, format!("operation resource {name} cannot be observable"));
        }
        match value_type {
            None | Some(ValueType::Boolean) => {}
            Some(t) => {
                return perr(
                    line,
                    format!("operation resource {name} must be boolean, found {}", t.as_str()),
                )
            }
        }
        if !units.is_empty() || !range.is_empty() || instance_type != InstanceType::Single {
            return perr(line, format!("operation resource {name} takes no units, range or multiplicity"));
        }
        return Ok(CidEntry::Operation(OperationResource {
            id,
            name,
            description,
            mandatory,
        }));
    }
    let Some(value_type) = value_type else {
        return perr(line, format!("resource {name} is missing required attribute type"));
    };
    Ok(CidEntry::Field(FieldResource {
        id,
        name,
        value_type,
        operations: set,
        units,
        range,
        description,
        observable,
        instance_type,
        mandatory,
    }))
}

fn parse_instance(p: &mut Parser) -> Result<CidEntry, CidError> {
    let line = p.line();
    let name = p.ident("instance name")?;
    let mut id = None;
    let mut object_type = None;
    while !at_entry_end(p) {
        let aline = p.line();
        let key = p.ident("instance attribute")?;
        p.expect_sym('=')?;
        match key.as_str() {
            "id" => id = Some(p.id_value()?),
            "type" => {
                object_type = Some(match p.next() {
                    Some(Tok::Num(n)) => TypeRef::Id(
                        u16::try_from(n).or_else(|_| perr(aline, format!("id {n} exceeds 65535")))?,
                    ),
                    Some(Tok::Word(w)) => TypeRef::Name(w),
                    _ => return perr(aline, "expected object type id or name"),
                })
            }
            other => return perr(aline, format!("unknown keyword {other:?}")),
        }
    }
    let Some(id) = id else {
        return perr(line, format!("instance {name} is missing required attribute id"));
    };
    let Some(object_type) = object_type else {
        return perr(line, format!("instance {name} is missing required attribute type"));
    };
    Ok(CidEntry::Instance(ObjectInstance { id, name, object_type }))
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Canonical text form. Attributes come out in a fixed order and defaults
/// are omitted, so equal documents render to identical bytes.
pub fn render_cid(doc: &CidDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "component {} root={};", doc.component_name, doc.root_type);
    for t in &doc.object_types {
        out.push('\n');
        let _ = write!(out, "object-type {} id={}", t.name, t.id);
        if t.instance_type == InstanceType::Multiple {
            out.push_str(" multiple");
        }
        if !t.mandatory {
            out.push_str(" optional");
        }
        if !t.description.is_empty() {
            let _ = write!(out, " description={}", quote(&t.description));
        }
        out.push_str(" {\n");
        for e in &t.entries {
            out.push_str("    ");
            match e {
                CidEntry::Field(f) => {
                    let ops: Vec<&str> = f
                        .operations
                        .iter()
                        .map(|op| match op {
                            ResourceOp::Read => "read",
                            ResourceOp::Write => "write",
                            ResourceOp::Execute => "execute",
                        })
                        .collect();
                    let _ = write!(
                        out,
                        "resource {} id={} ops=[{}] type={}",
                        f.name,
                        f.id,
                        ops.join(","),
                        f.value_type.as_str()
                    );
                    if f.instance_type == InstanceType::Multiple {
                        out.push_str(" multiple");
                    }
                    if !f.mandatory {
                        out.push_str(" optional");
                    }
                    if !f.units.is_empty() {
                        let _ = write!(out, " units={}", quote(&f.units));
                    }
                    if !f.range.is_empty() {
                        let _ = write!(out, " range={}", quote(&f.range));
                    }
                    if !f.description.is_empty() {
                        let _ = write!(out, " description={}", quote(&f.description));
                    }
                    if f.observable {
                        out.push_str(" observable");
                    }
                }
                CidEntry::Operation(o) => {
                    let _ = write!(out, "resource {} id={} ops=[execute]", o.name, o.id);
                    if !o.mandatory {
                        out.push_str(" optional");
                    }
                    if !o.description.is_empty() {
                        let _ = write!(out, " description={}", quote(&o.description));
                    }
                }
                CidEntry::Instance(i) => {
                    let ty = match &i.object_type {
                        TypeRef::Id(id) => id.to_string(),
                        TypeRef::Name(n) => n.clone(),
                    };
                    let _ = write!(out, "instance {} id={} type={}", i.name, i.id, ty);
                }
            }
            out.push_str(";\n");
        }
        out.push_str("}\n");
    }
    out
}

/// Classifies how the root type exposes the component.
pub fn classify_exposure(doc: &CidDocument) -> ExposureStyle {
    let Some(root) = doc.object_types.iter().find(|t| t.name == doc.root_type) else {
        return ExposureStyle::Method;
    };
    let has_refs = root.entries.iter().any(|e| matches!(e, CidEntry::Instance(_)));
    let has_methods = root.entries.iter().any(|e| matches!(e, CidEntry::Operation(_)));
    match (has_refs, has_methods) {
        (false, _) => ExposureStyle::Method,
        (true, false) => ExposureStyle::Reference,
        (true, true) => ExposureStyle::Hybrid,
    }
}

/// Maps each CID object type onto an LWM2M object type descriptor.
pub fn lower_to_descriptors(doc: &CidDocument) -> Result<Vec<ObjectTypeDescriptor>, CidError> {
    let resolve = |r: &TypeRef| -> Result<u16, CidError> {
        match r {
            TypeRef::Id(id) => Ok(*id),
            TypeRef::Name(n) => doc
                .object_types
                .iter()
                .find(|t| &t.name == n)
                .map(|t| t.id)
                .ok_or_else(|| CidError::Unresolved(n.clone())),
        }
    };
    doc.object_types
        .iter()
        .map(|t| {
            let mut d = ObjectTypeDescriptor::new(t.name.clone(), t.id);
            d.instance_type = t.instance_type;
            d.mandatory = t.mandatory;
            d.description = t.description.clone();
            for e in &t.entries {
                match e {
                    CidEntry::Field(f) => d.resources.push(ResourceDescriptor {
                        id: f.id,
                        name: f.name.clone(),
                        operations: f.operations,
                        instance_type: f.instance_type,
                        mandatory: f.mandatory,
                        value_type: f.value_type,
                        range: f.range.clone(),
                        units: f.units.clone(),
                        description: f.description.clone(),
                        observable: f.observable,
                    }),
                    CidEntry::Operation(o) => d.resources.push(ResourceDescriptor {
                        description: o.description.clone(),
                        mandatory: o.mandatory,
                        ..ResourceDescriptor::new(
                            o.id,
                            o.name.clone(),
                            OpSet::of(&[ResourceOp::Execute]),
                            ValueType::Boolean,
                        )
                    }),
                    CidEntry::Instance(i) => d.instance_refs.push(InstanceRefDescriptor {
                        id: i.id,
                        name: i.name.clone(),
                        object_type_id: resolve(&i.object_type)?,
                    }),
                }
            }
            Ok(d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG8: &str = "object-type SmartSilo id=16663 { resource filling id=0 ops=[read] type=boolean; \
        resource fill id=2 ops=[execute]; instance heater id=0 type=16668; instance inValve id=1 type=16664 }";

    #[test]
    fn parses_smartsilo_snippet() {
        let doc = parse_cid(FIG8).unwrap();
        assert_eq!(doc.component_name, "SmartSilo");
        assert_eq!(doc.root_type, "SmartSilo");
        let t = &doc.object_types[0];
        assert_eq!((t.name.as_str(), t.id), ("SmartSilo", 16663));
        assert_eq!(t.entries.len(), 4);
        match &t.entries[0] {
            CidEntry::Field(f) => {
                assert_eq!((f.id, f.name.as_str()), (0, "filling"));
                assert_eq!(f.operations, OpSet::of(&[ResourceOp::Read]));
                assert_eq!(f.value_type, ValueType::Boolean);
                assert!(f.mandatory);
                assert!(!f.observable);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(&t.entries[1], CidEntry::Operation(o) if o.id == 2 && o.name == "fill"));
        assert!(matches!(&t.entries[2],
            CidEntry::Instance(ObjectInstance { id: 0, name, object_type: TypeRef::Id(16668) }) if name == "heater"));
        assert!(matches!(&t.entries[3],
            CidEntry::Instance(ObjectInstance { id: 1, name, object_type: TypeRef::Id(16664) }) if name == "inValve"));
    }

    #[test]
    fn parses_units() {
        let doc = parse_cid(
            "object-type Temperature id=3303 { resource sensorValue id=0 ops=[read] type=float units=\"Cel\" }",
        )
        .unwrap();
        match &doc.object_types[0].entries[0] {
            CidEntry::Field(f) => assert_eq!(f.units, "Cel"),
            e => panic!("unexpected {e:?}"),
        }
    }

    fn err_line(text: &str) -> (usize, String) {
        match parse_cid(text) {
            Err(CidError::Parse { line, message }) => (line, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors() {
        assert!(err_line("").1.contains("no object-type"));
        assert!(err_line("# only a comment\n").1.contains("no object-type"));
        let (line, msg) = err_line("object-type A id=1 {\n resource x id=0 ops=[read] type=boolean;\n frobnicate;\n}");
        assert_eq!(line, 3);
        assert!(msg.contains("unknown keyword"));
        let (line, msg) =
            err_line("object-type A id=1 {\n resource x id=0 ops=[read] type=boolean;\n resource y id=0 ops=[read] type=integer;\n}");
        assert_eq!(line, 3);
        assert!(msg.contains("duplicate id"));
        assert!(err_line("object-type A { resource x id=0 ops=[read] type=boolean }").1.contains("id"));
        assert!(err_line("object-type A id=1 { resource x ops=[read] type=boolean }").1.contains("id"));
        assert!(err_line("object-type A id=1 { resource x id=0 ops=[read] }").1.contains("type"));
        assert!(err_line("object-type A id=1 { resource x id=0 ops=[read] type=banana }").1.contains("banana"));
        assert!(err_line("object-type A id=1 { resource x id=0 ops=[execute] type=float }").1.contains("boolean"));
        assert!(err_line("object-type A id=1 { resource x id=0 ops=[read,execute] type=boolean }").1.contains("mixes"));
        assert!(err_line("object-type A id=70000 { resource x id=0 ops=[read] type=boolean }").1.contains("65535"));
        assert!(err_line("object-type A id=1 { }").1.contains("no entries"));
        assert!(err_line("object-type A id=1 { instance h id=0 type=Missing }").1.contains("unknown type"));
        assert!(err_line("component C root=Nope;\nobject-type A id=1 { resource x id=0 ops=[read] type=boolean }")
            .1
            .contains("root"));
        assert!(err_line("object-type A id=1 { resource x id=0 ops=[read] type=boolean resource y id=1 ops=[read] type=boolean }")
            .1
            .contains("unknown keyword"));
    }

    #[test]
    fn exposure_styles() {
        let method = parse_cid(
            "object-type SmartSilo id=16663 { resource heaterOn id=3 ops=[execute]; resource heaterOff id=4 ops=[execute]; \
             resource getHeaterStatus id=5 ops=[read] type=boolean }",
        )
        .unwrap();
        assert_eq!(classify_exposure(&method), ExposureStyle::Method);
        let reference = parse_cid(
            "object-type SmartSilo id=16663 { instance itsHeater id=0 type=Heater }\n\
             object-type Heater id=16668 { resource heaterOn id=1 ops=[execute] }",
        )
        .unwrap();
        assert_eq!(classify_exposure(&reference), ExposureStyle::Reference);
        let hybrid = parse_cid(FIG8).unwrap();
        assert_eq!(classify_exposure(&hybrid), ExposureStyle::Hybrid);
    }

    #[test]
    fn lowering() {
        let ds = lower_to_descriptors(&parse_cid(FIG8).unwrap()).unwrap();
        assert_eq!(ds.len(), 1);
        let d = &ds[0];
        assert_eq!(d.id, 16663);
        assert_eq!(d.resources.len(), 2);
        assert_eq!(d.resources[0].operations, OpSet::of(&[ResourceOp::Read]));
        assert_eq!(d.resources[1].operations, OpSet::of(&[ResourceOp::Execute]));
        assert_eq!(d.resources[1].value_type, ValueType::Boolean);
        assert_eq!(
            d.instance_refs,
            vec![
                InstanceRefDescriptor { id: 0, name: "heater".into(), object_type_id: 16668 },
                InstanceRefDescriptor { id: 1, name: "inValve".into(), object_type_id: 16664 },
            ]
        );

        let obs = parse_cid(
            "object-type SmartSiloUser id=16670 { resource temperatureReached id=0 ops=[read] type=boolean observable }",
        )
        .unwrap();
        assert!(lower_to_descriptors(&obs).unwrap()[0].resources[0].observable);

        let empty = CidDocument {
            component_name: "Nothing".into(),
            root_type: "Nothing".into(),
            object_types: vec![],
        };
        assert!(lower_to_descriptors(&empty).unwrap().is_empty());
    }

    #[test]
    fn names_resolve_to_ids() {
        let doc = parse_cid(
            "component S root=S;\nobject-type H id=16668 { resource on id=0 ops=[read] type=boolean }\n\
             object-type S id=16663 { instance heater id=0 type=H }",
        )
        .unwrap();
        let ds = lower_to_descriptors(&doc).unwrap();
        assert_eq!(ds[1].instance_refs[0].object_type_id, 16668);
    }

    #[test]
    fn canonical_render_is_stable() {
        let doc = parse_cid(FIG8).unwrap();
        let text = render_cid(&doc);
        assert_eq!(parse_cid(&text).unwrap(), doc);
        assert_eq!(render_cid(&parse_cid(&text).unwrap()), text);
    }
}
