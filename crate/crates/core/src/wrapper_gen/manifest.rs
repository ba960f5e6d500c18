//! Binding manifest: the line-oriented list of handlers a component must
//! supply, written next to the descriptor JSON.
//!
//! ```text
//! component SmartSilo root=SmartSilo
//! SmartSilo.filling kind=reader
//! SmartSilo.fill kind=executor
//! SmartSilo.heater instance=0 type=16668
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{GenError, HandlerKind};
use crate::object_model::ObjectTypeDescriptor;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ManifestRow {
    Resource {
        type_name: String,
        resource: String,
        kind: HandlerKind,
    },
    Instance {
        type_name: String,
        name: String,
        instance_id: u16,
        object_type_id: u16,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingManifest {
    pub component: String,
    pub root: String,
    pub rows: Vec<ManifestRow>,
}

impl BindingManifest {
    /// Same rows as `expected`, in any order.
    pub fn check_against(&self, expected: &BindingManifest) -> Result<(), GenError> {
        let have: BTreeSet<&ManifestRow> = self.rows.iter().collect();
        let want: BTreeSet<&ManifestRow> = expected.rows.iter().collect();
        if have.len() != self.rows.len() {
            return Err(GenError::ManifestMismatch("duplicate rows".into()));
        }
        if let Some(r) = want.difference(&have).next() {
            return Err(GenError::ManifestMismatch(format!("missing {}", row_text(r))));
        }
        if let Some(r) = have.difference(&want).next() {
            return Err(GenError::ManifestMismatch(format!("unexpected {}", row_text(r))));
        }
        Ok(())
    }
}

fn row_text(row: &ManifestRow) -> String {
    match row {
        ManifestRow::Resource { type_name, resource, kind } => {
            format!("{type_name}.{resource} kind={}", kind.as_str())
        }
        ManifestRow::Instance {
            type_name,
            name,
            instance_id,
            object_type_id,
        } => format!("{type_name}.{name} instance={instance_id} type={object_type_id}"),
    }
}

/// Rows are grouped per object type: resources in declaration order, then
/// instance references.
pub fn render_manifest(component: &str, root: &str, descriptors: &[ObjectTypeDescriptor]) -> String {
    let mut out = format!("component {component} root={root}\n");
    for d in descriptors {
        for rd in &d.resources {
            let row = ManifestRow::Resource {
                type_name: d.name.clone(),
                resource: rd.name.clone(),
                kind: HandlerKind::required_for(rd),
            };
            let _ = writeln!(out, "{}", row_text(&row));
        }
        for r in &d.instance_refs {
            let row = ManifestRow::Instance {
                type_name: d.name.clone(),
                name: r.name.clone(),
                instance_id: r.id,
                object_type_id: r.object_type_id,
            };
            let _ = writeln!(out, "{}", row_text(&row));
        }
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<BindingManifest, GenError> {
    let mut component = None;
    let mut root = None;
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |message: String| GenError::Manifest { line: n + 1, message };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut words = line.split_whitespace();
        let head = words.next().unwrap_or_default();
        if head == "component" {
            let name = words.next().ok_or_else(|| err("component name missing".into()))?;
            component = Some(name.to_string());
            root = words.next().and_then(|w| w.strip_prefix("root=")).map(str::to_string);
            continue;
        }
        let (type_name, member) = head
            .split_once('.')
            .filter(|(t, m)| !t.is_empty() && !m.is_empty())
            .ok_or_else(|| err(format!("expected Type.member, found {head:?}")))?;
        let mut kind = None;
        let mut instance = None;
        let mut object_type = None;
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found {w:?}")))?;
            match k {
                "kind" => kind = Some(HandlerKind::parse(v).ok_or_else(|| err(format!("unknown kind {v:?}")))?),
                "instance" => instance = Some(v.parse::<u16>().map_err(|_| err(format!("bad instance id {v:?}")))?),
                "type" => object_type = Some(v.parse::<u16>().map_err(|_| err(format!("bad type id {v:?}")))?),
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        let row = match (kind, instance, object_type) {
            (Some(kind), None, None) => ManifestRow::Resource {
                type_name: type_name.into(),
                resource: member.into(),
                kind,
            },
            (None, Some(instance_id), Some(object_type_id)) => ManifestRow::Instance {
                type_name: type_name.into(),
                name: member.into(),
                instance_id,
                object_type_id,
            },
            _ => return Err(err("row needs kind=, or instance= and type=".into())),
        };
        rows.push(row);
    }
    let component = component.ok_or(GenError::Manifest {
        line: 1,
        message: "component line missing".into(),
    })?;
    let root = root.unwrap_or_else(|| component.clone());
    Ok(BindingManifest { component, root, rows })
}
