//! Value encodings: plain text for single values, a JSON id→value map for
//! multi-instance resources and composite instance/object reads.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::coap::content_format;
use crate::object_model::{ObjectTypeDescriptor, ResourceContent, ResourceValue, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("cannot read {text:?} as {expected}")]
    BadValue { text: String, expected: &'static str },
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("unknown resource id {0}")]
    UnknownResource(String),
    #[error("unsupported content format {0}")]
    Format(u16),
}

/// A decoded read result at any depth.
#[derive(Debug, Clone, PartialEq)]
pub enum Lwm2mContent {
    Resource(ResourceContent),
    Instance(BTreeMap<u16, ResourceContent>),
    Object(BTreeMap<u16, BTreeMap<u16, ResourceContent>>),
}

impl Lwm2mContent {
    /// The value of a single-instance resource read.
    pub fn value(&self) -> Option<&ResourceValue> {
        match self {
            Lwm2mContent::Resource(c) => c.single(),
            _ => None,
        }
    }
}

pub fn value_text(v: &ResourceValue) -> Vec<u8> {
    match v {
        ResourceValue::Boolean(b) => b.to_string().into_bytes(),
        ResourceValue::Integer(i) | ResourceValue::Time(i) => i.to_string().into_bytes(),
        ResourceValue::Float(f) => f.to_string().into_bytes(),
        ResourceValue::String(s) => s.clone().into_bytes(),
        ResourceValue::Opaque(b) => b.clone(),
    }
}

/// Content format used for a single value.
pub fn value_format(ty: ValueType) -> u16 {
    if ty == ValueType::Opaque {
        content_format::OCTET_STREAM
    } else {
        content_format::TEXT_PLAIN
    }
}

pub fn parse_value_text(bytes: &[u8], ty: ValueType) -> Result<ResourceValue, PayloadError> {
    if ty == ValueType::Opaque {
        return Ok(ResourceValue::Opaque(bytes.to_vec()));
    }
    let text = std::str::from_utf8(bytes).map_err(|_| PayloadError::BadValue {
        text: String::from_utf8_lossy(bytes).into_owned(),
        expected: ty.as_str(),
    })?;
    let bad = || PayloadError::BadValue {
        text: text.to_string(),
        expected: ty.as_str(),
    };
    Ok(match ty {
        ValueType::Boolean => match text {
            "true" | "1" => ResourceValue::Boolean(true),
            "false" | "0" => ResourceValue::Boolean(false),
            _ => return Err(bad()),
        },
        ValueType::Integer => ResourceValue::Integer(text.trim().parse().map_err(|_| bad())?),
        ValueType::Time => ResourceValue::Time(text.trim().parse().map_err(|_| bad())?),
        ValueType::Float => ResourceValue::Float(text.trim().parse().map_err(|_| bad())?),
        ValueType::String => ResourceValue::String(text.to_string()),
        ValueType::Opaque => unreachable!(),
    })
}

fn value_json(v: &ResourceValue) -> Value {
    match v {
        ResourceValue::Boolean(b) => Value::Bool(*b),
        ResourceValue::Integer(i) | ResourceValue::Time(i) => Value::from(*i),
        ResourceValue::Float(f) => Number::from_f64(*f).map(Value::Number).unwrap_or(Value::Null),
        ResourceValue::String(s) => Value::String(s.clone()),
        ResourceValue::Opaque(b) => Value::String(B64.encode(b)),
    }
}

fn json_value(v: &Value, ty: ValueType) -> Result<ResourceValue, PayloadError> {
    let bad = || PayloadError::BadValue {
        text: v.to_string(),
        expected: ty.as_str(),
    };
    Ok(match ty {
        ValueType::Boolean => ResourceValue::Boolean(v.as_bool().ok_or_else(bad)?),
        ValueType::Integer => ResourceValue::Integer(v.as_i64().ok_or_else(bad)?),
        ValueType::Time => ResourceValue::Time(v.as_i64().ok_or_else(bad)?),
        ValueType::Float => ResourceValue::Float(v.as_f64().ok_or_else(bad)?),
        ValueType::String => ResourceValue::String(v.as_str().ok_or_else(bad)?.to_string()),
        ValueType::Opaque => ResourceValue::Opaque(B64.decode(v.as_str().ok_or_else(bad)?).map_err(|_| bad())?),
    })
}

fn content_json(c: &ResourceContent) -> Value {
    match c {
        ResourceContent::Single(v) => value_json(v),
        ResourceContent::Multiple(m) => Value::Object(m.iter().map(|(k, v)| (k.to_string(), value_json(v))).collect()),
    }
}

fn json_content(v: &Value, ty: ValueType, multiple: bool) -> Result<ResourceContent, PayloadError> {
    if !multiple {
        return Ok(ResourceContent::Single(json_value(v, ty)?));
    }
    let obj = v.as_object().ok_or_else(|| PayloadError::Json("expected an object of instances".into()))?;
    let mut out = BTreeMap::new();
    for (k, item) in obj {
        let id: u16 = k.parse().map_err(|_| PayloadError::UnknownResource(k.clone()))?;
        out.insert(id, json_value(item, ty)?);
    }
    Ok(ResourceContent::Multiple(out))
}

/// Keys are sorted numerically (BTreeMap order), so encodings are canonical.
fn map_json<V>(m: &BTreeMap<u16, V>, f: impl Fn(&V) -> Value) -> Value {
    let mut obj = Map::new();
    for (k, v) in m {
        obj.insert(k.to_string(), f(v));
    }
    Value::Object(obj)
}

fn write_json(v: &Value) -> Vec<u8> {
    // serde_json's Map keeps insertion order only with `preserve_order`; without it
    // keys sort as strings. Render by hand to keep numeric order.
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by_key(|(k, _)| k.parse::<u32>().unwrap_or(u32::MAX));
            let mut out = b"{".to_vec();
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_vec(k).expect("string serializes"));
                out.push(b':');
                out.extend(write_json(v));
            }
            out.push(b'}');
            out
        }
        other => serde_json::to_vec(other).expect("json value serializes"),
    }
}

pub fn encode_resource_json(c: &ResourceContent) -> Vec<u8> {
    write_json(&content_json(c))
}

pub fn encode_instance_json(m: &BTreeMap<u16, ResourceContent>) -> Vec<u8> {
    write_json(&map_json(m, content_json))
}

pub fn encode_object_json(m: &BTreeMap<u16, BTreeMap<u16, ResourceContent>>) -> Vec<u8> {
    write_json(&map_json(m, |inst| map_json(inst, content_json)))
}

fn parse_json(bytes: &[u8]) -> Result<Value, PayloadError> {
    serde_json::from_slice(bytes).map_err(|e| PayloadError::Json(e.to_string()))
}

fn resource_type(ty: &ObjectTypeDescriptor, key: &str) -> Result<(u16, ValueType, bool), PayloadError> {
    let id: u16 = key.parse().map_err(|_| PayloadError::UnknownResource(key.to_string()))?;
    let rd = ty
        .resource(id)
        .ok_or_else(|| PayloadError::UnknownResource(key.to_string()))?;
    Ok((id, rd.value_type, rd.instance_type == crate::object_model::InstanceType::Multiple))
}

pub fn decode_resource_json(bytes: &[u8], ty: ValueType, multiple: bool) -> Result<ResourceContent, PayloadError> {
    json_content(&parse_json(bytes)?, ty, multiple)
}

pub fn decode_instance_json(bytes: &[u8], ty: &ObjectTypeDescriptor) -> Result<BTreeMap<u16, ResourceContent>, PayloadError> {
    instance_from_value(&parse_json(bytes)?, ty)
}

fn instance_from_value(v: &Value, ty: &ObjectTypeDescriptor) -> Result<BTreeMap<u16, ResourceContent>, PayloadError> {
    let obj = v.as_object().ok_or_else(|| PayloadError::Json("expected an object of resources".into()))?;
    let mut out = BTreeMap::new();
    for (k, item) in obj {
        let (id, vt, multiple) = resource_type(ty, k)?;
        out.insert(id, json_content(item, vt, multiple)?);
    }
    Ok(out)
}

pub fn decode_object_json(
    bytes: &[u8],
    ty: &ObjectTypeDescriptor,
) -> Result<BTreeMap<u16, BTreeMap<u16, ResourceContent>>, PayloadError> {
    let v = parse_json(bytes)?;
    let obj = v.as_object().ok_or_else(|| PayloadError::Json("expected an object of instances".into()))?;
    let mut out = BTreeMap::new();
    for (k, item) in obj {
        let id: u16 = k.parse().map_err(|_| PayloadError::UnknownResource(k.clone()))?;
        out.insert(id, instance_from_value(item, ty)?);
    }
    Ok(out)
}
