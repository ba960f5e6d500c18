//! Descriptor JSON: `{"objects":[…]}` with field names following the
//! annotation fields (`instancetype`, `resourcedefs`, `instancerefs`, …).

use serde::{Deserialize, Serialize};

use super::GenError;
use crate::object_model::ObjectTypeDescriptor;

#[derive(Serialize)]
struct DocOut<'a> {
    objects: &'a [ObjectTypeDescriptor],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocIn {
    objects: Vec<ObjectTypeDescriptor>,
}

/// Serializes descriptors as compact JSON. Key order is fixed by the
/// descriptor structs, so equal inputs give identical bytes.
pub fn emit_descriptor_json(descriptors: &[ObjectTypeDescriptor]) -> Vec<u8> {
    serde_json::to_vec(&DocOut { objects: descriptors }).expect("descriptor serialization is infallible")
}

/// Inverse of [`emit_descriptor_json`]. Schema violations name the JSON path
/// of the offending value.
pub fn parse_descriptor_json(bytes: &[u8]) -> Result<Vec<ObjectTypeDescriptor>, GenError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let doc: DocIn = serde_path_to_error::deserialize(de).map_err(|e| GenError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    for (i, d) in doc.objects.iter().enumerate() {
        d.validate().map_err(|e| GenError::Schema {
            path: format!("objects[{i}]"),
            message: e.to_string(),
        })?;
    }
    Ok(doc.objects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object_model::*;

    fn silo() -> ObjectTypeDescriptor {
        let mut d = ObjectTypeDescriptor::new("SmartSilo", 16663);
        d.resources.push(ResourceDescriptor::new(
            0,
            "filling",
            OpSet::of(&[ResourceOp::Read]),
            ValueType::Boolean,
        ));
        d.resources.push(ResourceDescriptor::new(
            2,
            "fill",
            OpSet::of(&[ResourceOp::Execute]),
            ValueType::Boolean,
        ));
        d.instance_refs.push(InstanceRefDescriptor {
            id: 0,
            name: "heater".into(),
            object_type_id: 16668,
        });
        d
    }

    #[test]
    fn emits_expected_fields() {
        let json = String::from_utf8(emit_descriptor_json(&[silo()])).unwrap();
        assert!(json.contains(r#""name":"SmartSilo","id":16663"#), "{json}");
        assert!(json.contains(r#""id":2,"name":"fill","operations":["E"]"#), "{json}");
        assert!(json.contains(r#""instancerefs":[{"id":0,"name":"heater","objecttypeid":16668}]"#));
        assert_eq!(emit_descriptor_json(&[]), br#"{"objects":[]}"#);
        let mut t = ObjectTypeDescriptor::new("Temperature", 3303);
        t.resources.push(ResourceDescriptor::new(
            5700,
            "sensorValue",
            OpSet::of(&[ResourceOp::Read]),
            ValueType::Float,
        ));
        let json = String::from_utf8(emit_descriptor_json(&[t])).unwrap();
        assert!(json.contains(r#""id":3303"#));
    }

    #[test]
    fn parse_inverts_emit() {
        let bytes = emit_descriptor_json(&[silo()]);
        assert_eq!(parse_descriptor_json(&bytes).unwrap(), vec![silo()]);
    }

    #[test]
    fn rejects_bad_documents() {
        let bytes = emit_descriptor_json(&[silo()]);
        assert!(parse_descriptor_json(&bytes[..bytes.len() / 2]).is_err());

        let bad = String::from_utf8(bytes.clone()).unwrap().replace(r#"["E"]"#, r#"["X"]"#);
        match parse_descriptor_json(bad.as_bytes()) {
            Err(GenError::Schema { path, message }) => {
                assert_eq!(path, "objects[0].resourcedefs[1].operations");
                assert!(message.contains("X"));
            }
            other => panic!("{other:?}"),
        }

        let bad = String::from_utf8(bytes.clone()).unwrap().replace("16663", "70000");
        match parse_descriptor_json(bad.as_bytes()) {
            Err(GenError::Schema { path, .. }) => assert_eq!(path, "objects[0].id"),
            other => panic!("{other:?}"),
        }

        let bad = String::from_utf8(bytes).unwrap().replace(r#"["E"]"#, "[]");
        match parse_descriptor_json(bad.as_bytes()) {
            Err(GenError::Schema { path, .. }) => assert_eq!(path, "objects[0]"),
            other => panic!("{other:?}"),
        }
    }
}
