use std::collections::BTreeSet;

use iat::cid::{lower_to_descriptors, parse_cid, render_cid, CidDocument, CidEntry, CidObjectType, FieldResource, ObjectInstance, OperationResource, TypeRef};
use iat::object_model::{legality_check, InstanceRecord, registry_build, Depth, InstanceType, Lwm2mOp, OpSet, ResourceOp, ResourcePath, ValueType, Violation};
use iat::plant::{plant_descriptors, SMARTSILO_CID};
use iat::wrapper_gen::{aot_artifacts, bind_manifest, generate_aot, Binding, GenError, Handler, HandlerRegistry, InstanceBinding};
use proptest::prelude::*;
use serde_json::json;

#[test]
fn smartsilo_descriptor_matches_annotated_class() {
    let art = aot_artifacts(SMARTSILO_CID).unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&art.descriptor_json).unwrap();
    let silo = doc["objects"]
        .as_array()
        .unwrap()
        .iter()
        .find(|o| o["id"] == 16663)
        .unwrap();
    // Field for field the annotations on the SmartSilo class.
    let resource = |id: u16, name: &str, op: &str| {
        json!({"id": id, "name": name, "operations": [op], "instancetype": "single", "mandatory": true,
               "type": "boolean", "range": "", "units": "", "description": "", "observable": false})
    };
    assert_eq!(
        *silo,
        json!({
            "name": "SmartSilo", "id": 16663, "instancetype": "single", "mandatory": true, "description": "",
            "resourcedefs": [resource(0, "filling", "R"), resource(2, "fill", "E")],
            "instancerefs": [
                {"id": 0, "name": "heater", "objecttypeid": 16668},
                {"id": 1, "name": "inValve", "objecttypeid": 16664},
            ],
        })
    );
    assert_eq!(aot_artifacts(SMARTSILO_CID).unwrap().descriptor_json, art.descriptor_json);
}

fn registry() -> HandlerRegistry {
    let r = || Handler::reader(|_| Ok(iat::object_model::ResourceValue::Boolean(false).into()));
    let e = || Handler::executor(|_, _| Ok(()));
    HandlerRegistry::new()
        .with("SmartSilo", "filling", r())
        .with("SmartSilo", "fill", e())
        .with("Heater", "status", r())
        .with("Heater", "heaterOn", e())
        .with("Heater", "heaterOff", e())
        .with("Valve", "open", r())
        .with("Valve", "openValve", e())
        .with("Valve", "closeValve", e())
}

fn root() -> [InstanceBinding; 1] {
    [InstanceBinding::new(16663, 0, Binding::new(()))]
}

#[test]
fn aot_writes_two_artifacts_that_bind() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate_aot(SMARTSILO_CID, dir.path()).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    let json = std::fs::read(&files.descriptors).unwrap();
    let manifest = std::fs::read_to_string(&files.manifest).unwrap();
    let table = bind_manifest(&json, &manifest, &registry(), &root()).unwrap();
    assert_eq!(table.instances(), &[(16663, 0), (16668, 0), (16664, 1)]);

    let rows = |ty: &str| manifest.lines().filter(|l| l.starts_with(&format!("{ty}."))).count();
    assert_eq!(rows("SmartSilo"), 4);
    assert_eq!(manifest.lines().filter(|l| l.starts_with("SmartSilo.") && l.contains("instance=")).count(), 2);
}

#[test]
fn aot_rejects_drift_and_missing_handlers() {
    let art = aot_artifacts(SMARTSILO_CID).unwrap();
    let tampered = art.manifest.replace("SmartSilo.fill kind=executor\n", "");
    assert!(matches!(
        bind_manifest(&art.descriptor_json, &tampered, &registry(), &root()),
        Err(GenError::ManifestMismatch(_))
    ));

    let partial = HandlerRegistry::new().with("SmartSilo", "fill", Handler::executor(|_, _| Ok(())));
    match bind_manifest(&art.descriptor_json, &art.manifest, &partial, &root()) {
        Err(GenError::Unbound(names)) => assert!(names.iter().any(|n| n.contains("filling"))),
        other => panic!("expected unbound handlers, got {:?}", other.map(|t| t.keys())),
    }
}

// Admissible (op, depth) pairs, written out independently of the model code.
const MATRIX: [(Lwm2mOp, [bool; 4]); 8] = [
    (Lwm2mOp::Read, [true, true, true, true]),
    (Lwm2mOp::Write, [true, true, true, true]),
    (Lwm2mOp::Execute, [false, false, true, false]),
    (Lwm2mOp::Discover, [true, true, true, true]),
    (Lwm2mOp::WriteAttributes, [true, true, true, true]),
    (Lwm2mOp::Create, [true, false, false, false]),
    (Lwm2mOp::Delete, [false, true, false, false]),
    (Lwm2mOp::Observe, [false, true, true, false]),
];

const PROBE_CID: &str = "component Probe root=Probe;
object-type Probe id=30000 multiple {
    resource values id=0 ops=[read,write] type=integer multiple;
    resource act id=1 ops=[execute];
}
";

#[test]
fn legality_matrix_is_exhaustive() {
    let doc = parse_cid(PROBE_CID).unwrap();
    let mut reg = registry_build(&lower_to_descriptors(&doc).unwrap()).unwrap();
    reg.add_instance(InstanceRecord {
        object_id: 30000,
        instance_id: 0,
        via: None,
    })
    .unwrap();
    for (op, row) in MATRIX {
        let res = if op == Lwm2mOp::Execute { 1 } else { 0 };
        let paths = [
            ResourcePath::object(30000),
            ResourcePath::instance(30000, 0),
            ResourcePath::resource(30000, 0, res),
            ResourcePath::resource_instance(30000, 0, 0, 1),
        ];
        for (k, depth) in Depth::ALL.iter().enumerate() {
            assert_eq!(paths[k].depth(), *depth);
            let want = if row[k] {
                Ok(())
            } else {
                Err(Violation::WrongConstruct { op, depth: *depth })
            };
            assert_eq!(legality_check(op, &paths[k], &reg), want, "{op:?} on {depth:?}");
        }
    }

    let mut plant = registry_build(&plant_descriptors()).unwrap();
    plant
        .add_instance(InstanceRecord {
            object_id: 16663,
            instance_id: 0,
            via: None,
        })
        .unwrap();
    assert_eq!(
        legality_check(Lwm2mOp::Execute, &ResourcePath::instance(16663, 0), &plant),
        Err(Violation::WrongConstruct {
            op: Lwm2mOp::Execute,
            depth: Depth::Instance
        })
    );
    assert_eq!(
        legality_check(Lwm2mOp::Execute, &ResourcePath::resource(16663, 0, 0), &plant),
        Err(Violation::UndeclaredOperation { op: Lwm2mOp::Execute })
    );
    assert_eq!(
        legality_check(Lwm2mOp::Read, &ResourcePath::resource(16663, 0, 2), &plant),
        Err(Violation::UndeclaredOperation { op: Lwm2mOp::Read })
    );
    for bad in [ResourcePath::object(4242), ResourcePath::instance(16663, 7), ResourcePath::resource(16663, 0, 99)] {
        assert_eq!(legality_check(Lwm2mOp::Read, &bad, &plant), Err(Violation::UnknownPath(bad)));
    }
}

fn arb_text() -> impl Strategy<Value = String> {
    "[ -~]{0,12}"
}

fn arb_entry(k: usize) -> impl Strategy<Value = CidEntry> {
    let field = (
        prop::sample::select(vec![
            OpSet::of(&[ResourceOp::Read]),
            OpSet::of(&[ResourceOp::Write]),
            OpSet::of(&[ResourceOp::Read, ResourceOp::Write]),
        ]),
        prop::sample::select(ValueType::ALL.to_vec()),
        (arb_text(), arb_text(), arb_text()),
        any::<(bool, bool, bool)>(),
    )
        .prop_map(move |(operations, value_type, (units, range, description), (observable, multi, mandatory))| {
            CidEntry::Field(FieldResource {
                id: k as u16,
                name: format!("f{k}"),
                value_type,
                operations,
                units,
                range,
                description,
                observable,
                instance_type: if multi { InstanceType::Multiple } else { InstanceType::Single },
                mandatory,
            })
        });
    let op = (arb_text(), any::<bool>()).prop_map(move |(description, mandatory)| {
        CidEntry::Operation(OperationResource {
            id: k as u16,
            name: format!("op{k}"),
            description,
            mandatory,
        })
    });
    let inst = (any::<bool>(), 0u16..3).prop_map(move |(by_name, ty)| {
        CidEntry::Instance(ObjectInstance {
            id: k as u16,
            name: format!("part{k}"),
            object_type: if by_name { TypeRef::Name(format!("T{ty}")) } else { TypeRef::Id(30000 + ty) },
        })
    });
    prop_oneof![field, op, inst]
}

fn arb_doc() -> impl Strategy<Value = CidDocument> {
    let ty = |t: usize| {
        (
            (1usize..6).prop_flat_map(|n| (0..n).map(arb_entry).collect::<Vec<_>>()),
            any::<(bool, bool)>(),
            arb_text(),
        )
            .prop_map(move |(entries, (multi, mandatory), description)| CidObjectType {
                name: format!("T{t}"),
                id: 30000 + t as u16,
                instance_type: if multi { InstanceType::Multiple } else { InstanceType::Single },
                mandatory,
                description,
                entries,
            })
    };
    (0..3usize)
        .map(ty)
        .collect::<Vec<_>>()
        .prop_map(|object_types| CidDocument {
            component_name: "Comp".into(),
            root_type: "T0".into(),
            object_types,
        })
}

proptest! {
    #[test]
    fn cid_render_parse_round_trip(doc in arb_doc()) {
        let text = render_cid(&doc);
        let back = parse_cid(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(render_cid(&back), text);
    }
}

#[test]
fn shipped_cids_render_canonically() {
    for text in [SMARTSILO_CID, iat::plant::SILO_CID, iat::plant::PIPE_CID] {
        let doc = parse_cid(text).unwrap();
        let canon = render_cid(&doc);
        assert_eq!(parse_cid(&canon).unwrap(), doc);
        let names: BTreeSet<&str> = doc.object_types.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names.len(), doc.object_types.len());
    }
}
