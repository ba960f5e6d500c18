mod common;

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use common::Rig;
use iat::coap::Code;
use iat::lwm2m::{request_for, Attributes, Lwm2mError, Lwm2mServer, ServerConfig};
use iat::object_model::{legality_check, Depth, Lwm2mOp, ResourcePath, ResourceValue, Violation};
use iat::plant::{
    endpoint_names, plant_descriptors, silo_endpoint, HostOptions, Plant, PlantConfig, PlantHost, SharedPlant, PIPE_ENDPOINT,
};

fn status(r: Result<impl std::fmt::Debug, Lwm2mError>) -> Code {
    match r {
        Err(Lwm2mError::Status(c)) => c,
        other => panic!("expected an error status, got {other:?}"),
    }
}

#[test]
fn service_enablement_over_the_wire() {
    let rig = Rig::new();
    let s = &rig.server;
    let ep = silo_endpoint(1);

    assert_eq!(
        s.read_value(&ep, &ResourcePath::resource(16663, 0, 0)).unwrap(),
        ResourceValue::Boolean(false)
    );
    s.execute(&ep, &ResourcePath::resource(16663, 0, 2), None).unwrap();
    assert!(rig.plant.lock().silo(1).unwrap().in_valve);
    assert_eq!(
        s.read_value(&ep, &ResourcePath::resource(16664, 1, 0)).unwrap(),
        ResourceValue::Boolean(true)
    );

    let target = ResourcePath::resource(16663, 0, 5);
    s.write(&silo_endpoint(4), &target, &ResourceValue::Float(55.5)).unwrap();
    assert_eq!(rig.plant.lock().silo(4).unwrap().heat_target, 55.5);

    assert_eq!(status(s.execute(&ep, &ResourcePath::instance(16663, 0), None)), Code::METHOD_NOT_ALLOWED);
    assert_eq!(status(s.read(&ep, &ResourcePath::resource(16663, 0, 2))), Code::METHOD_NOT_ALLOWED);
    assert_eq!(
        status(s.write(&ep, &ResourcePath::resource(16663, 0, 0), &ResourceValue::Boolean(true))),
        Code::METHOD_NOT_ALLOWED
    );
    assert_eq!(status(s.read(&ep, &ResourcePath::resource(16663, 0, 99))), Code::NOT_FOUND);
    // Silo 1 has no heater.
    assert_eq!(status(s.read(&ep, &ResourcePath::instance(16668, 0))), Code::NOT_FOUND);

    let links = s.discover(&ep, &ResourcePath::object(16664)).unwrap();
    let targets: Vec<String> = links.iter().map(|l| l.target.clone()).collect();
    assert!(targets.contains(&"/16664/1".to_string()) && targets.contains(&"/16664/2".to_string()));
    assert_eq!(
        s.read(&ep, &ResourcePath::instance(16663, 0)).unwrap(),
        s.read(&ep, &ResourcePath::instance(16663, 0)).unwrap()
    );
}

/// The operation a client reads from the method and path alone: POST means
/// Create on an object and Execute below it; PUT without a query is a Write.
fn as_received(op: Lwm2mOp, path: &ResourcePath) -> Lwm2mOp {
    match op {
        Lwm2mOp::Execute | Lwm2mOp::Create if path.depth() == Depth::Object => Lwm2mOp::Create,
        Lwm2mOp::Execute | Lwm2mOp::Create => Lwm2mOp::Execute,
        Lwm2mOp::WriteAttributes => Lwm2mOp::Write,
        other => other,
    }
}

#[test]
fn endpoint_refuses_whatever_legality_refuses() {
    let rig = Rig::new();
    for client in rig.host.clients() {
        let table = client.table();
        let reg = table.registry().clone();
        let mut paths = Vec::new();
        for ty in reg.types() {
            paths.push(ResourcePath::object(ty.id));
            for &(o, i) in table.instances().iter().filter(|(o, _)| *o == ty.id) {
                paths.push(ResourcePath::instance(o, i));
                for rd in &ty.resources {
                    paths.push(ResourcePath::resource(o, i, rd.id));
                    paths.push(ResourcePath::resource_instance(o, i, rd.id, 0));
                }
            }
        }
        drop(table);
        for path in paths {
            for op in Lwm2mOp::ALL {
                let want = match legality_check(as_received(op, &path), &path, &reg) {
                    Ok(()) => continue,
                    Err(Violation::UnknownPath(_)) => Code::NOT_FOUND,
                    Err(_) => Code::METHOD_NOT_ALLOWED,
                };
                let resp = client.handle_request(&request_for(op, &path));
                assert_eq!(resp.code, want, "{} {op:?} {path}", client.endpoint_name());
            }
        }
    }
}

#[test]
fn observe_follows_attributes() {
    let rig = Rig::new();
    let ep = silo_endpoint(2);
    let temp = ResourcePath::resource(3303, 0, 5700);
    rig.server
        .write_attributes(
            &ep,
            &temp,
            Attributes {
                pmin: Some(0.0),
                pmax: Some(0.3),
            },
        )
        .unwrap();
    assert!(matches!(
        rig.server.write_attributes(
            &ep,
            &temp,
            Attributes {
                pmin: Some(5.0),
                pmax: Some(1.0),
            }
        ),
        Err(Lwm2mError::Status(Code::BAD_REQUEST))
    ));
    let (tx, rx) = mpsc::channel();
    let obs = rig
        .server
        .observe(&ep, &temp, move |n| {
            let _ = tx.send(n);
        })
        .unwrap();
    assert_eq!(obs.initial.value(), Some(&ResourceValue::Float(20.0)));

    // Nothing changes, yet pmax forces a notification.
    let idle = rx.recv_timeout(Duration::from_secs(3)).unwrap();
    assert_eq!(idle.content.unwrap().value(), Some(&ResourceValue::Float(20.0)));

    rig.server.execute(&ep, &ResourcePath::resource(16668, 0, 1), None).unwrap();
    rig.plant.step();
    let deadline = Instant::now() + Duration::from_secs(3);
    let mut seen = None;
    while Instant::now() < deadline {
        let n = rx.recv_timeout(Duration::from_secs(3)).unwrap();
        if n.content.as_ref().and_then(|c| c.value()) == Some(&ResourceValue::Float(20.5)) {
            seen = Some(n.seq);
            break;
        }
    }
    assert!(seen.is_some_and(|s| s > idle.seq));

    rig.server.cancel_observe(&obs).unwrap();
    while rx.try_recv().is_ok() {}
    thread::sleep(Duration::from_millis(700));
    assert!(rx.try_recv().is_err());
}

#[test]
fn observe_needs_an_observable_resource() {
    let rig = Rig::new();
    let r = rig
        .server
        .observe(&silo_endpoint(1), &ResourcePath::resource(16663, 0, 11), |_| {});
    assert!(matches!(r, Err(Lwm2mError::Status(Code::METHOD_NOT_ALLOWED))));
}

#[test]
fn create_and_delete_instances() {
    let rig = Rig::new();
    let ep = silo_endpoint(1);
    let id = rig.server.create(&ep, 16664, &BTreeMap::new()).unwrap();
    assert!(id != 1 && id != 2);
    assert!(rig.server.discover(&ep, &ResourcePath::instance(16664, id)).is_ok());
    rig.server.delete(&ep, &ResourcePath::instance(16664, id)).unwrap();
    assert_eq!(status(rig.server.read(&ep, &ResourcePath::instance(16664, id))), Code::NOT_FOUND);
    // A single-instance type cannot gain a second instance.
    assert!(rig.server.create(&ep, 16663, &BTreeMap::new()).is_err());
}

#[test]
fn registration_lifecycle() {
    let rig = Rig::new();
    let server = &rig.server;
    let mut names = endpoint_names();
    names.sort();
    let listed: Vec<String> = server.registrations().into_iter().map(|r| r.endpoint_name).collect();
    assert_eq!(listed, names);

    // Links name every instance the device carries.
    let silo4 = rig.host.client(&silo_endpoint(4)).unwrap();
    let links = silo4.registration_links();
    for inst in ["</16663/0>", "</16668/0>", "</16664/1>", "</16664/2>", "</16665/0>", "</3303/0>"] {
        assert!(links.contains(inst), "{links}");
    }
    let mut want = silo4.table().instances().to_vec();
    want.sort();
    let mut got = server.registration(&silo_endpoint(4)).unwrap().links;
    got.sort();
    assert_eq!(got, want);

    rig.host.client(PIPE_ENDPOINT).unwrap().deregister().unwrap();
    assert!(server.registration(PIPE_ENDPOINT).is_none());
}

#[test]
fn lifetime_updates_and_lapse() {
    let server = Lwm2mServer::start(ServerConfig::local(), &plant_descriptors()).unwrap();
    let plant = SharedPlant::new(Plant::new(PlantConfig::default()));
    let opts = HostOptions {
        lifetime: 2,
        ..HostOptions::default()
    };
    let host = PlantHost::start(plant, server.local_addr(), &opts).unwrap();
    let (a, b) = (silo_endpoint(2), silo_endpoint(3));
    assert!(server.wait_registered(&[&a, &b], Duration::from_secs(5)));

    // Two updates at lifetime/2 keep the entries alive past the lifetime.
    thread::sleep(Duration::from_millis(2600));
    let ca = host.client(&a).unwrap();
    assert!(ca.updates_sent() >= 2);
    assert_eq!(server.registration(&a).unwrap().lifetime, Duration::from_secs(2));

    ca.stop_updates();
    host.client(&b).unwrap().deregister().unwrap();
    assert!(server.registration(&b).is_none());
    assert!(server.registration(&a).is_some());
    thread::sleep(Duration::from_millis(2300));
    assert!(server.registration(&a).is_none());
    assert!(server.registration(&silo_endpoint(1)).is_some());
}
