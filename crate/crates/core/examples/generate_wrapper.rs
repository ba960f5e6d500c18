//! Generate the SmartSilo wrapper ahead of time, bind handlers to it and
//! call it directly.
//!
//! cargo run --example generate_wrapper [OUT_DIR]

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use iat::object_model::ResourceValue;
use iat::plant::SMARTSILO_CID;
use iat::wrapper_gen::{generate, Binding, GenMode, Handler, HandlerRegistry, InstanceBinding};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "build".into());
    let filling = Arc::new(AtomicBool::new(false));

    let f = filling.clone();
    let registry = HandlerRegistry::new()
        .with("SmartSilo", "filling", Handler::reader(move |_| Ok(ResourceValue::Boolean(f.load(Ordering::SeqCst)).into())))
        .with(
            "SmartSilo",
            "fill",
            Handler::executor({
                let f = filling.clone();
                move |_, _| {
                    f.store(true, Ordering::SeqCst);
                    Ok(())
                }
            }),
        )
        .with("Heater", "status", Handler::reader(|_| Ok(ResourceValue::Boolean(false).into())))
        .with("Heater", "heaterOn", Handler::executor(|_, _| Ok(())))
        .with("Heater", "heaterOff", Handler::executor(|_, _| Ok(())))
        .with("Valve", "open", Handler::reader(|_| Ok(ResourceValue::Boolean(false).into())))
        .with("Valve", "openValve", Handler::executor(|_, _| Ok(())))
        .with("Valve", "closeValve", Handler::executor(|_, _| Ok(())));

    let instances = [InstanceBinding::new(16663, 0, Binding::new(()))];
    let table = generate(
        GenMode::AheadOfTime,
        SMARTSILO_CID,
        &registry,
        &instances,
        Some(std::path::Path::new(&out)),
    )
    .expect("generate");

    println!("artifacts in {out}/");
    println!("instances: {:?}", table.instances());
    println!("filling = {:?}", table.read(16663, 0, 0).unwrap());
    table.execute(16663, 0, 2, None).unwrap();
    println!("after fill, filling = {:?}", table.read(16663, 0, 0).unwrap());
}
