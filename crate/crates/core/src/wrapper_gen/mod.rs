//! Turns a component interface description into LWM2M object descriptors and
//! a dispatch table bound to component handlers.
//!
//! Two modes produce equivalent tables:
//!
//! * ahead of time: [`generate_aot`] writes `<component>.objects.json` and
//!   `<component>.bindings.manifest`; [`bind_manifest`] later checks a
//!   handler registry against the manifest and pre-resolves every handler.
//! * at startup: [`generate_startup`] parses the CID when the program starts
//!   and yields a table that looks handlers up by name on each request.

mod dispatch;
mod json;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use dispatch::{
    build_dispatch, Binding, DispatchError, DispatchTable, ExecFn, Handler, HandlerError, HandlerKind,
    HandlerRegistry, InstanceBinding, InstanceContext, ReadFn, Resolution, Resolved, WriteFn,
};
pub use json::{emit_descriptor_json, parse_descriptor_json};
pub use manifest::{parse_manifest, render_manifest, BindingManifest, ManifestRow};

use crate::cid::{lower_to_descriptors, parse_cid, CidDocument, CidError};
use crate::object_model::{ModelError, ObjectTypeDescriptor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error(transparent)]
    Cid(#[from] CidError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("descriptor schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{}", .0.iter().map(|b| format!("{b} unbound")).collect::<Vec<_>>().join(", "))]
    Unbound(Vec<String>),
    #[error("handler kind mismatch: {}", .0.join(", "))]
    KindMismatch(Vec<String>),
    #[error("{0} bound twice")]
    DuplicateBinding(String),
    #[error("object type {0} is not described")]
    UnknownObject(u16),
    #[error("instance references of {0} form a cycle")]
    Cycle(String),
    #[error("instance /{0}/{1} would be created twice")]
    InstanceCollision(u16, u16),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("manifest does not match descriptors: {0}")]
    ManifestMismatch(String),
    #[error("{0}")]
    Io(String),
}

/// When descriptors and bindings are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    AheadOfTime,
    Startup,
}

/// In-memory output of the ahead-of-time generator.
#[derive(Debug, Clone, PartialEq)]
pub struct AotArtifacts {
    pub component: String,
    pub descriptors: Vec<ObjectTypeDescriptor>,
    pub descriptor_json: Vec<u8>,
    pub manifest: String,
}

impl AotArtifacts {
    pub fn json_file_name(&self) -> String {
        format!("{}.objects.json", self.component.to_lowercase())
    }

    pub fn manifest_file_name(&self) -> String {
        format!("{}.bindings.manifest", self.component.to_lowercase())
    }
}

/// Paths written by [`generate_aot`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AotFiles {
    pub descriptors: PathBuf,
    pub manifest: PathBuf,
}

pub fn aot_artifacts(cid_text: &str) -> Result<AotArtifacts, GenError> {
    let doc = parse_cid(cid_text)?;
    aot_from_document(&doc)
}

pub fn aot_from_document(doc: &CidDocument) -> Result<AotArtifacts, GenError> {
    let descriptors = lower_to_descriptors(doc)?;
    crate::object_model::registry_build(&descriptors)?;
    Ok(AotArtifacts {
        component: doc.component_name.clone(),
        descriptor_json: emit_descriptor_json(&descriptors),
        manifest: render_manifest(&doc.component_name, &doc.root_type, &descriptors),
        descriptors,
    })
}

/// Writes the descriptor JSON and binding manifest for a CID into `out_dir`.
pub fn generate_aot(cid_text: &str, out_dir: &Path) -> Result<AotFiles, GenError> {
    let art = aot_artifacts(cid_text)?;
    fs::create_dir_all(out_dir).map_err(|e| GenError::Io(format!("{}: {e}", out_dir.display())))?;
    let files = AotFiles {
        descriptors: out_dir.join(art.json_file_name()),
        manifest: out_dir.join(art.manifest_file_name()),
    };
    fs::write(&files.descriptors, &art.descriptor_json)
        .map_err(|e| GenError::Io(format!("{}: {e}", files.descriptors.display())))?;
    fs::write(&files.manifest, &art.manifest)
        .map_err(|e| GenError::Io(format!("{}: {e}", files.manifest.display())))?;
    Ok(files)
}

/// Builds a statically resolved table from ahead-of-time artifacts. The
/// registry must bind exactly the kinds the manifest lists.
pub fn bind_manifest(
    descriptor_json: &[u8],
    manifest_text: &str,
    registry: &HandlerRegistry,
    instances: &[InstanceBinding],
) -> Result<DispatchTable, GenError> {
    let descriptors = parse_descriptor_json(descriptor_json)?;
    let manifest = parse_manifest(manifest_text)?;
    let expected = parse_manifest(&render_manifest(&manifest.component, &manifest.root, &descriptors))?;
    manifest.check_against(&expected)?;

    let mut wrong = Vec::new();
    for row in &manifest.rows {
        if let ManifestRow::Resource { type_name, resource, kind } = row {
            if let Some(h) = registry.get(type_name, resource) {
                if h.kind() != *kind {
                    wrong.push(format!(
                        "{type_name}.{resource} needs {} but has {}",
                        kind.as_str(),
                        h.kind().as_str()
                    ));
                }
            }
        }
    }
    if !wrong.is_empty() {
        return Err(GenError::KindMismatch(wrong));
    }
    let instances = default_instances(&descriptors, &manifest.root, instances);
    dispatch::build_dispatch_with(&descriptors, registry, &instances, Resolution::Static)
}

/// Parses the CID now and builds a table that resolves handlers by name per request.
pub fn generate_startup(
    cid_text: &str,
    registry: &HandlerRegistry,
    instances: &[InstanceBinding],
) -> Result<DispatchTable, GenError> {
    let doc = parse_cid(cid_text)?;
    let descriptors = lower_to_descriptors(&doc)?;
    let instances = default_instances(&descriptors, &doc.root_type, instances);
    dispatch::build_dispatch_with(&descriptors, registry, &instances, Resolution::Dynamic)
}

/// Either mode, returning a table. Ahead-of-time output round-trips through
/// `out_dir` when one is given and stays in memory otherwise.
pub fn generate(
    mode: GenMode,
    cid_text: &str,
    registry: &HandlerRegistry,
    instances: &[InstanceBinding],
    out_dir: Option<&Path>,
) -> Result<DispatchTable, GenError> {
    match mode {
        GenMode::Startup => generate_startup(cid_text, registry, instances),
        GenMode::AheadOfTime => {
            let (json, manifest) = match out_dir {
                Some(dir) => {
                    let files = generate_aot(cid_text, dir)?;
                    let read = |p: &Path| fs::read(p).map_err(|e| GenError::Io(format!("{}: {e}", p.display())));
                    let json = read(&files.descriptors)?;
                    let manifest = String::from_utf8(read(&files.manifest)?)
                        .map_err(|e| GenError::Io(e.to_string()))?;
                    (json, manifest)
                }
                None => {
                    let art = aot_artifacts(cid_text)?;
                    (art.descriptor_json, art.manifest)
                }
            };
            bind_manifest(&json, &manifest, registry, instances)
        }
    }
}

/// With no explicit instances, the root type gets instance 0.
fn default_instances(
    descriptors: &[ObjectTypeDescriptor],
    root: &str,
    instances: &[InstanceBinding],
) -> Vec<InstanceBinding> {
    if !instances.is_empty() {
        return instances.to_vec();
    }
    descriptors
        .iter()
        .find(|d| d.name == root)
        .or(descriptors.first())
        .map(|d| vec![InstanceBinding::new(d.id, 0, Binding::none())])
        .unwrap_or_default()
}
