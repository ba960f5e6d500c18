//! Handler bindings and the dispatch table that routes resource paths to
//! component operations.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::GenError;
use crate::object_model::{
    registry_build, InstanceRecord, InstanceType, ObjectRegistry, ObjectTypeDescriptor, ResourceContent,
    ResourceDescriptor, ResourceOp, ValueType,
};

/// Failure reported by a component operation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct HandlerError(pub String);

impl HandlerError {
    pub fn new(msg: impl Into<String>) -> Self {
        HandlerError(msg.into())
    }
}

pub type ReadFn = Arc<dyn Fn(&InstanceContext) -> Result<ResourceContent, HandlerError> + Send + Sync>;
pub type WriteFn = Arc<dyn Fn(&InstanceContext, ResourceContent) -> Result<(), HandlerError> + Send + Sync>;
pub type ExecFn = Arc<dyn Fn(&InstanceContext, Option<&[u8]>) -> Result<(), HandlerError> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HandlerKind {
    Reader,
    Writer,
    Executor,
    ReaderWriter,
}

impl HandlerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HandlerKind::Reader => "reader",
            HandlerKind::Writer => "writer",
            HandlerKind::Executor => "executor",
            HandlerKind::ReaderWriter => "reader+writer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            HandlerKind::Reader,
            HandlerKind::Writer,
            HandlerKind::Executor,
            HandlerKind::ReaderWriter,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }

    /// The kind an implementer must supply for a resource.
    pub fn required_for(rd: &ResourceDescriptor) -> HandlerKind {
        let r = rd.operations.contains(ResourceOp::Read);
        let w = rd.operations.contains(ResourceOp::Write);
        match (rd.operations.contains(ResourceOp::Execute), r, w) {
            (true, _, _) => HandlerKind::Executor,
            (false, true, true) => HandlerKind::ReaderWriter,
            (false, false, true) => HandlerKind::Writer,
            _ => HandlerKind::Reader,
        }
    }

    fn can_read(self) -> bool {
        matches!(self, HandlerKind::Reader | HandlerKind::ReaderWriter)
    }

    fn can_write(self) -> bool {
        matches!(self, HandlerKind::Writer | HandlerKind::ReaderWriter)
    }

    /// Whether a handler of this kind serves every operation `rd` declares.
    pub fn covers(self, rd: &ResourceDescriptor) -> bool {
        let ops = rd.operations;
        if ops.contains(ResourceOp::Execute) {
            return self == HandlerKind::Executor;
        }
        (!ops.contains(ResourceOp::Read) || self.can_read()) && (!ops.contains(ResourceOp::Write) || self.can_write())
    }
}

/// One component operation bound to a resource.
#[derive(Clone)]
pub struct Handler {
    read: Option<ReadFn>,
    write: Option<WriteFn>,
    exec: Option<ExecFn>,
}

impl fmt::Debug for Handler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handler({})", self.kind().as_str())
    }
}

impl Handler {
    pub fn reader(f: impl Fn(&InstanceContext) -> Result<ResourceContent, HandlerError> + Send + Sync + 'static) -> Self {
        Handler {
            read: Some(Arc::new(f)),
            write: None,
            exec: None,
        }
    }

    pub fn writer(
        f: impl Fn(&InstanceContext, ResourceContent) -> Result<(), HandlerError> + Send + Sync + 'static,
    ) -> Self {
        Handler {
            read: None,
            write: Some(Arc::new(f)),
            exec: None,
        }
    }

    pub fn executor(
        f: impl Fn(&InstanceContext, Option<&[u8]>) -> Result<(), HandlerError> + Send + Sync + 'static,
    ) -> Self {
        Handler {
            read: None,
            write: None,
            exec: Some(Arc::new(f)),
        }
    }

    pub fn reader_writer(
        r: impl Fn(&InstanceContext) -> Result<ResourceContent, HandlerError> + Send + Sync + 'static,
        w: impl Fn(&InstanceContext, ResourceContent) -> Result<(), HandlerError> + Send + Sync + 'static,
    ) -> Self {
        Handler {
            read: Some(Arc::new(r)),
            write: Some(Arc::new(w)),
            exec: None,
        }
    }

    pub fn kind(&self) -> HandlerKind {
        match (self.read.is_some(), self.write.is_some()) {
            (true, true) => HandlerKind::ReaderWriter,
            (true, false) => HandlerKind::Reader,
            (false, true) => HandlerKind::Writer,
            (false, false) => HandlerKind::Executor,
        }
    }
}

/// Handlers keyed by (object type name, resource name).
#[derive(Clone, Default)]
pub struct HandlerRegistry {
    handlers: HashMap<String, HashMap<String, Handler>>,
    default_bindings: HashMap<String, Binding>,
}

impl fmt::Debug for HandlerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut keys: Vec<String> = self
            .handlers
            .iter()
            .flat_map(|(t, m)| m.keys().map(move |r| format!("{t}.{r}")))
            .collect();
        keys.sort();
        f.debug_struct("HandlerRegistry").field("bindings", &keys).finish()
    }
}

impl HandlerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, type_name: &str, resource: &str, handler: Handler) -> Result<(), GenError> {
        let slot = self.handlers.entry(type_name.to_string()).or_default();
        if slot.contains_key(resource) {
            return Err(GenError::DuplicateBinding(format!("{type_name}.{resource}")));
        }
        slot.insert(resource.to_string(), handler);
        Ok(())
    }

    /// Builder form of [`bind`](Self::bind). Panics on a duplicate binding.
    pub fn with(mut self, type_name: &str, resource: &str, handler: Handler) -> Self {
        self.bind(type_name, resource, handler).expect("duplicate binding");
        self
    }

    pub fn get(&self, type_name: &str, resource: &str) -> Option<&Handler> {
        self.handlers.get(type_name)?.get(resource)
    }

    pub fn len(&self) -> usize {
        self.handlers.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Binding given to instances created at run time (LWM2M Create).
    pub fn set_default_binding(&mut self, type_name: &str, binding: Binding) {
        self.default_bindings.insert(type_name.to_string(), binding);
    }
}

/// The component-side object an instance's handlers act on.
#[derive(Clone)]
pub struct Binding(Arc<dyn Any + Send + Sync>);

impl Binding {
    pub fn new<T: Any + Send + Sync>(value: T) -> Self {
        Binding(Arc::new(value))
    }

    pub fn none() -> Self {
        Binding::new(())
    }

    pub fn get<T: Any>(&self) -> Option<&T> {
        self.0.downcast_ref()
    }
}

impl fmt::Debug for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Binding(..)")
    }
}

/// A top-level instance to place in the table, with the component it binds.
#[derive(Debug, Clone)]
pub struct InstanceBinding {
    pub object_id: u16,
    pub instance_id: u16,
    pub binding: Binding,
    /// Instance references not materialized for this component.
    pub omit: BTreeSet<String>,
}

impl InstanceBinding {
    pub fn new(object_id: u16, instance_id: u16, binding: Binding) -> Self {
        InstanceBinding {
            object_id,
            instance_id,
            binding,
            omit: BTreeSet::new(),
        }
    }

    pub fn without(mut self, reference: &str) -> Self {
        self.omit.insert(reference.to_string());
        self
    }
}

/// What a handler sees of the instance it serves.
#[derive(Debug, Clone)]
pub struct InstanceContext {
    pub object_id: u16,
    pub instance_id: u16,
    /// Name of the instance reference this instance was reached through.
    pub via: Option<String>,
    pub binding: Binding,
}

/// How requests find their handler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// Handlers resolved once, when the table is built.
    Static,
    /// Handlers looked up by type and resource name on every request.
    Dynamic,
}

#[derive(Debug, Clone)]
struct Entry {
    descriptor: Arc<ResourceDescriptor>,
    handler: Option<Handler>,
    ctx: Arc<InstanceContext>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("no instance /{0}/{1}")]
    UnknownInstance(u16, u16),
    #[error("no resource {2} in /{0}/{1}")]
    UnknownResource(u16, u16, u16),
    #[error("resource /{0}/{1}/{2} has no handler")]
    Unbound(u16, u16, u16),
    #[error("handler for /{0}/{1}/{2} cannot {3}")]
    NotSupported(u16, u16, u16, &'static str),
    #[error("expected {expected:?} content")]
    TypeMismatch { expected: ValueType },
    #[error("object type {0} is single-instance and already instantiated")]
    SingleInstance(u16),
    #[error("instance /{0}/{1} already exists")]
    InstanceExists(u16, u16),
    #[error("object type {0} is not in the table")]
    UnknownObject(u16),
    #[error(transparent)]
    Handler(#[from] HandlerError),
}

/// Routes (object, instance, resource) addresses to bound handlers.
#[derive(Debug, Clone)]
pub struct DispatchTable {
    resolution: Resolution,
    registry: ObjectRegistry,
    order: Vec<(u16, u16)>,
    instances: HashMap<(u16, u16), Arc<InstanceContext>>,
    entries: HashMap<(u16, u16, u16), Entry>,
    handlers: Arc<HandlerRegistry>,
}

/// A resource resolved against the table.
pub struct Resolved<'a> {
    pub descriptor: &'a ResourceDescriptor,
    handler: Option<&'a Handler>,
    ctx: &'a InstanceContext,
}

/// Checks bindings against descriptors and builds a table holding every
/// instance (and, recursively, its nested instance references).
pub fn build_dispatch(
    descriptors: &[ObjectTypeDescriptor],
    registry: &HandlerRegistry,
    instances: &[InstanceBinding],
) -> Result<DispatchTable, GenError> {
    build_dispatch_with(descriptors, registry, instances, Resolution::Static)
}

pub(crate) fn build_dispatch_with(
    descriptors: &[ObjectTypeDescriptor],
    registry: &HandlerRegistry,
    instances: &[InstanceBinding],
    resolution: Resolution,
) -> Result<DispatchTable, GenError> {
    let model = registry_build(descriptors)?;

    let mut unbound = Vec::new();
    let mut mismatched = Vec::new();
    for d in descriptors {
        for rd in &d.resources {
            match registry.get(&d.name, &rd.name) {
                None if rd.mandatory => unbound.push(format!("{}.{}", d.name, rd.name)),
                None => {}
                Some(h) if !h.kind().covers(rd) => mismatched.push(format!(
                    "{}.{} needs {} but has {}",
                    d.name,
                    rd.name,
                    HandlerKind::required_for(rd).as_str(),
                    h.kind().as_str()
                )),
                Some(_) => {}
            }
        }
    }
    if !unbound.is_empty() {
        return Err(GenError::Unbound(unbound));
    }
    if !mismatched.is_empty() {
        return Err(GenError::KindMismatch(mismatched));
    }

    let mut table = DispatchTable {
        resolution,
        registry: model,
        order: Vec::new(),
        instances: HashMap::new(),
        entries: HashMap::new(),
        handlers: Arc::new(registry.clone()),
    };
    for ib in instances {
        let ctx = InstanceContext {
            object_id: ib.object_id,
            instance_id: ib.instance_id,
            via: None,
            binding: ib.binding.clone(),
        };
        table.add_tree(ctx, &ib.omit, &mut Vec::new())?;
    }
    Ok(table)
}

impl DispatchTable {
    fn add_tree(&mut self, ctx: InstanceContext, omit: &BTreeSet<String>, ancestors: &mut Vec<u16>) -> Result<(), GenError> {
        let key = (ctx.object_id, ctx.instance_id);
        let ty = self
            .registry
            .object_type(ctx.object_id)
            .cloned()
            .ok_or(GenError::UnknownObject(ctx.object_id))?;
        if ancestors.contains(&ty.id) {
            return Err(GenError::Cycle(ty.name.clone()));
        }
        self.registry
            .add_instance(InstanceRecord {
                object_id: key.0,
                instance_id: key.1,
                via: ctx.via.clone(),
            })
            .map_err(|_| GenError::InstanceCollision(key.0, key.1))?;
        let ctx = Arc::new(ctx);
        for rd in &ty.resources {
            self.entries.insert(
                (key.0, key.1, rd.id),
                Entry {
                    descriptor: Arc::new(rd.clone()),
                    handler: self.handlers.get(&ty.name, &rd.name).cloned(),
                    ctx: ctx.clone(),
                },
            );
        }
        self.order.push(key);
        self.instances.insert(key, ctx.clone());

        ancestors.push(ty.id);
        for r in &ty.instance_refs {
            if omit.contains(&r.name) {
                continue;
            }
            let child = InstanceContext {
                object_id: r.object_type_id,
                instance_id: r.id,
                via: Some(r.name.clone()),
                binding: ctx.binding.clone(),
            };
            self.add_tree(child, omit, ancestors)?;
        }
        ancestors.pop();
        Ok(())
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// Object types plus live instances.
    pub fn registry(&self) -> &ObjectRegistry {
        &self.registry
    }

    /// Instances in the order they were added.
    pub fn instances(&self) -> &[(u16, u16)] {
        &self.order
    }

    pub fn keys(&self) -> BTreeSet<(u16, u16, u16)> {
        self.entries.keys().copied().collect()
    }

    /// Key → descriptor view, for comparing tables built different ways.
    pub fn descriptor_map(&self) -> BTreeMap<(u16, u16, u16), ResourceDescriptor> {
        self.entries
            .iter()
            .map(|(k, e)| (*k, (*e.descriptor).clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, object_id: u16, instance_id: u16, resource_id: u16) -> Result<Resolved<'_>, DispatchError> {
        match self.resolution {
            Resolution::Static => {
                let e = self
                    .entries
                    .get(&(object_id, instance_id, resource_id))
                    .ok_or_else(|| self.missing(object_id, instance_id, resource_id))?;
                Ok(Resolved {
                    descriptor: &e.descriptor,
                    handler: e.handler.as_ref(),
                    ctx: &e.ctx,
                })
            }
            Resolution::Dynamic => {
                let ctx = self
                    .instances
                    .get(&(object_id, instance_id))
                    .ok_or(DispatchError::UnknownInstance(object_id, instance_id))?;
                let ty = self
                    .registry
                    .object_type(object_id)
                    .ok_or(DispatchError::UnknownInstance(object_id, instance_id))?;
                let rd = ty
                    .resources
                    .iter()
                    .find(|r| r.id == resource_id)
                    .ok_or(DispatchError::UnknownResource(object_id, instance_id, resource_id))?;
                Ok(Resolved {
                    descriptor: rd,
                    handler: self.handlers.get(&ty.name, &rd.name),
                    ctx,
                })
            }
        }
    }

    fn missing(&self, o: u16, i: u16, r: u16) -> DispatchError {
        if self.instances.contains_key(&(o, i)) {
            DispatchError::UnknownResource(o, i, r)
        } else {
            DispatchError::UnknownInstance(o, i)
        }
    }

    pub fn read(&self, object_id: u16, instance_id: u16, resource_id: u16) -> Result<ResourceContent, DispatchError> {
        let r = self.resolve(object_id, instance_id, resource_id)?;
        let h = r.handler.ok_or(DispatchError::Unbound(object_id, instance_id, resource_id))?;
        let f = h
            .read
            .as_ref()
            .ok_or(DispatchError::NotSupported(object_id, instance_id, resource_id, "read"))?;
        let content = f(r.ctx)?;
        check_shape(r.descriptor, &content)?;
        Ok(content)
    }

    pub fn write(
        &self,
        object_id: u16,
        instance_id: u16,
        resource_id: u16,
        content: ResourceContent,
    ) -> Result<(), DispatchError> {
        let r = self.resolve(object_id, instance_id, resource_id)?;
        check_shape(r.descriptor, &content)?;
        let h = r.handler.ok_or(DispatchError::Unbound(object_id, instance_id, resource_id))?;
        let f = h
            .write
            .as_ref()
            .ok_or(DispatchError::NotSupported(object_id, instance_id, resource_id, "write"))?;
        Ok(f(r.ctx, content)?)
    }

    pub fn execute(
        &self,
        object_id: u16,
        instance_id: u16,
        resource_id: u16,
        argument: Option<&[u8]>,
    ) -> Result<(), DispatchError> {
        let r = self.resolve(object_id, instance_id, resource_id)?;
        let h = r.handler.ok_or(DispatchError::Unbound(object_id, instance_id, resource_id))?;
        let f = h
            .exec
            .as_ref()
            .ok_or(DispatchError::NotSupported(object_id, instance_id, resource_id, "execute"))?;
        Ok(f(r.ctx, argument)?)
    }

    /// Whether a handler is bound for the resource (optional resources may not be).
    pub fn is_bound(&self, object_id: u16, instance_id: u16, resource_id: u16) -> bool {
        self.resolve(object_id, instance_id, resource_id)
            .map(|r| r.handler.is_some())
            .unwrap_or(false)
    }

    /// Adds an instance of a registered type at run time.
    pub fn create_instance(&mut self, object_id: u16, instance_id: u16) -> Result<(), DispatchError> {
        let ty = self
            .registry
            .object_type(object_id)
            .ok_or(DispatchError::UnknownObject(object_id))?;
        if ty.instance_type == InstanceType::Single && self.registry.instances_of(object_id).next().is_some() {
            return Err(DispatchError::SingleInstance(object_id));
        }
        if self.instances.contains_key(&(object_id, instance_id)) {
            return Err(DispatchError::InstanceExists(object_id, instance_id));
        }
        let binding = self
            .handlers
            .default_bindings
            .get(&ty.name)
            .cloned()
            .unwrap_or_else(Binding::none);
        let ctx = InstanceContext {
            object_id,
            instance_id,
            via: None,
            binding,
        };
        // Nested references that would collide keep the table unchanged.
        let snapshot = (self.registry.clone(), self.order.clone());
        if self.add_tree(ctx, &BTreeSet::new(), &mut Vec::new()).is_err() {
            let added: Vec<(u16, u16)> = self.order[snapshot.1.len()..].to_vec();
            for k in added {
                self.instances.remove(&k);
                self.entries.retain(|(o, i, _), _| (*o, *i) != k);
            }
            self.registry = snapshot.0;
            self.order = snapshot.1;
            return Err(DispatchError::InstanceExists(object_id, instance_id));
        }
        Ok(())
    }

    /// Lowest instance id not in use for the object type.
    pub fn free_instance_id(&self, object_id: u16) -> Option<u16> {
        let used: BTreeSet<u16> = self.registry.instances_of(object_id).map(|r| r.instance_id).collect();
        (0..=u16::MAX).find(|i| !used.contains(i))
    }

    pub fn delete_instance(&mut self, object_id: u16, instance_id: u16) -> Result<(), DispatchError> {
        self.registry
            .remove_instance(object_id, instance_id)
            .map_err(|_| DispatchError::UnknownInstance(object_id, instance_id))?;
        self.instances.remove(&(object_id, instance_id));
        self.entries
            .retain(|(o, i, _), _| (*o, *i) != (object_id, instance_id));
        self.order.retain(|k| *k != (object_id, instance_id));
        Ok(())
    }
}

fn check_shape(rd: &ResourceDescriptor, content: &ResourceContent) -> Result<(), DispatchError> {
    let shape_ok = matches!(
        (rd.instance_type, content),
        (InstanceType::Single, ResourceContent::Single(_)) | (InstanceType::Multiple, ResourceContent::Multiple(_))
    );
    if shape_ok && content.matches(rd.value_type) {
        Ok(())
    } else {
        Err(DispatchError::TypeMismatch {
            expected: rd.value_type,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object_model::{
        InstanceRefDescriptor, ObjectTypeDescriptor, OpSet, ResourceDescriptor, ResourceOp, ResourceValue,
    };
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn descriptors() -> Vec<ObjectTypeDescriptor> {
        let r = OpSet::of(&[ResourceOp::Read]);
        let e = OpSet::of(&[ResourceOp::Execute]);
        let mut silo = ObjectTypeDescriptor::new("SmartSilo", 16663);
        silo.resources.push(ResourceDescriptor::new(0, "filling", r, ValueType::Boolean));
        silo.resources.push(ResourceDescriptor::new(2, "fill", e, ValueType::Boolean));
        silo.instance_refs.push(InstanceRefDescriptor {
            id: 0,
            name: "heater".into(),
            object_type_id: 16668,
        });
        silo.instance_refs.push(InstanceRefDescriptor {
            id: 1,
            name: "inValve".into(),
            object_type_id: 16664,
        });
        let mut heater = ObjectTypeDescriptor::new("Heater", 16668);
        heater.resources.push(ResourceDescriptor::new(0, "status", r, ValueType::Boolean));
        heater.resources.push(ResourceDescriptor::new(1, "heaterOn", e, ValueType::Boolean));
        let mut valve = ObjectTypeDescriptor::new("Valve", 16664);
        valve.resources.push(ResourceDescriptor::new(0, "open", r, ValueType::Boolean));
        vec![silo, heater, valve]
    }

    fn yes(_: &InstanceContext) -> Result<ResourceContent, HandlerError> {
        Ok(ResourceValue::Boolean(true).into())
    }

    fn full_registry(counter: Arc<AtomicUsize>) -> HandlerRegistry {
        HandlerRegistry::new()
            .with("SmartSilo", "filling", Handler::reader(yes))
            .with(
                "SmartSilo",
                "fill",
                Handler::executor(move |_, _| {
                    counter.fetch_add(1, Ordering::SeqCst);
                    Ok(())
                }),
            )
            .with("Heater", "status", Handler::reader(yes))
            .with("Heater", "heaterOn", Handler::executor(|_, _| Ok(())))
            .with(
                "Valve",
                "open",
                Handler::reader(|ctx| Ok(ResourceValue::Boolean(ctx.via.as_deref() == Some("inValve")).into())),
            )
    }

    fn root() -> Vec<InstanceBinding> {
        vec![InstanceBinding::new(16663, 0, Binding::none())]
    }

    #[test]
    fn builds_nested_entries() {
        let counter = Arc::new(AtomicUsize::new(0));
        let table = build_dispatch(&descriptors(), &full_registry(counter.clone()), &root()).unwrap();
        let keys: Vec<_> = table.keys().into_iter().collect();
        assert_eq!(
            keys,
            vec![(16663, 0, 0), (16663, 0, 2), (16664, 1, 0), (16668, 0, 0), (16668, 0, 1)]
        );
        assert_eq!(table.instances(), &[(16663, 0), (16668, 0), (16664, 1)]);
        table.execute(16663, 0, 2, None).unwrap();
        assert_eq!(counter.load(Ordering::SeqCst), 1);
        assert_eq!(table.read(16664, 1, 0).unwrap(), ResourceValue::Boolean(true).into());
        assert_eq!(table.read(16663, 0, 9), Err(DispatchError::UnknownResource(16663, 0, 9)));
        assert_eq!(table.read(16663, 5, 0), Err(DispatchError::UnknownInstance(16663, 5)));
    }

    #[test]
    fn missing_executor_is_reported() {
        let reg = HandlerRegistry::new()
            .with("SmartSilo", "filling", Handler::reader(yes))
            .with("Heater", "status", Handler::reader(yes))
            .with("Heater", "heaterOn", Handler::executor(|_, _| Ok(())))
            .with("Valve", "open", Handler::reader(yes));
        let err = build_dispatch(&descriptors(), &reg, &root()).unwrap_err();
        assert_eq!(err, GenError::Unbound(vec!["SmartSilo.fill".into()]));
        assert!(err.to_string().contains("SmartSilo.fill unbound"));
    }

    #[test]
    fn wrong_kind_is_reported() {
        let reg = HandlerRegistry::new()
            .with("SmartSilo", "filling", Handler::reader(yes))
            .with("SmartSilo", "fill", Handler::reader(yes))
            .with("Heater", "status", Handler::reader(yes))
            .with("Heater", "heaterOn", Handler::executor(|_, _| Ok(())))
            .with("Valve", "open", Handler::reader(yes));
        assert!(matches!(
            build_dispatch(&descriptors(), &reg, &root()),
            Err(GenError::KindMismatch(v)) if v.len() == 1 && v[0].starts_with("SmartSilo.fill")
        ));
        let mut reg = HandlerRegistry::new();
        reg.bind("A", "b", Handler::reader(yes)).unwrap();
        assert!(matches!(reg.bind("A", "b", Handler::reader(yes)), Err(GenError::DuplicateBinding(_))));
    }

    #[test]
    fn omitted_refs_and_collisions() {
        let counter = Arc::new(AtomicUsize::new(0));
        let reg = full_registry(counter);
        let table = build_dispatch(
            &descriptors(),
            &reg,
            &[InstanceBinding::new(16663, 0, Binding::none()).without("heater")],
        )
        .unwrap();
        assert_eq!(table.instances(), &[(16663, 0), (16664, 1)]);

        let err = build_dispatch(
            &descriptors(),
            &reg,
            &[
                InstanceBinding::new(16663, 0, Binding::none()),
                InstanceBinding::new(16668, 0, Binding::none()),
            ],
        )
        .unwrap_err();
        assert_eq!(err, GenError::InstanceCollision(16668, 0));
    }

    #[test]
    fn reader_type_is_enforced() {
        let reg = full_registry(Arc::new(AtomicUsize::new(0)));
        let mut reg2 = HandlerRegistry::new();
        for (t, r) in [("SmartSilo", "fill"), ("Heater", "status"), ("Heater", "heaterOn"), ("Valve", "open")] {
            reg2.bind(t, r, reg.get(t, r).unwrap().clone()).unwrap();
        }
        reg2.bind(
            "SmartSilo",
            "filling",
            Handler::reader(|_| Ok(ResourceValue::Integer(1).into())),
        )
        .unwrap();
        let table = build_dispatch(&descriptors(), &reg2, &root()).unwrap();
        assert_eq!(
            table.read(16663, 0, 0),
            Err(DispatchError::TypeMismatch {
                expected: ValueType::Boolean
            })
        );
    }

    #[test]
    fn static_and_dynamic_resolve_alike() {
        let reg = full_registry(Arc::new(AtomicUsize::new(0)));
        let s = build_dispatch(&descriptors(), &reg, &root()).unwrap();
        let d = build_dispatch_with(&descriptors(), &reg, &root(), Resolution::Dynamic).unwrap();
        assert_eq!(s.keys(), d.keys());
        for (o, i, r) in s.keys() {
            assert_eq!(s.read(o, i, r), d.read(o, i, r));
        }
        assert_eq!(d.read(16663, 0, 9), Err(DispatchError::UnknownResource(16663, 0, 9)));
        assert_eq!(d.read(16663, 5, 0), Err(DispatchError::UnknownInstance(16663, 5)));
    }

    #[test]
    fn create_and_delete() {
        let mut ds = descriptors();
        ds[2].instance_type = InstanceType::Multiple;
        let reg = full_registry(Arc::new(AtomicUsize::new(0)));
        let mut t = build_dispatch(&ds, &reg, &root()).unwrap();
        assert_eq!(t.create_instance(16663, 1), Err(DispatchError::SingleInstance(16663)));
        let id = t.free_instance_id(16664).unwrap();
        assert_eq!(id, 0);
        t.create_instance(16664, id).unwrap();
        assert!(t.keys().contains(&(16664, 0, 0)));
        assert_eq!(t.create_instance(16664, 0), Err(DispatchError::InstanceExists(16664, 0)));
        t.delete_instance(16664, 0).unwrap();
        assert!(!t.keys().contains(&(16664, 0, 0)));
        assert_eq!(t.delete_instance(16664, 0), Err(DispatchError::UnknownInstance(16664, 0)));
    }
}
