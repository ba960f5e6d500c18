//! LWM2M core constructs: object types, instances, resources and resource
//! instances, plus the rules deciding which operation may target which
//! construct.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Single or multiple instances of an object type or resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InstanceType {
    #[default]
    Single,
    Multiple,
}

impl InstanceType {
    pub fn as_str(self) -> &'static str {
        match self {
            InstanceType::Single => "single",
            InstanceType::Multiple => "multiple",
        }
    }
}

/// Operations a resource may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResourceOp {
    Read,
    Write,
    Execute,
}

impl ResourceOp {
    pub const ALL: [ResourceOp; 3] = [ResourceOp::Read, ResourceOp::Write, ResourceOp::Execute];

    pub fn letter(self) -> &'static str {
        match self {
            ResourceOp::Read => "R",
            ResourceOp::Write => "W",
            ResourceOp::Execute => "E",
        }
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        match s {
            "R" => Some(ResourceOp::Read),
            "W" => Some(ResourceOp::Write),
            "E" => Some(ResourceOp::Execute),
            _ => None,
        }
    }
}

/// Ordered set of declared resource operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct OpSet {
    bits: u8,
}

impl OpSet {
    pub const fn empty() -> Self {
        OpSet { bits: 0 }
    }

    pub fn of(ops: &[ResourceOp]) -> Self {
        ops.iter().fold(OpSet::empty(), |s, op| s.with(*op))
    }

    fn bit(op: ResourceOp) -> u8 {
        match op {
            ResourceOp::Read => 1,
            ResourceOp::Write => 2,
            ResourceOp::Execute => 4,
        }
    }

    pub fn with(mut self, op: ResourceOp) -> Self {
        self.bits |= Self::bit(op);
        self
    }

    pub fn contains(self, op: ResourceOp) -> bool {
        self.bits & Self::bit(op) != 0
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ResourceOp> {
        ResourceOp::ALL.into_iter().filter(move |op| self.contains(*op))
    }

    /// Compact letter form, e.g. `"RW"`.
    pub fn letters(self) -> String {
        self.iter().map(ResourceOp::letter).collect()
    }
}

impl Serialize for OpSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(None)?;
        for op in self.iter() {
            seq.serialize_element(op.letter())?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for OpSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let letters = Vec::<String>::deserialize(d)?;
        let mut set = OpSet::empty();
        for l in letters {
            let op = ResourceOp::from_letter(&l).ok_or_else(|| {
                serde::de::Error::custom(format!("unknown operation letter {l:?}"))
            })?;
            set = set.with(op);
        }
        Ok(set)
    }
}

/// Value types a resource may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Boolean,
    Integer,
    Float,
    String,
    Time,
    Opaque,
}

impl ValueType {
    pub const ALL: [ValueType; 6] = [
        ValueType::Boolean,
        ValueType::Integer,
        ValueType::Float,
        ValueType::String,
        ValueType::Time,
        ValueType::Opaque,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Boolean => "boolean",
            ValueType::Integer => "integer",
            ValueType::Float => "float",
            ValueType::String => "string",
            ValueType::Time => "time",
            ValueType::Opaque => "opaque",
        }
    }
}

impl FromStr for ValueType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ValueType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown value type {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceDescriptor {
    pub id: u16,
    pub name: String,
    pub operations: OpSet,
    #[serde(rename = "instancetype")]
    pub instance_type: InstanceType,
    pub mandatory: bool,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    pub range: String,
    pub units: String,
    pub description: String,
    pub observable: bool,
}

impl ResourceDescriptor {
    /// A mandatory single-instance resource with empty range/units/description.
    pub fn new(id: u16, name: impl Into<String>, operations: OpSet, value_type: ValueType) -> Self {
        ResourceDescriptor {
            id,
            name: name.into(),
            operations,
            instance_type: InstanceType::Single,
            mandatory: true,
            value_type,
            range: String::new(),
            units: String::new(),
            description: String::new(),
            observable: false,
        }
    }

    pub fn observable(mut self) -> Self {
        self.observable = true;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.operations.is_empty() {
            return Err(ModelError::NoOperations {
                resource: self.name.clone(),
            });
        }
        if self.observable && self.operations.contains(ResourceOp::Execute) {
            return Err(ModelError::ObservableExecute {
                resource: self.name.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRefDescriptor {
    pub id: u16,
    pub name: String,
    #[serde(rename = "objecttypeid")]
    pub object_type_id: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTypeDescriptor {
    pub name: String,
    pub id: u16,
    #[serde(rename = "instancetype")]
    pub instance_type: InstanceType,
    pub mandatory: bool,
    pub description: String,
    #[serde(rename = "resourcedefs")]
    pub resources: Vec<ResourceDescriptor>,
    #[serde(rename = "instancerefs")]
    pub instance_refs: Vec<InstanceRefDescriptor>,
}

impl ObjectTypeDescriptor {
    pub fn new(name: impl Into<String>, id: u16) -> Self {
        ObjectTypeDescriptor {
            name: name.into(),
            id,
            instance_type: InstanceType::Single,
            mandatory: true,
            description: String::new(),
            resources: Vec::new(),
            instance_refs: Vec::new(),
        }
    }

    pub fn resource(&self, id: u16) -> Option<&ResourceDescriptor> {
        self.resources.iter().find(|r| r.id == id)
    }

    pub fn resource_by_name(&self, name: &str) -> Option<&ResourceDescriptor> {
        self.resources.iter().find(|r| r.name == name)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for r in &self.resources {
            r.validate()?;
            if !seen.insert(r.id) {
                return Err(ModelError::DuplicateResource {
                    object: self.id,
                    resource: r.id,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for i in &self.instance_refs {
            if !seen.insert((i.object_type_id, i.id)) {
                return Err(ModelError::DuplicateInstanceRef {
                    object: self.id,
                    target: i.object_type_id,
                    instance: i.id,
                });
            }
        }
        Ok(())
    }
}

/// Address of an object, object instance, resource or resource instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourcePath {
    pub object_id: u16,
    pub instance_id: Option<u16>,
    pub resource_id: Option<u16>,
    pub resource_instance_id: Option<u16>,
}

/// How deep a path reaches into the object tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Depth {
    Object,
    Instance,
    Resource,
    ResourceInstance,
}

impl Depth {
    pub const ALL: [Depth; 4] = [
        Depth::Object,
        Depth::Instance,
        Depth::Resource,
        Depth::ResourceInstance,
    ];
}

impl ResourcePath {
    pub fn object(object_id: u16) -> Self {
        ResourcePath {
            object_id,
            instance_id: None,
            resource_id: None,
            resource_instance_id: None,
        }
    }

    pub fn instance(object_id: u16, instance_id: u16) -> Self {
        ResourcePath {
            instance_id: Some(instance_id),
            ..Self::object(object_id)
        }
    }

    pub fn resource(object_id: u16, instance_id: u16, resource_id: u16) -> Self {
        ResourcePath {
            resource_id: Some(resource_id),
            ..Self::instance(object_id, instance_id)
        }
    }

    pub fn resource_instance(object_id: u16, instance_id: u16, resource_id: u16, ri: u16) -> Self {
        ResourcePath {
            resource_instance_id: Some(ri),
            ..Self::resource(object_id, instance_id, resource_id)
        }
    }

    pub fn depth(&self) -> Depth {
        match (self.instance_id, self.resource_id, self.resource_instance_id) {
            (None, _, _) => Depth::Object,
            (Some(_), None, _) => Depth::Instance,
            (Some(_), Some(_), None) => Depth::Resource,
            (Some(_), Some(_), Some(_)) => Depth::ResourceInstance,
        }
    }

    /// Path components as decimal strings, suitable for CoAP Uri-Path options.
    pub fn segments(&self) -> Vec<String> {
        [
            Some(self.object_id),
            self.instance_id,
            self.resource_id,
            self.resource_instance_id,
        ]
        .into_iter()
        .map_while(|c| c)
        .map(|c| c.to_string())
        .collect()
    }

    pub fn from_segments<S: AsRef<str>>(segments: &[S]) -> Result<Self, PathError> {
        if segments.is_empty() {
            return Err(PathError::Empty);
        }
        if segments.len() > 4 {
            return Err(PathError::TooDeep(segments.len()));
        }
        let mut ids = [None; 4];
        for (slot, seg) in ids.iter_mut().zip(segments) {
            let seg = seg.as_ref();
            if seg.is_empty() || !seg.bytes().all(|b| b.is_ascii_digit()) {
                return Err(PathError::NotDecimal(seg.to_string()));
            }
            let v: u32 = seg
                .parse()
                .map_err(|_| PathError::OutOfRange(seg.to_string()))?;
            let v = u16::try_from(v).map_err(|_| PathError::OutOfRange(seg.to_string()))?;
            *slot = Some(v);
        }
        Ok(ResourcePath {
            object_id: ids[0].expect("non-empty"),
            instance_id: ids[1],
            resource_id: ids[2],
            resource_instance_id: ids[3],
        })
    }
}

impl fmt::Display for ResourcePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.segments() {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

impl FromStr for ResourcePath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_path(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("empty path")]
    Empty,
    #[error("path has {0} components, at most 4 allowed")]
    TooDeep(usize),
    #[error("path component {0:?} is not decimal")]
    NotDecimal(String),
    #[error("path component {0} exceeds 65535")]
    OutOfRange(String),
}

/// Parses `/obj[/inst[/res[/ri]]]`; the leading slash is optional.
pub fn parse_path(text: &str) -> Result<ResourcePath, PathError> {
    let body = text.strip_prefix('/').unwrap_or(text);
    if body.is_empty() {
        return Err(PathError::Empty);
    }
    let segments: Vec<&str> = body.split('/').collect();
    ResourcePath::from_segments(&segments)
}

/// A typed resource value.
#[derive(Debug, Clone, PartialEq)]
pub enum ResourceValue {
    Boolean(bool),
    Integer(i64),
    Float(f64),
    String(String),
    /// Seconds since the Unix epoch.
    Time(i64),
    Opaque(Vec<u8>),
}

impl ResourceValue {
    pub fn value_type(&self) -> ValueType {
        match self {
            ResourceValue::Boolean(_) => ValueType::Boolean,
            ResourceValue::Integer(_) => ValueType::Integer,
            ResourceValue::Float(_) => ValueType::Float,
            ResourceValue::String(_) => ValueType::String,
            ResourceValue::Time(_) => ValueType::Time,
            ResourceValue::Opaque(_) => ValueType::Opaque,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ResourceValue::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ResourceValue::Float(v) => Some(*v),
            ResourceValue::Integer(v) | ResourceValue::Time(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ResourceValue::Integer(v) | ResourceValue::Time(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ResourceValue::String(s) => Some(s),
            _ => None,
        }
    }
}

/// Content of a resource: one value, or an id-to-value map for
/// multiple-instance resources.
#[derive(Debug, Clone, PartialEq)]
pub enum ResourceContent {
    Single(ResourceValue),
    Multiple(BTreeMap<u16, ResourceValue>),
}

impl ResourceContent {
    pub fn single(&self) -> Option<&ResourceValue> {
        match self {
            ResourceContent::Single(v) => Some(v),
            ResourceContent::Multiple(_) => None,
        }
    }

    /// True when every contained value carries the given tag.
    pub fn matches(&self, ty: ValueType) -> bool {
        match self {
            ResourceContent::Single(v) => v.value_type() == ty,
            ResourceContent::Multiple(m) => m.values().all(|v| v.value_type() == ty),
        }
    }
}

impl From<ResourceValue> for ResourceContent {
    fn from(v: ResourceValue) -> Self {
        ResourceContent::Single(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("resource {resource} declares no operations")]
    NoOperations { resource: String },
    #[error("resource {resource} is observable but declares EXECUTE")]
    ObservableExecute { resource: String },
    #[error("object {object} declares resource id {resource} twice")]
    DuplicateResource { object: u16, resource: u16 },
    #[error("object {object} declares instance ref /{target}/{instance} twice")]
    DuplicateInstanceRef { object: u16, target: u16, instance: u16 },
    #[error("object type id {0} registered twice")]
    DuplicateObject(u16),
    #[error("dangling instance reference(s): {}", .0.iter().map(|(from, to)| format!("{from}->{to}")).collect::<Vec<_>>().join(", "))]
    Dangling(Vec<(u16, u16)>),
    #[error("object type {0} is not registered")]
    UnknownObject(u16),
    #[error("instance /{0}/{1} already exists")]
    DuplicateInstance(u16, u16),
    #[error("instance /{0}/{1} does not exist")]
    UnknownInstance(u16, u16),
}

/// Per-instance bookkeeping held by the registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRecord {
    pub object_id: u16,
    pub instance_id: u16,
    /// Name of the instance reference this instance was created through, if nested.
    pub via: Option<String>,
}

/// Registered object types and their live instances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectRegistry {
    types: BTreeMap<u16, ObjectTypeDescriptor>,
    instances: BTreeMap<(u16, u16), InstanceRecord>,
}

/// Builds a registry from descriptors, rejecting duplicate ids and
/// instance references to unknown types. Every dangling reference is listed.
pub fn registry_build(descriptors: &[ObjectTypeDescriptor]) -> Result<ObjectRegistry, ModelError> {
    let mut types = BTreeMap::new();
    for d in descriptors {
        d.validate()?;
        if types.insert(d.id, d.clone()).is_some() {
            return Err(ModelError::DuplicateObject(d.id));
        }
    }
    let dangling: Vec<(u16, u16)> = descriptors
        .iter()
        .flat_map(|d| d.instance_refs.iter().map(move |r| (d.id, r.object_type_id)))
        .filter(|(_, to)| !types.contains_key(to))
        .collect();
    if !dangling.is_empty() {
        return Err(ModelError::Dangling(dangling));
    }
    Ok(ObjectRegistry {
        types,
        instances: BTreeMap::new(),
    })
}

impl ObjectRegistry {
    pub fn object_type(&self, id: u16) -> Option<&ObjectTypeDescriptor> {
        self.types.get(&id)
    }

    pub fn object_type_by_name(&self, name: &str) -> Option<&ObjectTypeDescriptor> {
        self.types.values().find(|t| t.name == name)
    }

    pub fn types(&self) -> impl Iterator<Item = &ObjectTypeDescriptor> {
        self.types.values()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn add_instance(&mut self, record: InstanceRecord) -> Result<(), ModelError> {
        if !self.types.contains_key(&record.object_id) {
            return Err(ModelError::UnknownObject(record.object_id));
        }
        let key = (record.object_id, record.instance_id);
        if self.instances.contains_key(&key) {
            return Err(ModelError::DuplicateInstance(key.0, key.1));
        }
        self.instances.insert(key, record);
        Ok(())
    }

    pub fn remove_instance(&mut self, object_id: u16, instance_id: u16) -> Result<InstanceRecord, ModelError> {
        self.instances
            .remove(&(object_id, instance_id))
            .ok_or(ModelError::UnknownInstance(object_id, instance_id))
    }

    pub fn instance(&self, object_id: u16, instance_id: u16) -> Option<&InstanceRecord> {
        self.instances.get(&(object_id, instance_id))
    }

    pub fn instances_of(&self, object_id: u16) -> impl Iterator<Item = &InstanceRecord> {
        self.instances
            .range((object_id, 0)..=(object_id, u16::MAX))
            .map(|(_, r)| r)
    }

    pub fn instances(&self) -> impl Iterator<Item = &InstanceRecord> {
        self.instances.values()
    }
}

/// The operations of the device management, service enablement and
/// information reporting interfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lwm2mOp {
    Read,
    Write,
    Execute,
    Discover,
    WriteAttributes,
    Create,
    Delete,
    Observe,
}

impl Lwm2mOp {
    pub const ALL: [Lwm2mOp; 8] = [
        Lwm2mOp::Read,
        Lwm2mOp::Write,
        Lwm2mOp::Execute,
        Lwm2mOp::Discover,
        Lwm2mOp::WriteAttributes,
        Lwm2mOp::Create,
        Lwm2mOp::Delete,
        Lwm2mOp::Observe,
    ];

    /// Whether the construct at `depth` admits this operation at all.
    pub fn applies_to(self, depth: Depth) -> bool {
        use Depth::*;
        match self {
            Lwm2mOp::Read | Lwm2mOp::Write | Lwm2mOp::Discover | Lwm2mOp::WriteAttributes => true,
            Lwm2mOp::Execute => depth == Resource,
            Lwm2mOp::Create => depth == Object,
            Lwm2mOp::Delete => depth == Instance,
            Lwm2mOp::Observe => matches!(depth, Instance | Resource),
        }
    }

    fn declared_as(self) -> Option<ResourceOp> {
        match self {
            Lwm2mOp::Read => Some(ResourceOp::Read),
            Lwm2mOp::Write => Some(ResourceOp::Write),
            Lwm2mOp::Execute => Some(ResourceOp::Execute),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("{op:?} cannot target {depth:?}")]
    WrongConstruct { op: Lwm2mOp, depth: Depth },
    #[error("resource does not declare {op:?}")]
    UndeclaredOperation { op: Lwm2mOp },
    #[error("unknown path {0}")]
    UnknownPath(ResourcePath),
}

/// Decides whether `op` may be applied to `path`.
///
/// The object type must exist, the addressed construct must admit the
/// operation, the instance and resource must exist, and READ/WRITE/EXECUTE
/// on a resource must be among its declared operations.
pub fn legality_check(op: Lwm2mOp, path: &ResourcePath, registry: &ObjectRegistry) -> Result<(), Violation> {
    let unknown = || Violation::UnknownPath(*path);
    let ty = registry.object_type(path.object_id).ok_or_else(unknown)?;
    let depth = path.depth();
    if !op.applies_to(depth) {
        return Err(Violation::WrongConstruct { op, depth });
    }
    let Some(inst) = path.instance_id else {
        return Ok(());
    };
    registry.instance(path.object_id, inst).ok_or_else(unknown)?;
    let Some(res) = path.resource_id else {
        return Ok(());
    };
    let rd = ty.resource(res).ok_or_else(unknown)?;
    if path.resource_instance_id.is_some() && rd.instance_type != InstanceType::Multiple {
        return Err(unknown());
    }
    match op.declared_as() {
        Some(declared) if !rd.operations.contains(declared) => {
            Err(Violation::UndeclaredOperation { op })
        }
        _ => Ok(()),
    }
}
