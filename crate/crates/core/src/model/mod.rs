//! Hierarchical device model: logical devices hold logical nodes, which hold
//! data objects of typed data attributes.
//!
//! Every attribute carries a functional constraint that decides which write
//! channel may change it: measurements and status (`MX`, `ST`) belong to the
//! plant side, controls and setpoints (`CO`, `SP`) to controllers, and
//! configuration (`CF`) to the configuration channel only.

mod home;
mod reference;
mod shared;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};

pub use home::{build_home_model, paths};
pub use reference::ObjectReference;
pub use shared::{ModelChange, SharedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataValue {
    Bool(bool),
    Int32(i32),
    Float32(f32),
    Float64(f64),
    Text(String),
    /// Microseconds since the Unix epoch.
    TimestampUs(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueKind {
    Bool,
    Int32,
    Float32,
    Float64,
    Text,
    TimestampUs,
}

impl DataValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            DataValue::Bool(_) => ValueKind::Bool,
            DataValue::Int32(_) => ValueKind::Int32,
            DataValue::Float32(_) => ValueKind::Float32,
            DataValue::Float64(_) => ValueKind::Float64,
            DataValue::Text(_) => ValueKind::Text,
            DataValue::TimestampUs(_) => ValueKind::TimestampUs,
        }
    }

    /// Equality on the bit pattern, so NaN payloads and signed zeros compare exactly.
    pub fn bit_eq(&self, other: &DataValue) -> bool {
        match (self, other) {
            (DataValue::Float32(a), DataValue::Float32(b)) => a.to_bits() == b.to_bits(),
            (DataValue::Float64(a), DataValue::Float64(b)) => a.to_bits() == b.to_bits(),
            (a, b) => a == b,
        }
    }

    /// Numeric view used by bridges and controllers.
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            DataValue::Int32(v) => Some(v as f64),
            DataValue::Float32(v) => Some(v as f64),
            DataValue::Float64(v) => Some(v),
            DataValue::TimestampUs(v) => Some(v as f64),
            DataValue::Bool(_) | DataValue::Text(_) => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            DataValue::Bool(b) => Some(b),
            _ => None,
        }
    }
}

impl ValueKind {
    pub fn default_value(self) -> DataValue {
        match self {
            ValueKind::Bool => DataValue::Bool(false),
            ValueKind::Int32 => DataValue::Int32(0),
            ValueKind::Float32 => DataValue::Float32(0.0),
            ValueKind::Float64 => DataValue::Float64(0.0),
            ValueKind::Text => DataValue::Text(String::new()),
            ValueKind::TimestampUs => DataValue::TimestampUs(0),
        }
    }
}

impl fmt::Display for DataValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataValue::Bool(v) => write!(f, "{v}"),
            DataValue::Int32(v) => write!(f, "{v}"),
            DataValue::Float32(v) => write!(f, "{v}"),
            DataValue::Float64(v) => write!(f, "{v}"),
            DataValue::Text(v) => write!(f, "{v:?}"),
            DataValue::TimestampUs(v) => write!(f, "{v}us"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FunctionalConstraint {
    /// Measurement.
    MX,
    /// Status.
    ST,
    /// Control.
    CO,
    /// Setpoint.
    SP,
    /// Configuration.
    CF,
}

/// Who is writing. Each functional constraint accepts exactly one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteChannel {
    Plant,
    Controller,
    Config,
}

impl FunctionalConstraint {
    pub fn permits(self, channel: WriteChannel) -> bool {
        match self {
            FunctionalConstraint::MX | FunctionalConstraint::ST => channel == WriteChannel::Plant,
            FunctionalConstraint::CO | FunctionalConstraint::SP => {
                channel == WriteChannel::Controller
            }
            FunctionalConstraint::CF => channel == WriteChannel::Config,
        }
    }

    /// Controller-side constraints, i.e. attributes that carry commands.
    pub fn is_command(self) -> bool {
        matches!(self, FunctionalConstraint::CO | FunctionalConstraint::SP)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LnClass {
    MMXU,
    ZBAT,
    ZBTC,
    MMDC,
    MMET,
    ZINV,
    LLN0,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("object reference not found: {0}")]
    NotFound(String),
    #[error("type mismatch at {reference}: attribute is {expected:?}, value is {found:?}")]
    TypeMismatch {
        reference: String,
        expected: ValueKind,
        found: ValueKind,
    },
    #[error("{channel:?} channel may not write {fc:?} attribute {reference}")]
    AccessDenied {
        reference: String,
        fc: FunctionalConstraint,
        channel: WriteChannel,
    },
    #[error("data set {0} has no members")]
    EmptyDataSet(String),
    #[error("data set {0} already defined")]
    DuplicateDataSet(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelBuildError {
    #[error("duplicate name in model: {0}")]
    Duplicate(String),
    #[error("invalid name in model: {0}")]
    InvalidName(String),
}

/// Resolved attribute: what it holds and who may write it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeHandle {
    pub reference: ObjectReference,
    pub kind: ValueKind,
    pub fc: FunctionalConstraint,
}

#[derive(Debug, Clone)]
pub struct DataAttribute {
    kind: ValueKind,
    fc: FunctionalConstraint,
    value: DataValue,
    timestamp_us: u64,
}

#[derive(Debug, Clone, Default)]
pub struct DataObject {
    attributes: BTreeMap<String, DataAttribute>,
}

#[derive(Debug, Clone)]
pub struct LogicalNode {
    class: LnClass,
    objects: BTreeMap<String, DataObject>,
}

impl LogicalNode {
    pub fn class(&self) -> LnClass {
        self.class
    }
}

#[derive(Debug, Clone, Default)]
pub struct LogicalDevice {
    nodes: BTreeMap<String, LogicalNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSet {
    pub name: String,
    pub members: Vec<ObjectReference>,
}

/// One prosumer installation. Not synchronized; wrap in [`SharedModel`] to share.
pub struct ServerModel {
    name: String,
    devices: BTreeMap<String, LogicalDevice>,
    datasets: BTreeMap<String, DataSet>,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for ServerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServerModel")
            .field("name", &self.name)
            .field("devices", &self.devices.keys().collect::<Vec<_>>())
            .field("datasets", &self.datasets.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ServerModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self::with_clock(name, Arc::new(SystemClock))
    }

    pub fn with_clock(name: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Self {
            name: name.into(),
            devices: BTreeMap::new(),
            datasets: BTreeMap::new(),
            clock,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_clock(&mut self, clock: Arc<dyn Clock>) {
        self.clock = clock;
    }

    /// Adds one attribute, creating the device, node and object on the way.
    pub fn add_attribute(
        &mut self,
        reference: &ObjectReference,
        class: LnClass,
        kind: ValueKind,
        fc: FunctionalConstraint,
    ) -> Result<(), ModelBuildError> {
        let node = self
            .devices
            .entry(reference.ld().to_owned())
            .or_default()
            .nodes
            .entry(reference.ln().to_owned())
            .or_insert_with(|| LogicalNode {
                class,
                objects: BTreeMap::new(),
            });
        if node.class != class {
            return Err(ModelBuildError::Duplicate(format!(
                "{}/{}",
                reference.ld(),
                reference.ln()
            )));
        }
        let object = node
            .objects
            .entry(reference.data_object().to_owned())
            .or_default();
        if object.attributes.contains_key(reference.attribute()) {
            return Err(ModelBuildError::Duplicate(reference.to_string()));
        }
        object.attributes.insert(
            reference.attribute().to_owned(),
            DataAttribute {
                kind,
                fc,
                value: kind.default_value(),
                timestamp_us: 0,
            },
        );
        Ok(())
    }

    fn attribute(&self, reference: &ObjectReference) -> Result<&DataAttribute, ModelError> {
        self.devices
            .get(reference.ld())
            .and_then(|d| d.nodes.get(reference.ln()))
            .and_then(|n| n.objects.get(reference.data_object()))
            .and_then(|o| o.attributes.get(reference.attribute()))
            .ok_or_else(|| ModelError::NotFound(reference.to_string()))
    }

    fn attribute_mut(
        &mut self,
        reference: &ObjectReference,
    ) -> Result<&mut DataAttribute, ModelError> {
        self.devices
            .get_mut(reference.ld())
            .and_then(|d| d.nodes.get_mut(reference.ln()))
            .and_then(|n| n.objects.get_mut(reference.data_object()))
            .and_then(|o| o.attributes.get_mut(reference.attribute()))
            .ok_or_else(|| ModelError::NotFound(reference.to_string()))
    }

    pub fn resolve(&self, reference: &ObjectReference) -> Result<AttributeHandle, ModelError> {
        let attr = self.attribute(reference)?;
        Ok(AttributeHandle {
            reference: reference.clone(),
            kind: attr.kind,
            fc: attr.fc,
        })
    }

    /// Resolves a textual path; unparsable text is `NotFound`.
    pub fn resolve_str(&self, path: &str) -> Result<AttributeHandle, ModelError> {
        self.resolve(&path.parse()?)
    }

    pub fn class_of(&self, ld: &str, ln: &str) -> Option<LnClass> {
        self.devices.get(ld)?.nodes.get(ln).map(LogicalNode::class)
    }

    pub fn read(&self, reference: &ObjectReference) -> Result<(DataValue, u64), ModelError> {
        let attr = self.attribute(reference)?;
        Ok((attr.value.clone(), attr.timestamp_us))
    }

    /// Writes a value and stamps it with the model clock. Returns the stored
    /// timestamp and whether the value differs from the previous one.
    pub fn write(
        &mut self,
        reference: &ObjectReference,
        value: DataValue,
        channel: WriteChannel,
    ) -> Result<(u64, bool), ModelError> {
        let now = self.clock.now_us();
        let attr = self.attribute_mut(reference)?;
        if value.kind() != attr.kind {
            return Err(ModelError::TypeMismatch {
                reference: reference.to_string(),
                expected: attr.kind,
                found: value.kind(),
            });
        }
        if !attr.fc.permits(channel) {
            return Err(ModelError::AccessDenied {
                reference: reference.to_string(),
                fc: attr.fc,
                channel,
            });
        }
        let changed = !attr.value.bit_eq(&value);
        attr.value = value;
        // timestamps never run backwards for one attribute
        attr.timestamp_us = now.max(attr.timestamp_us);
        Ok((attr.timestamp_us, changed))
    }

    /// Every resolvable path, in model order.
    pub fn references(&self) -> Vec<ObjectReference> {
        let mut out = Vec::new();
        for (ld, dev) in &self.devices {
            for (ln, node) in &dev.nodes {
                for (dobj, object) in &node.objects {
                    for da in object.attributes.keys() {
                        // segments were validated on insertion
                        out.push(ObjectReference::new(ld, ln, dobj, da).expect("valid segments"));
                    }
                }
            }
        }
        out
    }

    pub fn browse(&self, prefix: &str) -> Vec<ObjectReference> {
        self.references()
            .into_iter()
            .filter(|r| r.has_prefix(prefix))
            .collect()
    }

    pub fn define_dataset(
        &mut self,
        name: &str,
        members: Vec<ObjectReference>,
    ) -> Result<DataSet, ModelError> {
        if members.is_empty() {
            return Err(ModelError::EmptyDataSet(name.to_owned()));
        }
        if self.datasets.contains_key(name) {
            return Err(ModelError::DuplicateDataSet(name.to_owned()));
        }
        for m in &members {
            self.attribute(m)?;
        }
        let ds = DataSet {
            name: name.to_owned(),
            members,
        };
        self.datasets.insert(name.to_owned(), ds.clone());
        Ok(ds)
    }

    pub fn dataset(&self, name: &str) -> Option<&DataSet> {
        self.datasets.get(name)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &DataSet> {
        self.datasets.values()
    }

    /// Current member values in member order.
    pub fn snapshot(&self, name: &str) -> Result<Vec<(ObjectReference, DataValue, u64)>, ModelError> {
        let ds = self
            .datasets
            .get(name)
            .ok_or_else(|| ModelError::NotFound(name.to_owned()))?;
        ds.members
            .iter()
            .map(|m| {
                let (v, ts) = self.read(m)?;
                Ok((m.clone(), v, ts))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::plant::PlantConfig;
    use proptest::prelude::*;

    fn home() -> ServerModel {
        build_home_model(&PlantConfig::default()).unwrap()
    }

    fn r(s: &str) -> ObjectReference {
        s.parse().unwrap()
    }

    #[test]
    fn resolve_reports_kind_and_constraint() {
        let m = home();
        let h = m.resolve_str("PV1/MMET1.Irr.mag").unwrap();
        assert_eq!((h.kind, h.fc), (ValueKind::Float32, FunctionalConstraint::MX));
        assert!(matches!(
            m.resolve_str("PV1/MMET1.Irr.bad"),
            Err(ModelError::NotFound(_))
        ));
        assert!(matches!(m.resolve_str(""), Err(ModelError::NotFound(_))));
    }

    #[test]
    fn write_read_roundtrip_and_errors() {
        let mut m = home();
        let tot = r("PV1/MMXU1.TotW.mag");
        m.write(&tot, DataValue::Float32(4000.0), WriteChannel::Plant).unwrap();
        assert_eq!(m.read(&tot).unwrap().0, DataValue::Float32(4000.0));

        assert!(matches!(
            m.write(&tot, DataValue::Bool(true), WriteChannel::Plant),
            Err(ModelError::TypeMismatch { .. })
        ));
        assert!(matches!(
            m.write(&r("BAT1/ZBTC1.WSpt.setMag"), DataValue::Float32(1.0), WriteChannel::Plant),
            Err(ModelError::AccessDenied { .. })
        ));
        assert!(matches!(
            m.write(&tot, DataValue::Float32(1.0), WriteChannel::Controller),
            Err(ModelError::AccessDenied { .. })
        ));
        assert!(matches!(
            m.write(&r("PV1/ZINV1.MaxW.setMag"), DataValue::Float32(1.0), WriteChannel::Controller),
            Err(ModelError::AccessDenied { .. })
        ));
        m.write(&r("PV1/ZINV1.MaxW.setMag"), DataValue::Float32(1.0), WriteChannel::Config)
            .unwrap();
    }

    #[test]
    fn write_stamps_with_model_clock() {
        let clock = SimClock::new(5_000);
        let mut m = home();
        m.set_clock(Arc::new(clock.clone()));
        let tot = r("GRID1/MMXU1.TotW.mag");
        let (ts, changed) = m.write(&tot, DataValue::Float32(1.0), WriteChannel::Plant).unwrap();
        assert_eq!(ts, 5_000);
        assert!(changed);
        let (_, changed) = m.write(&tot, DataValue::Float32(1.0), WriteChannel::Plant).unwrap();
        assert!(!changed);
        // a clock that steps back does not rewind the attribute timestamp
        clock.set_us(10);
        let (ts, _) = m.write(&tot, DataValue::Float32(2.0), WriteChannel::Plant).unwrap();
        assert_eq!(ts, 5_000);
        assert_eq!(m.read(&tot).unwrap(), (DataValue::Float32(2.0), 5_000));
    }

    #[test]
    fn datasets() {
        let mut m = home();
        let ds = m
            .define_dataset(
                "dsMeas",
                vec![r("GRID1/MMXU1.TotW.mag"), r("BAT1/ZBAT1.SocPct.mag")],
            )
            .unwrap();
        assert_eq!(ds.members.len(), 2);
        m.write(&r("BAT1/ZBAT1.SocPct.mag"), DataValue::Float32(55.0), WriteChannel::Plant)
            .unwrap();
        let snap = m.snapshot("dsMeas").unwrap();
        assert_eq!(snap[0].0, r("GRID1/MMXU1.TotW.mag"));
        assert_eq!(snap[1].1, DataValue::Float32(55.0));

        assert_eq!(
            m.define_dataset("empty", vec![]),
            Err(ModelError::EmptyDataSet("empty".into()))
        );
        assert!(matches!(
            m.define_dataset("bad", vec![r("X/Y.Z.W")]),
            Err(ModelError::NotFound(_))
        ));
        assert!(m.dataset("bad").is_none());
    }

    #[test]
    fn paths_are_unique() {
        let refs = home().references();
        let mut sorted: Vec<String> = refs.iter().map(ToString::to_string).collect();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), refs.len());
    }

    fn value_strategy(kind: ValueKind) -> BoxedStrategy<DataValue> {
        match kind {
            ValueKind::Bool => any::<bool>().prop_map(DataValue::Bool).boxed(),
            ValueKind::Int32 => any::<i32>().prop_map(DataValue::Int32).boxed(),
            ValueKind::Float32 => any::<u32>()
                .prop_map(|b| DataValue::Float32(f32::from_bits(b)))
                .boxed(),
            ValueKind::Float64 => any::<u64>()
                .prop_map(|b| DataValue::Float64(f64::from_bits(b)))
                .boxed(),
            ValueKind::Text => ".{0,16}".prop_map(DataValue::Text).boxed(),
            ValueKind::TimestampUs => any::<u64>().prop_map(DataValue::TimestampUs).boxed(),
        }
    }

    proptest! {
        #[test]
        fn write_read_identity_is_bit_exact(idx in 0usize..64, seed in any::<u64>()) {
            let mut m = home();
            let refs = m.references();
            let reference = refs[idx % refs.len()].clone();
            let h = m.resolve(&reference).unwrap();
            let channel = match h.fc {
                FunctionalConstraint::MX | FunctionalConstraint::ST => WriteChannel::Plant,
                FunctionalConstraint::CO | FunctionalConstraint::SP => WriteChannel::Controller,
                FunctionalConstraint::CF => WriteChannel::Config,
            };
            let mut runner = proptest::test_runner::TestRunner::new_with_rng(
                Default::default(),
                proptest::test_runner::TestRng::from_seed(
                    proptest::test_runner::RngAlgorithm::ChaCha,
                    &{ let mut s = [0u8; 32]; s[..8].copy_from_slice(&seed.to_le_bytes()); s },
                ),
            );
            let value = value_strategy(h.kind).new_tree(&mut runner).unwrap().current();
            m.write(&reference, value.clone(), channel).unwrap();
            prop_assert!(m.read(&reference).unwrap().0.bit_eq(&value));
        }
    }
}
