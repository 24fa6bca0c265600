//! Deterministic naming between model paths, broker entities and devices:
//! `LD/LN.DO.DA` is entity `urn:dev:{LD}-{LN}` with attribute `{DO}_{DA}`,
//! and device `{id}` is entity `urn:dev:{id}`.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Number, Value};
use thiserror::Error;

use crate::broker::Attribute;
use crate::model::{DataValue, ObjectReference, ValueKind};

pub const ENTITY_PREFIX: &str = "urn:dev:";
/// Attribute suffixes that carry commands from the broker into the model.
pub const COMMAND_SUFFIXES: [&str; 2] = ["_setMag", "_ctlVal"];

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("{0} cannot be mapped reversibly (separator inside a segment)")]
    Ambiguous(String),
    #[error("{0} and {1} map to the same entity attribute")]
    Collision(String, String),
}

pub fn entity_id(reference: &ObjectReference) -> String {
    format!("{ENTITY_PREFIX}{}-{}", reference.ld(), reference.ln())
}

pub fn attribute_name(reference: &ObjectReference) -> String {
    format!("{}_{}", reference.data_object(), reference.attribute())
}

pub fn device_entity_id(device_id: &str) -> String {
    format!("{ENTITY_PREFIX}{device_id}")
}

/// Entity type for a model-backed entity: the logical node class.
pub fn entity_type(reference: &ObjectReference) -> String {
    reference
        .ln()
        .trim_end_matches(|c: char| c.is_ascii_digit())
        .to_owned()
}

pub fn is_command_attribute(attr: &str) -> bool {
    COMMAND_SUFFIXES.iter().any(|s| attr.ends_with(s))
}

/// Inverse of [`entity_id`] and [`attribute_name`].
pub fn path_of(entity_id: &str, attr: &str) -> Option<ObjectReference> {
    let rest = entity_id.strip_prefix(ENTITY_PREFIX)?;
    let (ld, ln) = rest.split_once('-')?;
    let (dobj, da) = attr.split_once('_')?;
    ObjectReference::new(ld, ln, dobj, da).ok()
}

/// Mapping restricted to a configured set of paths, checked to be a bijection.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeMapping {
    by_path: BTreeMap<ObjectReference, (String, String)>,
    by_entity: BTreeMap<(String, String), ObjectReference>,
}

impl BridgeMapping {
    pub fn new(paths: impl IntoIterator<Item = ObjectReference>) -> Result<Self, MappingError> {
        let mut by_path = BTreeMap::new();
        let mut by_entity = BTreeMap::new();
        for p in paths {
            let key = (entity_id(&p), attribute_name(&p));
            if path_of(&key.0, &key.1).as_ref() != Some(&p) {
                return Err(MappingError::Ambiguous(p.to_string()));
            }
            if let Some(other) = by_entity.insert(key.clone(), p.clone()) {
                if other != p {
                    return Err(MappingError::Collision(other.to_string(), p.to_string()));
                }
            }
            by_path.insert(p, key);
        }
        Ok(Self { by_path, by_entity })
    }

    pub fn to_entity(&self, path: &ObjectReference) -> Option<(&str, &str)> {
        self.by_path.get(path).map(|(e, a)| (e.as_str(), a.as_str()))
    }

    pub fn to_path(&self, entity_id: &str, attr: &str) -> Option<&ObjectReference> {
        self.by_entity.get(&(entity_id.to_owned(), attr.to_owned()))
    }

    pub fn paths(&self) -> impl Iterator<Item = &ObjectReference> {
        self.by_path.keys()
    }

    pub fn entity_ids(&self) -> BTreeSet<&str> {
        self.by_path.values().map(|(e, _)| e.as_str()).collect()
    }

    pub fn command_attributes(&self) -> BTreeSet<&str> {
        self.by_path
            .values()
            .map(|(_, a)| a.as_str())
            .filter(|a| is_command_attribute(a))
            .collect()
    }
}

/// Broker attribute for a model value.
pub fn to_attribute(value: &DataValue) -> Attribute {
    let num = |x: f64| Number::from_f64(x).map_or(Value::Null, Value::Number);
    match value {
        DataValue::Bool(b) => Attribute::new(json!(b), "Boolean"),
        DataValue::Int32(i) => Attribute::new(json!(i), "Integer"),
        DataValue::Float32(f) => Attribute::new(num(f64::from(*f)), "Number"),
        DataValue::Float64(f) => Attribute::new(num(*f), "Number"),
        DataValue::Text(s) => Attribute::new(json!(s), "Text"),
        DataValue::TimestampUs(t) => Attribute::new(json!(t), "TimestampUs"),
    }
}

/// Model value of `kind` for a broker JSON value, when representable.
pub fn to_data_value(value: &Value, kind: ValueKind) -> Option<DataValue> {
    Some(match kind {
        ValueKind::Bool => DataValue::Bool(value.as_bool()?),
        ValueKind::Int32 => DataValue::Int32(i32::try_from(value.as_i64()?).ok()?),
        ValueKind::Float32 => DataValue::Float32(value.as_f64()? as f32),
        ValueKind::Float64 => DataValue::Float64(value.as_f64()?),
        ValueKind::Text => DataValue::Text(value.as_str()?.to_owned()),
        ValueKind::TimestampUs => DataValue::TimestampUs(value.as_u64()?),
    })
}
