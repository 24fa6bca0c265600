use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::Clock;

/// One context attribute. On the wire `{"value": …, "type": …}`; the
/// timestamp and unit are filled in by the store and config respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Attribute {
    pub value: Value,
    #[serde(rename = "type", default = "default_attr_type")]
    pub attr_type: String,
    #[serde(default)]
    pub timestamp_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

fn default_attr_type() -> String {
    "Property".into()
}

impl Attribute {
    pub fn new(value: Value, attr_type: &str) -> Self {
        Self {
            value,
            attr_type: attr_type.to_owned(),
            timestamp_us: 0,
            unit: None,
        }
    }

    /// JSON type name matching `value`.
    pub fn infer(value: Value) -> Self {
        let t = match &value {
            Value::Bool(_) => "Boolean",
            Value::Number(_) => "Number",
            Value::String(_) => "Text",
            _ => "StructuredValue",
        };
        Self::new(value, t)
    }

    pub fn with_unit(mut self, unit: Option<&str>) -> Self {
        self.unit = unit.map(str::to_owned);
        self
    }

    fn same_content(&self, other: &Attribute) -> bool {
        self.value == other.value && self.attr_type == other.attr_type
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    #[serde(flatten)]
    pub attributes: BTreeMap<String, Attribute>,
}

impl Entity {
    pub fn new(id: &str, entity_type: &str) -> Self {
        Self {
            id: id.to_owned(),
            entity_type: entity_type.to_owned(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, name: &str, attr: Attribute) -> Self {
        self.attributes.insert(name.to_owned(), attr);
        self
    }

    pub fn attr(&self, name: &str) -> Option<&Attribute> {
        self.attributes.get(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Subscription {
    #[serde(default)]
    pub id: String,
    /// Exact id, or a prefix followed by `*`.
    pub entity_id_pattern: String,
    /// Empty means every attribute.
    #[serde(default)]
    pub watched_attrs: Vec<String>,
    pub notify_url: String,
}

impl Subscription {
    pub fn matches_id(&self, id: &str) -> bool {
        match self.entity_id_pattern.strip_suffix('*') {
            Some(prefix) => id.starts_with(prefix),
            None => id == self.entity_id_pattern,
        }
    }

    pub fn watches(&self, attr: &str) -> bool {
        self.watched_attrs.is_empty() || self.watched_attrs.iter().any(|a| a == attr)
    }
}

/// Notification about one entity change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NotificationBody {
    pub subscription_id: String,
    pub data: Vec<Entity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub url: String,
    pub body: NotificationBody,
}

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("entity {0} not found")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// Serializable image of the store used for persistence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub entities: Vec<Entity>,
    pub subscriptions: Vec<Subscription>,
    pub next_subscription: u64,
}

/// Entities and subscriptions. Every mutation returns the notifications it
/// caused; delivering them is the caller's business.
pub struct Store {
    entities: BTreeMap<String, Entity>,
    subscriptions: Vec<Subscription>,
    next_subscription: u64,
    clock: Arc<dyn Clock>,
}

impl Store {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            entities: BTreeMap::new(),
            subscriptions: Vec::new(),
            next_subscription: 1,
            clock,
        }
    }

    pub fn from_snapshot(snapshot: Snapshot, clock: Arc<dyn Clock>) -> Self {
        Self {
            entities: snapshot.entities.into_iter().map(|e| (e.id.clone(), e)).collect(),
            subscriptions: snapshot.subscriptions,
            next_subscription: snapshot.next_subscription.max(1),
            clock,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            entities: self.entities.values().cloned().collect(),
            subscriptions: self.subscriptions.clone(),
            next_subscription: self.next_subscription,
        }
    }

    /// Creates the entity or merges its attributes into the stored one.
    pub fn upsert_entity(&mut self, entity: Entity) -> Result<Vec<Notification>, StoreError> {
        if entity.id.is_empty() {
            return Err(StoreError::Invalid("empty entity id".into()));
        }
        let stored = self
            .entities
            .entry(entity.id.clone())
            .or_insert_with(|| Entity::new(&entity.id, &entity.entity_type));
        stored.entity_type = entity.entity_type;
        let id = entity.id;
        self.apply(&id, entity.attributes)
    }

    pub fn update_attrs(
        &mut self,
        id: &str,
        attrs: BTreeMap<String, Attribute>,
    ) -> Result<Vec<Notification>, StoreError> {
        if !self.entities.contains_key(id) {
            return Err(StoreError::NotFound(id.to_owned()));
        }
        self.apply(id, attrs)
    }

    fn apply(&mut self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<Vec<Notification>, StoreError> {
        let now = self.clock.now_us();
        let entity = self.entities.get_mut(id).expect("entity exists");
        let mut changed = BTreeSet::new();
        for (name, mut attr) in attrs {
            match entity.attributes.get_mut(&name) {
                Some(old) if old.same_content(&attr) => {
                    if attr.unit.is_some() {
                        old.unit = attr.unit;
                    }
                }
                Some(old) => {
                    attr.timestamp_us = now.max(old.timestamp_us);
                    if attr.unit.is_none() {
                        attr.unit = old.unit.take();
                    }
                    *old = attr;
                    changed.insert(name);
                }
                None => {
                    attr.timestamp_us = now;
                    entity.attributes.insert(name.clone(), attr);
                    changed.insert(name);
                }
            }
        }
        Ok(self.notifications(id, &changed))
    }

    fn notifications(&self, id: &str, changed: &BTreeSet<String>) -> Vec<Notification> {
        if changed.is_empty() {
            return Vec::new();
        }
        let entity = &self.entities[id];
        self.subscriptions
            .iter()
            .filter(|s| s.matches_id(id))
            .filter_map(|s| {
                let attributes: BTreeMap<_, _> = changed
                    .iter()
                    .filter(|a| s.watches(a))
                    .map(|a| (a.clone(), entity.attributes[a].clone()))
                    .collect();
                (!attributes.is_empty()).then(|| Notification {
                    url: s.notify_url.clone(),
                    body: NotificationBody {
                        subscription_id: s.id.clone(),
                        data: vec![Entity {
                            id: entity.id.clone(),
                            entity_type: entity.entity_type.clone(),
                            attributes,
                        }],
                    },
                })
            })
            .collect()
    }

    pub fn get_entity(&self, id: &str) -> Result<&Entity, StoreError> {
        self.entities.get(id).ok_or_else(|| StoreError::NotFound(id.to_owned()))
    }

    /// Entities of `entity_type`, or all when `None`.
    pub fn query(&self, entity_type: Option<&str>) -> Vec<Entity> {
        self.entities
            .values()
            .filter(|e| entity_type.is_none_or(|t| e.entity_type == t))
            .cloned()
            .collect()
    }

    pub fn create_subscription(&mut self, mut sub: Subscription) -> Result<String, StoreError> {
        validate_url(&sub.notify_url)?;
        if sub.entity_id_pattern.is_empty() {
            return Err(StoreError::Invalid("empty entityIdPattern".into()));
        }
        sub.id = format!("sub-{}", self.next_subscription);
        self.next_subscription += 1;
        let id = sub.id.clone();
        self.subscriptions.push(sub);
        Ok(id)
    }

    pub fn subscriptions(&self) -> &[Subscription] {
        &self.subscriptions
    }
}

fn validate_url(url: &str) -> Result<(), StoreError> {
    let rest = url
        .strip_prefix("http://")
        .or_else(|| url.strip_prefix("https://"))
        .ok_or_else(|| StoreError::Invalid(format!("notifyUrl {url:?} is not an HTTP URL")))?;
    let host = rest.split(['/', '?', '#']).next().unwrap_or("");
    if host.is_empty() || host.contains(char::is_whitespace) {
        return Err(StoreError::Invalid(format!("notifyUrl {url:?} has no host")));
    }
    Ok(())
}
