use std::collections::BTreeMap;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::store::{Attribute, Entity, StoreError, Subscription};
use super::{BrokerError, ContextApi};

/// [`ContextApi`] over HTTP.
pub struct HttpBrokerClient {
    base: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ErrorBody {
    #[serde(default)]
    description: String,
}

#[derive(Deserialize)]
struct Created {
    id: String,
}

fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

impl HttpBrokerClient {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(5)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_owned(),
            agent,
        }
    }

    fn check(
        &self,
        resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
        id: &str,
    ) -> Result<String, BrokerError> {
        let mut resp = resp.map_err(|e| BrokerError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BrokerError::Transport(e.to_string()))?;
        match status {
            200..=299 => Ok(body),
            404 => Err(StoreError::NotFound(id.to_owned()).into()),
            400..=499 => {
                let msg = serde_json::from_str::<ErrorBody>(&body)
                    .map(|e| e.description)
                    .unwrap_or(body);
                Err(StoreError::Invalid(msg).into())
            }
            _ => Err(BrokerError::Transport(format!("HTTP {status}: {body}"))),
        }
    }

    fn json<T: DeserializeOwned>(body: &str) -> Result<T, BrokerError> {
        serde_json::from_str(body).map_err(|e| BrokerError::Transport(e.to_string()))
    }

    fn post_json(&self, path: &str, body: String, id: &str) -> Result<String, BrokerError> {
        let resp = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("Content-Type", "application/json")
            .send(body);
        self.check(resp, id)
    }
}

impl ContextApi for HttpBrokerClient {
    fn upsert_entity(&self, entity: Entity) -> Result<(), BrokerError> {
        let body = serde_json::to_string(&entity).expect("entity serializes");
        self.post_json("/v2/entities", body, &entity.id).map(|_| ())
    }

    fn update_attrs(&self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<(), BrokerError> {
        let body = serde_json::to_string(&attrs).expect("attributes serialize");
        let resp = self
            .agent
            .patch(format!("{}/v2/entities/{}/attrs", self.base, encode_component(id)))
            .header("Content-Type", "application/json")
            .send(body);
        self.check(resp, id).map(|_| ())
    }

    fn get_entity(&self, id: &str) -> Result<Entity, BrokerError> {
        let resp = self
            .agent
            .get(format!("{}/v2/entities/{}", self.base, encode_component(id)))
            .call();
        Self::json(&self.check(resp, id)?)
    }

    fn query(&self, entity_type: Option<&str>) -> Result<Vec<Entity>, BrokerError> {
        let url = match entity_type {
            Some(t) => format!("{}/v2/entities?type={}", self.base, encode_component(t)),
            None => format!("{}/v2/entities", self.base),
        };
        let resp = self.agent.get(url).call();
        Self::json(&self.check(resp, "")?)
    }

    fn create_subscription(&self, sub: Subscription) -> Result<String, BrokerError> {
        let body = serde_json::to_string(&sub).expect("subscription serializes");
        let created: Created = Self::json(&self.post_json("/v2/subscriptions", body, "")?)?;
        Ok(created.id)
    }
}
