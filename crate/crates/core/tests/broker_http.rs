use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use flexsim_core::bridges::NotificationListener;
use flexsim_core::broker::{
    Attribute, Broker, BrokerServer, ContextApi, DispatchMode, Entity, HttpBrokerClient, HttpSink, Subscription,
};
use flexsim_core::SimClock;
use serde_json::json;

fn start(mode: DispatchMode) -> (Broker, BrokerServer, HttpBrokerClient) {
    let broker = Broker::in_memory(Arc::new(SimClock::new(5)), Arc::new(HttpSink::default()), mode);
    let server = BrokerServer::start(broker.clone(), "127.0.0.1:0").unwrap();
    let client = HttpBrokerClient::new(&server.base_url());
    (broker, server, client)
}

fn attrs(pairs: &[(&str, serde_json::Value)]) -> BTreeMap<String, Attribute> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), Attribute::infer(v.clone())))
        .collect()
}

#[test]
fn entity_routes() {
    let (broker, _server, client) = start(DispatchMode::Inline);
    let e = Entity::new("urn:Battery:home", "Battery").with_attr("soc", Attribute::infer(json!(50.0)));
    client.upsert_entity(e).unwrap();
    client
        .upsert_entity(Entity::new("urn:Plug:1", "SmartPlug").with_attr("on", Attribute::infer(json!(false))))
        .unwrap();

    let got = client.get_entity("urn:Battery:home").unwrap();
    assert_eq!(got.entity_type, "Battery");
    assert_eq!(got.attr("soc").unwrap().value, json!(50.0));
    assert_eq!(got.attr("soc").unwrap().attr_type, "Number");
    assert_eq!(got.attr("soc").unwrap().timestamp_us, 5);

    client
        .update_attrs("urn:Battery:home", attrs(&[("soc", json!(51.5)), ("w", json!(-300))]))
        .unwrap();
    let local = broker.get_entity("urn:Battery:home").unwrap();
    assert_eq!(local.attr("soc").unwrap().value, json!(51.5));
    assert_eq!(local.attr("w").unwrap().value, json!(-300));

    let batteries = client.query(Some("Battery")).unwrap();
    assert_eq!(batteries.len(), 1);
    assert_eq!(client.query(None).unwrap().len(), 2);
    assert!(client.query(Some("Nothing")).unwrap().is_empty());

    assert!(client.get_entity("urn:none").unwrap_err().is_not_found());
    assert!(client
        .update_attrs("urn:none", attrs(&[("x", json!(1))]))
        .unwrap_err()
        .is_not_found());
}

#[test]
fn malformed_requests_get_client_errors() {
    let (_broker, server, _client) = start(DispatchMode::Inline);
    let status = |r: Result<ureq::http::Response<ureq::Body>, ureq::Error>| match r {
        Ok(resp) => resp.status().as_u16(),
        Err(ureq::Error::StatusCode(code)) => code,
        Err(e) => panic!("{e}"),
    };
    let base = server.base_url();
    let bad_json = ureq::post(format!("{base}/v2/entities"))
        .header("Content-Type", "application/json")
        .send("{not json");
    assert_eq!(status(bad_json), 400);
    let no_id = ureq::post(format!("{base}/v2/entities"))
        .header("Content-Type", "application/json")
        .send(r#"{"id": "", "type": "X"}"#);
    assert_eq!(status(no_id), 400);
    assert_eq!(status(ureq::get(format!("{base}/v2/elsewhere")).call()), 404);
}

#[test]
fn subscriptions_notify_changed_attributes_only() {
    let (_broker, _server, client) = start(DispatchMode::Background);
    let (listener, rx) = NotificationListener::start("127.0.0.1:0").unwrap();
    client
        .upsert_entity(Entity::new("urn:Battery:home", "Battery").with_attr("soc", Attribute::infer(json!(50))))
        .unwrap();
    let id = client
        .create_subscription(Subscription {
            id: String::new(),
            entity_id_pattern: "urn:Battery:*".into(),
            watched_attrs: vec!["soc".into()],
            notify_url: listener.url(),
        })
        .unwrap();
    assert!(!id.is_empty());

    // unchanged value and an unwatched attribute: no notification
    client.update_attrs("urn:Battery:home", attrs(&[("soc", json!(50))])).unwrap();
    client.update_attrs("urn:Battery:home", attrs(&[("w", json!(10))])).unwrap();
    for v in [51, 52, 53] {
        client.update_attrs("urn:Battery:home", attrs(&[("soc", json!(v))])).unwrap();
    }
    let mut seen = Vec::new();
    while let Ok(n) = rx.recv_timeout(Duration::from_secs(2)) {
        assert_eq!(n.subscription_id, id);
        assert_eq!(n.data.len(), 1);
        let e = &n.data[0];
        assert_eq!(e.id, "urn:Battery:home");
        assert_eq!(e.attributes.keys().collect::<Vec<_>>(), ["soc"]);
        seen.push(e.attr("soc").unwrap().value.clone());
        if seen.len() == 3 {
            break;
        }
    }
    assert_eq!(seen, [json!(51), json!(52), json!(53)]);
    assert!(rx.recv_timeout(Duration::from_millis(200)).is_err());
}

#[test]
fn persistent_broker_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broker.json");
    let open = || {
        Broker::persistent(
            &path,
            Arc::new(SimClock::new(0)),
            Arc::new(HttpSink::default()),
            DispatchMode::Inline,
        )
        .unwrap()
    };
    {
        let broker = open();
        broker
            .upsert_entity(Entity::new("urn:Meter:grid", "Meter").with_attr("w", Attribute::infer(json!(-1200.5))))
            .unwrap();
        broker.flush().unwrap();
    }
    let broker = open();
    let server = BrokerServer::start(broker, "127.0.0.1:0").unwrap();
    let client = HttpBrokerClient::new(&server.base_url());
    assert_eq!(client.get_entity("urn:Meter:grid").unwrap().attr("w").unwrap().value, json!(-1200.5));
}
