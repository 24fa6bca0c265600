//! Scenario runner: plant, device model, GOOSE, bridge, broker, HEMS and,
//! for the market scenario, the aggregator, all stepped on one clock.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::Receiver;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::config::{AggregatorConfig, RunConfig, TransportMode};
use super::report::{compute_metrics, write_csv, RunMetrics, StepRecord, TransportStats};
use super::HarnessError;
use crate::acsi::{AcsiClient, AcsiServer, LocalAcsiClient, ReportControl, ReportMode, TcpAcsiClient};
use crate::aggregator::{
    dispatch_time_s, read_rec_file, rec_profile_synth, Aggregator, Chain, ProsumerNode, RecProfile, Tx,
    INTERVAL_S,
};
use crate::bridges::{mapping, BridgeMapping, BridgeTasks, I61850Agent, NotificationListener};
use crate::broker::{Broker, BrokerServer, DispatchMode, HttpBrokerClient, NotificationBody, Router};
use crate::clock::{Clock, SimClock, SystemClock};
use crate::goose::{
    GoosePublisher, GooseSubscriber, InProcessBus, InProcessSender, PublisherTask, RetransmitSchedule,
    SubscriberTask, UdpMulticastSender,
};
use crate::hems::HemsAgent;
use crate::model::{build_home_model, DataValue, ModelChange, ObjectReference, SharedModel};
use crate::plant::{
    actuate, check_invariants, clearsky_weather, load_trace, mirror_sensed, mirror_state, panel_temperature,
    read_actuation, read_series_file, sense, PlantState, WeatherSample,
};

/// Data set with every measured or status value; reported to the bridge and
/// published on GOOSE.
pub const MEASUREMENT_DATASET: &str = "Measurements";
/// Data set with every command attribute; published on GOOSE.
pub const COMMAND_DATASET: &str = "Commands";

pub fn go_id(dataset: &str) -> String {
    format!("HEMS/LLN0$GO${dataset}")
}

fn us(t_s: f64) -> u64 {
    (t_s * 1e6).round() as u64
}

/// Exogenous inputs, one sample per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub weather: Vec<WeatherSample>,
    pub load_w: Vec<f64>,
}

pub fn build_inputs(cfg: &RunConfig) -> Result<Inputs, HarnessError> {
    let n = cfg.steps();
    let dt = cfg.plant.step_s;
    let times: Vec<f64> = (0..n).map(|k| cfg.start_s + k as f64 * dt).collect();
    let tr = &cfg.traces;
    let weather = match &tr.irradiance_csv {
        None => clearsky_weather(&tr.clear_sky, cfg.start_s, dt, n),
        Some(path) => {
            let irr = read_series_file(path)?;
            let temp = tr.panel_temp_csv.as_deref().map(read_series_file).transpose()?;
            times
                .iter()
                .map(|&t| {
                    let g = irr.sample(t);
                    WeatherSample {
                        t_s: t,
                        irr_wm2: g,
                        pnl_tmp_c: temp
                            .as_ref()
                            .map_or_else(|| panel_temperature(tr.clear_sky.ambient_c, g), |s| s.sample(t)),
                    }
                })
                .collect()
        }
    };
    let load_w = match &tr.load_csv {
        None => load_trace(&tr.load, cfg.start_s, dt, n, cfg.seed),
        Some(path) => {
            let s = read_series_file(path)?;
            times.iter().map(|&t| s.sample(t)).collect()
        }
    };
    Ok(Inputs { weather, load_w })
}

pub struct RunOutcome {
    pub records: Vec<StepRecord>,
    pub metrics: RunMetrics,
    /// Ledger of the market scenario.
    pub chain: Option<Chain>,
}

/// Runs a scenario. With `out_dir`, writes `steps.csv`, `metrics.json` and,
/// for the market scenario, `ledger.log` there.
pub fn run_scenario(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let inputs = build_inputs(cfg)?;
    let plant = &cfg.plant;
    let dt = plant.step_s;
    let clock = SimClock::new(us(cfg.start_s));
    let mut server_model = build_home_model(plant).map_err(|e| HarnessError::Config(e.to_string()))?;
    server_model.set_clock(Arc::new(clock.clone()));
    let model = SharedModel::new(server_model);
    define_datasets(&model)?;

    let mut market = match (&cfg.aggregator, cfg.scenario) {
        (Some(agg), crate::hems::Scenario::Market) => Some(MarketSide::new(
            agg,
            cfg,
            out_dir.map(|d| d.join("ledger.log")).as_deref(),
        )?),
        _ => None,
    };

    let mut state = PlantState::initial(plant);
    mirror_state(&model, &state)?;

    let mut wiring = match cfg.transports.mode {
        TransportMode::InProcess => Wiring::InProcess(Box::new(InProcessWiring::new(&model, &clock)?)),
        TransportMode::Network => Wiring::Network(Box::new(NetworkWiring::new(cfg, &model)?)),
    };
    let client: Box<dyn AcsiClient> = match &wiring {
        Wiring::InProcess(_) => Box::new(LocalAcsiClient::new(model.clone())),
        Wiring::Network(w) => Box::new(TcpAcsiClient::connect(w.acsi.local_addr())?),
    };
    let mut hems = HemsAgent::new(client, cfg.scenario, plant.clone(), cfg.preferences.clone());

    let pace = cfg.transports.mode == TransportMode::Network && cfg.transports.wall_clock;
    let origin = Instant::now();
    let n = cfg.steps();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let t = cfg.start_s + i as f64 * dt;
        let now_us = us(t);
        clock.set_us(now_us);
        if pace {
            let slot = origin + Duration::from_secs_f64(i as f64 * dt);
            if let Some(wait) = slot.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        let p_ref = match &mut market {
            Some(m) => m.p_ref_at(t, now_us)?,
            None => cfg.p_ref_w,
        };
        let sensed = sense(&state, inputs.weather[i], inputs.load_w[i], plant);
        mirror_sensed(&model, &sensed, plant)?;
        let step = hems.step(t, p_ref)?;
        let act = read_actuation(&model)?;
        state = actuate(&state, &sensed, &act, plant);
        check_invariants(&state, plant, t)?;
        mirror_state(&model, &state)?;
        wiring.after_step(&model, now_us);

        let rec = StepRecord {
            t_s: t,
            p_load_w: state.p_load_w,
            p_pv_w: state.p_pv_w,
            p_pv_mppt_w: state.p_pv_mppt_w,
            p_batt_w: state.p_batt_w,
            p_grid_w: state.p_grid_w,
            p_ref_w: p_ref,
            soc: state.soc,
            switch_on: state.switch_on,
            p_load_base_w: sensed.p_load_base_w,
            batt_cmd_w: act.batt_setpoint_w,
            inv_target_w: act.inv_target_w,
            measured: step.measured,
            market: step.market,
        };
        if let Some(m) = &mut market {
            m.record(&rec, dt);
        }
        records.push(rec);
    }
    let end_us = us(cfg.start_s + n as f64 * dt);
    clock.set_us(end_us);

    let mut metrics = compute_metrics(&records, dt, plant.soc_init);
    let chain = match market {
        Some(m) => Some(m.finish(end_us)?),
        None => None,
    };
    metrics.transport = wiring.stats();
    if let Some(c) = &chain {
        metrics.transport.ledger_blocks = c.len() as u64;
    }
    drop(hems);
    drop(wiring);

    if let Some(dir) = out_dir {
        let mut csv = Vec::new();
        write_csv(&records, &mut csv)?;
        std::fs::write(dir.join("steps.csv"), csv)?;
        let json = serde_json::to_string_pretty(&metrics).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("metrics.json"), json + "\n")?;
    }
    Ok(RunOutcome { records, metrics, chain })
}

fn define_datasets(model: &SharedModel) -> Result<(), HarnessError> {
    let refs = model.lock().references();
    let (commands, measurements): (Vec<ObjectReference>, Vec<ObjectReference>) = refs
        .into_iter()
        .partition(|r| mapping::is_command_attribute(&mapping::attribute_name(r)));
    model.define_dataset(MEASUREMENT_DATASET, measurements)?;
    model.define_dataset(COMMAND_DATASET, commands)?;
    Ok(())
}

fn schedule() -> RetransmitSchedule {
    RetransmitSchedule::doubling(4, 1000)
}

enum Wiring {
    InProcess(Box<InProcessWiring>),
    Network(Box<NetworkWiring>),
}

impl Wiring {
    fn after_step(&mut self, model: &SharedModel, now_us: u64) {
        if let Wiring::InProcess(w) = self {
            w.pump(model, now_us);
        }
    }

    fn stats(&self) -> TransportStats {
        match self {
            Wiring::InProcess(w) => w.stats(),
            Wiring::Network(w) => w.stats(),
        }
    }
}

/// Same components as the network wiring, driven synchronously after each
/// step on simulation time.
struct InProcessWiring {
    bridge: I61850Agent<LocalAcsiClient, Broker>,
    changes: Receiver<ModelChange>,
    notifications: Receiver<NotificationBody>,
    publishers: Vec<(GoosePublisher<InProcessSender>, Vec<ObjectReference>)>,
    frames: Receiver<Vec<u8>>,
    subscriber: GooseSubscriber,
    received: Arc<AtomicU64>,
}

const LOCAL_NOTIFY_URL: &str = "http://bridge.in-process/notify";

impl InProcessWiring {
    fn new(model: &SharedModel, clock: &SimClock) -> Result<Self, HarnessError> {
        let router = Arc::new(Router::new());
        let notifications = router.register(LOCAL_NOTIFY_URL);
        let broker = Broker::in_memory(Arc::new(clock.clone()), router, DispatchMode::Inline);
        let mapping = BridgeMapping::new(model.lock().references())?;
        let mut bridge = I61850Agent::new(LocalAcsiClient::new(model.clone()), broker, mapping);
        bridge.initial_sync()?;
        bridge.subscribe_commands(LOCAL_NOTIFY_URL)?;
        let changes = model.watch();

        let bus = InProcessBus::new();
        let frames = bus.subscribe();
        let mut subscriber = GooseSubscriber::new();
        let received = Arc::new(AtomicU64::new(0));
        let mut publishers = Vec::new();
        for (app_id, name) in [(1u16, MEASUREMENT_DATASET), (2, COMMAND_DATASET)] {
            let members = model.dataset(name).expect("defined above").members;
            publishers.push((GoosePublisher::new(app_id, go_id(name), schedule(), bus.sender()), members));
            let count = received.clone();
            subscriber.subscribe(&go_id(name), move |_| {
                count.fetch_add(1, Ordering::Relaxed);
            });
        }
        let mut w = Self {
            bridge,
            changes,
            notifications,
            publishers,
            frames,
            subscriber,
            received,
        };
        w.pump(model, clock.now_us());
        Ok(w)
    }

    fn pump(&mut self, model: &SharedModel, now_us: u64) {
        // latest value per path, in path order
        let mut latest: BTreeMap<ObjectReference, DataValue> = BTreeMap::new();
        for c in self.changes.try_iter() {
            if c.value_changed {
                latest.insert(c.reference, c.value);
            }
        }
        self.bridge.forward(latest.iter());
        for n in self.notifications.try_iter() {
            self.bridge.on_notification(&n);
        }

        for (publisher, members) in &mut self.publishers {
            while let Some(due) = publisher.next_due_us().filter(|d| *d <= now_us) {
                if let Err(e) = publisher.heartbeat_tick(due) {
                    log::error!("goose {}: {e}", publisher.go_id());
                    break;
                }
            }
            let entries: Option<Vec<DataValue>> = {
                let m = model.lock();
                members.iter().map(|r| m.read(r).ok().map(|(v, _)| v)).collect()
            };
            if let Some(entries) = entries {
                if let Err(e) = publisher.update(entries, now_us) {
                    log::error!("goose {}: {e}", publisher.go_id());
                }
            }
        }
        for bytes in self.frames.try_iter() {
            if let Err(e) = self.subscriber.on_bytes(&bytes, now_us) {
                log::warn!("goose decode: {e}");
            }
        }
    }

    fn stats(&self) -> TransportStats {
        let c = self.bridge.counters();
        TransportStats {
            goose_frames_sent: self.publishers.iter().map(|(p, _)| p.frames_sent()).sum(),
            goose_states_received: self.received.load(Ordering::Relaxed),
            bridge_attrs_forwarded: c.attrs_forwarded,
            bridge_commands_written: c.commands_written,
            ledger_blocks: 0,
        }
    }
}

type NetBridge = I61850Agent<TcpAcsiClient, HttpBrokerClient>;

/// Real sockets on the configured interface. Fields drop in declaration
/// order, so consumers stop before the services they talk to.
struct NetworkWiring {
    _tasks: BridgeTasks,
    agent: Arc<Mutex<NetBridge>>,
    _publishers: Vec<PublisherTask>,
    _subscriber_task: SubscriberTask,
    received: Arc<AtomicU64>,
    _listener: NotificationListener,
    _broker_server: BrokerServer,
    acsi: AcsiServer,
}

impl NetworkWiring {
    fn new(cfg: &RunConfig, model: &SharedModel) -> Result<Self, HarnessError> {
        let tc = &cfg.transports;
        let acsi = AcsiServer::serve(model.clone(), (tc.bind, tc.acsi_port))?;
        let broker = Broker::in_memory(
            Arc::new(SystemClock),
            Arc::new(Router::new()),
            DispatchMode::Background,
        );
        let broker_server = BrokerServer::start(broker, (tc.bind, tc.broker_port))?;
        let (listener, notifications) = NotificationListener::start((tc.bind, 0))?;

        let mut client = TcpAcsiClient::connect(acsi.local_addr())?;
        client.subscribe_report(ReportControl {
            dataset: MEASUREMENT_DATASET.into(),
            mode: ReportMode::OnChange,
        })?;
        let reports = client.take_reports().expect("fresh client");
        let mapping = BridgeMapping::new(model.lock().references())?;
        let mut agent = I61850Agent::new(client, HttpBrokerClient::new(&broker_server.base_url()), mapping);
        agent.initial_sync()?;
        agent.subscribe_commands(&listener.url())?;
        let agent = Arc::new(Mutex::new(agent));
        let tasks = BridgeTasks::spawn(agent.clone(), reports, notifications);

        let mc = tc.multicast();
        let subscriber = Arc::new(Mutex::new(GooseSubscriber::new()));
        let received = Arc::new(AtomicU64::new(0));
        let mut publishers = Vec::new();
        for (app_id, name) in [(1u16, MEASUREMENT_DATASET), (2, COMMAND_DATASET)] {
            let count = received.clone();
            subscriber
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .subscribe(&go_id(name), move |_| {
                    count.fetch_add(1, Ordering::Relaxed);
                });
            let sender = UdpMulticastSender::new(&mc)?;
            let publisher = GoosePublisher::new(app_id, go_id(name), schedule(), sender);
            publishers.push(
                PublisherTask::spawn_for_dataset(publisher, model.clone(), name, Arc::new(SystemClock))
                    .expect("data set defined"),
            );
        }
        let subscriber_task = SubscriberTask::spawn(&mc, subscriber)?;
        Ok(Self {
            _tasks: tasks,
            agent,
            _publishers: publishers,
            _subscriber_task: subscriber_task,
            received,
            _listener: listener,
            _broker_server: broker_server,
            acsi,
        })
    }

    fn stats(&self) -> TransportStats {
        let c = self.agent.lock().unwrap_or_else(|e| e.into_inner()).counters();
        TransportStats {
            // the publisher threads do not report their frame counts
            goose_frames_sent: 0,
            goose_states_received: self.received.load(Ordering::Relaxed),
            bridge_attrs_forwarded: c.attrs_forwarded,
            bridge_commands_written: c.commands_written,
            ledger_blocks: 0,
        }
    }
}

/// Aggregator plus this home's ledger reader.
struct MarketSide {
    aggregator: Aggregator,
    node: ProsumerNode,
    prosumer_id: String,
    cap_w: f64,
    lead_s: f64,
    next_dispatch: u32,
    last_interval: u32,
    /// Interval being measured: index, error kWh, grid sum, samples.
    acc: Option<(u32, f64, f64, u32)>,
}

impl MarketSide {
    fn new(agg: &AggregatorConfig, cfg: &RunConfig, ledger: Option<&Path>) -> Result<Self, HarnessError> {
        let first = (cfg.start_s / INTERVAL_S).floor() as u32;
        let end_s = cfg.start_s + cfg.duration_s;
        let last_interval = ((end_s / INTERVAL_S).ceil() as u32).saturating_sub(1).max(first);
        let rec = match &agg.rec_csv {
            Some(path) => read_rec_file(path)?,
            None => rec_profile_synth(&agg.rec_synth, last_interval as usize + 1)
                .map_err(|e| HarnessError::Config(format!("[aggregator.rec_synth] {e}")))?,
        };
        let rec = RecProfile { interval_s: INTERVAL_S, ..rec };
        let mut chain = Chain::new(us(cfg.start_s));
        if let Some(path) = ledger {
            chain.persist_to(path)?;
        }
        Ok(Self {
            aggregator: Aggregator::new(chain, rec, agg.target_w.clone(), agg.peers.clone()),
            node: ProsumerNode::new(agg.prosumer_id.clone()),
            prosumer_id: agg.prosumer_id.clone(),
            cap_w: cfg.preferences.cap_w,
            lead_s: agg.lead_s,
            next_dispatch: first,
            last_interval,
            acc: None,
        })
    }

    /// Dispatches every interval that is due at `t_s`, then returns this
    /// home's reference for the interval containing `t_s`.
    fn p_ref_at(&mut self, t_s: f64, now_us: u64) -> Result<f64, HarnessError> {
        while self.next_dispatch <= self.last_interval && dispatch_time_s(self.next_dispatch, self.lead_s) <= t_s {
            let k = self.next_dispatch;
            self.aggregator.submit(Tx::CapacityReport {
                prosumer_id: self.prosumer_id.clone(),
                interval_idx: k,
                p_min_w: -self.cap_w,
                p_max_w: self.cap_w,
                expected_profile_w: Vec::new(),
            });
            self.aggregator.run_interval(k, now_us)?;
            self.node
                .scan(self.aggregator.chain().blocks())
                .map_err(|f| HarnessError::Invariant(format!("ledger as seen by {}: {f}", self.prosumer_id)))?;
            self.next_dispatch += 1;
        }
        let k = (t_s / INTERVAL_S).floor() as u32;
        self.node.setpoint(k).ok_or_else(|| {
            HarnessError::Invariant(format!("no setpoint for interval {k} at t={t_s}"))
        })
    }

    fn record(&mut self, r: &StepRecord, dt: f64) {
        let k = (r.t_s / INTERVAL_S).floor() as u32;
        if let Some((idx, ..)) = self.acc {
            if idx != k {
                self.report();
            }
        }
        let acc = self.acc.get_or_insert((k, 0.0, 0.0, 0));
        acc.1 += (r.p_grid_w - r.p_ref_w).abs() * dt / 3.6e6;
        acc.2 += r.p_grid_w;
        acc.3 += 1;
    }

    fn report(&mut self) {
        if let Some((k, err, sum, n)) = self.acc.take() {
            self.aggregator.submit(Tx::MeasurementReport {
                prosumer_id: self.prosumer_id.clone(),
                interval_idx: k,
                energy_error_kwh: err,
                mean_p_grid_w: sum / f64::from(n),
            });
        }
    }

    fn finish(mut self, now_us: u64) -> Result<Chain, HarnessError> {
        self.report();
        self.aggregator.flush(now_us)?;
        Ok(self.aggregator.into_chain())
    }
}
