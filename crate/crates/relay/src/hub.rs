//! Shared relay state: session registry, throttle clocks, sequence tracking
//! and metrics. Every mutation happens under one mutex and no lock is held
//! across an await, so ingest never waits on a slow subscriber.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use geoar_core::protocol::{Command, Envelope, MsgType, ProtocolError, Role, SampleMark, Throttle};
use serde::Serialize;
use tokio::sync::{mpsc, Notify};

use crate::RelayConfig;

const LATENCY_WINDOW: usize = 4096;

pub type SessionId = u64;

/// One line queued for a session's writer.
#[derive(Debug, Clone)]
pub struct Outbound {
    pub line: Arc<str>,
    /// Set for relayed positions; the writer reports ingest-to-write latency.
    pub ingested_at: Option<Instant>,
}

struct Session {
    role: Role,
    tx: mpsc::Sender<Outbound>,
    kill: Arc<Notify>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SensorCounters {
    pub accepted: u64,
    pub dropped: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionInfo {
    pub id: SessionId,
    pub role: Role,
    pub queue_depth: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    pub sensors: BTreeMap<String, SensorCounters>,
    pub sessions: Vec<SessionInfo>,
    pub latency: LatencySummary,
    pub slow_disconnects: u64,
}

impl MetricsSnapshot {
    pub fn totals(&self) -> SensorCounters {
        self.sensors.values().fold(SensorCounters::default(), |a, c| SensorCounters {
            accepted: a.accepted + c.accepted,
            dropped: a.dropped + c.dropped,
            rejected: a.rejected + c.rejected,
        })
    }
}

/// Result of handling one client envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// Broadcast to this many subscribers.
    Relayed(usize),
    /// Over the sensor's rate; counted and discarded.
    Dropped,
    /// Client error; the reason goes back as a NACK.
    Rejected(String),
}

fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

struct State {
    sessions: BTreeMap<SessionId, Session>,
    next_id: SessionId,
    throttle: Throttle,
    last_seq: HashMap<(Role, String), u64>,
    counters: BTreeMap<String, SensorCounters>,
    latency_us: VecDeque<u64>,
    slow_disconnects: u64,
    server_seq: u64,
}

pub struct Hub {
    state: Mutex<State>,
    started: Instant,
    queue_bound: usize,
}

impl Hub {
    pub fn new(config: &RelayConfig) -> Self {
        Hub {
            state: Mutex::new(State {
                sessions: BTreeMap::new(),
                next_id: 1,
                throttle: Throttle::new(config.throttle.clone()),
                last_seq: HashMap::new(),
                counters: BTreeMap::new(),
                latency_us: VecDeque::with_capacity(LATENCY_WINDOW),
                slow_disconnects: 0,
                server_seq: 0,
            }),
            started: Instant::now(),
            queue_bound: config.queue_bound.max(1),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        // a panicking session task must not take the relay down with it
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Monotone server clock.
    pub fn now(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn now_ms(&self) -> u64 {
        self.now().as_millis() as u64
    }

    pub fn register(&self, role: Role) -> (SessionId, mpsc::Receiver<Outbound>, Arc<Notify>) {
        let (tx, rx) = mpsc::channel(self.queue_bound);
        let kill = Arc::new(Notify::new());
        let mut st = self.lock();
        let id = st.next_id;
        st.next_id += 1;
        st.sessions.insert(
            id,
            Session {
                role,
                tx,
                kill: kill.clone(),
            },
        );
        (id, rx, kill)
    }

    pub fn unregister(&self, id: SessionId) {
        self.lock().sessions.remove(&id);
    }

    pub fn session_count(&self, role: Role) -> usize {
        self.lock().sessions.values().filter(|s| s.role == role).count()
    }

    /// Server-originated envelope (ACK, NACK, SAMPLE_MARK, METRICS) as a line.
    pub fn server_line(&self, msg_type: MsgType, payload: impl Into<String>) -> Arc<str> {
        let seq = {
            let mut st = self.lock();
            st.server_seq += 1;
            st.server_seq
        };
        Envelope::server(msg_type, seq, self.now_ms(), payload).to_line().into()
    }

    /// Queues a line for one session. A full queue disconnects it.
    pub fn send_to(&self, id: SessionId, line: Arc<str>) -> bool {
        let mut st = self.lock();
        Self::enqueue(&mut st, id, Outbound { line, ingested_at: None })
    }

    fn enqueue(st: &mut State, id: SessionId, item: Outbound) -> bool {
        let Some(s) = st.sessions.get(&id) else {
            return false;
        };
        match s.tx.try_send(item) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                tracing::warn!(session = id, "outbound queue full, disconnecting");
                let s = st.sessions.remove(&id).expect("session present");
                s.kill.notify_one();
                st.slow_disconnects += 1;
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => {
                st.sessions.remove(&id);
                false
            }
        }
    }

    fn fan_out(st: &mut State, roles: &[Role], line: &Arc<str>, ingested_at: Option<Instant>) -> usize {
        let targets: Vec<SessionId> = st
            .sessions
            .iter()
            .filter(|(_, s)| roles.contains(&s.role))
            .map(|(id, _)| *id)
            .collect();
        targets
            .into_iter()
            .filter(|id| {
                Self::enqueue(
                    st,
                    *id,
                    Outbound {
                        line: line.clone(),
                        ingested_at,
                    },
                )
            })
            .count()
    }

    /// Broadcasts a server line to every session in `roles`.
    pub fn broadcast(&self, roles: &[Role], line: Arc<str>) -> usize {
        let mut st = self.lock();
        Self::fan_out(&mut st, roles, &line, None)
    }

    /// Validates, throttles and relays one POSITION envelope. `raw` is the
    /// line as received and is forwarded unchanged.
    pub fn ingest_position(&self, env: &Envelope, raw: &str) -> Verdict {
        let ingested_at = Instant::now();
        let Some(sensor_id) = env.sensor_id.clone() else {
            return Verdict::Rejected(ProtocolError::MissingSensorId.to_string());
        };
        // decode outside the lock
        let decoded = env.decode_position();
        let mut st = self.lock();
        let reject = |st: &mut State, reason: String| {
            st.counters.entry(sensor_id.clone()).or_default().rejected += 1;
            Verdict::Rejected(reason)
        };
        let msg = match decoded {
            Ok(m) => m,
            Err(e) => return reject(&mut st, e.to_string()),
        };
        if msg.sensor_id != sensor_id {
            return reject(
                &mut st,
                format!("payload sensor_id {:?} does not match envelope {sensor_id:?}", msg.sensor_id),
            );
        }
        let key = (env.role, sensor_id.clone());
        if let Some(&prev) = st.last_seq.get(&key) {
            if env.seq <= prev {
                return reject(&mut st, format!("seq {} not above {prev}", env.seq));
            }
        }
        st.last_seq.insert(key, env.seq);
        let now = self.now();
        if !st.throttle.admit(&sensor_id, now) {
            st.counters.entry(sensor_id).or_default().dropped += 1;
            return Verdict::Dropped;
        }
        st.counters.entry(sensor_id).or_default().accepted += 1;
        let line: Arc<str> = Arc::from(raw.trim_end_matches(['\r', '\n']));
        Verdict::Relayed(Self::fan_out(&mut st, &[Role::Hmd, Role::Console], &line, Some(ingested_at)))
    }

    /// Routes a console COMMAND: every command goes to sensor sessions
    /// (the vehicle simulators); `calibrate` also goes to display and
    /// console sessions, and `mark_sample` additionally produces a
    /// SAMPLE_MARK for them.
    pub fn route_command(&self, env: &Envelope, raw: &str) -> Verdict {
        let cmd = match Command::parse(&env.payload) {
            Ok(c) => c,
            Err(e) => return Verdict::Rejected(e.to_string()),
        };
        let line: Arc<str> = Arc::from(raw.trim_end_matches(['\r', '\n']));
        let mark = match &cmd {
            Command::MarkSample { label } => Some(self.server_line(
                MsgType::SampleMark,
                serde_json::to_string(&SampleMark { label: label.clone() }).expect("serializable"),
            )),
            _ => None,
        };
        let mut st = self.lock();
        let mut n = Self::fan_out(&mut st, &[Role::Sensor], &line, None);
        if matches!(cmd, Command::Calibrate) {
            n += Self::fan_out(&mut st, &[Role::Hmd, Role::Console], &line, None);
        }
        if let Some(mark) = mark {
            n += Self::fan_out(&mut st, &[Role::Hmd, Role::Console], &mark, None);
        }
        Verdict::Relayed(n)
    }

    /// Console SAMPLE_MARK: forwarded to display and console sessions.
    pub fn route_sample_mark(&self, env: &Envelope, raw: &str) -> Verdict {
        if let Err(e) = serde_json::from_str::<SampleMark>(&env.payload) {
            return Verdict::Rejected(format!("invalid SAMPLE_MARK payload: {e}"));
        }
        let line: Arc<str> = Arc::from(raw.trim_end_matches(['\r', '\n']));
        let mut st = self.lock();
        Verdict::Relayed(Self::fan_out(&mut st, &[Role::Hmd, Role::Console], &line, None))
    }

    /// Display METRICS (per-location sample results): forwarded to consoles.
    pub fn route_hmd_metrics(&self, raw: &str) -> Verdict {
        let line: Arc<str> = Arc::from(raw.trim_end_matches(['\r', '\n']));
        let mut st = self.lock();
        Verdict::Relayed(Self::fan_out(&mut st, &[Role::Console], &line, None))
    }

    pub fn record_latency(&self, latency: Duration) {
        let mut st = self.lock();
        if st.latency_us.len() == LATENCY_WINDOW {
            st.latency_us.pop_front();
        }
        st.latency_us.push_back(latency.as_micros() as u64);
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let st = self.lock();
        let mut lat: Vec<u64> = st.latency_us.iter().copied().collect();
        lat.sort_unstable();
        MetricsSnapshot {
            sensors: st.counters.clone(),
            sessions: st
                .sessions
                .iter()
                .map(|(id, s)| SessionInfo {
                    id: *id,
                    role: s.role,
                    queue_depth: self.queue_bound - s.tx.capacity(),
                })
                .collect(),
            latency: LatencySummary {
                count: lat.len(),
                p50_us: nearest_rank(&lat, 0.50),
                p99_us: nearest_rank(&lat, 0.99),
                max_us: lat.last().copied().unwrap_or(0),
            },
            slow_disconnects: st.slow_disconnects,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use geoar_core::kml::encode_kml;
    use geoar_core::protocol::ThrottlePolicy;
    use geoar_core::sim::{FixQuality, SensorKind, SensorMessage};
    use geoar_core::GeoPoint;

    fn position(id: &str, seq: u64) -> (Envelope, String) {
        let msg = SensorMessage {
            sensor_id: id.into(),
            kind: SensorKind::Rtk,
            seq,
            timestamp_ms: seq,
            position: GeoPoint::new(49.5, 6.36).unwrap(),
            fix_quality: FixQuality::Fixed,
        };
        let env = Envelope::position(id, seq, seq, encode_kml(&msg));
        let line = env.to_line();
        (env, line)
    }

    fn hub(interval: u64) -> Hub {
        Hub::new(&RelayConfig {
            throttle: ThrottlePolicy::uniform(interval),
            queue_bound: 4,
            ..RelayConfig::default()
        })
    }

    #[test]
    fn fresh_hub_has_zero_metrics() {
        let m = hub(100).metrics();
        assert_eq!(m.totals(), SensorCounters::default());
        assert!(m.sessions.is_empty());
        assert_eq!(m.latency, LatencySummary::default());
    }

    #[test]
    fn no_subscribers_is_not_an_error() {
        let h = hub(0);
        let (env, line) = position("a", 1);
        assert_eq!(h.ingest_position(&env, &line), Verdict::Relayed(0));
    }

    #[test]
    fn positions_reach_every_subscriber_unchanged() {
        let h = hub(0);
        let mut rxs: Vec<_> = (0..3).map(|_| h.register(Role::Hmd).1).collect();
        let (_, _k, _) = h.register(Role::Sensor);
        let (env, line) = position("a", 1);
        assert_eq!(h.ingest_position(&env, &line), Verdict::Relayed(3));
        for rx in &mut rxs {
            assert_eq!(&*rx.try_recv().unwrap().line, line.as_str());
        }
    }

    #[test]
    fn stale_seq_and_bad_payload_are_rejected() {
        let h = hub(0);
        let (env, line) = position("a", 5);
        h.ingest_position(&env, &line);
        let (env, line) = position("a", 5);
        assert!(matches!(h.ingest_position(&env, &line), Verdict::Rejected(_)));
        let mut bad = position("a", 6).0;
        bad.payload = "<kml>".into();
        assert!(matches!(h.ingest_position(&bad, &bad.to_line()), Verdict::Rejected(_)));
        let c = h.metrics().sensors["a"];
        assert_eq!((c.accepted, c.rejected), (1, 2));
    }

    #[test]
    fn full_queue_disconnects_only_that_session() {
        let h = hub(0);
        let (slow, _slow_rx, kill) = h.register(Role::Hmd);
        let (_, mut fast_rx, _) = h.register(Role::Hmd);
        let waiter = kill.notified();
        for seq in 1..=6 {
            let (env, line) = position("a", seq);
            h.ingest_position(&env, &line);
            while fast_rx.try_recv().is_ok() {}
        }
        assert_eq!(h.session_count(Role::Hmd), 1);
        assert_eq!(h.metrics().slow_disconnects, 1);
        assert!(!h.send_to(slow, "x".into()));
        // notify_one stores a permit, so a late waiter still wakes
        futures_util::FutureExt::now_or_never(waiter).expect("kill signalled");
    }

    #[test]
    fn commands_route_by_kind() {
        let h = hub(0);
        let (_, mut sensor, _) = h.register(Role::Sensor);
        let (_, mut hmd, _) = h.register(Role::Hmd);
        let send = |c: Command| {
            let env = Envelope::command(1, 0, &c);
            h.route_command(&env, &env.to_line())
        };
        assert_eq!(send(Command::Pause), Verdict::Relayed(1));
        assert!(hmd.try_recv().is_err());
        assert_eq!(send(Command::Calibrate), Verdict::Relayed(2));
        assert_eq!(send(Command::MarkSample { label: "L3".into() }), Verdict::Relayed(2));
        let _ = hmd.try_recv().unwrap();
        let mark = Envelope::from_line(&hmd.try_recv().unwrap().line).unwrap();
        assert_eq!(mark.msg_type, MsgType::SampleMark);
        assert_eq!(mark.payload, r#"{"label":"L3"}"#);
        assert_eq!(std::iter::from_fn(|| sensor.try_recv().ok()).count(), 3);

        let mut env = Envelope::command(2, 0, &Command::Pause);
        env.payload = r#"{"cmd":"fly"}"#.into();
        assert!(matches!(h.route_command(&env, &env.to_line()), Verdict::Rejected(_)));
    }

    #[test]
    fn latency_percentiles() {
        let h = hub(0);
        for us in 1..=100 {
            h.record_latency(Duration::from_micros(us));
        }
        let l = h.metrics().latency;
        assert_eq!((l.count, l.p50_us, l.p99_us, l.max_us), (100, 50, 99, 100));
    }
}
