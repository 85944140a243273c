//! Scenario execution through a running relay.
//!
//! Each configured sensor publishes over its own sensor session, the display
//! side runs on an hmd session and a console session marks the samples,
//! exactly as the live participants would. Positions are throttled by the
//! relay on its own clock, so the outcome is not bit-identical to the
//! in-process runner; samples are only taken at parked stops, where any
//! recent fix is equivalent.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::time::Duration;

use geoar_core::eval::{samples_csv_row, EvalError, ScenarioConfig, ScenarioOutput, ScenarioRunner};
use geoar_core::kml::encode_kml;
use geoar_core::protocol::{Command, Envelope, MsgType, Role, SampleMark};
use thiserror::Error;
use tokio::time::{Instant, MissedTickBehavior};

use crate::client::{ClientError, RelayClient, RelayReader, RelayWriter};

const TAIL_QUIET: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum E2eError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("relay refused {what}: {reason}")]
    Nacked { what: &'static str, reason: String },
    #[error("timed out waiting for {0}")]
    Timeout(String),
}

#[derive(Debug, Clone)]
pub struct RelayRunOptions {
    /// Wall-clock time per scenario step; zero runs as fast as possible.
    pub step_period: Duration,
    /// Upper bound on any single wait for a relayed envelope.
    pub wait: Duration,
}

impl RelayRunOptions {
    /// Steps paced `speedup` times faster than the scenario clock.
    pub fn accelerated(cfg: &ScenarioConfig, speedup: f64) -> Self {
        RelayRunOptions {
            step_period: Duration::from_secs_f64(cfg.dt_s / speedup),
            wait: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelayRunOutput {
    pub output: ScenarioOutput,
    /// Sample rows as received by the console, in arrival order.
    pub console_rows: Vec<String>,
    pub positions_sent: u64,
    pub positions_delivered: u64,
}

struct Sensor {
    id: String,
    reader: RelayReader,
    writer: RelayWriter,
}

struct Run {
    runner: ScenarioRunner,
    hmd: RelayReader,
    hmd_out: RelayWriter,
    console: RelayReader,
    console_out: RelayWriter,
    sensors: Vec<Sensor>,
    console_rows: Vec<String>,
    console_seq: u64,
    delivered: u64,
    /// Scenario timestamp of the newest fix delivered per sensor.
    newest_fix_ms: HashMap<String, u64>,
    wait: Duration,
}

/// Runs `cfg` end to end through the relay at `addr`.
pub async fn run_scenario_via_relay(
    cfg: &ScenarioConfig,
    addr: SocketAddr,
    opts: &RelayRunOptions,
) -> Result<RelayRunOutput, E2eError> {
    let runner = ScenarioRunner::new(cfg)?;
    let mut sensors = Vec::with_capacity(cfg.sensors.len());
    for s in &cfg.sensors {
        let (reader, writer) = RelayClient::connect_sensor(addr, &s.id).await?.split();
        sensors.push(Sensor {
            id: s.id.clone(),
            reader,
            writer,
        });
    }
    let (hmd, hmd_out) = RelayClient::connect(addr, Role::Hmd).await?.split();
    let (console, console_out) = RelayClient::connect(addr, Role::Console).await?.split();
    let mut run = Run {
        runner,
        hmd,
        hmd_out,
        console,
        console_out,
        sensors,
        console_rows: Vec::new(),
        console_seq: 0,
        delivered: 0,
        newest_fix_ms: HashMap::new(),
        wait: opts.wait,
    };

    run.command(&Command::Calibrate).await?;
    run.hmd_until("calibrate command", |env| {
        env.msg_type == MsgType::Command && matches!(Command::parse(&env.payload), Ok(Command::Calibrate))
    })
    .await?;

    let mut pace = tokio::time::interval(opts.step_period.max(Duration::from_micros(1)));
    // late ticks fire back to back so the average rate holds even when the
    // timer is coarser than the step period
    pace.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut sent = 0u64;
    let mut marks = 0usize;
    while !run.runner.is_finished() {
        if opts.step_period.is_zero() {
            tokio::task::yield_now().await;
        } else {
            pace.tick().await;
        }
        for msg in run.runner.advance()? {
            let env = Envelope::position(&msg.sensor_id, msg.seq, msg.timestamp_ms, encode_kml(&msg));
            let sensor = run
                .sensors
                .iter_mut()
                .find(|s| s.id == msg.sensor_id)
                .expect("messages come from configured sensors");
            sensor.writer.send(&env).await?;
            sent += 1;
        }
        run.drain().await?;

        if let Some(label) = run.runner.sample_due().map(str::to_owned) {
            let parked_ms = run.runner.sample_parked_since_ms().unwrap_or(0);
            run.command(&Command::MarkSample { label: label.clone() }).await?;
            run.hmd_until("sample mark", |env| {
                env.msg_type == MsgType::SampleMark
                    && serde_json::from_str::<SampleMark>(&env.payload).is_ok_and(|m| m.label == label)
            })
            .await?;
            // the mark and the positions travel on different sessions; sample
            // only once every sensor's newest fix shows the parked vehicle
            run.settle(&label, parked_ms).await?;
            let taken = run.runner.finish_step()?;
            let rows = taken.iter().map(samples_csv_row).collect::<Result<Vec<_>, _>>()?;
            let mut env = Envelope::hello(Role::Hmd);
            env.msg_type = MsgType::Metrics;
            env.seq = marks as u64 + 1;
            env.sent_ms = run.runner.now_ms();
            env.payload = rows.join("\n");
            run.hmd_out.send(&env).await?;
            marks += 1;
        } else {
            run.runner.finish_step()?;
        }
    }

    let deadline = Instant::now() + run.wait;
    while run.console_rows.len() < run.runner.samples().len() {
        if Instant::now() > deadline {
            return Err(E2eError::Timeout("sample results at the console".into()));
        }
        match run.console.recv_timeout(Duration::from_millis(20)).await? {
            Some(env) => run.console_envelope(env)?,
            None => continue,
        }
    }

    // positions of the final steps may still be in flight
    while let Some(env) = run.hmd.recv_timeout(TAIL_QUIET).await? {
        run.hmd_envelope(&env)?;
    }

    let delivered = run.delivered;
    let console_rows = run.console_rows;
    Ok(RelayRunOutput {
        output: run.runner.finish()?,
        console_rows,
        positions_sent: sent,
        positions_delivered: delivered,
    })
}

impl Run {
    async fn command(&mut self, cmd: &Command) -> Result<(), E2eError> {
        self.console_seq += 1;
        let env = Envelope::command(self.console_seq, self.runner.now_ms(), cmd);
        self.console_out.send(&env).await?;
        Ok(())
    }

    fn hmd_envelope(&mut self, env: &Envelope) -> Result<(), E2eError> {
        match env.msg_type {
            MsgType::Position => {
                let msg = env.decode_position().map_err(ClientError::from)?;
                self.runner.ingest(&msg)?;
                self.delivered += 1;
                self.newest_fix_ms.insert(msg.sensor_id, msg.timestamp_ms);
            }
            MsgType::Nack => {
                return Err(E2eError::Nacked {
                    what: "display",
                    reason: env.payload.clone(),
                })
            }
            _ => {}
        }
        Ok(())
    }

    fn console_envelope(&mut self, env: Envelope) -> Result<(), E2eError> {
        match (env.msg_type, env.role) {
            (MsgType::Metrics, Role::Hmd) => {
                self.console_rows.extend(env.payload.lines().map(str::to_owned));
            }
            (MsgType::Nack, _) => {
                return Err(E2eError::Nacked {
                    what: "console",
                    reason: env.payload,
                })
            }
            _ => {}
        }
        Ok(())
    }

    /// Handles everything already received, without waiting.
    async fn drain(&mut self) -> Result<(), E2eError> {
        while let Some(env) = self.hmd.try_recv()? {
            self.hmd_envelope(&env)?;
        }
        while let Some(env) = self.console.try_recv()? {
            self.console_envelope(env)?;
        }
        for s in &mut self.sensors {
            while let Some(env) = s.reader.try_recv()? {
                if env.msg_type == MsgType::Nack {
                    return Err(E2eError::Nacked {
                        what: "sensor",
                        reason: env.payload,
                    });
                }
            }
        }
        Ok(())
    }

    async fn settle(&mut self, label: &str, parked_ms: u64) -> Result<(), E2eError> {
        let deadline = Instant::now() + self.wait;
        loop {
            let lagging = self
                .sensors
                .iter()
                .any(|s| self.newest_fix_ms.get(&s.id).is_none_or(|&t| t < parked_ms));
            if !lagging {
                return Ok(());
            }
            let left = deadline.saturating_duration_since(Instant::now());
            let Some(env) = self.hmd.recv_timeout(left).await? else {
                return Err(E2eError::Timeout(format!("a fix of the parked vehicle at {label}")));
            };
            self.hmd_envelope(&env)?;
        }
    }

    /// Reads display traffic, ingesting positions, until `done` matches.
    async fn hmd_until(&mut self, what: &str, done: impl Fn(&Envelope) -> bool) -> Result<(), E2eError> {
        let deadline = Instant::now() + self.wait;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let Some(env) = self.hmd.recv_timeout(left).await? else {
                return Err(E2eError::Timeout(what.to_owned()));
            };
            if done(&env) {
                return Ok(());
            }
            self.hmd_envelope(&env)?;
        }
    }
}
