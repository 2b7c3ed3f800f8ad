//! JSON control protocol over WebSocket.
//!
//! Every message carries `"v": 1`. Requests name a command in `cmd`; the
//! server answers each with a `reply` and, once subscribed, pushes
//! `snapshot` messages at the requested rate. An optional request `id` is
//! echoed back.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam::channel::{unbounded, Receiver, Sender};
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::engine::{ControlContext, ControlMsg, EngineClient, StateSnapshot, ValidationFailed, PROTOCOL_VERSION};
use crate::mapping::MappingRoute;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum ApiCommand {
    GetState,
    SetCollaborator { x: f64, y: f64, z: f64 },
    SetRoute { route: MappingRoute },
    DeleteRoute { sink: String },
    SetParam { address: String, value: f64 },
    SetMix { value: f64 },
    /// Snapshot stream rate in Hz; 0 stops the stream.
    SubscribeMeters { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    /// `ValidationFailed`, `MalformedCommand` or `UnsupportedVersion`.
    pub kind: String,
    pub field: String,
    pub reason: String,
}

impl From<ValidationFailed> for ApiError {
    fn from(v: ValidationFailed) -> Self {
        Self {
            kind: "ValidationFailed".into(),
            field: v.field,
            reason: v.reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub ok: bool,
    /// Absent for requests that never reached the engine.
    pub seq: Option<u64>,
    /// Control tick at which the command applied.
    pub tick: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

impl Reply {
    pub fn ok(id: Option<Value>, seq: u64, tick: u64, result: Value) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: "reply".into(),
            id,
            ok: true,
            seq: Some(seq),
            tick: Some(tick),
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: Option<Value>, seq: Option<u64>, tick: Option<u64>, error: ApiError) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: "reply".into(),
            id,
            ok: false,
            seq,
            tick,
            result: None,
            error: Some(error),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub snapshot: StateSnapshot,
}

impl StreamMessage {
    pub fn new(snapshot: StateSnapshot) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: "snapshot".into(),
            snapshot,
        }
    }
}

/// A decoded request, or the error reply it earned.
pub fn parse_request(text: &str) -> Result<(Option<Value>, ApiCommand), Box<Reply>> {
    let malformed = |id: Option<Value>, field: &str, reason: String| {
        Box::new(Reply::err(
            id,
            None,
            None,
            ApiError {
                kind: "MalformedCommand".into(),
                field: field.into(),
                reason,
            },
        ))
    };
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(None, "", e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(malformed(None, "", "request must be a JSON object".into()));
    };
    let id = obj.remove("id");
    match obj.remove("v") {
        Some(v) if v.as_u64() == Some(PROTOCOL_VERSION as u64) => {}
        Some(v) => {
            return Err(Box::new(Reply::err(
                id,
                None,
                None,
                ApiError {
                    kind: "UnsupportedVersion".into(),
                    field: "v".into(),
                    reason: format!("protocol version {v} is not supported; use {PROTOCOL_VERSION}"),
                },
            )))
        }
        None => return Err(malformed(id, "v", "missing protocol version".into())),
    }
    let field = if obj.contains_key("cmd") { "" } else { "cmd" };
    match serde_json::from_value::<ApiCommand>(Value::Object(obj)) {
        Ok(cmd) => Ok((id, cmd)),
        Err(e) => Err(malformed(id, field, e.to_string())),
    }
}

/// Validate `rate` against the control rate.
pub fn check_meter_rate(rate: f64, control_rate: u32) -> Result<f64, ValidationFailed> {
    if rate.is_finite() && rate >= 0.0 && rate <= control_rate as f64 {
        Ok(rate)
    } else {
        Err(ValidationFailed::new(
            "rate",
            format!("must be in [0, {control_rate}] Hz"),
        ))
    }
}

/// Route a command to the owning module. Returns the normalized accepted value.
pub fn apply_command(cmd: &ApiCommand, ctx: &mut ControlContext) -> Result<Value, ValidationFailed> {
    match cmd {
        ApiCommand::GetState => Ok(json(&ctx.snapshot())),
        ApiCommand::SetCollaborator { x, y, z } => {
            let [x, y, z] = ctx.set_collaborator([*x, *y, *z])?;
            Ok(serde_json::json!({ "x": x, "y": y, "z": z }))
        }
        ApiCommand::SetRoute { route } => Ok(json(&ctx.set_route(route.clone())?)),
        ApiCommand::DeleteRoute { sink } => Ok(json(&ctx.delete_route(sink)?)),
        ApiCommand::SetParam { address, value } => {
            let v = ctx.set_param(address, *value)?;
            Ok(serde_json::json!({ "address": address, "value": v }))
        }
        ApiCommand::SetMix { value } => Ok(serde_json::json!({ "value": ctx.set_mix(*value)? })),
        ApiCommand::SubscribeMeters { rate } => {
            Ok(serde_json::json!({ "rate": check_meter_rate(*rate, ctx.control_rate())? }))
        }
    }
}

fn json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("engine types serialize")
}

/// Apply a command and wrap the outcome in a reply stamped with a sequence
/// number and the tick it applied at.
pub fn respond(id: Option<Value>, cmd: &ApiCommand, ctx: &mut ControlContext) -> Reply {
    if let ApiCommand::GetState = cmd {
        let snap = ctx.snapshot();
        let (seq, tick) = (snap.seq, snap.tick);
        return Reply::ok(id, seq, tick, serde_json::to_value(snap).expect("snapshot serializes"));
    }
    let tick = ctx.tick_count();
    let outcome = apply_command(cmd, ctx);
    let seq = ctx.next_seq();
    match outcome {
        Ok(v) => Reply::ok(id, seq, tick, v),
        Err(e) => Reply::err(id, Some(seq), Some(tick), e.into()),
    }
}

/// Decides on which control ticks each subscriber receives a snapshot.
#[derive(Debug, Clone, Default)]
pub struct MeterScheduler<K> {
    subs: Vec<(K, f64, f64)>,
}

impl<K: PartialEq + Clone> MeterScheduler<K> {
    pub fn new() -> Self {
        Self { subs: Vec::new() }
    }

    /// Set or replace a subscription; rate 0 removes it.
    pub fn subscribe(&mut self, key: K, rate: f64) {
        self.unsubscribe(&key);
        if rate > 0.0 {
            self.subs.push((key, rate, 0.0));
        }
    }

    pub fn unsubscribe(&mut self, key: &K) {
        self.subs.retain(|(k, ..)| k != key);
    }

    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }

    /// Advance by one tick of `dt` seconds; returns the subscribers due now.
    pub fn on_tick(&mut self, dt: f64) -> Vec<K> {
        let mut due = Vec::new();
        for (k, rate, acc) in &mut self.subs {
            *acc += *rate * dt;
            if *acc >= 1.0 - 1e-9 {
                *acc -= 1.0;
                due.push(k.clone());
            }
        }
        due
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Running WebSocket server.
pub struct Server {
    port: u16,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// Listen on `127.0.0.1:port` (0 picks a free port) and forward commands to the engine.
pub fn serve(engine: EngineClient, port: u16) -> Result<Server, ServeError> {
    let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => ServeError::PortInUse(port),
        _ => ServeError::Io(e),
    })?;
    let port = listener.local_addr()?.port();
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::Builder::new()
        .name("api-accept".into())
        .spawn(move || accept_loop(listener, engine, flag))?;
    info!("control API listening on 127.0.0.1:{port}");
    Ok(Server {
        port,
        stop,
        thread: Some(thread),
    })
}

fn accept_loop(listener: TcpListener, engine: EngineClient, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, addr)) => {
                debug!("api connection from {addr}");
                let engine = engine.clone();
                let stop = stop.clone();
                let _ = std::thread::Builder::new()
                    .name("api-conn".into())
                    .spawn(move || {
                        if let Err(e) = connection(stream, engine, stop) {
                            debug!("api connection closed: {e}");
                        }
                    });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn connection(stream: TcpStream, engine: EngineClient, stop: Arc<AtomicBool>) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let conn = engine.new_connection_id();
    let (out_tx, out_rx): (Sender<String>, Receiver<String>) = unbounded();
    let result = serve_connection(&mut ws, &engine, conn, &out_tx, &out_rx, &stop);
    engine.send(ControlMsg::Disconnect { conn });
    result
}

fn serve_connection(
    ws: &mut WebSocket<TcpStream>,
    engine: &EngineClient,
    conn: u64,
    out_tx: &Sender<String>,
    out_rx: &Receiver<String>,
    stop: &AtomicBool,
) -> Result<(), tungstenite::Error> {
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => match parse_request(text.as_str()) {
                Ok((id, cmd)) => {
                    let sent = engine.send(ControlMsg::Command {
                        conn,
                        id: id.clone(),
                        cmd,
                        out: out_tx.clone(),
                    });
                    if !sent {
                        let error = ApiError {
                            kind: "EngineStopped".into(),
                            field: String::new(),
                            reason: "the engine is not running".into(),
                        };
                        ws.send(Message::text(Reply::err(id, None, None, error).to_json()))?;
                    }
                }
                Err(reply) => ws.send(Message::text(reply.to_json()))?,
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        let mut wrote = false;
        while let Ok(text) = out_rx.try_recv() {
            ws.write(Message::text(text))?;
            wrote = true;
        }
        if wrote {
            ws.flush()?;
        }
    }
    let _ = ws.close(None);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_commands() {
        let (id, cmd) = parse_request(r#"{"v":1,"id":7,"cmd":"set_mix","value":0.5}"#).unwrap();
        assert_eq!(id, Some(Value::from(7)));
        assert_eq!(cmd, ApiCommand::SetMix { value: 0.5 });
        let (_, cmd) = parse_request(r#"{"v":1,"cmd":"get_state"}"#).unwrap();
        assert_eq!(cmd, ApiCommand::GetState);
    }

    #[test]
    fn malformed_requests() {
        for (text, kind, field) in [
            ("not json", "MalformedCommand", ""),
            (r#"[1,2]"#, "MalformedCommand", ""),
            (r#"{"cmd":"get_state"}"#, "MalformedCommand", "v"),
            (r#"{"v":2,"cmd":"get_state"}"#, "UnsupportedVersion", "v"),
            (r#"{"v":1}"#, "MalformedCommand", "cmd"),
            (r#"{"v":1,"cmd":"fly"}"#, "MalformedCommand", ""),
            (r#"{"v":1,"cmd":"set_mix"}"#, "MalformedCommand", ""),
        ] {
            let reply = parse_request(text).unwrap_err();
            assert!(!reply.ok);
            let e = reply.error.unwrap();
            assert_eq!((e.kind.as_str(), e.field.as_str()), (kind, field), "{text}");
        }
    }

    #[test]
    fn scheduler_exact_rate() {
        let mut s = MeterScheduler::new();
        s.subscribe(1u64, 15.0);
        let sent: usize = (0..1000).map(|_| s.on_tick(0.01).len()).sum();
        assert_eq!(sent, 150);
        s.subscribe(1, 0.0);
        assert!(s.is_empty());
    }
}
