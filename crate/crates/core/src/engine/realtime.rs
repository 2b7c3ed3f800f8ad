//! Threaded runner: one control thread, one audio thread, and an optional
//! OSC receive thread that only decodes and forwards packets.
//!
//! With [`ClockKind::Fake`] the two threads advance in lockstep on the same
//! sample grid the offline renderer uses, so their output is identical.

use std::net::UdpSocket;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{unbounded, Sender};
use log::{debug, info, warn};
use serde_json::Value;

use crate::api::{respond, ApiCommand, MeterScheduler, StreamMessage};
use crate::osc::{decode_packet, encode_packet, OscPacket};

use super::audio::{AudioContext, Queues};
use super::config::SessionConfig;
use super::control::{ControlContext, IngressStats};
use super::offline::{encode_wav, run_tick, SampleGrid};
use super::script::{ScriptCursor, TrajectoryScript};
use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    /// Paced by the system clock.
    Wall,
    /// Control and audio wait on each other's progress instead of time.
    Fake,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceKind {
    /// Discards output.
    Null,
    /// Keeps output in memory; returned by [`Engine::wait`] as WAV bytes.
    Memory,
    /// Writes a float32 WAV when the engine stops.
    WavFile(PathBuf),
}

/// Output devices available on this build.
pub fn probe_devices() -> Vec<(&'static str, &'static str)> {
    vec![
        ("null", "discard output, paced by the engine clock"),
        ("memory", "capture output in memory"),
        ("wav:<path>", "capture output to a float32 WAV file on stop"),
    ]
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub clock: ClockKind,
    pub device: DeviceKind,
    /// Stop after this many seconds of audio; `None` runs until stopped.
    pub duration: Option<f64>,
    pub osc_in: Option<u16>,
    /// `host:port` for pose egress.
    pub osc_out: Option<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            clock: ClockKind::Wall,
            device: DeviceKind::Null,
            duration: None,
            osc_in: None,
            osc_out: None,
        }
    }
}

/// Messages into the control context.
#[derive(Debug)]
pub enum ControlMsg {
    Osc(OscPacket),
    Command {
        conn: u64,
        id: Option<Value>,
        cmd: ApiCommand,
        /// Replies and the snapshot stream for this connection.
        out: Sender<String>,
    },
    Disconnect {
        conn: u64,
    },
}

/// Cloneable sender side of the control inbox.
#[derive(Debug, Clone)]
pub struct EngineClient {
    inbox: Sender<ControlMsg>,
    next_conn: Arc<AtomicU64>,
}

impl EngineClient {
    /// False once the engine has stopped.
    pub fn send(&self, msg: ControlMsg) -> bool {
        self.inbox.send(msg).is_ok()
    }

    pub fn new_connection_id(&self) -> u64 {
        self.next_conn.fetch_add(1, Ordering::SeqCst)
    }

    /// Send one command and wait for its reply text.
    pub fn request(&self, cmd: ApiCommand, timeout: Duration) -> Option<String> {
        let (tx, rx) = unbounded();
        let conn = self.new_connection_id();
        if !self.send(ControlMsg::Command {
            conn,
            id: None,
            cmd,
            out: tx,
        }) {
            return None;
        }
        rx.recv_timeout(timeout).ok()
    }
}

#[derive(Debug, Default)]
struct Progress {
    ticks: AtomicU64,
    blocks: AtomicU64,
    audio_done: AtomicBool,
    stop: AtomicBool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// WAV bytes for [`DeviceKind::Memory`].
    pub wav: Option<Vec<u8>>,
    pub ticks: u64,
    pub blocks: u64,
    pub stats: IngressStats,
}

pub struct Engine {
    client: EngineClient,
    progress: Arc<Progress>,
    control: Option<JoinHandle<IngressStats>>,
    audio: Option<JoinHandle<Result<Option<Vec<u8>>, EngineError>>>,
    osc: Option<JoinHandle<()>>,
}

trait Device: Send {
    fn write(&mut self, interleaved: &[f32]);
    fn finish(self: Box<Self>) -> Result<Option<Vec<u8>>, EngineError>;
}

struct NullDevice;

impl Device for NullDevice {
    fn write(&mut self, _: &[f32]) {}
    fn finish(self: Box<Self>) -> Result<Option<Vec<u8>>, EngineError> {
        Ok(None)
    }
}

struct Capture {
    channels: usize,
    sample_rate: u32,
    samples: Vec<f32>,
    path: Option<PathBuf>,
}

impl Device for Capture {
    fn write(&mut self, interleaved: &[f32]) {
        self.samples.extend_from_slice(interleaved);
    }

    fn finish(self: Box<Self>) -> Result<Option<Vec<u8>>, EngineError> {
        let bytes = encode_wav(self.channels, self.sample_rate, &self.samples)?;
        match self.path {
            Some(path) => {
                std::fs::write(&path, &bytes).map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))?;
                Ok(None)
            }
            None => Ok(Some(bytes)),
        }
    }
}

fn wait_until(flag: &AtomicBool, mut ready: impl FnMut() -> bool) -> bool {
    let mut spins = 0u32;
    while !ready() {
        if flag.load(Ordering::Acquire) {
            return false;
        }
        spins += 1;
        if spins < 64 {
            std::hint::spin_loop();
        } else if spins < 256 {
            std::thread::yield_now();
        } else {
            std::thread::sleep(Duration::from_micros(50));
        }
    }
    true
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}

impl Engine {
    pub fn start(config: &SessionConfig, script: &TrajectoryScript, options: RunOptions) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::ConfigInvalid)?;
        script.validate()?;
        let queues = Queues::new();
        let mut control = ControlContext::new(config, queues.clone())?;
        let mut audio = AudioContext::new(config, queues, control.poses().tcp.position)?;
        let grid = SampleGrid::of(config);
        let total_frames = match options.duration {
            Some(d) if d.is_finite() && d >= 0.0 => Some(grid.total_frames(d)),
            Some(d) => return Err(EngineError::Config(format!("duration {d} must be >= 0"))),
            None => None,
        };
        let channels = audio.channels();
        let mut device: Box<dyn Device> = match &options.device {
            DeviceKind::Null => Box::new(NullDevice),
            kind => Box::new(Capture {
                channels,
                sample_rate: config.sample_rate,
                samples: Vec::with_capacity(total_frames.unwrap_or(0) as usize * channels),
                path: match kind {
                    DeviceKind::WavFile(p) => Some(p.clone()),
                    _ => None,
                },
            }),
        };

        let egress = match &options.osc_out {
            Some(target) => {
                let sock = UdpSocket::bind("0.0.0.0:0").map_err(|e| EngineError::Io(e.to_string()))?;
                sock.connect(target).map_err(|e| EngineError::Io(format!("{target}: {e}")))?;
                Some(sock)
            }
            None => None,
        };

        let (inbox, rx) = unbounded();
        let client = EngineClient {
            inbox,
            next_conn: Arc::new(AtomicU64::new(1)),
        };
        let progress = Arc::new(Progress::default());

        let osc = match options.osc_in {
            Some(port) => {
                let sock = UdpSocket::bind(("0.0.0.0", port)).map_err(|e| EngineError::Io(format!("OSC port {port}: {e}")))?;
                sock.set_read_timeout(Some(Duration::from_millis(50)))
                    .map_err(|e| EngineError::Io(e.to_string()))?;
                let client = client.clone();
                let progress = progress.clone();
                Some(spawn("osc-in", move || osc_receive(sock, client, progress))?)
            }
            None => None,
        };

        let clock = options.clock;
        let start = Instant::now();
        let block = config.block_size;
        let sample_rate = config.sample_rate as f64;

        let p = progress.clone();
        let audio_thread = spawn("audio", move || {
            let mut buf = vec![0.0f32; block * channels];
            let mut b = 0u64;
            loop {
                if p.stop.load(Ordering::Acquire) {
                    break;
                }
                let keep = match total_frames {
                    Some(total) if b * block as u64 >= total => break,
                    Some(total) => (total - b * block as u64).min(block as u64) as usize,
                    None => block,
                };
                match clock {
                    ClockKind::Fake => {
                        let need = grid.ticks_before_block(b);
                        if !wait_until(&p.stop, || p.ticks.load(Ordering::Acquire) >= need) {
                            break;
                        }
                    }
                    ClockKind::Wall => {
                        sleep_until(start + Duration::from_secs_f64((b * block as u64) as f64 / sample_rate))
                    }
                }
                audio.process(&mut buf);
                device.write(&buf[..keep * channels]);
                b += 1;
                p.blocks.store(b, Ordering::Release);
            }
            if audio.nan_replaced > 0 {
                warn!("{} non-finite samples replaced by silence", audio.nan_replaced);
            }
            p.audio_done.store(true, Ordering::Release);
            device.finish()
        })?;

        let p = progress.clone();
        let mut cursor = ScriptCursor::new(script, config.control_rate);
        let dt = config.control_dt();
        let control_thread = spawn("control", move || {
            let mut scheduler: MeterScheduler<u64> = MeterScheduler::new();
            let mut streams: Vec<(u64, Sender<String>)> = Vec::new();
            loop {
                let k = control.tick_count();
                let ready = match clock {
                    ClockKind::Fake => {
                        let need = grid.blocks_before_tick(k);
                        wait_until(&p.audio_done, || p.blocks.load(Ordering::Acquire) >= need)
                    }
                    ClockKind::Wall => {
                        sleep_until(start + Duration::from_secs_f64(k as f64 * dt));
                        true
                    }
                };
                if !ready || p.stop.load(Ordering::Acquire) || p.audio_done.load(Ordering::Acquire) {
                    break;
                }
                let mut deferred = Vec::new();
                for msg in rx.try_iter() {
                    match msg {
                        ControlMsg::Osc(packet) => control.osc_ingress(&packet),
                        ControlMsg::Command {
                            id,
                            cmd: ApiCommand::GetState,
                            out,
                            ..
                        } => deferred.push((id, out)),
                        ControlMsg::Command { conn, id, cmd, out } => {
                            let reply = respond(id, &cmd, &mut control);
                            if let (ApiCommand::SubscribeMeters { rate }, true) = (&cmd, reply.ok) {
                                scheduler.subscribe(conn, *rate);
                                streams.retain(|(c, _)| *c != conn);
                                if *rate > 0.0 {
                                    streams.push((conn, out.clone()));
                                }
                            }
                            let _ = out.send(reply.to_json());
                        }
                        ControlMsg::Disconnect { conn } => {
                            scheduler.unsubscribe(&conn);
                            streams.retain(|(c, _)| *c != conn);
                        }
                    }
                }
                run_tick(&mut control, &mut cursor);
                p.ticks.store(control.tick_count(), Ordering::Release);

                if let Some(sock) = &egress {
                    for packet in control.osc_egress() {
                        if let Ok(bytes) = encode_packet(packet) {
                            if let Err(e) = sock.send(&bytes) {
                                debug!("OSC send failed: {e}");
                            }
                        }
                    }
                }
                for (id, out) in deferred {
                    let _ = out.send(respond(id, &ApiCommand::GetState, &mut control).to_json());
                }
                let due = scheduler.on_tick(dt);
                if !due.is_empty() {
                    let text = serde_json::to_string(&StreamMessage::new(control.snapshot()))
                        .expect("snapshot serializes");
                    for conn in due {
                        if let Some((_, out)) = streams.iter().find(|(c, _)| *c == conn) {
                            if out.send(text.clone()).is_err() {
                                scheduler.unsubscribe(&conn);
                            }
                        }
                    }
                }
            }
            p.stop.store(true, Ordering::Release);
            control.stats
        })?;

        info!("engine started ({clock:?} clock, {channels} channels)");
        Ok(Self {
            client,
            progress,
            control: Some(control_thread),
            audio: Some(audio_thread),
            osc,
        })
    }

    pub fn client(&self) -> EngineClient {
        self.client.clone()
    }

    pub fn ticks(&self) -> u64 {
        self.progress.ticks.load(Ordering::Acquire)
    }

    pub fn blocks(&self) -> u64 {
        self.progress.blocks.load(Ordering::Acquire)
    }

    pub fn is_finished(&self) -> bool {
        self.progress.audio_done.load(Ordering::Acquire)
    }

    /// Ask both threads to stop at their next boundary.
    pub fn stop(&self) {
        self.progress.stop.store(true, Ordering::Release);
    }

    /// Join all threads. Without a duration, call [`Engine::stop`] first.
    pub fn wait(mut self) -> Result<RunOutput, EngineError> {
        let audio = self.audio.take().expect("joined once").join();
        self.progress.stop.store(true, Ordering::Release);
        let stats = self
            .control
            .take()
            .expect("joined once")
            .join()
            .map_err(|_| EngineError::Thread("control".into()))?;
        if let Some(osc) = self.osc.take() {
            let _ = osc.join();
        }
        let wav = audio.map_err(|_| EngineError::Thread("audio".into()))??;
        Ok(RunOutput {
            wav,
            ticks: self.ticks(),
            blocks: self.blocks(),
            stats,
        })
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.progress.stop.store(true, Ordering::Release);
    }
}

fn spawn<T: Send + 'static>(
    name: &str,
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<JoinHandle<T>, EngineError> {
    std::thread::Builder::new()
        .name(name.into())
        .spawn(f)
        .map_err(|e| EngineError::Thread(e.to_string()))
}

fn osc_receive(sock: UdpSocket, client: EngineClient, progress: Arc<Progress>) {
    let mut buf = [0u8; 65_536];
    while !progress.stop.load(Ordering::Acquire) {
        match sock.recv(&mut buf) {
            Ok(n) => match decode_packet(&buf[..n]) {
                Ok(packet) => {
                    if !client.send(ControlMsg::Osc(packet)) {
                        return;
                    }
                }
                Err(e) => debug!("dropping undecodable OSC datagram: {e}"),
            },
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => {
                warn!("OSC receive failed: {e}");
                return;
            }
        }
    }
}
