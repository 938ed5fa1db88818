//! Electroadhesive clutch: force model, serial protocol and simulated restraint.
//!
//! Wire format is line-oriented ASCII:
//!
//! ```text
//! host -> device   ENG D 300\n | ENG V 300\n | DIS D\n | DIS V\n | PING\n
//! device -> host   OK\n | ERR <code>\n
//! ```

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_VOLTAGE: f64 = 400.0;
/// Reference voltage at which both force laws agree.
pub const REFERENCE_VOLTAGE: f64 = 300.0;
/// Springs are due for replacement after this many subjects.
pub const SPRING_SERVICE_SUBJECTS: u32 = 5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClutchError {
    #[error("voltage {0} V outside [0, {MAX_VOLTAGE}] V")]
    VoltageOutOfRange(f64),
    #[error("malformed clutch line {0:?}")]
    Parse(Vec<u8>),
    #[error("device replied ERR {0}")]
    Device(u16),
    #[error("device i/o: {0}")]
    Io(String),
    #[error("device link closed")]
    LinkClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutchSide {
    /// Inner arm; blocks extension (downward drone motion).
    Ventral,
    /// Outer arm; blocks flexion (upward drone motion).
    Dorsal,
}

impl ClutchSide {
    fn code(self) -> &'static str {
        match self {
            ClutchSide::Ventral => "V",
            ClutchSide::Dorsal => "D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceLaw {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClutchModel {
    /// Holding force per volt at the reference voltage, N/V.
    pub force_per_volt: f64,
    /// Time for the holding force to drop by 90 %, s.
    pub disengage_time: f64,
    pub force_law: ForceLaw,
}

impl Default for ClutchModel {
    fn default() -> Self {
        Self { force_per_volt: 0.05, disengage_time: 0.040, force_law: ForceLaw::Linear }
    }
}

impl ClutchModel {
    /// Maximum holding force at `voltage`.
    ///
    /// The quadratic law `k V²` is scaled so it matches the linear law at
    /// [`REFERENCE_VOLTAGE`].
    pub fn holding_force(&self, voltage: f64) -> Result<f64, ClutchError> {
        if !(0.0..=MAX_VOLTAGE).contains(&voltage) {
            return Err(ClutchError::VoltageOutOfRange(voltage));
        }
        Ok(match self.force_law {
            ForceLaw::Linear => self.force_per_volt * voltage,
            ForceLaw::Quadratic => self.force_per_volt * voltage * voltage / REFERENCE_VOLTAGE,
        })
    }

    /// Residual holding force `elapsed` seconds after the voltage is removed.
    /// Linear ramp to 10 % at `disengage_time`, then to zero at twice that.
    pub fn disengage_force_at(&self, initial_voltage: f64, elapsed: f64) -> Result<f64, ClutchError> {
        let f0 = self.holding_force(initial_voltage)?;
        let td = self.disengage_time;
        let e = elapsed.max(0.0);
        Ok(if e <= td {
            f0 * (0.1 + 0.9 * ((td - e) / td))
        } else if e <= 2.0 * td {
            f0 * 0.1 * ((2.0 * td - e) / td)
        } else {
            0.0
        })
    }
}

pub fn holding_force(model: &ClutchModel, voltage: f64) -> Result<f64, ClutchError> {
    model.holding_force(voltage)
}

pub fn disengage_force_at(model: &ClutchModel, initial_voltage: f64, elapsed: f64) -> Result<f64, ClutchError> {
    model.disengage_force_at(initial_voltage, elapsed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Engage { side: ClutchSide, volts: u16 },
    Disengage { side: ClutchSide },
    Ping,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Engage { side, volts } => write!(f, "ENG {} {}", side.code(), volts),
            Command::Disengage { side } => write!(f, "DIS {}", side.code()),
            Command::Ping => f.write_str("PING"),
        }
    }
}

pub fn encode_command(cmd: &Command) -> Vec<u8> {
    format!("{cmd}\n").into_bytes()
}

pub fn parse_command(bytes: &[u8]) -> Result<Command, ClutchError> {
    let err = || ClutchError::Parse(bytes.to_vec());
    let line = std::str::from_utf8(bytes).map_err(|_| err())?;
    let line = line.strip_suffix('\n').ok_or_else(err)?;
    let side = |s: &str| match s {
        "V" => Ok(ClutchSide::Ventral),
        "D" => Ok(ClutchSide::Dorsal),
        _ => Err(err()),
    };
    let parts: Vec<&str> = line.split(' ').collect();
    match parts.as_slice() {
        ["PING"] => Ok(Command::Ping),
        ["DIS", s] => Ok(Command::Disengage { side: side(s)? }),
        ["ENG", s, v] => {
            if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            let volts: u32 = v.parse().map_err(|_| err())?;
            if volts as f64 > MAX_VOLTAGE {
                return Err(ClutchError::VoltageOutOfRange(volts as f64));
            }
            Ok(Command::Engage { side: side(s)?, volts: volts as u16 })
        }
        _ => Err(err()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reply {
    Ok,
    Err(u16),
}

pub fn encode_reply(reply: &Reply) -> Vec<u8> {
    match reply {
        Reply::Ok => b"OK\n".to_vec(),
        Reply::Err(code) => format!("ERR {code}\n").into_bytes(),
    }
}

pub fn parse_reply(bytes: &[u8]) -> Result<Reply, ClutchError> {
    let err = || ClutchError::Parse(bytes.to_vec());
    match bytes {
        b"OK\n" => Ok(Reply::Ok),
        [b'E', b'R', b'R', b' ', rest @ .., b'\n'] => {
            let code = std::str::from_utf8(rest).map_err(|_| err())?;
            code.parse().map(Reply::Err).map_err(|_| err())
        }
        _ => Err(err()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutchChannel {
    pub side: ClutchSide,
    pub engaged: bool,
    pub voltage: f64,
    /// Altitude bound captured at engagement.
    pub engage_z: Option<f64>,
    /// Time of the last engage or release, s.
    pub transient_start: f64,
}

impl ClutchChannel {
    pub fn new(side: ClutchSide) -> Self {
        Self { side, engaged: false, voltage: 0.0, engage_z: None, transient_start: 0.0 }
    }

    pub fn engage(&mut self, voltage: f64, engage_z: f64, t: f64) -> Result<(), ClutchError> {
        if !(voltage > 0.0 && voltage <= MAX_VOLTAGE) {
            return Err(ClutchError::VoltageOutOfRange(voltage));
        }
        self.engaged = true;
        self.voltage = voltage;
        self.engage_z = Some(engage_z);
        self.transient_start = t;
        Ok(())
    }

    pub fn release(&mut self, t: f64) {
        self.engaged = false;
        self.engage_z = None;
        self.transient_start = t;
    }

    /// Modeled holding force at time `t`, including the release transient.
    pub fn force_at(&self, model: &ClutchModel, t: f64) -> f64 {
        if self.engaged {
            model.holding_force(self.voltage).unwrap_or(0.0)
        } else if self.voltage > 0.0 {
            model.disengage_force_at(self.voltage, t - self.transient_start).unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

/// Both clutches of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutchBank {
    pub ventral: ClutchChannel,
    pub dorsal: ClutchChannel,
}

impl Default for ClutchBank {
    fn default() -> Self {
        Self { ventral: ClutchChannel::new(ClutchSide::Ventral), dorsal: ClutchChannel::new(ClutchSide::Dorsal) }
    }
}

impl ClutchBank {
    pub fn channel_mut(&mut self, side: ClutchSide) -> &mut ClutchChannel {
        match side {
            ClutchSide::Ventral => &mut self.ventral,
            ClutchSide::Dorsal => &mut self.dorsal,
        }
    }

    pub fn channel(&self, side: ClutchSide) -> &ClutchChannel {
        match side {
            ClutchSide::Ventral => &self.ventral,
            ClutchSide::Dorsal => &self.dorsal,
        }
    }

    /// Apply a device command to the simulated bank.
    pub fn apply(&mut self, cmd: &Command, engage_z: f64, t: f64) -> Result<(), ClutchError> {
        match *cmd {
            Command::Engage { side, volts } => self.channel_mut(side).engage(volts as f64, engage_z, t),
            Command::Disengage { side } => {
                self.channel_mut(side).release(t);
                Ok(())
            }
            Command::Ping => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Restrained {
    pub z: f64,
    /// Both channels engaged at once; motion frozen in the band between them.
    pub conflicting: bool,
}

/// Simulated motion blocking: the dorsal clutch caps upward travel and the
/// ventral clutch caps downward travel at `compliance` beyond the engagement
/// altitude.
pub fn restrain(commanded_z: f64, bank: &ClutchBank, compliance: f64) -> Restrained {
    let mut z = commanded_z;
    let upper = bank.dorsal.engage_z.filter(|_| bank.dorsal.engaged).map(|e| e + compliance);
    let lower = bank.ventral.engage_z.filter(|_| bank.ventral.engaged).map(|e| e - compliance);
    if let Some(hi) = upper {
        z = z.min(hi);
    }
    if let Some(lo) = lower {
        z = z.max(lo);
    }
    let conflicting = upper.is_some() && lower.is_some();
    if let (Some(lo), Some(hi)) = (lower, upper) {
        // contradictory bounds: keep inside [min, max] of the two
        z = z.clamp(lo.min(hi), lo.max(hi));
    }
    Restrained { z, conflicting }
}

/// Something that executes clutch commands and answers with a [`Reply`].
pub trait ClutchDevice: Send {
    fn send(&mut self, cmd: &Command) -> Result<Reply, ClutchError>;
}

/// In-memory device emulator speaking the wire protocol.
#[derive(Debug, Default, Clone)]
pub struct LoopbackClutch {
    pub bank: ClutchBank,
    pub log: Vec<Vec<u8>>,
    clock: f64,
}

impl LoopbackClutch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Handle one raw line, returning the raw reply bytes.
    pub fn handle_line(&mut self, line: &[u8]) -> Vec<u8> {
        self.log.push(line.to_vec());
        self.clock += 1.0;
        let reply = match parse_command(line) {
            Ok(cmd) => match self.bank.apply(&cmd, 0.0, self.clock) {
                Ok(()) => Reply::Ok,
                Err(_) => Reply::Err(2),
            },
            Err(ClutchError::VoltageOutOfRange(_)) => Reply::Err(2),
            Err(_) => Reply::Err(1),
        };
        encode_reply(&reply)
    }
}

impl ClutchDevice for LoopbackClutch {
    fn send(&mut self, cmd: &Command) -> Result<Reply, ClutchError> {
        let reply = self.handle_line(&encode_command(cmd));
        parse_reply(&reply)
    }
}

/// Device on any byte stream (a serial port node, a socket, a pipe).
pub struct StreamClutch<R: Read, W: Write> {
    reader: BufReader<R>,
    writer: W,
}

impl<R: Read, W: Write> StreamClutch<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader: BufReader::new(reader), writer }
    }
}

impl<R: Read + Send, W: Write + Send> ClutchDevice for StreamClutch<R, W> {
    fn send(&mut self, cmd: &Command) -> Result<Reply, ClutchError> {
        let io = |e: std::io::Error| ClutchError::Io(e.to_string());
        self.writer.write_all(&encode_command(cmd)).map_err(io)?;
        self.writer.flush().map_err(io)?;
        let mut line = Vec::new();
        self.reader.read_until(b'\n', &mut line).map_err(io)?;
        if line.is_empty() {
            return Err(ClutchError::LinkClosed);
        }
        match parse_reply(&line)? {
            Reply::Err(code) => Err(ClutchError::Device(code)),
            ok => Ok(ok),
        }
    }
}

/// Outcome of one queued command, reported back by the link thread.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatched {
    pub cmd: Command,
    pub result: Result<Reply, ClutchError>,
}

/// Device I/O on its own thread. [`ClutchLink::submit`] never blocks.
pub struct ClutchLink {
    tx: Option<mpsc::Sender<Command>>,
    results: mpsc::Receiver<Dispatched>,
    worker: Option<thread::JoinHandle<Box<dyn ClutchDevice>>>,
}

impl ClutchLink {
    pub fn spawn(mut device: Box<dyn ClutchDevice>) -> Self {
        let (tx, rx) = mpsc::channel::<Command>();
        let (res_tx, results) = mpsc::channel();
        let worker = thread::spawn(move || {
            for cmd in rx {
                let result = device.send(&cmd);
                if res_tx.send(Dispatched { cmd, result }).is_err() {
                    break;
                }
            }
            device
        });
        Self { tx: Some(tx), results, worker: Some(worker) }
    }

    pub fn submit(&self, cmd: Command) -> Result<(), ClutchError> {
        self.tx.as_ref().ok_or(ClutchError::LinkClosed)?.send(cmd).map_err(|_| ClutchError::LinkClosed)
    }

    pub fn drain_results(&self) -> Vec<Dispatched> {
        self.results.try_iter().collect()
    }

    /// Flush the queue and hand the device back.
    pub fn close(mut self) -> (Box<dyn ClutchDevice>, Vec<Dispatched>) {
        self.tx.take();
        let device = self.worker.take().expect("worker").join().expect("clutch link thread panicked");
        let rest = self.results.try_iter().collect();
        (device, rest)
    }
}

/// Persisted hardware hygiene: plate polarity and spring service counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ClutchMaintenance {
    pub polarity_reversed: bool,
    /// Polarity the most recent subject started on.
    pub subject_start_reversed: Option<bool>,
    pub subjects_since_spring_change: u32,
    pub total_subjects: u32,
    pub total_sessions: u32,
}

impl ClutchMaintenance {
    /// Plates are reversed after every session.
    pub fn record_session(&mut self) {
        self.total_sessions += 1;
        self.polarity_reversed = !self.polarity_reversed;
    }

    /// Each new subject starts on the opposite polarity to the previous one.
    pub fn start_subject(&mut self) {
        self.total_subjects += 1;
        self.subjects_since_spring_change += 1;
        self.polarity_reversed = self.subject_start_reversed == Some(false);
        self.subject_start_reversed = Some(self.polarity_reversed);
    }

    pub fn springs_due(&self) -> bool {
        self.subjects_since_spring_change >= SPRING_SERVICE_SUBJECTS
    }

    pub fn replace_springs(&mut self) {
        self.subjects_since_spring_change = 0;
    }
}
