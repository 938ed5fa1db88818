//! `study` command-line interface.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use dronetrain::inputmap::{calibrate, calibrate_from_sweep, parse_device_line, read_device_lines, Mailbox, ScriptedReplay, SourceKind};
use dronetrain::realtime::{LoopHooks, Pacing};
use dronetrain::session::pilot::{LiveInput, ScriptSource};
use dronetrain::session::plan::{pilot_seed, SESSION_COUNT};
use dronetrain::session::{replay_trial, run_session, InputSource, ProportionalPilot, RunOptions, StudyStore};
use dronetrain::stats::analyze_study;
use dronetrain::trace::trace_bytes;
use dronetrain::{FeedbackMode, StudyConfig};

use crate::server::{self, AppState, ServerOptions};

#[derive(Debug, Parser)]
#[command(name = "study", version, about = "Drone teleoperation training study harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a study directory.
    New {
        #[arg(long, default_value = ".")]
        study: PathBuf,
        /// Comma-separated feedback groups, assigned round-robin.
        #[arg(long, value_delimiter = ',', default_value = "fpv,arrows,haptic")]
        groups: Vec<FeedbackMode>,
        #[arg(long)]
        subjects: usize,
        #[arg(long)]
        seed: u64,
        /// TOML config overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Store a subject's elbow calibration.
    Calibrate {
        #[arg(long, default_value = ".")]
        study: PathBuf,
        #[arg(long)]
        subject: String,
        /// Extension and flexion limits in degrees, e.g. `35,150`.
        #[arg(long, value_delimiter = ',', conflicts_with = "sweep")]
        range: Option<Vec<f64>>,
        /// File of `ANG <deg> <ms>` lines recorded while sweeping the arm.
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Run the subject's next session(s).
    Run {
        #[arg(long, default_value = ".")]
        study: PathBuf,
        #[arg(long)]
        subject: String,
        /// keyboard | gamepad | serial:<port> | script:<file> | pilot[:<seed>]
        #[arg(long, default_value = "keyboard")]
        input: String,
        /// Run this plan session instead of the next one.
        #[arg(long)]
        session: Option<usize>,
        /// Keep going until the plan is complete (scripted inputs).
        #[arg(long)]
        all: bool,
        #[arg(long)]
        allow_out_of_order: bool,
        /// Run without real-time pacing.
        #[arg(long)]
        headless: bool,
        /// Address for the cockpit gateway (keyboard / gamepad input).
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Serve the WebSocket / HTTP gateway for the cockpit.
    Serve {
        #[arg(long, default_value = ".")]
        study: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long)]
        headless: bool,
        #[arg(long)]
        allow_out_of_order: bool,
    },
    /// Export metrics.csv and run the statistics battery.
    Analyze {
        #[arg(long, default_value = ".")]
        study: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Re-run a stored trial and compare its trace byte for byte.
    Replay {
        #[arg(long)]
        trial: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    Keyboard,
    Gamepad,
    Serial(PathBuf),
    Script(PathBuf),
    Pilot(Option<u64>),
}

impl std::str::FromStr for InputSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
        Ok(match (kind, arg) {
            ("keyboard", None) => InputSpec::Keyboard,
            ("gamepad", None) => InputSpec::Gamepad,
            ("serial", Some(p)) if !p.is_empty() => InputSpec::Serial(p.into()),
            ("script", Some(p)) if !p.is_empty() => InputSpec::Script(p.into()),
            ("pilot", None) => InputSpec::Pilot(None),
            ("pilot", Some(seed)) => InputSpec::Pilot(Some(seed.parse().context("pilot seed")?)),
            _ => bail!("unknown input {s:?}; expected keyboard, gamepad, serial:<port>, script:<file> or pilot[:<seed>]"),
        })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::New { study, groups, subjects, seed, config } => {
            let cfg = match config {
                Some(p) => StudyConfig::load(&p)?,
                None => StudyConfig::default(),
            };
            let store = StudyStore::create(&study, &groups, subjects, seed, cfg)?;
            for s in &store.manifest().subjects {
                println!("{}\t{}", s.id, s.group.as_str());
            }
            println!("created study in {} (config {})", study.display(), &store.manifest().config_hash[..12]);
        }
        Command::Calibrate { study, subject, range, sweep } => {
            let store = StudyStore::open(&study)?;
            let alt = store.config().sim.altitude_range;
            let cal = match (range, sweep) {
                (Some(r), _) => match r[..] {
                    [lo, hi] => calibrate(lo, hi, alt)?,
                    _ => bail!("--range takes exactly two angles"),
                },
                (None, Some(path)) => {
                    let samples = read_device_lines(BufReader::new(File::open(&path)?), SourceKind::Device)?;
                    calibrate_from_sweep(&samples.iter().map(|s| s.angle).collect::<Vec<_>>(), alt)?
                }
                (None, None) => bail!("pass --range MIN,MAX or --sweep FILE"),
            };
            store.set_calibration(&subject, &cal)?;
            println!("{subject}: {:.1}..{:.1} deg -> {:.1}..{:.1} m", cal.angle_min, cal.angle_max, cal.alt_min, cal.alt_max);
        }
        Command::Run { study, subject, input, session, all, allow_out_of_order, headless, bind } => {
            let spec: InputSpec = input.parse()?;
            let store = StudyStore::open(&study)?;
            match spec {
                InputSpec::Keyboard | InputSpec::Gamepad => {
                    let pacing = if headless { Pacing::Headless } else { Pacing::RealTime };
                    let state = AppState::new(store, ServerOptions { pacing, allow_out_of_order });
                    state.select_subject(&subject).map_err(|e| anyhow!(e))?;
                    serve_blocking(state, bind)?;
                }
                spec => run_scripted(&store, &subject, spec, session, all, allow_out_of_order, headless)?,
            }
        }
        Command::Serve { study, bind, headless, allow_out_of_order } => {
            let store = StudyStore::open(&study)?;
            let pacing = if headless { Pacing::Headless } else { Pacing::RealTime };
            serve_blocking(AppState::new(store, ServerOptions { pacing, allow_out_of_order }), bind)?;
        }
        Command::Analyze { study, json } => {
            let store = StudyStore::open(&study)?;
            let csv = store.export_csv()?;
            let report = analyze_study(&store.summary_rows()?)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.render_text());
            }
            eprintln!("wrote {}", csv.display());
        }
        Command::Replay { trial } => {
            let record = StudyStore::load_trial(&trial)?;
            let again = trace_bytes(&replay_trial(&record)?);
            let stored = record.trace_bytes();
            if again != stored {
                let row = again.split(|b| *b == b'\n').zip(stored.split(|b| *b == b'\n')).position(|(a, b)| a != b);
                bail!("replay diverged from the stored trace (first differing tick: {:?})", row.map(|r| r + 1));
            }
            println!("replay identical: {} ticks, {} bytes", record.trace.len(), stored.len());
        }
    }
    Ok(())
}

fn serve_blocking(state: AppState, bind: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = server::bind(bind).await.with_context(|| format!("binding {bind}"))?;
        eprintln!("listening on ws://{}/ws", listener.local_addr()?);
        server::serve(listener, state).await?;
        Ok(())
    })
}

/// Reader thread feeding a mailbox from a serial-style byte stream.
fn spawn_serial_reader(port: &Path, mailbox: Mailbox) -> Result<()> {
    let file = File::open(port).with_context(|| format!("opening {}", port.display()))?;
    std::thread::spawn(move || {
        for line in BufReader::new(file).lines() {
            let Ok(line) = line else { break };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match parse_device_line(line) {
                // restamp on arrival: the device clock is not ours
                Ok(sample) => mailbox.push_angle(sample.angle, SourceKind::Device),
                Err(e) => tracing::warn!("{e}"),
            }
        }
    });
    Ok(())
}

fn run_scripted(
    store: &StudyStore,
    subject: &str,
    spec: InputSpec,
    session: Option<usize>,
    all: bool,
    allow_out_of_order: bool,
    headless: bool,
) -> Result<()> {
    let plan = store.plan(subject)?;
    let cal = store.calibration(subject)?;
    let cfg = *store.config();
    let script = match &spec {
        InputSpec::Script(path) => Some(read_device_lines(BufReader::new(File::open(path)?), SourceKind::Scripted)?),
        _ => None,
    };
    let mailbox = Mailbox::new();
    if let InputSpec::Serial(port) = &spec {
        spawn_serial_reader(port, mailbox.clone())?;
    }
    let pacing = match spec {
        InputSpec::Serial(_) if !headless => Pacing::RealTime,
        _ => Pacing::Headless,
    };
    let mut next = session;
    loop {
        let completed = store.completed(subject)?;
        let number = next.take().unwrap_or(completed + 1);
        if number > SESSION_COUNT {
            println!("{subject}: plan complete");
            break;
        }
        let mut source: Box<dyn InputSource> = match &spec {
            InputSpec::Pilot(seed) => Box::new(ProportionalPilot::new(
                cfg.pilot,
                pilot_seed(seed.unwrap_or(plan.master_seed), subject, number),
            )),
            InputSpec::Script(_) => Box::new(ScriptSource(ScriptedReplay::new(script.clone().expect("script loaded")))),
            InputSpec::Serial(_) => {
                Box::new(LiveInput { mailbox: mailbox.clone(), kind: SourceKind::Device, neutral: None })
            }
            InputSpec::Keyboard | InputSpec::Gamepad => unreachable!("served through the gateway"),
        };
        let opts = RunOptions { pacing, completed, allow_out_of_order };
        let record = run_session(&plan, number, source.as_mut(), &cfg, cal, opts, LoopHooks::default())?;
        let path = store.save_trial(&record)?;
        let e = &record.meta.entry;
        match (&record.meta.error, &record.meta.abort_reason) {
            (Some(err), _) => println!(
                "{subject} #{:02} {} {} {}: error {:.4} m, {} collisions -> {}",
                e.number,
                e.task.as_str(),
                e.phase.as_str(),
                e.session_index,
                err.error,
                err.collisions,
                path.display()
            ),
            (None, reason) => {
                println!("{subject} #{:02} aborted: {} -> {}", e.number, reason.as_deref().unwrap_or("?"), path.display());
                break;
            }
        }
        for w in &record.meta.loop_report.warnings {
            eprintln!("warning: {w}");
        }
        if !all {
            break;
        }
    }
    Ok(())
}
