use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{parse_line, to_line, DetectorDescriptor, Message, WireItem};
use super::{ProtocolError, DEFAULT_HANDSHAKE_TIMEOUT, PROTOCOL_ENV, PROTOCOL_VERSION};

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub handshake_timeout: Duration,
    pub batch_timeout: Duration,
    pub shutdown_grace: Duration,
    pub stderr_tail_lines: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            batch_timeout: Duration::from_secs(120),
            shutdown_grace: Duration::from_secs(5),
            stderr_tail_lines: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShutdownOutcome {
    /// The process exited on its own within the grace period.
    Exited(Option<i32>),
    /// The grace period ran out and the process was killed.
    Killed,
    /// Nothing to do; the session was already closed.
    AlreadyClosed,
}

enum ReadEvent {
    Line(String),
    Eof,
    Failed(std::io::Error),
}

#[derive(Default)]
struct StderrTail {
    lines: Mutex<VecDeque<String>>,
    done: AtomicBool,
}

impl StderrTail {
    fn text(&self) -> String {
        let lines = self.lines.lock().unwrap_or_else(|e| e.into_inner());
        lines.iter().cloned().collect::<Vec<_>>().join("\n")
    }
}

/// One detector child process speaking the line protocol. At most one batch
/// is in flight at a time.
pub struct DetectorSession {
    command: String,
    config: SessionConfig,
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    lines: Receiver<ReadEvent>,
    stderr: Arc<StderrTail>,
    descriptor: Option<DetectorDescriptor>,
    next_batch: u64,
}

impl DetectorSession {
    /// Starts `command` (split with POSIX shell quoting rules). The
    /// environment is inherited, plus `SIDBENCH_PROTOCOL=1`.
    pub fn spawn(command: &str, config: SessionConfig) -> Result<Self, ProtocolError> {
        let argv = shlex::split(command).ok_or(ProtocolError::EmptyCommand)?;
        let (program, args) = argv.split_first().ok_or(ProtocolError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .env(PROTOCOL_ENV, PROTOCOL_VERSION.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| ProtocolError::Spawn {
                command: command.to_string(),
                source,
            })?;

        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let stderr = child.stderr.take().expect("stderr is piped");

        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("detector-stdout".into())
            .spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    let mut line = String::new();
                    let event = match reader.read_line(&mut line) {
                        Ok(0) => ReadEvent::Eof,
                        Ok(_) => ReadEvent::Line(line),
                        Err(e) => ReadEvent::Failed(e),
                    };
                    let stop = !matches!(event, ReadEvent::Line(_));
                    if tx.send(event).is_err() || stop {
                        break;
                    }
                }
            })?;

        let tail = Arc::new(StderrTail::default());
        let tail_writer = Arc::clone(&tail);
        let keep = config.stderr_tail_lines.max(1);
        let label = command.to_string();
        thread::Builder::new()
            .name("detector-stderr".into())
            .spawn(move || {
                let reader = BufReader::new(stderr);
                for line in reader.lines() {
                    let Ok(line) = line else { break };
                    log::debug!("[{label}] {line}");
                    let mut lines = tail_writer.lines.lock().unwrap_or_else(|e| e.into_inner());
                    if lines.len() == keep {
                        lines.pop_front();
                    }
                    lines.push_back(line);
                }
                tail_writer.done.store(true, Ordering::SeqCst);
            })?;

        Ok(Self {
            command: command.to_string(),
            config,
            child: Some(child),
            stdin,
            lines: rx,
            stderr: tail,
            descriptor: None,
            next_batch: 1,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn descriptor(&self) -> Option<&DetectorDescriptor> {
        self.descriptor.as_ref()
    }

    pub fn is_open(&self) -> bool {
        self.child.is_some()
    }

    pub fn stderr_tail(&self) -> String {
        self.stderr.text()
    }

    /// Sends `hello` and validates the `hello_ack` descriptor.
    pub fn handshake(&mut self) -> Result<DetectorDescriptor, ProtocolError> {
        self.send(&Message::Hello {
            protocol_version: PROTOCOL_VERSION,
        })?;
        let reply = self.recv("handshake", self.config.handshake_timeout)?;
        let descriptor = match reply {
            Message::HelloAck(d) => d,
            Message::Error { message } => return Err(ProtocolError::Detector(message)),
            other => {
                return Err(ProtocolError::UnexpectedType {
                    expected: "hello_ack",
                    got: other.type_name().to_string(),
                })
            }
        };
        descriptor.validate()?;
        self.descriptor = Some(descriptor.clone());
        Ok(descriptor)
    }

    /// Scores one batch and returns the scores in request order.
    pub fn score_batch(&mut self, items: &[WireItem], preprocessed: bool) -> Result<Vec<f64>, ProtocolError> {
        let mut position = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if position.insert(item.id.as_str(), i).is_some() {
                return Err(ProtocolError::DuplicateRequestId(item.id.clone()));
            }
        }
        let batch_id = self.next_batch;
        self.next_batch += 1;
        self.send(&Message::Score {
            batch_id,
            items: items.to_vec(),
            preprocessed,
        })?;

        let reply = self.recv("score", self.config.batch_timeout)?;
        let (received, scores) = match reply {
            Message::Scores { batch_id, scores } => (batch_id, scores),
            Message::Error { message } => return Err(ProtocolError::Detector(message)),
            other => {
                return Err(ProtocolError::UnexpectedType {
                    expected: "scores",
                    got: other.type_name().to_string(),
                })
            }
        };
        if received != batch_id {
            return Err(ProtocolError::BatchIdMismatch {
                sent: batch_id,
                received,
            });
        }

        let mut out: Vec<Option<f64>> = vec![None; items.len()];
        for s in scores {
            let Some(&i) = position.get(s.id.as_str()) else {
                return Err(ProtocolError::ExtraId(s.id));
            };
            if out[i].is_some() {
                return Err(ProtocolError::DuplicateId(s.id));
            }
            if !s.score.0.is_finite() {
                return Err(ProtocolError::NonFiniteScore(s.id));
            }
            out[i] = Some(s.score.0);
        }
        out.into_iter()
            .zip(items)
            .map(|(score, item)| score.ok_or_else(|| ProtocolError::MissingId(item.id.clone())))
            .collect()
    }

    /// Asks the detector to exit, waits up to the grace period, then kills
    /// it. Calling this again is a no-op.
    pub fn shutdown(&mut self) -> ShutdownOutcome {
        let Some(mut child) = self.child.take() else {
            return ShutdownOutcome::AlreadyClosed;
        };
        if let Some(mut stdin) = self.stdin.take() {
            let _ = stdin.write_all(to_line(&Message::Shutdown).as_bytes());
            let _ = stdin.flush();
        }
        let deadline = Instant::now() + self.config.shutdown_grace;
        loop {
            match child.try_wait() {
                Ok(Some(status)) => return ShutdownOutcome::Exited(status.code()),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => break,
            }
        }
        let _ = child.kill();
        let _ = child.wait();
        ShutdownOutcome::Killed
    }

    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let line = to_line(msg);
        let result = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|()| stdin.flush()),
            None => return Err(ProtocolError::Closed),
        };
        match result {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Err(self.exited()),
            Err(e) => Err(e.into()),
        }
    }

    fn recv(&mut self, phase: &'static str, timeout: Duration) -> Result<Message, ProtocolError> {
        if self.child.is_none() {
            return Err(ProtocolError::Closed);
        }
        match self.lines.recv_timeout(timeout) {
            Ok(ReadEvent::Line(line)) => parse_line(&line),
            Ok(ReadEvent::Eof) | Err(RecvTimeoutError::Disconnected) => Err(self.exited()),
            Ok(ReadEvent::Failed(e)) => {
                self.kill();
                Err(e.into())
            }
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(ProtocolError::Timeout {
                    phase,
                    secs: timeout.as_secs_f64(),
                })
            }
        }
    }

    /// Reaps a child that closed its stdout and packages its exit status
    /// with the stderr tail.
    fn exited(&mut self) -> ProtocolError {
        let status = match self.child.take() {
            Some(mut child) => {
                self.stdin = None;
                let deadline = Instant::now() + Duration::from_secs(1);
                let status = loop {
                    match child.try_wait() {
                        Ok(Some(status)) => break Some(status),
                        Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                        _ => break None,
                    }
                };
                match status {
                    Some(s) => s.to_string(),
                    None => {
                        let _ = child.kill();
                        let _ = child.wait();
                        "closed stdout; killed".to_string()
                    }
                }
            }
            None => "already closed".to_string(),
        };
        let deadline = Instant::now() + Duration::from_millis(500);
        while !self.stderr.done.load(Ordering::SeqCst) && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(5));
        }
        ProtocolError::Exited {
            status,
            stderr_tail: self.stderr.text(),
        }
    }

    fn kill(&mut self) {
        self.stdin = None;
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Drop for DetectorSession {
    fn drop(&mut self) {
        if self.child.is_some() {
            self.config.shutdown_grace = self.config.shutdown_grace.min(Duration::from_secs(1));
            self.shutdown();
        }
    }
}
