use std::collections::BTreeMap;
use std::io::BufReader;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::time::{Duration, Instant};

use crossbeam_channel::unbounded;
use log::{debug, warn};

use super::master::{base_meta, Master};
use super::wire::{decode_frame, encode_frame, read_frame, write_frame, FrameType, WireError, WireFrame};
use super::{history_capacity, GradMsg, Mode, RunConfig, RunError, RunHooks, RunTrace, Transport};
use crate::optimizer::HyperParams;
use crate::problems::Problem;
use crate::rng::batch_seed;
use crate::staleness::{ReadMeta, Version};
use crate::vectormath::DenseVec;

/// Master-worker run over [`WireFrame`]s. The master sends each worker the
/// current parameters; the worker answers with a gradient frame stamped with
/// the version it used; the master applies it and sends that worker fresh
/// parameters. Staleness comes from the other gradients applied while a
/// request is in flight. After `K` gradients the master sends shutdown frames.
pub fn run_wire<P: Problem + ?Sized, H: RunHooks>(
    problem: &P,
    hp: &HyperParams,
    cfg: &RunConfig,
    x0: DenseVec,
    hooks: &mut H,
) -> Result<RunTrace, RunError> {
    if cfg.mode != Mode::Wire {
        return Err(RunError::Config(format!("run_wire called with mode {}", cfg.mode.name())));
    }
    match cfg.transport {
        Transport::Loopback { param_latency, grad_latency } => {
            run_loopback(problem, hp, cfg, x0, hooks, param_latency, grad_latency)
        }
        Transport::Tcp => run_tcp(problem, hp, cfg, x0, hooks),
    }
}

fn params_frame(x: &[f64], version: Version, worker: u32) -> WireFrame {
    WireFrame { msg_type: FrameType::Params, version: version as u64, worker_id: worker, payload: x.to_vec() }
}

fn grad_msg(frame: WireFrame, seed: u64) -> GradMsg {
    let n = frame.payload.len();
    GradMsg {
        g: DenseVec::from(frame.payload),
        read_meta: ReadMeta::consistent(frame.version as Version, n),
        worker_id: frame.worker_id,
        batch_seed: seed,
    }
}

fn worker_gradient<P: Problem + ?Sized>(
    problem: &P,
    cfg: &RunConfig,
    frame: &WireFrame,
    counter: &mut u64,
) -> Result<WireFrame, String> {
    let seed = batch_seed(cfg.master_seed, frame.worker_id, *counter);
    *counter += 1;
    let g = problem.minibatch_grad(&frame.payload, cfg.batch_size, seed).map_err(|e| e.to_string())?;
    Ok(WireFrame {
        msg_type: FrameType::Gradient,
        version: frame.version,
        worker_id: frame.worker_id,
        payload: g.into_inner(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dest {
    Master,
    Worker(u32),
}

/// Deterministic in-process network: frames are delivered in order of
/// `(tick, send order)`.
struct Loopback {
    queue: BTreeMap<(u64, u64), (Dest, Vec<u8>)>,
    seq: u64,
}

impl Loopback {
    fn send(&mut self, at: u64, to: Dest, frame: &WireFrame) -> Result<(), WireError> {
        let bytes = encode_frame(frame)?;
        self.queue.insert((at, self.seq), (to, bytes));
        self.seq += 1;
        Ok(())
    }
}

fn run_loopback<P: Problem + ?Sized, H: RunHooks>(
    problem: &P,
    hp: &HyperParams,
    cfg: &RunConfig,
    x0: DenseVec,
    hooks: &mut H,
    param_latency: u64,
    grad_latency: u64,
) -> Result<RunTrace, RunError> {
    let n = problem.dim();
    let w_count = cfg.workers as u32;
    let mut master = Master::new(problem, hp, cfg, x0, history_capacity(&cfg.policy, 0), false, hooks)?;
    let mut net = Loopback { queue: BTreeMap::new(), seq: 0 };
    let mut worker_counters = vec![0u64; cfg.workers];
    let mut master_counters = vec![0u64; cfg.workers];
    let mut exited = vec![None::<u64>; cfg.workers];
    let (mut produced, mut unconsumed, mut transport_drops) = (0u64, 0u64, 0u64);
    let mut shutdown_at = None;

    // staggered start: worker w gets its first parameters at tick w + latency
    for w in 0..w_count {
        let f = params_frame(&master.state.x, master.history.current_version(), w);
        net.send(w as u64 + param_latency, Dest::Worker(w), &f)?;
    }
    if master.done() {
        for w in 0..w_count {
            net.send(param_latency, Dest::Worker(w), &WireFrame::shutdown(w))?;
        }
        shutdown_at = Some(0);
    }

    while let Some(((tick, _), (dest, bytes))) = net.queue.pop_first() {
        match dest {
            Dest::Worker(w) => {
                let frame = decode_frame(&bytes)?;
                match frame.msg_type {
                    FrameType::Params => {
                        let reply = worker_gradient(problem, cfg, &frame, &mut worker_counters[w as usize])
                            .map_err(|msg| RunError::Worker { worker: w, msg })?;
                        produced += 1;
                        net.send(tick + grad_latency, Dest::Master, &reply)?;
                    }
                    FrameType::Shutdown => exited[w as usize] = Some(tick),
                    FrameType::Gradient => {
                        return Err(RunError::Transport(format!("worker {w} received a gradient frame")));
                    }
                }
            }
            Dest::Master => {
                let frame = match decode_frame(&bytes) {
                    Ok(f) if f.msg_type == FrameType::Gradient && f.worker_id < w_count => f,
                    Ok(f) => {
                        return Err(RunError::Transport(format!(
                            "master received unexpected {:?} frame from worker {}",
                            f.msg_type, f.worker_id
                        )))
                    }
                    Err(e) => {
                        warn!("dropping undecodable frame: {e}");
                        transport_drops += 1;
                        continue;
                    }
                };
                if master.done() {
                    unconsumed += 1;
                    continue;
                }
                let w = frame.worker_id;
                let seed = batch_seed(cfg.master_seed, w, master_counters[w as usize]);
                master_counters[w as usize] += 1;
                master.handle(grad_msg(frame, seed))?;
                if master.done() {
                    for v in 0..w_count {
                        net.send(tick + param_latency, Dest::Worker(v), &WireFrame::shutdown(v))?;
                    }
                    shutdown_at = Some(tick);
                } else {
                    let f = params_frame(&master.state.x, master.history.current_version(), w);
                    net.send(tick + param_latency, Dest::Worker(w), &f)?;
                }
            }
        }
    }

    if let Some(w) = exited.iter().position(|e| e.is_none()) {
        return Err(RunError::Transport(format!("worker {w} never received shutdown")));
    }
    let last_exit = exited.iter().flatten().copied().max().unwrap_or(0);
    let mut meta = base_meta(cfg, hp, n);
    meta.push(("transport".into(), format!("loopback(param_latency={param_latency}, grad_latency={grad_latency})")));
    meta.push(("shutdown_ticks".into(), (last_exit - shutdown_at.unwrap_or(0)).to_string()));
    Ok(master.finish(produced, unconsumed, transport_drops, meta))
}

enum Inbound {
    Frame(u32, Result<WireFrame, WireError>),
    Closed(u32),
}

fn tcp_worker<P: Problem + ?Sized>(problem: &P, cfg: &RunConfig, addr: std::net::SocketAddr) -> Result<u64, String> {
    let stream = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    stream.set_nodelay(true).map_err(|e| e.to_string())?;
    let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
    let mut reader = BufReader::new(stream);
    let mut counter = 0u64;
    loop {
        let frame = match read_frame(&mut reader).map_err(|e| e.to_string())? {
            Some(f) => f,
            None => return Ok(counter),
        };
        match frame.msg_type {
            FrameType::Params => {
                let reply = worker_gradient(problem, cfg, &frame, &mut counter)?;
                if write_frame(&mut writer, &reply).is_err() {
                    return Ok(counter);
                }
            }
            FrameType::Shutdown => return Ok(counter),
            FrameType::Gradient => return Err("worker received a gradient frame".into()),
        }
    }
}

fn accept_all(listener: &TcpListener, count: usize, timeout: Duration) -> Result<Vec<TcpStream>, RunError> {
    let transport = |e: std::io::Error| RunError::Transport(e.to_string());
    listener.set_nonblocking(true).map_err(transport)?;
    let deadline = Instant::now() + timeout;
    let mut streams = Vec::with_capacity(count);
    while streams.len() < count {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false).map_err(transport)?;
                s.set_nodelay(true).map_err(transport)?;
                streams.push(s);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() > deadline {
                    return Err(RunError::Transport(format!("only {} of {count} workers connected", streams.len())));
                }
                std::thread::sleep(Duration::from_millis(1));
            }
            Err(e) => return Err(transport(e)),
        }
    }
    Ok(streams)
}

fn run_tcp<P: Problem + ?Sized, H: RunHooks>(
    problem: &P,
    hp: &HyperParams,
    cfg: &RunConfig,
    x0: DenseVec,
    hooks: &mut H,
) -> Result<RunTrace, RunError> {
    let n = problem.dim();
    let mut master = Master::new(problem, hp, cfg, x0, history_capacity(&cfg.policy, 0), true, hooks)?;
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| RunError::Transport(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| RunError::Transport(e.to_string()))?;
    let (tx, rx) = unbounded::<Inbound>();
    let mut master_counters = vec![0u64; cfg.workers];

    let (outcome, produced, unconsumed, drops) = std::thread::scope(|s| {
        let workers: Vec<_> = (0..cfg.workers).map(|_| s.spawn(move || tcp_worker(problem, cfg, addr))).collect();
        let mut writers = Vec::new();
        let mut unconsumed = 0u64;
        let mut drops = 0u64;
        let mut outcome: Result<(), RunError> = (|| {
            let streams = accept_all(&listener, cfg.workers, Duration::from_secs(10))?;
            for (id, stream) in streams.into_iter().enumerate() {
                let id = id as u32;
                let reader_stream = stream.try_clone().map_err(|e| RunError::Transport(e.to_string()))?;
                let tx = tx.clone();
                s.spawn(move || {
                    let mut r = BufReader::new(reader_stream);
                    loop {
                        match read_frame(&mut r) {
                            Ok(Some(f)) => {
                                if tx.send(Inbound::Frame(id, Ok(f))).is_err() {
                                    break;
                                }
                            }
                            Ok(None) => break,
                            Err(e) => {
                                let fatal = matches!(e, WireError::Io(_) | WireError::Truncated { .. });
                                let _ = tx.send(Inbound::Frame(id, Err(e)));
                                if fatal {
                                    break;
                                }
                            }
                        }
                    }
                    let _ = tx.send(Inbound::Closed(id));
                });
                writers.push(stream);
            }
            for (id, w) in writers.iter_mut().enumerate() {
                let f = params_frame(&master.state.x, master.history.current_version(), id as u32);
                write_frame(w, &f)?;
            }
            while !master.done() {
                match rx.recv() {
                    Ok(Inbound::Frame(id, Ok(frame))) => {
                        if frame.msg_type != FrameType::Gradient || frame.worker_id != id {
                            return Err(RunError::Transport(format!("unexpected frame from worker {id}")));
                        }
                        let seed = batch_seed(cfg.master_seed, id, master_counters[id as usize]);
                        master_counters[id as usize] += 1;
                        master.handle(grad_msg(frame, seed))?;
                        if !master.done() {
                            let f = params_frame(&master.state.x, master.history.current_version(), id);
                            write_frame(&mut writers[id as usize], &f)?;
                        }
                    }
                    Ok(Inbound::Frame(id, Err(e))) => {
                        warn!("worker {id}: dropping bad frame: {e}");
                        drops += 1;
                        // the worker is waiting for parameters; resend them
                        let f = params_frame(&master.state.x, master.history.current_version(), id);
                        write_frame(&mut writers[id as usize], &f)?;
                    }
                    Ok(Inbound::Closed(id)) => {
                        return Err(RunError::Transport(format!("worker {id} disconnected")));
                    }
                    Err(_) => return Err(RunError::Transport("all connections closed".into())),
                }
            }
            Ok(())
        })();
        for (id, w) in writers.iter_mut().enumerate() {
            if write_frame(w, &WireFrame::shutdown(id as u32)).is_err() || outcome.is_err() {
                let _ = w.shutdown(Shutdown::Both);
            }
        }
        drop(tx);
        let mut closed = 0;
        while closed < writers.len() {
            match rx.recv() {
                Ok(Inbound::Frame(_, Ok(_))) => unconsumed += 1,
                Ok(Inbound::Frame(_, Err(_))) => drops += 1,
                Ok(Inbound::Closed(_)) => closed += 1,
                Err(_) => break,
            }
        }
        let mut produced = 0u64;
        for (id, h) in workers.into_iter().enumerate() {
            match h.join() {
                Ok(Ok(c)) => produced += c,
                Ok(Err(msg)) => {
                    if outcome.is_ok() {
                        outcome = Err(RunError::Worker { worker: id as u32, msg });
                    }
                }
                Err(_) => {
                    if outcome.is_ok() {
                        outcome = Err(RunError::Worker { worker: id as u32, msg: "panicked".into() });
                    }
                }
            }
        }
        debug!("tcp run finished: produced {produced}, unconsumed {unconsumed}");
        (outcome, produced, unconsumed, drops)
    });
    outcome?;
    let mut meta = base_meta(cfg, hp, n);
    meta.push(("transport".into(), "tcp".into()));
    let mut trace = master.finish(produced, unconsumed, drops, meta);
    let throughput = trace.throughput();
    trace.push_meta("throughput_per_s", format!("{throughput:.1}"));
    Ok(trace)
}
