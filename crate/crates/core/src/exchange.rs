//! SPMD communication substrate: halo exchange and global reductions.
//!
//! Workers are long-lived, one per part. All cross-worker data goes through
//! the collective calls of [`Communicator`]; every worker must issue the same
//! sequence of collectives. [`ThreadComm`] moves data over point-to-point
//! channels keyed by part id; [`SerialComm`] is the single-part fallback.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::grid::HaloDescriptor;
use crate::scalar::Real;

/// Default time a worker waits inside a collective before reporting a deadlock.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Max,
    Sum,
}

impl ReduceKind {
    #[inline]
    fn combine<T: Real>(self, a: T, b: T) -> T {
        match self {
            ReduceKind::Sum => a + b,
            // NaN-propagating, unlike Float::max
            ReduceKind::Max => {
                if a.is_nan() || b.is_nan() {
                    T::nan()
                } else if b > a {
                    b
                } else {
                    a
                }
            }
        }
    }
}

/// Combines per-part values in a fixed binary tree keyed by part id:
/// `((v0 + v1) + (v2 + v3)) + ...`, level by level.
pub fn tree_reduce<T: Real>(kind: ReduceKind, values: &[T]) -> T {
    assert!(!values.is_empty());
    let mut level: Vec<T> = values.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|c| if c.len() == 2 { kind.combine(c[0], c[1]) } else { c[0] })
            .collect();
    }
    level[0]
}

/// Sequential reduction of a local slice (the per-part half of a global
/// reduction).
pub fn local_reduce<T: Real>(kind: ReduceKind, values: impl IntoIterator<Item = T>) -> T {
    let init = match kind {
        ReduceKind::Sum => T::zero(),
        ReduceKind::Max => T::neg_infinity(),
    };
    values.into_iter().fold(init, |a, b| kind.combine(a, b))
}

/// Number of collectives a worker has taken part in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommCounters {
    pub halo_exchanges: u64,
    pub reductions: u64,
    pub gathers: u64,
}

pub trait Communicator<T: Real>: Send {
    fn rank(&self) -> usize;

    fn size(&self) -> usize;

    /// Collective reduction; every part receives the identical value.
    fn global_reduce(&mut self, kind: ReduceKind, local: T) -> Result<T>;

    /// Fills the halo slots of `field` from the owning parts.
    fn halo_exchange(&mut self, field: &mut [T], topo: &HaloDescriptor) -> Result<()>;

    /// Collects `local` from every part on part 0 (`Some` on part 0 only),
    /// indexed by part id.
    fn gather(&mut self, local: &[T]) -> Result<Option<Vec<Vec<T>>>>;

    fn counters(&self) -> CommCounters;
}

/// Single-part communicator: reductions are the identity and there are no halos.
#[derive(Debug, Default)]
pub struct SerialComm {
    counters: CommCounters,
}

impl SerialComm {
    pub fn new() -> Self {
        SerialComm::default()
    }
}

impl<T: Real> Communicator<T> for SerialComm {
    fn rank(&self) -> usize {
        0
    }

    fn size(&self) -> usize {
        1
    }

    fn global_reduce(&mut self, _kind: ReduceKind, local: T) -> Result<T> {
        self.counters.reductions += 1;
        Ok(local)
    }

    fn halo_exchange(&mut self, _field: &mut [T], topo: &HaloDescriptor) -> Result<()> {
        self.counters.halo_exchanges += 1;
        if !topo.links.is_empty() {
            return Err(Error::Contract("serial communicator given a non-empty halo topology".into()));
        }
        Ok(())
    }

    fn gather(&mut self, local: &[T]) -> Result<Option<Vec<Vec<T>>>> {
        self.counters.gathers += 1;
        Ok(Some(vec![local.to_vec()]))
    }

    fn counters(&self) -> CommCounters {
        self.counters
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Halo,
    Reduce,
    Gather,
}

#[derive(Debug)]
struct Message<T> {
    op: Op,
    seq: u64,
    data: Vec<T>,
}

/// Channel-backed communicator for one worker thread of a group.
pub struct ThreadComm<T> {
    rank: usize,
    size: usize,
    to: Vec<Option<Sender<Message<T>>>>,
    from: Vec<Option<Receiver<Message<T>>>>,
    timeout: Duration,
    counters: CommCounters,
}

/// Creates one connected communicator per part.
pub fn thread_group<T: Real>(parts: usize, timeout: Duration) -> Vec<ThreadComm<T>> {
    let mut to: Vec<Vec<Option<Sender<Message<T>>>>> = (0..parts).map(|_| (0..parts).map(|_| None).collect()).collect();
    let mut from: Vec<Vec<Option<Receiver<Message<T>>>>> =
        (0..parts).map(|_| (0..parts).map(|_| None).collect()).collect();
    for src in 0..parts {
        for dst in 0..parts {
            if src != dst {
                let (tx, rx) = channel();
                to[src][dst] = Some(tx);
                from[dst][src] = Some(rx);
            }
        }
    }
    to.into_iter()
        .zip(from)
        .enumerate()
        .map(|(rank, (to, from))| ThreadComm { rank, size: parts, to, from, timeout, counters: CommCounters::default() })
        .collect()
}

impl<T: Real> ThreadComm<T> {
    fn send(&self, dst: usize, op: Op, seq: u64, data: Vec<T>) -> Result<()> {
        let tx = self.to[dst]
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("part {} has no channel to {dst}", self.rank)))?;
        tx.send(Message { op, seq, data }).map_err(|_| Error::Deadlock {
            part: self.rank,
            what: format!("part {dst} left the group before {op:?} #{seq}"),
        })
    }

    fn recv(&self, src: usize, op: Op, seq: u64) -> Result<Vec<T>> {
        let rx = self.from[src]
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("part {} has no channel from {src}", self.rank)))?;
        let msg = rx.recv_timeout(self.timeout).map_err(|e| Error::Deadlock {
            part: self.rank,
            what: match e {
                RecvTimeoutError::Timeout => format!("waiting for {op:?} #{seq} from part {src}"),
                RecvTimeoutError::Disconnected => format!("part {src} left the group before {op:?} #{seq}"),
            },
        })?;
        if msg.op != op || msg.seq != seq {
            return Err(Error::Contract(format!(
                "part {} expected {op:?} #{seq} from part {src}, received {:?} #{}",
                self.rank, msg.op, msg.seq
            )));
        }
        Ok(msg.data)
    }
}

impl<T: Real> Communicator<T> for ThreadComm<T> {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn global_reduce(&mut self, kind: ReduceKind, local: T) -> Result<T> {
        let seq = self.counters.reductions;
        self.counters.reductions += 1;
        for dst in 0..self.size {
            if dst != self.rank {
                self.send(dst, Op::Reduce, seq, vec![local])?;
            }
        }
        let mut values = vec![T::zero(); self.size];
        values[self.rank] = local;
        for src in 0..self.size {
            if src != self.rank {
                let d = self.recv(src, Op::Reduce, seq)?;
                values[src] = *d.first().ok_or_else(|| Error::Contract("empty reduction message".into()))?;
            }
        }
        Ok(tree_reduce(kind, &values))
    }

    fn halo_exchange(&mut self, field: &mut [T], topo: &HaloDescriptor) -> Result<()> {
        let seq = self.counters.halo_exchanges;
        self.counters.halo_exchanges += 1;
        if topo.part != self.rank {
            return Err(Error::Contract(format!(
                "part {} given the halo topology of part {}",
                self.rank, topo.part
            )));
        }
        for link in &topo.links {
            let mut buf = Vec::with_capacity(link.send.len());
            for &e in &link.send {
                buf.push(*field.get(e).ok_or_else(|| Error::Contract("halo send index out of range".into()))?);
            }
            self.send(link.neighbor, Op::Halo, seq, buf)?;
        }
        for link in &topo.links {
            let data = self.recv(link.neighbor, Op::Halo, seq)?;
            if data.len() != link.recv.len() {
                return Err(Error::Contract(format!(
                    "part {} expected {} halo values from part {}, got {}",
                    self.rank,
                    link.recv.len(),
                    link.neighbor,
                    data.len()
                )));
            }
            for (&e, v) in link.recv.iter().zip(data) {
                *field.get_mut(e).ok_or_else(|| Error::Contract("halo slot index out of range".into()))? = v;
            }
        }
        Ok(())
    }

    fn gather(&mut self, local: &[T]) -> Result<Option<Vec<Vec<T>>>> {
        let seq = self.counters.gathers;
        self.counters.gathers += 1;
        if self.rank != 0 {
            self.send(0, Op::Gather, seq, local.to_vec())?;
            return Ok(None);
        }
        let mut all = Vec::with_capacity(self.size);
        all.push(local.to_vec());
        for src in 1..self.size {
            all.push(self.recv(src, Op::Gather, seq)?);
        }
        Ok(Some(all))
    }

    fn counters(&self) -> CommCounters {
        self.counters
    }
}

/// Runs `f` once per part, each on its own worker thread with a connected
/// communicator, and returns the results in part order. A single part runs
/// on the calling thread with [`SerialComm`].
pub fn run_spmd<T, R, F>(parts: usize, timeout: Duration, f: F) -> Vec<R>
where
    T: Real,
    R: Send,
    F: Fn(&mut dyn Communicator<T>) -> R + Sync,
{
    assert!(parts >= 1, "at least one part is required");
    if parts == 1 {
        return vec![f(&mut SerialComm::new())];
    }
    let comms = thread_group::<T>(parts, timeout);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|mut c| {
                std::thread::Builder::new()
                    .name(format!("part-{}", c.rank))
                    .spawn_scoped(s, move || f(&mut c))
                    .expect("failed to spawn worker thread")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, halo_topology, partition_simple, CellKind, GridSpec};
    use std::thread;

    fn run_group<R: Send>(parts: usize, f: impl Fn(&mut dyn Communicator<f64>) -> R + Sync) -> Vec<R> {
        run_spmd(parts, Duration::from_secs(20), f)
    }

    #[test]
    fn max_reduce_on_two_parts() {
        let locals = [[3.0, 7.0], [1.0, 9.0]];
        let out = run_group(2, |c| {
            let l = local_reduce(ReduceKind::Max, locals[c.rank()]);
            c.global_reduce(ReduceKind::Max, l).unwrap()
        });
        assert_eq!(out, vec![9.0, 9.0]);
    }

    #[test]
    fn serial_sum_is_identity() {
        let mut c = SerialComm::new();
        assert_eq!(Communicator::<f64>::global_reduce(&mut c, ReduceKind::Sum, 0.1).unwrap(), 0.1);
    }

    #[test]
    fn sum_matches_tree_order_oracle() {
        let data: Vec<f64> = (0..1001).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 + 1.0 / (i + 1) as f64).collect();
        for parts in [1usize, 2, 3, 4, 7] {
            let chunk = data.len().div_ceil(parts);
            let pieces: Vec<Vec<f64>> = data.chunks(chunk).map(|c| c.to_vec()).collect();
            assert_eq!(pieces.len(), parts);
            let oracle = {
                let partials: Vec<f64> = pieces.iter().map(|p| p.iter().fold(0.0, |a, b| a + b)).collect();
                let mut lvl = partials;
                while lvl.len() > 1 {
                    lvl = lvl.chunks(2).map(|c| c.iter().sum()).collect();
                }
                lvl[0]
            };
            let out = run_group(parts, |c| {
                let l = local_reduce(ReduceKind::Sum, pieces[c.rank()].iter().copied());
                c.global_reduce(ReduceKind::Sum, l).unwrap()
            });
            for v in &out {
                assert_eq!(v.to_bits(), oracle.to_bits());
            }
            let serial: f64 = data.iter().sum();
            assert!((out[0] - serial).abs() < 1e-9);
        }
    }

    #[test]
    fn max_equals_serial_max_exactly() {
        let data: Vec<f64> = (0..97).map(|i| ((i * 31) % 89) as f64 - 40.5).collect();
        let serial = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = run_group(4, |c| {
            let l = local_reduce(ReduceKind::Max, data.chunks(25).nth(c.rank()).unwrap().iter().copied());
            c.global_reduce(ReduceKind::Max, l).unwrap()
        });
        assert!(out.iter().all(|&v| v == serial));
    }

    #[test]
    fn max_propagates_nan() {
        assert!(tree_reduce(ReduceKind::Max, &[1.0, f64::NAN, 2.0]).is_nan());
        assert!(local_reduce(ReduceKind::Max, [1.0, f64::NAN]).is_nan());
    }

    #[test]
    fn halo_exchange_transports_owner_values() {
        let g = build_grid(&GridSpec::new([6, 4, 4], [1.0, 1.0, 1.0])).unwrap();
        let m = partition_simple(&g, 4, [2, 2, 1]).unwrap();
        let halo = halo_topology(&m);
        let layouts: Vec<_> = (0..4).map(|p| m.local_layout(p)).collect();
        let out = run_group(4, |c| {
            let l = &layouts[c.rank()];
            let mut f = vec![-1.0; l.len()];
            for (&e, &gc) in l.owned.iter().zip(&l.global_of_owned) {
                f[e] = gc as f64;
            }
            c.halo_exchange(&mut f, &halo[c.rank()]).unwrap();
            (f, c.counters())
        });
        for (p, (f, counters)) in out.iter().enumerate() {
            assert_eq!(counters.halo_exchanges, 1);
            let l = &layouts[p];
            for e in 0..l.len() {
                if l.kinds[e] != CellKind::Outside {
                    let ijk = l.global_ijk(e);
                    let gc = g.index([ijk[0] as usize, ijk[1] as usize, ijk[2] as usize]);
                    assert_eq!(f[e], gc as f64);
                }
            }
        }
    }

    #[test]
    fn uniform_field_and_single_part() {
        let g = build_grid(&GridSpec::new([8, 1, 1], [1.0, 1.0, 1.0])).unwrap();
        let m = partition_simple(&g, 2, [2, 1, 1]).unwrap();
        let halo = halo_topology(&m);
        let layouts: Vec<_> = (0..2).map(|p| m.local_layout(p)).collect();
        let out = run_group(2, |c| {
            let l = &layouts[c.rank()];
            let mut f = vec![0.0; l.len()];
            for &e in &l.owned {
                f[e] = 5.0;
            }
            c.halo_exchange(&mut f, &halo[c.rank()]).unwrap();
            f.iter().enumerate().filter(|(e, _)| l.kinds[*e] == CellKind::Halo).map(|(_, v)| *v).collect::<Vec<_>>()
        });
        assert!(out.iter().all(|h| h.len() == 1 && h[0] == 5.0));

        let m1 = partition_simple(&g, 1, [1, 1, 1]).unwrap();
        let mut f = vec![1.0; m1.local_layout(0).len()];
        let before = f.clone();
        Communicator::<f64>::halo_exchange(&mut SerialComm::new(), &mut f, &halo_topology(&m1)[0]).unwrap();
        assert_eq!(f, before);
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let g = build_grid(&GridSpec::new([4, 1, 1], [1.0, 1.0, 1.0])).unwrap();
        let m = partition_simple(&g, 2, [2, 1, 1]).unwrap();
        let mut halo = halo_topology(&m);
        halo[1].links[0].recv.push(0);
        let out = run_group(2, |c| {
            let mut f = vec![0.0; 16];
            c.halo_exchange(&mut f, &halo[c.rank()])
        });
        assert!(matches!(out[1], Err(Error::Contract(_))));
    }

    #[test]
    fn mismatched_collectives_time_out() {
        let comms = thread_group::<f64>(2, Duration::from_millis(200));
        let out: Vec<Result<f64>> = thread::scope(|s| {
            let hs: Vec<_> = comms
                .into_iter()
                .map(|mut c| {
                    s.spawn(move || {
                        if c.rank() == 0 {
                            c.global_reduce(ReduceKind::Sum, 1.0)
                        } else {
                            // part 1 never joins; hold the channels open past the timeout
                            std::thread::sleep(Duration::from_millis(600));
                            Ok(0.0)
                        }
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(matches!(out[0], Err(Error::Deadlock { part: 0, .. })));
    }

    #[test]
    fn gather_collects_on_root() {
        let out = run_group(3, |c| {
            let r = c.rank() as f64;
            c.gather(&[r, r + 0.5]).unwrap()
        });
        assert_eq!(out[0].as_ref().unwrap(), &vec![vec![0.0, 0.5], vec![1.0, 1.5], vec![2.0, 2.5]]);
        assert!(out[1].is_none() && out[2].is_none());
    }
}
