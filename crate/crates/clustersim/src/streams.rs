//! Stream-register address generators: 4-level affine patterns with an
//! element repeat count, a prefetch queue on read streams and a drain queue
//! on the writeback stream. One memory request per stream unit per cycle at
//! most, so a core never exceeds its 3 TCDM ports.

use crate::SimError;

/// One affine dimension: `bound` iterations advancing the address by
/// `stride` bytes each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamDim {
    pub bound: u32,
    pub stride: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDir {
    Read,
    Write,
}

/// A 4-level affine address pattern. `dims[0]` is the fastest-varying
/// level. `repeat` presents each generated element that many times to the
/// consuming register before advancing; the element is fetched once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamConfig {
    pub base: u64,
    pub dims: [StreamDim; 4],
    pub dir: StreamDir,
    pub repeat: u32,
}

impl StreamConfig {
    pub fn new(base: u64, dims: &[StreamDim], dir: StreamDir, repeat: u32) -> Self {
        let mut d = [StreamDim { bound: 1, stride: 0 }; 4];
        d[..dims.len()].copy_from_slice(dims);
        StreamConfig {
            base,
            dims: d,
            dir,
            repeat: repeat.max(1),
        }
    }

    /// Unique addresses generated (before repetition).
    pub fn unique_elements(&self) -> u64 {
        self.dims.iter().map(|d| d.bound as u64).product()
    }

    /// Elements observed by the consumer: repeat x product of bounds.
    pub fn total_elements(&self) -> u64 {
        self.unique_elements() * self.repeat as u64
    }

    fn addr_at(&self, idx: &[u32; 4]) -> u64 {
        let mut addr = self.base as i64;
        for (d, i) in self.dims.iter().zip(idx.iter()) {
            addr += d.stride * *i as i64;
        }
        addr as u64
    }

    /// Validate every generated address against a word-aligned region.
    /// Configuration errors surface at setup time, never mid-run.
    pub fn validate(&self, range_start: u64, range_end: u64) -> Result<(), SimError> {
        if self.dims.iter().any(|d| d.bound == 0) {
            return Err(SimError::Config("stream dimension with zero bound".into()));
        }
        for addr in self.unique_addresses() {
            if addr % 8 != 0 {
                return Err(SimError::Config(format!(
                    "stream address {addr:#x} is not 8-byte aligned"
                )));
            }
            if addr < range_start || addr + 8 > range_end {
                return Err(SimError::Config(format!(
                    "stream address {addr:#x} outside [{range_start:#x}, {range_end:#x})"
                )));
            }
        }
        Ok(())
    }

    /// Iterator over unique addresses in generation order.
    pub fn unique_addresses(&self) -> impl Iterator<Item = u64> + '_ {
        let bounds = self.dims.map(|d| d.bound);
        let total = self.unique_elements();
        let mut idx = [0u32; 4];
        let mut n = 0u64;
        std::iter::from_fn(move || {
            if n == total {
                return None;
            }
            let addr = self.addr_at(&idx);
            n += 1;
            for d in 0..4 {
                idx[d] += 1;
                if idx[d] < bounds[d] {
                    break;
                }
                idx[d] = 0;
            }
            Some(addr)
        })
    }
}

/// Access attempt a stream posts to the memory subsystem this cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamRequest {
    pub addr: u64,
    pub is_write: bool,
    /// Data for writes in functional mode.
    pub data: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    data: Option<u64>,
    /// First cycle the element may be consumed (grant cycle + 1, modeling
    /// the single-cycle SRAM access).
    avail: u64,
    presented: u32,
}

/// A read stream: walks the pattern fetching one unique element per
/// request, holds up to `depth` fetched elements, and presents each
/// `repeat` times.
#[derive(Debug)]
pub struct ReadStream {
    cfg: StreamConfig,
    depth: usize,
    /// Per-dimension counters of the next element to fetch.
    fetch_idx: [u32; 4],
    fetched: u64,
    queue: Vec<QueueEntry>,
    /// Request issued this cycle and not yet resolved.
    pending: Option<u64>,
    consumed: u64,
}

impl ReadStream {
    pub fn new(cfg: StreamConfig, depth: usize) -> Self {
        assert_eq!(cfg.dir, StreamDir::Read);
        ReadStream {
            cfg,
            depth,
            fetch_idx: [0; 4],
            fetched: 0,
            queue: Vec::new(),
            pending: None,
            consumed: 0,
        }
    }

    pub fn total_elements(&self) -> u64 {
        self.cfg.total_elements()
    }

    pub fn done(&self) -> bool {
        self.consumed == self.cfg.total_elements()
    }

    /// The request this stream wants to post this cycle, if any.
    pub fn gen_request(&mut self) -> Option<StreamRequest> {
        if let Some(addr) = self.pending {
            // Arbitration loser: re-issue the identical request.
            return Some(StreamRequest {
                addr,
                is_write: false,
                data: None,
            });
        }
        if self.fetched == self.cfg.unique_elements() {
            return None;
        }
        if self.queue.len() >= self.depth {
            return None;
        }
        let addr = self.cfg.addr_at(&self.fetch_idx);
        self.pending = Some(addr);
        Some(StreamRequest {
            addr,
            is_write: false,
            data: None,
        })
    }

    pub fn on_grant(&mut self, now: u64, data: Option<u64>) {
        assert!(self.pending.is_some(), "grant for an unissued request");
        self.pending = None;
        self.queue.push(QueueEntry {
            data,
            avail: now + 1,
            presented: 0,
        });
        self.fetched += 1;
        let bounds = self.cfg.dims.map(|d| d.bound);
        for d in 0..4 {
            self.fetch_idx[d] += 1;
            if self.fetch_idx[d] < bounds[d] {
                break;
            }
            self.fetch_idx[d] = 0;
        }
    }

    pub fn on_conflict(&mut self) {
        assert!(self.pending.is_some(), "conflict for an unissued request");
        // pending stays set; gen_request re-issues the same address.
    }

    /// Whether the consuming FPU can pop one element this cycle.
    pub fn data_ready(&self, now: u64) -> bool {
        self.queue.first().map_or(false, |e| e.avail <= now)
    }

    pub fn consume(&mut self, now: u64) -> Option<u64> {
        debug_assert!(self.data_ready(now));
        let front = self.queue.first_mut().expect("consume from empty stream");
        let data = front.data;
        front.presented += 1;
        if front.presented == self.cfg.repeat {
            self.queue.remove(0);
        }
        self.consumed += 1;
        data
    }
}

/// The writeback stream: values arrive from the FPU (already delayed by the
/// pipeline latency), drain in order, and retry on conflicts.
#[derive(Debug)]
pub struct WriteStream {
    cfg: StreamConfig,
    depth: usize,
    addr_idx: [u32; 4],
    issued: u64,
    queue: Vec<(Option<u64>, u64)>,
    pending: Option<StreamRequest>,
}

impl WriteStream {
    pub fn new(cfg: StreamConfig, depth: usize) -> Self {
        assert_eq!(cfg.dir, StreamDir::Write);
        assert_eq!(cfg.repeat, 1, "writeback streams do not repeat elements");
        WriteStream {
            cfg,
            depth,
            addr_idx: [0; 4],
            issued: 0,
            queue: Vec::new(),
            pending: None,
        }
    }

    pub fn total_elements(&self) -> u64 {
        self.cfg.total_elements()
    }

    /// Room for another FPU result? Gates compute issue (WbBlocked).
    pub fn can_accept(&self) -> bool {
        self.queue.len() < self.depth
    }

    /// FPU hands over a produced value, consumable by memory from `ready`.
    pub fn push_value(&mut self, data: Option<u64>, ready: u64) {
        assert!(self.can_accept());
        self.queue.push((data, ready));
    }

    pub fn drained(&self) -> bool {
        self.queue.is_empty() && self.pending.is_none()
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn gen_request(&mut self, now: u64) -> Option<StreamRequest> {
        if let Some(req) = self.pending {
            return Some(req);
        }
        let (data, ready) = *self.queue.first()?;
        if ready > now {
            return None;
        }
        let addr = self.cfg.addr_at(&self.addr_idx);
        let req = StreamRequest {
            addr,
            is_write: true,
            data,
        };
        self.pending = Some(req);
        Some(req)
    }

    pub fn on_grant(&mut self) {
        assert!(self.pending.is_some(), "grant for an unissued request");
        self.pending = None;
        self.queue.remove(0);
        self.issued += 1;
        let bounds = self.cfg.dims.map(|d| d.bound);
        for d in 0..4 {
            self.addr_idx[d] += 1;
            if self.addr_idx[d] < bounds[d] {
                break;
            }
            self.addr_idx[d] = 0;
        }
    }

    pub fn on_conflict(&mut self) {
        assert!(self.pending.is_some(), "conflict for an unissued request");
    }
}
