//! Single-issue core + FPU pipeline model. The control core dispatches one
//! instruction per cycle into the sequencer (loop configurations are
//! consumed zero-width); the issue slot executes the expanded instruction
//! stream in order, gating compute on stream readiness, RAW hazards against
//! in-flight FPU destinations, and writeback-queue space.

use crate::isa::{Instruction, InstrKind, StreamId};
use crate::memory::{MemRequest, Outcome};
use crate::sequencer::{PushOutcome, SeqTraceRecord, Sequencer};
use crate::streams::{ReadStream, StreamConfig, StreamRequest, WriteStream};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StallReason {
    None,
    StreamStarved,
    Raw,
    WbBlocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleOutcome {
    IssuedCompute,
    /// Setup instructions (SSR configuration and similar).
    IssuedSetup,
    /// Integer loop-management instruction.
    IssuedIntLoop,
    /// Dead cycle after a taken branch.
    BranchPenalty,
    Stall(StallReason),
    /// Program drained; waiting for the cluster.
    Idle,
}

#[derive(Debug, Clone, Copy)]
pub struct CoreParams {
    pub fpu_latency: u32,
    pub read_queue_depth: usize,
    pub wb_queue_depth: usize,
    pub branch_penalty: u32,
    pub rb_capacity: usize,
    pub max_nest_depth: usize,
}

impl Default for CoreParams {
    fn default() -> Self {
        CoreParams {
            fpu_latency: 3,
            read_queue_depth: 4,
            wb_queue_depth: 4,
            branch_penalty: 1,
            rb_capacity: 32,
            max_nest_depth: 2,
        }
    }
}

/// A per-tile program for one core: the dynamic instruction stream plus the
/// three stream configurations.
#[derive(Debug, Clone)]
pub struct CoreProgram {
    pub instrs: Vec<Instruction>,
    pub s0: Option<StreamConfig>,
    pub s1: Option<StreamConfig>,
    pub s2: Option<StreamConfig>,
}

pub struct CoreState {
    pub id: u8,
    params: CoreParams,
    seq: Sequencer,
    program: Vec<Instruction>,
    pc: usize,
    s0: Option<ReadStream>,
    s1: Option<ReadStream>,
    s2: Option<WriteStream>,
    /// Cycle from which each FP register's value is forwardable.
    acc_ready: [u64; 32],
    acc_value: [f64; 32],
    branch_stall: u32,
    functional: bool,
    pub last_stall: StallReason,
    /// Filled when sequencer tracing is enabled.
    pub seq_trace: Option<Vec<(u64, SeqTraceRecord)>>,
}

impl CoreState {
    pub fn new(id: u8, params: CoreParams, functional: bool) -> Self {
        CoreState {
            id,
            params,
            seq: Sequencer::new(params.rb_capacity, params.max_nest_depth),
            program: Vec::new(),
            pc: 0,
            s0: None,
            s1: None,
            s2: None,
            acc_ready: [0; 32],
            acc_value: [0.0; 32],
            branch_stall: 0,
            functional,
            last_stall: StallReason::None,
            seq_trace: None,
        }
    }

    /// Load the next tile's program. The sequencer must be drained
    /// (completed nests free their slots immediately).
    pub fn load_program(&mut self, prog: CoreProgram) -> Result<(), SimError> {
        if !self.seq.is_drained() {
            return Err(SimError::Fault(format!(
                "core {}: program load while sequencer busy",
                self.id
            )));
        }
        self.program = prog.instrs;
        self.pc = 0;
        self.s0 = prog
            .s0
            .map(|c| ReadStream::new(c, self.params.read_queue_depth));
        self.s1 = prog
            .s1
            .map(|c| ReadStream::new(c, self.params.read_queue_depth));
        self.s2 = prog
            .s2
            .map(|c| WriteStream::new(c, self.params.wb_queue_depth));
        Ok(())
    }

    /// Program fully issued, writeback drained, streams exhausted.
    pub fn done(&self) -> bool {
        self.pc == self.program.len()
            && self.seq.is_drained()
            && self.branch_stall == 0
            && self.s2.as_ref().map_or(true, |s| s.drained())
            && self.s0.as_ref().map_or(true, |s| s.done())
            && self.s1.as_ref().map_or(true, |s| s.done())
    }

    fn read_stream(&self, id: StreamId) -> Option<&ReadStream> {
        match id {
            StreamId::S0 => self.s0.as_ref(),
            StreamId::S1 => self.s1.as_ref(),
            StreamId::S2 => None,
        }
    }

    fn read_stream_mut(&mut self, id: StreamId) -> Option<&mut ReadStream> {
        match id {
            StreamId::S0 => self.s0.as_mut(),
            StreamId::S1 => self.s1.as_mut(),
            StreamId::S2 => None,
        }
    }

    /// Dispatch stage: feed the sequencer. Any number of loop
    /// configurations plus at most one buffered instruction per cycle.
    fn dispatch(&mut self) -> Result<(), SimError> {
        let mut pushed_body = false;
        while self.pc < self.program.len() {
            let inst = self.program[self.pc];
            if inst.bypasses_sequencer() {
                break;
            }
            if inst.kind == InstrKind::FrepCfg {
                match self.seq.push(&inst)? {
                    PushOutcome::Accepted => {
                        self.pc += 1;
                        continue;
                    }
                    PushOutcome::Stall => break,
                    PushOutcome::Bypassed => unreachable!(),
                }
            }
            if pushed_body {
                break;
            }
            match self.seq.push(&inst)? {
                PushOutcome::Accepted => {
                    self.pc += 1;
                    pushed_body = true;
                }
                PushOutcome::Stall => break,
                PushOutcome::Bypassed => unreachable!(),
            }
        }
        Ok(())
    }

    /// Advance one cycle: at most one issue-slot outcome.
    pub fn step(&mut self, now: u64) -> Result<CycleOutcome, SimError> {
        self.last_stall = StallReason::None;
        if self.branch_stall > 0 {
            self.branch_stall -= 1;
            return Ok(CycleOutcome::BranchPenalty);
        }
        self.dispatch()?;

        if let Some(inst) = self.seq.peek().copied() {
            // Gate: every source stream must have a consumable element.
            for s in inst.reads_streams.iter() {
                let ready = self
                    .read_stream(s)
                    .ok_or_else(|| {
                        SimError::Fault(format!("core {}: read of unconfigured stream", self.id))
                    })?
                    .data_ready(now);
                if !ready {
                    self.last_stall = StallReason::StreamStarved;
                    return Ok(CycleOutcome::Stall(StallReason::StreamStarved));
                }
            }
            if let Some(src) = inst.src_acc {
                if now < self.acc_ready[src as usize] {
                    self.last_stall = StallReason::Raw;
                    return Ok(CycleOutcome::Stall(StallReason::Raw));
                }
            }
            if inst.writes_stream.is_some() {
                let ok = self.s2.as_ref().map_or(false, |s| s.can_accept());
                if !ok {
                    self.last_stall = StallReason::WbBlocked;
                    return Ok(CycleOutcome::Stall(StallReason::WbBlocked));
                }
            }

            // Issue.
            let (issued, rec) = self
                .seq
                .step_traced()
                .expect("peeked instruction must issue");
            debug_assert_eq!(issued.tag, inst.tag);
            if let Some(trace) = self.seq_trace.as_mut() {
                trace.push((now, rec));
            }
            let mut a = 0.0f64;
            let mut b = 0.0f64;
            for s in inst.reads_streams.iter() {
                let bits = self
                    .read_stream_mut(s)
                    .expect("gated stream")
                    .consume(now);
                if self.functional {
                    let v = f64::from_bits(bits.expect("functional stream data"));
                    match s {
                        StreamId::S0 => a = v,
                        StreamId::S1 => b = v,
                        StreamId::S2 => unreachable!(),
                    }
                }
            }
            if inst.is_fp_compute() {
                let result = if self.functional {
                    match inst.op {
                        crate::isa::FpOp::Fmul => a * b,
                        crate::isa::FpOp::Fmadd => {
                            let acc = inst.src_acc.map(|r| self.acc_value[r as usize]).unwrap_or(0.0);
                            a.mul_add(b, acc)
                        }
                        crate::isa::FpOp::Nop => 0.0,
                    }
                } else {
                    0.0
                };
                if let Some(dst) = inst.dst_acc {
                    self.acc_ready[dst as usize] = now + self.params.fpu_latency as u64;
                    if self.functional {
                        self.acc_value[dst as usize] = result;
                    }
                }
                if inst.writes_stream.is_some() {
                    let wb = self.s2.as_mut().expect("gated writeback stream");
                    let bits = self.functional.then(|| result.to_bits());
                    wb.push_value(bits, now + self.params.fpu_latency as u64);
                }
                return Ok(CycleOutcome::IssuedCompute);
            }
            return Ok(CycleOutcome::IssuedSetup);
        }

        // Nothing buffered: bypass instructions issue in order once the
        // sequencer has drained.
        if self.pc < self.program.len() {
            let inst = self.program[self.pc];
            if inst.bypasses_sequencer() {
                debug_assert!(self.seq.is_drained());
                self.pc += 1;
                if inst.kind == InstrKind::IntLoopMgmt {
                    if inst.is_branch {
                        self.branch_stall = self.params.branch_penalty;
                    }
                    return Ok(CycleOutcome::IssuedIntLoop);
                }
                return Ok(CycleOutcome::IssuedSetup);
            }
            // Body instruction not yet accepted (buffer backpressure).
            return Ok(CycleOutcome::Idle);
        }
        Ok(CycleOutcome::Idle)
    }

    /// Collect this cycle's memory requests (at most 2 reads + 1 write).
    pub fn gen_requests(&mut self, now: u64) -> Vec<(u8, StreamRequest)> {
        let mut out = Vec::new();
        if let Some(s) = self.s0.as_mut() {
            if let Some(r) = s.gen_request() {
                out.push((0u8, r));
            }
        }
        if let Some(s) = self.s1.as_mut() {
            if let Some(r) = s.gen_request() {
                out.push((1u8, r));
            }
        }
        if let Some(s) = self.s2.as_mut() {
            if let Some(r) = s.gen_request(now) {
                out.push((2u8, r));
            }
        }
        debug_assert!(out.len() <= 3);
        out
    }

    pub fn as_mem_request(&self, port: u8, req: &StreamRequest) -> MemRequest {
        if req.is_write {
            MemRequest::core_write(self.id, port, req.addr, req.data)
        } else {
            MemRequest::core_read(self.id, port, req.addr)
        }
    }

    pub fn on_outcome(&mut self, now: u64, port: u8, outcome: &Outcome) {
        match port {
            0 | 1 => {
                let s = if port == 0 {
                    self.s0.as_mut()
                } else {
                    self.s1.as_mut()
                }
                .expect("outcome for unconfigured stream");
                match outcome {
                    Outcome::GrantedWord(data) => s.on_grant(now, *data),
                    Outcome::Conflict => s.on_conflict(),
                    Outcome::GrantedBeat(_) => unreachable!(),
                }
            }
            2 => {
                let s = self.s2.as_mut().expect("outcome for unconfigured stream");
                match outcome {
                    Outcome::GrantedWord(_) => s.on_grant(),
                    Outcome::Conflict => s.on_conflict(),
                    Outcome::GrantedBeat(_) => unreachable!(),
                }
            }
            _ => unreachable!(),
        }
    }
}

/// Per-core cycle accounting. `busy + loop_overhead + conflict_stall +
/// raw_stall + startup == total`, exactly, every window.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct CoreCounters {
    pub busy: u64,
    pub loop_overhead: u64,
    pub conflict_stall: u64,
    pub raw_stall: u64,
    pub startup: u64,
    pub total: u64,
}

impl CoreCounters {
    pub fn record(&mut self, outcome: CycleOutcome) {
        self.total += 1;
        match outcome {
            CycleOutcome::IssuedCompute => self.busy += 1,
            CycleOutcome::IssuedIntLoop | CycleOutcome::BranchPenalty => self.loop_overhead += 1,
            CycleOutcome::Stall(StallReason::StreamStarved)
            | CycleOutcome::Stall(StallReason::WbBlocked) => self.conflict_stall += 1,
            CycleOutcome::Stall(StallReason::Raw) => self.raw_stall += 1,
            CycleOutcome::Stall(StallReason::None) => unreachable!(),
            CycleOutcome::IssuedSetup | CycleOutcome::Idle => self.startup += 1,
        }
    }

    pub fn closure_holds(&self) -> bool {
        self.busy + self.loop_overhead + self.conflict_stall + self.raw_stall + self.startup
            == self.total
    }

    pub fn utilization(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.busy as f64 / self.total as f64
        }
    }
}
