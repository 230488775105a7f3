//! Abstract instruction model: decoded operations, hardware-loop descriptors
//! and stream (SSR) configuration payloads. No bit-level encodings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::SimError;

/// Stream register identifiers. Each compute core has three 64-bit memory
/// ports: two read streams feeding `ft0`/`ft1` and one writeback stream
/// draining `ft2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StreamId {
    S0,
    S1,
    S2,
}

impl StreamId {
    pub fn index(self) -> usize {
        match self {
            StreamId::S0 => 0,
            StreamId::S1 => 1,
            StreamId::S2 => 2,
        }
    }
}

/// Set of read streams an instruction consumes. Only S0/S1 can be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamSet(u8);

impl StreamSet {
    pub const EMPTY: StreamSet = StreamSet(0);

    pub fn of(ids: &[StreamId]) -> Self {
        let mut s = StreamSet(0);
        for id in ids {
            s.0 |= 1 << id.index();
        }
        s
    }

    pub fn contains(self, id: StreamId) -> bool {
        self.0 & (1 << id.index()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = StreamId> {
        [StreamId::S0, StreamId::S1, StreamId::S2]
            .into_iter()
            .filter(move |id| self.contains(*id))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Hardware loop descriptor: body length and iteration count, both fully
/// decoded from the loop-configuration instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrepConfig {
    /// Number of instructions in the loop body (>= 1).
    pub max_inst: u32,
    /// Number of iterations (>= 1).
    pub max_rpt: u32,
}

impl FrepConfig {
    pub fn new(max_inst: u32, max_rpt: u32) -> Result<Self, SimError> {
        if max_inst == 0 || max_rpt == 0 {
            return Err(SimError::Config(format!(
                "frep config must have max_inst >= 1 and max_rpt >= 1 (got {max_inst}, {max_rpt})"
            )));
        }
        Ok(FrepConfig { max_inst, max_rpt })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrKind {
    FpCompute,
    FrepCfg,
    SsrCfg,
    IntLoopMgmt,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FpOp {
    Fmul,
    Fmadd,
    Nop,
}

impl fmt::Display for FpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FpOp::Fmul => write!(f, "fmul"),
            FpOp::Fmadd => write!(f, "fmadd"),
            FpOp::Nop => write!(f, "nop"),
        }
    }
}

/// A decoded instruction as the sequencer and core consume it.
///
/// `dst_acc`/`src_acc` name FP accumulator registers for hazard tracking;
/// they are `None` for instructions whose destination is a stream register.
/// `tag` identifies the instruction in traces and test oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction {
    pub kind: InstrKind,
    pub op: FpOp,
    pub reads_streams: StreamSet,
    pub writes_stream: Option<StreamId>,
    pub uses_int_rf: bool,
    pub frep_payload: Option<FrepConfig>,
    pub dst_acc: Option<u8>,
    pub src_acc: Option<u8>,
    /// True for the IntLoopMgmt instruction that ends a software loop
    /// iteration (models the taken backward branch).
    pub is_branch: bool,
    pub tag: u32,
}

impl Instruction {
    fn base(kind: InstrKind) -> Self {
        Instruction {
            kind,
            op: FpOp::Nop,
            reads_streams: StreamSet::EMPTY,
            writes_stream: None,
            uses_int_rf: false,
            frep_payload: None,
            dst_acc: None,
            src_acc: None,
            is_branch: false,
            tag: 0,
        }
    }

    /// `fmul acc, ft0, ft1`: first (peeled) dot-product step, resets the
    /// accumulator implicitly.
    pub fn fmul(acc: u8) -> Self {
        Instruction {
            op: FpOp::Fmul,
            reads_streams: StreamSet::of(&[StreamId::S0, StreamId::S1]),
            dst_acc: Some(acc),
            ..Self::base(InstrKind::FpCompute)
        }
    }

    /// `fmadd acc, ft0, ft1, acc`: accumulating dot-product step.
    pub fn fmadd_acc(acc: u8) -> Self {
        Instruction {
            op: FpOp::Fmadd,
            reads_streams: StreamSet::of(&[StreamId::S0, StreamId::S1]),
            dst_acc: Some(acc),
            src_acc: Some(acc),
            ..Self::base(InstrKind::FpCompute)
        }
    }

    /// `fmadd ft2, ft0, ft1, acc`: last (peeled) step, forwards the result
    /// to memory through the writeback stream.
    pub fn fmadd_wb(acc: u8) -> Self {
        Instruction {
            op: FpOp::Fmadd,
            reads_streams: StreamSet::of(&[StreamId::S0, StreamId::S1]),
            writes_stream: Some(StreamId::S2),
            src_acc: Some(acc),
            ..Self::base(InstrKind::FpCompute)
        }
    }

    pub fn frep(max_inst: u32, max_rpt: u32) -> Self {
        Instruction {
            frep_payload: Some(FrepConfig { max_inst, max_rpt }),
            ..Self::base(InstrKind::FrepCfg)
        }
    }

    /// Integer loop-management instruction (pointer bump, compare, branch).
    pub fn int_loop(is_branch: bool) -> Self {
        Instruction {
            uses_int_rf: true,
            is_branch,
            ..Self::base(InstrKind::IntLoopMgmt)
        }
    }

    pub fn ssr_cfg() -> Self {
        Instruction {
            uses_int_rf: true,
            ..Self::base(InstrKind::SsrCfg)
        }
    }

    pub fn with_tag(mut self, tag: u32) -> Self {
        self.tag = tag;
        self
    }

    pub fn is_fp_compute(&self) -> bool {
        self.kind == InstrKind::FpCompute
    }

    /// Instructions with an integer-RF operand bypass the sequencer's ring
    /// buffer and are never replayed.
    pub fn bypasses_sequencer(&self) -> bool {
        self.uses_int_rf
    }
}

/// A raw (pre-classification) instruction descriptor: opcode mnemonic plus
/// operand roles, as a kernel generator or test would write it down.
#[derive(Debug, Clone)]
pub enum RawInstr {
    /// fmul/fmadd with stream operands and an accumulator register.
    Fp {
        op: FpOp,
        reads: Vec<StreamId>,
        writes: Option<StreamId>,
        dst_acc: Option<u8>,
        src_acc: Option<u8>,
    },
    Frep {
        max_inst: u32,
        max_rpt: u32,
    },
    IntLoop {
        is_branch: bool,
    },
    SsrCfg,
    Other,
}

/// Partially decode a raw descriptor and bin it into one of the handled
/// categories. Total and deterministic over well-formed descriptors.
pub fn classify(raw: &RawInstr) -> Result<Instruction, SimError> {
    match raw {
        RawInstr::Fp {
            op,
            reads,
            writes,
            dst_acc,
            src_acc,
        } => {
            let read_set = StreamSet::of(reads);
            if read_set.contains(StreamId::S2) {
                return Err(SimError::Config(
                    "S2 is the writeback stream and cannot be read".into(),
                ));
            }
            if read_set.len() > 2 {
                return Err(SimError::Config(
                    "compute instructions read at most 2 streams".into(),
                ));
            }
            if let Some(w) = writes {
                if *w != StreamId::S2 {
                    return Err(SimError::Config(
                        "only S2 can be written by compute instructions".into(),
                    ));
                }
                if dst_acc.is_some() {
                    return Err(SimError::Config(
                        "instruction cannot write both a stream and an accumulator".into(),
                    ));
                }
            }
            Ok(Instruction {
                op: *op,
                reads_streams: read_set,
                writes_stream: *writes,
                dst_acc: *dst_acc,
                src_acc: *src_acc,
                ..Instruction::base(InstrKind::FpCompute)
            })
        }
        RawInstr::Frep { max_inst, max_rpt } => {
            let cfg = FrepConfig::new(*max_inst, *max_rpt)?;
            Ok(Instruction {
                frep_payload: Some(cfg),
                ..Instruction::base(InstrKind::FrepCfg)
            })
        }
        RawInstr::IntLoop { is_branch } => Ok(Instruction::int_loop(*is_branch)),
        RawInstr::SsrCfg => Ok(Instruction::ssr_cfg()),
        RawInstr::Other => Ok(Instruction::base(InstrKind::Other)),
    }
}
