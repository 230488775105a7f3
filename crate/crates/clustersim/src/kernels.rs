//! Matmul kernel generation: unrolled outer loop with peeled first/last
//! dot-product iterations, hardware-loop mapping (inner-only or full nest),
//! stream patterns over the bank-group layout, tile planning and the DMA
//! descriptors of the double-buffered schedule.

use serde::Serialize;

use crate::core::CoreProgram;
use crate::isa::Instruction;
use crate::memory::{
    map_addr, DmaDescriptor, DmaDir, Layout, MatrixId, Slot, TcdmConfig, BEAT_WORDS,
};
use crate::streams::{StreamConfig, StreamDim, StreamDir};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KernelVariant {
    /// Software outer loop (2 loop-management instructions + taken branch
    /// per iteration), dot-product loop on the hardware sequencer.
    BaselineLoop,
    /// Same mapping as BaselineLoop; the name used when the cluster's
    /// baseline sequencer picks the kernel itself.
    InnerFrep,
    /// Whole tile body wrapped in a two-deep hardware loop nest; no integer
    /// loop management at all.
    ZonlNest,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MatmulProblem {
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub unroll: u32,
}

impl MatmulProblem {
    pub fn new(m: u32, n: u32, k: u32) -> Self {
        MatmulProblem {
            m,
            n,
            k,
            unroll: 8,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.k < 2 {
            return Err(SimError::Config(
                "K < 2: peeling the first and last dot-product iterations is impossible".into(),
            ));
        }
        for (name, v) in [("M", self.m), ("N", self.n), ("K", self.k)] {
            if v == 0 || v % 8 != 0 {
                return Err(SimError::Config(format!(
                    "{name} = {v} must be a positive multiple of 8"
                )));
            }
        }
        if self.unroll != 8 {
            return Err(SimError::Config(
                "cluster kernels require the production unroll factor of 8".into(),
            ));
        }
        if self.n % self.unroll != 0 {
            return Err(SimError::Config(
                "N must be divisible by the unroll factor".into(),
            ));
        }
        Ok(())
    }

    pub fn flops(&self) -> u64 {
        2 * self.m as u64 * self.n as u64 * self.k as u64
    }
}

/// One tile of the blocked problem. `tile_k == K`: the K dimension is never
/// split, so C is written exactly once and the peeled fmul/fmadd structure
/// holds for every tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub m0: u32,
    pub n0: u32,
    pub tile_m: u32,
    pub tile_n: u32,
}

fn floor8(v: u32) -> u32 {
    (v / 8) * 8
}

/// Choose tile dimensions so each matrix tile fits one layout slot.
pub fn plan_tiles(problem: &MatmulProblem, slot_words: u64) -> Result<Vec<Tile>, SimError> {
    problem.validate()?;
    let cap = slot_words as u32;
    if problem.k > cap / 8 {
        return Err(SimError::Config(format!(
            "K = {} exceeds slot capacity for even a single 8-row tile",
            problem.k
        )));
    }
    let tile_m = problem.m.min(floor8(cap / problem.k)).max(8);
    let tile_n = problem
        .n
        .min(floor8((cap / problem.k).min(cap / tile_m)))
        .max(8);
    debug_assert!(tile_m * problem.k <= cap);
    debug_assert!(tile_n * problem.k <= cap);
    debug_assert!(tile_m * tile_n <= cap);
    let mut tiles = Vec::new();
    let mut m0 = 0;
    while m0 < problem.m {
        let tm = tile_m.min(problem.m - m0);
        let mut n0 = 0;
        while n0 < problem.n {
            let tn = tile_n.min(problem.n - n0);
            tiles.push(Tile {
                m0,
                n0,
                tile_m: tm,
                tile_n: tn,
            });
            n0 += tn;
        }
        m0 += tm;
    }
    Ok(tiles)
}

/// Per-core instruction stream for one tile.
///
/// Each outer iteration covers one (row, column-group) pair: `unroll` fmuls
/// (peeled first K iteration), `(K-2) * unroll` fmadds under the inner
/// hardware loop, and `unroll` writeback fmadds (peeled last K iteration).
pub fn gen_instrs(
    variant: KernelVariant,
    tile: &Tile,
    k: u32,
    unroll: u32,
    n_cores: u32,
    setup_slots: u32,
) -> Vec<Instruction> {
    let rows_per_core = tile.tile_m / n_cores;
    let n_groups = tile.tile_n / unroll;
    let n_outer = rows_per_core * n_groups;
    let u = unroll as u8;

    let mut instrs = Vec::new();
    for _ in 0..setup_slots {
        instrs.push(Instruction::ssr_cfg());
    }
    let body = |instrs: &mut Vec<Instruction>| {
        for a in 0..u {
            instrs.push(Instruction::fmul(a));
        }
        if k > 2 {
            instrs.push(Instruction::frep(unroll, k - 2));
            for a in 0..u {
                instrs.push(Instruction::fmadd_acc(a));
            }
        }
        for a in 0..u {
            instrs.push(Instruction::fmadd_wb(a));
        }
    };
    match variant {
        KernelVariant::ZonlNest => {
            let body_len = if k > 2 { 3 * unroll } else { 2 * unroll };
            instrs.push(Instruction::frep(body_len, n_outer));
            body(&mut instrs);
        }
        KernelVariant::BaselineLoop | KernelVariant::InnerFrep => {
            for _ in 0..n_outer {
                body(&mut instrs);
                instrs.push(Instruction::int_loop(false));
                instrs.push(Instruction::int_loop(true));
            }
        }
    }
    instrs
}

/// Length of the expanded (issued) instruction stream, setup included.
pub fn expanded_len(
    variant: KernelVariant,
    tile: &Tile,
    k: u32,
    unroll: u32,
    n_cores: u32,
    setup_slots: u32,
) -> u64 {
    let n_outer = (tile.tile_m / n_cores) as u64 * (tile.tile_n / unroll) as u64;
    let compute = n_outer * (k as u64 * unroll as u64);
    let overhead = match variant {
        KernelVariant::ZonlNest => 0,
        _ => 2 * n_outer,
    };
    setup_slots as u64 + compute + overhead
}

/// Stream patterns for one core over the tile's three slots.
///
/// Tiles are stored row-major in their slots; a slot is a column of 8-word
/// chunks, so a dimension stepping one chunk advances by the hyperbank's
/// chunk stride. The A operand repeats each element `unroll` times (one
/// fetch per repeat group), walking one row of A per column group; B walks
/// `unroll` consecutive words per dot-product step; C drains one word per
/// final writeback.
pub fn gen_streams(
    cfg: &TcdmConfig,
    slots: [&Slot; 3],
    tile: &Tile,
    k: u32,
    unroll: u32,
    n_cores: u32,
    core: u32,
) -> Result<[StreamConfig; 3], SimError> {
    let cs = cfg.chunk_stride() as i64;
    let rows_per_core = tile.tile_m / n_cores;
    let n_groups = tile.tile_n / unroll;
    let tn = tile.tile_n as i64;
    debug_assert_eq!(k % 8, 0);
    debug_assert_eq!(unroll, 8);

    let a = StreamConfig::new(
        slots[0].word_addr(cfg, core as u64 * k as u64),
        &[
            StreamDim {
                bound: 8,
                stride: 8,
            },
            StreamDim {
                bound: k / 8,
                stride: cs,
            },
            StreamDim {
                bound: n_groups,
                stride: 0,
            },
            StreamDim {
                bound: rows_per_core,
                stride: k as i64 * cs,
            },
        ],
        StreamDir::Read,
        unroll,
    );
    let b = StreamConfig::new(
        slots[1].word_addr(cfg, 0),
        &[
            StreamDim {
                bound: unroll,
                stride: 8,
            },
            StreamDim {
                bound: k,
                stride: (tn / 8) * cs,
            },
            StreamDim {
                bound: n_groups,
                stride: cs,
            },
            StreamDim {
                bound: rows_per_core,
                stride: 0,
            },
        ],
        StreamDir::Read,
        1,
    );
    let c = StreamConfig::new(
        slots[2].word_addr(cfg, core as u64 * tile.tile_n as u64),
        &[
            StreamDim {
                bound: unroll,
                stride: 8,
            },
            StreamDim {
                bound: n_groups,
                stride: cs,
            },
            StreamDim {
                bound: rows_per_core,
                stride: tn * cs,
            },
        ],
        StreamDir::Write,
        1,
    );
    for (s, slot) in [(&a, slots[0]), (&b, slots[1]), (&c, slots[2])] {
        s.validate(0, cfg.total_bytes)?;
        for addr in s.unique_addresses() {
            let (hb, bank, row) = map_addr(addr, cfg)?;
            let local = bank - hb * cfg.banks_per_hyperbank;
            if hb != slot.hyperbank
                || local < slot.bank_base
                || local >= slot.bank_base + BEAT_WORDS
                || row < slot.row_base
                || row >= slot.row_base + slot.rows
            {
                return Err(SimError::Config(format!(
                    "stream address {addr:#x} escapes its slot"
                )));
            }
        }
    }
    Ok([a, b, c])
}

/// Build one core's program for one tile.
pub fn gen_core_program(
    cfg: &TcdmConfig,
    layout: &Layout,
    variant: KernelVariant,
    problem: &MatmulProblem,
    tile: &Tile,
    parity: usize,
    n_cores: u32,
    core: u32,
    setup_cost: u32,
) -> Result<CoreProgram, SimError> {
    let setup = setup_cost + core; // id-dependent setup staggers the cores
    let instrs = gen_instrs(variant, tile, problem.k, problem.unroll, n_cores, setup);
    let slots = [
        layout.slot(parity, MatrixId::A),
        layout.slot(parity, MatrixId::B),
        layout.slot(parity, MatrixId::C),
    ];
    let [a, b, c] = gen_streams(cfg, slots, tile, problem.k, problem.unroll, n_cores, core)?;
    Ok(CoreProgram {
        instrs,
        s0: Some(a),
        s1: Some(b),
        s2: Some(c),
    })
}

// ---------------------------------------------------------------------------
// Main-memory side: gathers/scatters for DMA payloads (functional mode)
// ---------------------------------------------------------------------------

/// Row-major backing store for one matrix.
#[derive(Debug, Clone)]
pub struct HostMatrix {
    pub rows: u32,
    pub cols: u32,
    pub data: Vec<f64>,
}

impl HostMatrix {
    pub fn zeros(rows: u32, cols: u32) -> Self {
        HostMatrix {
            rows,
            cols,
            data: vec![0.0; rows as usize * cols as usize],
        }
    }

    pub fn at(&self, r: u32, c: u32) -> f64 {
        self.data[r as usize * self.cols as usize + c as usize]
    }

    pub fn set(&mut self, r: u32, c: u32, v: f64) {
        self.data[r as usize * self.cols as usize + c as usize] = v;
    }

    fn gather(&self, r0: u32, c0: u32, rows: u32, cols: u32) -> Vec<u64> {
        let mut out = Vec::with_capacity(rows as usize * cols as usize);
        for r in r0..r0 + rows {
            for c in c0..c0 + cols {
                out.push(self.at(r, c).to_bits());
            }
        }
        out
    }

    fn scatter(&mut self, r0: u32, c0: u32, rows: u32, cols: u32, words: &[u64]) {
        let mut i = 0;
        for r in r0..r0 + rows {
            for c in c0..c0 + cols {
                self.set(r, c, f64::from_bits(words[i]));
                i += 1;
            }
        }
    }
}

/// DMA-in descriptors for one tile's A and B blocks. `functional` attaches
/// the gathered payloads.
pub fn dma_in_descriptors(
    layout: &Layout,
    problem: &MatmulProblem,
    tile: &Tile,
    parity: usize,
    host: Option<(&HostMatrix, &HostMatrix)>,
    label: u32,
) -> Vec<DmaDescriptor> {
    let a_words = tile.tile_m as u64 * problem.k as u64;
    let b_words = problem.k as u64 * tile.tile_n as u64;
    let (a_data, b_data) = match host {
        Some((a, b)) => (
            Some(a.gather(tile.m0, 0, tile.tile_m, problem.k)),
            Some(b.gather(0, tile.n0, problem.k, tile.tile_n)),
        ),
        None => (None, None),
    };
    vec![
        DmaDescriptor {
            dir: DmaDir::In,
            slot: *layout.slot(parity, MatrixId::A),
            words: a_words,
            data: a_data,
            label,
        },
        DmaDescriptor {
            dir: DmaDir::In,
            slot: *layout.slot(parity, MatrixId::B),
            words: b_words,
            data: b_data,
            label: label + 1,
        },
    ]
}

pub fn dma_out_descriptor(
    layout: &Layout,
    tile: &Tile,
    parity: usize,
    label: u32,
) -> DmaDescriptor {
    DmaDescriptor {
        dir: DmaDir::Out,
        slot: *layout.slot(parity, MatrixId::C),
        words: tile.tile_m as u64 * tile.tile_n as u64,
        data: None,
        label,
    }
}

pub fn scatter_c(c: &mut HostMatrix, tile: &Tile, words: &[u64]) {
    c.scatter(tile.m0, tile.n0, tile.tile_m, tile.tile_n, words);
}

/// Order-preserving reference: per element, a rounded multiply for k = 0
/// then fused multiply-adds for k = 1..K, matching the kernel's
/// accumulation exactly.
pub fn reference_matmul(a: &HostMatrix, b: &HostMatrix) -> HostMatrix {
    assert_eq!(a.cols, b.rows);
    let mut c = HostMatrix::zeros(a.rows, b.cols);
    for m in 0..a.rows {
        for n in 0..b.cols {
            let mut acc = a.at(m, 0) * b.at(0, n);
            for k in 1..a.cols {
                acc = a.at(m, k).mul_add(b.at(k, n), acc);
            }
            c.set(m, n, acc);
        }
    }
    c
}

/// Human-readable listing of a generated stream, for inspection and tests.
pub fn dump_instrs(instrs: &[Instruction]) -> String {
    use crate::isa::InstrKind;
    let mut out = String::new();
    for inst in instrs {
        let line = match inst.kind {
            InstrKind::SsrCfg => "ssrcfg".to_string(),
            InstrKind::FrepCfg => {
                let cfg = inst.frep_payload.unwrap();
                format!("frep {}, {}", cfg.max_inst, cfg.max_rpt)
            }
            InstrKind::IntLoopMgmt => {
                if inst.is_branch {
                    "bnez loop".to_string()
                } else {
                    "addi t0, t0, 1".to_string()
                }
            }
            InstrKind::FpCompute => match (inst.dst_acc, inst.writes_stream) {
                (Some(d), _) if inst.src_acc.is_some() => {
                    format!("fmadd c{d}, ft0, ft1, c{d}")
                }
                (Some(d), _) => format!("fmul c{d}, ft0, ft1"),
                (None, Some(_)) => format!("fmadd ft2, ft0, ft1, c{}", inst.src_acc.unwrap()),
                _ => format!("{}", inst.op),
            },
            InstrKind::Other => "nop".to_string(),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}
