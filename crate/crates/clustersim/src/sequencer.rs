//! Hardware-loop sequencer: ring-buffer replay of dynamically constructed
//! loop nests, with single-cycle detection of multiple loops starting or
//! ending on the same instruction.
//!
//! Instructions stream in from the control core through [`Sequencer::push`].
//! Loop-configuration instructions are consumed by the nest controller
//! (never buffered); loop-body candidates are stored in the ring buffer and
//! re-issued from it; integer-RF instructions bypass the buffer entirely.
//! [`Sequencer::step`] issues at most one instruction per cycle.

use crate::isa::{FrepConfig, Instruction};
use crate::SimError;

/// Outcome of offering one instruction to the sequencer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    /// Instruction accepted (buffered, registered, or bypassed).
    Accepted,
    /// The instruction bypasses the ring buffer; the core handles its issue
    /// timing itself.
    Bypassed,
    /// Backpressure: buffer full, or a new loop cannot register until the
    /// live nest retires. Retry next cycle.
    Stall,
}

/// Live state of one registered loop.
#[derive(Debug, Clone, Copy)]
pub struct LoopState {
    pub cfg: FrepConfig,
    /// Ring-buffer index (unwrapped) of the first body instruction.
    pub base_ptr: u64,
    /// Instructions executed in the current iteration.
    pub inst_cnt: u32,
    /// Iterations completed.
    pub iter_cnt: u32,
}

impl LoopState {
    pub fn last_inst(&self) -> bool {
        self.inst_cnt == self.cfg.max_inst - 1
    }

    pub fn last_iter(&self) -> bool {
        self.iter_cnt == self.cfg.max_rpt - 1
    }

    fn end(&self) -> u64 {
        self.base_ptr + self.cfg.max_inst as u64
    }
}

/// The nest controller's view: the chain of registered loops (index 0 is
/// outermost) and the index of the currently active loop.
#[derive(Debug, Clone)]
pub struct NestState {
    pub loops: Vec<LoopState>,
    /// Innermost loop containing the current instruction; -1 when execution
    /// is outside every registered loop.
    pub loop_idx: isize,
}

impl NestState {
    pub fn loop_cnt(&self) -> usize {
        self.loops.len()
    }
}

/// Detect the innermost loop starting on the instruction at `raddr`:
/// the deepest chain of not-yet-entered loops whose base pointers all equal
/// `raddr`. Returns the new active loop index (== `loop_idx` when none
/// start). Pure function of one cycle's state; the hardware evaluates it
/// with a leading-zero counter in a single cycle.
pub fn detect_starting_loops(raddr: u64, nest: &NestState) -> isize {
    let mut idx = nest.loop_idx;
    while ((idx + 1) as usize) < nest.loops.len() && nest.loops[(idx + 1) as usize].base_ptr == raddr
    {
        idx += 1;
    }
    idx
}

/// Detect the innermost non-ending loop: scanning outward from the active
/// loop, count consecutive loops sitting on the last instruction of their
/// last iteration. Returns `loop_idx - <ending count>`; -1 means the whole
/// nest ends on this instruction. Single-cycle in hardware (trailing-zero
/// counter).
pub fn detect_ending_loops(nest: &NestState) -> isize {
    let mut idx = nest.loop_idx;
    while idx >= 0 {
        let l = &nest.loops[idx as usize];
        if l.last_inst() && l.last_iter() {
            idx -= 1;
        } else {
            break;
        }
    }
    idx
}

/// One record per issued instruction, for the `trace` CLI mode.
#[derive(Debug, Clone, Copy)]
pub struct SeqTraceRecord {
    pub raddr: u64,
    pub loop_idx: isize,
    pub tag: u32,
}

pub struct Sequencer {
    capacity: usize,
    slots: Vec<Option<Instruction>>,
    /// Next write position (unwrapped; slot = index % capacity).
    wptr: u64,
    /// Next read position (unwrapped). Rewinds to loop bases.
    raddr: u64,
    nest: NestState,
    max_depth: usize,
}

impl Sequencer {
    pub fn new(capacity: usize, max_depth: usize) -> Self {
        assert!(capacity > 0 && max_depth > 0);
        Sequencer {
            capacity,
            slots: vec![None; capacity],
            wptr: 0,
            raddr: 0,
            nest: NestState {
                loops: Vec::new(),
                loop_idx: -1,
            },
            max_depth,
        }
    }

    pub fn nest(&self) -> &NestState {
        &self.nest
    }

    pub fn raddr(&self) -> u64 {
        self.raddr
    }

    /// Lowest unwrapped index that must stay resident: the outermost live
    /// loop's base, or the read pointer when no nest is live.
    fn floor(&self) -> u64 {
        self.nest
            .loops
            .first()
            .map(|l| l.base_ptr)
            .unwrap_or(self.raddr)
    }

    pub fn occupancy(&self) -> usize {
        (self.wptr - self.floor()) as usize
    }

    pub fn is_drained(&self) -> bool {
        self.raddr >= self.wptr && self.nest.loops.is_empty()
    }

    /// Offer one instruction from the control core.
    ///
    /// FrepCfg registers a new loop at the current write pointer. A loop
    /// whose body would not nest inside the currently live chain stalls
    /// until the nest retires; one that straddles the parent's extent is a
    /// configuration error.
    pub fn push(&mut self, inst: &Instruction) -> Result<PushOutcome, SimError> {
        if inst.bypasses_sequencer() {
            return Ok(PushOutcome::Bypassed);
        }
        if let Some(cfg) = inst.frep_payload {
            if let Some(parent) = self.nest.loops.last() {
                let start = self.wptr;
                let end = start + cfg.max_inst as u64;
                if start >= parent.end() {
                    // Sequential follow-up loop: wait for the live nest.
                    return Ok(PushOutcome::Stall);
                }
                if start < parent.base_ptr || end > parent.end() {
                    return Err(SimError::Config(format!(
                        "loop registration [{start}, {end}) overlaps but does not nest in \
                         parent [{}, {})",
                        parent.base_ptr,
                        parent.end()
                    )));
                }
            }
            if self.nest.loops.len() == self.max_depth {
                return Err(SimError::NestDepth(self.max_depth));
            }
            self.nest.loops.push(LoopState {
                cfg,
                base_ptr: self.wptr,
                inst_cnt: 0,
                iter_cnt: 0,
            });
            return Ok(PushOutcome::Accepted);
        }
        if self.occupancy() >= self.capacity {
            return Ok(PushOutcome::Stall);
        }
        let slot = (self.wptr % self.capacity as u64) as usize;
        self.slots[slot] = Some(*inst);
        self.wptr += 1;
        Ok(PushOutcome::Accepted)
    }

    /// The instruction that would issue this cycle, if any.
    pub fn peek(&self) -> Option<&Instruction> {
        if self.raddr >= self.wptr {
            return None;
        }
        self.slots[(self.raddr % self.capacity as u64) as usize].as_ref()
    }

    /// Issue one instruction and advance the nest state. Returns `None` on
    /// an empty buffer (a bubble, not an error).
    pub fn step(&mut self) -> Option<Instruction> {
        self.step_traced().map(|(inst, _)| inst)
    }

    pub fn step_traced(&mut self) -> Option<(Instruction, SeqTraceRecord)> {
        if self.raddr >= self.wptr {
            return None;
        }
        let inst = self.slots[(self.raddr % self.capacity as u64) as usize]
            .expect("resident slot below wptr");

        // Entering: loops whose body starts on this instruction.
        self.nest.loop_idx = detect_starting_loops(self.raddr, &self.nest);
        let record = SeqTraceRecord {
            raddr: self.raddr,
            loop_idx: self.nest.loop_idx,
            tag: inst.tag,
        };

        let active = self.nest.loop_idx;
        if active < 0 {
            // One-shot instruction outside any loop: pass through and free
            // the slot.
            self.raddr += 1;
            return Some((inst, record));
        }

        // Increment rule: loop i counts this instruction iff it is the
        // active loop or every loop nested inside it (up to the active one)
        // is in its last iteration.
        let mut counted = vec![false; self.nest.loops.len()];
        counted[active as usize] = true;
        let mut inner_all_last = true;
        for i in (0..active).rev() {
            inner_all_last &= self.nest.loops[(i + 1) as usize].last_iter();
            counted[i as usize] = inner_all_last;
        }

        // Ending detection uses pre-increment flags.
        let inel = detect_ending_loops(&self.nest);
        let nest_ends = inel < 0;

        // Apply increments; counters wrap at iteration and loop boundaries
        // so completed inner loops can re-run on the next outer iteration.
        for (i, l) in self.nest.loops.iter_mut().enumerate() {
            if !counted[i] {
                continue;
            }
            l.inst_cnt += 1;
            if l.inst_cnt == l.cfg.max_inst {
                l.inst_cnt = 0;
                l.iter_cnt += 1;
                if l.iter_cnt == l.cfg.max_rpt {
                    l.iter_cnt = 0;
                }
            }
        }

        if nest_ends {
            // Whole nest retires; everything buffered below raddr is free.
            self.nest.loops.clear();
            self.nest.loop_idx = -1;
            self.raddr += 1;
        } else {
            // Rewind only when the innermost non-ending loop finished an
            // iteration on this instruction (its counter just wrapped).
            let l = &self.nest.loops[inel as usize];
            let completed_iteration = counted[inel as usize] && l.inst_cnt == 0;
            if completed_iteration {
                self.raddr = l.base_ptr;
            } else {
                self.raddr += 1;
            }
            self.nest.loop_idx = inel;
        }
        Some((inst, record))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Instruction;

    fn body(tag: u32) -> Instruction {
        Instruction::fmadd_acc(0).with_tag(tag)
    }

    fn drive(seq: &mut Sequencer, program: &[Instruction], max_cycles: usize) -> Vec<u32> {
        // Per cycle: push any pending FrepCfgs plus at most one body
        // instruction, then issue. Mirrors a core that consumes loop
        // configurations zero-width.
        let mut issued = Vec::new();
        let mut pc = 0;
        for _ in 0..max_cycles {
            while pc < program.len() {
                let inst = &program[pc];
                match seq.push(inst).unwrap() {
                    PushOutcome::Accepted => {
                        pc += 1;
                        if inst.frep_payload.is_none() {
                            break;
                        }
                    }
                    PushOutcome::Bypassed => {
                        pc += 1;
                        break;
                    }
                    PushOutcome::Stall => break,
                }
            }
            if let Some(inst) = seq.step() {
                issued.push(inst.tag);
            } else if pc >= program.len() && seq.is_drained() {
                break;
            }
        }
        issued
    }

    #[test]
    fn imperfect_nest_expands_like_template() {
        // outer: 2 iters, body = [a, inner(3 iters, body=[b]), c]
        let program = vec![
            Instruction::frep(3, 2),
            body(1), // a
            Instruction::frep(1, 3),
            body(2), // b
            body(3), // c
        ];
        let mut seq = Sequencer::new(16, 2);
        let issued = drive(&mut seq, &program, 64);
        assert_eq!(issued, vec![1, 2, 2, 2, 3, 1, 2, 2, 2, 3]);
        assert!(seq.is_drained());
    }

    #[test]
    fn ten_instructions_in_ten_consecutive_cycles() {
        let program = vec![
            Instruction::frep(3, 2),
            body(1),
            Instruction::frep(1, 3),
            body(2),
            body(3),
        ];
        let mut seq = Sequencer::new(16, 2);
        let mut pc = 0;
        let mut issues = Vec::new();
        for cycle in 0..10 {
            while pc < program.len() {
                let inst = &program[pc];
                match seq.push(inst).unwrap() {
                    PushOutcome::Accepted => {
                        pc += 1;
                        if inst.frep_payload.is_none() {
                            break;
                        }
                    }
                    _ => break,
                }
            }
            let got = seq.step();
            assert!(got.is_some(), "bubble at cycle {cycle}");
            issues.push(got.unwrap().tag);
        }
        assert_eq!(issues.len(), 10);
        assert!(seq.is_drained());
    }

    #[test]
    fn single_loop_max_rpt_one_issues_body_once() {
        let program = vec![Instruction::frep(2, 1), body(1), body(2)];
        let mut seq = Sequencer::new(8, 2);
        let issued = drive(&mut seq, &program, 16);
        assert_eq!(issued, vec![1, 2]);
    }

    #[test]
    fn shared_start_registers_inner_with_same_base() {
        // Two FrepCfgs back to back: both loops start on the same body
        // instruction.
        let program = vec![
            Instruction::frep(2, 2),
            Instruction::frep(1, 2),
            body(1), // shared first instruction
            body(2),
        ];
        let mut seq = Sequencer::new(8, 2);
        assert_eq!(seq.push(&program[0]).unwrap(), PushOutcome::Accepted);
        assert_eq!(seq.push(&program[1]).unwrap(), PushOutcome::Accepted);
        assert_eq!(seq.nest().loops[0].base_ptr, seq.nest().loops[1].base_ptr);
        let issued = drive(&mut seq, &program[2..], 32);
        // for i in 2: { for j in 2: b1 }; b2
        assert_eq!(issued, vec![1, 1, 2, 1, 1, 2]);
    }

    #[test]
    fn shared_end_retires_both_loops_in_one_cycle() {
        // outer body = [a, inner(2 iters of [b])], C = 0: both loops end on
        // the same instruction.
        let program = vec![
            Instruction::frep(2, 2),
            body(1), // a
            Instruction::frep(1, 2),
            body(2), // b
        ];
        let mut seq = Sequencer::new(8, 2);
        let issued = drive(&mut seq, &program, 32);
        assert_eq!(issued, vec![1, 2, 2, 1, 2, 2]);
        assert!(seq.is_drained());
        assert_eq!(seq.nest().loop_cnt(), 0);
    }

    #[test]
    fn triple_shared_start_detected_in_one_call() {
        let mut seq = Sequencer::new(8, 4);
        for _ in 0..3 {
            seq.push(&Instruction::frep(1, 2)).unwrap();
        }
        assert_eq!(seq.nest().loop_idx, -1);
        let isl = detect_starting_loops(0, seq.nest());
        assert_eq!(isl, 2);
    }

    #[test]
    fn detect_ending_identity_when_loop_continues() {
        let nest = NestState {
            loops: vec![LoopState {
                cfg: FrepConfig {
                    max_inst: 4,
                    max_rpt: 3,
                },
                base_ptr: 0,
                inst_cnt: 1,
                iter_cnt: 0,
            }],
            loop_idx: 0,
        };
        assert_eq!(detect_ending_loops(&nest), 0);
    }

    #[test]
    fn nest_depth_error() {
        let mut seq = Sequencer::new(8, 2);
        seq.push(&Instruction::frep(4, 2)).unwrap();
        seq.push(&Instruction::frep(3, 2)).unwrap();
        let err = seq.push(&Instruction::frep(2, 2));
        assert!(matches!(err, Err(SimError::NestDepth(2))));
    }

    #[test]
    fn sequential_frep_stalls_until_nest_retires() {
        let mut seq = Sequencer::new(8, 2);
        seq.push(&Instruction::frep(1, 2)).unwrap();
        seq.push(&body(1)).unwrap();
        // Next loop would start past the live loop's extent.
        assert_eq!(
            seq.push(&Instruction::frep(1, 2)).unwrap(),
            PushOutcome::Stall
        );
        seq.step();
        seq.step();
        assert!(seq.is_drained());
        assert_eq!(
            seq.push(&Instruction::frep(1, 2)).unwrap(),
            PushOutcome::Accepted
        );
    }

    #[test]
    fn int_rf_instructions_bypass() {
        let mut seq = Sequencer::new(8, 2);
        let outcome = seq.push(&Instruction::int_loop(false)).unwrap();
        assert_eq!(outcome, PushOutcome::Bypassed);
        assert!(seq.is_drained());
    }

    #[test]
    fn buffer_full_backpressure() {
        let mut seq = Sequencer::new(2, 2);
        seq.push(&Instruction::frep(2, 2)).unwrap();
        seq.push(&body(1)).unwrap();
        seq.push(&body(2)).unwrap();
        // Both entries are protected by the live loop.
        assert_eq!(seq.push(&body(3)).unwrap(), PushOutcome::Stall);
    }

    #[test]
    fn depth_one_degenerates_to_flat_repeat() {
        let program = vec![Instruction::frep(3, 4), body(1), body(2), body(3)];
        let mut seq = Sequencer::new(8, 1);
        let issued = drive(&mut seq, &program, 64);
        let expect: Vec<u32> = (0..4).flat_map(|_| [1, 2, 3]).collect();
        assert_eq!(issued, expect);
    }

    #[test]
    fn counters_stay_bounded_during_replay() {
        let program = vec![
            Instruction::frep(4, 5),
            body(1),
            Instruction::frep(2, 7),
            body(2),
            body(3),
            body(4),
        ];
        let mut seq = Sequencer::new(16, 2);
        let mut pc = 0;
        for _ in 0..200 {
            while pc < program.len() {
                let inst = &program[pc];
                match seq.push(inst).unwrap() {
                    PushOutcome::Accepted => {
                        pc += 1;
                        if inst.frep_payload.is_none() {
                            break;
                        }
                    }
                    _ => break,
                }
            }
            seq.step();
            for l in &seq.nest().loops {
                assert!(l.inst_cnt < l.cfg.max_inst);
                assert!(l.iter_cnt < l.cfg.max_rpt);
            }
            if pc >= program.len() && seq.is_drained() {
                break;
            }
        }
        assert!(seq.is_drained());
    }
}
