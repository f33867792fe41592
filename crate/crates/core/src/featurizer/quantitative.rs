//! Dense quantitative features.
//!
//! Slot layout (version [`super::FEATURE_LAYOUT_VERSION`]):
//!
//! | slots     | content                                             |
//! |-----------|-----------------------------------------------------|
//! | 0         | size in bytes                                       |
//! | 1         | instruction count                                   |
//! | 2..10     | branch-kind counts, see [`BranchKind`]              |
//! | 10..20    | instruction-class counts, see [`InsnClass`]         |
//! | 20..23    | operand counts: register, immediate, memory         |
//! | 23..27    | callers, callees, dynamic callees, reachable        |
//! | 27..31    | CFG nodes, edges, cyclomatic number, mean out-degree|
//! | 31        | call-graph depth reached from this function         |
//! | 32        | distinct constants                                  |
//! | 33..38    | stack, heap, TLS bytes, argument count, local bytes |
//! | 38..54    | tainted register-class counts                       |
//! | 54..59    | tainted heap/stack/argument bytes, jumps, flows     |
//! | 59..64    | reserved (zero)                                     |
//! | 64..512   | hashed mnemonic histogram                           |

use std::collections::{HashSet, VecDeque};

use crate::corpus::{Corpus, FunctionRecord, OperandKind};
use crate::hashing::hash_bytes;

pub const QUANT_WIDTH: usize = 512;

pub const SIZE: usize = 0;
pub const INSTRUCTIONS: usize = 1;
pub const BRANCH: usize = 2;
pub const CLASS: usize = 10;
pub const OPERANDS: usize = 20;
pub const CALLERS: usize = 23;
pub const CALLEES: usize = 24;
pub const DYNAMIC_CALLEES: usize = 25;
pub const REACHABLE: usize = 26;
pub const CFG_NODES: usize = 27;
pub const CFG_EDGES: usize = 28;
pub const CFG_CYCLOMATIC: usize = 29;
pub const CFG_MEAN_OUT_DEGREE: usize = 30;
pub const CALL_DEPTH: usize = 31;
pub const CONSTANTS: usize = 32;
pub const STACK_BYTES: usize = 33;
pub const HEAP_BYTES: usize = 34;
pub const TLS_BYTES: usize = 35;
pub const NUM_ARGS: usize = 36;
pub const LOCAL_BYTES: usize = 37;
pub const TAINT_REGISTERS: usize = 38;
pub const TAINT_REGISTER_SLOTS: usize = 16;
pub const TAINT_HEAP: usize = 54;
pub const TAINT_STACK: usize = 55;
pub const TAINT_ARGS: usize = 56;
pub const TAINT_JUMPS: usize = 57;
pub const TAINT_FLOWS: usize = 58;
pub const MNEMONIC_HIST: usize = 64;
pub const MNEMONIC_BUCKETS: usize = QUANT_WIDTH - MNEMONIC_HIST;

/// Depth cap for transitive-reachability search over static callees.
pub const MAX_REACH_DEPTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    ConditionalJump = 0,
    Jump = 1,
    IndirectJump = 2,
    Call = 3,
    IndirectCall = 4,
    Return = 5,
    Loop = 6,
    Syscall = 7,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsnClass {
    DataMove = 0,
    Arithmetic = 1,
    Logic = 2,
    Compare = 3,
    Float = 4,
    Simd = 5,
    String = 6,
    Control = 7,
    Nop = 8,
    Other = 9,
}

fn indirect(operands: Option<&Vec<OperandKind>>) -> bool {
    operands
        .and_then(|ops| ops.first())
        .is_some_and(|k| matches!(k, OperandKind::Register | OperandKind::Memory))
}

/// Classifies a mnemonic as a branch. Covers x86 and the common ARM forms.
pub fn branch_kind(mnemonic: &str, operands: Option<&Vec<OperandKind>>) -> Option<BranchKind> {
    let m = mnemonic;
    let kind = match m {
        "ret" | "retn" | "retf" | "iret" | "iretq" => BranchKind::Return,
        "call" | "callq" | "bl" | "blx" | "jal" => {
            if indirect(operands) || m == "blx" {
                BranchKind::IndirectCall
            } else {
                BranchKind::Call
            }
        }
        "blr" | "jalr" => BranchKind::IndirectCall,
        "jmp" | "jmpq" | "b" => {
            if indirect(operands) {
                BranchKind::IndirectJump
            } else {
                BranchKind::Jump
            }
        }
        "br" | "bx" | "jr" => BranchKind::IndirectJump,
        "loop" | "loope" | "loopne" | "loopz" | "loopnz" | "jecxz" | "jrcxz" | "jcxz" => BranchKind::Loop,
        "syscall" | "sysenter" | "int" | "int3" | "svc" | "ecall" => BranchKind::Syscall,
        _ if m.starts_with('j') => BranchKind::ConditionalJump,
        _ if m.starts_with("b.") || m == "cbz" || m == "cbnz" || m == "tbz" || m == "tbnz" => {
            BranchKind::ConditionalJump
        }
        _ => return None,
    };
    Some(kind)
}

pub fn insn_class(mnemonic: &str) -> InsnClass {
    let m = mnemonic;
    if branch_kind(m, None).is_some() {
        return InsnClass::Control;
    }
    if matches!(m, "nop" | "endbr64" | "endbr32" | "hlt" | "pause") {
        return InsnClass::Nop;
    }
    if m.starts_with("rep")
        || ["stos", "lods", "scas", "movsb", "movsw", "movsq", "cmpsb", "cmpsw", "cmpsq"].iter().any(|p| m.starts_with(p))
    {
        return InsnClass::String;
    }
    if m.starts_with('v')
        || (m.starts_with('p') && !matches!(m, "push" | "pushq" | "pop" | "popq" | "pushf" | "popf"))
        || m.ends_with("ps")
        || m.ends_with("pd")
        || m.ends_with("ss")
        || m.ends_with("sd")
        || m.starts_with("cvt")
    {
        return InsnClass::Simd;
    }
    if m.starts_with('f') {
        return InsnClass::Float;
    }
    let stem = match m.strip_suffix(['q', 'l', 'w', 'b']) {
        Some(s) if s.len() >= 2 => s,
        _ => m,
    };
    let is = |names: &[&str]| names.contains(&m) || names.contains(&stem);
    if is(&["cmp", "test", "bt", "bts", "btr", "btc", "tst", "cmn"]) {
        return InsnClass::Compare;
    }
    if is(&["and", "or", "xor", "not", "shl", "shr", "sal", "sar", "rol", "ror", "rcl", "rcr", "eor", "orr", "lsl", "lsr", "asr"]) {
        return InsnClass::Logic;
    }
    if is(&["add", "sub", "inc", "dec", "mul", "imul", "div", "idiv", "neg", "adc", "sbb", "madd", "msub", "sdiv", "udiv"]) {
        return InsnClass::Arithmetic;
    }
    if m.starts_with("mov")
        || m.starts_with("cmov")
        || m.starts_with("set")
        || is(&["lea", "push", "pop", "xchg", "ldr", "str", "ldp", "stp", "cwd", "cdq", "cqo", "cdqe"])
    {
        return InsnClass::DataMove;
    }
    InsnClass::Other
}

/// Transitive reachability over static callees.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Reach {
    /// Distinct functions reachable (internal and external), excluding self.
    pub reachable: usize,
    /// Deepest BFS level reached.
    pub depth: usize,
    /// Dynamic (imported) callee names called by any reachable function,
    /// excluding the function's own direct dynamic callees.
    pub known_names: Vec<String>,
}

/// Breadth-first search from record `start` along resolvable static
/// callees, capped at [`MAX_REACH_DEPTH`].
pub fn reach(corpus: &Corpus, start: usize) -> Reach {
    let records = corpus.records();
    let root = &records[start];
    let mut visited: HashSet<usize> = HashSet::from([start]);
    let mut external: HashSet<String> = HashSet::new();
    let mut names: HashSet<&str> = HashSet::new();
    let mut queue = VecDeque::from([(start, 0usize)]);
    let mut depth = 0;
    while let Some((i, d)) = queue.pop_front() {
        let rec = &records[i];
        if i != start {
            names.extend(rec.dynamic_callees.iter().map(String::as_str));
        }
        if d >= MAX_REACH_DEPTH {
            continue;
        }
        for callee in &rec.callees {
            match corpus.resolve(&rec.binary_id, callee) {
                Some(j) => {
                    if visited.insert(j) {
                        depth = depth.max(d + 1);
                        queue.push_back((j, d + 1));
                    }
                }
                None => {
                    if external.insert(callee.clone()) {
                        depth = depth.max(d + 1);
                    }
                }
            }
        }
    }
    let own: HashSet<&str> = root.dynamic_callees.iter().map(String::as_str).collect();
    let mut known_names: Vec<String> = names.difference(&own).map(|s| s.to_string()).collect();
    known_names.sort();
    Reach { reachable: visited.len() - 1 + external.len(), depth, known_names }
}

/// Fills the quantitative layout for one record. `reach` supplies the
/// corpus-dependent slots; pass `Reach::default()` for an isolated record.
pub fn quantitative_features(rec: &FunctionRecord, reach: &Reach) -> Vec<f64> {
    let mut q = vec![0.0; QUANT_WIDTH];
    q[SIZE] = rec.size as f64;
    q[INSTRUCTIONS] = rec.opcodes.len() as f64;
    for (i, op) in rec.opcodes.iter().enumerate() {
        let m = op.to_ascii_lowercase();
        let operands = rec.operand_kinds.get(i);
        if let Some(b) = branch_kind(&m, operands) {
            q[BRANCH + b as usize] += 1.0;
        }
        q[CLASS + insn_class(&m) as usize] += 1.0;
        let bucket = (hash_bytes(0, m.as_bytes()) % MNEMONIC_BUCKETS as u64) as usize;
        q[MNEMONIC_HIST + bucket] += 1.0;
    }
    for ops in &rec.operand_kinds {
        for k in ops {
            let slot = match k {
                OperandKind::Register => 0,
                OperandKind::Immediate => 1,
                OperandKind::Memory => 2,
            };
            q[OPERANDS + slot] += 1.0;
        }
    }
    q[CALLERS] = rec.callers.len() as f64;
    q[CALLEES] = rec.callees.len() as f64;
    q[DYNAMIC_CALLEES] = rec.dynamic_callees.len() as f64;
    q[REACHABLE] = reach.reachable as f64;
    q[CFG_NODES] = rec.cfg_nodes as f64;
    q[CFG_EDGES] = rec.cfg_edges as f64;
    if rec.cfg_nodes > 0 {
        q[CFG_CYCLOMATIC] = (rec.cfg_edges as f64 - rec.cfg_nodes as f64 + 2.0).max(0.0);
        q[CFG_MEAN_OUT_DEGREE] = rec.cfg_edges as f64 / rec.cfg_nodes as f64;
    }
    q[CALL_DEPTH] = reach.depth as f64;
    q[CONSTANTS] = rec.constants.iter().collect::<HashSet<_>>().len() as f64;
    q[STACK_BYTES] = rec.stack_bytes as f64;
    q[HEAP_BYTES] = rec.heap_bytes as f64;
    q[TLS_BYTES] = rec.tls_bytes as f64;
    q[NUM_ARGS] = rec.num_args as f64;
    q[LOCAL_BYTES] = rec.local_bytes as f64;
    for (i, &v) in rec.taint.register_types.iter().enumerate() {
        // Register classes beyond the reserved slots share the last one.
        q[TAINT_REGISTERS + i.min(TAINT_REGISTER_SLOTS - 1)] += v as f64;
    }
    q[TAINT_HEAP] = rec.taint.heap_bytes as f64;
    q[TAINT_STACK] = rec.taint.stack_bytes as f64;
    q[TAINT_ARGS] = rec.taint.argument_bytes as f64;
    q[TAINT_JUMPS] = rec.taint.conditional_jumps as f64;
    q[TAINT_FLOWS] = rec.taint.flows as f64;
    q
}
