//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use accelsim::cluster::{Cluster, LinkModel};
use accelsim::energy::DeviceModel;
use accelsim::kernel::{BinOp, KernelExpr};
use accelsim::model::{apply_mapper, AccessMode, BufferInit, ElementKind, NodeId, RangeMapper, Scalar, Storage, TaskBuilder};
use accelsim::region::{GridBox, Region};
use accelsim::scheduler::{CommandGraph, CommandKind};
use accelsim::{EnergyTarget, TaskGraph, TaskId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn reference_device() -> DeviceModel {
    DeviceModel {
        frequencies_ghz: vec![0.5, 1.0, 1.5, 2.0],
        f_ref_ghz: 1.0,
        p_static_w: 10.0,
        p_dyn_ref_w: 10.0,
        alpha_exp: 3.0,
        throughput_ref: 1e6,
    }
}

pub fn cluster(nodes: usize) -> Cluster {
    Cluster::uniform(reference_device(), nodes, LinkModel::default()).unwrap()
}

// ---------------------------------------------------------------------------
// Bitmap oracle for region algebra.

/// Dense cell set over a fixed universe box.
#[derive(Clone, Debug, PartialEq)]
pub struct Bitmap {
    lo: Vec<i64>,
    size: Vec<usize>,
    pub bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(lo: &[i64], size: &[usize]) -> Self {
        Bitmap {
            lo: lo.to_vec(),
            size: size.to_vec(),
            bits: vec![false; size.iter().product()],
        }
    }

    fn index(&self, p: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for k in 0..self.size.len() {
            let off = p[k] - self.lo[k];
            if off < 0 || off as usize >= self.size[k] {
                return None;
            }
            idx = idx * self.size[k] + off as usize;
        }
        Some(idx)
    }

    /// Marks every cell of the half-open box `[min, max)`.
    pub fn fill(&mut self, min: &[i64], max: &[i64]) {
        let dims = self.size.len();
        let mut p = min.to_vec();
        if (0..dims).any(|k| min[k] >= max[k]) {
            return;
        }
        loop {
            let i = self.index(&p).expect("box inside universe");
            self.bits[i] = true;
            let mut k = dims;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                p[k] += 1;
                if p[k] < max[k] {
                    break;
                }
                p[k] = min[k];
            }
        }
    }

    pub fn from_region(r: &Region, lo: &[i64], size: &[usize]) -> Self {
        let mut b = Bitmap::new(lo, size);
        for bx in r.boxes() {
            b.fill(bx.lo(), bx.hi());
        }
        b
    }

    pub fn zip(&self, other: &Bitmap, f: impl Fn(bool, bool) -> bool) -> Bitmap {
        Bitmap {
            lo: self.lo.clone(),
            size: self.size.clone(),
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }
}

/// A union of up to `max_boxes` random boxes inside `[0, size)`.
pub fn random_region(rng: &mut impl Rng, size: &[usize], max_boxes: usize) -> Region {
    let dims = size.len();
    let n = rng.gen_range(0..=max_boxes);
    let boxes: Vec<GridBox> = (0..n)
        .map(|_| {
            let mut lo = Vec::new();
            let mut hi = Vec::new();
            for &s in size {
                let a = rng.gen_range(0..=s as i64);
                let b = rng.gen_range(0..=s as i64);
                lo.push(a.min(b));
                hi.push(a.max(b));
            }
            GridBox::new(&lo, &hi).unwrap()
        })
        .collect();
    Region::from_boxes(dims, boxes).unwrap()
}

/// Pairwise disjointness of a region's boxes, checked cell by cell.
pub fn boxes_disjoint(r: &Region, size: &[usize]) -> bool {
    let lo = vec![0; size.len()];
    let mut seen = Bitmap::new(&lo, size);
    for bx in r.boxes() {
        let mut one = Bitmap::new(&lo, size);
        one.fill(bx.lo(), bx.hi());
        if seen.zip(&one, |a, b| a && b).count() > 0 {
            return false;
        }
        seen = seen.zip(&one, |a, b| a || b);
    }
    true
}

// ---------------------------------------------------------------------------
// Random workloads.

fn random_shape(rng: &mut impl Rng) -> Vec<u64> {
    match rng.gen_range(0..10) {
        0..=5 => vec![rng.gen_range(1..=64)],
        6..=8 => {
            let r = rng.gen_range(1..=8);
            vec![r, rng.gen_range(1..=(64 / r).min(8))]
        }
        _ => (0..3).map(|_| rng.gen_range(1..=4)).collect(),
    }
}

fn random_init(rng: &mut impl Rng, len: usize, kind: ElementKind) -> BufferInit {
    match rng.gen_range(0..5) {
        0 => BufferInit::Uninitialized,
        1 => BufferInit::Zeros,
        2 => BufferInit::Iota,
        3 => BufferInit::Constant(rng.gen_range(-4..=4) as f64),
        _ => BufferInit::Values(
            (0..len)
                .map(|_| match kind {
                    ElementKind::Int64 => rng.gen_range(-9..=9) as f64,
                    ElementKind::Float64 => rng.gen_range(-16..=16) as f64 / 4.0,
                })
                .collect(),
        ),
    }
}

/// Clamped image box of `range` shifted by `offsets` inside `extent`.
fn clamped_image(range: &GridBox, offsets: &[i64], extent: &GridBox) -> (Vec<i64>, Vec<i64>) {
    let dims = extent.dims();
    let c = |k: usize, v: i64| v.clamp(extent.lo()[k], extent.hi()[k] - 1);
    let lo = (0..dims).map(|k| c(k, range.lo()[k] + offsets[k])).collect();
    let hi = (0..dims).map(|k| c(k, range.hi()[k] - 1 + offsets[k]) + 1).collect();
    (lo, hi)
}

struct ReadPlan {
    name: String,
    offsets: Vec<Vec<i64>>,
}

fn index_text(offsets: &[i64]) -> String {
    let dims = offsets.len();
    let term = |k: usize, o: i64| {
        let base = if dims == 1 { "i".to_string() } else { format!("i.{k}") };
        match o {
            0 => base,
            o if o > 0 => format!("{base}+{o}"),
            o => format!("{base}{o}"),
        }
    };
    (0..dims).map(|k| term(k, offsets[k])).collect::<Vec<_>>().join(", ")
}

fn random_expr(rng: &mut impl Rng, reads: &[ReadPlan], dims: usize, int: bool, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..6) {
            0..=2 if !reads.is_empty() => {
                let r = reads.choose(rng).unwrap();
                let off = r.offsets.choose(rng).unwrap();
                format!("{}[{}]", r.name, index_text(off))
            }
            3 => {
                if dims == 1 {
                    "i".to_string()
                } else {
                    format!("i.{}", rng.gen_range(0..dims))
                }
            }
            4 => "k".to_string(),
            _ if int => rng.gen_range(0..=9).to_string(),
            _ => format!("{}", rng.gen_range(0..=12) as f64 / 4.0),
        };
    }
    let l = random_expr(rng, reads, dims, int, depth - 1);
    match rng.gen_range(0..9) {
        0 => format!("-({l})"),
        1 if int => format!("({l}) / {}", rng.gen_range(1..=5)),
        1 => format!("({l}) / ({})", random_expr(rng, reads, dims, int, depth - 1)),
        n => {
            let r = random_expr(rng, reads, dims, int, depth - 1);
            let op = ["+", "-", "*"][n % 3];
            format!("({l}) {op} ({r})")
        }
    }
}

/// A random program of at most five tasks over buffers of at most 64
/// elements that share one shape. Read mappers are drawn from all five
/// kinds, writes are one_to_one, and reads only target buffers that are
/// fully initialized at that point.
pub fn random_workload(seed: u64) -> TaskGraph {
    let mut rng = rng(seed);
    let shape = random_shape(&mut rng);
    let dims = shape.len();
    let len: u64 = shape.iter().product();
    let mut g = TaskGraph::new();
    let nbuf = rng.gen_range(2..=4);
    let mut ready = Vec::new();
    for b in 0..nbuf {
        let kind = if rng.gen_bool(0.25) { ElementKind::Int64 } else { ElementKind::Float64 };
        let init = random_init(&mut rng, len as usize, kind);
        ready.push(init != BufferInit::Uninitialized);
        g.create_buffer(format!("b{b}"), &shape, kind, init).unwrap();
    }
    let extent = GridBox::from_extent(&shape).unwrap();

    for t in 0..rng.gen_range(1..=5) {
        let (size, origin): (Vec<u64>, Vec<u64>) = if rng.gen_bool(0.7) {
            (shape.clone(), vec![0; dims])
        } else {
            shape
                .iter()
                .map(|&s| {
                    let a = rng.gen_range(0..s);
                    let b = rng.gen_range(a + 1..=s);
                    (b - a, a)
                })
                .unzip()
        };
        let range = GridBox::new(
            &origin.iter().map(|&o| o as i64).collect::<Vec<_>>(),
            &origin.iter().zip(&size).map(|(&o, &s)| (o + s) as i64).collect::<Vec<_>>(),
        )
        .unwrap();
        let full = size == shape;

        let mut builder = TaskBuilder::new(format!("t{t}"), &size).offset(&origin);
        builder = builder.param("k", rng.gen_range(-3..=3) as f64);
        builder = builder.beta([0.0, 0.25, 0.5, 1.0][rng.gen_range(0..4)]);
        if rng.gen_bool(0.3) {
            builder = builder.target(Some(EnergyTarget::ALL[rng.gen_range(0..4)]));
        }

        let readable: Vec<usize> = (0..nbuf).filter(|&b| ready[b]).collect();
        let mut reads = Vec::new();
        for r in 0..rng.gen_range(0..=3usize) {
            let Some(&b) = readable.choose(&mut rng) else { break };
            let zero = vec![0i64; dims];
            let (mapper, offsets) = match rng.gen_range(0..5) {
                0 => (RangeMapper::OneToOne, vec![zero]),
                1 => {
                    let radii: Vec<u64> = (0..dims).map(|_| rng.gen_range(0..=2)).collect();
                    let offs = (0..rng.gen_range(1..=3))
                        .map(|_| radii.iter().map(|&r| rng.gen_range(-(r as i64)..=r as i64)).collect())
                        .collect();
                    (RangeMapper::Neighborhood(radii), offs)
                }
                2 => {
                    let d = rng.gen_range(0..dims);
                    let offs = (0..rng.gen_range(1..=3))
                        .map(|_| {
                            let mut o = vec![0i64; dims];
                            o[d] = rng.gen_range(-4..=4);
                            o
                        })
                        .collect();
                    (RangeMapper::Slice(d), offs)
                }
                3 => {
                    let offs = (0..rng.gen_range(1..=3))
                        .map(|_| (0..dims).map(|_| rng.gen_range(-4..=4)).collect())
                        .collect();
                    (RangeMapper::All, offs)
                }
                _ => {
                    let off: Vec<i64> = (0..dims).map(|_| rng.gen_range(-4..=4)).collect();
                    let (lo, hi) = clamped_image(&range, &off, &extent);
                    let lo: Vec<i64> = lo.iter().map(|&l| rng.gen_range(0..=l)).collect();
                    let hi: Vec<i64> = hi.iter().zip(&shape).map(|(&h, &s)| rng.gen_range(h..=s as i64)).collect();
                    let mut region = Region::from_box(GridBox::new(&lo, &hi).unwrap());
                    if rng.gen_bool(0.3) {
                        region = region.union(&random_region(&mut rng, &shape.iter().map(|&s| s as usize).collect::<Vec<_>>(), 1)).unwrap();
                    }
                    (RangeMapper::Fixed(region), vec![off])
                }
            };
            let name = format!("r{r}");
            builder = builder.read(name.clone(), accelsim::BufferId(b), mapper);
            reads.push(ReadPlan { name, offsets });
        }

        let mut targets: Vec<usize> = (0..nbuf).collect();
        targets.shuffle(&mut rng);
        let nwrites = if rng.gen_bool(0.25) { 2 } else { 1 };
        for (w, &b) in targets.iter().take(nwrites).enumerate() {
            let int = g.buffer(accelsim::BufferId(b)).kind == ElementKind::Int64;
            let name = format!("w{w}");
            let body = random_expr(&mut rng, &reads, dims, int, 3);
            builder = builder.write(name.clone(), accelsim::BufferId(b)).body(name, body);
            if full {
                ready[b] = true;
            }
        }
        let task = builder.build().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        g.submit(task).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
    g
}

// ---------------------------------------------------------------------------
// Direct serial interpreter: whole-range evaluation with clamped reads.

fn initial(b: &accelsim::model::Buffer) -> Vec<Scalar> {
    let n = b.len();
    let v: Vec<f64> = match &b.init {
        BufferInit::Uninitialized | BufferInit::Zeros => vec![0.0; n],
        BufferInit::Iota => (0..n).map(|i| i as f64).collect(),
        BufferInit::Constant(c) => vec![*c; n],
        BufferInit::Values(v) => v.clone(),
    };
    v.into_iter()
        .map(|x| match b.kind {
            ElementKind::Float64 => Scalar::F64(x),
            ElementKind::Int64 => Scalar::I64(x as i64),
        })
        .collect()
}

fn row_major(extent: &GridBox, p: &[i64]) -> usize {
    let mut idx = 0usize;
    for k in 0..extent.dims() {
        let v = p[k].clamp(extent.lo()[k], extent.hi()[k] - 1);
        idx = idx * extent.len(k) as usize + (v - extent.lo()[k]) as usize;
    }
    idx
}

#[derive(Clone, Copy)]
enum Num {
    F(f64),
    I(i64),
}

fn eval(
    e: &KernelExpr,
    id: &[i64],
    int: bool,
    task: &accelsim::Task,
    g: &TaskGraph,
    data: &[Vec<Scalar>],
) -> Num {
    let lit = |v: f64| if int { Num::I(v as i64) } else { Num::F(v) };
    match e {
        KernelExpr::Literal(v) => lit(*v),
        KernelExpr::Param(p) => lit(task.params[p]),
        KernelExpr::GlobalId(k) => {
            if int {
                Num::I(id[*k])
            } else {
                Num::F(id[*k] as f64)
            }
        }
        KernelExpr::Read { accessor, index } => {
            let a = task.accessor(accessor).unwrap();
            let b = g.buffer(a.buffer);
            let p: Vec<i64> = index.iter().map(|t| id[t.component] + t.offset).collect();
            let s = data[a.buffer.0][row_major(&b.extent, &p)];
            match (s, int) {
                (Scalar::F64(v), false) => Num::F(v),
                (Scalar::F64(v), true) => Num::I(v as i64),
                (Scalar::I64(v), false) => Num::F(v as f64),
                (Scalar::I64(v), true) => Num::I(v),
            }
        }
        KernelExpr::Neg(x) => match eval(x, id, int, task, g, data) {
            Num::F(v) => Num::F(-v),
            Num::I(v) => Num::I(v.wrapping_neg()),
        },
        KernelExpr::Binary(op, l, r) => {
            let a = eval(l, id, int, task, g, data);
            let b = eval(r, id, int, task, g, data);
            match (a, b) {
                (Num::F(a), Num::F(b)) => Num::F(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }),
                (Num::I(a), Num::I(b)) => Num::I(match op {
                    BinOp::Add => a.wrapping_add(b),
                    BinOp::Sub => a.wrapping_sub(b),
                    BinOp::Mul => a.wrapping_mul(b),
                    BinOp::Div => {
                        assert!(b != 0, "generator never divides integers by zero");
                        a.wrapping_div(b)
                    }
                }),
                _ => unreachable!("mixed arithmetic"),
            }
        }
    }
}

/// Final buffer contents computed without scheduling, commands or node
/// storage. Buffers never written read as zeros.
pub fn interpret(g: &TaskGraph) -> Vec<Vec<Scalar>> {
    let mut data: Vec<Vec<Scalar>> = g.buffers().iter().map(initial).collect();
    for (_, task) in g.tasks() {
        let range = task.global_range;
        let mut pending = Vec::new();
        for body in &task.body {
            let acc = &task.accessors[body.accessor];
            let b = g.buffer(acc.buffer);
            let int = b.kind == ElementKind::Int64;
            let mut out = Vec::new();
            let mut p = range.lo().to_vec();
            'points: loop {
                let v = match eval(&body.expr, &pad(&p), int, task, g, &data) {
                    Num::F(v) => Scalar::F64(v),
                    Num::I(v) => Scalar::I64(v),
                };
                out.push((row_major(&b.extent, &p), v));
                let mut k = p.len();
                loop {
                    if k == 0 {
                        break 'points;
                    }
                    k -= 1;
                    p[k] += 1;
                    if p[k] < range.hi()[k] {
                        break;
                    }
                    p[k] = range.lo()[k];
                }
            }
            pending.push((acc.buffer, out));
        }
        for (b, out) in pending {
            for (i, v) in out {
                data[b.0][i] = v;
            }
        }
    }
    data
}

fn pad(p: &[i64]) -> [i64; 3] {
    let mut q = [0; 3];
    q[..p.len()].copy_from_slice(p);
    q
}

pub fn storage_values(s: &Storage) -> Vec<Scalar> {
    s.iter().collect()
}

pub fn bit_identical(a: &[Scalar], b: &[Scalar]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(*y))
}

// ---------------------------------------------------------------------------
// Command graph checker, replaying commands cell by cell.

struct Cells {
    extent: GridBox,
}

impl Cells {
    fn of(&self, r: &Region) -> Vec<usize> {
        let mut out = Vec::new();
        for bx in r.boxes() {
            let dims = bx.dims();
            let mut p = bx.lo().to_vec();
            if bx.is_empty() {
                continue;
            }
            'cells: loop {
                out.push(row_major(&self.extent, &p));
                let mut k = dims;
                loop {
                    if k == 0 {
                        break 'cells;
                    }
                    k -= 1;
                    p[k] += 1;
                    if p[k] < bx.hi()[k] {
                        break;
                    }
                    p[k] = bx.lo()[k];
                }
            }
        }
        out
    }
}

#[derive(Clone, Default)]
struct CellAccess {
    writer: Option<usize>,
    readers: Vec<usize>,
}

/// Checks structural and dataflow properties of a command graph and returns
/// a description of every violation found:
///
/// * ids are dense and dependencies point backwards (hence acyclic);
/// * pushes and await-pushes pair up one to one with identical payloads;
/// * a push's source holds the latest version and its destination does not;
/// * every execute's read requirement is held by its node;
/// * conflicting accesses on one node are ordered by the dependency graph;
/// * each task's executes partition its global range.
pub fn check_commands(g: &TaskGraph, cg: &CommandGraph) -> Vec<String> {
    let mut errs = Vec::new();
    let cmds = cg.commands();
    let n = cmds.len();
    let nodes = cg.node_count();
    for (i, c) in cmds.iter().enumerate() {
        if c.id.0 != i {
            errs.push(format!("command {i} has id {}", c.id.0));
        }
        if c.deps.iter().any(|d| d.0 >= i) {
            errs.push(format!("{} has a forward dependency", c.id));
        }
        if c.node >= nodes {
            errs.push(format!("{} on unknown node {}", c.id, c.node));
        }
    }
    if !errs.is_empty() {
        return errs;
    }

    // Pairing.
    let mut awaits_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in cmds {
        if let CommandKind::AwaitPush { from, buffer, region, version, push } = &c.kind {
            match cmds.get(push.0).map(|p| (&p.kind, p.node)) {
                Some((CommandKind::Push { to, buffer: pb, region: pr, version: pv }, src))
                    if *to == c.node && src == *from && pb == buffer && pr == region && pv == version => {}
                _ => errs.push(format!("{} does not match push {}", c.id, push)),
            }
            if !c.deps.contains(push) {
                errs.push(format!("{} does not depend on its push", c.id));
            }
            awaits_of.entry(push.0).or_default().push(c.id.0);
        }
    }
    for c in cmds {
        if let CommandKind::Push { to, .. } = &c.kind {
            let k = awaits_of.get(&c.id.0).map_or(0, Vec::len);
            if k != 1 {
                errs.push(format!("{} has {k} matching await-pushes", c.id));
            }
            if *to == c.node {
                errs.push(format!("{} pushes to its own node", c.id));
            }
        }
    }

    // Ancestor sets.
    let words = n.div_ceil(64).max(1);
    let mut anc = vec![vec![0u64; words]; n];
    for c in cmds {
        let i = c.id.0;
        for d in &c.deps {
            let (head, tail) = anc.split_at_mut(i);
            for (w, x) in tail[0].iter_mut().zip(&head[d.0]) {
                *w |= x;
            }
            tail[0][d.0 / 64] |= 1 << (d.0 % 64);
        }
    }
    let is_anc = |a: usize, of: usize| anc[of][a / 64] >> (a % 64) & 1 == 1;

    let bufs = g.buffers();
    let cells: Vec<Cells> = bufs.iter().map(|b| Cells { extent: b.extent }).collect();
    let mut version: Vec<Vec<u64>> = Vec::new();
    let mut holders: Vec<Vec<u64>> = Vec::new();
    let mut next_version = Vec::new();
    for b in bufs {
        let init = b.is_host_initialized();
        version.push(vec![u64::from(init); b.len()]);
        holders.push(vec![u64::from(init); b.len()]);
        next_version.push(1 + u64::from(init));
    }
    let mut access: Vec<Vec<Vec<CellAccess>>> = (0..nodes)
        .map(|_| bufs.iter().map(|b| vec![CellAccess::default(); b.len()]).collect())
        .collect();

    let read = |node: usize, b: usize, cs: &[usize], cmd: usize, errs: &mut Vec<String>, access: &mut Vec<Vec<Vec<CellAccess>>>| {
        for &c in cs {
            let a = &mut access[node][b][c];
            if let Some(w) = a.writer {
                if w != cmd && !is_anc(w, cmd) {
                    errs.push(format!("C{cmd} reads {} cell {c} on n{node} unordered after C{w}", bufs[b].name));
                }
            }
            a.readers.push(cmd);
        }
    };
    let write = |node: usize, b: usize, cs: &[usize], cmd: usize, errs: &mut Vec<String>, access: &mut Vec<Vec<Vec<CellAccess>>>| {
        for &c in cs {
            let a = &mut access[node][b][c];
            for &o in a.writer.iter().chain(&a.readers) {
                if o != cmd && !is_anc(o, cmd) {
                    errs.push(format!("C{cmd} writes {} cell {c} on n{node} unordered after C{o}", bufs[b].name));
                }
            }
            a.writer = Some(cmd);
            a.readers.clear();
        }
    };

    let mut pending: Vec<(usize, Vec<usize>, usize)> = Vec::new();
    let mut current: Option<TaskId> = None;
    let mut chunks: BTreeMap<TaskId, Vec<GridBox>> = BTreeMap::new();
    let flush = |pending: &mut Vec<(usize, Vec<usize>, usize)>,
                 version: &mut Vec<Vec<u64>>,
                 holders: &mut Vec<Vec<u64>>,
                 next_version: &mut Vec<u64>| {
        let mut bumped: BTreeMap<usize, u64> = BTreeMap::new();
        for (b, cs, node) in pending.drain(..) {
            let v = *bumped.entry(b).or_insert_with(|| {
                let v = next_version[b];
                next_version[b] += 1;
                v
            });
            for c in cs {
                version[b][c] = v;
                holders[b][c] = 1 << node;
            }
        }
    };

    for c in cmds {
        let i = c.id.0;
        let exec_task = match &c.kind {
            CommandKind::Execute { task, .. } => Some(*task),
            _ => None,
        };
        if exec_task.is_none() || exec_task != current {
            flush(&mut pending, &mut version, &mut holders, &mut next_version);
        }
        current = exec_task;
        match &c.kind {
            CommandKind::Push { to, buffer, region, version: v } => {
                let b = buffer.0;
                let cs = cells[b].of(region);
                if cs.is_empty() {
                    errs.push(format!("{} pushes an empty region", c.id));
                }
                for &x in &cs {
                    if version[b][x] != *v {
                        errs.push(format!("{} pushes stale version {v} of {} cell {x} (latest {})", c.id, bufs[b].name, version[b][x]));
                    }
                    if holders[b][x] >> c.node & 1 == 0 {
                        errs.push(format!("{} source n{} does not hold {} cell {x}", c.id, c.node, bufs[b].name));
                    }
                    if holders[b][x] >> to & 1 == 1 {
                        errs.push(format!("{} is redundant: n{to} already holds {} cell {x}", c.id, bufs[b].name));
                    }
                }
                read(c.node, b, &cs, i, &mut errs, &mut access);
            }
            CommandKind::AwaitPush { buffer, region, .. } => {
                let b = buffer.0;
                let cs = cells[b].of(region);
                for &x in &cs {
                    holders[b][x] |= 1 << c.node;
                }
                write(c.node, b, &cs, i, &mut errs, &mut access);
            }
            CommandKind::Execute { task, chunk, .. } => {
                chunks.entry(*task).or_default().push(*chunk);
                let t = g.task(*task);
                for a in t.reads() {
                    let b = g.buffer(a.buffer);
                    let need = apply_mapper(&a.mapper, chunk, &t.global_range, &b.extent).unwrap();
                    let cs = cells[b.id.0].of(&need);
                    for &x in &cs {
                        if holders[b.id.0][x] >> c.node & 1 == 0 {
                            errs.push(format!("{} reads {} cell {x} not resident on n{}", c.id, b.name, c.node));
                        }
                    }
                    read(c.node, b.id.0, &cs, i, &mut errs, &mut access);
                }
                for a in t.writes() {
                    let b = g.buffer(a.buffer);
                    let region = t.mapped_region(chunk, b, AccessMode::Write).unwrap();
                    let cs = cells[b.id.0].of(&region);
                    write(c.node, b.id.0, &cs, i, &mut errs, &mut access);
                    pending.push((b.id.0, cs, c.node));
                }
            }
        }
    }

    // Partition of each task's range.
    for (id, task) in g.tasks() {
        let range = task.global_range;
        let universe: Vec<usize> = (0..range.dims()).map(|k| range.len(k) as usize).collect();
        let mut cover = vec![0u32; universe.iter().product()];
        for chunk in chunks.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
            if !range.contains_box(chunk) {
                errs.push(format!("{id} chunk {chunk} outside range {range}"));
                continue;
            }
            let mut bm = Bitmap::new(range.lo(), &universe);
            bm.fill(chunk.lo(), chunk.hi());
            for (c, b) in cover.iter_mut().zip(&bm.bits) {
                *c += u32::from(*b);
            }
        }
        if cover.iter().any(|&c| c != 1) {
            errs.push(format!("{id} chunks do not partition {range}"));
        }
    }
    errs
}

// ---------------------------------------------------------------------------
// Device models and an independent frequency oracle.

/// Random valid device: 2 to 8 levels on a 0.1 GHz grid, f_ref among them.
pub fn random_device(rng: &mut impl Rng, alpha: Option<f64>) -> DeviceModel {
    let mut steps: Vec<u32> = (1..=30).collect();
    steps.shuffle(rng);
    let n = rng.gen_range(2..=8);
    let mut levels: Vec<f64> = steps[..n].iter().map(|&s| f64::from(s) / 10.0).collect();
    levels.sort_by(f64::total_cmp);
    let f_ref = levels[rng.gen_range(0..n)];
    DeviceModel {
        frequencies_ghz: levels,
        f_ref_ghz: f_ref,
        p_static_w: rng.gen_range(1.0..200.0),
        p_dyn_ref_w: rng.gen_range(1.0..300.0),
        alpha_exp: alpha.unwrap_or_else(|| rng.gen_range(1.5..3.5)),
        throughput_ref: rng.gen_range(1e3..1e9),
    }
}

/// Enumerates levels against a separately written cost model. Ties go high.
pub fn best_frequency(d: &DeviceModel, target: EnergyTarget, t_ref: f64, beta: f64) -> f64 {
    let cost = |f: f64| {
        let x = f / d.f_ref_ghz;
        let time = t_ref * beta + t_ref * (1.0 - beta) / x;
        let energy = (d.p_static_w + d.p_dyn_ref_w * x.powf(d.alpha_exp)) * time;
        match target {
            EnergyTarget::MaxPerf => -f,
            EnergyTarget::MinEnergy => energy,
            EnergyTarget::MinEdp => energy * time,
            EnergyTarget::MinEd2p => energy * time * time,
        }
    };
    let mut best = d.frequencies_ghz[0];
    for &f in &d.frequencies_ghz[1..] {
        if cost(f) <= cost(best) {
            best = f;
        }
    }
    best
}

/// Closed-form continuous optimum of MIN_EDP for a cubic, fully
/// frequency-bound kernel.
pub fn edp_optimum(d: &DeviceModel) -> f64 {
    d.f_ref_ghz * (2.0 * d.p_static_w / d.p_dyn_ref_w).cbrt()
}

/// Levels immediately below and above `f`, clamped to the available range.
pub fn bracket(levels: &[f64], f: f64) -> (f64, f64) {
    let lo = levels.iter().copied().rfind(|&l| l <= f).unwrap_or(levels[0]);
    let hi = levels.iter().copied().find(|&l| l >= f).unwrap_or(*levels.last().unwrap());
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Reference programs.

pub fn saxpy(repeats: usize) -> TaskGraph {
    let mut g = TaskGraph::new();
    let x = g.create_buffer("x", &[8], ElementKind::Float64, BufferInit::Iota).unwrap();
    let y = g.create_buffer("y", &[8], ElementKind::Float64, BufferInit::Constant(1.0)).unwrap();
    let z = g.create_buffer("z", &[8], ElementKind::Float64, BufferInit::Uninitialized).unwrap();
    for _ in 0..repeats {
        g.submit(
            TaskBuilder::new("saxpy", &[8])
                .read("x", x, RangeMapper::OneToOne)
                .read("y", y, RangeMapper::OneToOne)
                .write("z", z)
                .param("alpha", 2.0)
                .body("z", "alpha * x[i] + y[i]")
                .build()
                .unwrap(),
        )
        .unwrap();
    }
    g
}

/// (source, destination, buffer name, region) of every push, grouped by the
/// task whose executes follow them.
pub fn pushes_per_task(g: &TaskGraph, cg: &CommandGraph) -> Vec<Vec<(NodeId, NodeId, String, Region)>> {
    let mut out = vec![Vec::new(); g.len()];
    let mut next_task = 1;
    for c in cg.commands() {
        match &c.kind {
            CommandKind::Execute { task, .. } => next_task = task.0 + 1,
            CommandKind::Push { to, buffer, region, .. } => {
                out[next_task - 1].push((c.node, *to, g.buffer(*buffer).name.clone(), region.clone()))
            }
            CommandKind::AwaitPush { .. } => {}
        }
    }
    out
}

pub fn r1(lo: i64, hi: i64) -> Region {
    Region::from_box(GridBox::new(&[lo], &[hi]).unwrap())
}

/// A copy that distributes `x` into `a`, then `iterations` ping-pong sweeps
/// of a 3-point stencil between `a` and `b`.
pub fn stencil(n: u64, iterations: usize) -> TaskGraph {
    let mut g = TaskGraph::new();
    let x = g.create_buffer("x", &[n], ElementKind::Float64, BufferInit::Iota).unwrap();
    let a = g.create_buffer("a", &[n], ElementKind::Float64, BufferInit::Uninitialized).unwrap();
    let b = g.create_buffer("b", &[n], ElementKind::Float64, BufferInit::Uninitialized).unwrap();
    g.submit(TaskBuilder::new("distribute", &[n]).read("x", x, RangeMapper::OneToOne).write("a", a).body("a", "x[i]").build().unwrap())
        .unwrap();
    let (mut src, mut dst) = (a, b);
    for it in 0..iterations {
        let body = "(s[i-1] + s[i] + s[i+1]) / 3";
        g.submit(
            TaskBuilder::new(format!("sweep{it}"), &[n])
                .read("s", src, RangeMapper::Neighborhood(vec![1]))
                .write("d", dst)
                .body("d", body)
                .build()
                .unwrap(),
        )
        .unwrap();
        std::mem::swap(&mut src, &mut dst);
    }
    g
}
