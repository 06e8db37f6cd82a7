//! Kernel expression IR: the text grammar, a printer that round-trips through
//! the parser, the element-wise evaluator, and the static footprint check.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-'? factor
//! factor := number | param | 'i' '.' digit | access | '(' expr ')'
//! access := ident '[' index (',' index)* ']'
//! index  := 'i' '.' digit (('+' | '-') integer)?
//! ```
//!
//! A bare `i` stands for `i.0` in one-dimensional kernels.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{ParseError, ParseErrorKind};
use crate::model::{Buffer, ElementKind, RangeMapper, Scalar, Task};
use crate::region::{GridBox, Point, Region, MAX_DIMS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// One buffer coordinate of an accessor read: `i.component + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct IndexTerm {
    pub component: usize,
    pub offset: i64,
}

impl fmt::Display for IndexTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i.{}", self.component)?;
        match self.offset {
            0 => Ok(()),
            o if o > 0 => write!(f, "+{o}"),
            o => write!(f, "-{}", o.unsigned_abs()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelExpr {
    Literal(f64),
    Param(String),
    GlobalId(usize),
    Read {
        accessor: String,
        index: Vec<IndexTerm>,
    },
    Neg(Box<KernelExpr>),
    Binary(BinOp, Box<KernelExpr>, Box<KernelExpr>),
}

impl KernelExpr {
    pub fn binary(op: BinOp, lhs: KernelExpr, rhs: KernelExpr) -> Self {
        KernelExpr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    fn precedence(&self) -> u8 {
        match self {
            KernelExpr::Binary(op, ..) => op.precedence(),
            KernelExpr::Neg(_) => 3,
            _ => 4,
        }
    }

    /// Every accessor read in the expression, in evaluation order.
    pub fn reads(&self) -> Vec<(&str, &[IndexTerm])> {
        let mut out = Vec::new();
        self.collect_reads(&mut out);
        out
    }

    fn collect_reads<'a>(&'a self, out: &mut Vec<(&'a str, &'a [IndexTerm])>) {
        match self {
            KernelExpr::Read { accessor, index } => out.push((accessor, index)),
            KernelExpr::Neg(e) => e.collect_reads(out),
            KernelExpr::Binary(_, l, r) => {
                l.collect_reads(out);
                r.collect_reads(out);
            }
            _ => {}
        }
    }
}

impl fmt::Display for KernelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelExpr::Literal(v) => write!(f, "{v}"),
            KernelExpr::Param(name) => f.write_str(name),
            KernelExpr::GlobalId(k) => write!(f, "i.{k}"),
            KernelExpr::Read { accessor, index } => {
                write!(f, "{accessor}[")?;
                for (j, t) in index.iter().enumerate() {
                    if j > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str("]")
            }
            KernelExpr::Neg(e) => {
                if e.precedence() < 4 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            KernelExpr::Binary(op, l, r) => {
                let p = op.precedence();
                if l.precedence() < p {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if r.precedence() <= p {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
        }
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num { text: String, integral: bool },
    Ident(String),
    Sym(char),
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num { text, .. } => write!(f, "number `{text}`"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Sym(c) => write!(f, "`{c}`"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn syntax(position: usize, msg: impl Into<String>) -> ParseError {
    ParseError {
        position,
        kind: ParseErrorKind::Syntax(msg.into()),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            let mut integral = true;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                integral = false;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.push((
                Tok::Num {
                    text: text[start..i].to_string(),
                    integral,
                },
                start,
            ));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), start));
        } else if b"+-*/()[],.".contains(&c) {
            out.push((Tok::Sym(c as char), i));
            i += 1;
        } else {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(syntax(i, format!("unexpected character `{ch}`")));
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    readable: &'a [&'a str],
    params: &'a BTreeMap<String, f64>,
    dims: usize,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected `{c}`, found {}", self.peek())))
        }
    }

    fn expr(&mut self) -> Result<KernelExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = KernelExpr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<KernelExpr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = KernelExpr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<KernelExpr, ParseError> {
        if self.eat('-') {
            Ok(KernelExpr::Neg(Box::new(self.factor()?)))
        } else {
            self.factor()
        }
    }

    fn factor(&mut self) -> Result<KernelExpr, ParseError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num { text, .. } => text
                .parse::<f64>()
                .map(KernelExpr::Literal)
                .map_err(|_| syntax(at, format!("bad number `{text}`"))),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) if name == "i" => Ok(KernelExpr::GlobalId(self.component(at)?)),
            Tok::Ident(name) => {
                if *self.peek() == Tok::Sym('[') {
                    self.access(name, at)
                } else if self.params.contains_key(&name) {
                    Ok(KernelExpr::Param(name))
                } else {
                    Err(ParseError {
                        position: at,
                        kind: ParseErrorKind::UnknownName(name),
                    })
                }
            }
            other => Err(syntax(at, format!("expected an operand, found {other}"))),
        }
    }

    /// Parses the `.k` suffix after `i`, defaulting to component 0 in 1D.
    fn component(&mut self, at: usize) -> Result<usize, ParseError> {
        if !self.eat('.') {
            if self.dims == 1 {
                return Ok(0);
            }
            return Err(syntax(at, format!("bare `i` is only allowed in 1D kernels (this one is {}D)", self.dims)));
        }
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num { text, integral: true } if text.len() == 1 => {
                let k: usize = text.parse().map_err(|_| syntax(pos, "bad component"))?;
                if k >= self.dims {
                    return Err(ParseError {
                        position: pos,
                        kind: ParseErrorKind::BadComponent {
                            component: k,
                            dims: self.dims,
                        },
                    });
                }
                Ok(k)
            }
            other => Err(syntax(pos, format!("expected a digit after `i.`, found {other}"))),
        }
    }

    fn access(&mut self, name: String, at: usize) -> Result<KernelExpr, ParseError> {
        if !self.readable.contains(&name.as_str()) {
            return Err(ParseError {
                position: at,
                kind: ParseErrorKind::UnknownName(name),
            });
        }
        self.expect('[')?;
        let mut index = vec![self.index()?];
        while self.eat(',') {
            index.push(self.index()?);
        }
        if index.len() > MAX_DIMS {
            return Err(syntax(at, "too many index components"));
        }
        self.expect(']')?;
        Ok(KernelExpr::Read {
            accessor: name,
            index,
        })
    }

    fn index(&mut self) -> Result<IndexTerm, ParseError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Ident(name) if name == "i" => {}
            Tok::Ident(name) => {
                return Err(ParseError {
                    position: at,
                    kind: ParseErrorKind::UnknownName(name),
                })
            }
            other => {
                return Err(syntax(at, format!("index must have the form i.k±c, found {other}")))
            }
        }
        let component = self.component(at)?;
        let sign = match self.peek() {
            Tok::Sym('+') => 1,
            Tok::Sym('-') => -1,
            Tok::Sym('*') | Tok::Sym('/') => {
                return Err(ParseError {
                    position: self.offset(),
                    kind: ParseErrorKind::NonConstantOffset,
                })
            }
            _ => return Ok(IndexTerm { component, offset: 0 }),
        };
        self.bump();
        let (tok, pos) = self.bump();
        let offset = match tok {
            Tok::Num { text, integral: true } => text
                .parse::<i64>()
                .map_err(|_| syntax(pos, format!("offset `{text}` out of range")))?,
            _ => {
                return Err(ParseError {
                    position: pos,
                    kind: ParseErrorKind::NonConstantOffset,
                })
            }
        };
        match self.peek() {
            Tok::Sym(',') | Tok::Sym(']') => Ok(IndexTerm {
                component,
                offset: sign * offset,
            }),
            _ => Err(ParseError {
                position: self.offset(),
                kind: ParseErrorKind::NonConstantOffset,
            }),
        }
    }
}

/// Parses kernel text against the task's read accessors and scalar parameters.
pub fn parse_kernel(
    text: &str,
    readable: &[&str],
    params: &BTreeMap<String, f64>,
    dims: usize,
) -> Result<KernelExpr, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        readable,
        params,
        dims,
    };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        other => Err(syntax(p.offset(), format!("unexpected {other}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalError {
    MapperViolation { accessor: String, index: Point },
    DivisionByZero,
    UnknownParam(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::MapperViolation { accessor, index } => {
                write!(f, "`{accessor}` read at {index:?} outside its mapped region")
            }
            EvalError::DivisionByZero => f.write_str("integer division by zero"),
            EvalError::UnknownParam(name) => write!(f, "unknown parameter `{name}`"),
        }
    }
}

/// Element reads for one chunk evaluation.
pub trait ReadView {
    /// Reads `accessor` at the raw (unclamped) `index`.
    fn read(&self, accessor: &str, index: &Point) -> Result<Scalar, EvalError>;
}

/// The readable window of one accessor for one chunk, implementing the
/// boundary rule: out-of-extent indices are clamped to the nearest valid index.
/// Relative mappers check the raw index against their unclamped footprint;
/// absolute mappers check the clamped index against the mapped region.
#[derive(Clone, Debug)]
pub struct AccessWindow {
    pub extent: GridBox,
    pub mapped: Region,
    pub footprint: Option<GridBox>,
}

impl AccessWindow {
    pub fn new(mapper: &RangeMapper, chunk: &GridBox, extent: &GridBox, mapped: Region) -> Self {
        AccessWindow {
            extent: *extent,
            footprint: mapper.unclamped_footprint(chunk),
            mapped,
        }
    }

    /// The storage index for a raw read, `None` on a mapper violation.
    pub fn resolve(&self, raw: &Point) -> Option<Point> {
        if let Some(fp) = &self.footprint {
            if !fp.contains_point(raw) {
                return None;
            }
        }
        let p = self.extent.clamp_point(raw);
        self.mapped.contains_point(&p).then_some(p)
    }
}

trait Element: Copy {
    fn from_scalar(s: Scalar) -> Self;
    fn from_f64(v: f64) -> Self;
    fn from_i64(v: i64) -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Result<Self, EvalError>;
    fn neg(self) -> Self;
}

impl Element for f64 {
    fn from_scalar(s: Scalar) -> Self {
        s.as_f64()
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Result<Self, EvalError> {
        Ok(self / o)
    }
    fn neg(self) -> Self {
        -self
    }
}

impl Element for i64 {
    fn from_scalar(s: Scalar) -> Self {
        s.as_i64()
    }
    fn from_f64(v: f64) -> Self {
        v as i64
    }
    fn from_i64(v: i64) -> Self {
        v
    }
    fn add(self, o: Self) -> Self {
        self.wrapping_add(o)
    }
    fn sub(self, o: Self) -> Self {
        self.wrapping_sub(o)
    }
    fn mul(self, o: Self) -> Self {
        self.wrapping_mul(o)
    }
    fn div(self, o: Self) -> Result<Self, EvalError> {
        if o == 0 {
            Err(EvalError::DivisionByZero)
        } else {
            Ok(self.wrapping_div(o))
        }
    }
    fn neg(self) -> Self {
        self.wrapping_neg()
    }
}

fn eval_as<T: Element>(
    expr: &KernelExpr,
    id: &Point,
    view: &dyn ReadView,
    params: &BTreeMap<String, f64>,
) -> Result<T, EvalError> {
    Ok(match expr {
        KernelExpr::Literal(v) => T::from_f64(*v),
        KernelExpr::Param(name) => T::from_f64(
            *params
                .get(name)
                .ok_or_else(|| EvalError::UnknownParam(name.clone()))?,
        ),
        KernelExpr::GlobalId(k) => T::from_i64(id[*k]),
        KernelExpr::Read { accessor, index } => {
            let mut p = [0i64; MAX_DIMS];
            for (j, t) in index.iter().enumerate() {
                p[j] = id[t.component] + t.offset;
            }
            T::from_scalar(view.read(accessor, &p)?)
        }
        KernelExpr::Neg(e) => eval_as::<T>(e, id, view, params)?.neg(),
        KernelExpr::Binary(op, l, r) => {
            let a = eval_as::<T>(l, id, view, params)?;
            let b = eval_as::<T>(r, id, view, params)?;
            match op {
                BinOp::Add => a.add(b),
                BinOp::Sub => a.sub(b),
                BinOp::Mul => a.mul(b),
                BinOp::Div => a.div(b)?,
            }
        }
    })
}

/// Evaluates `expr` at global id `id`, depth-first and left to right, in the
/// arithmetic of `kind`: IEEE-754 binary64 for floats, wrapping 64-bit with
/// truncating division for integers.
pub fn eval_kernel(
    expr: &KernelExpr,
    id: &Point,
    view: &dyn ReadView,
    params: &BTreeMap<String, f64>,
    kind: ElementKind,
) -> Result<Scalar, EvalError> {
    match kind {
        ElementKind::Float64 => eval_as::<f64>(expr, id, view, params).map(Scalar::F64),
        ElementKind::Int64 => eval_as::<i64>(expr, id, view, params).map(Scalar::I64),
    }
}

/// A read whose constant offsets leave the accessor's declared footprint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FootprintViolation {
    pub accessor: String,
    pub index: Vec<IndexTerm>,
    pub mapper: String,
}

impl fmt::Display for FootprintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}[", self.accessor)?;
        for (j, t) in self.index.iter().enumerate() {
            if j > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "]` not covered by {}", self.mapper)
    }
}

/// Checks every constant-offset read of `task` against its accessor's range
/// mapper. `buffers` is indexed by buffer id; mappers must already be valid
/// for their buffers.
pub fn static_footprint_check(task: &Task, buffers: &[Buffer]) -> Result<(), Vec<FootprintViolation>> {
    let mut violations = Vec::new();
    for body in &task.body {
        for (name, index) in body.expr.reads() {
            let Some(acc) = task.accessor(name) else {
                continue;
            };
            let Some(buffer) = buffers.get(acc.buffer.0) else {
                continue;
            };
            let ok = index.len() == buffer.dims() && covered(&acc.mapper, index, task, buffer);
            let v = FootprintViolation {
                accessor: name.to_string(),
                index: index.to_vec(),
                mapper: acc.mapper.to_string(),
            };
            if !ok && !violations.contains(&v) {
                violations.push(v);
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn covered(mapper: &RangeMapper, index: &[IndexTerm], task: &Task, buffer: &Buffer) -> bool {
    let identity = |j: usize, t: &IndexTerm| t.component == j && t.offset == 0;
    match mapper {
        RangeMapper::All => true,
        RangeMapper::OneToOne => index.iter().enumerate().all(|(j, t)| identity(j, t)),
        RangeMapper::Neighborhood(r) => index
            .iter()
            .enumerate()
            .all(|(j, t)| t.component == j && t.offset.unsigned_abs() <= r[j]),
        RangeMapper::Slice(d) => index
            .iter()
            .enumerate()
            .all(|(j, t)| j == *d || identity(j, t)),
        RangeMapper::Fixed(region) => {
            // Reads are clamped into the extent before the mapped-region
            // check, and clamping is monotone, so the clamped image of the
            // range is the box spanned by the clamped corners.
            let range = &task.global_range;
            let ext = &buffer.extent;
            let clamp = |j: usize, v: i64| v.clamp(ext.lo()[j], ext.hi()[j] - 1);
            let lo: Vec<i64> = index
                .iter()
                .enumerate()
                .map(|(j, t)| clamp(j, range.lo()[t.component] + t.offset))
                .collect();
            let hi: Vec<i64> = index
                .iter()
                .enumerate()
                .map(|(j, t)| clamp(j, range.hi()[t.component] - 1 + t.offset) + 1)
                .collect();
            let Ok(image) = GridBox::new(&lo, &hi) else {
                return false;
            };
            region
                .intersect_box(ext)
                .and_then(|r| r.contains(&Region::from_box(image)))
                .unwrap_or(false)
        }
    }
}
