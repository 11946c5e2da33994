//! Math-24 puzzle domain: exact rational arithmetic, the restricted
//! two-pair solver, the brute-force general solver, and answer validation.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Exact value of a subexpression. All arithmetic is done on rationals so
/// divisions like 8 / (3 - 1/3) stay exact.
pub type Value = Ratio<i64>;

pub const TARGET: i64 = 24;

/// A puzzle is a multiset of four numbers from 1..=13, kept sorted ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Puzzle {
    nums: [i64; 4],
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum PuzzleError {
    #[error("puzzle numbers must be in 1..=13, got {0}")]
    OutOfRange(i64),
    #[error("expected 4 numbers, got {0}")]
    WrongCount(usize),
    #[error("could not parse number {0:?}")]
    BadNumber(String),
}

impl Puzzle {
    pub fn new(mut nums: [i64; 4]) -> Result<Self, PuzzleError> {
        for &n in &nums {
            if !(1..=13).contains(&n) {
                return Err(PuzzleError::OutOfRange(n));
            }
        }
        nums.sort_unstable();
        Ok(Puzzle { nums })
    }

    pub fn numbers(&self) -> [i64; 4] {
        self.nums
    }

    /// Stable identifier, e.g. "04-05-09-10".
    pub fn id(&self) -> String {
        format!(
            "{:02}-{:02}-{:02}-{:02}",
            self.nums[0], self.nums[1], self.nums[2], self.nums[3]
        )
    }
}

impl fmt::Display for Puzzle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.nums[0], self.nums[1], self.nums[2], self.nums[3]
        )
    }
}

impl FromStr for Puzzle {
    type Err = PuzzleError;

    /// Accepts whitespace-separated numbers ("4 5 9 10") or the dashed id
    /// form ("04-05-09-10").
    fn from_str(s: &str) -> Result<Self, PuzzleError> {
        let parts: Vec<&str> = if s.contains('-') {
            s.trim().split('-').collect()
        } else {
            s.split_whitespace().collect()
        };
        if parts.len() != 4 {
            return Err(PuzzleError::WrongCount(parts.len()));
        }
        let mut nums = [0i64; 4];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| PuzzleError::BadNumber(part.to_string()))?;
        }
        Puzzle::new(nums)
    }
}

impl Serialize for Puzzle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Puzzle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All 1820 puzzles (multisets of four values from 1..=13), ascending.
pub fn enumerate_puzzles() -> Vec<Puzzle> {
    let mut out = Vec::new();
    for a in 1..=13 {
        for b in a..=13 {
            for c in b..=13 {
                for d in c..=13 {
                    out.push(Puzzle { nums: [a, b, c, d] });
                }
            }
        }
    }
    out
}

/// The four factor categories of 24 used by the restricted solver. The
/// declaration order is the label batch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "C_1_24")]
    C1x24,
    #[serde(rename = "C_2_12")]
    C2x12,
    #[serde(rename = "C_3_8")]
    C3x8,
    #[serde(rename = "C_4_6")]
    C4x6,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::C1x24,
        Category::C2x12,
        Category::C3x8,
        Category::C4x6,
    ];

    pub fn large(self) -> i64 {
        match self {
            Category::C1x24 => 24,
            Category::C2x12 => 12,
            Category::C3x8 => 8,
            Category::C4x6 => 6,
        }
    }

    pub fn small(self) -> i64 {
        match self {
            Category::C1x24 => 1,
            Category::C2x12 => 2,
            Category::C3x8 => 3,
            Category::C4x6 => 4,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Category::C1x24 => "C_1_24",
            Category::C2x12 => "C_2_12",
            Category::C3x8 => "C_3_8",
            Category::C4x6 => "C_4_6",
        }
    }

    /// Index in label batch order.
    pub fn batch_index(self) -> usize {
        match self {
            Category::C1x24 => 0,
            Category::C2x12 => 1,
            Category::C3x8 => 2,
            Category::C4x6 => 3,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// One restricted solution: which category it falls in, which positions of
/// the sorted quadruple (1-based, ascending pair) supply the large value,
/// and a representative expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Solution {
    pub category: Category,
    pub large_positions: (u8, u8),
    pub expression: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Div];

    pub fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
            Op::Div => '/',
        }
    }

    pub fn apply(self, a: Value, b: Value) -> Option<Value> {
        match self {
            Op::Add => Some(a + b),
            Op::Sub => Some(a - b),
            Op::Mul => Some(a * b),
            Op::Div => (b != Value::from_integer(0)).then(|| a / b),
        }
    }
}

/// Binary expression tree over integer leaves.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Num(i64),
    Bin(Op, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: Op, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    /// Exact value; None when a division by zero occurs anywhere.
    pub fn eval(&self) -> Option<Value> {
        match self {
            Expr::Num(n) => Some(Value::from_integer(*n)),
            Expr::Bin(op, l, r) => op.apply(l.eval()?, r.eval()?),
        }
    }

    pub fn leaves(&self) -> Vec<i64> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<i64>) {
        match self {
            Expr::Num(n) => out.push(*n),
            Expr::Bin(_, l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical rendering
//
// Commutative/associative variants of the same expression should map to one
// string, so +/- chains and */÷ chains are flattened, sub-terms are ordered
// deterministically, and the result is rendered with standard precedence.
// Canonical strings re-parse to the same value.

enum Flat {
    Leaf(i64),
    Sum { pos: Vec<Flat>, neg: Vec<Flat> },
    Prod { num: Vec<Flat>, den: Vec<Flat> },
}

fn flatten(e: &Expr) -> Flat {
    match e {
        Expr::Num(n) => Flat::Leaf(*n),
        Expr::Bin(op, l, r) => match op {
            Op::Add | Op::Sub => {
                let mut pos = Vec::new();
                let mut neg = Vec::new();
                collect_sum(l, false, &mut pos, &mut neg);
                collect_sum(r, *op == Op::Sub, &mut pos, &mut neg);
                Flat::Sum { pos, neg }
            }
            Op::Mul | Op::Div => {
                let mut num = Vec::new();
                let mut den = Vec::new();
                collect_prod(l, false, &mut num, &mut den);
                collect_prod(r, *op == Op::Div, &mut num, &mut den);
                Flat::Prod { num, den }
            }
        },
    }
}

fn collect_sum(e: &Expr, negate: bool, pos: &mut Vec<Flat>, neg: &mut Vec<Flat>) {
    match flatten(e) {
        Flat::Sum { pos: p, neg: n } => {
            let (into_pos, into_neg) = if negate { (n, p) } else { (p, n) };
            pos.extend(into_pos);
            neg.extend(into_neg);
        }
        other => {
            if negate {
                neg.push(other)
            } else {
                pos.push(other)
            }
        }
    }
}

fn collect_prod(e: &Expr, invert: bool, num: &mut Vec<Flat>, den: &mut Vec<Flat>) {
    match flatten(e) {
        Flat::Prod { num: n, den: d } => {
            let (into_num, into_den) = if invert { (d, n) } else { (n, d) };
            num.extend(into_num);
            den.extend(into_den);
        }
        other => {
            if invert {
                den.push(other)
            } else {
                num.push(other)
            }
        }
    }
}

/// Sort key: composite sub-terms first (by their rendered string), then
/// leaves by descending value, so products read like "(10 + 5 - 9) * 4"
/// and pairs like "6 * 1".
fn sort_terms(terms: &mut [Flat]) {
    terms.sort_by(|a, b| match (a, b) {
        (Flat::Leaf(x), Flat::Leaf(y)) => y.cmp(x),
        (Flat::Leaf(_), _) => std::cmp::Ordering::Greater,
        (_, Flat::Leaf(_)) => std::cmp::Ordering::Less,
        (x, y) => render(x).cmp(&render(y)),
    });
}

fn render(f: &Flat) -> String {
    match f {
        Flat::Leaf(n) => n.to_string(),
        Flat::Sum { pos, neg } => {
            let mut out = String::new();
            for (i, t) in pos.iter().enumerate() {
                if i > 0 {
                    out.push_str(" + ");
                }
                out.push_str(&render(t));
            }
            for t in neg {
                out.push_str(" - ");
                out.push_str(&render(t));
            }
            out
        }
        Flat::Prod { num, den } => {
            let factor = |t: &Flat| match t {
                Flat::Sum { .. } => format!("({})", render(t)),
                _ => render(t),
            };
            let mut out = String::new();
            for (i, t) in num.iter().enumerate() {
                if i > 0 {
                    out.push_str(" * ");
                }
                out.push_str(&factor(t));
            }
            for t in den {
                out.push_str(" / ");
                out.push_str(&factor(t));
            }
            out
        }
    }
}

fn sort_flat(f: &mut Flat) {
    match f {
        Flat::Leaf(_) => {}
        Flat::Sum { pos, neg } => {
            pos.iter_mut().for_each(sort_flat);
            neg.iter_mut().for_each(sort_flat);
            sort_terms(pos);
            sort_terms(neg);
        }
        Flat::Prod { num, den } => {
            num.iter_mut().for_each(sort_flat);
            den.iter_mut().for_each(sort_flat);
            sort_terms(num);
            sort_terms(den);
        }
    }
}

/// Canonical string form of an expression.
pub fn canonicalize(e: &Expr) -> String {
    let mut flat = flatten(e);
    sort_flat(&mut flat);
    render(&flat)
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected character {0:?} at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("number literal too large")]
    NumberTooLarge,
    #[error("trailing input after expression at byte {0}")]
    TrailingInput(usize),
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(s: &'a str) -> Self {
        Parser {
            bytes: s.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.peek() {
            let op = match c {
                b'+' => Op::Add,
                b'-' => Op::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while let Some(c) = self.peek() {
            let op = match c {
                b'*' => Op::Mul,
                b'/' => Op::Div,
                b'x' | b'X' => Op::Mul,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(ParseError::UnexpectedEnd),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(b')') => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    Some(c) => Err(ParseError::UnexpectedChar(c as char, self.pos)),
                    None => Err(ParseError::UnexpectedEnd),
                }
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self
                    .bytes
                    .get(self.pos)
                    .is_some_and(|b| b.is_ascii_digit())
                {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
                let n: i64 = text.parse().map_err(|_| ParseError::NumberTooLarge)?;
                Ok(Expr::Num(n))
            }
            Some(c) => Err(ParseError::UnexpectedChar(c as char, self.pos)),
        }
    }
}

/// Parse an arithmetic expression over +, -, *, / (also accepts 'x' for
/// multiplication) with standard precedence. No unary operators.
pub fn parse_expr(s: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(s);
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(ParseError::TrailingInput(p.pos));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Solvers

/// Values reachable from an unordered pair with one binary operation.
pub fn pair_values(a: i64, b: i64) -> [Value; 6] {
    let (ra, rb) = (Value::from_integer(a), Value::from_integer(b));
    [ra + rb, ra * rb, ra - rb, rb - ra, ra / rb, rb / ra]
}

/// True when one operation on the unordered pair {a, b} yields `target`.
pub fn pair_makes(a: i64, b: i64, target: i64) -> bool {
    let t = Value::from_integer(target);
    pair_values(a, b).contains(&t)
}

/// A representative "a op b" rendering for a pair hitting `target`, with the
/// operands ordered for evaluation. Operators are tried in a fixed order so
/// the choice is deterministic (e.g. {6, 1} -> "6 * 1", not "6 / 1").
pub fn pair_expr(a: i64, b: i64, target: i64) -> Option<(i64, Op, i64)> {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let t = Value::from_integer(target);
    for op in [Op::Add, Op::Mul, Op::Sub, Op::Div] {
        if op.apply(Value::from_integer(hi), Value::from_integer(lo)) == Some(t) {
            return Some((hi, op, lo));
        }
        if op.apply(Value::from_integer(lo), Value::from_integer(hi)) == Some(t) {
            return Some((lo, op, hi));
        }
    }
    None
}

const POSITION_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

fn complement(i: usize, j: usize) -> (usize, usize) {
    let mut rest = (0..4).filter(|&p| p != i && p != j);
    (rest.next().unwrap(), rest.next().unwrap())
}

/// Restricted solver over the two-pair family (x1 . x2) * (x3 . x4) = 24
/// with pair targets {1,24}, {2,12}, {3,8}, {4,6}.
///
/// Family rule: a repeated number may supply the large value but never the
/// small one, so e.g. (1,1,3,4) has no family solution even though
/// (3 * 4) * (1 + 1) = 24.
///
/// Results are sorted by category batch order, then by large positions.
pub fn solve_restricted(p: &Puzzle) -> Vec<Solution> {
    let n = p.numbers();
    let mut out = Vec::new();
    for cat in Category::ALL {
        for &(i, j) in &POSITION_PAIRS {
            let (k, l) = complement(i, j);
            if n[k] == n[l] {
                continue;
            }
            let Some((la, lop, lb)) = pair_expr(n[i], n[j], cat.large()) else {
                continue;
            };
            let Some((sa, sop, sb)) = pair_expr(n[k], n[l], cat.small()) else {
                continue;
            };
            out.push(Solution {
                category: cat,
                large_positions: (i as u8 + 1, j as u8 + 1),
                expression: format!(
                    "({} {} {}) * ({} {} {})",
                    la,
                    lop.symbol(),
                    lb,
                    sa,
                    sop.symbol(),
                    sb
                ),
            });
        }
    }
    out
}

/// All 24 index permutations of [0, 1, 2, 3].
fn index_permutations() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            if b == a {
                continue;
            }
            for c in 0..4 {
                if c == a || c == b {
                    continue;
                }
                let d = 6 - a - b - c;
                out.push([a, b, c, d]);
            }
        }
    }
    out
}

/// Evaluate one parenthesization shape numerically. Shapes cover every way
/// to combine four ordered operands with three binary operators.
fn eval_shape(shape: usize, v: [Value; 4], ops: [Op; 3]) -> Option<Value> {
    let [o1, o2, o3] = ops;
    let [a, b, c, d] = v;
    match shape {
        0 => o3.apply(o2.apply(o1.apply(a, b)?, c)?, d),
        1 => o3.apply(o2.apply(a, o1.apply(b, c)?)?, d),
        2 => o3.apply(o1.apply(a, b)?, o2.apply(c, d)?),
        3 => o3.apply(a, o2.apply(o1.apply(b, c)?, d)?),
        4 => o3.apply(a, o2.apply(b, o1.apply(c, d)?)?),
        _ => unreachable!(),
    }
}

fn build_shape_expr(shape: usize, n: [i64; 4], ops: [Op; 3]) -> Expr {
    let [o1, o2, o3] = ops;
    let leaf = |i: usize| Expr::Num(n[i]);
    match shape {
        0 => Expr::bin(o3, Expr::bin(o2, Expr::bin(o1, leaf(0), leaf(1)), leaf(2)), leaf(3)),
        1 => Expr::bin(o3, Expr::bin(o2, leaf(0), Expr::bin(o1, leaf(1), leaf(2))), leaf(3)),
        2 => Expr::bin(o3, Expr::bin(o1, leaf(0), leaf(1)), Expr::bin(o2, leaf(2), leaf(3))),
        3 => Expr::bin(o3, leaf(0), Expr::bin(o2, Expr::bin(o1, leaf(1), leaf(2)), leaf(3))),
        4 => Expr::bin(o3, leaf(0), Expr::bin(o2, leaf(1), Expr::bin(o1, leaf(2), leaf(3)))),
        _ => unreachable!(),
    }
}

/// Brute-force solver over all orderings, operator choices, and
/// parenthesizations. Returns the set of canonical expression strings.
pub fn solve_general(p: &Puzzle) -> BTreeSet<String> {
    let nums = p.numbers();
    let target = Value::from_integer(TARGET);
    let mut out = BTreeSet::new();
    for perm in index_permutations() {
        let ordered = [
            nums[perm[0]],
            nums[perm[1]],
            nums[perm[2]],
            nums[perm[3]],
        ];
        let values = ordered.map(Value::from_integer);
        for o1 in Op::ALL {
            for o2 in Op::ALL {
                for o3 in Op::ALL {
                    let ops = [o1, o2, o3];
                    for shape in 0..5 {
                        if eval_shape(shape, values, ops) == Some(target) {
                            let e = build_shape_expr(shape, ordered, ops);
                            out.insert(canonicalize(&e));
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Incorrect,
    Malformed,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Correct => "Correct",
            Verdict::Incorrect => "Incorrect",
            Verdict::Malformed => "Malformed",
        })
    }
}

/// Score a candidate expression against a puzzle. Malformed when it does not
/// parse; Incorrect when it parses but uses the wrong multiset of numbers,
/// divides by zero, or misses 24; Correct otherwise.
pub fn validate_answer(p: &Puzzle, answer: &str) -> Verdict {
    let Ok(expr) = parse_expr(answer) else {
        return Verdict::Malformed;
    };
    let mut leaves = expr.leaves();
    leaves.sort_unstable();
    if leaves != p.numbers() {
        return Verdict::Incorrect;
    }
    match expr.eval() {
        Some(v) if v == Value::from_integer(TARGET) => Verdict::Correct,
        _ => Verdict::Incorrect,
    }
}
