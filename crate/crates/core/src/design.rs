//! `t-(v, k, lambda)` designs: representation, verification, lambda counting and
//! the small built-in catalog.
//!
//! Points are 1-based. Block order is significant: it fixes the row order of
//! the arrays built from the design.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use itertools::Itertools;
use num_integer::binomial;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;
use crate::verdict::Verdict;

pub type Point = usize;
pub type Block = Vec<Point>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TDesign {
    pub t: usize,
    pub v: usize,
    pub k: usize,
    pub lambda: usize,
    pub blocks: Vec<Block>,
}

impl TDesign {
    /// Number of blocks, `b`.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn points(&self) -> std::ops::RangeInclusive<Point> {
        1..=self.v
    }

    fn block_contains(block: &[Point], p: Point) -> bool {
        block.binary_search(&p).is_ok()
    }

    /// Number of blocks containing every point of `subset`.
    pub fn count_containing(&self, subset: &[Point]) -> usize {
        self.blocks
            .iter()
            .filter(|b| subset.iter().all(|&p| Self::block_contains(b, p)))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DesignViolation {
    Parameters { t: usize, v: usize, k: usize },
    BlockSize { block: usize, size: usize },
    PointOutOfRange { block: usize, point: Point },
    RepeatedPoint { block: usize, point: Point },
    Coverage { subset: Vec<Point>, count: usize, expected: usize },
    RepeatedBlock { first: usize, second: usize },
}

impl fmt::Display for DesignViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignViolation::Parameters { t, v, k } => {
                write!(f, "parameters must satisfy v > k >= t >= 1 (t={t}, v={v}, k={k})")
            }
            DesignViolation::BlockSize { block, size } => {
                write!(f, "block {} has {size} distinct points", block + 1)
            }
            DesignViolation::PointOutOfRange { block, point } => {
                write!(f, "block {} contains point {point} outside [v]", block + 1)
            }
            DesignViolation::RepeatedPoint { block, point } => {
                write!(f, "block {} repeats point {point}", block + 1)
            }
            DesignViolation::Coverage {
                subset,
                count,
                expected,
            } => write!(
                f,
                "subset {subset:?} lies in {count} blocks, expected {expected}"
            ),
            DesignViolation::RepeatedBlock { first, second } => {
                write!(f, "blocks {} and {} are identical", first + 1, second + 1)
            }
        }
    }
}

/// Checks every design invariant. Repeated blocks are reported as warnings;
/// callers that need a simple design (the array construction) should treat
/// them as failures via [`Verdict::strict`].
pub fn verify_design(d: &TDesign) -> Verdict<DesignViolation> {
    let mut verdict = Verdict::default();
    if !(d.v > d.k && d.k >= d.t && d.t >= 1) {
        verdict.fail(DesignViolation::Parameters {
            t: d.t,
            v: d.v,
            k: d.k,
        });
        return verdict;
    }
    let mut well_formed = true;
    for (i, block) in d.blocks.iter().enumerate() {
        let mut sorted = block.clone();
        sorted.sort_unstable();
        if let Some(&p) = sorted.iter().find(|&&p| p == 0 || p > d.v) {
            verdict.fail(DesignViolation::PointOutOfRange { block: i, point: p });
            well_formed = false;
        }
        if let Some((&p, _)) = sorted.iter().tuple_windows().find(|(a, b)| a == b) {
            verdict.fail(DesignViolation::RepeatedPoint { block: i, point: p });
            well_formed = false;
        }
        sorted.dedup();
        if sorted.len() != d.k {
            verdict.fail(DesignViolation::BlockSize {
                block: i,
                size: sorted.len(),
            });
            well_formed = false;
        }
    }
    if !well_formed {
        return verdict;
    }

    let normalized: Vec<Block> = d
        .blocks
        .iter()
        .map(|b| b.iter().copied().sorted().collect())
        .collect();
    let mut seen: BTreeMap<&Block, usize> = BTreeMap::new();
    for (i, b) in normalized.iter().enumerate() {
        if let Some(&first) = seen.get(b) {
            verdict.warn(DesignViolation::RepeatedBlock { first, second: i });
        } else {
            seen.insert(b, i);
        }
    }

    for subset in (1..=d.v).combinations(d.t) {
        let count = normalized
            .iter()
            .filter(|b| subset.iter().all(|p| b.binary_search(p).is_ok()))
            .count();
        if count != d.lambda {
            verdict.fail(DesignViolation::Coverage {
                subset,
                count,
                expected: d.lambda,
            });
        }
    }
    verdict
}

/// `lambda * C(v-s, t-s) / C(k-s, t-s)`, or `None` when the quotient is not integral.
pub fn lambda_s_closed_form(t: usize, v: usize, k: usize, lambda: usize, s: usize) -> Option<usize> {
    if s > t || k < t || v < t {
        return None;
    }
    let num = lambda as u128 * binomial((v - s) as u128, (t - s) as u128);
    let den = binomial((k - s) as u128, (t - s) as u128);
    (den != 0 && num.is_multiple_of(den)).then(|| (num / den) as usize)
}

/// The number of blocks through any `s` points, obtained by counting over
/// every `s`-subset. `None` if the count is not constant.
pub fn lambda_s_count(d: &TDesign, s: usize) -> Option<usize> {
    let mut counts = (1..=d.v).combinations(s).map(|sub| d.count_containing(&sub));
    let first = counts.next()?;
    counts.all(|c| c == first).then_some(first)
}

/// `lambda_s` for `0 <= s <= t`. The closed form is cross-checked against a
/// direct count; a mismatch means `d` is not a valid design.
pub fn lambda_s(d: &TDesign, s: usize) -> Result<usize> {
    if s > d.t {
        return Err(Error::param(format!("s = {s} exceeds t = {}", d.t)));
    }
    let closed = lambda_s_closed_form(d.t, d.v, d.k, d.lambda, s);
    let counted = lambda_s_count(d, s);
    match (closed, counted) {
        (Some(a), Some(b)) if a == b => Ok(a),
        _ => Err(Error::Consistency(format!(
            "lambda_{s}: closed form {closed:?} disagrees with block count {counted:?}"
        ))),
    }
}

/// Blocks containing every point of `contain` and none of `avoid`, by direct scan.
pub fn count_containing_avoiding(d: &TDesign, contain: &[Point], avoid: &[Point]) -> Result<usize> {
    if let Some(p) = contain.iter().find(|p| avoid.contains(p)) {
        return Err(Error::param(format!(
            "point {p} is both required and excluded"
        )));
    }
    Ok(d.blocks
        .iter()
        .filter(|b| contain.iter().all(|p| b.contains(p)) && !avoid.iter().any(|p| b.contains(p)))
        .count())
}

/// All `C(v, k)` k-subsets of `[v]` in lexicographic order.
pub fn complete_design(v: usize, k: usize, t: usize) -> Result<TDesign> {
    if !(v > k && k >= t && t >= 1) {
        return Err(Error::param(format!(
            "complete design needs v > k >= t >= 1, got v={v}, k={k}, t={t}"
        )));
    }
    Ok(TDesign {
        t,
        v,
        k,
        lambda: binomial(v - t, k - t),
        blocks: (1..=v).combinations(k).collect(),
    })
}

pub struct CatalogEntry {
    pub id: &'static str,
    pub notes: &'static str,
    pub build: fn() -> TDesign,
}

fn parse_blocks(words: &str, shift: usize) -> Vec<Block> {
    words
        .split_whitespace()
        .map(|w| {
            w.chars()
                .map(|c| c.to_digit(10).unwrap() as usize + shift)
                .collect()
        })
        .collect()
}

fn example_2_10_4_2() -> TDesign {
    TDesign {
        t: 2,
        v: 10,
        k: 4,
        lambda: 2,
        blocks: parse_blocks(
            "0123 0145 0246 0378 0579 0689 1278 1369 1479 1568 2359 2489 2567 3458 3467",
            1,
        ),
    }
}

fn fano_extension_3_8_4_1() -> TDesign {
    TDesign {
        t: 3,
        v: 8,
        k: 4,
        lambda: 1,
        blocks: parse_blocks(
            "1234 1256 1278 1357 1368 1458 1467 3478 2468 2358 2367 2457 3456 5678",
            0,
        ),
    }
}

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        id: "ex1-2-10-4-2",
        notes: "2-(10,4,2) design; source points 0..9 shifted to 1..10",
        build: example_2_10_4_2,
    },
    CatalogEntry {
        id: "ex2-3-8-4-1",
        notes: "3-(8,4,1) design in the row order of the reference HHPDA",
        build: fano_extension_3_8_4_1,
    },
];

pub fn catalog_design(id: &str) -> Result<TDesign> {
    CATALOG
        .iter()
        .find(|e| e.id == id)
        .map(|e| (e.build)())
        .ok_or_else(|| Error::Lookup(id.to_string()))
}

/// Structural checks done at load time: block sizes, ordering, point range.
/// Coverage is left to [`verify_design`].
fn check_shape(d: &TDesign, context: &str) -> Result<()> {
    for (i, b) in d.blocks.iter().enumerate() {
        let at = format!("{context}: blocks[{i}] = {b:?}");
        if b.len() != d.k {
            return Err(Error::parse(at, format!("expected {} points, found {}", d.k, b.len())));
        }
        if !b.iter().tuple_windows().all(|(a, c)| a < c) {
            return Err(Error::parse(at, "points must be strictly increasing"));
        }
        if b.iter().any(|&p| p == 0 || p > d.v) {
            return Err(Error::parse(at, format!("points must lie in 1..={}", d.v)));
        }
    }
    Ok(())
}

pub fn parse_design(text: &str, context: &str) -> Result<TDesign> {
    let d: TDesign = json::parse_json(text, context)?;
    check_shape(&d, context)?;
    Ok(d)
}

/// Loads a design from a catalog id or a JSON file path.
pub fn load_design(source: &str) -> Result<TDesign> {
    if let Ok(d) = catalog_design(source) {
        return Ok(d);
    }
    let path = Path::new(source);
    if !path.exists() && !source.ends_with(".json") && !source.contains('/') {
        return Err(Error::Lookup(source.to_string()));
    }
    parse_design(&json::read_file(path)?, source)
}

pub fn design_to_json(d: &TDesign) -> Result<String> {
    json::to_canonical_string(d)
}

pub fn store_design(d: &TDesign, path: &Path) -> Result<()> {
    json::write_file(path, &design_to_json(d)?)
}
