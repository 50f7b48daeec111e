//! Star/null/label arrays, the PDA and hotplug-PDA verifiers, the inner array
//! built from a `t`-set, and the star-pattern row matcher.
//!
//! Rows and columns are 0-based in the API; violation messages print them
//! 1-based.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use itertools::Itertools;
use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::verdict::Verdict;

pub type Label = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cell {
    Star,
    Null,
    Label(Label),
}

impl Cell {
    pub fn is_star(self) -> bool {
        matches!(self, Cell::Star)
    }

    pub fn label(self) -> Option<Label> {
        match self {
            Cell::Label(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Star => write!(f, "*"),
            Cell::Null => write!(f, "."),
            Cell::Label(l) => write!(f, "{l}"),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Star => s.serialize_str("*"),
            Cell::Null => s.serialize_none(),
            Cell::Label(l) => s.serialize_u32(*l),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct CellVisitor;
        impl<'de> Visitor<'de> for CellVisitor {
            type Value = Cell;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"*\", null, or a positive integer")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Cell, E> {
                if v == "*" {
                    Ok(Cell::Star)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_unit<E: de::Error>(self) -> std::result::Result<Cell, E> {
                Ok(Cell::Null)
            }
            fn visit_none<E: de::Error>(self) -> std::result::Result<Cell, E> {
                Ok(Cell::Null)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Cell, E> {
                match Label::try_from(v) {
                    Ok(l) if l > 0 => Ok(Cell::Label(l)),
                    _ => Err(E::invalid_value(de::Unexpected::Unsigned(v), &self)),
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Cell, E> {
                Err(E::invalid_value(de::Unexpected::Signed(v), &self))
            }
        }
        d.deserialize_any(CellVisitor)
    }
}

/// Rectangular array of cells.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

impl Grid {
    pub fn filled(rows: usize, cols: usize, cell: Cell) -> Self {
        Grid {
            rows,
            cols,
            cells: vec![cell; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Cell>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape(format!(
                "row {} has {} cells, expected {cols}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Ok(Grid {
            rows: rows.len(),
            cols,
            cells: rows.into_iter().flatten().collect(),
        })
    }

    /// Parses a compact textual array: rows separated by newlines or `;`,
    /// cells by whitespace, `*` for star, `.` for null.
    pub fn parse(text: &str) -> Result<Self> {
        let rows = text
            .split(['\n', ';'])
            .map(str::trim)
            .filter(|r| !r.is_empty())
            .map(|r| {
                r.split_whitespace()
                    .map(|c| match c {
                        "*" => Ok(Cell::Star),
                        "." => Ok(Cell::Null),
                        n => n
                            .parse::<Label>()
                            .ok()
                            .filter(|&l| l > 0)
                            .map(Cell::Label)
                            .ok_or_else(|| Error::parse("array text", format!("bad cell `{n}`"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Grid::from_rows(rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, cell: Cell) {
        self.cells[r * self.cols + c] = cell;
    }

    pub fn row(&self, r: usize) -> &[Cell] {
        &self.cells[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<Cell>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn column_star_count(&self, c: usize) -> usize {
        (0..self.rows).filter(|&r| self.get(r, c).is_star()).count()
    }

    /// Bit set of star positions in a row (columns < 128).
    pub fn star_mask(&self, r: usize) -> u128 {
        self.row(r)
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_star())
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    /// Keeps stars, turns everything else into null.
    pub fn star_pattern(&self) -> Grid {
        Grid {
            rows: self.rows,
            cols: self.cols,
            cells: self
                .cells
                .iter()
                .map(|c| if c.is_star() { Cell::Star } else { Cell::Null })
                .collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Grid {
        let rows = (0..self.rows)
            .map(|r| cols.iter().map(|&c| self.get(r, c)).collect())
            .collect();
        Grid::from_rows(rows).expect("rectangular by construction")
    }

    pub fn select_rows(&self, rows: &[usize]) -> Grid {
        Grid {
            rows: rows.len(),
            cols: self.cols,
            cells: rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect(),
        }
    }

    pub fn labels(&self) -> BTreeSet<Label> {
        self.cells.iter().filter_map(|c| c.label()).collect()
    }

    /// Positions of every label, in row-major order.
    pub fn label_positions(&self) -> BTreeMap<Label, Vec<(usize, usize)>> {
        let mut map: BTreeMap<Label, Vec<(usize, usize)>> = BTreeMap::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Cell::Label(l) = self.get(r, c) {
                    map.entry(l).or_default().push((r, c));
                }
            }
        }
        map
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Grid {}x{}", self.rows, self.cols)?;
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .cells
            .iter()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1);
        for r in 0..self.rows {
            let line = self.row(r).iter().map(|c| format!("{c:>width$}")).join(" ");
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl Serialize for Grid {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<Cell>>::deserialize(d)?;
        Grid::from_rows(rows).map_err(de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdaParams {
    pub k: usize,
    pub f: usize,
    pub z: usize,
    pub s: usize,
}

impl fmt::Display for PdaParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.k, self.f, self.z, self.s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PdaViolation {
    /// A cell outside `{star} ∪ labels`.
    NullCell { row: usize, col: usize },
    /// C1: column star count differs from the common `Z`.
    StarCount { col: usize, stars: usize, expected: usize },
    /// C2: a label in `1..=S` never occurs.
    MissingLabel { label: Label },
    /// C3(a): two occurrences of a label share a row or a column.
    SharedLine { label: Label, a: (usize, usize), b: (usize, usize) },
    /// C3(b): a cross position of two occurrences is not a star.
    CrossNotStar { label: Label, a: (usize, usize), b: (usize, usize), cross: (usize, usize) },
    /// The array is a PDA, but not with the claimed parameters.
    ParamMismatch { claimed: PdaParams, found: PdaParams },
}

fn rc(p: (usize, usize)) -> String {
    format!("({}, {})", p.0 + 1, p.1 + 1)
}

impl fmt::Display for PdaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PdaViolation::NullCell { row, col } => {
                write!(f, "C1: cell {} is null; a PDA holds only stars and labels", rc((*row, *col)))
            }
            PdaViolation::StarCount { col, stars, expected } => write!(
                f,
                "C1: column {} has {stars} stars, expected {expected}",
                col + 1
            ),
            PdaViolation::MissingLabel { label } => {
                write!(f, "C2: label {label} does not occur")
            }
            PdaViolation::SharedLine { label, a, b } => write!(
                f,
                "C3(a): label {label} at {} and {} shares a row or column",
                rc(*a),
                rc(*b)
            ),
            PdaViolation::CrossNotStar { label, a, b, cross } => write!(
                f,
                "C3(b): label {label} at {} and {} needs a star at {}",
                rc(*a),
                rc(*b),
                rc(*cross)
            ),
            PdaViolation::ParamMismatch { claimed, found } => {
                write!(f, "claimed {claimed} PDA but found {found}")
            }
        }
    }
}

/// Most frequent column star count (ties go to the smaller count).
fn common_star_count(arr: &Grid) -> usize {
    let counts = (0..arr.cols()).map(|c| arr.column_star_count(c)).counts();
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(z, _)| z)
}

/// C3 for one label's occurrences: pairwise distinct rows and columns with
/// stars at both cross positions.
pub(crate) fn check_label_pairs(
    arr: &Grid,
    label: Label,
    cells: &[(usize, usize)],
) -> Vec<PdaViolation> {
    let mut out = Vec::new();
    for (&a, &b) in cells.iter().tuple_combinations() {
        if a.0 == b.0 || a.1 == b.1 {
            out.push(PdaViolation::SharedLine { label, a, b });
            continue;
        }
        for cross in [(a.0, b.1), (b.0, a.1)] {
            if !arr.get(cross.0, cross.1).is_star() {
                out.push(PdaViolation::CrossNotStar { label, a, b, cross });
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct PdaReport {
    pub params: PdaParams,
    pub verdict: Verdict<PdaViolation>,
}

impl PdaReport {
    pub fn is_pass(&self) -> bool {
        self.verdict.is_pass()
    }
}

/// Checks C1-C3 and extracts `(K, F, Z, |S|)`. Labels are expected to be `1..=S`.
pub fn verify_pda(arr: &Grid) -> PdaReport {
    let mut verdict = Verdict::default();
    for r in 0..arr.rows() {
        for c in 0..arr.cols() {
            if arr.get(r, c) == Cell::Null {
                verdict.fail(PdaViolation::NullCell { row: r, col: c });
            }
        }
    }
    let z = common_star_count(arr);
    for c in 0..arr.cols() {
        let stars = arr.column_star_count(c);
        if stars != z {
            verdict.fail(PdaViolation::StarCount { col: c, stars, expected: z });
        }
    }
    let positions = arr.label_positions();
    let max_label = positions.keys().next_back().copied().unwrap_or(0);
    for label in 1..=max_label {
        if !positions.contains_key(&label) {
            verdict.fail(PdaViolation::MissingLabel { label });
        }
    }
    for (&label, cells) in &positions {
        for v in check_label_pairs(arr, label, cells) {
            verdict.fail(v);
        }
    }
    PdaReport {
        params: PdaParams {
            k: arr.cols(),
            f: arr.rows(),
            z,
            s: positions.len(),
        },
        verdict,
    }
}

/// [`verify_pda`] plus a check that the extracted parameters match `claimed`.
pub fn verify_pda_as(arr: &Grid, claimed: PdaParams) -> PdaReport {
    let mut report = verify_pda(arr);
    if report.params != claimed {
        report.verdict.fail(PdaViolation::ParamMismatch {
            claimed,
            found: report.params,
        });
    }
    report
}

/// Row index of the inner array: a nonempty proper subset `Y` of `[t]` and a copy index `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BRow {
    pub y: Vec<usize>,
    pub copy: usize,
}

/// The inner PDA together with the `(Y, i)` index of every row and the set
/// label each integer stands for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BArray {
    pub grid: Grid,
    pub rows: Vec<BRow>,
    /// `label_sets[l - 1]` is the `(Y', i)` that label `l` replaces.
    pub label_sets: Vec<BRow>,
}

/// Builds the `|R| x t` array with `B((Y, i), j) = star` if `j ∈ Y`, else label `(Y ∪ {j}, i)`.
///
/// `multiplicities[s - 1] = a_s` for `s = 1..t-1`. Rows are ordered by `s`
/// descending, then copy index, then `Y` lexicographically. Set labels are
/// numbered by `|Y'|` descending, then `Y'` lexicographically, then copy index.
pub fn build_b_array(t: usize, multiplicities: &[usize]) -> Result<BArray> {
    if t < 2 {
        return Err(Error::param(format!("inner array needs t >= 2, got t = {t}")));
    }
    if multiplicities.len() != t - 1 {
        return Err(Error::param(format!(
            "expected {} multiplicities a_1..a_{}, got {}",
            t - 1,
            t - 1,
            multiplicities.len()
        )));
    }
    if multiplicities.iter().all(|&a| a == 0) {
        return Err(Error::param("all multiplicities are zero"));
    }

    let mut rows = Vec::new();
    for s in (1..t).rev() {
        for copy in 1..=multiplicities[s - 1] {
            for y in (1..=t).combinations(s) {
                rows.push(BRow { y, copy });
            }
        }
    }

    let mut label_sets = Vec::new();
    for size in (2..=t).rev() {
        for y in (1..=t).combinations(size) {
            for copy in 1..=multiplicities[size - 2] {
                label_sets.push(BRow { y: y.clone(), copy });
            }
        }
    }
    let label_of: BTreeMap<&BRow, Label> = label_sets
        .iter()
        .enumerate()
        .map(|(i, r)| (r, i as Label + 1))
        .collect();

    let mut grid = Grid::filled(rows.len(), t, Cell::Star);
    for (r, row) in rows.iter().enumerate() {
        for j in 1..=t {
            if row.y.contains(&j) {
                continue;
            }
            let mut y: Vec<usize> = row.y.iter().copied().chain([j]).collect();
            y.sort_unstable();
            let key = BRow { y, copy: row.copy };
            grid.set(r, j - 1, Cell::Label(label_of[&key]));
        }
    }
    Ok(BArray {
        grid,
        rows,
        label_sets,
    })
}

/// Assigns each pattern row a distinct host row with the identical star set
/// (exact equality, not containment) by augmenting-path bipartite matching.
///
/// `preference` lists host rows in the order candidates are tried; rows not
/// listed are never used. Returns the host row for every pattern row, or
/// `None` if no perfect matching exists.
pub fn find_row_assignment(host: &Grid, pattern: &Grid, preference: &[usize]) -> Option<Vec<usize>> {
    if host.cols() != pattern.cols() {
        return None;
    }
    let host_masks: Vec<u128> = (0..host.rows()).map(|r| host.star_mask(r)).collect();
    let adjacency: Vec<Vec<usize>> = (0..pattern.rows())
        .map(|r| {
            let m = pattern.star_mask(r);
            preference
                .iter()
                .copied()
                .filter(|&h| host_masks[h] == m)
                .collect()
        })
        .collect();

    let mut owner: Vec<Option<usize>> = vec![None; host.rows()];
    fn augment(
        p: usize,
        adjacency: &[Vec<usize>],
        owner: &mut [Option<usize>],
        visited: &mut [bool],
    ) -> bool {
        // a free preferred row wins before any existing match is rerouted
        if let Some(&h) = adjacency[p].iter().find(|&&h| owner[h].is_none()) {
            visited[h] = true;
            owner[h] = Some(p);
            return true;
        }
        for &h in &adjacency[p] {
            if visited[h] {
                continue;
            }
            visited[h] = true;
            if owner[h].is_none_or(|q| augment(q, adjacency, owner, visited)) {
                owner[h] = Some(p);
                return true;
            }
        }
        false
    }
    for p in 0..pattern.rows() {
        let mut visited = vec![false; host.rows()];
        if !augment(p, &adjacency, &mut owner, &mut visited) {
            return None;
        }
    }
    let mut assignment = vec![0; pattern.rows()];
    for (h, o) in owner.iter().enumerate() {
        if let Some(p) = o {
            assignment[*p] = h;
        }
    }
    Some(assignment)
}

/// True iff the selected host rows reproduce the pattern's stars row by row.
pub fn star_match(host: &Grid, rows: &[usize], pattern: &Grid) -> bool {
    rows.len() == pattern.rows()
        && host.cols() == pattern.cols()
        && rows
            .iter()
            .enumerate()
            .all(|(p, &h)| host.star_mask(h) == pattern.star_mask(p))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HppdaViolation {
    StarCount { col: usize, stars: usize, expected: usize },
    StarsNotBelowSubpacketization { z: usize, f_prime: usize },
    InnerArray(PdaViolation),
    NoAssignment { tau: Vec<usize> },
}

impl fmt::Display for HppdaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HppdaViolation::StarCount { col, stars, expected } => write!(
                f,
                "column {} of P has {stars} stars, expected {expected}",
                col + 1
            ),
            HppdaViolation::StarsNotBelowSubpacketization { z, f_prime } => {
                write!(f, "Z = {z} must be below F' = {f_prime}")
            }
            HppdaViolation::InnerArray(v) => write!(f, "B: {v}"),
            HppdaViolation::NoAssignment { tau } => write!(
                f,
                "no row subset of P star-matches B on columns {:?}",
                tau.iter().map(|c| c + 1).collect::<Vec<_>>()
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HppdaParams {
    pub k: usize,
    pub k_prime: usize,
    pub f: usize,
    pub f_prime: usize,
    pub z: usize,
    pub z_prime: usize,
    pub s: usize,
}

#[derive(Clone, Debug)]
pub struct HppdaReport {
    pub params: HppdaParams,
    pub verdict: Verdict<HppdaViolation>,
}

/// Verifies `(P, B)` as a hotplug PDA, scanning every `K'`-subset of P's columns.
pub fn verify_hppda(p: &Grid, b: &Grid) -> Result<HppdaReport> {
    let k_prime = b.cols();
    if k_prime > p.cols() {
        return Err(Error::param(format!(
            "K' = {k_prime} exceeds the {} columns of P",
            p.cols()
        )));
    }
    if b.rows() > p.rows() {
        return Err(Error::param(format!(
            "F' = {} exceeds F = {}",
            b.rows(),
            p.rows()
        )));
    }
    let mut verdict = Verdict::default();
    let z = common_star_count(p);
    for c in 0..p.cols() {
        let stars = p.column_star_count(c);
        if stars != z {
            verdict.fail(HppdaViolation::StarCount { col: c, stars, expected: z });
        }
    }
    if z >= b.rows() {
        verdict.fail(HppdaViolation::StarsNotBelowSubpacketization {
            z,
            f_prime: b.rows(),
        });
    }
    let inner = verify_pda(b);
    for v in inner.verdict.violations {
        verdict.fail(HppdaViolation::InnerArray(v));
    }
    if z != inner.params.z {
        verdict.note(format!("P has Z = {z} stars per column, B has Z' = {}", inner.params.z));
    }
    let preference: Vec<usize> = (0..p.rows()).collect();
    for tau in (0..p.cols()).combinations(k_prime) {
        let host = p.select_columns(&tau);
        if find_row_assignment(&host, b, &preference).is_none() {
            verdict.fail(HppdaViolation::NoAssignment { tau });
        }
    }
    Ok(HppdaReport {
        params: HppdaParams {
            k: p.cols(),
            k_prime,
            f: p.rows(),
            f_prime: b.rows(),
            z,
            z_prime: inner.params.z,
            s: inner.params.s,
        },
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE_B: &str = "
        * * 1
        * 1 *
        1 * *
        * * 2
        * 2 *
        2 * *
        * 3 4
        3 * 5
        4 5 *";

    #[test]
    fn example_b_is_a_3_9_5_5_pda() {
        let b = Grid::parse(EXAMPLE_B).unwrap();
        let report = verify_pda(&b);
        assert!(report.is_pass(), "{}", report.verdict);
        assert_eq!(report.params, PdaParams { k: 3, f: 9, z: 5, s: 5 });
    }

    #[test]
    fn build_b_reproduces_example() {
        let b = build_b_array(3, &[1, 2]).unwrap();
        assert_eq!(b.grid, Grid::parse(EXAMPLE_B).unwrap());
        assert_eq!(b.rows[0], BRow { y: vec![1, 2], copy: 1 });
        assert_eq!(b.rows[3], BRow { y: vec![1, 2], copy: 2 });
        assert_eq!(b.rows[8], BRow { y: vec![3], copy: 1 });
        assert_eq!(b.label_sets[0], BRow { y: vec![1, 2, 3], copy: 1 });
        assert_eq!(b.label_sets[4], BRow { y: vec![2, 3], copy: 1 });
    }

    #[test]
    fn build_b_t2() {
        let b = build_b_array(2, &[1]).unwrap();
        assert_eq!(b.grid, Grid::parse("* 1; 1 *").unwrap());
    }

    #[test]
    fn build_b_errors() {
        assert!(matches!(build_b_array(3, &[0, 0]), Err(Error::Param(_))));
        assert!(matches!(build_b_array(3, &[1]), Err(Error::Param(_))));
        assert!(matches!(build_b_array(1, &[]), Err(Error::Param(_))));
    }

    #[test]
    fn build_b_counting_identities() {
        use num_integer::binomial;
        for t in 2..=5usize {
            for a in (0..t - 1).map(|_| 0..=2usize).multi_cartesian_product() {
                if a.iter().all(|&x| x == 0) {
                    continue;
                }
                let b = build_b_array(t, &a).unwrap();
                let report = verify_pda(&b.grid);
                assert!(report.is_pass(), "t={t} a={a:?}\n{}", report.verdict);
                let z: usize = (1..t).map(|s| a[s - 1] * binomial(t - 1, s - 1)).sum();
                let labels: usize = (1..t).map(|s| a[s - 1] * binomial(t, s + 1)).sum();
                let f: usize = (1..t).map(|s| a[s - 1] * binomial(t, s)).sum();
                assert_eq!(report.params, PdaParams { k: t, f, z, s: labels });
                for (label, cells) in b.grid.label_positions() {
                    let set = &b.label_sets[label as usize - 1];
                    assert_eq!(cells.len(), set.y.len());
                    let cols: Vec<usize> = cells.iter().map(|c| c.1 + 1).sorted().collect();
                    assert_eq!(cols, set.y);
                }
            }
        }
    }

    #[test]
    fn mutations_of_example_b_fail() {
        let b = Grid::parse(EXAMPLE_B).unwrap();
        let mut star_to_label = b.clone();
        star_to_label.set(0, 0, Cell::Label(1));
        let v = verify_pda(&star_to_label).verdict;
        assert!(v.violations.iter().any(|x| matches!(x, PdaViolation::StarCount { col: 0, .. })));
        assert!(v.violations.iter().any(|x| matches!(x, PdaViolation::SharedLine { label: 1, .. })));

        let mut nulled = b.clone();
        nulled.set(4, 1, Cell::Null);
        let v = verify_pda(&nulled).verdict;
        assert!(v.violations.contains(&PdaViolation::NullCell { row: 4, col: 1 }));

        let mut cross = b.clone();
        cross.set(6, 1, Cell::Label(5)); // 5 now at (7,2), (8,3), (9,2)
        let v = verify_pda(&cross).verdict;
        assert!(v.violations.iter().any(|x| matches!(x, PdaViolation::SharedLine { label: 5, .. })));

        let mut relabel = b.clone();
        relabel.set(7, 0, Cell::Label(1)); // 3 survives once; 1 gains a fourth cell
        let v = verify_pda(&relabel).verdict;
        assert!(v.violations.iter().any(|x| matches!(x, PdaViolation::SharedLine { label: 1, .. })));

        let mut missing = b.clone();
        missing.set(6, 1, Cell::Label(4));
        missing.set(7, 0, Cell::Label(4));
        let v = verify_pda(&missing).verdict;
        assert!(v.violations.contains(&PdaViolation::MissingLabel { label: 3 }));
    }

    #[test]
    fn claimed_parameters_are_checked() {
        let mut b = Grid::parse(EXAMPLE_B).unwrap();
        b.set(6, 1, Cell::Label(6)); // a fresh label keeps C1-C3 but changes |S|
        assert!(verify_pda(&b).is_pass());
        let r = verify_pda_as(&b, PdaParams { k: 3, f: 9, z: 5, s: 5 });
        assert!(matches!(r.verdict.violations[..], [PdaViolation::ParamMismatch { .. }]));
    }

    #[test]
    fn all_star_column() {
        let g = Grid::parse("*; *; *").unwrap();
        let r = verify_pda(&g);
        assert!(r.is_pass());
        assert_eq!(r.params, PdaParams { k: 1, f: 3, z: 3, s: 0 });
    }

    #[test]
    fn assignment_on_own_pattern_is_identity() {
        let b = Grid::parse(EXAMPLE_B).unwrap();
        let host = b.star_pattern();
        let pref: Vec<usize> = (0..9).collect();
        assert_eq!(find_row_assignment(&host, &b, &pref).unwrap(), pref);
    }

    #[test]
    fn assignment_fails_when_star_column_removed() {
        let b = Grid::parse(EXAMPLE_B).unwrap();
        let mut host = b.star_pattern();
        for r in 0..host.rows() {
            host.set(r, 2, Cell::Null);
        }
        let pref: Vec<usize> = (0..9).collect();
        assert!(find_row_assignment(&host, &b, &pref).is_none());
    }

    #[test]
    fn assignment_needs_augmenting_paths() {
        // greedy on preference order would strand the second pattern row
        let pattern = Grid::parse("* .; * .").unwrap();
        let host = Grid::parse("* .; . *; * .").unwrap();
        assert_eq!(find_row_assignment(&host, &pattern, &[0, 1, 2]).unwrap(), vec![0, 2]);
        assert_eq!(find_row_assignment(&host, &pattern, &[2, 0]).unwrap(), vec![2, 0]);
        assert!(find_row_assignment(&host, &pattern, &[0, 1]).is_none());
    }

    #[test]
    fn hppda_width_errors() {
        let b = Grid::parse(EXAMPLE_B).unwrap();
        let p = Grid::parse("*  .; . *").unwrap();
        assert!(matches!(verify_hppda(&p, &b), Err(Error::Param(_))));
    }

    #[test]
    fn grid_json_round_trip() {
        let g = Grid::parse("* . 3; 1 * .").unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"[["*",null,3],[1,"*",null]]"#);
        assert_eq!(serde_json::from_str::<Grid>(&s).unwrap(), g);
        assert!(serde_json::from_str::<Grid>(r#"[["x"]]"#).is_err());
        assert!(serde_json::from_str::<Grid>(r#"[[0]]"#).is_err());
        assert!(serde_json::from_str::<Grid>(r#"[["*"],["*", "*"]]"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn row_permutation_preserves_feasibility(
                seed in any::<u64>(),
                drop in 0usize..9,
            ) {
                use rand::{seq::SliceRandom, SeedableRng};
                let b = Grid::parse(EXAMPLE_B).unwrap();
                let mut host_rows: Vec<Vec<Cell>> = b.star_pattern().to_rows();
                // pad with extra rows and optionally damage one
                host_rows.push(vec![Cell::Star, Cell::Null, Cell::Null]);
                host_rows.push(vec![Cell::Null, Cell::Star, Cell::Star]);
                host_rows[drop] = vec![Cell::Null; 3];
                let host = Grid::from_rows(host_rows.clone()).unwrap();
                let pref: Vec<usize> = (0..host.rows()).collect();
                let base = find_row_assignment(&host, &b, &pref);

                let mut perm: Vec<usize> = (0..host.rows()).collect();
                perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let permuted = Grid::from_rows(perm.iter().map(|&i| host_rows[i].clone()).collect()).unwrap();
                let other = find_row_assignment(&permuted, &b, &pref);
                prop_assert_eq!(base.is_some(), other.is_some());
                if let Some(z) = other {
                    prop_assert!(star_match(&permuted, &z, &b));
                    let mapped: Vec<usize> = z.iter().map(|&i| perm[i]).collect();
                    prop_assert!(star_match(&host, &mapped, &b));
                }
            }
        }
    }
}
