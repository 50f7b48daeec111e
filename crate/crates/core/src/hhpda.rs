//! Hierarchical hotplug PDA pairs `(Q, B)`.
//!
//! `Q = (Q0, Q1, ..., QK1)` where `Q0` (F x K1, stars/nulls) drives the mirror
//! caches and `Qk` (F x K2, stars/nulls/labels) drives the caches of the users
//! behind mirror `k`. `B` is the inner F' x K' PDA that every active set must
//! star-match after projection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use itertools::Itertools;
use num_integer::binomial;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{count_containing_avoiding, lambda_s, verify_design, Point, TDesign};
use crate::error::{Error, Result};
use crate::json;
use crate::pda::{
    build_b_array, check_label_pairs, find_row_assignment, verify_pda_as, Cell, Grid, HppdaReport,
    Label, PdaParams, PdaViolation,
};
use crate::verdict::Verdict;

/// User `(k1, k2)`: slot `k2` behind mirror `k1`, both 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct User {
    pub mirror: usize,
    pub slot: usize,
}

impl User {
    pub fn new(mirror: usize, slot: usize) -> Self {
        User { mirror, slot }
    }

    /// Builds a user from the 1-based `(k1, k2)` notation.
    pub fn one_based(k1: usize, k2: usize) -> Result<Self> {
        if k1 == 0 || k2 == 0 {
            return Err(Error::param(format!("users are 1-based, got ({k1},{k2})")));
        }
        Ok(User::new(k1 - 1, k2 - 1))
    }

    /// Design point `(k1-1)K2 + k2` carried by this user in a design-backed pair.
    pub fn point(self, k2: usize) -> Point {
        self.mirror * k2 + self.slot + 1
    }
}

impl fmt::Display for User {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.mirror + 1, self.slot + 1)
    }
}

/// Active users in lexicographic `(k1, k2)` order; position `j` is `phi(user) = j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveSet(Vec<User>);

impl ActiveSet {
    pub fn new(mut users: Vec<User>) -> Result<Self> {
        users.sort_unstable();
        if let Some((u, _)) = users.iter().tuple_windows().find(|(a, b)| a == b) {
            return Err(Error::param(format!("user {u} listed twice")));
        }
        Ok(ActiveSet(users))
    }

    pub fn users(&self) -> &[User] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `phi`: column of `user` in `B`, if active.
    pub fn index_of(&self, user: User) -> Option<usize> {
        self.0.binary_search(&user).ok()
    }

    /// Columns (indices into the active set) of users behind `mirror`.
    pub fn columns_of_mirror(&self, mirror: usize) -> Vec<usize> {
        (0..self.0.len()).filter(|&j| self.0[j].mirror == mirror).collect()
    }
}

impl fmt::Display for ActiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.iter().join(","))
    }
}

/// Parses `"(1,1),(2,2),(3,1)"`.
impl FromStr for ActiveSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut users = Vec::new();
        for part in cleaned.split("),").map(|p| p.trim_matches(|c| c == '(' || c == ')')) {
            if part.is_empty() {
                continue;
            }
            let (a, b) = part
                .split_once(',')
                .ok_or_else(|| Error::parse("active set", format!("expected (k1,k2), got `{part}`")))?;
            let k1 = a
                .parse()
                .map_err(|_| Error::parse("active set", format!("bad mirror index `{a}`")))?;
            let k2 = b
                .parse()
                .map_err(|_| Error::parse("active set", format!("bad user index `{b}`")))?;
            users.push(User::one_based(k1, k2)?);
        }
        ActiveSet::new(users)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairParams {
    #[serde(rename = "K1")]
    pub k1: usize,
    #[serde(rename = "K2")]
    pub k2: usize,
    #[serde(rename = "Kprime")]
    pub k_prime: usize,
    #[serde(rename = "F")]
    pub f: usize,
    #[serde(rename = "Fprime")]
    pub f_prime: usize,
    #[serde(rename = "Z1")]
    pub z1: usize,
    #[serde(rename = "Z2")]
    pub z2: usize,
    #[serde(rename = "Zprime")]
    pub z_prime: usize,
}

/// How a design-backed pair was built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub design: String,
    pub t: usize,
    #[serde(rename = "K2")]
    pub k2: usize,
    pub a: Vec<usize>,
    /// `D_k1`, 1-based points.
    pub mirror_groups: Vec<Vec<Point>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HhpdaPair {
    pub params: PairParams,
    #[serde(rename = "Q0")]
    pub q0: Grid,
    #[serde(rename = "Q")]
    pub q: Vec<Grid>,
    #[serde(rename = "B")]
    pub b: Grid,
    #[serde(rename = "S")]
    pub s: Vec<Label>,
    #[serde(rename = "S_k")]
    pub s_k: Vec<Vec<Label>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl HhpdaPair {
    pub fn num_users(&self) -> usize {
        self.params.k1 * self.params.k2
    }

    /// Every user in lexicographic order.
    pub fn all_users(&self) -> Vec<User> {
        (0..self.params.k1)
            .cartesian_product(0..self.params.k2)
            .map(|(m, s)| User::new(m, s))
            .collect()
    }

    /// Star in the projection: mirror or user cache holds the packet.
    #[inline]
    pub fn projected_star(&self, row: usize, user: User) -> bool {
        self.q0.get(row, user.mirror).is_star() || self.q[user.mirror].get(row, user.slot).is_star()
    }

    /// The all-rows, all-users projection (`F x K1K2`, users in lexicographic order).
    pub fn full_projection(&self) -> Grid {
        let users = self.all_users();
        let rows: Vec<usize> = (0..self.params.f).collect();
        project_rows(self, &rows, &users)
    }

    /// Number of users in `tau` whose mirror caches row `row`.
    pub fn mirror_star_count(&self, row: usize, tau: &ActiveSet) -> usize {
        tau.users()
            .iter()
            .filter(|u| self.q0.get(row, u.mirror).is_star())
            .count()
    }

    /// The same delivery structure with every mirror cache emptied: `Q0`'s
    /// stars move into the user arrays and the mirror labels disappear.
    pub fn without_mirror_caches(&self) -> HhpdaPair {
        let mut q = Vec::with_capacity(self.params.k1);
        for m in 0..self.params.k1 {
            let mut g = Grid::filled(self.params.f, self.params.k2, Cell::Null);
            for r in 0..self.params.f {
                for s in 0..self.params.k2 {
                    if self.projected_star(r, User::new(m, s)) {
                        g.set(r, s, Cell::Star);
                    }
                }
            }
            q.push(g);
        }
        let z2 = q.first().map_or(0, |g| g.column_star_count(0));
        HhpdaPair {
            params: PairParams {
                z1: 0,
                z2,
                ..self.params
            },
            q0: Grid::filled(self.params.f, self.params.k1, Cell::Null),
            q,
            b: self.b.clone(),
            s: self.s.clone(),
            s_k: vec![Vec::new(); self.params.k1],
            provenance: None,
        }
    }
}

fn project_rows(pair: &HhpdaPair, rows: &[usize], users: &[User]) -> Grid {
    let mut g = Grid::filled(rows.len(), users.len(), Cell::Null);
    for (i, &r) in rows.iter().enumerate() {
        for (j, &u) in users.iter().enumerate() {
            if pair.projected_star(r, u) {
                g.set(i, j, Cell::Star);
            }
        }
    }
    g
}

fn check_users(pair: &HhpdaPair, tau: &ActiveSet) -> Result<()> {
    if let Some(u) = tau
        .users()
        .iter()
        .find(|u| u.mirror >= pair.params.k1 || u.slot >= pair.params.k2)
    {
        return Err(Error::param(format!(
            "user {u} outside the {}x{} user grid",
            pair.params.k1, pair.params.k2
        )));
    }
    Ok(())
}

/// `Q'` restricted to rows `zeta` (in the given order) and the users of `tau`.
pub fn project_subarray(pair: &HhpdaPair, zeta: &[usize], tau: &ActiveSet) -> Result<Grid> {
    check_users(pair, tau)?;
    if let Some(r) = zeta.iter().find(|&&r| r >= pair.params.f) {
        return Err(Error::param(format!("row {} outside [F] = [{}]", r + 1, pair.params.f)));
    }
    Ok(project_rows(pair, zeta, tau.users()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Favour rows the active users' mirrors already cache.
    PreferMirrorStar,
    /// Favour rows the mirrors do not cache.
    AvoidMirrorStar,
    /// Lowest row index first.
    FirstFit,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::PreferMirrorStar,
        Strategy::AvoidMirrorStar,
        Strategy::FirstFit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::PreferMirrorStar => "prefer-mirror-star",
            Strategy::AvoidMirrorStar => "avoid-mirror-star",
            Strategy::FirstFit => "first-fit",
        }
    }

    fn order_rows(self, pair: &HhpdaPair, tau: &ActiveSet, rows: &mut [usize]) {
        match self {
            Strategy::PreferMirrorStar => {
                rows.sort_by_key(|&r| (std::cmp::Reverse(pair.mirror_star_count(r, tau)), r))
            }
            Strategy::AvoidMirrorStar => rows.sort_by_key(|&r| (pair.mirror_star_count(r, tau), r)),
            Strategy::FirstFit => rows.sort_unstable(),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::param(format!("unknown strategy `{s}`")))
    }
}

/// Groups the rows of `B` by star pattern, in order of first appearance.
fn pattern_classes(b: &Grid) -> Vec<(u128, Vec<usize>)> {
    let mut classes: Vec<(u128, Vec<usize>)> = Vec::new();
    for r in 0..b.rows() {
        let m = b.star_mask(r);
        match classes.iter_mut().find(|(mask, _)| *mask == m) {
            Some((_, rows)) => rows.push(r),
            None => classes.push((m, vec![r])),
        }
    }
    classes
}

/// Within each class of identically-starred `B` rows, hand out the chosen host
/// rows in ascending order.
fn canonicalize(b: &Grid, zeta: &mut [usize]) {
    for (_, rows) in pattern_classes(b) {
        let mut chosen: Vec<usize> = rows.iter().map(|&r| zeta[r]).collect();
        chosen.sort_unstable();
        for (&r, h) in rows.iter().zip(chosen) {
            zeta[r] = h;
        }
    }
}

/// Finds `zeta` (one host row per row of `B`) such that the projection onto
/// `tau` star-matches `B`.
///
/// Design-backed pairs pick, for each `B` row class `(Y, ·)`, among the blocks
/// that contain exactly the points of `Y` within `tau`; other pairs go through
/// bipartite matching. Both use the strategy's row ranking and return the
/// same canonical `zeta`.
pub fn find_zeta(pair: &HhpdaPair, tau: &ActiveSet, strategy: Strategy) -> Result<Vec<usize>> {
    if tau.len() != pair.params.k_prime {
        return Err(Error::param(format!(
            "active set has {} users, the pair serves exactly K' = {}",
            tau.len(),
            pair.params.k_prime
        )));
    }
    check_users(pair, tau)?;
    if pair.provenance.is_some() {
        find_zeta_by_class(pair, tau, strategy)
    } else {
        find_zeta_by_matching(pair, tau, strategy)
    }
}

pub fn find_zeta_by_class(pair: &HhpdaPair, tau: &ActiveSet, strategy: Strategy) -> Result<Vec<usize>> {
    let host = project_rows(pair, &(0..pair.params.f).collect::<Vec<_>>(), tau.users());
    let mut zeta = vec![usize::MAX; pair.b.rows()];
    for (mask, rows) in pattern_classes(&pair.b) {
        let mut candidates: Vec<usize> = (0..host.rows()).filter(|&h| host.star_mask(h) == mask).collect();
        if candidates.len() < rows.len() {
            return Err(Error::Infeasible(tau.to_string()));
        }
        strategy.order_rows(pair, tau, &mut candidates);
        let mut chosen = candidates[..rows.len()].to_vec();
        chosen.sort_unstable();
        for (&r, h) in rows.iter().zip(chosen) {
            zeta[r] = h;
        }
    }
    Ok(zeta)
}

pub fn find_zeta_by_matching(pair: &HhpdaPair, tau: &ActiveSet, strategy: Strategy) -> Result<Vec<usize>> {
    let host = project_rows(pair, &(0..pair.params.f).collect::<Vec<_>>(), tau.users());
    let mut preference: Vec<usize> = (0..pair.params.f).collect();
    strategy.order_rows(pair, tau, &mut preference);
    let mut zeta = find_row_assignment(&host, &pair.b, &preference)
        .ok_or_else(|| Error::Infeasible(tau.to_string()))?;
    canonicalize(&pair.b, &mut zeta);
    Ok(zeta)
}

/// `Q̄`: the projection on `(zeta, tau)` with `B`'s labels written into its nulls.
pub fn fill_qbar(pair: &HhpdaPair, zeta: &[usize], tau: &ActiveSet) -> Result<Grid> {
    let projection = project_subarray(pair, zeta, tau)?;
    if projection.rows() != pair.b.rows() || projection.cols() != pair.b.cols() {
        return Err(Error::Consistency(format!(
            "projection is {}x{}, B is {}x{}",
            projection.rows(),
            projection.cols(),
            pair.b.rows(),
            pair.b.cols()
        )));
    }
    let mut qbar = projection.clone();
    for r in 0..qbar.rows() {
        for c in 0..qbar.cols() {
            match (projection.get(r, c), pair.b.get(r, c)) {
                (Cell::Star, Cell::Star) => {}
                (Cell::Null, Cell::Label(l)) => qbar.set(r, c, Cell::Label(l)),
                (p, b) => {
                    return Err(Error::Consistency(format!(
                        "row {} (host row {}), column {}: projection has `{p}`, B has `{b}`",
                        r + 1,
                        zeta[r] + 1,
                        c + 1
                    )))
                }
            }
        }
    }
    Ok(qbar)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    Exhaustive,
    Sample { n: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HhpdaViolation {
    Shape(String),
    Bounds(String),
    LabelSetsOverlap { a: String, b: String, label: Label },
    /// A1
    MirrorStarCount { mirror: usize, stars: usize, expected: usize },
    MirrorCell { row: usize, mirror: usize, cell: Cell },
    /// A2
    UserStarCount { user: User, stars: usize, expected: usize },
    /// A3
    UndeclaredLabel { mirror: usize, row: usize, slot: usize, label: Label },
    MissingLabel { mirror: usize, label: Label },
    NullUnderMirrorStar { mirror: usize, row: usize, slot: usize },
    /// A4
    LabelPlacement { mirror: usize, inner: PdaViolation },
    InnerArray(PdaViolation),
    InnerLabels { declared: Vec<Label>, found: Vec<Label> },
    /// No row subset star-matches `B` for this active set.
    NoZeta { tau: ActiveSet },
}

impl fmt::Display for HhpdaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use HhpdaViolation::*;
        match self {
            Shape(m) => write!(f, "shape: {m}"),
            Bounds(m) => write!(f, "parameters: {m}"),
            LabelSetsOverlap { a, b, label } => write!(f, "label {label} is in both {a} and {b}"),
            MirrorStarCount { mirror, stars, expected } => write!(
                f,
                "A1: column {} of Q0 has {stars} stars, expected Z1 = {expected}",
                mirror + 1
            ),
            MirrorCell { row, mirror, cell } => write!(
                f,
                "A1: Q0 cell ({}, {}) is `{cell}`; Q0 holds only stars and nulls",
                row + 1,
                mirror + 1
            ),
            UserStarCount { user, stars, expected } => write!(
                f,
                "A2: column {} of Q{} (user {user}) has {stars} stars, expected Z2 = {expected}",
                user.slot + 1,
                user.mirror + 1
            ),
            UndeclaredLabel { mirror, row, slot, label } => write!(
                f,
                "A3: label {label} at ({}, {}) of Q{} is not in S_{}",
                row + 1,
                slot + 1,
                mirror + 1,
                mirror + 1
            ),
            MissingLabel { mirror, label } => {
                write!(f, "A3: label {label} of S_{} never occurs in Q{}", mirror + 1, mirror + 1)
            }
            NullUnderMirrorStar { mirror, row, slot } => write!(
                f,
                "A3: Q0({}, {}) is a star but Q{} cell ({}, {}) is null",
                row + 1,
                mirror + 1,
                mirror + 1,
                row + 1,
                slot + 1
            ),
            LabelPlacement { mirror, inner } => write!(f, "A4 in Q{}: {inner}", mirror + 1),
            InnerArray(v) => write!(f, "B: {v}"),
            InnerLabels { declared, found } => {
                write!(f, "B: labels {found:?} differ from declared S = {declared:?}")
            }
            NoZeta { tau } => write!(f, "star match: no row subset star-matches B for active set {tau}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HhpdaReport {
    pub verdict: Verdict<HhpdaViolation>,
    pub taus_checked: usize,
}

impl HhpdaReport {
    pub fn is_pass(&self) -> bool {
        self.verdict.is_pass()
    }
}

fn check_shapes(pair: &HhpdaPair) -> Vec<HhpdaViolation> {
    let p = &pair.params;
    let mut out = Vec::new();
    let mut expect = |what: &str, g: &Grid, rows: usize, cols: usize| {
        if g.rows() != rows || g.cols() != cols {
            out.push(HhpdaViolation::Shape(format!(
                "{what} is {}x{}, expected {rows}x{cols}",
                g.rows(),
                g.cols()
            )));
        }
    };
    expect("Q0", &pair.q0, p.f, p.k1);
    for (m, g) in pair.q.iter().enumerate() {
        expect(&format!("Q{}", m + 1), g, p.f, p.k2);
    }
    expect("B", &pair.b, p.f_prime, p.k_prime);
    if pair.q.len() != p.k1 {
        out.push(HhpdaViolation::Shape(format!("{} user arrays for K1 = {}", pair.q.len(), p.k1)));
    }
    if pair.s_k.len() != p.k1 {
        out.push(HhpdaViolation::Shape(format!("{} label sets S_k for K1 = {}", pair.s_k.len(), p.k1)));
    }
    if p.k_prime > 127 {
        out.push(HhpdaViolation::Shape(format!("K' = {} exceeds the supported 127", p.k_prime)));
    }
    out
}

fn check_bounds(p: &PairParams) -> Vec<HhpdaViolation> {
    let mut out = Vec::new();
    if p.z1 + p.z2 >= p.f_prime {
        out.push(HhpdaViolation::Bounds(format!(
            "Z1 + Z2 = {} must be below F' = {}",
            p.z1 + p.z2,
            p.f_prime
        )));
    }
    if p.f_prime > p.f {
        out.push(HhpdaViolation::Bounds(format!("F' = {} exceeds F = {}", p.f_prime, p.f)));
    }
    if p.k_prime > p.k1 * p.k2 || p.k_prime == 0 {
        out.push(HhpdaViolation::Bounds(format!(
            "K' = {} must lie in 1..=K1*K2 = {}",
            p.k_prime,
            p.k1 * p.k2
        )));
    }
    out
}

fn check_label_sets(pair: &HhpdaPair) -> Vec<HhpdaViolation> {
    let mut out = Vec::new();
    let mut owner: BTreeMap<Label, String> = BTreeMap::new();
    let named = std::iter::once(("S".to_string(), &pair.s))
        .chain(pair.s_k.iter().enumerate().map(|(m, s)| (format!("S_{}", m + 1), s)));
    for (name, set) in named {
        for &l in set {
            if let Some(prev) = owner.insert(l, name.clone()) {
                out.push(HhpdaViolation::LabelSetsOverlap { a: prev, b: name.clone(), label: l });
            }
        }
    }
    out
}

fn check_arrays(pair: &HhpdaPair, verdict: &mut Verdict<HhpdaViolation>) {
    let p = &pair.params;
    for m in 0..p.k1 {
        let stars = pair.q0.column_star_count(m);
        if stars != p.z1 {
            verdict.fail(HhpdaViolation::MirrorStarCount { mirror: m, stars, expected: p.z1 });
        }
        for r in 0..p.f {
            if let c @ Cell::Label(_) = pair.q0.get(r, m) {
                verdict.fail(HhpdaViolation::MirrorCell { row: r, mirror: m, cell: c });
            }
        }
    }
    for (m, g) in pair.q.iter().enumerate() {
        for s in 0..p.k2 {
            let stars = g.column_star_count(s);
            if stars != p.z2 {
                verdict.fail(HhpdaViolation::UserStarCount {
                    user: User::new(m, s),
                    stars,
                    expected: p.z2,
                });
            }
        }
        let declared: BTreeSet<Label> = pair.s_k[m].iter().copied().collect();
        let positions = g.label_positions();
        for (&label, cells) in &positions {
            if !declared.contains(&label) {
                for &(row, slot) in cells {
                    verdict.fail(HhpdaViolation::UndeclaredLabel { mirror: m, row, slot, label });
                }
            }
            for inner in check_label_pairs(g, label, cells) {
                verdict.fail(HhpdaViolation::LabelPlacement { mirror: m, inner });
            }
        }
        for &label in &declared {
            if !positions.contains_key(&label) {
                verdict.fail(HhpdaViolation::MissingLabel { mirror: m, label });
            }
        }
        for r in 0..p.f {
            if pair.q0.get(r, m).is_star() {
                for s in 0..p.k2 {
                    if g.get(r, s) == Cell::Null {
                        verdict.fail(HhpdaViolation::NullUnderMirrorStar { mirror: m, row: r, slot: s });
                    }
                }
            }
        }
    }
    let claimed = PdaParams {
        k: p.k_prime,
        f: p.f_prime,
        z: p.z_prime,
        s: pair.s.len(),
    };
    for v in verify_pda_as(&pair.b, claimed).verdict.violations {
        verdict.fail(HhpdaViolation::InnerArray(v));
    }
    let found: Vec<Label> = pair.b.labels().into_iter().collect();
    let declared: Vec<Label> = pair.s.iter().copied().sorted().collect();
    if found != declared {
        verdict.fail(HhpdaViolation::InnerLabels { declared, found });
    }
}

/// Every `K'`-subset of users, in lexicographic order.
pub fn all_active_sets(pair: &HhpdaPair) -> Vec<ActiveSet> {
    active_sets(pair, Coverage::Exhaustive)
}

/// Active sets to scan, in lexicographic order.
fn active_sets(pair: &HhpdaPair, coverage: Coverage) -> Vec<ActiveSet> {
    let users = pair.all_users();
    match coverage {
        Coverage::Exhaustive => users
            .into_iter()
            .combinations(pair.params.k_prime)
            .map(ActiveSet)
            .collect(),
        Coverage::Sample { n, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut taus: Vec<ActiveSet> = (0..n)
                .map(|_| {
                    let pick = users.choose_multiple(&mut rng, pair.params.k_prime).copied().collect();
                    ActiveSet::new(pick).expect("distinct users")
                })
                .collect();
            taus.sort();
            taus
        }
    }
}

/// Checks every defining condition of the pair, then the star match over the chosen
/// active sets. The active-set scan is skipped if the shapes or parameter
/// bounds are already broken.
pub fn verify_hhpda(pair: &HhpdaPair, coverage: Coverage) -> HhpdaReport {
    let mut verdict = Verdict::default();
    let structural: Vec<_> = check_shapes(pair).into_iter().chain(check_bounds(&pair.params)).collect();
    if !structural.is_empty() {
        structural.into_iter().for_each(|v| verdict.fail(v));
        return HhpdaReport { verdict, taus_checked: 0 };
    }
    check_label_sets(pair).into_iter().for_each(|v| verdict.fail(v));
    check_arrays(pair, &mut verdict);
    if let Some(prov) = &pair.provenance {
        if prov.k2 >= prov.t {
            verdict.note(format!(
                "K2 = {} is not below t = {}; the t-design construction requires K2 < t",
                prov.k2, prov.t
            ));
        }
    }

    let taus = active_sets(pair, coverage);
    let preference: Vec<usize> = (0..pair.params.f).collect();
    let all_rows = preference.clone();
    let failures: Vec<ActiveSet> = taus
        .par_iter()
        .filter(|tau| {
            let host = project_rows(pair, &all_rows, tau.users());
            find_row_assignment(&host, &pair.b, &preference).is_none()
        })
        .cloned()
        .collect();
    failures.into_iter().for_each(|tau| verdict.fail(HhpdaViolation::NoZeta { tau }));
    HhpdaReport {
        verdict,
        taus_checked: taus.len(),
    }
}

/// Checks that `zeta` makes the projection on `tau` star-match `B`.
pub fn verify_zeta(pair: &HhpdaPair, zeta: &[usize], tau: &ActiveSet) -> Result<bool> {
    let projection = project_subarray(pair, zeta, tau)?;
    Ok(crate::pda::star_match(&projection, &(0..zeta.len()).collect::<Vec<_>>(), &pair.b))
}

/// A pair without mirror caches is a hotplug PDA once `Q0` is dropped.
pub fn hppda_without_mirrors(pair: &HhpdaPair) -> Result<HppdaReport> {
    if pair.params.z1 != 0 || (0..pair.params.k1).any(|m| pair.q0.column_star_count(m) != 0) {
        return Err(Error::param("mirror layer is not empty (Z1 > 0)"));
    }
    let users = pair.all_users();
    let mut p = Grid::filled(pair.params.f, users.len(), Cell::Null);
    for r in 0..pair.params.f {
        for (c, u) in users.iter().enumerate() {
            if pair.q[u.mirror].get(r, u.slot).is_star() {
                p.set(r, c, Cell::Star);
            }
        }
    }
    crate::pda::verify_hppda(&p, &pair.b)
}

/// Closed-form parameters of the t-design construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRecord {
    pub k1: usize,
    pub k2: usize,
    pub k_prime: usize,
    pub f: usize,
    pub f_prime: usize,
    pub z1: usize,
    pub z2: usize,
    pub z_prime: usize,
    pub s: usize,
    pub s_k1: usize,
    /// `M1/N = Z1/F'`
    pub mirror_memory: Ratio<usize>,
    /// `M2/N = Z2/F'`
    pub user_memory: Ratio<usize>,
    /// `R1 = |S|/F'`
    pub server_load: Ratio<usize>,
}

impl ParamRecord {
    pub fn pair_params(&self) -> PairParams {
        PairParams {
            k1: self.k1,
            k2: self.k2,
            k_prime: self.k_prime,
            f: self.f,
            f_prime: self.f_prime,
            z1: self.z1,
            z2: self.z2,
            z_prime: self.z_prime,
        }
    }
}

struct Plan {
    t: usize,
    k1: usize,
    /// `lambda_s` for `s = 0..=t`.
    lambdas: Vec<usize>,
    /// Copies available per class: `lambda_s^t` for `s = 1..t-1`.
    class_sizes: Vec<usize>,
}

fn plan_construction(d: &TDesign, k2: usize, a: &[usize]) -> Result<Plan> {
    let verdict = verify_design(d).strict();
    if let Some(v) = verdict.violations.first() {
        return Err(Error::param(format!(
            "input is not a simple {}-({},{},{}) design: {v}",
            d.t, d.v, d.k, d.lambda
        )));
    }
    let t = d.t;
    if t < 2 {
        return Err(Error::param("construction needs t >= 2"));
    }
    if k2 == 0 || k2 >= t {
        let extra = if k2 == t {
            " (K2 = t is excluded: the construction requires K2 < t)"
        } else {
            ""
        };
        return Err(Error::param(format!("K2 = {k2} must satisfy 1 <= K2 < t = {t}{extra}")));
    }
    if !d.v.is_multiple_of(k2) {
        return Err(Error::param(format!("K2 = {k2} does not divide v = {}", d.v)));
    }
    if a.len() != t - 1 {
        return Err(Error::param(format!(
            "expected {} multiplicities a_1..a_{}, got {}",
            t - 1,
            t - 1,
            a.len()
        )));
    }
    let lambdas = (0..=t).map(|s| lambda_s(d, s)).collect::<Result<Vec<_>>>()?;
    let probe: Vec<Point> = (1..=t).collect();
    let class_sizes = (1..t)
        .map(|s| count_containing_avoiding(d, &probe[..s], &probe[s..]))
        .collect::<Result<Vec<_>>>()?;
    for (s, (&a_s, &cap)) in a.iter().zip(&class_sizes).enumerate() {
        if a_s > cap {
            return Err(Error::param(format!(
                "a_{} = {a_s} exceeds lambda_{}^t = {cap}",
                s + 1,
                s + 1
            )));
        }
    }
    let rows: usize = (1..t).map(|s| a[s - 1] * binomial(t, s)).sum();
    if rows <= lambdas[1] {
        return Err(Error::param(format!(
            "sum a_s C(t,s) = {rows} must exceed lambda_1 = {}",
            lambdas[1]
        )));
    }
    Ok(Plan {
        t,
        k1: d.v / k2,
        lambdas,
        class_sizes,
    })
}

/// Parameters of the pair [`build_from_design`] produces, from the closed forms.
pub fn theorem2_params(d: &TDesign, k2: usize, a: &[usize]) -> Result<ParamRecord> {
    let plan = plan_construction(d, k2, a)?;
    let t = plan.t;
    let f_prime: usize = (1..t).map(|s| a[s - 1] * binomial(t, s)).sum();
    let z_prime: usize = (1..t).map(|s| a[s - 1] * binomial(t - 1, s - 1)).sum();
    let s: usize = (1..t).map(|s| a[s - 1] * binomial(t, s + 1)).sum();
    let z1 = plan.lambdas[k2];
    let z2 = plan.lambdas[1] - z1;
    Ok(ParamRecord {
        k1: plan.k1,
        k2,
        k_prime: t,
        f: d.num_blocks(),
        f_prime,
        z1,
        z2,
        z_prime,
        s,
        s_k1: z1 * k2,
        mirror_memory: Ratio::new(z1, f_prime),
        user_memory: Ratio::new(z2, f_prime),
        server_load: Ratio::new(s, f_prime),
    })
}

/// The t-design construction: rows are the blocks, `Q0` marks blocks that
/// contain a whole mirror group, `Qk` marks points of a block either as a star
/// (group not fully inside) or with the label `block \ {point}`.
pub fn build_from_design(d: &TDesign, design_id: &str, k2: usize, a: &[usize]) -> Result<HhpdaPair> {
    let plan = plan_construction(d, k2, a)?;
    let k1 = plan.k1;
    let f = d.num_blocks();
    let groups: Vec<Vec<Point>> = (0..k1).map(|m| (m * k2 + 1..=(m + 1) * k2).collect()).collect();

    let mut q0 = Grid::filled(f, k1, Cell::Null);
    for (r, block) in d.blocks.iter().enumerate() {
        for (m, group) in groups.iter().enumerate() {
            if group.iter().all(|p| block.contains(p)) {
                q0.set(r, m, Cell::Star);
            }
        }
    }

    let inner = build_b_array(plan.t, a)?;
    let num_s = inner.label_sets.len() as Label;
    let mut next_label = num_s + 1;
    let mut q = Vec::with_capacity(k1);
    let mut s_k = Vec::with_capacity(k1);
    for m in 0..k1 {
        let mut g = Grid::filled(f, k2, Cell::Null);
        let mut numbering: BTreeMap<Vec<Point>, Label> = BTreeMap::new();
        for (r, block) in d.blocks.iter().enumerate() {
            for slot in 0..k2 {
                let point = User::new(m, slot).point(k2);
                if !block.contains(&point) {
                    continue;
                }
                if q0.get(r, m).is_star() {
                    let rest: Vec<Point> = block.iter().copied().filter(|&p| p != point).collect();
                    let label = *numbering.entry(rest).or_insert_with(|| {
                        next_label += 1;
                        next_label - 1
                    });
                    g.set(r, slot, Cell::Label(label));
                } else {
                    g.set(r, slot, Cell::Star);
                }
            }
        }
        s_k.push(numbering.values().copied().sorted().collect());
        q.push(g);
    }

    let z1 = q0.column_star_count(0);
    let z2 = q.first().map_or(0, |g| g.column_star_count(0));
    let z_prime = inner.grid.column_star_count(0);
    Ok(HhpdaPair {
        params: PairParams {
            k1,
            k2,
            k_prime: plan.t,
            f,
            f_prime: inner.grid.rows(),
            z1,
            z2,
            z_prime,
        },
        q0,
        q,
        b: inner.grid,
        s: (1..=num_s).collect(),
        s_k,
        provenance: Some(Provenance {
            design: design_id.to_string(),
            t: plan.t,
            k2,
            a: a.to_vec(),
            mirror_groups: groups,
        }),
    })
}

/// Per-class candidate count `lambda_s^t` for the construction, `s = 1..t-1`.
pub fn class_capacities(d: &TDesign, k2: usize, a: &[usize]) -> Result<Vec<usize>> {
    Ok(plan_construction(d, k2, a)?.class_sizes)
}

fn schema_error(context: &str, message: impl Into<String>) -> Error {
    Error::parse(context, message)
}

/// Parses a pair file and checks the schema-level invariants (shapes, label
/// set disjointness, parameter/shape agreement).
pub fn parse_pair(text: &str, context: &str) -> Result<HhpdaPair> {
    let pair: HhpdaPair = json::parse_json(text, context)?;
    if let Some(v) = check_shapes(&pair).into_iter().next() {
        return Err(schema_error(context, v.to_string()));
    }
    if let Some(v) = check_label_sets(&pair).into_iter().next() {
        return Err(schema_error(context, v.to_string()));
    }
    Ok(pair)
}

pub fn load_pair(path: &Path) -> Result<HhpdaPair> {
    parse_pair(&json::read_file(path)?, &path.display().to_string())
}

pub fn pair_to_json(pair: &HhpdaPair) -> Result<String> {
    json::to_canonical_string(pair)
}

pub fn store_pair(pair: &HhpdaPair, path: &Path) -> Result<()> {
    json::write_file(path, &pair_to_json(pair)?)
}

/// Labels of `Q` occurring more than once across all user arrays.
pub fn repeated_labels(pair: &HhpdaPair) -> Vec<Label> {
    let mut seen: BTreeMap<Label, usize> = BTreeMap::new();
    for g in &pair.q {
        for (l, cells) in g.label_positions() {
            *seen.entry(l).or_default() += cells.len();
        }
    }
    seen.into_iter().filter(|&(_, n)| n > 1).map(|(l, _)| l).collect()
}

/// Number of active sets an exhaustive scan visits.
pub fn active_set_count(pair: &HhpdaPair) -> usize {
    binomial(pair.num_users(), pair.params.k_prime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::catalog_design;

    fn example_pair() -> HhpdaPair {
        build_from_design(&catalog_design("ex2-3-8-4-1").unwrap(), "ex2-3-8-4-1", 2, &[1, 2]).unwrap()
    }

    #[test]
    fn active_set_parsing() {
        let tau: ActiveSet = "(3,1), (1,1),(2,2)".parse().unwrap();
        assert_eq!(tau.users(), &[User::new(0, 0), User::new(1, 1), User::new(2, 0)]);
        assert_eq!(tau.to_string(), "{(1,1),(2,2),(3,1)}");
        assert!("(1,1),(1,1)".parse::<ActiveSet>().is_err());
        assert!("(0,1)".parse::<ActiveSet>().is_err());
        assert!("(1;1)".parse::<ActiveSet>().is_err());
    }

    #[test]
    fn user_points_follow_mirror_groups() {
        assert_eq!(User::new(0, 0).point(2), 1);
        assert_eq!(User::new(1, 1).point(2), 4);
        assert_eq!(User::new(2, 0).point(2), 5);
    }

    #[test]
    fn mirror_star_rows_carry_labels() {
        let pair = example_pair();
        // row 1234: D1 = {1,2} inside, so Q0 star; Q1 point 1 carries 234 -> 6
        assert!(pair.q0.get(0, 0).is_star());
        assert_eq!(pair.q[0].get(0, 0), Cell::Label(6));
        // row 1357: point 1 in block, D1 not inside -> star
        assert_eq!(pair.q0.get(3, 0), Cell::Null);
        assert_eq!(pair.q[0].get(3, 0), Cell::Star);
    }

    #[test]
    fn construction_preconditions() {
        let d = catalog_design("ex2-3-8-4-1").unwrap();
        let err = |k2, a: &[usize]| build_from_design(&d, "x", k2, a).unwrap_err().to_string();
        assert!(err(3, &[1, 2]).contains("K2 < t"));
        assert!(err(0, &[1, 2]).contains("K2 = 0"));
        assert!(err(2, &[1]).contains("multiplicities"));
        assert!(err(2, &[3, 2]).contains("a_1 = 3 exceeds"));
        assert!(err(2, &[1, 3]).contains("a_2 = 3 exceeds"));
        assert!(err(2, &[1, 1]).contains("must exceed lambda_1"));
        let ex1 = catalog_design("ex1-2-10-4-2").unwrap();
        assert!(build_from_design(&ex1, "x", 1, &[4]).is_ok());
        let d6 = crate::design::complete_design(6, 4, 3).unwrap();
        assert!(build_from_design(&d6, "x", 4, &[1, 3]).unwrap_err().to_string().contains("K2"));
        let d9 = crate::design::complete_design(9, 4, 3).unwrap();
        assert!(build_from_design(&d9, "x", 2, &[1, 3]).unwrap_err().to_string().contains("divide"));
        let mut broken = d.clone();
        broken.blocks.pop();
        assert!(build_from_design(&broken, "x", 2, &[1, 2]).unwrap_err().to_string().contains("not a simple"));
    }

    #[test]
    fn class_capacities_of_example() {
        let d = catalog_design("ex2-3-8-4-1").unwrap();
        assert_eq!(class_capacities(&d, 2, &[1, 2]).unwrap(), vec![2, 2]);
    }

    #[test]
    fn closed_form_parameters() {
        let d = catalog_design("ex2-3-8-4-1").unwrap();
        let p = theorem2_params(&d, 2, &[1, 2]).unwrap();
        assert_eq!(
            (p.k1, p.k_prime, p.f, p.f_prime, p.z1, p.z2, p.z_prime, p.s, p.s_k1),
            (4, 3, 14, 9, 3, 4, 5, 5, 6)
        );
        assert_eq!(p.server_load, Ratio::new(5, 9));
        assert_eq!(p.mirror_memory, Ratio::new(1, 3));
        assert_eq!(p.user_memory, Ratio::new(4, 9));
        // a = (0, lambda_2^t): F' = lambda_2^t * C(3,2), which is not above lambda_1 = 7
        assert!(theorem2_params(&d, 2, &[0, 2]).is_err());
        assert_eq!(theorem2_params(&d, 2, &[2, 2]).unwrap().f_prime, 12);
    }

    #[test]
    fn zeta_for_reference_active_set() {
        let pair = example_pair();
        let tau: ActiveSet = "(1,1),(2,2),(3,1)".parse().unwrap();
        let zeta = find_zeta(&pair, &tau, Strategy::PreferMirrorStar).unwrap();
        let one_based: Vec<usize> = zeta.iter().map(|r| r + 1).collect();
        assert_eq!(one_based, vec![1, 2, 12, 7, 4, 13, 3, 8, 14]);

        let avoid = find_zeta(&pair, &tau, Strategy::AvoidMirrorStar).unwrap();
        let one_based: Vec<usize> = avoid.iter().map(|r| r + 1).collect();
        assert_eq!(one_based, vec![1, 2, 12, 7, 4, 13, 5, 9, 10]);
        assert!(verify_zeta(&pair, &avoid, &tau).unwrap());
    }

    #[test]
    fn class_and_matching_paths_agree() {
        let pair = example_pair();
        let mut generic = pair.clone();
        generic.provenance = None;
        for tau in active_sets(&pair, Coverage::Exhaustive) {
            for strategy in Strategy::ALL {
                let a = find_zeta(&pair, &tau, strategy).unwrap();
                let b = find_zeta(&generic, &tau, strategy).unwrap();
                assert_eq!(a, b, "{tau} {strategy}");
                assert_eq!(fill_qbar(&pair, &a, &tau).unwrap(), pair.b);
            }
        }
    }

    #[test]
    fn zeta_rejects_wrong_size_and_range() {
        let pair = example_pair();
        let two: ActiveSet = "(1,1),(2,2)".parse().unwrap();
        assert!(matches!(find_zeta(&pair, &two, Strategy::FirstFit), Err(Error::Param(_))));
        let outside: ActiveSet = "(1,1),(2,2),(5,1)".parse().unwrap();
        assert!(matches!(find_zeta(&pair, &outside, Strategy::FirstFit), Err(Error::Param(_))));
        assert!(matches!(project_subarray(&pair, &[14], &two), Err(Error::Param(_))));
    }

    #[test]
    fn fill_rejects_mismatched_rows() {
        let pair = example_pair();
        let tau: ActiveSet = "(1,1),(2,2),(3,1)".parse().unwrap();
        let mut zeta = find_zeta(&pair, &tau, Strategy::PreferMirrorStar).unwrap();
        zeta.swap(0, 8);
        assert!(matches!(fill_qbar(&pair, &zeta, &tau), Err(Error::Consistency(_))));
    }

    #[test]
    fn fill_then_erase_recovers_projection() {
        let pair = example_pair();
        let tau: ActiveSet = "(1,2),(2,1),(4,2)".parse().unwrap();
        let zeta = find_zeta(&pair, &tau, Strategy::FirstFit).unwrap();
        let qbar = fill_qbar(&pair, &zeta, &tau).unwrap();
        assert_eq!(qbar.star_pattern(), project_subarray(&pair, &zeta, &tau).unwrap());
    }

    #[test]
    fn bounds_violation_stops_before_scan() {
        let mut pair = example_pair();
        pair.params.z2 = 6;
        let r = verify_hhpda(&pair, Coverage::Exhaustive);
        assert_eq!(r.taus_checked, 0);
        assert!(matches!(r.verdict.violations[..], [HhpdaViolation::Bounds(_)]));
    }

    #[test]
    fn example_passes_exhaustive_scan() {
        let pair = example_pair();
        let r = verify_hhpda(&pair, Coverage::Exhaustive);
        assert!(r.is_pass(), "{}", r.verdict);
        assert_eq!(r.taus_checked, 56);
        assert_eq!(active_set_count(&pair), 56);
        assert!(repeated_labels(&pair).is_empty());
        assert_eq!(pair.s_k[0], (6..=11).collect::<Vec<_>>());
        assert_eq!(pair.s_k[3], (24..=29).collect::<Vec<_>>());
    }

    #[test]
    fn deleting_a_user_star_is_an_a2_violation() {
        let mut pair = example_pair();
        // row 1357, user (1,1)
        pair.q[0].set(3, 0, Cell::Null);
        let r = verify_hhpda(&pair, Coverage::Exhaustive);
        assert!(r.verdict.violations.contains(&HhpdaViolation::UserStarCount {
            user: User::new(0, 0),
            stars: 3,
            expected: 4
        }));
    }

    #[test]
    fn projection_is_point_membership() {
        let d = catalog_design("ex2-3-8-4-1").unwrap();
        let pair = example_pair();
        let p = pair.full_projection();
        for (r, block) in d.blocks.iter().enumerate() {
            for (c, u) in pair.all_users().into_iter().enumerate() {
                assert_eq!(p.get(r, c).is_star(), block.contains(&u.point(2)));
            }
        }
        let report = crate::pda::verify_hppda(&p, &pair.b).unwrap();
        assert!(report.verdict.is_pass());
    }

    #[test]
    fn dropping_mirror_caches_gives_hotplug_pda() {
        let flat = example_pair().without_mirror_caches();
        assert_eq!((flat.params.z1, flat.params.z2), (0, 7));
        assert!(verify_hhpda(&flat, Coverage::Exhaustive).is_pass());
        assert!(hppda_without_mirrors(&flat).unwrap().verdict.is_pass());
        assert!(hppda_without_mirrors(&example_pair()).is_err());
    }

    #[test]
    fn pair_json_round_trip() {
        let pair = example_pair();
        let text = pair_to_json(&pair).unwrap();
        let back = parse_pair(&text, "mem").unwrap();
        assert_eq!(back, pair);
        assert_eq!(pair_to_json(&back).unwrap(), text);
    }

    #[test]
    fn pair_schema_errors() {
        let pair = example_pair();
        let mut overlap = pair.clone();
        overlap.s_k[0].push(1);
        let text = pair_to_json(&overlap).unwrap();
        assert!(parse_pair(&text, "f").unwrap_err().to_string().contains("label 1"));
        let mut missing = pair.clone();
        missing.q.pop();
        let text = pair_to_json(&missing).unwrap();
        assert!(matches!(parse_pair(&text, "f"), Err(Error::Parse { .. })));
        assert!(parse_pair("{\"params\": {}}", "f").is_err());
    }

    #[test]
    fn sampled_coverage_is_deterministic() {
        let pair = example_pair();
        let a = active_sets(&pair, Coverage::Sample { n: 10, seed: 4 });
        let b = active_sets(&pair, Coverage::Sample { n: 10, seed: 4 });
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(active_sets(&pair, Coverage::Sample { n: 0, seed: 4 }).is_empty());
        assert!(verify_hhpda(&pair, Coverage::Sample { n: 10, seed: 4 }).is_pass());
    }
}
