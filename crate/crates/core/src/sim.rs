//! End-to-end delivery on real bytes: MDS placement, server and mirror
//! broadcasts for one active set, and per-user decoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_rational::Ratio;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hhpda::{fill_qbar, find_zeta, ActiveSet, HhpdaPair, Strategy, User};
use crate::mds::{mds_decode, mds_encode, mds_generator, GeneratorMatrix, Packet};
use crate::pda::{Cell, Grid, Label};

/// File id, 0-based internally.
pub type FileId = usize;

/// `N` equal-length files, each `F'` packets of `packet_bytes` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Library {
    files: Vec<Vec<u8>>,
    packet_bytes: usize,
}

impl Library {
    pub fn new(files: Vec<Vec<u8>>, f_prime: usize) -> Result<Self> {
        if files.is_empty() {
            return Err(Error::param("library needs at least one file"));
        }
        let len = files[0].len();
        if files.iter().any(|f| f.len() != len) {
            return Err(Error::Shape("library files differ in length".into()));
        }
        if f_prime == 0 || len == 0 || !len.is_multiple_of(f_prime) {
            return Err(Error::Shape(format!(
                "file length {len} is not a positive multiple of F' = {f_prime}"
            )));
        }
        Ok(Library {
            packet_bytes: len / f_prime,
            files,
        })
    }

    /// `n` files of uniformly random bytes.
    pub fn random(n: usize, f_prime: usize, packet_bytes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let files = (0..n)
            .map(|_| {
                let mut bytes = vec![0u8; f_prime * packet_bytes];
                rng.fill_bytes(&mut bytes);
                bytes
            })
            .collect();
        Library::new(files, f_prime)
    }

    pub fn num_files(&self) -> usize {
        self.files.len()
    }

    pub fn packet_bytes(&self) -> usize {
        self.packet_bytes
    }

    pub fn file(&self, id: FileId) -> &[u8] {
        &self.files[id]
    }

    fn info_packets(&self, id: FileId) -> Vec<Packet> {
        self.files[id]
            .chunks(self.packet_bytes)
            .map(|c| Packet(c.to_vec()))
            .collect()
    }
}

/// The server's `F` coded packets per file.
#[derive(Clone, Debug)]
pub struct CodedLibrary {
    pub generator: GeneratorMatrix,
    coded: Vec<Vec<Packet>>,
}

impl CodedLibrary {
    pub fn encode(pair: &HhpdaPair, lib: &Library) -> Result<Self> {
        let f_prime = pair.params.f_prime;
        if lib.files[0].len() != f_prime * lib.packet_bytes {
            return Err(Error::Shape(format!(
                "library was split for F' = {}, pair has F' = {f_prime}",
                lib.files[0].len() / lib.packet_bytes
            )));
        }
        let generator = mds_generator(pair.params.f, f_prime)?;
        let coded = (0..lib.num_files())
            .map(|n| mds_encode(&generator, &lib.info_packets(n)))
            .collect::<Result<Vec<_>>>()?;
        Ok(CodedLibrary { generator, coded })
    }

    pub fn packet(&self, file: FileId, row: usize) -> &Packet {
        &self.coded[file][row]
    }

    pub fn num_files(&self) -> usize {
        self.coded.len()
    }
}

/// One node's cache: coded packets keyed by `(file, coded index)`.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    rows: BTreeSet<usize>,
    packets: HashMap<(FileId, usize), Packet>,
}

impl Cache {
    fn fill(coded: &CodedLibrary, rows: BTreeSet<usize>) -> Self {
        let mut packets = HashMap::new();
        for n in 0..coded.num_files() {
            for &r in &rows {
                packets.insert((n, r), coded.packet(n, r).clone());
            }
        }
        Cache { rows, packets }
    }

    /// Coded indices held (the same for every file).
    pub fn rows(&self) -> &BTreeSet<usize> {
        &self.rows
    }

    pub fn get(&self, file: FileId, row: usize) -> Option<&Packet> {
        self.packets.get(&(file, row))
    }
}

#[derive(Clone, Debug)]
pub struct CacheState {
    pub mirrors: Vec<Cache>,
    /// `users[k1][k2]`
    pub users: Vec<Vec<Cache>>,
}

impl CacheState {
    pub fn user(&self, u: User) -> &Cache {
        &self.users[u.mirror][u.slot]
    }
}

/// Fills mirror and user caches from the stars of `Q0` and `Q1..QK1`.
pub fn place(pair: &HhpdaPair, coded: &CodedLibrary) -> CacheState {
    let star_rows = |g: &Grid, c: usize| -> BTreeSet<usize> { (0..g.rows()).filter(|&r| g.get(r, c).is_star()).collect() };
    let mirrors = (0..pair.params.k1)
        .map(|m| Cache::fill(coded, star_rows(&pair.q0, m)))
        .collect();
    let users = pair
        .q
        .iter()
        .map(|g| (0..pair.params.k2).map(|s| Cache::fill(coded, star_rows(g, s))).collect())
        .collect();
    CacheState { mirrors, users }
}

#[derive(Clone, Debug)]
pub struct Session {
    pub tau: ActiveSet,
    /// `d_j` for column `j`, 0-based file ids.
    pub demands: Vec<FileId>,
    /// Host row for each row of `B`.
    pub zeta: Vec<usize>,
    pub qbar: Grid,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Session {
    pub fn open(
        pair: &HhpdaPair,
        tau: ActiveSet,
        demands: Vec<FileId>,
        num_files: usize,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self> {
        if demands.len() != tau.len() {
            return Err(Error::param(format!(
                "{} demands for {} active users",
                demands.len(),
                tau.len()
            )));
        }
        if let Some(d) = demands.iter().find(|&&d| d >= num_files) {
            return Err(Error::param(format!("demanded file {} outside [N] = [{num_files}]", d + 1)));
        }
        let zeta = find_zeta(pair, &tau, strategy)?;
        let qbar = fill_qbar(pair, &zeta, &tau)?;
        Ok(Session {
            tau,
            demands,
            zeta,
            qbar,
            strategy,
            seed,
        })
    }

    /// Cells of `Q̄` holding `label`, as `(file, host row, column)`, by column.
    fn label_terms(&self, label: Label) -> Vec<(FileId, usize, usize)> {
        let mut out = Vec::new();
        for c in 0..self.qbar.cols() {
            for r in 0..self.qbar.rows() {
                if self.qbar.get(r, c) == Cell::Label(label) {
                    out.push((self.demands[c], self.zeta[r], c));
                }
            }
        }
        out
    }

    /// `S^(j)`: labels in column `j` of `Q̄`.
    fn column_labels(&self, j: usize) -> BTreeSet<Label> {
        (0..self.qbar.rows()).filter_map(|r| self.qbar.get(r, j).label()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sender {
    Server,
    Mirror(usize),
}

/// A coded broadcast. `terms` names the coded packets XORed into `payload`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub sender: Sender,
    pub label: Label,
    pub payload: Packet,
    pub terms: Vec<(FileId, usize)>,
}

impl fmt::Display for Transmission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sender {
            Sender::Server => write!(f, "X_{} = ", self.label)?,
            Sender::Mirror(m) => write!(f, "X_{{{},{}}} = ", m + 1, self.label)?,
        }
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let terms: Vec<String> = self.terms.iter().map(|(n, r)| format!("C_{{{},{}}}", n + 1, r + 1)).collect();
        f.write_str(&terms.join(" + "))
    }
}

fn xor_of<'a>(len: usize, packets: impl IntoIterator<Item = &'a Packet>) -> Packet {
    let mut out = Packet::zeroed(len);
    for p in packets {
        out.xor_assign(p);
    }
    out
}

/// One message per label of `S`, in label order.
pub fn server_transmissions(pair: &HhpdaPair, session: &Session, coded: &CodedLibrary) -> Vec<Transmission> {
    let len = coded.packet(0, 0).len();
    let mut labels = pair.s.clone();
    labels.sort_unstable();
    labels
        .into_iter()
        .map(|s| {
            let terms: Vec<(FileId, usize)> = session.label_terms(s).into_iter().map(|(n, r, _)| (n, r)).collect();
            Transmission {
                sender: Sender::Server,
                label: s,
                payload: xor_of(len, terms.iter().map(|&(n, r)| coded.packet(n, r))),
                terms,
            }
        })
        .collect()
}

/// Mirror `k1`'s broadcasts: forwarded server messages with the foreign terms
/// it caches removed, then one message per label of `Q(k1)` inside the `zeta`
/// rows of its active users.
pub fn mirror_transmissions(
    pair: &HhpdaPair,
    session: &Session,
    caches: &CacheState,
    k1: usize,
    server: &[Transmission],
) -> Result<Vec<Transmission>> {
    let own = session.tau.columns_of_mirror(k1);
    if own.is_empty() {
        return Ok(Vec::new());
    }
    let cache = &caches.mirrors[k1];
    let mut out = Vec::new();

    let phase_a: BTreeSet<Label> = own.iter().flat_map(|&j| session.column_labels(j)).collect();
    for s in phase_a {
        let x = server
            .iter()
            .find(|t| t.label == s)
            .ok_or_else(|| Error::Protocol(format!("server message X_{s} missing")))?;
        let mut payload = x.payload.clone();
        let mut terms = x.terms.clone();
        for (n, row, c) in session.label_terms(s) {
            if own.contains(&c) {
                continue;
            }
            if let Some(p) = cache.get(n, row) {
                payload.xor_assign(p);
                let at = terms
                    .iter()
                    .position(|&t| t == (n, row))
                    .ok_or_else(|| Error::Protocol(format!("term C_{{{},{}}} not in X_{s}", n + 1, row + 1)))?;
                terms.remove(at);
            }
        }
        out.push(Transmission {
            sender: Sender::Mirror(k1),
            label: s,
            payload,
            terms,
        });
    }

    let mut phase_b: BTreeMap<Label, Vec<(FileId, usize)>> = BTreeMap::new();
    for &j in &own {
        let slot = session.tau.users()[j].slot;
        for &row in &session.zeta {
            if let Cell::Label(l) = pair.q[k1].get(row, slot) {
                phase_b.entry(l).or_default().push((session.demands[j], row));
            }
        }
    }
    for (label, terms) in phase_b {
        let packets = terms
            .iter()
            .map(|&(n, r)| {
                cache.get(n, r).ok_or_else(|| {
                    Error::Protocol(format!(
                        "mirror {} lacks C_{{{},{}}} for label {label}",
                        k1 + 1,
                        n + 1,
                        r + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Transmission {
            sender: Sender::Mirror(k1),
            label,
            payload: xor_of(cache_packet_len(cache), packets),
            terms,
        });
    }
    Ok(out)
}

fn cache_packet_len(cache: &Cache) -> usize {
    cache.packets.values().next().map_or(0, Packet::len)
}

/// What one user recovered.
#[derive(Clone, Debug)]
pub struct DecodeOutcome {
    pub file: Vec<u8>,
    /// Distinct coded indices of the demanded file used for decoding.
    pub indices: BTreeSet<usize>,
}

/// Decodes `user`'s demand from its own cache and its mirror's broadcasts.
///
/// Each message addressed to the user (labels of its `Q̄` column, labels of
/// its `Q(k1)` column in the `zeta` rows) must reduce to exactly one unknown
/// coded packet of the demanded file after cancelling cached terms.
pub fn user_decode(
    pair: &HhpdaPair,
    session: &Session,
    user: User,
    cache: &Cache,
    received: &[Transmission],
    generator: &GeneratorMatrix,
) -> Result<DecodeOutcome> {
    let j = session
        .tau
        .index_of(user)
        .ok_or_else(|| Error::param(format!("user {user} is not active")))?;
    let demand = session.demands[j];
    let mut wanted: BTreeSet<Label> = session.column_labels(j);
    wanted.extend(
        session
            .zeta
            .iter()
            .filter_map(|&row| pair.q[user.mirror].get(row, user.slot).label()),
    );

    let mut shares: BTreeMap<usize, Packet> = cache
        .rows()
        .iter()
        .map(|&r| (r, cache.get(demand, r).expect("cached row").clone()))
        .collect();
    for label in wanted {
        let t = received
            .iter()
            .find(|t| t.label == label && t.sender == Sender::Mirror(user.mirror))
            .ok_or_else(|| Error::Protocol(format!("user {user} never received label {label}")))?;
        let mut payload = t.payload.clone();
        let mut unknown = Vec::new();
        for &(n, r) in &t.terms {
            match cache.get(n, r) {
                Some(p) => payload.xor_assign(p),
                None => unknown.push((n, r)),
            }
        }
        match unknown[..] {
            [(n, r)] if n == demand => {
                shares.insert(r, payload);
            }
            _ => {
                return Err(Error::Protocol(format!(
                    "user {user}, label {label}: {} unknown terms {:?} after cancellation",
                    unknown.len(),
                    unknown.iter().map(|(n, r)| (n + 1, r + 1)).collect::<Vec<_>>()
                )))
            }
        }
    }
    let indices: BTreeSet<usize> = shares.keys().copied().collect();
    if indices.len() < pair.params.f_prime {
        return Err(Error::Undecodable(format!(
            "user {user} holds {} coded packets of file {}, needs {}",
            indices.len(),
            demand + 1,
            pair.params.f_prime
        )));
    }
    let shares: Vec<(usize, Packet)> = shares.into_iter().collect();
    let info = mds_decode(generator, &shares)?;
    Ok(DecodeOutcome {
        file: info.into_iter().flat_map(|p| p.0).collect(),
        indices,
    })
}

/// Loads predicted by the union formulas for this session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TheoryLoads {
    pub r1: Ratio<usize>,
    /// `(|∪ S^(j)|, |∪ S_k1^(k2,zeta)|)` per mirror, in packets.
    pub per_mirror: Vec<(usize, usize)>,
    pub r2: Ratio<usize>,
}

pub fn theoretical_loads(pair: &HhpdaPair, session: &Session) -> TheoryLoads {
    let f_prime = pair.params.f_prime;
    let per_mirror: Vec<(usize, usize)> = (0..pair.params.k1)
        .map(|m| {
            let own = session.tau.columns_of_mirror(m);
            let a: BTreeSet<Label> = own.iter().flat_map(|&j| session.column_labels(j)).collect();
            let b: BTreeSet<Label> = own
                .iter()
                .flat_map(|&j| {
                    let slot = session.tau.users()[j].slot;
                    session.zeta.iter().filter_map(move |&row| pair.q[m].get(row, slot).label())
                })
                .collect();
            (a.len(), b.len())
        })
        .collect();
    let worst = per_mirror.iter().map(|(a, b)| a + b).max().unwrap_or(0);
    TheoryLoads {
        r1: Ratio::new(pair.s.len(), f_prime),
        per_mirror,
        r2: Ratio::new(worst, f_prime),
    }
}

/// Serializes ratios as `"p/q"`.
mod ratio_text {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Ratio<usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Ratio<usize>, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).ok_or_else(|| serde::de::Error::custom(format!("bad ratio `{text}`")))
    }

    pub fn parse(text: &str) -> Option<Ratio<usize>> {
        let (p, q) = text.split_once('/').unwrap_or((text, "1"));
        let p: usize = p.trim().parse().ok()?;
        let q: usize = q.trim().parse().ok()?;
        (q != 0).then(|| Ratio::new(p, q))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorLoad {
    pub mirror: usize,
    pub active_users: usize,
    pub forwarded: usize,
    pub local: usize,
    #[serde(with = "ratio_text")]
    pub r2_measured: Ratio<usize>,
    #[serde(with = "ratio_text")]
    pub r2_theory: Ratio<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserOutcome {
    pub user: String,
    pub file: usize,
    pub packets_collected: usize,
    pub decode_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Result of one delivery round. Indices (users, files, rows) are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionReport {
    pub tau: String,
    pub demands: Vec<usize>,
    pub strategy: Strategy,
    pub seed: u64,
    pub zeta: Vec<usize>,
    pub packet_bytes: usize,
    #[serde(with = "ratio_text")]
    pub m1_over_n: Ratio<usize>,
    #[serde(with = "ratio_text")]
    pub m2_over_n: Ratio<usize>,
    #[serde(with = "ratio_text")]
    pub r1_measured: Ratio<usize>,
    #[serde(with = "ratio_text")]
    pub r1_theory: Ratio<usize>,
    #[serde(with = "ratio_text")]
    pub r2_measured: Ratio<usize>,
    #[serde(with = "ratio_text")]
    pub r2_theory: Ratio<usize>,
    pub mirrors: Vec<MirrorLoad>,
    pub users: Vec<UserOutcome>,
    pub packets_server: usize,
    pub packets_mirrors: usize,
    pub bytes_server: usize,
    pub bytes_mirrors: usize,
    pub loads_match: bool,
    pub decode_ok: bool,
}

impl SessionReport {
    pub fn is_pass(&self) -> bool {
        self.decode_ok && self.loads_match
    }
}

/// Everything a session produced, for inspection beyond the report.
#[derive(Clone, Debug)]
pub struct SessionRun {
    pub session: Session,
    pub server: Vec<Transmission>,
    pub mirrors: Vec<Vec<Transmission>>,
    pub decoded: Vec<Result<DecodeOutcome, String>>,
    pub report: SessionReport,
}

/// Places `lib`, delivers `demands` to `tau` and decodes every active user.
pub fn run_session(
    pair: &HhpdaPair,
    lib: &Library,
    tau: ActiveSet,
    demands: Vec<FileId>,
    strategy: Strategy,
    seed: u64,
) -> Result<SessionRun> {
    let coded = CodedLibrary::encode(pair, lib)?;
    let caches = place(pair, &coded);
    run_placed(pair, lib, &coded, &caches, tau, demands, strategy, seed)
}

#[allow(clippy::too_many_arguments)]
fn run_placed(
    pair: &HhpdaPair,
    lib: &Library,
    coded: &CodedLibrary,
    caches: &CacheState,
    tau: ActiveSet,
    demands: Vec<FileId>,
    strategy: Strategy,
    seed: u64,
) -> Result<SessionRun> {
    let f_prime = pair.params.f_prime;
    let session = Session::open(pair, tau, demands, lib.num_files(), strategy, seed)?;
    let server = server_transmissions(pair, &session, coded);
    let mirrors = (0..pair.params.k1)
        .map(|m| mirror_transmissions(pair, &session, caches, m, &server))
        .collect::<Result<Vec<_>>>()?;

    let mut users = Vec::new();
    let mut decoded = Vec::new();
    for (j, &u) in session.tau.users().iter().enumerate() {
        let demand = session.demands[j];
        let outcome = user_decode(pair, &session, u, caches.user(u), &mirrors[u.mirror], &coded.generator)
            .map_err(|e| e.to_string())
            .and_then(|o| {
                if o.file == lib.file(demand) {
                    Ok(o)
                } else {
                    Err(format!("user {u} decoded bytes differ from file {}", demand + 1))
                }
            });
        users.push(UserOutcome {
            user: u.to_string(),
            file: demand + 1,
            packets_collected: outcome.as_ref().map_or(0, |o| o.indices.len()),
            decode_ok: outcome.is_ok(),
            error: outcome.as_ref().err().cloned(),
        });
        decoded.push(outcome);
    }

    let theory = theoretical_loads(pair, &session);
    let mirror_loads: Vec<MirrorLoad> = mirrors
        .iter()
        .enumerate()
        .map(|(m, sent)| {
            let forwarded = sent.iter().filter(|t| pair.s.contains(&t.label)).count();
            let (a, b) = theory.per_mirror[m];
            MirrorLoad {
                mirror: m + 1,
                active_users: session.tau.columns_of_mirror(m).len(),
                forwarded,
                local: sent.len() - forwarded,
                r2_measured: Ratio::new(sent.len(), f_prime),
                r2_theory: Ratio::new(a + b, f_prime),
            }
        })
        .collect();
    let packets_server = server.len();
    let packets_mirrors: usize = mirrors.iter().map(Vec::len).sum();
    let r1_measured = Ratio::new(packets_server, f_prime);
    let r2_measured = mirror_loads.iter().map(|m| m.r2_measured).max().unwrap_or_default();
    let loads_match = r1_measured == theory.r1
        && r2_measured == theory.r2
        && mirror_loads.iter().all(|m| m.r2_measured == m.r2_theory);
    let report = SessionReport {
        tau: session.tau.users().iter().map(User::to_string).collect::<Vec<_>>().join(","),
        demands: session.demands.iter().map(|d| d + 1).collect(),
        strategy,
        seed,
        zeta: session.zeta.iter().map(|r| r + 1).collect(),
        packet_bytes: lib.packet_bytes(),
        m1_over_n: Ratio::new(caches.mirrors.first().map_or(0, |c| c.rows().len()), f_prime),
        m2_over_n: Ratio::new(
            caches.users.first().and_then(|u| u.first()).map_or(0, |c| c.rows().len()),
            f_prime,
        ),
        r1_measured,
        r1_theory: theory.r1,
        r2_measured,
        r2_theory: theory.r2,
        mirrors: mirror_loads,
        decode_ok: users.iter().all(|u| u.decode_ok),
        users,
        packets_server,
        packets_mirrors,
        bytes_server: packets_server * lib.packet_bytes(),
        bytes_mirrors: packets_mirrors * lib.packet_bytes(),
        loads_match,
    };
    Ok(SessionRun {
        session,
        server,
        mirrors,
        decoded,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TauSource {
    All,
    Sample(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DemandPolicy {
    /// `per_tau` uniformly random demand vectors per active set.
    Random { per_tau: usize },
    /// The same 0-based demand vector for every active set.
    Fixed(Vec<FileId>),
}

/// One CSV row of a sweep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub demands: String,
    #[serde(rename = "R1_measured", with = "ratio_text")]
    pub r1_measured: Ratio<usize>,
    #[serde(rename = "R1_theory", with = "ratio_text")]
    pub r1_theory: Ratio<usize>,
    #[serde(rename = "R2_measured", with = "ratio_text")]
    pub r2_measured: Ratio<usize>,
    #[serde(rename = "R2_theory", with = "ratio_text")]
    pub r2_theory: Ratio<usize>,
    /// Per-mirror counts over `F'`, `;`-separated.
    pub r2_per_mirror: String,
    pub decode_ok: bool,
    pub bytes_server: usize,
    pub bytes_mirrors: usize,
}

impl SweepRow {
    fn from_report(r: &SessionReport) -> Self {
        SweepRow {
            tau: r.tau.clone(),
            strategy: r.strategy,
            seed: r.seed,
            demands: r.demands.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
            r1_measured: r.r1_measured,
            r1_theory: r.r1_theory,
            r2_measured: r.r2_measured,
            r2_theory: r.r2_theory,
            r2_per_mirror: r
                .mirrors
                .iter()
                .map(|m| format!("{}/{}", m.r2_measured.numer(), m.r2_measured.denom()))
                .collect::<Vec<_>>()
                .join(";"),
            decode_ok: r.decode_ok,
            bytes_server: r.bytes_server,
            bytes_mirrors: r.bytes_mirrors,
        }
    }
}

/// Runs a session for every selected active set (and demand vector), in
/// parallel, returning reports in lexicographic `tau` order.
///
/// Active set number `i` (its rank among all `K'`-subsets) draws its demands
/// from a generator seeded with `seed ^ i`, so rows do not depend on the
/// thread schedule.
pub fn sweep(
    pair: &HhpdaPair,
    lib: &Library,
    taus: TauSource,
    demands: &DemandPolicy,
    strategy: Strategy,
    seed: u64,
) -> Result<Vec<SessionReport>> {
    let coded = CodedLibrary::encode(pair, lib)?;
    let caches = place(pair, &coded);
    let mut ranked: Vec<(u64, ActiveSet)> = crate::hhpda::all_active_sets(pair)
        .into_iter()
        .enumerate()
        .map(|(i, t)| (i as u64, t))
        .collect();
    if let TauSource::Sample(n) = taus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ranked = rand::seq::index::sample(&mut rng, ranked.len(), n.min(ranked.len()))
            .into_iter()
            .map(|i| ranked[i].clone())
            .collect();
        ranked.sort();
    }
    let n_files = lib.num_files();
    let per_tau: Vec<Vec<SessionReport>> = ranked
        .into_par_iter()
        .map(|(rank, tau)| {
            let row_seed = seed ^ rank;
            let vectors = match demands {
                DemandPolicy::Fixed(d) => vec![d.clone()],
                DemandPolicy::Random { per_tau } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(row_seed);
                    (0..*per_tau)
                        .map(|_| (0..tau.len()).map(|_| rng.gen_range(0..n_files)).collect())
                        .collect()
                }
            };
            vectors
                .into_iter()
                .map(|d| {
                    run_placed(pair, lib, &coded, &caches, tau.clone(), d, strategy, row_seed).map(|r| r.report)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_tau.into_iter().flatten().collect())
}

/// CSV with one row per session.
pub fn sweep_csv(reports: &[SessionReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(SweepRow::from_report(r))
            .map_err(|e| Error::Consistency(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Consistency(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses `"5/9"` or `"2"`.
pub fn parse_ratio(text: &str) -> Option<Ratio<usize>> {
    ratio_text::parse(text)
}
