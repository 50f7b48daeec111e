//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its own PASS/FAIL line; exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use itertools::Itertools;
use num_rational::Ratio;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hotcache::design::{
    catalog_design, complete_design, count_containing_avoiding, lambda_s_closed_form, verify_design,
    DesignViolation, TDesign, CATALOG,
};
use hotcache::hhpda::{
    all_active_sets, build_from_design, load_pair, theorem2_params, verify_hhpda, ActiveSet, Coverage,
    HhpdaPair, HhpdaViolation, Strategy,
};
use hotcache::mds::{mds_decode, mds_encode, mds_generator, Packet};
use hotcache::pda::{verify_hppda, verify_pda, Cell, Grid, PdaParams};
use hotcache::sim::{run_session, sweep, DemandPolicy, Library, SessionReport, TauSource};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixture() -> HhpdaPair {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/example1_pair.json");
    load_pair(&path).expect("bundled fixture loads")
}

fn built_example() -> HhpdaPair {
    let d = catalog_design("ex2-3-8-4-1").unwrap();
    build_from_design(&d, "ex2-3-8-4-1", 2, &[1, 2]).unwrap()
}

fn example_tau() -> ActiveSet {
    "(1,1),(2,2),(3,1)".parse().unwrap()
}

/// Every single-cell edit of `g` drawn from: star <-> null, star -> label,
/// label -> star/null/any other label in `alphabet`, null -> label.
fn mutations(g: &Grid, alphabet: &[u32]) -> Vec<(usize, usize, Cell)> {
    let mut out = Vec::new();
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let cell = g.get(r, c);
            let mut options = vec![Cell::Star, Cell::Null];
            options.extend(alphabet.iter().map(|&l| Cell::Label(l)));
            out.extend(options.into_iter().filter(|&o| o != cell).map(|o| (r, c, o)));
        }
    }
    out
}

fn located(v: &HhpdaViolation) -> bool {
    !matches!(v, HhpdaViolation::Shape(_) | HhpdaViolation::Bounds(_))
}

fn criterion_1() -> Outcome {
    let pair = fixture();
    let report = verify_hhpda(&pair, Coverage::Exhaustive);
    ensure!(report.is_pass(), "fixture fails: {}", report.verdict);
    ensure!(report.taus_checked == 56, "{} active sets scanned", report.taus_checked);
    let p = pair.params;
    ensure!(
        (p.k1, p.k2, p.k_prime, p.f, p.f_prime, p.z1, p.z2, p.z_prime) == (4, 2, 3, 14, 9, 3, 4, 5),
        "params {p:?}"
    );
    ensure!(pair.s.len() == 5, "|S| = {}", pair.s.len());
    ensure!(pair.s_k.iter().all(|s| s.len() == 6), "|S_k| = {:?}", pair.s_k);

    let mut tried = 0;
    let q0_edits = [Cell::Star, Cell::Null];
    for r in 0..p.f {
        for m in 0..p.k1 {
            for &cell in q0_edits.iter().filter(|&&c| c != pair.q0.get(r, m)) {
                let mut bad = pair.clone();
                bad.q0.set(r, m, cell);
                tried += 1;
                let v = verify_hhpda(&bad, Coverage::Exhaustive).verdict;
                ensure!(!v.is_pass() && v.violations.iter().any(located), "Q0 edit ({},{}) -> {cell} passed", r + 1, m + 1);
            }
        }
    }
    for m in 0..p.k1 {
        for (r, c, cell) in mutations(&pair.q[m], &pair.s_k[m]) {
            let mut bad = pair.clone();
            bad.q[m].set(r, c, cell);
            tried += 1;
            let v = verify_hhpda(&bad, Coverage::Exhaustive).verdict;
            ensure!(
                !v.is_pass() && v.violations.iter().any(located),
                "Q{} edit ({},{}) -> {cell} passed",
                m + 1,
                r + 1,
                c + 1
            );
        }
    }
    for (r, c, cell) in mutations(&pair.b, &pair.s) {
        let mut bad = pair.clone();
        bad.b.set(r, c, cell);
        tried += 1;
        let v = verify_hhpda(&bad, Coverage::Exhaustive).verdict;
        ensure!(!v.is_pass() && v.violations.iter().any(located), "B edit ({},{}) -> {cell} passed", r + 1, c + 1);
    }
    Ok(format!("56 active sets; {tried} single-cell mutations all rejected"))
}

fn criterion_2() -> Outcome {
    let built = built_example();
    let fx = fixture();
    ensure!(built.params == fx.params, "params differ");
    ensure!(built.q0 == fx.q0, "Q0 differs");
    for m in 0..fx.params.k1 {
        for r in 0..fx.params.f {
            for c in 0..fx.params.k2 {
                ensure!(
                    built.q[m].get(r, c) == fx.q[m].get(r, c),
                    "Q{} cell ({},{}): built {} vs fixture {}",
                    m + 1,
                    r + 1,
                    c + 1,
                    built.q[m].get(r, c),
                    fx.q[m].get(r, c)
                );
            }
        }
    }
    ensure!(built.b == fx.b, "B differs");
    ensure!(built.s == fx.s && built.s_k == fx.s_k, "label sets differ");
    Ok("Q0, Q1..Q4, B, S, S_k identical to the fixture".into())
}

fn criterion_3() -> Outcome {
    let d = catalog_design("ex2-3-8-4-1").unwrap();
    let r = theorem2_params(&d, 2, &[1, 2]).map_err(|e| e.to_string())?;
    let closed = (r.f_prime, r.z1, r.z2, r.z_prime, r.s, r.s_k1);
    ensure!(closed == (9, 3, 4, 5, 5, 6), "closed form {closed:?}");
    let pair = built_example();
    let cols = |g: &Grid| -> BTreeSet<usize> { (0..g.cols()).map(|c| g.column_star_count(c)).collect() };
    ensure!(pair.b.rows() == 9, "F' measured {}", pair.b.rows());
    ensure!(cols(&pair.q0) == BTreeSet::from([3]), "Q0 column stars {:?}", cols(&pair.q0));
    for g in &pair.q {
        ensure!(cols(g) == BTreeSet::from([4]), "user column stars {:?}", cols(g));
        ensure!(g.labels().len() == 6, "|S_k1| measured {}", g.labels().len());
    }
    ensure!(cols(&pair.b) == BTreeSet::from([5]), "B column stars {:?}", cols(&pair.b));
    ensure!(pair.b.labels().len() == 5, "|S| measured {}", pair.b.labels().len());
    Ok("F'=9 Z1=3 Z2=4 Z'=5 |S|=5 |S_k1|=6, closed form = measured".into())
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    for (name, pair) in [("fixture", fixture()), ("built", built_example())] {
        let lib = Library::random(3, 9, 64, 2024).unwrap();
        let run = run_session(&pair, &lib, example_tau(), vec![0, 1, 2], Strategy::PreferMirrorStar, 2024)
            .map_err(|e| e.to_string())?;
        let r = &run.report;
        ensure!(r.zeta == vec![1, 2, 12, 7, 4, 13, 3, 8, 14], "{name}: zeta {:?}", r.zeta);
        ensure!(r.r1_measured == Ratio::new(5, 9), "{name}: R1 {}", r.r1_measured);
        ensure!(r.r2_measured == Ratio::new(7, 9), "{name}: R2 {}", r.r2_measured);
        for (j, out) in run.decoded.iter().enumerate() {
            let out = out.as_ref().map_err(|e| format!("{name}: user {j}: {e}"))?;
            ensure!(out.file == lib.file(j), "{name}: user {} bytes differ", j + 1);
        }
        notes.push(name);
    }
    Ok(format!("zeta, R1=5/9, R2=7/9, 3/3 bit-exact decodes ({})", notes.join(", ")))
}

/// Per-mirror union sizes recomputed from `B` and `Q` alone.
fn union_counts(pair: &HhpdaPair, r: &SessionReport) -> Vec<usize> {
    let tau: ActiveSet = r.tau.parse().unwrap();
    let zeta: Vec<usize> = r.zeta.iter().map(|x| x - 1).collect();
    (0..pair.params.k1)
        .map(|m| {
            let mut forwarded = BTreeSet::new();
            let mut local = BTreeSet::new();
            for (j, u) in tau.users().iter().enumerate().filter(|(_, u)| u.mirror == m) {
                for f in 0..pair.b.rows() {
                    if let Some(l) = pair.b.get(f, j).label() {
                        forwarded.insert(l);
                    }
                    if let Some(l) = pair.q[m].get(zeta[f], u.slot).label() {
                        local.insert(l);
                    }
                }
            }
            forwarded.len() + local.len()
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let pair = fixture();
    let lib = Library::random(4, 9, 64, 77).unwrap();
    let mut lines = Vec::new();
    for strategy in [Strategy::PreferMirrorStar, Strategy::AvoidMirrorStar] {
        let reports = sweep(&pair, &lib, TauSource::All, &DemandPolicy::Random { per_tau: 3 }, strategy, 77)
            .map_err(|e| e.to_string())?;
        ensure!(reports.len() == 168, "{strategy}: {} sessions", reports.len());
        let mut worst = Ratio::new(0, 1);
        for r in &reports {
            ensure!(r.decode_ok, "{strategy}: decode failed for {} demands {:?}", r.tau, r.demands);
            ensure!(r.r1_measured == Ratio::new(5, 9), "{strategy}: R1 {} at {}", r.r1_measured, r.tau);
            let expected = union_counts(&pair, r);
            let measured: Vec<usize> = r.mirrors.iter().map(|m| m.forwarded + m.local).collect();
            ensure!(measured == expected, "{strategy}: {} mirror counts {measured:?} vs {expected:?}", r.tau);
            worst = worst.max(r.r2_measured);
        }
        lines.push(format!("{strategy}: 168/168 decoded, max R2 {worst}"));
    }
    Ok(lines.join("; "))
}

fn random_packets(rng: &mut ChaCha8Rng, k: usize, len: usize) -> Vec<Packet> {
    (0..k)
        .map(|_| {
            let mut b = vec![0u8; len];
            rng.fill_bytes(&mut b);
            Packet(b)
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = mds_generator(14, 9).map_err(|e| e.to_string())?;
    let info = random_packets(&mut rng, 9, 32);
    let coded = mds_encode(&g, &info).map_err(|e| e.to_string())?;
    let mut subsets = 0;
    for subset in (0..14).combinations(9) {
        let shares: Vec<(usize, Packet)> = subset.iter().map(|&i| (i, coded[i].clone())).collect();
        let back = mds_decode(&g, &shares).map_err(|e| format!("{subset:?}: {e}"))?;
        ensure!(back == info, "subset {subset:?} decoded wrong bytes");
        subsets += 1;
    }
    ensure!(subsets == 2002, "{subsets} subsets");
    for trial in 0..1000 {
        let n = rng.gen_range(1..=40);
        let k = rng.gen_range(1..=n);
        let g = mds_generator(n, k).map_err(|e| e.to_string())?;
        let info = random_packets(&mut rng, k, 8);
        let coded = mds_encode(&g, &info).map_err(|e| e.to_string())?;
        let take = rng.gen_range(k..=n);
        let idx = rand::seq::index::sample(&mut rng, n, take);
        let shares: Vec<(usize, Packet)> = idx.iter().map(|i| (i, coded[i].clone())).collect();
        let back = mds_decode(&g, &shares).map_err(|e| format!("trial {trial} ({n},{k}): {e}"))?;
        ensure!(back == info, "trial {trial} ({n},{k}) decoded wrong bytes");
    }
    Ok("2002/2002 (14,9) subsets; 1000/1000 random (n<=40,k) subsets".into())
}

fn criterion_7() -> Outcome {
    let pair = fixture();
    let report = verify_pda(&pair.b);
    ensure!(report.is_pass(), "B: {}", report.verdict);
    ensure!(report.params == PdaParams { k: 3, f: 9, z: 5, s: 5 }, "B params {}", report.params);

    // P straight from the design: star iff the user's point lies in the block
    let d = catalog_design("ex2-3-8-4-1").unwrap();
    let mut p = Grid::filled(14, 8, Cell::Null);
    for (r, block) in d.blocks.iter().enumerate() {
        for &pt in block {
            p.set(r, pt - 1, Cell::Star);
        }
    }
    ensure!(p == pair.full_projection(), "projection of Q differs from P");
    let hp = verify_hppda(&p, &pair.b).map_err(|e| e.to_string())?;
    ensure!(hp.verdict.is_pass(), "(P, B): {}", hp.verdict);

    let mut tried = 0;
    for (r, c, cell) in mutations(&pair.b, &pair.s) {
        let mut bad = pair.b.clone();
        bad.set(r, c, cell);
        let v = verify_pda(&bad).verdict;
        let named = v.violations.iter().any(|x| {
            let s = x.to_string();
            s.starts_with("C1") || s.starts_with("C2") || s.starts_with("C3")
        });
        ensure!(!v.is_pass() && named, "B edit ({},{}) -> {cell}: {v}", r + 1, c + 1);
        tried += 1;
    }
    Ok(format!("(3,9,5,5) PDA; (P, B) hotplug PDA; {tried} B mutations rejected"))
}

fn small_complete_designs(max_v: usize) -> Vec<TDesign> {
    let mut out = Vec::new();
    for v in 2..=max_v {
        for k in 1..v {
            for t in 1..=k {
                out.push(complete_design(v, k, t).unwrap());
            }
        }
    }
    out
}

fn brute_lambda(d: &TDesign, s: usize) -> usize {
    let subset: Vec<usize> = (1..=s).collect();
    d.blocks.iter().filter(|b| subset.iter().all(|p| b.contains(p))).count()
}

fn criterion_8() -> Outcome {
    let ex1 = catalog_design("ex1-2-10-4-2").unwrap();
    let v = verify_design(&ex1);
    ensure!(v.is_pass() && v.warnings.is_empty(), "2-(10,4,2): {v}");

    let mut designs: Vec<TDesign> = CATALOG.iter().map(|e| (e.build)()).collect();
    designs.extend(small_complete_designs(8));
    let mut checks = 0;
    for d in &designs {
        for s in 0..=d.t {
            let closed = lambda_s_closed_form(d.t, d.v, d.k, d.lambda, s);
            ensure!(closed == Some(brute_lambda(d, s)), "{}-({},{},{}) s={s}: {closed:?}", d.t, d.v, d.k, d.lambda);
            checks += 1;
        }
    }

    let mut removals = 0;
    for entry in CATALOG {
        let d = (entry.build)();
        for i in 0..d.num_blocks() {
            let mut cut = d.clone();
            let gone = cut.blocks.remove(i);
            let v = verify_design(&cut);
            let named = v.violations.iter().any(|x| match x {
                DesignViolation::Coverage { subset, count, expected } => {
                    count < expected && subset.iter().all(|p| gone.contains(p))
                }
                _ => false,
            });
            ensure!(!v.is_pass() && named, "{}: removing block {} went unnoticed", entry.id, i + 1);
            removals += 1;
        }
    }
    Ok(format!("{checks} lambda_s checks on {} designs; {removals} block removals rejected", designs.len()))
}

/// All `a` vectors with `a_s <= lambda_s^t` and `sum a_s C(t,s) > lambda_1`.
fn admissible(d: &TDesign) -> Vec<Vec<usize>> {
    let t = d.t;
    let pts: Vec<usize> = (1..=t).collect();
    let caps: Vec<usize> = (1..t).map(|s| count_containing_avoiding(d, &pts[..s], &pts[s..]).unwrap()).collect();
    let lambda_1 = brute_lambda(d, 1);
    caps.iter()
        .map(|&c| 0..=c)
        .multi_cartesian_product()
        .filter(|a| {
            let rows: usize = a.iter().enumerate().map(|(i, &x)| x * num_integer::binomial(t, i + 1)).sum();
            rows > lambda_1
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let mut sources: Vec<(String, TDesign)> = CATALOG.iter().map(|e| (e.id.to_string(), (e.build)())).collect();
    for d in small_complete_designs(8).into_iter().filter(|d| d.t >= 2) {
        sources.push((format!("complete {}-({},{})", d.t, d.v, d.k), d));
    }
    let mut built = 0;
    let mut taus = 0;
    for (name, d) in &sources {
        for k2 in (1..d.t).filter(|k2| d.v % k2 == 0) {
            for a in admissible(d) {
                let pair = build_from_design(d, name, k2, &a).map_err(|e| format!("{name} K2={k2} a={a:?}: {e}"))?;
                let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
                for g in &pair.q {
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            if let Some(l) = g.get(r, c).label() {
                                *seen.entry(l).or_default() += 1;
                            }
                        }
                    }
                }
                ensure!(seen.values().all(|&n| n == 1), "{name} K2={k2} a={a:?}: a Q label repeats");
                let report = verify_hhpda(&pair, Coverage::Exhaustive);
                ensure!(report.is_pass(), "{name} K2={k2} a={a:?}: {}", report.verdict);
                ensure!(report.taus_checked == all_active_sets(&pair).len(), "{name}: partial scan");
                built += 1;
                taus += report.taus_checked;
            }
        }
    }
    let d6 = complete_design(6, 4, 3).unwrap();
    ensure!(admissible(&d6) == vec![vec![1, 3]], "3-(6,4,3) admissible a: {:?}", admissible(&d6));
    Ok(format!("{built} pairs from {} designs, {taus} active sets, all labels unique", sources.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("golden fixture verification and mutations", criterion_1),
        ("construction reproduces the fixture", criterion_2),
        ("closed-form parameters match the arrays", criterion_3),
        ("reference delivery session", criterion_4),
        ("exhaustive hotplug sweep", criterion_5),
        ("MDS erasure property", criterion_6),
        ("PDA and hotplug PDA verifiers", criterion_7),
        ("design layer", criterion_8),
        ("integer uniqueness over constructed pairs", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("{id} PASS ({secs:.2}s) {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL ({secs:.2}s) {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
