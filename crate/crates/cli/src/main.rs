use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hotcache::design::{
    complete_design, design_to_json, load_design, store_design, verify_design, CATALOG,
};
use hotcache::hhpda::{
    build_from_design, find_zeta, load_pair, pair_to_json, store_pair, theorem2_params,
    verify_hhpda, verify_zeta, ActiveSet, Coverage, HhpdaPair, Strategy,
};
use hotcache::json::to_canonical_string;
use hotcache::sim::{run_session, sweep, sweep_csv, DemandPolicy, Library, SessionReport, TauSource};

#[derive(Parser)]
#[command(name = "hotcache", version, about = "Hierarchical hotplug coded caching toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// t-design utilities
    #[command(subcommand)]
    Design(DesignCmd),
    /// Build, check and inspect HHPDA pairs
    #[command(subcommand)]
    Hhpda(HhpdaCmd),
    /// Run delivery sessions on random libraries
    #[command(subcommand)]
    Sim(SimCmd),
}

#[derive(Subcommand)]
enum DesignCmd {
    /// Check a design (catalog id or JSON file)
    Verify {
        source: String,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
    /// Emit the complete t-(v,k) design (all k-subsets)
    Complete {
        #[arg(long)]
        v: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        t: usize,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// List the bundled designs, or emit one by id
    Catalog {
        id: Option<String>,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConstructionArgs {
    /// Catalog id or design JSON file
    #[arg(long)]
    design: String,
    #[arg(long)]
    k2: usize,
    /// Multiplicities a_1,...,a_{t-1}
    #[arg(long, value_delimiter = ',', required = true)]
    a: Vec<usize>,
}

#[derive(Subcommand)]
enum HhpdaCmd {
    /// Construct a pair from a t-design
    Build {
        #[command(flatten)]
        construction: ConstructionArgs,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// Check a pair file
    Verify {
        pair: PathBuf,
        /// Scan every active set (default)
        #[arg(long, conflicts_with = "sample")]
        exhaustive: bool,
        /// Scan N seeded-random active sets
        #[arg(long, value_name = "N")]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check one active set, e.g. "(1,1),(2,2),(3,1)"
        #[arg(long)]
        tau: Option<String>,
        /// 1-based host rows for --tau, one per row of B
        #[arg(long, value_delimiter = ',', requires = "tau")]
        zeta: Option<Vec<usize>>,
        #[arg(long, default_value = "prefer-mirror-star")]
        strategy: String,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
    /// Closed-form parameters of a construction
    Params {
        #[command(flatten)]
        construction: ConstructionArgs,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
}

#[derive(Args)]
struct LibraryArgs {
    #[arg(long)]
    pair: PathBuf,
    /// Number of files N
    #[arg(long, default_value_t = 4)]
    files: usize,
    #[arg(long, default_value_t = 64)]
    packet_bytes: usize,
    #[arg(long, default_value = "prefer-mirror-star")]
    strategy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum SimCmd {
    /// One delivery round
    Run {
        #[command(flatten)]
        lib: LibraryArgs,
        /// Active users, e.g. "(1,1),(2,2),(3,1)"
        #[arg(long)]
        active: String,
        /// 1-based file ids, one per active user
        #[arg(long, value_delimiter = ',', required = true)]
        demands: Vec<usize>,
        /// Print every transmission
        #[arg(long)]
        messages: bool,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// Sessions over many active sets
    Sweep {
        #[command(flatten)]
        lib: LibraryArgs,
        /// Only N seeded-random active sets
        #[arg(long, value_name = "N")]
        sample: Option<usize>,
        /// Random demand vectors per active set
        #[arg(long, default_value_t = 1, conflicts_with = "demands")]
        per_tau: usize,
        /// Fixed 1-based demand vector for every active set
        #[arg(long, value_delimiter = ',')]
        demands: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Human,
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("HOTCACHE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow!("HOTCACHE_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Input problems exit with 2; failed checks, infeasible active sets and
/// broken deliveries with 1.
fn exit_code(e: &anyhow::Error) -> u8 {
    use hotcache::Error as E;
    match e.downcast_ref::<E>() {
        Some(
            E::InsufficientShares { .. }
            | E::Corruption { .. }
            | E::Infeasible(_)
            | E::Consistency(_)
            | E::Protocol(_)
            | E::Undecodable(_),
        ) => 1,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Design(c) => design(c),
        Command::Hhpda(c) => hhpda(c),
        Command::Sim(c) => sim(c),
    }
}

fn emit(text: &str, output: Option<&Path>) -> anyhow::Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_text(v: &Value) -> anyhow::Result<String> {
    Ok(to_canonical_string(v)?)
}

fn outcome(pass: bool) -> Outcome {
    if pass {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn strings<T: ToString>(items: &[T]) -> Vec<String> {
    items.iter().map(ToString::to_string).collect()
}

fn design(cmd: DesignCmd) -> anyhow::Result<Outcome> {
    match cmd {
        DesignCmd::Verify { source, format } => {
            let d = load_design(&source)?;
            let verdict = verify_design(&d);
            let header = format!(
                "{}-({},{},{}) design with {} blocks",
                d.t,
                d.v,
                d.k,
                d.lambda,
                d.num_blocks()
            );
            match format {
                Format::Json => emit(
                    &json_text(&json!({
                        "source": source,
                        "t": d.t, "v": d.v, "k": d.k, "lambda": d.lambda,
                        "blocks": d.num_blocks(),
                        "pass": verdict.is_pass(),
                        "violations": strings(&verdict.violations),
                        "warnings": strings(&verdict.warnings),
                    }))?,
                    None,
                )?,
                _ => emit(&format!("{header}\n{verdict}"), None)?,
            }
            Ok(outcome(verdict.is_pass()))
        }
        DesignCmd::Complete { v, k, t, output } => {
            let d = complete_design(v, k, t)?;
            match output {
                Some(p) => store_design(&d, &p)?,
                None => emit(&design_to_json(&d)?, None)?,
            }
            Ok(Outcome::Pass)
        }
        DesignCmd::Catalog { id, output } => {
            match id {
                Some(id) => {
                    let d = hotcache::design::catalog_design(&id)?;
                    emit(&design_to_json(&d)?, output.as_deref())?;
                }
                None => {
                    let mut text = String::new();
                    for e in CATALOG {
                        writeln!(text, "{}\t{}", e.id, e.notes)?;
                    }
                    emit(&text, output.as_deref())?;
                }
            }
            Ok(Outcome::Pass)
        }
    }
}

fn parse_strategy(s: &str) -> anyhow::Result<Strategy> {
    Ok(s.parse::<Strategy>()?)
}

fn pair_header(pair: &HhpdaPair) -> String {
    let p = &pair.params;
    let s_k: Vec<String> = pair.s_k.iter().map(|s| s.len().to_string()).collect();
    format!(
        "({},{},{};{},{};{},{},{}) HHPDA, |S|={}, |S_k|={}",
        p.k1,
        p.k2,
        p.k_prime,
        p.f,
        p.f_prime,
        p.z1,
        p.z2,
        p.z_prime,
        pair.s.len(),
        s_k.join(",")
    )
}

fn hhpda(cmd: HhpdaCmd) -> anyhow::Result<Outcome> {
    match cmd {
        HhpdaCmd::Build { construction: c, output } => {
            let d = load_design(&c.design)?;
            let pair = build_from_design(&d, &c.design, c.k2, &c.a)?;
            match output {
                Some(p) => {
                    store_pair(&pair, &p)?;
                    eprintln!("{} written to {}", pair_header(&pair), p.display());
                }
                None => emit(&pair_to_json(&pair)?, None)?,
            }
            Ok(Outcome::Pass)
        }
        HhpdaCmd::Params { construction: c, format } => {
            let d = load_design(&c.design)?;
            let r = theorem2_params(&d, c.k2, &c.a)?;
            let v = json!({
                "K1": r.k1, "K2": r.k2, "Kprime": r.k_prime, "F": r.f, "Fprime": r.f_prime,
                "Z1": r.z1, "Z2": r.z2, "Zprime": r.z_prime, "S": r.s, "S_k1": r.s_k1,
                "M1_over_N": r.mirror_memory.to_string(),
                "M2_over_N": r.user_memory.to_string(),
                "R1": r.server_load.to_string(),
            });
            match format {
                Format::Json => emit(&json_text(&v)?, None)?,
                _ => {
                    let mut text = String::new();
                    for (k, val) in v.as_object().expect("object") {
                        writeln!(text, "{k} = {}", val.as_str().map_or(val.to_string(), str::to_string))?;
                    }
                    emit(&text, None)?;
                }
            }
            Ok(Outcome::Pass)
        }
        HhpdaCmd::Verify { pair, exhaustive: _, sample, seed, tau, zeta, strategy, format } => {
            let pair = load_pair(&pair)?;
            if let Some(tau) = tau {
                return verify_one_tau(&pair, &tau, zeta, &strategy, format);
            }
            let coverage = match sample {
                Some(n) => Coverage::Sample { n, seed },
                None => Coverage::Exhaustive,
            };
            let report = verify_hhpda(&pair, coverage);
            let v = &report.verdict;
            match format {
                Format::Json => emit(
                    &json_text(&json!({
                        "pass": report.is_pass(),
                        "params": serde_json::to_value(pair.params)?,
                        "S": pair.s.len(),
                        "S_k": pair.s_k.iter().map(Vec::len).collect::<Vec<_>>(),
                        "active_sets_checked": report.taus_checked,
                        "violations": strings(&v.violations),
                        "warnings": strings(&v.warnings),
                        "notes": v.notes,
                    }))?,
                    None,
                )?,
                _ => emit(
                    &format!(
                        "{}\n{} active sets checked\n{v}",
                        pair_header(&pair),
                        report.taus_checked
                    ),
                    None,
                )?,
            }
            Ok(outcome(report.is_pass()))
        }
    }
}

fn verify_one_tau(
    pair: &HhpdaPair,
    tau: &str,
    zeta: Option<Vec<usize>>,
    strategy: &str,
    format: Format,
) -> anyhow::Result<Outcome> {
    let tau: ActiveSet = tau.parse()?;
    let (zeta, matched) = match zeta {
        Some(rows) => {
            if rows.contains(&0) {
                bail!("--zeta rows are 1-based");
            }
            let rows: Vec<usize> = rows.iter().map(|r| r - 1).collect();
            let ok = rows.len() == pair.b.rows() && verify_zeta(pair, &rows, &tau)?;
            (rows, ok)
        }
        None => (find_zeta(pair, &tau, parse_strategy(strategy)?)?, true),
    };
    let one_based: Vec<usize> = zeta.iter().map(|r| r + 1).collect();
    match format {
        Format::Json => emit(
            &json_text(&json!({"tau": tau.to_string(), "zeta": one_based, "star_match": matched}))?,
            None,
        )?,
        _ => emit(
            &format!(
                "active set {tau}\nzeta = {one_based:?}\n{}\n",
                if matched { "PASS: projection star-matches B" } else { "FAIL: projection does not star-match B" }
            ),
            None,
        )?,
    }
    Ok(outcome(matched))
}

fn library(pair: &HhpdaPair, args: &LibraryArgs) -> anyhow::Result<Library> {
    if args.packet_bytes == 0 {
        bail!("--packet-bytes must be positive");
    }
    Ok(Library::random(args.files, pair.params.f_prime, args.packet_bytes, args.seed)?)
}

fn zero_based(ids: &[usize], flag: &str) -> anyhow::Result<Vec<usize>> {
    ids.iter()
        .map(|&d| d.checked_sub(1).ok_or_else(|| anyhow!("{flag} file ids are 1-based")))
        .collect()
}

fn human_report(r: &SessionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "active set {{{}}}, demands {:?}, strategy {}, seed {}", r.tau, r.demands, r.strategy, r.seed);
    let _ = writeln!(s, "zeta = {:?}", r.zeta);
    let _ = writeln!(s, "M1/N = {}, M2/N = {}", r.m1_over_n, r.m2_over_n);
    let _ = writeln!(s, "R1 = {} (theory {})", r.r1_measured, r.r1_theory);
    let _ = writeln!(s, "R2 = {} (theory {})", r.r2_measured, r.r2_theory);
    for m in r.mirrors.iter().filter(|m| m.active_users > 0) {
        let _ = writeln!(
            s,
            "  mirror {}: {} forwarded + {} local = {} (theory {})",
            m.mirror, m.forwarded, m.local, m.r2_measured, m.r2_theory
        );
    }
    for u in &r.users {
        match &u.error {
            None => {
                let _ = writeln!(s, "  user {}: file {} decoded from {} coded packets", u.user, u.file, u.packets_collected);
            }
            Some(e) => {
                let _ = writeln!(s, "  user {}: file {} FAILED: {e}", u.user, u.file);
            }
        }
    }
    let _ = writeln!(s, "{}", if r.is_pass() { "PASS" } else { "FAIL" });
    s
}

fn sim(cmd: SimCmd) -> anyhow::Result<Outcome> {
    match cmd {
        SimCmd::Run { lib: args, active, demands, messages, format, output } => {
            let pair = load_pair(&args.pair)?;
            let lib = library(&pair, &args)?;
            let tau: ActiveSet = active.parse()?;
            let demands = zero_based(&demands, "--demands")?;
            let strategy = parse_strategy(&args.strategy)?;
            let run = run_session(&pair, &lib, tau, demands, strategy, args.seed)?;
            let text = match format {
                Format::Json => to_canonical_string(&run.report)?,
                Format::Csv => sweep_csv(std::slice::from_ref(&run.report))?,
                Format::Human => {
                    let mut text = human_report(&run.report);
                    if messages {
                        for t in run.server.iter().chain(run.mirrors.iter().flatten()) {
                            writeln!(text, "  {t}")?;
                        }
                    }
                    text
                }
            };
            emit(&text, output.as_deref())?;
            Ok(outcome(run.report.is_pass()))
        }
        SimCmd::Sweep { lib: args, sample, per_tau, demands, format, output } => {
            let pair = load_pair(&args.pair)?;
            let lib = library(&pair, &args)?;
            let strategy = parse_strategy(&args.strategy)?;
            let policy = match demands {
                Some(d) => DemandPolicy::Fixed(zero_based(&d, "--demands")?),
                None => DemandPolicy::Random { per_tau },
            };
            let taus = sample.map_or(TauSource::All, TauSource::Sample);
            let reports = sweep(&pair, &lib, taus, &policy, strategy, args.seed)?;
            let pass = reports.iter().all(SessionReport::is_pass);
            let text = match format {
                Format::Json => to_canonical_string(&reports)?,
                Format::Csv => sweep_csv(&reports)?,
                Format::Human => {
                    let ok = reports.iter().filter(|r| r.is_pass()).count();
                    format!(
                        "{} sessions, {ok} passed, strategy {strategy}, seed {}\n{}\n",
                        reports.len(),
                        args.seed,
                        if pass { "PASS" } else { "FAIL" }
                    )
                }
            };
            emit(&text, output.as_deref())?;
            Ok(outcome(pass))
        }
    }
}
