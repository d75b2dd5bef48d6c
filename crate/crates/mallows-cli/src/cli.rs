//! Argument parsing and the subcommands of the `mallows` binary.
//!
//! Every subcommand builds one report and renders it as JSON (the default)
//! or CSV. Real numbers are written as strings with 17 significant digits;
//! probabilities appear twice, as `ln` and as the linear value.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mallows::asep::{
    estimate_second_class_rates, run_asepqm, run_stationary, run_step_convergence, simulate_observed,
    stationary_window, step_height_law, AsepWindowState, Trace,
};
use mallows::measures::{
    asepqm_block_sum, asymptotic_check, blocking_prob, cdf_product, go_pmf_displacement, go_pmf_joint,
    oracle_marginalized_pmf, oracle_mixture_pmf, pmf_asepqm, pmf_decreasing, pmf_dsecond, pmf_gap_one_increasing,
    pmf_multiclass, pmf_neighbors, pmf_single, pmf_two_separated, second_class_position_pmf, second_class_rate,
    Convention, DisplacementVector, LogProb, MallowsParams, PositionValuePairs,
};
use mallows::qseries::TruncationPolicy;
use mallows::sampler::{sample_many, seeded_rng};
use mallows::sixvertex::{
    check_support_condition, enumerate_exact, sample_heights, verify_shift_invariance, CutQuery, RectDomain,
    SupportData, VerifyMode, VertexParams, MAX_STOCHASTIC_VERTICES,
};
use mallows::stats::EmpiricalDist;

use crate::report::{fmt17, Num};
use crate::suite::{self, format_line, SuiteConfig};

/// Seed used when neither `--seed` nor `MALLOWS_SEED` is given.
pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Parser)]
#[command(name = "mallows", version, about = "Mallows product measures: closed forms, samplers, simulations and checks")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Output format, or a file path (format then taken from the extension
    /// unless `--format` is given). Default: JSON on stdout.
    #[arg(long, global = true, value_name = "json|csv|PATH")]
    pub out: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true, env = "MALLOWS_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads for replica loops (default: available parallelism).
    /// Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Truncation tolerance for series, windows and oracles.
    #[arg(long, global = true, default_value_t = 1e-14)]
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate one closed form or oracle.
    #[command(after_help = EVAL_HELP, allow_negative_numbers = true)]
    Eval(EvalArgs),
    /// Draw windows `omega(start), ..., omega(start+k-1)` from the product measure.
    #[command(after_help = "CSV columns: replica,position,value", allow_negative_numbers = true)]
    Sample(SampleArgs),
    /// Simulate the multi-species ASEP on a closed window.
    #[command(name = "simulate-asep", after_help = ASEP_HELP, allow_negative_numbers = true)]
    SimulateAsep(AsepArgs),
    /// Simulate ASEP(q,M) with one second-class particle.
    #[command(
        name = "simulate-asepqm",
        after_help = "CSV columns: x,occupation_time,fraction,predicted_ln,predicted\n\
                      x indexes the site {xM+1, ..., xM+M} of the underlying line.",
        allow_negative_numbers = true
    )]
    SimulateAsepqm(AsepQmArgs),
    /// Colored stochastic six-vertex model: height laws and shift invariance.
    #[command(after_help = SIXVERTEX_HELP, allow_negative_numbers = true)]
    Sixvertex(SixVertexArgs),
    /// Run the verification suite; exit status 0 iff every check passes.
    #[command(after_help = "CSV columns: id,name,pass,detail")]
    Verify(VerifyArgs),
    /// Compare the laws at q = exp(-epsilon) with their scaling limits.
    #[command(
        after_help = "CSV columns: y,scaled_pmf,logistic,scaled_cdf,cdf_reference,rate_oracle,\
                      rate_oracle_reference,rate_literal,rate_literal_reference",
        allow_negative_numbers = true
    )]
    Asymptotics(AsymptoticsArgs),
}

const EVAL_HELP: &str = "\
Inputs by op (pairs are position:value, positions a comma list):
  pmf_single                 one pair
  pmf_neighbors              pairs at consecutive positions, any value order
  oracle_mixture_pmf         pairs at consecutive positions, increasing values [--c-max]
  go_pmf_joint               pairs at consecutive positions, weakly increasing displacements [--c]
  go_pmf_displacement        one pair [--c]
  pmf_decreasing             pairs with decreasing values
  oracle_marginalized_pmf    pairs
  cdf_product                pairs read as omega(i) <= x, thresholds weakly decreasing
  pmf_two_separated          two pairs with decreasing values
  pmf_gap_one_increasing     pairs 0:x1,2:x3 with x1 < x3
  blocking_prob              one position; prob is P(omega(i) > 0)
  pmf_dsecond, pmf_multiclass            positions [--convention]
  second_class_position_pmf  one position [--convention]
  second_class_rate          one position, --direction; prob holds the rate
  pmf_asepqm, asepqm_block_sum           one block index, --M

CSV columns: op,q,alpha,log_prob,prob,tail_bound";

const ASEP_HELP: &str = "\
Modes:
  raw           histogram of omega(x) at --coords at time t
  second-class  jump-rate estimates of the particle carrying value 0
  classes       joint law of h(v, p) = #{a > p : omega(a) <= v} at --queries from omega = id

CSV columns:
  raw           position,value,count,frequency
  second-class  x,direction,jumps,occupation_time,rate,stderr,predicted
  classes       h_0,...,h_{n-1},count,frequency (one column per query)
--trace writes replica 0 as CSV: time,bond,kind";

const SIXVERTEX_HELP: &str = "\
Cuts are x:y pairs of doubled half-integers (odd integers), as in the support file.

CSV columns:
  sample  h_0,...,h_{n-1},count,frequency
  exact   h_0,...,h_{n-1},ln_prob,prob
  verify  holds,witness,mode,width,height,deviation,p_value";

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub op: EvalOp,
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub pairs: String,
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub positions: String,
    #[arg(long, value_enum, default_value = "oracle")]
    pub convention: ConventionArg,
    #[arg(long, allow_hyphen_values = true)]
    pub direction: Option<i8>,
    #[arg(long = "M")]
    pub m: Option<u32>,
    /// Balance of the ergodic measure.
    #[arg(long, default_value_t = 0)]
    pub c: i64,
    #[arg(long)]
    pub c_max: Option<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum EvalOp {
    PmfSingle,
    PmfNeighbors,
    PmfDecreasing,
    CdfProduct,
    PmfTwoSeparated,
    PmfGapOneIncreasing,
    BlockingProb,
    PmfDsecond,
    PmfMulticlass,
    SecondClassRate,
    SecondClassPositionPmf,
    PmfAsepqm,
    AsepqmBlockSum,
    GoPmfDisplacement,
    GoPmfJoint,
    OracleMixturePmf,
    OracleMarginalizedPmf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Oracle,
    Literal,
}

impl From<ConventionArg> for Convention {
    fn from(c: ConventionArg) -> Convention {
        match c {
            ConventionArg::Oracle => Convention::Oracle,
            ConventionArg::Literal => Convention::Literal,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub start: i64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AsepMode {
    Raw,
    SecondClass,
    Classes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AsepInit {
    Stationary,
    Step,
}

#[derive(Debug, Args)]
pub struct AsepArgs {
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub alpha: f64,
    /// Half-width: the window is [-L, L].
    #[arg(long = "L", default_value_t = 20)]
    pub l: i64,
    #[arg(long, default_value_t = 10.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
    #[arg(long, value_enum, default_value = "raw")]
    pub mode: AsepMode,
    /// Initial condition in raw mode.
    #[arg(long, value_enum, default_value = "stationary")]
    pub init: AsepInit,
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub coords: String,
    /// Positions `a:b` with rate estimates in second-class mode.
    #[arg(long, default_value = "-2:2", allow_hyphen_values = true)]
    pub x_range: String,
    /// `v:p` pairs for classes mode.
    #[arg(long, default_value = "0:0", allow_hyphen_values = true)]
    pub queries: String,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AsepQmArgs {
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long = "M")]
    pub m: u32,
    /// The window holds the blocks -L..=L.
    #[arg(long = "L", default_value_t = 10)]
    pub l: i64,
    #[arg(long, default_value_t = 400.0)]
    pub t: f64,
    /// Default t/5.
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SixVertexMode {
    Sample,
    Exact,
    Verify,
}

#[derive(Debug, Args)]
pub struct SixVertexArgs {
    #[arg(long, default_value_t = 0.5)]
    pub b1: f64,
    #[arg(long, default_value_t = 0.25)]
    pub b2: f64,
    /// Default from the support file in verify mode.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub cuts: String,
    #[arg(long, value_enum, default_value = "sample")]
    pub mode: SixVertexMode,
    #[arg(long)]
    pub support_file: Option<PathBuf>,
    /// Replicas for sampling and Monte Carlo verification.
    #[arg(long, default_value_t = 10000)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub permutations: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub quick: bool,
    /// Comma list of check ids (default: all).
    #[arg(long, default_value = "")]
    pub only: String,
}

#[derive(Debug, Args)]
pub struct AsymptoticsArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value = "-1,0,0.5,1", allow_hyphen_values = true)]
    pub ys: String,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
}

/// Why a run did not produce a report.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or inputs (exit 2).
    Usage(String),
    /// Anything else (exit 3).
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<mallows::Error> for Failure {
    fn from(e: mallows::Error) -> Failure {
        use mallows::Error as E;
        match e {
            E::Parameter(_)
            | E::Ordering(_)
            | E::DuplicateValue(_)
            | E::Invalid(_)
            | E::TooLarge(_)
            | E::SupportMismatch { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::Internal(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Failure {
        Failure::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Failure {
        Failure::Internal(e.to_string())
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// A rendered report. `ok` is false when a check inside it failed.
#[derive(Debug)]
pub struct Output {
    pub json: String,
    pub csv: String,
    pub ok: bool,
}

fn output(json: &impl Serialize, header: &[&str], rows: Vec<Vec<String>>) -> Res<Output> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Failure::Internal(e.to_string()))?)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    Ok(Output { json: serde_json::to_string_pretty(json)? + "\n", csv, ok: true })
}

/// Where the report goes and in which format.
pub fn sink(g: &Global) -> (Option<PathBuf>, Format) {
    match g.out.as_deref() {
        None => (None, g.format.unwrap_or(Format::Json)),
        Some("json") => (None, g.format.unwrap_or(Format::Json)),
        Some("csv") => (None, g.format.unwrap_or(Format::Csv)),
        Some(path) => {
            let by_ext = if path.ends_with(".csv") { Format::Csv } else { Format::Json };
            (Some(PathBuf::from(path)), g.format.unwrap_or(by_ext))
        }
    }
}

impl Global {
    fn policy(&self) -> Res<TruncationPolicy> {
        Ok(TruncationPolicy::with_tol(self.tol)?)
    }
}

/// Runs the parsed command and returns its report.
pub fn run(cli: &Cli) -> Res<Output> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let g = &cli.global;
    match &cli.command {
        Command::Eval(a) => eval(a, g),
        Command::Sample(a) => sample(a, g),
        Command::SimulateAsep(a) => simulate_asep(a, g),
        Command::SimulateAsepqm(a) => simulate_asepqm(a, g),
        Command::Sixvertex(a) => sixvertex(a, g),
        Command::Verify(a) => verify(a, g),
        Command::Asymptotics(a) => asymptotics(a),
    }
}

fn parse_int(s: &str) -> Res<i64> {
    s.trim().parse().map_err(|_| usage(format!("not an integer: {s:?}")))
}

fn parse_list(s: &str) -> Res<Vec<i64>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(parse_int).collect()
}

fn parse_pairs(s: &str) -> Res<Vec<(i64, i64)>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (a, b) = t.split_once(':').ok_or_else(|| usage(format!("expected a:b, got {t:?}")))?;
            Ok((parse_int(a)?, parse_int(b)?))
        })
        .collect()
}

fn parse_reals(s: &str) -> Res<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| usage(format!("not a number: {t:?}"))))
        .collect()
}

fn exactly<T: Copy>(v: &[T], n: usize, what: &str) -> Res<()> {
    if v.len() != n {
        return Err(usage(format!("expected {n} {what}, got {}", v.len())));
    }
    Ok(())
}

/// `(i, values)` for pairs at positions `i+1, ..., i+k`.
fn consecutive(pairs: &[(i64, i64)]) -> Res<(i64, Vec<i64>)> {
    if pairs.is_empty() {
        return Err(usage("--pairs is empty"));
    }
    if pairs.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(usage("positions must be consecutive"));
    }
    Ok((pairs[0].0 - 1, pairs.iter().map(|p| p.1).collect()))
}

#[derive(Serialize)]
struct Params {
    q: String,
    alpha: String,
}

impl Params {
    fn of(p: &MallowsParams) -> Params {
        Params { q: fmt17(p.q().value()), alpha: fmt17(p.alpha()) }
    }
}

#[derive(Serialize)]
struct EvalRecord {
    op: String,
    params: Params,
    pairs: Vec<(i64, i64)>,
    positions: Vec<i64>,
    log_prob: String,
    prob: String,
    tail_bound: String,
}

fn eval(a: &EvalArgs, g: &Global) -> Res<Output> {
    let p = MallowsParams::new(a.q, a.alpha)?;
    let pol = g.policy()?;
    let pairs = parse_pairs(&a.pairs)?;
    let pos = parse_list(&a.positions)?;
    let conv = Convention::from(a.convention);
    let need_m = || a.m.ok_or_else(|| usage("--M is required for this op"));
    let closed = |lp: LogProb| (lp, 0.0);
    let (lp, tail) = match a.op {
        EvalOp::PmfSingle => {
            exactly(&pairs, 1, "pairs")?;
            closed(pmf_single(&p, pairs[0].0, pairs[0].1))
        }
        EvalOp::PmfNeighbors => {
            let (i, v) = consecutive(&pairs)?;
            closed(pmf_neighbors(&p, i, &v)?)
        }
        EvalOp::PmfDecreasing => closed(pmf_decreasing(&p, &PositionValuePairs::new(pairs.clone())?)?),
        EvalOp::CdfProduct => closed(cdf_product(&p, &pairs)?),
        EvalOp::PmfTwoSeparated => {
            exactly(&pairs, 2, "pairs")?;
            let (i, k) = (pairs[0].0 - 1, pairs[1].0 - pairs[0].0 + 1);
            closed(pmf_two_separated(&p, i, k, pairs[0].1, pairs[1].1)?)
        }
        EvalOp::PmfGapOneIncreasing => {
            exactly(&pairs, 2, "pairs")?;
            if pairs[0].0 != 0 || pairs[1].0 != 2 {
                return Err(usage("pmf_gap_one_increasing takes positions 0 and 2"));
            }
            closed(pmf_gap_one_increasing(&p, pairs[0].1, pairs[1].1)?)
        }
        EvalOp::BlockingProb => {
            exactly(&pos, 1, "positions")?;
            closed(blocking_prob(&p, pos[0]).particle)
        }
        EvalOp::PmfDsecond => closed(pmf_dsecond(&p, &pos, conv)?),
        EvalOp::PmfMulticlass => closed(pmf_multiclass(&p, &pos, conv)?),
        EvalOp::SecondClassRate => {
            exactly(&pos, 1, "positions")?;
            let dir = a.direction.ok_or_else(|| usage("--direction is required for second_class_rate"))?;
            closed(LogProb(second_class_rate(&p, pos[0], dir, conv)?.ln()))
        }
        EvalOp::SecondClassPositionPmf => {
            exactly(&pos, 1, "positions")?;
            closed(second_class_position_pmf(&p, pos[0], conv))
        }
        EvalOp::PmfAsepqm => {
            exactly(&pos, 1, "positions")?;
            closed(pmf_asepqm(&p, need_m()?, pos[0])?)
        }
        EvalOp::AsepqmBlockSum => {
            exactly(&pos, 1, "positions")?;
            closed(asepqm_block_sum(&p, need_m()?, pos[0])?)
        }
        EvalOp::GoPmfDisplacement => {
            exactly(&pairs, 1, "pairs")?;
            closed(go_pmf_displacement(p.q(), a.c, pairs[0].1 - pairs[0].0, &pol)?)
        }
        EvalOp::GoPmfJoint => {
            let (i, v) = consecutive(&pairs)?;
            closed(go_pmf_joint(p.q(), a.c, &DisplacementVector::from_values(i, &v).d, &pol)?)
        }
        EvalOp::OracleMixturePmf => {
            let (i, v) = consecutive(&pairs)?;
            let o = oracle_mixture_pmf(&p, i, &v, a.c_max, &pol)?;
            (o.log_prob, o.tail_bound)
        }
        EvalOp::OracleMarginalizedPmf => {
            let o = oracle_marginalized_pmf(&p, &PositionValuePairs::new(pairs.clone())?, &pol)?;
            (o.log_prob, o.tail_bound)
        }
    };
    let op = a.op.to_possible_value().expect("no skipped variants").get_name().to_string();
    let num = Num::from_ln(lp.ln());
    let row = vec![op.clone(), fmt17(a.q), fmt17(a.alpha), num.ln.clone(), num.prob.clone(), fmt17(tail)];
    let rec = EvalRecord {
        op,
        params: Params::of(&p),
        pairs,
        positions: pos,
        log_prob: num.ln,
        prob: num.prob,
        tail_bound: fmt17(tail),
    };
    output(&rec, &["op", "q", "alpha", "log_prob", "prob", "tail_bound"], vec![row])
}

#[derive(Serialize)]
struct SampleReport {
    params: Params,
    start: i64,
    k: usize,
    n: usize,
    seed: u64,
    tol: String,
    /// Largest total-variation bound over the draws.
    tv_bound: String,
    windows: Vec<Vec<i64>>,
}

fn sample(a: &SampleArgs, g: &Global) -> Res<Output> {
    let p = MallowsParams::new(a.q, a.alpha)?;
    let draws = sample_many(&p, a.start, a.k, a.n, g.seed, &g.policy()?)?;
    let tv = draws.iter().map(|d| d.tv_bound).fold(0.0, f64::max);
    let mut rows = Vec::new();
    for (r, d) in draws.iter().enumerate() {
        for (j, &x) in d.window.values.iter().enumerate() {
            rows.push(vec![r.to_string(), (a.start + j as i64).to_string(), x.to_string()]);
        }
    }
    let rep = SampleReport {
        params: Params::of(&p),
        start: a.start,
        k: a.k,
        n: a.n,
        seed: g.seed,
        tol: fmt17(g.tol),
        tv_bound: fmt17(tv),
        windows: draws.into_iter().map(|d| d.window.values).collect(),
    };
    output(&rep, &["replica", "position", "value"], rows)
}

#[derive(Serialize)]
struct Count<K> {
    key: K,
    count: u64,
    frequency: String,
}

fn counts<K: Ord + Clone>(e: &EmpiricalDist<K>) -> Vec<Count<K>> {
    let n = e.n() as f64;
    e.iter().map(|(k, c)| Count { key: k.clone(), count: c, frequency: fmt17(c as f64 / n) }).collect()
}

#[derive(Serialize)]
struct Marginal {
    position: i64,
    counts: Vec<Count<i64>>,
}

#[derive(Serialize)]
struct RateRow {
    x: i64,
    direction: i8,
    jumps: u64,
    occupation_time: String,
    rate: String,
    stderr: String,
    predicted: String,
}

#[derive(Serialize)]
#[serde(untagged)]
enum AsepBody {
    Raw { init: &'static str, marginals: Vec<Marginal> },
    SecondClass { rates: Vec<RateRow>, occupancy: BTreeMap<i64, String> },
    Classes { queries: Vec<(i64, i64)>, law: Vec<Count<Vec<u64>>> },
}

#[derive(Serialize)]
struct AsepReport {
    params: Params,
    mode: &'static str,
    #[serde(rename = "L")]
    l: i64,
    t: String,
    replicas: usize,
    seed: u64,
    #[serde(flatten)]
    body: AsepBody,
}

fn simulate_asep(a: &AsepArgs, g: &Global) -> Res<Output> {
    let p = MallowsParams::new(a.q, a.alpha)?;
    let pol = g.policy()?;
    if a.l < 1 {
        return Err(usage("--L must be positive"));
    }
    if !(a.t >= 0.0 && a.t.is_finite()) {
        return Err(usage("--t must be a finite non-negative time"));
    }
    let step_start = match a.mode {
        AsepMode::Raw => a.init == AsepInit::Step,
        AsepMode::SecondClass => false,
        AsepMode::Classes => true,
    };
    if let Some(path) = &a.trace {
        let mut rng = seeded_rng(g.seed, 0);
        let mut s = if step_start { AsepWindowState::identity(a.l) } else { stationary_window(&p, a.l, &mut rng, &pol)? };
        let mut tr = Trace::default();
        simulate_observed(&mut s, p.q(), a.t, &mut rng, &mut tr);
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time", "bond", "kind"])?;
        for ev in &tr.0 {
            let kind = serde_json::to_value(ev.kind)?;
            w.write_record([fmt17(ev.time), ev.bond.to_string(), kind.as_str().unwrap_or_default().to_string()])?;
        }
        w.flush()?;
    }
    let (mode, body, header, rows): (_, _, Vec<String>, Vec<Vec<String>>) = match a.mode {
        AsepMode::Raw => {
            let coords = parse_list(&a.coords)?;
            let margs = if step_start {
                let joint = run_step_convergence(&p, a.l, a.t, a.replicas, g.seed, &coords)?;
                (0..coords.len()).map(|j| joint.map(|v| v[j])).collect()
            } else {
                run_stationary(&p, a.l, a.t, a.replicas, g.seed, &coords, &pol)?
            };
            let marginals: Vec<Marginal> =
                coords.iter().zip(&margs).map(|(&c, e)| Marginal { position: c, counts: counts(e) }).collect();
            let rows = marginals
                .iter()
                .flat_map(|m| {
                    m.counts.iter().map(move |c| {
                        vec![m.position.to_string(), c.key.to_string(), c.count.to_string(), c.frequency.clone()]
                    })
                })
                .collect();
            let init = if step_start { "step" } else { "stationary" };
            let header = ["position", "value", "count", "frequency"].map(String::from).to_vec();
            ("raw", AsepBody::Raw { init, marginals }, header, rows)
        }
        AsepMode::SecondClass => {
            let (lo, hi) = match parse_pairs(&a.x_range)?.as_slice() {
                [r] => *r,
                _ => return Err(usage("--x-range takes one a:b pair")),
            };
            let rep = estimate_second_class_rates(&p, a.l, a.t, a.replicas, (lo, hi), g.seed, &pol)?;
            let mut rates = Vec::new();
            for e in &rep.estimates {
                rates.push(RateRow {
                    x: e.x,
                    direction: e.direction,
                    jumps: e.jumps,
                    occupation_time: fmt17(e.occupation_time),
                    rate: fmt17(e.rate),
                    stderr: fmt17(e.stderr),
                    predicted: fmt17(second_class_rate(&p, e.x, e.direction, Convention::Oracle)?),
                });
            }
            let rows = rates
                .iter()
                .map(|r| {
                    vec![
                        r.x.to_string(),
                        r.direction.to_string(),
                        r.jumps.to_string(),
                        r.occupation_time.clone(),
                        r.rate.clone(),
                        r.stderr.clone(),
                        r.predicted.clone(),
                    ]
                })
                .collect();
            let occupancy = rep.occupancy.iter().map(|(&x, t)| (x, fmt17(t))).collect();
            let header = ["x", "direction", "jumps", "occupation_time", "rate", "stderr", "predicted"]
                .map(String::from)
                .to_vec();
            ("second-class", AsepBody::SecondClass { rates, occupancy }, header, rows)
        }
        AsepMode::Classes => {
            let queries = parse_pairs(&a.queries)?;
            if queries.is_empty() {
                return Err(usage("--queries is empty"));
            }
            let law = counts(&step_height_law(&p, a.l, a.t, &queries, a.replicas, g.seed)?);
            let rows = law
                .iter()
                .map(|c| {
                    let mut r: Vec<String> = c.key.iter().map(|h| h.to_string()).collect();
                    r.push(c.count.to_string());
                    r.push(c.frequency.clone());
                    r
                })
                .collect();
            let mut header: Vec<String> = (0..queries.len()).map(|j| format!("h_{j}")).collect();
            header.extend(["count".to_string(), "frequency".to_string()]);
            ("classes", AsepBody::Classes { queries, law }, header, rows)
        }
    };
    let rep = AsepReport { params: Params::of(&p), mode, l: a.l, t: fmt17(a.t), replicas: a.replicas, seed: g.seed, body };
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    output(&rep, &header, rows)
}

#[derive(Serialize)]
struct SiteRow {
    x: i64,
    occupation_time: String,
    fraction: String,
    predicted: Num,
}

#[derive(Serialize)]
struct FluxRow {
    x: i64,
    direction: i8,
    jumps: u64,
}

#[derive(Serialize)]
struct AsepQmReport {
    params: Params,
    #[serde(rename = "M")]
    m: u32,
    #[serde(rename = "L")]
    l: i64,
    t: String,
    burn_in: String,
    replicas: usize,
    seed: u64,
    sites: Vec<SiteRow>,
    flux: Vec<FluxRow>,
}

fn simulate_asepqm(a: &AsepQmArgs, g: &Global) -> Res<Output> {
    let p = MallowsParams::new(a.q, a.alpha)?;
    if a.m == 0 {
        return Err(usage("--M must be positive"));
    }
    if a.l < 1 {
        return Err(usage("--L must be positive"));
    }
    let burn_in = a.burn_in.unwrap_or(a.t / 5.0);
    let rep = run_asepqm(&p, a.m, a.l, a.t, burn_in, a.replicas, g.seed, &g.policy()?)?;
    let total = rep.occupancy.total();
    // the site law of the tagged particle is the fused law at 1/alpha
    let inv = p.inverse();
    let mut sites = Vec::new();
    for (&x, t) in rep.occupancy.iter() {
        sites.push(SiteRow {
            x,
            occupation_time: fmt17(t),
            fraction: fmt17(t / total),
            predicted: Num::from_ln(pmf_asepqm(&inv, a.m, x)?.ln()),
        });
    }
    let rows = sites
        .iter()
        .map(|s| {
            vec![
                s.x.to_string(),
                s.occupation_time.clone(),
                s.fraction.clone(),
                s.predicted.ln.clone(),
                s.predicted.prob.clone(),
            ]
        })
        .collect();
    let flux = rep.flux.iter().map(|&((x, direction), jumps)| FluxRow { x, direction, jumps }).collect();
    let out = AsepQmReport {
        params: Params::of(&p),
        m: a.m,
        l: a.l,
        t: fmt17(a.t),
        burn_in: fmt17(burn_in),
        replicas: a.replicas,
        seed: g.seed,
        sites,
        flux,
    };
    output(&out, &["x", "occupation_time", "fraction", "predicted_ln", "predicted"], rows)
}

#[derive(Serialize)]
struct ExactRow {
    heights: Vec<u64>,
    #[serde(flatten)]
    p: Num,
}

#[derive(Serialize)]
#[serde(untagged)]
enum SixVertexBody {
    Sample { law: Vec<Count<Vec<u64>>> },
    Exact { law: Vec<ExactRow> },
    Verify(VerifyBody),
}

#[derive(Serialize)]
struct VerifyBody {
    holds: bool,
    witness: Option<usize>,
    hat_supports: Vec<Vec<i64>>,
    tilde_supports: Vec<Vec<i64>>,
    method: Option<&'static str>,
    deviation: Option<String>,
    p_value: Option<String>,
    pass: bool,
}

#[derive(Serialize)]
struct SixVertexReport {
    b1: String,
    b2: String,
    width: usize,
    height: usize,
    cuts: Vec<(i64, i64)>,
    mode: &'static str,
    seed: u64,
    #[serde(flatten)]
    body: SixVertexBody,
}

fn domain(a: &SixVertexArgs) -> Res<RectDomain> {
    match (a.width, a.height) {
        (Some(w), Some(h)) => Ok(RectDomain::new(w, h)?),
        _ => Err(usage("--width and --height are required")),
    }
}

fn height_header(n: usize, tail: [&str; 2]) -> Vec<String> {
    let mut h: Vec<String> = (0..n).map(|j| format!("h_{j}")).collect();
    h.extend(tail.map(String::from));
    h
}

fn sixvertex(a: &SixVertexArgs, g: &Global) -> Res<Output> {
    let vp = VertexParams::new(a.b1, a.b2)?;
    let doubled = parse_pairs(&a.cuts)?;
    let cuts = doubled.iter().map(|&(x, y)| CutQuery::from_doubled(x, y)).collect::<mallows::Result<Vec<_>>>()?;
    let (mode, dom, body, header, rows) = match a.mode {
        SixVertexMode::Sample | SixVertexMode::Exact => {
            if cuts.is_empty() {
                return Err(usage("--cuts is empty"));
            }
            let dom = domain(a)?;
            if a.mode == SixVertexMode::Sample {
                let law = counts(&sample_heights(&vp, &dom, &cuts, a.n, g.seed)?);
                let rows = law
                    .iter()
                    .map(|c| {
                        let mut r: Vec<String> = c.key.iter().map(|h| h.to_string()).collect();
                        r.extend([c.count.to_string(), c.frequency.clone()]);
                        r
                    })
                    .collect();
                ("sample", dom, SixVertexBody::Sample { law }, height_header(cuts.len(), ["count", "frequency"]), rows)
            } else {
                let pmf = enumerate_exact(&vp, &dom, &cuts)?;
                let law: Vec<ExactRow> =
                    pmf.iter().map(|(k, ln)| ExactRow { heights: k.clone(), p: Num::from_ln(ln) }).collect();
                let rows = law
                    .iter()
                    .map(|e| {
                        let mut r: Vec<String> = e.heights.iter().map(|h| h.to_string()).collect();
                        r.extend([e.p.ln.clone(), e.p.prob.clone()]);
                        r
                    })
                    .collect();
                ("exact", dom, SixVertexBody::Exact { law }, height_header(cuts.len(), ["ln_prob", "prob"]), rows)
            }
        }
        SixVertexMode::Verify => {
            let path = a.support_file.as_ref().ok_or_else(|| usage("verify mode needs --support-file"))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            let sd: SupportData =
                serde_json::from_str(&text).map_err(|e| usage(format!("bad support file: {e}")))?;
            let dom = match (a.width, a.height) {
                (None, None) => sd.minimal_domain()?,
                _ => domain(a)?,
            };
            let verdict = check_support_condition(&sd);
            let as_vecs = |i: usize| -> Vec<Vec<i64>> {
                sd.supports()
                    .iter()
                    .map(|s| if i == 0 { s.0.iter().copied().collect() } else { s.1.iter().copied().collect() })
                    .collect()
            };
            let mut body = VerifyBody {
                holds: verdict.holds,
                witness: verdict.witness,
                hat_supports: as_vecs(0),
                tilde_supports: as_vecs(1),
                method: None,
                deviation: None,
                p_value: None,
                pass: false,
            };
            if verdict.holds {
                let exact = dom.vertices() <= MAX_STOCHASTIC_VERTICES;
                let vm = if exact {
                    VerifyMode::Exact
                } else {
                    VerifyMode::MonteCarlo { replicas: a.n, seed: g.seed, permutations: a.permutations }
                };
                let rep = verify_shift_invariance(&sd, &vp, &dom, vm)?;
                body.method = Some(if exact { "exact" } else { "monte-carlo" });
                body.deviation = Some(fmt17(rep.deviation));
                body.p_value = rep.p_value.map(fmt17);
                body.pass = match rep.p_value {
                    None => rep.deviation <= 1e-12,
                    Some(pv) => pv >= 1e-3,
                };
            }
            let row = vec![
                body.holds.to_string(),
                body.witness.map(|w| w.to_string()).unwrap_or_default(),
                body.method.unwrap_or("").to_string(),
                dom.width.to_string(),
                dom.height.to_string(),
                body.deviation.clone().unwrap_or_default(),
                body.p_value.clone().unwrap_or_default(),
            ];
            let header = ["holds", "witness", "mode", "width", "height", "deviation", "p_value"]
                .map(String::from)
                .to_vec();
            ("verify", dom, SixVertexBody::Verify(body), header, vec![row])
        }
    };
    let ok = match &body {
        SixVertexBody::Verify(b) => b.pass,
        _ => true,
    };
    let rep = SixVertexReport {
        b1: fmt17(a.b1),
        b2: fmt17(a.b2),
        width: dom.width,
        height: dom.height,
        cuts: doubled,
        mode,
        seed: g.seed,
        body,
    };
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = output(&rep, &header, rows)?;
    out.ok = ok;
    Ok(out)
}

#[derive(Serialize)]
struct CheckOut {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    metrics: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct VerifyReport {
    seed: u64,
    quick: bool,
    passed: usize,
    total: usize,
    checks: Vec<CheckOut>,
}

fn verify(a: &VerifyArgs, g: &Global) -> Res<Output> {
    let ids: Vec<u32> = parse_list(&a.only)?
        .into_iter()
        .map(|i| u32::try_from(i).ok().filter(|i| (1..=suite::CHECKS.len() as u32).contains(i)))
        .collect::<Option<_>>()
        .ok_or_else(|| usage(format!("--only takes ids 1..={}", suite::CHECKS.len())))?;
    let cfg = SuiteConfig { quick: a.quick, seed: g.seed };
    let results = suite::run(&cfg, &ids, |c| eprintln!("{}", format_line(c)));
    let passed = results.iter().filter(|c| c.pass).count();
    eprintln!("{passed} of {} checks passed", results.len());
    let rows = results
        .iter()
        .map(|c| vec![c.id.to_string(), c.name.to_string(), c.pass.to_string(), c.detail.clone()])
        .collect();
    let rep = VerifyReport {
        seed: g.seed,
        quick: a.quick,
        passed,
        total: results.len(),
        checks: results
            .into_iter()
            .map(|c| CheckOut {
                id: c.id,
                name: c.name,
                pass: c.pass,
                detail: c.detail,
                metrics: c.metrics.into_iter().map(|(k, v)| (k, fmt17(v))).collect(),
            })
            .collect(),
    };
    let mut out = output(&rep, &["id", "name", "pass", "detail"], rows)?;
    out.ok = rep.passed == rep.total;
    Ok(out)
}

#[derive(Serialize)]
struct AsymptoticsReport {
    epsilon: String,
    alpha: String,
    k: usize,
    rows: Vec<BTreeMap<&'static str, String>>,
}

fn asymptotics(a: &AsymptoticsArgs) -> Res<Output> {
    let ys = parse_reals(&a.ys)?;
    let table = asymptotic_check(a.epsilon, a.alpha, &ys, a.k)?;
    let cols = [
        "y",
        "scaled_pmf",
        "logistic",
        "scaled_cdf",
        "cdf_reference",
        "rate_oracle",
        "rate_oracle_reference",
        "rate_literal",
        "rate_literal_reference",
    ];
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| {
            [
                r.y,
                r.scaled_pmf,
                r.logistic,
                r.scaled_cdf,
                r.cdf_reference,
                r.rate_oracle,
                r.rate_oracle_reference,
                r.rate_literal,
                r.rate_literal_reference,
            ]
            .map(fmt17)
            .to_vec()
        })
        .collect();
    let rep = AsymptoticsReport {
        epsilon: fmt17(a.epsilon),
        alpha: fmt17(a.alpha),
        k: a.k,
        rows: rows.iter().map(|r| cols.iter().copied().zip(r.iter().cloned()).collect()).collect(),
    };
    output(&rep, &cols, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("mallows").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn pair_lists() {
        assert_eq!(parse_pairs("0:0, -1:3").unwrap(), vec![(0, 0), (-1, 3)]);
        assert_eq!(parse_pairs("").unwrap(), vec![]);
        assert!(matches!(parse_pairs("1-2"), Err(Failure::Usage(_))));
        assert_eq!(consecutive(&[(2, 5), (3, 1)]).unwrap(), (1, vec![5, 1]));
        assert!(consecutive(&[(2, 5), (4, 1)]).is_err());
    }

    #[test]
    fn out_flag_is_format_or_path() {
        let c = parse(&["--out", "csv", "verify"]);
        assert_eq!(sink(&c.global), (None, Format::Csv));
        let c = parse(&["--out", "/tmp/x.csv", "verify"]);
        assert_eq!(sink(&c.global), (Some(PathBuf::from("/tmp/x.csv")), Format::Csv));
        let c = parse(&["verify", "--out", "/tmp/x.txt", "--format", "csv"]);
        assert_eq!(sink(&c.global).1, Format::Csv);
    }

    #[test]
    fn eval_single_matches_library() {
        let c = parse(&["eval", "--op", "pmf_single", "--q", "0.5", "--alpha", "1", "--pairs", "0:0"]);
        let out = run(&c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.json).unwrap();
        let want = pmf_single(&MallowsParams::new(0.5, 1.0).unwrap(), 0, 0).prob();
        assert_eq!(v["prob"].as_str().unwrap().parse::<f64>().unwrap(), want);
        assert_eq!(v["tail_bound"], "0.0000000000000000e0");
        assert!(out.csv.starts_with("op,q,alpha,log_prob,prob,tail_bound\npmf_single,"));
    }

    #[test]
    fn library_errors_map_to_exit_codes() {
        let bad = parse(&["eval", "--op", "pmf_decreasing", "--q", "0.5", "--alpha", "1", "--pairs", "0:0,1:1"]);
        assert_eq!(run(&bad).unwrap_err().code(), 2);
        let bad_q = parse(&["eval", "--op", "pmf_single", "--q", "1.5", "--alpha", "1", "--pairs", "0:0"]);
        assert_eq!(run(&bad_q).unwrap_err().code(), 2);
        assert_eq!(Failure::from(mallows::Error::Truncation { terms: 1, tail: 1.0 }).code(), 3);
    }

    #[test]
    fn negative_arguments_parse() {
        let c = parse(&["eval", "--op", "second_class_rate", "--q", "0.5", "--alpha", "1", "--positions", "-1", "--direction", "-1"]);
        let out = run(&c).unwrap();
        assert!(out.json.contains("\"positions\": [\n    -1\n  ]"));
    }
}
