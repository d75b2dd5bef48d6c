//! The verification suite behind `mallows verify` and the acceptance test.
//!
//! Each check returns a pass flag, a one-line detail and named metrics. The
//! metrics are deterministic for a fixed configuration, wall-clock times are
//! kept apart so that JSON reports stay byte-identical between runs.

use std::collections::BTreeMap;
use std::time::Instant;

use mallows::asep::{
    estimate_second_class_rates, exact_reversibility_check, run_asepqm, run_stationary, run_step_convergence,
    step_height_law,
};
use mallows::measures::{
    asepqm_block_sum, asymptotic_check, go_pmf_displacement, oracle_marginalized_pmf, oracle_mixture_pmf,
    pmf_asepqm, pmf_decreasing, pmf_dsecond, pmf_gap_one_increasing, pmf_neighbors, pmf_single, pmf_two_separated,
    second_class_position_pmf, second_class_rate, Convention, LogProb, MallowsParams, PositionValuePairs,
};
use mallows::qseries::{verify_identity, Identity, IdentityInput, JacobiNormalizer, QParam, TruncationPolicy};
use mallows::sampler::{empirical_distribution, sample_many, sampler_law};
use mallows::sixvertex::{
    asep_limit_height_law, check_support_condition, example_support_data, random_support_instance,
    verify_shift_invariance, CutQuery, RectDomain, VerifyMode, VertexParams,
};
use mallows::stats::{chi_square_gof, tv_distance, Pmf};
use mallows::sampler::seeded_rng;
use rayon::prelude::*;
use serde::Serialize;

pub const Q_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const ALPHA_GRID: [f64; 3] = [0.25, 1.0, 4.0];

/// Convention the d-second-class adjudication settled on. The suite fails if
/// a later run picks the other one.
pub const PINNED_DSECOND: Convention = Convention::Oracle;
/// `pmf_dsecond(q = 0.5, alpha = 1.7, [0, 1])` under the pinned convention.
pub const PINNED_DSECOND_VALUE: f64 = 0.069432980750;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SuiteConfig {
    /// Thinner parameter grids for the exact checks; Monte Carlo sizes are
    /// unchanged since their tolerances depend on them.
    pub quick: bool,
    pub seed: u64,
}

type Outcome = anyhow::Result<(bool, String, Vec<(&'static str, f64)>)>;

pub const CHECKS: [(u32, &str); 13] = [
    (1, "q-series identities"),
    (2, "mixture oracle"),
    (3, "marginalization oracle"),
    (4, "normalizations"),
    (5, "exact reversibility"),
    (6, "sampler exactness"),
    (7, "ASEP stationarity and convergence"),
    (8, "second-class rates"),
    (9, "d-second-class adjudication"),
    (10, "six-vertex shift invariance"),
    (11, "ASEP limit of six-vertex"),
    (12, "ASEP(q,M)"),
    (13, "asymptotics"),
];

/// Runs the checks in `ids` (all when empty) in order, calling `on_done`
/// after each.
pub fn run(cfg: &SuiteConfig, ids: &[u32], mut on_done: impl FnMut(&Check)) -> Vec<Check> {
    let mut out = Vec::new();
    for (id, name) in CHECKS {
        if !ids.is_empty() && !ids.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let res = match id {
            1 => identities(cfg),
            2 => mixture(cfg),
            3 => marginalization(cfg),
            4 => normalizations(cfg),
            5 => reversibility(cfg),
            6 => sampler(cfg),
            7 => asep_stationarity(cfg),
            8 => second_class(cfg),
            9 => dsecond(cfg),
            10 => shift_invariance(cfg),
            11 => asep_limit(cfg),
            12 => asepqm(cfg),
            _ => asymptotics(cfg),
        };
        let seconds = t.elapsed().as_secs_f64();
        let check = match res {
            Ok((pass, detail, m)) => Check {
                id,
                name,
                pass,
                detail,
                metrics: m.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
                seconds,
            },
            Err(e) => Check { id, name, pass: false, detail: format!("error: {e}"), metrics: BTreeMap::new(), seconds },
        };
        on_done(&check);
        out.push(check);
    }
    out
}

/// `criterion  N [PASS] name: detail (time)`.
pub fn format_line(c: &Check) -> String {
    format!(
        "criterion {:>2} [{}] {}: {} ({:.1}s)",
        c.id,
        if c.pass { "PASS" } else { "FAIL" },
        c.name,
        c.detail,
        c.seconds
    )
}

fn rel(a: LogProb, b: LogProb) -> f64 {
    if a.is_zero() && b.is_zero() {
        0.0
    } else {
        (a.ln() - b.ln()).exp_m1().abs()
    }
}

fn params(q: f64, a: f64) -> MallowsParams {
    MallowsParams::new(q, a).expect("grid parameters are valid")
}

fn grid(quick: bool) -> Vec<(f64, f64)> {
    let qs: &[f64] = if quick { &[0.3, 0.7] } else { &Q_GRID };
    qs.iter().flat_map(|&q| ALPHA_GRID.iter().map(move |&a| (q, a))).collect()
}

fn increasing_subsets(lo: i64, hi: i64, k: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(lo: i64, hi: i64, k: usize, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for x in lo..=hi {
            cur.push(x);
            rec(x + 1, hi, k, cur, out);
            cur.pop();
        }
    }
    rec(lo, hi, k, &mut cur, &mut out);
    out
}

fn identities(cfg: &SuiteConfig) -> Outcome {
    let t = Instant::now();
    let pol = TruncationPolicy::default();
    let qs: &[f64] = if cfg.quick { &[0.1, 0.5, 0.9] } else { &Q_GRID };
    let mut inputs = Vec::new();
    for &q in qs {
        for z in -5..=5 {
            inputs.push(IdentityInput::Euler { q, z: z as f64 });
        }
        for n in 0..=5 {
            for x in -5..=5 {
                inputs.push(IdentityInput::QBinomial { q, n, x: x as f64 });
            }
        }
        for &alpha in &ALPHA_GRID {
            inputs.push(IdentityInput::Jacobi { q, alpha });
            for x in -5..=5 {
                inputs.push(IdentityInput::LemmaA1 { q, alpha, x });
            }
            for k in 2..=3 {
                for xs in increasing_subsets(-5, 5, k) {
                    inputs.push(IdentityInput::LemmaA2 { q, alpha, xs });
                }
            }
            for x1 in -5..=5 {
                for i in -5..=5 {
                    for k in 2..=5u32 {
                        for b in 1..k {
                            inputs.push(IdentityInput::LemmaA3 { q, alpha, x1, i, b, k });
                        }
                    }
                }
            }
        }
    }
    let errs: Vec<(Identity, f64)> = inputs
        .par_iter()
        .map(|inp| Ok((inp.identity(), verify_identity(inp, &pol)?)))
        .collect::<mallows::Result<_>>()?;
    let mut worst: BTreeMap<Identity, f64> = BTreeMap::new();
    for (id, e) in errs {
        let w = worst.entry(id).or_insert(0.0);
        *w = w.max(e);
    }
    let overall = worst.values().copied().fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass = overall < 1e-10 && worst.len() == 6 && secs < 30.0;
    let mut m: Vec<(&'static str, f64)> = worst.iter().map(|(id, &e)| (id.name(), e)).collect();
    m.push(("evaluations", inputs.len() as f64));
    Ok((pass, format!("{} evaluations, worst relative error {overall:.2e} (< 1e-10, < 30 s)", inputs.len()), m))
}

fn mixture(cfg: &SuiteConfig) -> Outcome {
    let t = Instant::now();
    let pol = TruncationPolicy::default();
    let mut cases = Vec::new();
    for (q, a) in grid(cfg.quick) {
        for k in 1..=3 {
            for v in increasing_subsets(-4, 4, k) {
                cases.push((q, a, v));
            }
        }
    }
    let worst = cases
        .par_iter()
        .map(|(q, a, v)| {
            let p = params(*q, *a);
            let oracle = oracle_mixture_pmf(&p, 0, v, None, &pol)?.log_prob;
            let closed = if v.len() == 1 { pmf_single(&p, 1, v[0]) } else { pmf_neighbors(&p, 0, v)? };
            Ok(rel(closed, oracle))
        })
        .collect::<mallows::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass = worst < 1e-8 && secs < 120.0;
    Ok((
        pass,
        format!("{} cases, worst relative error {worst:.2e} (< 1e-8, < 2 min)", cases.len()),
        vec![("worst_relative_error", worst), ("cases", cases.len() as f64)],
    ))
}

#[derive(Clone, Debug)]
enum MarginalCase {
    Decreasing(Vec<(i64, i64)>),
    TwoSeparated { k: i64, x1: i64, xk: i64 },
    GapOne { x1: i64, x3: i64 },
}

fn marginalization(cfg: &SuiteConfig) -> Outcome {
    let t = Instant::now();
    let pol = TruncationPolicy::with_tol(1e-12)?;
    let mut shapes = Vec::new();
    for s in 1..=6 {
        for (x1, x2) in [(2, -1), (0, -3), (4, 1), (1, 0)] {
            shapes.push(MarginalCase::Decreasing(vec![(0, x1), (s, x2)]));
        }
    }
    shapes.push(MarginalCase::Decreasing(vec![(0, 3), (2, 1), (5, -2)]));
    shapes.push(MarginalCase::Decreasing(vec![(-1, 4), (0, 0), (4, -1)]));
    for k in 2..=7 {
        for (x1, xk) in [(1, -1), (3, 2), (0, -4)] {
            shapes.push(MarginalCase::TwoSeparated { k, x1, xk });
        }
    }
    for x1 in -3..=3 {
        for x3 in x1 + 1..=4 {
            shapes.push(MarginalCase::GapOne { x1, x3 });
        }
    }
    let qs: &[f64] = if cfg.quick { &[0.3, 0.5] } else { &Q_GRID };
    let mut cases = Vec::new();
    for &q in qs {
        for a in ALPHA_GRID {
            cases.extend(shapes.iter().map(|s| (q, a, s.clone())));
        }
    }
    let worst = cases
        .par_iter()
        .map(|(q, a, case)| {
            let p = params(*q, *a);
            let (closed, pairs) = match case {
                MarginalCase::Decreasing(v) => {
                    let pv = PositionValuePairs::new(v.clone())?;
                    (pmf_decreasing(&p, &pv)?, v.clone())
                }
                MarginalCase::TwoSeparated { k, x1, xk } => {
                    (pmf_two_separated(&p, 0, *k, *x1, *xk)?, vec![(1, *x1), (*k, *xk)])
                }
                MarginalCase::GapOne { x1, x3 } => (pmf_gap_one_increasing(&p, *x1, *x3)?, vec![(0, *x1), (2, *x3)]),
            };
            let oracle = oracle_marginalized_pmf(&p, &PositionValuePairs::new(pairs)?, &pol)?.log_prob;
            Ok((closed.prob() - oracle.prob()).abs())
        })
        .collect::<mallows::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass = worst < 1e-9 && secs < 120.0;
    Ok((
        pass,
        format!("{} cases, worst absolute error {worst:.2e} (< 1e-9, < 2 min)", cases.len()),
        vec![("worst_absolute_error", worst), ("cases", cases.len() as f64)],
    ))
}

fn normalizations(_cfg: &SuiteConfig) -> Outcome {
    let pol = TruncationPolicy::default();
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut push = |name: &'static str, dev: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(dev),
        None => worst.push((name, dev)),
    };
    for (q, a) in grid(false) {
        let p = params(q, a);
        let c = p.center();
        // q^400 < 1e-18 at q = 0.9
        let single: f64 = (c - 400..=c + 400).map(|x| pmf_single(&p, 0, x).prob()).sum();
        push("pmf_single", (single - 1.0).abs());
        let z = JacobiNormalizer::new(p.q(), a, &pol)?;
        let cut = z.cutoff(1e-15);
        let w: f64 = (-cut..=cut).map(|c| z.ln_weight(c).exp()).sum();
        push("mixture_weights", (w - 1.0).abs());
        for m in [1u32, 2, 3] {
            let r = 400 / m as i64 + 1;
            let s: f64 = (c / m as i64 - r..=c / m as i64 + r).map(|x| pmf_asepqm(&p, m, x).unwrap().prob()).sum();
            push("pmf_asepqm", (s - 1.0).abs());
        }
    }
    for q in [0.1, 0.3, 0.5, 0.7] {
        let qq = QParam::new(q)?;
        let s: f64 = (-200..=200)
            .map(|d| go_pmf_displacement(qq, 0, d, &pol).map(|v| v.prob()))
            .sum::<mallows::Result<f64>>()?;
        push("go_pmf_displacement", (s - 1.0).abs());
    }
    for (q, a) in [(0.3, 1.0), (0.5, 1.7), (0.5, 0.25), (0.7, 4.0)] {
        let p = params(q, a);
        let r = 120;
        let mut s = 0.0;
        for x1 in -r..=r {
            for x2 in x1 + 1..=r {
                s += pmf_dsecond(&p, &[x1, x2], Convention::Oracle)?.prob();
            }
        }
        push("pmf_dsecond", (s - 1.0).abs());
    }
    let overall = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    Ok((overall < 1e-8, format!("worst deviation from 1 is {overall:.2e} over 5 laws (< 1e-8)"), worst))
}

fn reversibility(_cfg: &SuiteConfig) -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut rows = 0.0f64;
    for n in 2..=5 {
        for q in [0.1, 0.5, 0.9] {
            let r = exact_reversibility_check(n, QParam::new(q)?)?;
            worst = worst.max(r.detailed_balance);
            rows = rows.max(r.row_sum);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-12 && rows <= 1e-12 && secs < 10.0,
        format!("detailed-balance residual {worst:.2e}, row sums {rows:.2e} (<= 1e-12, < 10 s)"),
        vec![("detailed_balance", worst), ("row_sum", rows)],
    ))
}

fn sampler(cfg: &SuiteConfig) -> Outcome {
    let tol = 1e-10;
    let pol = TruncationPolicy::with_tol(tol)?;
    let mut worst = 0.0f64;
    for q in [0.3, 0.5] {
        for a in ALPHA_GRID {
            let p = params(q, a);
            for k in 1..=3 {
                let (law, _) = sampler_law(&p, 0, k, &pol)?;
                let mut diff = 0.0;
                let mut covered = 0.0;
                for (v, ln) in law.iter() {
                    let pr = ln.exp();
                    let e = pmf_neighbors(&p, -1, v)?.prob();
                    diff += (pr - e).abs();
                    covered += e;
                }
                worst = worst.max(0.5 * (diff + (1.0 - covered).max(0.0)));
            }
        }
    }
    let p = params(0.5, 1.7);
    let draws = sample_many(&p, 0, 2, 100_000, cfg.seed ^ 6, &pol)?;
    let windows: Vec<_> = draws.into_iter().map(|s| s.window).collect();
    let emp = empirical_distribution(&windows, &[0, 1])?;
    let exact = Pmf::from_fn(
        (-40..=40).flat_map(|a| (-40..=40).filter(move |&b| b != a).map(move |b| vec![a, b])),
        |v| pmf_neighbors(&p, -1, v).unwrap().ln(),
    );
    let gof = chi_square_gof(&emp, &exact, 5.0)?;
    let pass = worst <= 3.0 * tol && gof.p_value > 0.001;
    Ok((
        pass,
        format!("worst TV {worst:.2e} (<= 3e-10), chi-square p = {:.3} on {} bins (> 0.001)", gof.p_value, gof.dof + 1),
        vec![("worst_tv", worst), ("chi_square_p", gof.p_value), ("chi_square_statistic", gof.statistic)],
    ))
}

fn asep_stationarity(cfg: &SuiteConfig) -> Outcome {
    let t = Instant::now();
    let pol = TruncationPolicy::default();
    let p = params(0.5, 1.0);
    let coords = [0i64, 2];
    let marg = run_stationary(&p, 10, 10.0, 10_000, cfg.seed ^ 7, &coords, &pol)?;
    let mut stat = 0.0f64;
    for (c, e) in coords.iter().zip(&marg) {
        let pm = Pmf::from_fn(c - 60..=c + 60, |&x| pmf_single(&p, *c, x).ln());
        stat = stat.max(tv_distance(e, &pm));
    }
    let m0 = Pmf::from_fn(-60..=60i64, |&d| go_pmf_displacement(p.q(), 0, d, &pol).unwrap().ln());
    let mp = Pmf::from_fn(-60..=60i64, |&x| pmf_single(&p, 0, x).ln());
    let mut tv = Vec::new();
    for time in [3.0, 30.0] {
        let e = run_step_convergence(&p, 20, time, 10_000, cfg.seed ^ 77, &[0])?.map(|v| v[0]);
        tv.push((tv_distance(&e, &m0), tv_distance(&e, &mp)));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = stat <= 0.02 && tv[1].0 < tv[0].0 && tv[1].1 < tv[0].1 && tv[1].0 <= 0.02 && secs < 300.0;
    Ok((
        pass,
        format!(
            "stationary TV {stat:.4} (<= 0.02); step start TV to M_0 {:.4} -> {:.4}, to M^p {:.4} -> {:.4} (t = 3 -> 30)",
            tv[0].0, tv[1].0, tv[0].1, tv[1].1
        ),
        vec![
            ("stationary_tv", stat),
            ("step_tv_m0_t3", tv[0].0),
            ("step_tv_m0_t30", tv[1].0),
            ("step_tv_mp_t3", tv[0].1),
            ("step_tv_mp_t30", tv[1].1),
        ],
    ))
}

fn second_class(cfg: &SuiteConfig) -> Outcome {
    let pol = TruncationPolicy::default();
    let p = params(0.5, 1.0);
    let rep = estimate_second_class_rates(&p, 20, 1000.0, 100, (-2, 2), cfg.seed ^ 8, &pol)?;
    let mut worst_z = 0.0f64;
    for e in &rep.estimates {
        let truth = second_class_rate(&p, e.x, e.direction, Convention::Oracle)?;
        worst_z = worst_z.max((e.rate - truth).abs() / e.stderr);
    }
    let mut worst_db = 0.0f64;
    for a in [1.0, 1.7, 0.25] {
        let p = params(0.5, a);
        for x in -10..=10 {
            let l = second_class_position_pmf(&p, x, Convention::Oracle).ln() + second_class_rate(&p, x, 1, Convention::Oracle)?.ln();
            let r = second_class_position_pmf(&p, x + 1, Convention::Oracle).ln()
                + second_class_rate(&p, x + 1, -1, Convention::Oracle)?.ln();
            worst_db = worst_db.max((l - r).abs());
        }
    }
    Ok((
        worst_z <= 3.0 && worst_db <= 1e-12,
        format!("worst |z| {worst_z:.2} over x in [-2, 2] (<= 3), log detailed balance {worst_db:.1e} (<= 1e-12)"),
        vec![("worst_z", worst_z), ("detailed_balance_log", worst_db)],
    ))
}

fn dsecond(_cfg: &SuiteConfig) -> Outcome {
    let pol = TruncationPolicy::with_tol(1e-13)?;
    let p = params(0.5, 1.7);
    let mut err = [0.0f64; 2];
    for x1 in -2..=2 {
        for x2 in x1 + 1..=x1 + 4 {
            let a = oracle_marginalized_pmf(&p, &PositionValuePairs::new(vec![(x1, 1), (x2, 2)])?, &pol)?;
            let b = oracle_marginalized_pmf(&p, &PositionValuePairs::new(vec![(x1, 2), (x2, 1)])?, &pol)?;
            let truth = a.log_prob.prob() + b.log_prob.prob();
            for (j, conv) in [Convention::Oracle, Convention::Literal].into_iter().enumerate() {
                let v = pmf_dsecond(&p, &[x1, x2], conv)?.prob();
                err[j] = err[j].max((v - truth).abs() / truth);
            }
        }
    }
    let matches: Vec<Convention> = [Convention::Oracle, Convention::Literal]
        .into_iter()
        .zip(err)
        .filter(|(_, e)| *e < 1e-8)
        .map(|(c, _)| c)
        .collect();
    let pinned = pmf_dsecond(&p, &[0, 1], PINNED_DSECOND)?.prob();
    let pass = matches == [PINNED_DSECOND] && (pinned - PINNED_DSECOND_VALUE).abs() < 1e-11;
    Ok((
        pass,
        format!(
            "relative error oracle {:.1e}, literal {:.1e}; matching convention {:?} (pinned {:?}), value at [0,1] {pinned:.12}",
            err[0], err[1], matches, PINNED_DSECOND
        ),
        vec![("oracle_convention_error", err[0]), ("literal_convention_error", err[1]), ("pinned_value", pinned)],
    ))
}

fn shift_invariance(cfg: &SuiteConfig) -> Outcome {
    let vp = VertexParams::new(0.5, 0.25)?;
    let sd = example_support_data();
    let sup = sd.supports();
    let supports_ok = sup[0].0 == [1, 2, 5, 6].into_iter().collect() && sup[1].0 == [5].into_iter().collect();
    let example = verify_shift_invariance(&sd, &vp, &sd.minimal_domain()?, VerifyMode::Exact)?.deviation;
    let mut rng = seeded_rng(cfg.seed ^ 10, 0);
    let mut random = 0.0f64;
    let mut s_agree = true;
    for j in 0..20 {
        let inst = random_support_instance(&mut rng, 2 + j % 2);
        s_agree &= check_support_condition(&inst.with_shift(7)?).holds == check_support_condition(&inst).holds;
        let vp = VertexParams::new(0.2 + 0.03 * j as f64, 0.6 - 0.02 * j as f64)?;
        random = random.max(verify_shift_invariance(&inst, &vp, &inst.minimal_domain()?, VerifyMode::Exact)?.deviation);
    }
    let mc = verify_shift_invariance(
        &sd,
        &vp,
        &RectDomain::new(9, 4)?,
        VerifyMode::MonteCarlo { replicas: 10_000, seed: cfg.seed ^ 1010, permutations: 200 },
    )?;
    let pass = supports_ok && s_agree && example <= 1e-12 && random <= 1e-12 && mc.deviation <= 0.03;
    Ok((
        pass,
        format!(
            "example {example:.1e}, 20 random instances {random:.1e} (<= 1e-12); Monte Carlo TV {:.4} (<= 0.03, p = {:.2}); supports {}",
            mc.deviation,
            mc.p_value.unwrap_or(f64::NAN),
            if supports_ok { "{1,2,5,6} and {5}" } else { "wrong" }
        ),
        vec![
            ("example_deviation", example),
            ("random_deviation", random),
            ("monte_carlo_tv", mc.deviation),
            ("monte_carlo_p", mc.p_value.unwrap_or(f64::NAN)),
        ],
    ))
}

fn asep_limit(cfg: &SuiteConfig) -> Outcome {
    let t = Instant::now();
    let (q, time) = (0.5, 2.0);
    let p = params(q, 1.0);
    let queries = [(0i64, 0i64), (1, -1), (-1, 1)];
    let cuts: Vec<CutQuery> = queries.iter().map(|&(n, m)| CutQuery::new(n, m)).collect();
    let asep = step_height_law(&p, 20, time, &queries, 100_000, cfg.seed ^ 11)?;
    let mut tvs = Vec::new();
    for eps in [0.2, 0.1, 0.05] {
        let sv = asep_limit_height_law(q, eps, time, 8, &cuts, 20_000, cfg.seed ^ 1111)?;
        tvs.push(tv_distance(&sv, &asep));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = tvs[0] > tvs[1] && tvs[1] > tvs[2] && tvs[2] <= 0.03 && secs < 300.0;
    Ok((
        pass,
        format!("TV {:.4} -> {:.4} -> {:.4} at eps = 0.2, 0.1, 0.05 (decreasing, final <= 0.03)", tvs[0], tvs[1], tvs[2]),
        vec![("tv_eps_0.2", tvs[0]), ("tv_eps_0.1", tvs[1]), ("tv_eps_0.05", tvs[2])],
    ))
}

fn asepqm(cfg: &SuiteConfig) -> Outcome {
    let pol = TruncationPolicy::default();
    let p = params(0.5, 1.0);
    let rep = run_asepqm(&p, 2, 10, 400.0, 80.0, 8000, cfg.seed ^ 12, &pol)?;
    let law = Pmf::from_fn(-40..=40, |&x| pmf_asepqm(&p, 2, x).unwrap().ln());
    let tv = tv_distance(&rep.occupancy, &law);
    let mut worst = 0.0f64;
    for (q, a) in grid(false) {
        let p = params(q, a);
        for m in 1..=4 {
            for x in -20..=20 {
                let c = pmf_asepqm(&p, m, x)?;
                let s = asepqm_block_sum(&p, m, x)?;
                worst = worst.max((c.prob() - s.prob()).abs());
            }
        }
    }
    Ok((
        tv <= 0.02 && worst <= 1e-13,
        format!("M = 2 site law TV {tv:.4} (<= 0.02); closed form vs block sum {worst:.1e} (<= 1e-13)"),
        vec![("site_law_tv", tv), ("block_sum_error", worst)],
    ))
}

fn asymptotics(_cfg: &SuiteConfig) -> Outcome {
    let ys: Vec<f64> = (-30..=30).map(|j| j as f64 / 10.0).collect();
    let rows = asymptotic_check(1e-3, 1.0, &ys, 3)?;
    let peak = rows.iter().map(|r| r.logistic).fold(0.0, f64::max);
    let pmf = rows.iter().map(|r| (r.scaled_pmf - r.logistic).abs()).fold(0.0, f64::max) / peak;
    let cdf = rows.iter().map(|r| (r.scaled_cdf - r.cdf_reference).abs()).fold(0.0, f64::max);
    let rate = rows
        .iter()
        .map(|r| (r.rate_oracle / r.rate_literal_reference - 1.0).abs().max((r.rate_literal / r.rate_literal_reference - 1.0).abs()))
        .fold(0.0, f64::max);
    Ok((
        pmf <= 1e-2 && cdf <= 1e-2 && rate <= 1e-2,
        format!("pmf {pmf:.1e} of peak, CDF products {cdf:.1e}, rates {rate:.1e} relative (all <= 1e-2)"),
        vec![("pmf_over_peak", pmf), ("cdf", cdf), ("rate_relative", rate)],
    ))
}
