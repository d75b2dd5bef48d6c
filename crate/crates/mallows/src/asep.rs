//! Continuous-time multi-species ASEP on a finite window, and the fused
//! ASEP(q,M) with one second-class particle.
//!
//! The window `[lo, hi]` is closed: no label crosses its ends, and outside it
//! the permutation is frozen at `omega(a) = a + offset`. A bond whose labels
//! are out of increasing order is sorted at rate 1, a bond in increasing order
//! is reversed at rate `q`. Because the joint law of a window under the
//! product measure is proportional to `q^inv` given its set of values, a
//! window drawn by [`crate::sampler::sample_window`] is exactly stationary
//! for this closed dynamics, for every `alpha`. The offset only matters for
//! height functions.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logmath::inversions;
use crate::measures::MallowsParams;
use crate::qseries::QParam;
use crate::sampler::{sample_window, seeded_rng, WindowAssignment};
use crate::qseries::TruncationPolicy;
use crate::stats::{rate_ci, EmpiricalDist, Pmf, TimeWeighted};

/// Whether labels are permutation values or class labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Distinct values of the permutation.
    Raw,
    /// Class labels after a monotone projection; repeats allowed.
    Projected,
}

/// Configuration of the window `[lo, lo + len - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsepWindowState {
    lo: i64,
    labels: Vec<i64>,
    mode: LabelMode,
    /// Outside the window `omega(a) = a + exterior_offset` (raw mode only).
    exterior_offset: i64,
    clock: f64,
}

impl AsepWindowState {
    /// Raw state with values `values` on `[lo, lo + len - 1]`.
    pub fn raw(lo: i64, values: Vec<i64>, exterior_offset: i64) -> Result<AsepWindowState> {
        let w = WindowAssignment::new(lo, values)?;
        Ok(AsepWindowState { lo, labels: w.values, mode: LabelMode::Raw, exterior_offset, clock: 0.0 })
    }

    /// `omega(a) = a` on `[-l, l]`.
    pub fn identity(l: i64) -> AsepWindowState {
        AsepWindowState { lo: -l, labels: (-l..=l).collect(), mode: LabelMode::Raw, exterior_offset: 0, clock: 0.0 }
    }

    pub fn projected(lo: i64, labels: Vec<i64>) -> Result<AsepWindowState> {
        if labels.is_empty() {
            return Err(Error::Invalid("empty window".into()));
        }
        Ok(AsepWindowState { lo, labels, mode: LabelMode::Projected, exterior_offset: 0, clock: 0.0 })
    }

    /// Projects labels through `phi`, which should be weakly increasing.
    pub fn project(&self, phi: impl Fn(i64) -> i64) -> AsepWindowState {
        AsepWindowState {
            lo: self.lo,
            labels: self.labels.iter().map(|&x| phi(x)).collect(),
            mode: LabelMode::Projected,
            exterior_offset: 0,
            clock: self.clock,
        }
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.labels.len() as i64 - 1
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn exterior_offset(&self) -> i64 {
        self.exterior_offset
    }

    /// Label at position `i`; outside the window the frozen exterior.
    pub fn label_at(&self, i: i64) -> i64 {
        if i < self.lo || i > self.hi() {
            i + self.exterior_offset
        } else {
            self.labels[(i - self.lo) as usize]
        }
    }

    /// First position in the window holding `label`.
    pub fn position_of(&self, label: i64) -> Option<i64> {
        self.labels.iter().position(|&x| x == label).map(|j| self.lo + j as i64)
    }
}

/// Whether a jump sorted its bond or reversed it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpKind {
    /// Rate 1: the pair becomes increasing.
    Sorting,
    /// Rate q: the pair becomes decreasing.
    AntiSorting,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    /// Left site `y` of the bond `(y, y+1)`.
    pub bond: i64,
    pub kind: JumpKind,
}

/// Callbacks during a simulation. `hold` is called with the state and the
/// length of each sojourn, `jump` with the state right after each event.
pub trait Observer {
    fn hold(&mut self, _state: &AsepWindowState, _dt: f64) {}
    fn jump(&mut self, _state: &AsepWindowState, _event: &JumpEvent) {}
}

impl Observer for () {}

/// Records every event.
#[derive(Clone, Debug, Default)]
pub struct Trace(pub Vec<JumpEvent>);

impl Observer for Trace {
    fn jump(&mut self, _state: &AsepWindowState, event: &JumpEvent) {
        self.0.push(*event);
    }
}

/// Set of bond indices with O(1) insert, remove and uniform choice.
struct IndexSet {
    items: Vec<usize>,
    slot: Vec<usize>,
}

impl IndexSet {
    const ABSENT: usize = usize::MAX;

    fn new(n: usize) -> IndexSet {
        IndexSet { items: Vec::with_capacity(n), slot: vec![Self::ABSENT; n] }
    }

    fn insert(&mut self, b: usize) {
        if self.slot[b] == Self::ABSENT {
            self.slot[b] = self.items.len();
            self.items.push(b);
        }
    }

    fn remove(&mut self, b: usize) {
        let s = self.slot[b];
        if s != Self::ABSENT {
            let last = *self.items.last().unwrap();
            self.items.swap_remove(s);
            if last != b {
                self.slot[last] = s;
            }
            self.slot[b] = Self::ABSENT;
        }
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

/// Runs the dynamics until `state.clock()` reaches `t_max`, reporting to
/// `obs`. Events are generated exactly: exponential waiting times at the total
/// rate, then a bond chosen in proportion to its rate.
pub fn simulate_observed<R: Rng + ?Sized, O: Observer>(
    state: &mut AsepWindowState,
    q: QParam,
    t_max: f64,
    rng: &mut R,
    obs: &mut O,
) {
    let n = state.labels.len();
    if n < 2 || state.clock >= t_max {
        if state.clock < t_max {
            obs.hold(state, t_max - state.clock);
            state.clock = t_max;
        }
        return;
    }
    let q = q.value();
    let nb = n - 1;
    let mut down = IndexSet::new(nb);
    let mut up = IndexSet::new(nb);
    let classify = |labels: &[i64], b: usize, down: &mut IndexSet, up: &mut IndexSet| {
        down.remove(b);
        up.remove(b);
        match labels[b].cmp(&labels[b + 1]) {
            std::cmp::Ordering::Greater => down.insert(b),
            std::cmp::Ordering::Less => up.insert(b),
            std::cmp::Ordering::Equal => {}
        }
    };
    for b in 0..nb {
        classify(&state.labels, b, &mut down, &mut up);
    }
    loop {
        let total = down.len() as f64 + q * up.len() as f64;
        let remaining = t_max - state.clock;
        if total <= 0.0 {
            obs.hold(state, remaining);
            state.clock = t_max;
            return;
        }
        let dt = -(1.0 - rng.gen::<f64>()).ln() / total;
        if dt >= remaining {
            obs.hold(state, remaining);
            state.clock = t_max;
            return;
        }
        obs.hold(state, dt);
        state.clock += dt;
        let u = rng.gen::<f64>() * total;
        let (b, kind) = if u < down.len() as f64 {
            (down.items[(u as usize).min(down.len() - 1)], JumpKind::Sorting)
        } else {
            let j = ((u - down.len() as f64) / q) as usize;
            (up.items[j.min(up.len() - 1)], JumpKind::AntiSorting)
        };
        state.labels.swap(b, b + 1);
        for c in b.saturating_sub(1)..=(b + 1).min(nb - 1) {
            classify(&state.labels, c, &mut down, &mut up);
        }
        let ev = JumpEvent { time: state.clock, bond: state.lo + b as i64, kind };
        obs.jump(state, &ev);
    }
}

/// Runs to `t_max` and returns the final state with the list of events.
pub fn simulate<R: Rng + ?Sized>(
    state: &AsepWindowState,
    p: &MallowsParams,
    t_max: f64,
    rng: &mut R,
) -> (AsepWindowState, Vec<JumpEvent>) {
    let mut s = state.clone();
    let mut trace = Trace::default();
    simulate_observed(&mut s, p.q(), t_max, rng, &mut trace);
    (s, trace.0)
}

/// Discrete-time approximation: in each step of length `dt` one bond is
/// chosen uniformly and flipped with probability `rate * bonds * dt`, i.e. the
/// chain `I + dt Q`.
pub fn simulate_discretized<R: Rng + ?Sized>(
    state: &AsepWindowState,
    q: QParam,
    t_max: f64,
    dt: f64,
    rng: &mut R,
) -> Result<AsepWindowState> {
    let mut s = state.clone();
    let n = s.labels.len();
    if n < 2 {
        return Ok(s);
    }
    let nb = (n - 1) as f64;
    if !(dt > 0.0 && nb * dt <= 1.0) {
        return Err(Error::Parameter(format!("dt must lie in (0, 1/{nb}], got {dt}")));
    }
    let steps = ((t_max - s.clock) / dt).round().max(0.0) as u64;
    for _ in 0..steps {
        let b = rng.gen_range(0..n - 1);
        let rate = match s.labels[b].cmp(&s.labels[b + 1]) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => q.value(),
            std::cmp::Ordering::Equal => 0.0,
        };
        if rng.gen::<f64>() < rate * nb * dt {
            s.labels.swap(b, b + 1);
        }
    }
    s.clock += steps as f64 * dt;
    Ok(s)
}

/// Largest number of states [`exact_transient_law`] will enumerate.
pub const MAX_EXACT_STATES: usize = 400_000;

/// Exact law of the labels at time `t` by uniformization over the states
/// reachable from `state`.
pub fn exact_transient_law(state: &AsepWindowState, q: QParam, t: f64) -> Result<Pmf<Vec<i64>>> {
    let n = state.labels.len();
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut states = vec![state.labels.clone()];
    index.insert(state.labels.clone(), 0);
    // transitions as (target, rate) per state
    let mut out: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut head = 0;
    while head < states.len() {
        let s = states[head].clone();
        let mut row = Vec::new();
        for b in 0..n.saturating_sub(1) {
            let rate = match s[b].cmp(&s[b + 1]) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Less => q.value(),
                std::cmp::Ordering::Equal => continue,
            };
            if rate == 0.0 {
                continue;
            }
            let mut t2 = s.clone();
            t2.swap(b, b + 1);
            let j = match index.get(&t2) {
                Some(&j) => j,
                None => {
                    if states.len() >= MAX_EXACT_STATES {
                        return Err(Error::TooLarge(format!("more than {MAX_EXACT_STATES} states")));
                    }
                    states.push(t2.clone());
                    index.insert(t2, states.len() - 1);
                    states.len() - 1
                }
            };
            row.push((j, rate));
        }
        out.push(row);
        head += 1;
    }
    let lambda = out.iter().map(|r| r.iter().map(|x| x.1).sum::<f64>()).fold(0.0, f64::max).max(1e-300);
    let mut v = vec![0.0; states.len()];
    v[0] = 1.0;
    let mut acc = vec![0.0; states.len()];
    let lt = lambda * t;
    // Poisson(lt) weights, accumulated until the remaining mass is negligible
    let mut w = (-lt).exp();
    let mut used = 0.0;
    let mut k = 0u64;
    loop {
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += w * x;
        }
        used += w;
        if 1.0 - used < 1e-14 || (k as f64 > lt + 50.0 * (lt.sqrt() + 1.0)) {
            break;
        }
        let mut next = vec![0.0; states.len()];
        for (i, row) in out.iter().enumerate() {
            if v[i] == 0.0 {
                continue;
            }
            let mut stay = 1.0;
            for &(j, r) in row {
                next[j] += v[i] * r / lambda;
                stay -= r / lambda;
            }
            next[i] += v[i] * stay;
        }
        v = next;
        k += 1;
        w *= lt / k as f64;
    }
    let mut pmf = Pmf::new();
    for (s, &a) in states.into_iter().zip(&acc) {
        if a > 0.0 {
            pmf.insert(s, a / used);
        }
    }
    Ok(pmf)
}

/// Residuals of the exact check on `n` labels with a closed boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversibilityReport {
    /// `max |pi(s) r(s->s') - pi(s') r(s'->s)|`.
    pub detailed_balance: f64,
    /// `max |sum_s' Q(s, s')|` over rows of the generator.
    pub row_sum: f64,
}

/// Builds the generator on all permutations of `n` labels and checks
/// detailed balance against `pi ~ q^inv`.
pub fn exact_reversibility_check(n: usize, q: QParam) -> Result<ReversibilityReport> {
    if !(2..=8).contains(&n) {
        return Err(Error::Parameter(format!("n must lie in [2, 8], got {n}")));
    }
    let mut perms = Vec::new();
    let mut cur: Vec<i64> = (0..n as i64).collect();
    heap_permutations(&mut cur, n, &mut perms);
    let index: HashMap<Vec<i64>, usize> = perms.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    let qv = q.value();
    let weight: Vec<f64> = perms.iter().map(|p| qv.powi(inversions(p) as i32)).collect();
    let z: f64 = weight.iter().sum();
    let rate = |s: &[i64], b: usize| if s[b] > s[b + 1] { 1.0 } else { qv };
    let mut db = 0.0f64;
    let mut rows = 0.0f64;
    for (i, s) in perms.iter().enumerate() {
        let mut diag = 0.0;
        let mut off = 0.0;
        for b in 0..n - 1 {
            let r = rate(s, b);
            let mut t = s.clone();
            t.swap(b, b + 1);
            let j = index[&t];
            let back = rate(&t, b);
            db = db.max((weight[i] / z * r - weight[j] / z * back).abs());
            off += r;
            diag -= r;
        }
        rows = rows.max((off + diag).abs());
    }
    Ok(ReversibilityReport { detailed_balance: db, row_sum: rows })
}

fn heap_permutations(v: &mut Vec<i64>, k: usize, out: &mut Vec<Vec<i64>>) {
    if k <= 1 {
        out.push(v.clone());
        return;
    }
    for i in 0..k {
        heap_permutations(v, k - 1, out);
        if k % 2 == 0 {
            v.swap(i, k - 1);
        } else {
            v.swap(0, k - 1);
        }
    }
}

/// Starts every replica from `omega = id` on `[-l, l]`, runs to `t`, and
/// histograms the values at the positions `coords`.
pub fn run_step_convergence(
    p: &MallowsParams,
    l: i64,
    t: f64,
    replicas: usize,
    seed: u64,
    coords: &[i64],
) -> Result<EmpiricalDist<Vec<i64>>> {
    if let Some(&c) = coords.iter().find(|&&c| 2 * c.abs() > l) {
        return Err(Error::Invalid(format!("coordinate {c} outside [-L/2, L/2]")));
    }
    let init = AsepWindowState::identity(l);
    let hist = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut s = init.clone();
            simulate_observed(&mut s, p.q(), t, &mut seeded_rng(seed, r as u64), &mut ());
            coords.iter().map(|&c| s.label_at(c)).collect::<Vec<i64>>()
        })
        .collect::<Vec<_>>();
    Ok(hist.into_iter().collect())
}

/// Draws the window `[-l, l]` from the product measure. The exterior offset
/// is set to the center of the single-point law so that heights stay finite
/// and small for `alpha != 1`.
pub fn stationary_window<R: Rng + ?Sized>(
    p: &MallowsParams,
    l: i64,
    rng: &mut R,
    policy: &TruncationPolicy,
) -> Result<AsepWindowState> {
    let w = sample_window(p, -l, (2 * l + 1) as usize, rng, policy)?.window;
    AsepWindowState::raw(-l, w.values, p.center())
}

/// Runs replicas from the stationary window to time `t` and histograms the
/// value at each position in `coords`.
pub fn run_stationary(
    p: &MallowsParams,
    l: i64,
    t: f64,
    replicas: usize,
    seed: u64,
    coords: &[i64],
    policy: &TruncationPolicy,
) -> Result<Vec<EmpiricalDist<i64>>> {
    let finals: Vec<Vec<i64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeded_rng(seed, r as u64);
            let mut s = stationary_window(p, l, &mut rng, policy)?;
            simulate_observed(&mut s, p.q(), t, &mut rng, &mut ());
            Ok(coords.iter().map(|&c| s.label_at(c)).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..coords.len()).map(|j| finals.iter().map(|v| v[j]).collect()).collect())
}

/// Estimated jump rate of the tagged particle. `stderr` is the larger of the
/// Poisson error `rate / sqrt(jumps)` and the ratio-estimator error across
/// replicas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub x: i64,
    pub direction: i8,
    pub jumps: u64,
    pub occupation_time: f64,
    pub rate: f64,
    pub stderr: f64,
}

/// Rate estimates together with the time-averaged position of the tagged
/// particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondClassReport {
    pub estimates: Vec<RateEstimate>,
    pub occupancy: TimeWeighted<i64>,
}

#[derive(Default)]
struct TagStats {
    pos: i64,
    occupancy: TimeWeighted<i64>,
    jumps: HashMap<(i64, i8), u64>,
}

impl Observer for TagStats {
    fn hold(&mut self, _state: &AsepWindowState, dt: f64) {
        self.occupancy.add(self.pos, dt);
    }

    fn jump(&mut self, _state: &AsepWindowState, ev: &JumpEvent) {
        if ev.bond == self.pos {
            *self.jumps.entry((self.pos, 1)).or_insert(0) += 1;
            self.pos += 1;
        } else if ev.bond + 1 == self.pos {
            *self.jumps.entry((self.pos, -1)).or_insert(0) += 1;
            self.pos -= 1;
        }
    }
}

/// Projects stationary windows to holes (`< 0`), one second-class particle
/// (`0`) and first-class particles (`> 0`), runs each replica to `t_max` and
/// estimates the jump rates of the second-class particle at `x_range` by
/// jumps over occupation time. Replicas whose window does not contain the
/// value 0 are redrawn; the event is invariant under the closed dynamics.
pub fn estimate_second_class_rates(
    p: &MallowsParams,
    l: i64,
    t_max: f64,
    replicas: usize,
    x_range: (i64, i64),
    seed: u64,
    policy: &TruncationPolicy,
) -> Result<SecondClassReport> {
    if 2 * x_range.0.abs() > l || 2 * x_range.1.abs() > l || x_range.0 > x_range.1 {
        return Err(Error::Invalid("x_range must lie inside [-L/2, L/2]".into()));
    }
    let runs: Vec<TagStats> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut attempt = 0u64;
            loop {
                let mut rng = seeded_rng(seed, ((attempt) << 32) | r as u64);
                let raw = stationary_window(p, l, &mut rng, policy)?;
                let Some(x0) = raw.position_of(0) else {
                    attempt += 1;
                    continue;
                };
                let mut s = raw.project(|v| v.signum() + 1);
                let mut tag = TagStats { pos: x0, ..Default::default() };
                simulate_observed(&mut s, p.q(), t_max, &mut rng, &mut tag);
                return Ok(tag);
            }
        })
        .collect::<Result<_>>()?;
    let mut occupancy = TimeWeighted::new();
    let mut jumps: HashMap<(i64, i8), u64> = HashMap::new();
    for r in &runs {
        occupancy.merge(&r.occupancy);
        for (&k, &c) in &r.jumps {
            *jumps.entry(k).or_insert(0) += c;
        }
    }
    let mut estimates = Vec::new();
    for x in x_range.0..=x_range.1 {
        let occ = occupancy.time(&x);
        if occ <= 0.0 {
            return Err(Error::Insufficient { x });
        }
        for dir in [1i8, -1] {
            let j = jumps.get(&(x, dir)).copied().unwrap_or(0);
            let ci = rate_ci(j, occ, 0.95)?;
            // successive jumps share an environment, so the Poisson error is
            // too small; the replicas are independent, use their spread too
            let n = runs.len() as f64;
            let mean_occ = occ / n;
            let ss: f64 = runs
                .iter()
                .map(|r| {
                    let jr = r.jumps.get(&(x, dir)).copied().unwrap_or(0) as f64;
                    ((jr - ci.rate * r.occupancy.time(&x)) / mean_occ).powi(2)
                })
                .sum();
            let replica_se = if n > 1.0 { (ss / (n * (n - 1.0))).sqrt() } else { f64::INFINITY };
            estimates.push(RateEstimate {
                x,
                direction: dir,
                jumps: j,
                occupation_time: occ,
                rate: ci.rate,
                stderr: ci.stderr.max(replica_se),
            });
        }
    }
    Ok(SecondClassReport { estimates, occupancy })
}

/// `#{a > pos + 1/2 : omega(a) < value + 1/2}`, i.e. values at most `value`
/// strictly right of `pos`. Finite because the exterior is frozen.
pub fn height_function(state: &AsepWindowState, value: i64, pos: i64) -> Result<u64> {
    if state.mode != LabelMode::Raw {
        return Err(Error::Invalid("height functions need raw labels".into()));
    }
    let (lo, hi, off) = (state.lo, state.hi(), state.exterior_offset);
    let mut h = 0i64;
    for a in (pos + 1).max(lo)..=hi {
        if state.labels[(a - lo) as usize] <= value {
            h += 1;
        }
    }
    // exterior right: a in [max(pos+1, hi+1), value - off]
    h += (value - off - (pos + 1).max(hi + 1) + 1).max(0);
    // exterior left: a in [pos+1, min(lo-1, value - off)]
    h += ((lo - 1).min(value - off) - (pos + 1) + 1).max(0);
    Ok(h as u64)
}

/// Joint law of heights at `queries = [(value, pos), ...]` at time `t` from
/// `omega = id` on `[-l, l]`.
pub fn step_height_law(
    p: &MallowsParams,
    l: i64,
    t: f64,
    queries: &[(i64, i64)],
    replicas: usize,
    seed: u64,
) -> Result<EmpiricalDist<Vec<u64>>> {
    let init = AsepWindowState::identity(l);
    let rows: Vec<Vec<u64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut s = init.clone();
            simulate_observed(&mut s, p.q(), t, &mut seeded_rng(seed, r as u64), &mut ());
            queries.iter().map(|&(v, x)| height_function(&s, v, x)).collect::<Result<Vec<u64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().collect())
}

/// Occupation of one site of ASEP(q,M): first-class count and whether the
/// second-class particle is there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QMSite {
    pub first: u32,
    pub second: bool,
}

/// ASEP(q,M) on sites `[lo, lo + len - 1]` with a closed boundary and exactly
/// one second-class particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsepQMState {
    pub m: u32,
    pub lo: i64,
    pub sites: Vec<QMSite>,
    pub clock: f64,
}

impl AsepQMState {
    pub fn new(m: u32, lo: i64, sites: Vec<QMSite>) -> Result<AsepQMState> {
        if m == 0 {
            return Err(Error::Parameter("M must be at least 1".into()));
        }
        let s = AsepQMState { m, lo, sites, clock: 0.0 };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.sites.iter().any(|s| s.first + s.second as u32 > self.m) {
            return Err(Error::Invalid("site capacity exceeded".into()));
        }
        if self.sites.iter().filter(|s| s.second).count() != 1 {
            return Err(Error::Invalid("need exactly one second-class particle".into()));
        }
        Ok(())
    }

    /// Site of the second-class particle.
    pub fn second_site(&self) -> i64 {
        self.lo + self.sites.iter().position(|s| s.second).expect("one second-class particle") as i64
    }

    /// Groups positions `xM+1, ..., xM+M` of a raw window into site `x`:
    /// values `> 0` are first class, `0` is the second-class particle and
    /// values `< 0` are holes. The window must cover whole sites.
    pub fn from_raw(window: &AsepWindowState, m: u32) -> Result<AsepQMState> {
        let mm = m as i64;
        if (window.lo() - 1).rem_euclid(mm) != 0 || window.labels().len() as i64 % mm != 0 {
            return Err(Error::Invalid("window does not cover whole sites".into()));
        }
        let lo = (window.lo() - 1).div_euclid(mm);
        let sites = window
            .labels()
            .chunks(m as usize)
            .map(|c| QMSite { first: c.iter().filter(|&&v| v > 0).count() as u32, second: c.contains(&0) })
            .collect();
        AsepQMState::new(m, lo, sites)
    }
}

/// All transitions out of the adjacent pair `(left, right)` with their rates.
/// Pairs with the second-class particle use the eight-line table, the others
/// the one-species ASEP(q,M) hops.
pub fn asepqm_pair_rates(q: f64, m: u32, left: QMSite, right: QMSite) -> Vec<(QMSite, QMSite, f64)> {
    let mm = m as i32;
    let qp = |e: i32| q.powi(e);
    let dd = (1.0 - qp(mm)).powi(2);
    let (n1, n2) = (left.first as i32, right.first as i32);
    let site = |first: i32, second: bool| QMSite { first: first.max(0) as u32, second };
    let mut out = Vec::with_capacity(4);
    let mut push = |l: QMSite, r: QMSite, rate: f64, ok: bool| {
        if ok && rate > 0.0 {
            out.push((l, r, rate));
        }
    };
    match (left.second, right.second) {
        (false, false) => {
            push(site(n1 - 1, false), site(n2 + 1, false), (1.0 - qp(n1)) * (1.0 - qp(mm - n2)) / dd, n1 >= 1);
            push(
                site(n1 + 1, false),
                site(n2 - 1, false),
                q * (qp(n1) - qp(mm)) * (qp(mm - n2) - qp(mm)) / dd,
                n2 >= 1,
            );
        }
        (true, false) => {
            push(site(n1 - 1, true), site(n2 + 1, false), (1.0 - qp(n1)) * (1.0 - qp(mm - n2)) / dd, n1 >= 1);
            push(site(n1, false), site(n2, true), (1.0 - q) * qp(n1) * (1.0 - qp(mm - n2)) / dd, true);
            push(
                site(n1 + 1, true),
                site(n2 - 1, false),
                (qp(n1 + 1) - qp(mm)) * (qp(mm - n2) - qp(mm)) * q / dd,
                n2 >= 1,
            );
            push(
                site(n1 + 1, false),
                site(n2 - 1, true),
                (1.0 - q) * qp(n1) * (qp(mm - n2) - qp(mm)) * q / dd,
                n2 >= 1,
            );
        }
        (false, true) => {
            push(site(n1 - 1, false), site(n2 + 1, true), (1.0 - qp(n1)) * (1.0 - qp(mm - n2 - 1)) / dd, n1 >= 1);
            push(site(n1 - 1, true), site(n2 + 1, false), (1.0 - qp(n1)) * (1.0 - q) * qp(mm - n2 - 1) / dd, n1 >= 1);
            push(
                site(n1 + 1, false),
                site(n2 - 1, true),
                (qp(n1) - qp(mm)) * (qp(mm - n2) - qp(mm)) * q / dd,
                n2 >= 1,
            );
            push(site(n1, true), site(n2, false), (qp(n1) - qp(mm)) * (1.0 - q) * qp(mm - n2) / dd, true);
        }
        (true, true) => {}
    }
    out
}

/// Time-averaged site of the second-class particle and its bond fluxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsepQMReport {
    pub occupancy: TimeWeighted<i64>,
    /// `(x, +1)` counts jumps `x -> x+1`, `(x, -1)` jumps `x -> x-1`.
    pub flux: Vec<((i64, i8), u64)>,
}

/// Runs one replica of ASEP(q,M) to `t_max`, averaging over `[burn_in, t_max]`.
pub fn simulate_asepqm<R: Rng + ?Sized>(
    state: &mut AsepQMState,
    q: QParam,
    t_max: f64,
    burn_in: f64,
    rng: &mut R,
) -> Result<AsepQMReport> {
    if burn_in >= t_max {
        return Err(Error::Parameter("burn_in must be below t_max".into()));
    }
    let q = q.value();
    let n = state.sites.len();
    let mut occupancy = TimeWeighted::new();
    let mut flux: HashMap<(i64, i8), u64> = HashMap::new();
    if n < 2 {
        occupancy.add(state.second_site(), t_max - burn_in.max(state.clock));
        state.clock = t_max;
        return Ok(AsepQMReport { occupancy, flux: Vec::new() });
    }
    let mut bond_moves: Vec<Vec<(QMSite, QMSite, f64)>> =
        (0..n - 1).map(|b| asepqm_pair_rates(q, state.m, state.sites[b], state.sites[b + 1])).collect();
    let mut bond_rate: Vec<f64> = bond_moves.iter().map(|v| v.iter().map(|x| x.2).sum()).collect();
    loop {
        let total: f64 = bond_rate.iter().sum();
        let x = state.second_site();
        let remaining = t_max - state.clock;
        let dt = if total > 0.0 { -(1.0 - rng.gen::<f64>()).ln() / total } else { f64::INFINITY };
        let step = dt.min(remaining);
        let from = state.clock.max(burn_in);
        let to = (state.clock + step).max(burn_in);
        occupancy.add(x, to - from);
        if dt >= remaining {
            state.clock = t_max;
            break;
        }
        state.clock += dt;
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = None;
        'outer: for (b, moves) in bond_moves.iter().enumerate() {
            if u >= bond_rate[b] {
                u -= bond_rate[b];
                continue;
            }
            for (i, mv) in moves.iter().enumerate() {
                if u < mv.2 {
                    chosen = Some((b, i));
                    break 'outer;
                }
                u -= mv.2;
            }
            chosen = Some((b, moves.len() - 1));
            break;
        }
        let (b, i) = match chosen {
            Some(c) => c,
            None => {
                let b = bond_rate.iter().rposition(|&r| r > 0.0).expect("positive total rate");
                (b, bond_moves[b].len() - 1)
            }
        };
        let (l, r, _) = bond_moves[b][i];
        state.sites[b] = l;
        state.sites[b + 1] = r;
        let y = state.second_site();
        if y != x {
            let dir = if y > x { 1 } else { -1 };
            if state.clock >= burn_in {
                *flux.entry((x, dir)).or_insert(0) += 1;
            }
        }
        for c in b.saturating_sub(1)..=(b + 1).min(n - 2) {
            bond_moves[c] = asepqm_pair_rates(q, state.m, state.sites[c], state.sites[c + 1]);
            bond_rate[c] = bond_moves[c].iter().map(|x| x.2).sum();
        }
        debug_assert!(state.check().is_ok());
    }
    let mut flux: Vec<_> = flux.into_iter().collect();
    flux.sort_unstable_by_key(|x| x.0);
    Ok(AsepQMReport { occupancy, flux })
}

/// Runs `replicas` of ASEP(q,M) on sites `[-l, l]`, each started from a
/// stationary window grouped into sites, and merges the reports.
#[allow(clippy::too_many_arguments)]
pub fn run_asepqm(
    p: &MallowsParams,
    m: u32,
    l: i64,
    t_max: f64,
    burn_in: f64,
    replicas: usize,
    seed: u64,
    policy: &TruncationPolicy,
) -> Result<AsepQMReport> {
    let mm = m as i64;
    let lo_pos = -l * mm + 1;
    let len = ((2 * l + 1) * mm) as usize;
    let reports: Vec<AsepQMReport> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut attempt = 0u64;
            loop {
                let mut rng = seeded_rng(seed, (attempt << 32) | r as u64);
                let w = sample_window(p, lo_pos, len, &mut rng, policy)?.window;
                if !w.values.contains(&0) {
                    attempt += 1;
                    continue;
                }
                let raw = AsepWindowState::raw(lo_pos, w.values, p.center())?;
                let mut s = AsepQMState::from_raw(&raw, m)?;
                return simulate_asepqm(&mut s, p.q(), t_max, burn_in, &mut rng);
            }
        })
        .collect::<Result<_>>()?;
    let mut occupancy = TimeWeighted::new();
    let mut flux: HashMap<(i64, i8), u64> = HashMap::new();
    for r in &reports {
        occupancy.merge(&r.occupancy);
        for &(k, c) in &r.flux {
            *flux.entry(k).or_insert(0) += c;
        }
    }
    let mut flux: Vec<_> = flux.into_iter().collect();
    flux.sort_unstable_by_key(|x| x.0);
    Ok(AsepQMReport { occupancy, flux })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Law;

    fn q(v: f64) -> QParam {
        QParam::new(v).unwrap()
    }

    #[test]
    fn zero_time_is_a_no_op() {
        let p = MallowsParams::new(0.5, 1.0).unwrap();
        let s = AsepWindowState::raw(-1, vec![1, -1, 0], 0).unwrap();
        let (out, ev) = simulate(&s, &p, 0.0, &mut seeded_rng(1, 0));
        assert_eq!(out, s);
        assert!(ev.is_empty());
    }

    #[test]
    fn q_zero_sorts_and_stops() {
        let p = MallowsParams::new(0.0, 1.0).unwrap();
        let s = AsepWindowState::raw(-3, vec![3, 1, -2, 0, 2, -3, -1], 0).unwrap();
        let (out, ev) = simulate(&s, &p, 1e6, &mut seeded_rng(2, 0));
        assert_eq!(out.labels(), &[-3, -2, -1, 0, 1, 2, 3]);
        assert!(ev.iter().all(|e| e.kind == JumpKind::Sorting));
        assert!(ev.windows(2).all(|w| w[0].time < w[1].time));
    }

    struct Conservation {
        start: i64,
        ok: bool,
        events: usize,
    }

    fn n_eta(s: &AsepWindowState) -> i64 {
        // holes right of 0 minus particles at or left of 0, values > 0 are particles
        let mut n = 0;
        for a in s.lo()..=s.hi() {
            let particle = s.label_at(a) > 0;
            if a > 0 && !particle {
                n += 1;
            }
            if a <= 0 && particle {
                n -= 1;
            }
        }
        n
    }

    impl Observer for Conservation {
        fn jump(&mut self, s: &AsepWindowState, _e: &JumpEvent) {
            self.events += 1;
            self.ok &= n_eta(s) == self.start;
        }
    }

    #[test]
    fn one_species_charge_is_conserved() {
        let p = MallowsParams::new(0.5, 1.0).unwrap();
        let mut rng = seeded_rng(5, 0);
        let mut s = stationary_window(&p, 10, &mut rng, &TruncationPolicy::default()).unwrap();
        let mut c = Conservation { start: n_eta(&s), ok: true, events: 0 };
        let mut t = 0.0;
        while c.events < 1000 {
            t += 10.0;
            simulate_observed(&mut s, p.q(), t, &mut rng, &mut c);
        }
        assert!(c.ok);
    }

    #[test]
    fn reversibility_small_cases() {
        let r = exact_reversibility_check(2, q(0.5)).unwrap();
        assert!(r.detailed_balance < 1e-16);
        let r = exact_reversibility_check(4, q(0.5)).unwrap();
        assert!(r.detailed_balance <= 1e-14);
        assert!(r.row_sum <= 1e-14);
        assert!(exact_reversibility_check(1, q(0.5)).is_err());
    }

    #[test]
    fn exact_law_two_sites() {
        // two labels: P(swapped at t) = q/(1+q) (1 - e^-(1+q)t) from sorted
        let s = AsepWindowState::raw(0, vec![0, 1], 0).unwrap();
        let law = exact_transient_law(&s, q(0.5), 0.7).unwrap();
        let want = 0.5 / 1.5 * (1.0 - (-1.5f64 * 0.7).exp());
        assert!((law.prob(&vec![1, 0]) - want).abs() < 1e-13);
    }

    #[test]
    fn event_driven_matches_exact_law_small() {
        let s = AsepWindowState::raw(0, vec![0, 1, 2, 3], 0).unwrap();
        let law = exact_transient_law(&s, q(0.5), 1.0).unwrap();
        let p = MallowsParams::new(0.5, 1.0).unwrap();
        let e: EmpiricalDist<Vec<i64>> = (0..40_000)
            .map(|r| simulate(&s, &p, 1.0, &mut seeded_rng(3, r)).0.labels().to_vec())
            .collect();
        assert!(crate::stats::tv_distance(&e, &law) < 0.02);
    }

    #[test]
    fn height_examples() {
        let id = AsepWindowState::identity(5);
        assert_eq!(height_function(&id, -1, 0).unwrap(), 0);
        let mut s = AsepWindowState::identity(5);
        s.labels.swap(5, 6);
        assert_eq!(height_function(&s, 0, 0).unwrap(), 1);
        assert!(height_function(&id.project(|v| v.signum()), 0, 0).is_err());
    }

    #[test]
    fn height_inclusion_exclusion() {
        let p = MallowsParams::new(0.5, 1.7).unwrap();
        for r in 0..100 {
            let mut rng = seeded_rng(8, r);
            let s = stationary_window(&p, 3, &mut rng, &TruncationPolicy::default()).unwrap();
            for i in -5..=5 {
                for x in -6..=6 {
                    let h = |v, a| height_function(&s, v, a).unwrap() as i64;
                    let ind = h(x, i - 1) - h(x - 1, i - 1) - h(x, i) + h(x - 1, i);
                    assert_eq!(ind, (s.label_at(i) == x) as i64);
                }
            }
        }
    }

    #[test]
    fn asepqm_table_collapses_at_m1() {
        let e = QMSite { first: 0, second: false };
        let f = QMSite { first: 1, second: false };
        let s = QMSite { first: 0, second: true };
        let rates = |a, b| asepqm_pair_rates(0.5, 1, a, b);
        // second class then hole: moves right at rate 1
        assert_eq!(rates(s, e), vec![(e, s, 1.0)]);
        // hole then second class: moves left at rate q
        assert_eq!(rates(e, s), vec![(s, e, 0.5)]);
        // first then second: sorts at rate 1; second then first: rate q
        assert_eq!(rates(f, s), vec![(s, f, 1.0)]);
        assert_eq!(rates(s, f), vec![(f, s, 0.5)]);
        assert_eq!(rates(f, e), vec![(e, f, 1.0)]);
        assert_eq!(rates(e, f), vec![(f, e, 0.5)]);
    }

    /// Stationary weight of a pair of sites: q^(cross inversions) times the
    /// q-multinomial of each site.
    fn fused_weight(q: f64, m: u32, a: QMSite, b: QMSite) -> f64 {
        let word = |s: QMSite| {
            let holes = m - s.first - s.second as u32;
            let mut w = vec![0; holes as usize];
            w.extend(std::iter::repeat(1).take(s.second as usize));
            w.extend(std::iter::repeat(2).take(s.first as usize));
            w
        };
        let qfac = |n: u32| (1..=n).map(|k| (1.0 - q.powi(k as i32)) / (1.0 - q)).product::<f64>();
        let multi = |s: QMSite| {
            let holes = m - s.first - s.second as u32;
            qfac(m) / (qfac(holes) * qfac(s.second as u32) * qfac(s.first))
        };
        let (l, r) = (word(a), word(b));
        let cross = l.iter().map(|x| r.iter().filter(|&y| x > y).count()).sum::<usize>();
        q.powi(cross as i32) * multi(a) * multi(b)
    }

    #[test]
    fn asepqm_table_detailed_balance() {
        let q = 0.5;
        for m in 1..=4u32 {
            let mut sites = Vec::new();
            for first in 0..=m {
                sites.push(QMSite { first, second: false });
                if first < m {
                    sites.push(QMSite { first, second: true });
                }
            }
            for &a in &sites {
                for &b in &sites {
                    if a.second && b.second {
                        continue;
                    }
                    for (c, d, r) in asepqm_pair_rates(q, m, a, b) {
                        assert!(r.is_finite() && r > 0.0);
                        let back = asepqm_pair_rates(q, m, c, d)
                            .into_iter()
                            .find(|x| x.0 == a && x.1 == b)
                            .map(|x| x.2)
                            .unwrap_or(0.0);
                        let l = fused_weight(q, m, a, b) * r;
                        let rr = fused_weight(q, m, c, d) * back;
                        assert!((l - rr).abs() < 1e-12 * l, "M={m} {a:?} {b:?} -> {c:?} {d:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn time_weighted_occupancy_is_a_law() {
        let p = MallowsParams::new(0.5, 1.0).unwrap();
        let r = run_asepqm(&p, 2, 4, 20.0, 4.0, 4, 1, &TruncationPolicy::default()).unwrap();
        let total: f64 = r.occupancy.probabilities().values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((r.occupancy.total() - 4.0 * 16.0).abs() < 1e-9);
    }
}
