//! Stochastic colored six-vertex model on a rectangle with homogeneous
//! parameters.
//!
//! Columns are `0..width`, rows `1..=height`. Color `x` enters at the bottom
//! of column `x` and color `-y` at the left of row `y`, so every edge carries
//! exactly one path. At a vertex the path from below has color `i`, the path
//! from the left color `j`. They cross (i continues up, j right) with
//! probability `b1` if `i < j` and `b2` if `i > j`; otherwise i turns right
//! and j turns up.
//!
//! Half-integers are encoded by the integer just below them: `n + 1/2` is
//! `n`. This matches [`crate::asep::height_function`], where `(value, pos)`
//! stands for `(value + 1/2, pos + 1/2)`. In the frame `column - height` a
//! cut `(n, m)` counts the same paths as `height_function(v = n, p = m)`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::seeded_rng;
use crate::stats::{tv_distance, EmpiricalDist, Law, Pmf};

/// Crossing probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexParams {
    pub b1: f64,
    pub b2: f64,
}

impl VertexParams {
    pub fn new(b1: f64, b2: f64) -> Result<VertexParams> {
        for (name, b) in [("b1", b1), ("b2", b2)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {b}")));
            }
        }
        Ok(VertexParams { b1, b2 })
    }

    /// `b1 = eps`, `b2 = q eps`.
    pub fn asep_limit(q: f64, eps: f64) -> Result<VertexParams> {
        VertexParams::new(eps, q * eps)
    }

    fn cross(&self, below: i64, left: i64) -> f64 {
        if below < left {
            self.b1
        } else {
            self.b2
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectDomain {
    pub width: usize,
    pub height: usize,
}

impl RectDomain {
    pub fn new(width: usize, height: usize) -> Result<RectDomain> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid("domain must be nonempty".into()));
        }
        Ok(RectDomain { width, height })
    }

    pub fn vertices(&self) -> usize {
        self.width * self.height
    }
}

/// Exit data of one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SixVertexConfig {
    pub domain: RectDomain,
    /// Color leaving the top of each column.
    pub top: Vec<i64>,
    /// Color leaving the right end of each row, rows `1..=height`.
    pub right: Vec<i64>,
}

impl SixVertexConfig {
    /// Entry column of a color, `-1` for the left boundary.
    pub fn start(color: i64) -> i64 {
        color.max(-1)
    }

    /// `(color, exit column)` with `width` standing for the right boundary.
    pub fn exits(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let w = self.domain.width as i64;
        self.top.iter().enumerate().map(|(x, &c)| (c, x as i64)).chain(self.right.iter().map(move |&c| (c, w)))
    }
}

/// The cut from `(n + 1/2 - 1/2, 0)` to `(height + m + 1/2, height)`, i.e. the
/// sub-rectangle of columns `n+1 ..= height+m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CutQuery {
    pub n: i64,
    pub m: i64,
}

impl CutQuery {
    pub fn new(n: i64, m: i64) -> CutQuery {
        CutQuery { n, m }
    }

    /// From doubled half-integers `2 x_hat`, `2 y_hat`.
    pub fn from_doubled(x2: i64, y2: i64) -> Result<CutQuery> {
        if x2.rem_euclid(2) != 1 || y2.rem_euclid(2) != 1 {
            return Err(Error::Invalid("cut endpoints must be half-integers".into()));
        }
        Ok(CutQuery { n: (x2 - 1) / 2, m: (y2 - 1) / 2 })
    }

    fn bounds(&self, dom: &RectDomain) -> Result<(i64, i64)> {
        let (l, r) = (self.n + 1, dom.height as i64 + self.m);
        if self.n < -1 || r > dom.width as i64 - 1 || l > r + 1 {
            return Err(Error::Invalid(format!("cut {self:?} outside the {}x{} domain", dom.width, dom.height)));
        }
        Ok((l, r))
    }
}

/// Samples one configuration, sweeping rows bottom to top and each row left
/// to right.
pub fn sample_lattice<R: Rng + ?Sized>(vp: &VertexParams, dom: &RectDomain, rng: &mut R) -> SixVertexConfig {
    let mut up: Vec<i64> = (0..dom.width as i64).collect();
    let mut right = Vec::with_capacity(dom.height);
    for y in 1..=dom.height as i64 {
        let mut carried = -y;
        for cell in up.iter_mut() {
            let below = *cell;
            let p = vp.cross(below, carried);
            // deterministic vertices draw nothing, so b in {0,1} is exact
            let crosses = p >= 1.0 || (p > 0.0 && rng.gen::<f64>() < p);
            if !crosses {
                *cell = carried;
                carried = below;
            }
        }
        right.push(carried);
    }
    SixVertexConfig { domain: *dom, top: up, right }
}

/// Number of paths entering the cut's sub-rectangle from the left and leaving
/// it to the right.
pub fn height_on_cut(cfg: &SixVertexConfig, cut: &CutQuery) -> Result<u64> {
    height_on_cut_filtered(cfg, cut, |_| true)
}

/// As [`height_on_cut`], counting only colors accepted by `keep`.
pub fn height_on_cut_filtered(cfg: &SixVertexConfig, cut: &CutQuery, keep: impl Fn(i64) -> bool) -> Result<u64> {
    let (l, r) = cut.bounds(&cfg.domain)?;
    Ok(cfg.exits().filter(|&(c, end)| SixVertexConfig::start(c) < l && end > r && keep(c)).count() as u64)
}

fn heights(cfg: &SixVertexConfig, cuts: &[CutQuery]) -> Vec<u64> {
    cuts.iter().map(|c| height_on_cut(cfg, c).expect("cuts validated")).collect()
}

/// Largest number of random vertices [`enumerate_exact`] expands.
pub const MAX_STOCHASTIC_VERTICES: usize = 20;

/// Exact joint law of the heights on `cuts`, by depth-first expansion of every
/// crossing decision. Zero-probability branches are pruned.
pub fn enumerate_exact(vp: &VertexParams, dom: &RectDomain, cuts: &[CutQuery]) -> Result<Pmf<Vec<u64>>> {
    for c in cuts {
        c.bounds(dom)?;
    }
    let random = |p: f64| p > 0.0 && p < 1.0;
    if (random(vp.b1) || random(vp.b2)) && dom.vertices() > MAX_STOCHASTIC_VERTICES {
        return Err(Error::TooLarge(format!(
            "{} vertices, at most {MAX_STOCHASTIC_VERTICES} can be enumerated",
            dom.vertices()
        )));
    }
    struct Frame {
        vertex: usize,
        up: Vec<i64>,
        carried: i64,
        right: Vec<i64>,
        prob: f64,
    }
    let w = dom.width;
    let mut acc: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    let mut stack = vec![Frame { vertex: 0, up: (0..w as i64).collect(), carried: -1, right: Vec::new(), prob: 1.0 }];
    while let Some(mut f) = stack.pop() {
        if f.vertex == dom.vertices() {
            let cfg = SixVertexConfig { domain: *dom, top: f.up, right: f.right };
            *acc.entry(heights(&cfg, cuts)).or_insert(0.0) += f.prob;
            continue;
        }
        let x = f.vertex % w;
        let below = f.up[x];
        let p = vp.cross(below, f.carried);
        let advance = |mut g: Frame, cross: bool, prob: f64| {
            let x = g.vertex % w;
            if !cross {
                std::mem::swap(&mut g.up[x], &mut g.carried);
            }
            g.prob *= prob;
            g.vertex += 1;
            if x == w - 1 {
                g.right.push(g.carried);
                g.carried = -(g.right.len() as i64 + 1);
            }
            g
        };
        if p > 0.0 && p < 1.0 {
            let other = Frame { vertex: f.vertex, up: f.up.clone(), carried: f.carried, right: f.right.clone(), prob: f.prob };
            stack.push(advance(other, false, 1.0 - p));
            f = advance(f, true, p);
            stack.push(f);
        } else {
            stack.push(advance(f, p >= 1.0, 1.0));
        }
    }
    let mut pmf = Pmf::new();
    for (k, p) in acc {
        pmf.insert(k, p);
    }
    Ok(pmf)
}

/// Empirical joint law of the heights over `replicas` independent samples.
pub fn sample_heights(
    vp: &VertexParams,
    dom: &RectDomain,
    cuts: &[CutQuery],
    replicas: usize,
    seed: u64,
) -> Result<EmpiricalDist<Vec<u64>>> {
    for c in cuts {
        c.bounds(dom)?;
    }
    let rows: Vec<Vec<u64>> = (0..replicas)
        .into_par_iter()
        .map(|r| heights(&sample_lattice(vp, dom, &mut seeded_rng(seed, r as u64)), cuts))
        .collect();
    Ok(rows.into_iter().collect())
}

/// Data of the shift-invariance statement. Half-integers are stored doubled
/// (`1/2` is `1`); the elements of the permutation `g` are plain integers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SupportJson", into = "SupportJson")]
pub struct SupportData {
    a2: i64,
    b2: i64,
    c2: i64,
    d2: i64,
    s: i64,
    hats: Vec<(i64, i64)>,
    tildes: Vec<(i64, i64)>,
    g: BTreeMap<i64, i64>,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct SupportJson {
    A: i64,
    B: i64,
    C: i64,
    D: i64,
    S: i64,
    hats: Vec<[i64; 2]>,
    tildes: Vec<[i64; 2]>,
    g: BTreeMap<i64, i64>,
}

impl TryFrom<SupportJson> for SupportData {
    type Error = Error;

    fn try_from(j: SupportJson) -> Result<SupportData> {
        SupportData::new(
            [j.A, j.B, j.C, j.D],
            j.S,
            j.hats.into_iter().map(|[x, y]| (x, y)).collect(),
            j.tildes.into_iter().map(|[x, y]| (x, y)).collect(),
            j.g,
        )
    }
}

impl From<SupportData> for SupportJson {
    fn from(s: SupportData) -> SupportJson {
        SupportJson {
            A: s.a2,
            B: s.b2,
            C: s.c2,
            D: s.d2,
            S: s.s,
            hats: s.hats.iter().map(|&(x, y)| [x, y]).collect(),
            tildes: s.tildes.iter().map(|&(x, y)| [x, y]).collect(),
            g: s.g,
        }
    }
}

impl SupportData {
    /// `bounds = [2A, 2B, 2C, 2D]`; `hats` and `tildes` hold doubled
    /// `(x, y)` pairs.
    pub fn new(
        bounds: [i64; 4],
        s: i64,
        hats: Vec<(i64, i64)>,
        tildes: Vec<(i64, i64)>,
        g: BTreeMap<i64, i64>,
    ) -> Result<SupportData> {
        let [a2, b2, c2, d2] = bounds;
        let odd = |v: i64| v.rem_euclid(2) == 1;
        if !bounds.iter().all(|&v| odd(v)) {
            return Err(Error::Invalid("A, B, C, D must be half-integers".into()));
        }
        if a2 > b2 || c2 > d2 {
            return Err(Error::Invalid("need A <= B and C <= D".into()));
        }
        if b2 >= 2 * s + c2 {
            return Err(Error::Invalid("need B < S + C".into()));
        }
        if hats.len() != tildes.len() || hats.is_empty() {
            return Err(Error::Invalid("hats and tildes must be nonempty and of equal length".into()));
        }
        for &(x, y) in hats.iter().chain(&tildes) {
            if !odd(x) || !odd(y) || x < a2 || x > b2 || y < c2 || y > d2 {
                return Err(Error::Invalid(format!("point ({x}/2, {y}/2) outside [A,B] x [C,D]")));
            }
        }
        let sd = SupportData { a2, b2, c2, d2, s, hats, tildes, g };
        let domain: BTreeSet<i64> = sd.domain_set().into_iter().collect();
        let keys: BTreeSet<i64> = sd.g.keys().copied().collect();
        let vals: BTreeSet<i64> = sd.g.values().copied().collect();
        if keys != domain || vals != domain {
            return Err(Error::Invalid("g is not a permutation of the index set".into()));
        }
        Ok(sd)
    }

    /// Integers in `(A, B)` and in `(S + C, S + D)`.
    pub fn domain_set(&self) -> Vec<i64> {
        let open = |lo2: i64, hi2: i64| (lo2 + 1) / 2..=(hi2 - 1) / 2;
        open(self.a2, self.b2).chain(open(self.c2 + 2 * self.s, self.d2 + 2 * self.s)).collect()
    }

    pub fn s(&self) -> i64 {
        self.s
    }

    pub fn hats(&self) -> &[(i64, i64)] {
        &self.hats
    }

    pub fn tildes(&self) -> &[(i64, i64)] {
        &self.tildes
    }

    pub fn g(&self) -> &BTreeMap<i64, i64> {
        &self.g
    }

    /// `[2A, 2B, 2C, 2D]`.
    pub fn bounds(&self) -> [i64; 4] {
        [self.a2, self.b2, self.c2, self.d2]
    }

    /// Same data for another shift `S'`: elements of the second interval and
    /// their images move by `S' - S`.
    pub fn with_shift(&self, s_new: i64) -> Result<SupportData> {
        let split = (self.b2 + 1) / 2;
        let mv = |v: i64| if v >= split { v + s_new - self.s } else { v };
        let g = self.g.iter().map(|(&k, &v)| (mv(k), mv(v))).collect();
        SupportData::new(self.bounds(), s_new, self.hats.clone(), self.tildes.clone(), g)
    }

    fn between(&self, x2: i64, y2: i64, a: i64) -> bool {
        x2 < 2 * a && 2 * a < 2 * self.s + y2
    }

    fn hat_supports(&self) -> Vec<BTreeSet<i64>> {
        let dom = self.domain_set();
        self.hats.iter().map(|&(x, y)| dom.iter().copied().filter(|&a| self.between(x, y, a)).collect()).collect()
    }

    /// `supp(x_hat_i, y_hat_i)` and `supp_g(x_tilde_i, y_tilde_i)` for each i.
    pub fn supports(&self) -> Vec<(BTreeSet<i64>, BTreeSet<i64>)> {
        let dom = self.domain_set();
        self.hats
            .iter()
            .zip(&self.tildes)
            .map(|(&(hx, hy), &(tx, ty))| {
                let hat = dom.iter().copied().filter(|&a| self.between(hx, hy, a)).collect();
                let tilde = dom.iter().copied().filter(|&b| self.between(tx, ty, self.g[&b])).collect();
                (hat, tilde)
            })
            .collect()
    }

    /// Cuts for the hat and the tilde data.
    pub fn cuts(&self) -> (Vec<CutQuery>, Vec<CutQuery>) {
        let conv = |v: &[(i64, i64)]| v.iter().map(|&(x, y)| CutQuery::from_doubled(x, y).unwrap()).collect();
        (conv(&self.hats), conv(&self.tildes))
    }

    /// Smallest rectangle holding every cut when the height equals `S`.
    pub fn minimal_domain(&self) -> Result<RectDomain> {
        let max_m = (self.d2 - 1) / 2;
        RectDomain::new((self.s + max_m + 1).max(1) as usize, self.s.max(1) as usize)
    }
}

/// Whether the supports agree; `witness` is the first failing index (from 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportVerdict {
    pub holds: bool,
    pub witness: Option<usize>,
}

pub fn check_support_condition(sd: &SupportData) -> SupportVerdict {
    match sd.supports().iter().position(|(h, t)| h != t) {
        None => SupportVerdict { holds: true, witness: None },
        Some(i) => SupportVerdict { holds: false, witness: Some(i + 1) },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum VerifyMode {
    Exact,
    MonteCarlo { replicas: usize, seed: u64, permutations: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub mode: VerifyMode,
    pub domain: RectDomain,
    /// Maximum absolute difference of probabilities (exact) or TV distance.
    pub deviation: f64,
    /// Permutation-test p-value (Monte Carlo only).
    pub p_value: Option<f64>,
}

/// Compares the joint height laws of the hat and tilde cuts on `dom`. The
/// data are first moved to `S = dom.height`, which is where the lattice
/// statement applies.
pub fn verify_shift_invariance(sd: &SupportData, vp: &VertexParams, dom: &RectDomain, mode: VerifyMode) -> Result<ShiftReport> {
    if let Some(i) = check_support_condition(sd).witness {
        return Err(Error::SupportMismatch { index: i });
    }
    let sd = sd.with_shift(dom.height as i64)?;
    if let Some(i) = check_support_condition(&sd).witness {
        return Err(Error::SupportMismatch { index: i });
    }
    let (hat, tilde) = sd.cuts();
    match mode {
        VerifyMode::Exact => {
            let a = enumerate_exact(vp, dom, &hat)?;
            let b = enumerate_exact(vp, dom, &tilde)?;
            Ok(ShiftReport { mode, domain: *dom, deviation: max_abs_diff(&a, &b), p_value: None })
        }
        VerifyMode::MonteCarlo { replicas, seed, permutations } => {
            let a = sample_heights(vp, dom, &hat, replicas, seed)?;
            let b = sample_heights(vp, dom, &tilde, replicas, seed ^ 0x9e37_79b9_7f4a_7c15)?;
            let tv = tv_distance(&a, &b);
            let p = permutation_p_value(&a, &b, permutations, seed);
            Ok(ShiftReport { mode, domain: *dom, deviation: tv, p_value: Some(p) })
        }
    }
}

fn max_abs_diff<K: Ord + Clone>(a: &impl Law<K>, b: &impl Law<K>) -> f64 {
    let (pa, pb) = (a.probabilities(), b.probabilities());
    pa.keys()
        .chain(pb.keys())
        .map(|k| (pa.get(k).copied().unwrap_or(0.0) - pb.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Share of random relabelings of the pooled sample whose TV distance is at
/// least the observed one, with the usual +1 correction.
pub fn permutation_p_value<K: Ord + Clone + Send + Sync>(a: &EmpiricalDist<K>, b: &EmpiricalDist<K>, permutations: usize, seed: u64) -> f64 {
    let observed = tv_distance(a, b);
    let mut pooled: Vec<K> = Vec::with_capacity((a.n() + b.n()) as usize);
    for (k, c) in a.iter().chain(b.iter()) {
        pooled.extend(std::iter::repeat(k.clone()).take(c as usize));
    }
    let na = a.n() as usize;
    let exceed: usize = (0..permutations)
        .into_par_iter()
        .map(|r| {
            let mut v = pooled.clone();
            v.shuffle(&mut seeded_rng(seed, (1 << 40) + r as u64));
            let x: EmpiricalDist<K> = v[..na].iter().cloned().collect();
            let y: EmpiricalDist<K> = v[na..].iter().cloned().collect();
            (tv_distance(&x, &y) >= observed - 1e-15) as usize
        })
        .sum();
    (exceed + 1) as f64 / (permutations + 1) as f64
}

/// Draws a support-valid instance with `S = 2` and `n_cuts` cuts whose
/// minimal domain has at most `MAX_STOCHASTIC_VERTICES` vertices. The
/// permutation is uniform and the tilde data are read off from the images
/// of the hat supports; draws whose images are not of cut form are rejected.
pub fn random_support_instance<R: Rng + ?Sized>(rng: &mut R, n_cuts: usize) -> SupportData {
    let s = 2;
    loop {
        let a2 = 1;
        let b2 = a2 + 2 * rng.gen_range(1..=3);
        let c2 = b2 - 2 * s + 2 * rng.gen_range(1..=2);
        let d2 = c2 + 2 * rng.gen_range(1..=3);
        // width s + (d2-1)/2 + 1 times height s
        if (s + (d2 - 1) / 2 + 1) * s > MAX_STOCHASTIC_VERTICES as i64 {
            continue;
        }
        let pick = |rng: &mut R, lo: i64, hi: i64| lo + 2 * rng.gen_range(0..=(hi - lo) / 2);
        let hats: Vec<(i64, i64)> = (0..n_cuts).map(|_| (pick(rng, a2, b2), pick(rng, c2, d2))).collect();
        let tmp = SupportData { a2, b2, c2, d2, s, hats: hats.clone(), tildes: hats.clone(), g: BTreeMap::new() };
        let dom = tmp.domain_set();
        let mut img = dom.clone();
        img.shuffle(rng);
        let g: BTreeMap<i64, i64> = dom.iter().copied().zip(img).collect();
        if g.iter().all(|(k, v)| k == v) {
            continue;
        }
        let split = (b2 + 1) / 2;
        let tildes: Vec<(i64, i64)> = tmp
            .hat_supports()
            .iter()
            .map(|h| {
                let image: Vec<i64> = h.iter().map(|b| g[b]).collect();
                let x = image.iter().filter(|&&a| a < split).min().map_or(b2, |&a| 2 * a - 1);
                let y = image.iter().filter(|&&a| a >= split).max().map_or(c2, |&a| 2 * (a - s) + 1);
                (x, y)
            })
            .collect();
        let Ok(sd) = SupportData::new([a2, b2, c2, d2], s, hats, tildes, g) else { continue };
        if check_support_condition(&sd).holds {
            return sd;
        }
    }
}

/// The worked example: hats `(1/2, 9/2), (5/2, 7/2)`, tildes
/// `(1/2, 9/2), (3/2, 5/2)`, `A = 1/2, B = C = 5/2, D = 9/2, S = 2` and
/// `g = (1)(2 5)(6)`.
pub fn example_support_data() -> SupportData {
    SupportData::new(
        [1, 5, 5, 9],
        2,
        vec![(1, 9), (5, 7)],
        vec![(1, 9), (3, 5)],
        [(1, 1), (2, 5), (5, 2), (6, 6)].into_iter().collect(),
    )
    .expect("valid example")
}

/// Height law in the limit regime: `b1 = eps`, `b2 = q eps`, `height =
/// floor(t / eps)` rows and `width = height + margin`. Cuts `(n, m)` read as
/// ASEP heights `height_function(v = n, p = m)` at time `t`.
pub fn asep_limit_height_law(
    q: f64,
    eps: f64,
    t: f64,
    margin: usize,
    cuts: &[CutQuery],
    replicas: usize,
    seed: u64,
) -> Result<EmpiricalDist<Vec<u64>>> {
    let vp = VertexParams::asep_limit(q, eps)?;
    let h = ((t / eps).floor() as usize).max(1);
    let dom = RectDomain::new(h + margin, h)?;
    sample_heights(&vp, &dom, cuts, replicas, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(w: usize, h: usize) -> RectDomain {
        RectDomain::new(w, h).unwrap()
    }

    #[test]
    fn all_turn_is_a_shift() {
        let vp = VertexParams::new(0.0, 0.0).unwrap();
        let cfg = sample_lattice(&vp, &dom(3, 3), &mut seeded_rng(0, 0));
        assert_eq!(cfg.top, vec![-3, -2, -1]);
        assert_eq!(cfg.right, vec![2, 1, 0]);
    }

    #[test]
    fn all_cross_goes_straight() {
        let vp = VertexParams::new(1.0, 1.0).unwrap();
        let cfg = sample_lattice(&vp, &dom(3, 3), &mut seeded_rng(0, 0));
        assert_eq!(cfg.top, vec![0, 1, 2]);
        assert_eq!(cfg.right, vec![-1, -2, -3]);
    }

    #[test]
    fn single_vertex_crossing_frequency() {
        // colors 0 from below and -1 from the left: below > left, so b2 applies
        let vp = VertexParams::new(0.3, 0.4).unwrap();
        let n = 100_000;
        let crossed = (0..n)
            .filter(|&r| sample_lattice(&vp, &dom(1, 1), &mut seeded_rng(9, r)).top[0] == 0)
            .count() as f64;
        let se = (0.4f64 * 0.6 / n as f64).sqrt();
        assert!((crossed / n as f64 - 0.4).abs() < 3.0 * se);
    }

    #[test]
    fn cut_counts() {
        let vp = VertexParams::new(1.0, 1.0).unwrap();
        let cfg = sample_lattice(&vp, &dom(2, 2), &mut seeded_rng(0, 0));
        // both left colors exit right; the full-width cut sees them
        assert_eq!(height_on_cut(&cfg, &CutQuery::new(-1, -1)).unwrap(), 2);
        assert_eq!(height_on_cut_filtered(&cfg, &CutQuery::new(-1, -1), |c| c == -1).unwrap(), 1);
        assert!(height_on_cut(&cfg, &CutQuery::new(-2, 0)).is_err());
        assert!(height_on_cut(&cfg, &CutQuery::new(0, 0)).is_err());
    }

    #[test]
    fn color_classes_add_up() {
        let vp = VertexParams::new(0.3, 0.6).unwrap();
        let d = dom(7, 3);
        for r in 0..200 {
            let cfg = sample_lattice(&vp, &d, &mut seeded_rng(4, r));
            for cut in [CutQuery::new(0, 1), CutQuery::new(2, 3), CutQuery::new(-1, 0)] {
                let all = height_on_cut(&cfg, &cut).unwrap();
                let neg = height_on_cut_filtered(&cfg, &cut, |c| c < 0).unwrap();
                let pos = height_on_cut_filtered(&cfg, &cut, |c| c >= 0).unwrap();
                assert_eq!(all, neg + pos);
            }
        }
    }

    #[test]
    fn enumeration_masses() {
        for (b1, b2) in [(0.3, 0.7), (0.5, 0.5), (0.0, 0.4), (1.0, 0.2)] {
            let vp = VertexParams::new(b1, b2).unwrap();
            for (w, h) in [(2, 2), (3, 2), (4, 3), (4, 4)] {
                let cut = CutQuery::new(0, w as i64 - 1 - h as i64);
                let pmf = enumerate_exact(&vp, &dom(w, h), &[cut]).unwrap();
                assert!((pmf.mass() - 1.0).abs() < 1e-12);
            }
        }
        let det = enumerate_exact(&VertexParams::new(1.0, 1.0).unwrap(), &dom(8, 4), &[CutQuery::new(0, 1)]).unwrap();
        assert_eq!(det.len(), 1);
        assert!(enumerate_exact(&VertexParams::new(0.5, 0.5).unwrap(), &dom(7, 3), &[]).is_err());
    }

    #[test]
    fn enumeration_agrees_with_sampling() {
        let vp = VertexParams::new(0.35, 0.6).unwrap();
        let d = dom(5, 2);
        let cuts = [CutQuery::new(0, 1), CutQuery::new(1, 2)];
        let exact = enumerate_exact(&vp, &d, &cuts).unwrap();
        let emp = sample_heights(&vp, &d, &cuts, 50_000, 3).unwrap();
        assert!(tv_distance(&emp, &exact) < 0.015);
    }

    #[test]
    fn example_supports() {
        let sd = example_support_data();
        assert_eq!(sd.domain_set(), vec![1, 2, 5, 6]);
        let sup = sd.supports();
        assert_eq!(sup[0].0, [1, 2, 5, 6].into_iter().collect());
        assert_eq!(sup[1].0, [5].into_iter().collect());
        assert_eq!(sup[1].1, [5].into_iter().collect());
        assert!(check_support_condition(&sd).holds);
    }

    #[test]
    fn perturbed_example_fails_at_two() {
        let sd = example_support_data();
        let mut tildes = sd.tildes().to_vec();
        tildes[1].1 += 2;
        let bad = SupportData::new(sd.bounds(), 2, sd.hats().to_vec(), tildes, sd.g().clone()).unwrap();
        assert_eq!(check_support_condition(&bad), SupportVerdict { holds: false, witness: Some(2) });
        let vp = VertexParams::new(0.5, 0.25).unwrap();
        assert!(verify_shift_invariance(&bad, &vp, &dom(7, 2), VerifyMode::Exact).is_err());
    }

    #[test]
    fn verdict_does_not_depend_on_shift() {
        let mut rng = seeded_rng(11, 0);
        for _ in 0..50 {
            let sd = random_support_instance(&mut rng, 2);
            for s in [3, 5] {
                assert!(check_support_condition(&sd.with_shift(s).unwrap()).holds);
            }
        }
    }

    #[test]
    fn example_exact_shift_invariance() {
        let sd = example_support_data();
        let vp = VertexParams::new(0.5, 0.25).unwrap();
        let r = verify_shift_invariance(&sd, &vp, &sd.minimal_domain().unwrap(), VerifyMode::Exact).unwrap();
        assert!(r.deviation <= 1e-12, "{}", r.deviation);
    }

    #[test]
    fn identity_data_has_zero_deviation() {
        let sd = SupportData::new([1, 3, 1, 3], 2, vec![(1, 3)], vec![(1, 3)], [(1, 1), (3, 3)].into_iter().collect()).unwrap();
        let vp = VertexParams::new(0.4, 0.2).unwrap();
        let r = verify_shift_invariance(&sd, &vp, &dom(4, 2), VerifyMode::Exact).unwrap();
        assert_eq!(r.deviation, 0.0);
    }

    #[test]
    fn json_round_trip() {
        let sd = example_support_data();
        let s = serde_json::to_string(&sd).unwrap();
        assert!(s.contains("\"A\":1"));
        let back: SupportData = serde_json::from_str(&s).unwrap();
        assert_eq!(back, sd);
        let broken = s.replace("\"6\":6", "\"6\":5");
        assert!(serde_json::from_str::<SupportData>(&broken).is_err());
    }
}
