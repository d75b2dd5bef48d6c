use mallows::asep::{
    exact_reversibility_check, exact_transient_law, height_function, simulate, simulate_asepqm, simulate_discretized,
    AsepQMState, AsepWindowState, JumpKind, QMSite,
};
use mallows::measures::MallowsParams;
use mallows::qseries::QParam;
use mallows::sampler::seeded_rng;
use mallows::stats::{chi_square_gof, tv_distance, EmpiricalDist, Pmf};
use rayon::prelude::*;

const REPLICAS: usize = 40_000;

fn start() -> AsepWindowState {
    AsepWindowState::raw(-2, vec![1, -2, 2, 0, -1], 0).unwrap()
}

fn marginal(law: &Pmf<Vec<i64>>, j: usize) -> Pmf<i64> {
    let mut out = Pmf::new();
    let mut acc = std::collections::BTreeMap::new();
    for (k, ln) in law.iter() {
        *acc.entry(k[j]).or_insert(0.0) += ln.exp();
    }
    for (k, p) in acc {
        out.insert(k, p);
    }
    out
}

fn check_against_exact(finals: EmpiricalDist<Vec<i64>>, exact: &Pmf<Vec<i64>>) {
    let gof = chi_square_gof(&finals, exact, 5.0).unwrap();
    assert!(gof.p_value > 1e-3, "{gof:?}");
    for j in 0..5 {
        let tv = tv_distance(&finals.map(|v| v[j]), &marginal(exact, j));
        assert!(tv <= 0.02, "coordinate {j}: TV {tv}");
    }
}

#[test]
fn event_driven_law_matches_uniformization() {
    let p = MallowsParams::new(0.5, 1.0).unwrap();
    let s0 = start();
    let exact = exact_transient_law(&s0, p.q(), 1.0).unwrap();
    assert!((exact.mass() - 1.0).abs() < 1e-12);
    let finals: EmpiricalDist<Vec<i64>> = (0..REPLICAS)
        .into_par_iter()
        .map(|r| simulate(&s0, &p, 1.0, &mut seeded_rng(11, r as u64)).0.labels().to_vec())
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    check_against_exact(finals, &exact);
}

#[test]
fn discretized_chain_matches_uniformization() {
    let q = QParam::new(0.5).unwrap();
    let s0 = start();
    let exact = exact_transient_law(&s0, q, 1.0).unwrap();
    let finals: EmpiricalDist<Vec<i64>> = (0..REPLICAS)
        .into_par_iter()
        .map(|r| simulate_discretized(&s0, q, 1.0, 2e-3, &mut seeded_rng(12, r as u64)).unwrap().labels().to_vec())
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    check_against_exact(finals, &exact);
}

#[test]
fn events_replay_to_the_final_state() {
    let p = MallowsParams::new(0.3, 1.0).unwrap();
    let s0 = AsepWindowState::identity(6);
    let (end, events) = simulate(&s0, &p, 20.0, &mut seeded_rng(3, 0));
    assert!(!events.is_empty());
    assert_eq!(end.clock(), 20.0);
    let mut labels = s0.labels().to_vec();
    let mut last = 0.0;
    for ev in &events {
        assert!(ev.time > last && ev.time <= 20.0);
        last = ev.time;
        let b = (ev.bond - s0.lo()) as usize;
        labels.swap(b, b + 1);
        let increasing = labels[b] < labels[b + 1];
        assert_eq!(increasing, ev.kind == JumpKind::Sorting);
    }
    assert_eq!(labels, end.labels());
    let mut a = labels.clone();
    a.sort_unstable();
    assert_eq!(a, s0.labels());
}

#[test]
fn heights_of_the_identity_and_their_increments() {
    let id = AsepWindowState::identity(5);
    for v in -8..=8 {
        for x in -8..=8 {
            assert_eq!(height_function(&id, v, x).unwrap() as i64, (v - x).max(0), "({v}, {x})");
        }
    }
    let p = MallowsParams::new(0.5, 1.0).unwrap();
    let (s, _) = simulate(&id, &p, 5.0, &mut seeded_rng(4, 0));
    for v in -3..=3 {
        for x in s.lo() - 1..s.hi() {
            let step = height_function(&s, v, x).unwrap() - height_function(&s, v, x + 1).unwrap();
            assert_eq!(step, (s.label_at(x + 1) <= v) as u64);
        }
    }
}

#[test]
fn generator_is_reversible_for_small_n() {
    for q in [0.1, 0.5, 0.9] {
        for n in 2..=6 {
            let r = exact_reversibility_check(n, QParam::new(q).unwrap()).unwrap();
            assert!(r.detailed_balance <= 1e-12 && r.row_sum <= 1e-12, "n = {n}, q = {q}: {r:?}");
        }
    }
}

#[test]
fn asepqm_conserves_particles() {
    let sites = vec![
        QMSite { first: 2, second: false },
        QMSite { first: 1, second: true },
        QMSite { first: 0, second: false },
        QMSite { first: 1, second: false },
        QMSite { first: 0, second: false },
    ];
    let mut s = AsepQMState::new(2, -2, sites).unwrap();
    let firsts = |s: &AsepQMState| s.sites.iter().map(|x| x.first).sum::<u32>();
    let before = firsts(&s);
    let rep = simulate_asepqm(&mut s, QParam::new(0.4).unwrap(), 50.0, 10.0, &mut seeded_rng(5, 0)).unwrap();
    assert_eq!(firsts(&s), before);
    assert!(s.sites.iter().all(|x| x.first + x.second as u32 <= 2));
    assert!((rep.occupancy.total() - 40.0).abs() < 1e-9);
}
