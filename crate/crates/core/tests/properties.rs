use std::collections::HashSet;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use looplens::dmlcausal::{crossfit_residuals, run_dml, DmlSpec, GbtParams};
use looplens::gridmap::{CellId, GridSpec};
use looplens::ingest::{build_chains, ChainParams, EventKind, RawEvent, Timestamp};
use looplens::linalg::correlation;
use looplens::loopdetect::scan_segment;
use looplens::sarmodel::{fit_sar, ModelMatrix, SarContext};
use looplens::spatialstats::{morans_i, vif, WeightsMatrix};
use looplens::synthlab::{gen_dml_data, gen_sar_data, lattice_weights, DmlScenario};
use looplens::table::Table;

fn shuffle<T>(v: &mut [T], seed: u64) {
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

/// Event streams over a few bikes, kinds drawn freely so orphans occur, and
/// positions on a coarse lattice so both merges and repositionings occur.
fn events() -> impl Strategy<Value = Vec<RawEvent>> {
    prop::collection::vec((0..3u8, 0..500i64, 0..12i32, 0..12i32, any::<bool>()), 1..120).prop_map(|raw| {
        raw.into_iter()
            .map(|(bike, t, gx, gy, lock)| RawEvent {
                bike_id: format!("b{bike}"),
                timestamp: Timestamp(1_700_000_000 + 60 * t),
                lon: 121.4 + 0.0008 * gx as f64,
                lat: 31.2 + 0.0008 * gy as f64,
                kind: if lock { EventKind::Lock } else { EventKind::Unlock },
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_lock_event_is_accounted_for(ev in events()) {
        let s = build_chains(ev, ChainParams::default()).unwrap().stats;
        prop_assert_eq!(s.stays + s.orphan_locks + s.merged_away, s.lock_events);
    }

    #[test]
    fn chains_ignore_input_order(ev in events(), seed in any::<u64>()) {
        let a = build_chains(ev.clone(), ChainParams::default()).unwrap();
        let mut shuffled = ev;
        shuffle(&mut shuffled, seed);
        let b = build_chains(shuffled, ChainParams::default()).unwrap();
        prop_assert_eq!(a.chains, b.chains);
        prop_assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn no_stay_spans_a_repositioning(ev in events()) {
        for chain in build_chains(ev, ChainParams::default()).unwrap().chains {
            prop_assert_eq!(chain.repositionings.len() + 1, chain.segments.len());
            for (k, at) in chain.repositionings.iter().enumerate() {
                let before = chain.segments[k].last().unwrap();
                prop_assert!(before.depart <= *at);
                // only a trailing segment can be empty: the bike was moved and never locked again
                match chain.segments[k + 1].first() {
                    Some(after) => prop_assert!(*at <= after.arrive),
                    None => prop_assert_eq!(k + 2, chain.segments.len()),
                }
            }
        }
    }

    #[test]
    fn scan_count_is_stays_minus_distinct(cells in prop::collection::vec((0..6i64, 0..6i64), 0..150)) {
        let visits: Vec<(CellId, Timestamp)> = cells
            .iter()
            .enumerate()
            .map(|(k, &(r, c))| (CellId::new(r, c), Timestamp(k as i64)))
            .collect();
        let distinct: HashSet<_> = cells.iter().collect();
        prop_assert_eq!(scan_segment(visits).len(), cells.len() - distinct.len());
    }

    #[test]
    fn nested_grids_agree(x in 0.0..20_000.0f64, y in 0.0..20_000.0f64, dx in -400.0..400.0f64, dy in -400.0..400.0f64) {
        let fine = GridSpec::new(121.4, 31.15, 250.0).unwrap();
        let coarse = fine.with_cell_size(500.0).unwrap();
        let (a, b) = (fine.cell_of_xy(x, y), fine.cell_of_xy(x + dx, y + dy));
        if a == b {
            prop_assert_eq!(coarse.cell_of_xy(x, y), coarse.cell_of_xy(x + dx, y + dy));
        }
        // floor-halving the fine index gives the coarse index
        prop_assert_eq!(coarse.cell_of_xy(x, y), CellId::new(a.row.div_euclid(2), a.col.div_euclid(2)));
    }

    #[test]
    fn translation_shifts_cells(fx in 0.02..0.98f64, fy in 0.02..0.98f64, k in -20i64..20, row in 0i64..40, col in 0i64..40) {
        let g = GridSpec::new(121.4, 31.15, 500.0).unwrap();
        let x = (col as f64 + fx) * 500.0;
        let y = (row as f64 + fy) * 500.0;
        let (lon, lat) = g.unproject(x, y);
        let (lon2, lat2) = g.unproject(x + k as f64 * 500.0, y);
        let (lon3, lat3) = g.unproject(x, y + k as f64 * 500.0);
        let c = g.to_cell(lon, lat).unwrap();
        prop_assert_eq!(g.to_cell(lon2, lat2).unwrap(), CellId::new(c.row, c.col + k));
        prop_assert_eq!(g.to_cell(lon3, lat3).unwrap(), CellId::new(c.row + k, c.col));
    }

    #[test]
    fn far_stations_have_disjoint_blocks(ax in 0.0..30_000.0f64, ay in 0.0..30_000.0f64, angle in 0.0..std::f64::consts::TAU, extra in 1.0..5000.0f64) {
        let g = GridSpec::new(121.4, 31.15, 500.0).unwrap();
        let d = 4.0 * 500.0 + extra;
        let (bx, by) = (ax + d * angle.cos(), ay + d * angle.sin());
        let a: HashSet<CellId> = g.cell_of_xy(ax, ay).neighborhood().collect();
        let b: HashSet<CellId> = g.cell_of_xy(bx, by).neighborhood().collect();
        prop_assert!(a.is_disjoint(&b));
    }
}

fn random_weights() -> impl Strategy<Value = (Vec<f64>, DMatrix<f64>)> {
    (3usize..25).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(prop::option::weighted(0.4, 0.1..3.0f64), n * n),
        )
            .prop_map(move |(y, w)| {
                let mut m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w[i * n + j].unwrap_or(0.0) });
                // a ring keeps every row populated
                for i in 0..n {
                    m[(i, (i + 1) % n)] += 1.0;
                }
                (y, m)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn row_standardization_is_idempotent((_y, m) in random_weights()) {
        let once = WeightsMatrix::from_dense(&m).unwrap().row_standardize();
        prop_assert_eq!(once.clone().row_standardize(), once);
    }

    #[test]
    fn moran_ignores_unit_order((y, m) in random_weights(), seed in any::<u64>()) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-3));
        let w = WeightsMatrix::from_dense(&m).unwrap();
        let mut perm: Vec<usize> = (0..y.len()).collect();
        shuffle(&mut perm, seed);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = morans_i(&y, &w).unwrap().i;
        let b = morans_i(&yp, &w.permuted(&perm)).unwrap().i;
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn moran_is_affine_invariant((y, m) in random_weights(), a in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64], b in -100.0..100.0f64) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-3));
        let w = WeightsMatrix::from_dense(&m).unwrap();
        let moved: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let (i0, i1) = (morans_i(&y, &w).unwrap().i, morans_i(&moved, &w).unwrap().i);
        prop_assert!((i0 - i1).abs() < 1e-9, "{i0} vs {i1}");
    }

    #[test]
    fn vif_is_at_least_one(cols in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 30), 2..5)) {
        let p = cols.len();
        let x = DMatrix::from_fn(30, p, |i, j| cols[j][i]);
        let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        if let Ok(report) = vif(&x, &names) {
            for e in report.entries {
                prop_assert!(e.vif >= 1.0 - 1e-12, "{}", e.vif);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sar_ignores_observation_order(seed in 0u64..1000, pseed in any::<u64>()) {
        let w = lattice_weights(7, true);
        let ctx = SarContext::new(&w).unwrap();
        let data = gen_sar_data(&w, &ctx, 0.3, &[1.5, -0.5, 2.0], 0.7, seed).unwrap();
        let mut perm: Vec<usize> = (0..w.len()).collect();
        shuffle(&mut perm, pseed);
        let a = fit_sar(&data.model, &w).unwrap();
        let b = fit_sar(&data.model.permuted(&perm), &w.permuted(&perm)).unwrap();
        prop_assert!((a.rho - b.rho).abs() < 1e-8, "{} vs {}", a.rho, b.rho);
        for (x, y) in a.beta.iter().zip(&b.beta) {
            prop_assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }
}

fn small_dml(seed: u64) -> (Table, DmlSpec) {
    let data = gen_dml_data(&DmlScenario {
        n: 600,
        seed,
        ..DmlScenario::default()
    })
    .unwrap();
    let mut spec = DmlSpec::new("y", "d", &["x1", "x2", "x3", "x4"]);
    spec.seed = seed;
    spec.gbt = GbtParams {
        n_trees: 60,
        subsample: 0.8,
        ..GbtParams::default()
    };
    (data, spec)
}

fn scale_column(t: &Table, col: &str, c: f64) -> Table {
    let mut out = Table::with_len(t.len());
    for name in t.names() {
        let mut v = t.column(name).unwrap().to_vec();
        if name == col {
            v.iter_mut().for_each(|x| *x *= c);
        }
        out.push_column(name.clone(), v).unwrap();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn dml_is_bitwise_deterministic(seed in 0u64..10_000) {
        let (data, spec) = small_dml(seed);
        prop_assert_eq!(run_dml(&data, &spec).unwrap(), run_dml(&data, &spec).unwrap());
    }

    #[test]
    fn dml_treatment_rescaling_is_exact(seed in 0u64..10_000, k in -3i32..4, negate in any::<bool>()) {
        let c = if negate { -(2f64.powi(k)) } else { 2f64.powi(k) };
        let (data, spec) = small_dml(seed);
        let base = run_dml(&data, &spec).unwrap();
        let scaled = run_dml(&scale_column(&data, "d", c), &spec).unwrap();
        prop_assert_eq!(scaled.theta, base.theta / c);
    }

    #[test]
    fn dml_treatment_rescaling_general(seed in 0u64..10_000, c in 0.2..7.0f64) {
        let (data, spec) = small_dml(seed);
        let base = run_dml(&data, &spec).unwrap();
        let scaled = run_dml(&scale_column(&data, "d", c), &spec).unwrap();
        // rounding can flip near-tied tree splits, so only power-of-two
        // factors are exact; anything else must stay well inside the noise
        let gap = (scaled.theta * c - base.theta).abs();
        prop_assert!(gap <= 0.25 * base.se, "gap {gap:e}, se {}", base.se);
    }
}

#[test]
fn treatment_residuals_are_orthogonal_to_covariates() {
    for seed in 0..3 {
        let data = gen_dml_data(&DmlScenario {
            seed,
            ..DmlScenario::default()
        })
        .unwrap();
        let spec = DmlSpec::new("y", "d", &["x1", "x2", "x3", "x4"]);
        let res = crossfit_residuals(&data, &spec).unwrap();
        for x in ["x1", "x2", "x3", "x4"] {
            let r = correlation(&res.d, data.column(x).unwrap());
            assert!(r.abs() < 0.1, "seed {seed}, {x}: r = {r}");
        }
    }
}

#[test]
fn sar_with_unit_permutation_keeps_log_likelihood() {
    let w = lattice_weights(6, false);
    let ctx = SarContext::new(&w).unwrap();
    let data = gen_sar_data(&w, &ctx, 0.5, &[1.0, 0.0], 1.0, 3).unwrap();
    let perm: Vec<usize> = (0..w.len()).rev().collect();
    let a = fit_sar(&data.model, &w).unwrap();
    let model: ModelMatrix = data.model.permuted(&perm);
    let b = fit_sar(&model, &w.permuted(&perm)).unwrap();
    assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-8);
}
