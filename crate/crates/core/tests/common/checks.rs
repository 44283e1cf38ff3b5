//! Criterion checks returning a verdict with a one-line detail.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spacetime_flow::adapt::{interpolate_solution, select_threshold, ThresholdMethod};
use spacetime_flow::discretization::{SlabInflow, SlabSystem, StateVector, Well};
use spacetime_flow::mesh::{LeafIndex, MeshTree, SpaceTimeBox, SpatialDim};
use spacetime_flow::petrophysics::{upwind_mobility, Phase, RockField};

use super::tpfa::{assemble, UniformGrid};
use super::*;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }

    pub fn all(parts: Vec<Verdict>) -> Verdict {
        Verdict {
            pass: parts.iter().all(|v| v.pass),
            detail: parts.iter().map(|v| v.detail.as_str()).collect::<Vec<_>>().join("; "),
        }
    }
}

pub fn mesh_oracle(trees: usize, seed: u64) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut bad, mut worst) = (0, 0, 0.0f64);
    for _ in 0..trees {
        let tree = random_tree(&mut rng, 0.35);
        let (c, m, rel) = check_tree(&tree);
        checked += c;
        bad += m;
        worst = worst.max(rel);
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        bad == 0 && worst <= 1e-12 && secs < 30.0,
        format!("{trees} trees, {checked} leaf/direction pairs, {bad} mismatches, max volume error {worst:.1e}, {secs:.2} s"),
    )
}

/// Library assembly against the textbook assembler on a uniform 4x4x4 grid.
pub fn tpfa_consistency(states: usize) -> Verdict {
    let (nx, ny, nt) = (4, 4, 4);
    let domain = SpaceTimeBox::new([0.0, 8.0], [0.0, 6.0], [0.0, 2.0]).unwrap();
    let tree = MeshTree::build_root_mesh(SpatialDim::Two, domain, 1.5, [nx, ny, nt], &[]).unwrap();
    let m = model(random_field(nx, ny, 17), [0.003, 0.007]);
    let mut inj = Well::injector("INJ", 0.3, 0.2, 2.0);
    inj.radius = 0.1;
    let mut prod = Well::producer("PROD", 7.5, 5.9, 995.0);
    prod.radius = 0.1;
    prod.skin = 0.5;
    let wells = vec![inj, prod];
    let initial = (1001.0, 0.35);
    let grid = UniformGrid {
        nx,
        ny,
        nt,
        dx: 2.0,
        dy: 1.5,
        dt: 0.5,
        h: 1.5,
        x0: 0.0,
        y0: 0.0,
    };
    let index = LeafIndex::new(&tree);
    let perm: Vec<usize> = index
        .leaves()
        .iter()
        .map(|&id| {
            let lo = tree.node(id).lattice.lo;
            grid.cell(lo[0] as usize, lo[1] as usize, lo[2] as usize)
        })
        .collect();
    let sys = SlabSystem::new(&tree, &m, &wells, &SlabInflow::Uniform { p_o: initial.0, s_w: initial.1 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..states {
        let lib_state = random_state(index.len(), &mut rng);
        let mut grid_state = StateVector::uniform(index.len(), 0.0, 0.0);
        for (k, &g) in perm.iter().enumerate() {
            grid_state.set(g, lib_state.p(k), lib_state.s(k));
        }
        let (r_ref, j_ref) = assemble(&grid, &m, &wells, initial, &grid_state);
        let (r, j) = sys.residual_and_jacobian(&lib_state).unwrap();
        let j = j.to_dense();
        let row = |k: usize, c: usize| 2 * perm[k] + c;
        for k in 0..index.len() {
            for c in 0..2 {
                let (a, b) = (r.as_slice()[2 * k + c], r_ref[row(k, c)]);
                worst = worst.max((a - b).abs() / b.abs().max(1e-300));
                for l in 0..index.len() {
                    for d in 0..2 {
                        let (a, b) = (j[2 * k + c][2 * l + d], j_ref[row(k, c)][row(l, d)]);
                        if a != b {
                            worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
                        }
                    }
                }
            }
        }
    }
    Verdict::new(
        worst <= 1e-10,
        format!("{states} random states on 4x4x4, max relative entry difference {worst:.1e}"),
    )
}

/// Analytic Jacobian against central differences on a heterogeneous
/// 3x3x3 slab. Entries are compared relative to their magnitude, floored
/// at `1e-6` of the row norm, where cancellation makes differences of
/// residuals meaningless.
pub fn jacobian_fd(states: usize) -> Verdict {
    let problem = small_problem([3, 3, 3], &[], 29);
    let tree = problem.slab_root_mesh(0).unwrap();
    let inflow = SlabInflow::Uniform { p_o: 1002.0, s_w: 0.4 };
    let sys = SlabSystem::new(&tree, &problem.model, &problem.wells, &inflow).unwrap();
    let n = sys.len();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut compared) = (0.0f64, 0usize);
    for _ in 0..states {
        let x = random_state(n, &mut rng);
        let jac = sys.jacobian(&x).unwrap().to_dense();
        for col in 0..2 * n {
            let h = if col % 2 == 0 { 1e-3 } else { 1e-6 };
            let mut xp = x.clone();
            xp.as_mut_slice()[col] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[col] -= h;
            let rp = sys.residual(&xp).unwrap();
            let rm = sys.residual(&xm).unwrap();
            for row in 0..2 * n {
                let fd = (rp.as_slice()[row] - rm.as_slice()[row]) / (2.0 * h);
                let a = jac[row][col];
                if a.abs().max(fd.abs()) <= 1e-12 {
                    continue;
                }
                let row_norm = jac[row].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let denom = a.abs().max(fd.abs()).max(1e-6 * row_norm);
                worst = worst.max((a - fd).abs() / denom);
                compared += 1;
            }
        }
    }
    Verdict::new(
        worst <= 1e-5,
        format!("{states} random states, {compared} entries, max relative difference {worst:.1e}"),
    )
}

fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn petrophysics_suite() -> Verdict {
    let start = Instant::now();
    let (w, o, rp, cp) = (water(), oil(), relperm(), capillary());
    let mut failed: Vec<u32> = Vec::new();
    let mut note = |cond: bool, line: u32| {
        if !cond && !failed.contains(&line) {
            failed.push(line);
        }
    };

    note(w.density(1000.0) == 64.0, line!());
    note((w.density(1001.0) - 64.000192).abs() < 1e-6, line!());
    for p in [900.0, 1000.0, 1100.0] {
        for ph in [w, o] {
            let (rho, d) = ph.density_with_derivative(p);
            note(rho > 0.0 && (d - fd(|q| ph.density(q), p, 1e-2)).abs() <= 1e-6 * d.abs(), line!());
        }
    }

    note(rp.rel_perm(Phase::Water, 0.2).0 == 0.0, line!());
    note((rp.rel_perm(Phase::Water, 0.8).0 - 1.0).abs() < 1e-15, line!());
    note((rp.rel_perm(Phase::Water, 0.5).0 - 0.25).abs() < 1e-15, line!());
    note((rp.rel_perm(Phase::Oil, 0.5).0 - 0.25).abs() < 1e-15, line!());
    let grid: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
    for pair in grid.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        note(rp.rel_perm(Phase::Water, b).0 >= rp.rel_perm(Phase::Water, a).0, line!());
        note(rp.rel_perm(Phase::Oil, b).0 <= rp.rel_perm(Phase::Oil, a).0, line!());
        note(cp.cap_pressure(rp.s_wirr, b).0 <= cp.cap_pressure(rp.s_wirr, a).0, line!());
    }
    for &s in &grid {
        for ph in [Phase::Water, Phase::Oil] {
            let (kr, d) = rp.rel_perm(ph, s);
            note((0.0..=1.0).contains(&kr), line!());
            if s < 0.2 || s > 0.8 {
                note(d == 0.0, line!());
            } else if s > 0.201 && s < 0.799 {
                let num = fd(|x| rp.rel_perm(ph, x).0, s, 1e-6);
                note((d - num).abs() <= 1e-6 * d.abs().max(1e-3), line!());
            }
        }
        if s > 0.21 {
            let (_, d) = cp.cap_pressure(rp.s_wirr, s);
            let num = fd(|x| cp.cap_pressure(rp.s_wirr, x).0, s, 1e-7);
            note((d - num).abs() <= 1e-5 * d.abs(), line!());
        }
    }

    note((cp.cap_pressure(0.2, 1.0).0 - 10.0).abs() < 1e-12, line!());
    note((cp.cap_pressure(0.2, 0.6).0 - 10.0 * 2f64.powf(0.2)).abs() < 1e-12, line!());
    let floor = cp.cap_pressure(0.2, 0.2 + 1e-6).0;
    note(cp.cap_pressure(0.2, 0.1).0 == floor && cp.cap_pressure(0.2, 0.0).0.is_finite(), line!());

    let l = (0.5, 64.0);
    let r = (0.7, 64.5);
    let expected = 0.5 * (64.0 + 64.5) * 0.25 / 0.3;
    note((upwind_mobility(&w, &rp, Phase::Water, l, r, 1.0) - expected).abs() <= 1e-12 * expected, line!());
    note(upwind_mobility(&w, &rp, Phase::Water, l, r, 0.0) == upwind_mobility(&w, &rp, Phase::Water, l, r, -1.0), line!());
    note(upwind_mobility(&w, &rp, Phase::Water, (0.2, 64.0), r, 1.0) == 0.0, line!());

    let secs = start.elapsed().as_secs_f64();
    let ok = failed.is_empty();
    let what = if ok { "ok".to_string() } else { format!("failed checks at checks.rs lines {failed:?}") };
    Verdict::new(ok && secs < 10.0, format!("petrophysics {what} in {secs:.3} s"))
}

pub fn threshold_suite() -> Verdict {
    let s = [0.01, 0.1, 1.0];
    let lm = select_threshold(&s, ThresholdMethod::LogMean).unwrap();
    let mlm = select_threshold(&s, ThresholdMethod::MeanLogMeanAverage).unwrap();
    let ok = (lm - 0.1).abs() < 1e-12 && (mlm - 0.235).abs() < 1e-12;
    Verdict::new(ok, format!("thresholds {lm:.6} and {mlm:.6}"))
}

/// Constant and linear reproduction, and agreement with the brute-force
/// interpolation on random trees.
pub fn interpolation_suite() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let domain = SpaceTimeBox::new([0.0, 8.0], [0.0, 4.0], [0.0, 2.0]).unwrap();

    let mut old = MeshTree::build_root_mesh(SpatialDim::Two, domain, 1.0, [4, 2, 2], &[2]).unwrap();
    let idx = LeafIndex::new(&old);
    let constant = StateVector::uniform(idx.len(), 1234.5, 0.37);
    let mut new = old.clone();
    for id in old.leaves().into_iter().step_by(3) {
        new.refine_cell(id).unwrap();
    }
    let out = interpolate_solution(&old, &constant, &new).unwrap();
    ok &= (0..out.len()).all(|i| out.p(i) == 1234.5 && out.s(i) == 0.37);

    // Linear in x on a uniform mesh with every cell refined.
    let lin = |x: f64, y: f64, t: f64| (1000.0 + 3.0 * x - 2.0 * y + 5.0 * t, 0.3 + 0.02 * x + 0.01 * y + 0.05 * t);
    let p: Vec<f64> = idx.leaves().iter().map(|&id| {
        let b = old.node(id).bounds;
        lin(b.center(0), b.center(1), b.center(2)).0
    }).collect();
    let s: Vec<f64> = idx.leaves().iter().map(|&id| {
        let b = old.node(id).bounds;
        lin(b.center(0), b.center(1), b.center(2)).1
    }).collect();
    let linear = StateVector::from_parts(&p, &s);
    let mut fine = old.clone();
    fine.refine_uniformly().unwrap();
    let out = interpolate_solution(&old, &linear, &fine).unwrap();
    let fidx = LeafIndex::new(&fine);
    for (i, &id) in fidx.leaves().iter().enumerate() {
        let b = fine.node(id).bounds;
        let (ep, es) = lin(b.center(0), b.center(1), b.center(2));
        ok &= (out.p(i) - ep).abs() < 1e-9 && (out.s(i) - es).abs() < 1e-12;
    }

    // Random trees against the brute-force transfer.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        old = random_tree(&mut rng, 0.3);
        if old.max_level() == 0 {
            continue;
        }
        let leaves = LeafIndex::new(&old);
        let st = StateVector::from_parts(
            &(0..leaves.len()).map(|_| rng.random_range(900.0..1100.0)).collect::<Vec<_>>(),
            &(0..leaves.len()).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>(),
        );
        let mut new = old.clone();
        for id in old.leaves() {
            if old.node(id).level < old.max_level() && rng.random_bool(0.4) {
                new.refine_cell(id).unwrap();
            }
        }
        let fast = interpolate_solution(&old, &st, &new).unwrap();
        let slow = brute_interpolation(&old, &st, &new);
        let nidx = LeafIndex::new(&new);
        let order = new.leaves();
        for (i, &id) in nidx.leaves().iter().enumerate() {
            let k = order.iter().position(|&x| x == id).unwrap();
            worst = worst.max((fast.p(i) - slow.p(k)).abs()).max((fast.s(i) - slow.s(k)).abs());
        }
    }
    ok &= worst < 1e-9;
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(ok && secs < 10.0, format!("interpolation {} (oracle max diff {worst:.1e}) in {secs:.3} s", if ok { "ok" } else { "FAILED" }))
}

/// Swapping the two cells of a face negates both phase fluxes.
pub fn antisymmetry_suite() -> Verdict {
    let start = Instant::now();
    let domain = SpaceTimeBox::new([0.0, 2.0], [0.0, 1.0], [0.0, 1.0]).unwrap();
    let tree = MeshTree::build_root_mesh(SpatialDim::One, domain, 1.0, [2, 1, 1], &[]).unwrap();
    let m = model(RockField::uniform(2, 1, 100.0, 0.2), [0.0, 0.0]);
    let sys = SlabSystem::new(&tree, &m, &[], &SlabInflow::Uniform { p_o: 1000.0, s_w: 0.2 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    for _ in 0..200 {
        let a = (rng.random_range(950.0..1050.0), rng.random_range(0.0..1.0));
        let b = (rng.random_range(950.0..1050.0), rng.random_range(0.0..1.0));
        let f = sys.phase_flux(0, &StateVector::from_parts(&[a.0, b.0], &[a.1, b.1]));
        let g = sys.phase_flux(0, &StateVector::from_parts(&[b.0, a.0], &[b.1, a.1]));
        ok &= f.oil == -g.oil && f.water == -g.water && f.aux_oil == -g.aux_oil && f.aux_water == -g.aux_water;
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(ok && secs < 10.0, format!("flux antisymmetry {} in {secs:.3} s", if ok { "ok" } else { "FAILED" }))
}
