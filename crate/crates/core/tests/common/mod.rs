//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod dual;
pub mod tpfa;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spacetime_flow::adapt::{Problem, MarkingMode};
use spacetime_flow::discretization::{StateVector, Well};
use spacetime_flow::io::load_config;
use spacetime_flow::mesh::{Direction, LatticeBox, MeshTree, NodeId, SpaceTimeBox, SpatialDim};
use spacetime_flow::petrophysics::{CapPressureParams, FluidPhaseParams, FluidRockModel, RelPermParams, RockField};
use spacetime_flow::solver::NewtonConfig;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn desk_problem(name: &str) -> Problem {
    load_config(&configs_dir().join(name)).unwrap().to_problem().unwrap()
}

pub fn water() -> FluidPhaseParams {
    FluidPhaseParams {
        rho_ref: 64.0,
        p_ref: 1000.0,
        c_f: 3e-6,
        mu: 0.3,
    }
}

pub fn oil() -> FluidPhaseParams {
    FluidPhaseParams {
        rho_ref: 53.0,
        p_ref: 1000.0,
        c_f: 1e-4,
        mu: 3.0,
    }
}

pub fn relperm() -> RelPermParams {
    RelPermParams {
        s_wirr: 0.2,
        s_or: 0.2,
        krw0: 1.0,
        kro0: 1.0,
        n_w: 2.0,
        n_o: 2.0,
    }
}

pub fn capillary() -> CapPressureParams {
    CapPressureParams {
        p_en: 10.0,
        l_cow: 0.2,
        delta_reg: 1e-6,
    }
}

/// Log-uniform anisotropic permeability and uniform porosity per cell.
pub fn random_field(nx: usize, ny: usize, seed: u64) -> RockField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = nx * ny;
    let mut lk = || (0..n).map(|_| 10f64.powf(rng.random_range(1.0..3.0))).collect::<Vec<_>>();
    let kx = lk();
    let ky = lk();
    let phi = (0..n).map(|_| rng.random_range(0.1..0.3)).collect();
    RockField { nx, ny, kx, ky, phi }
}

pub fn model(rock: RockField, gravity: [f64; 2]) -> FluidRockModel {
    FluidRockModel {
        water: water(),
        oil: oil(),
        relperm: relperm(),
        capillary: capillary(),
        rock,
        gravity,
    }
}

/// Uniform-root problem with an injector and a producer in opposite corners.
pub fn small_problem(dims: [usize; 3], ratios: &[usize], seed: u64) -> Problem {
    let r: usize = ratios.iter().product();
    let (lx, ly) = (dims[0] as f64 * 2.0, dims[1] as f64 * 2.0);
    let mut inj = Well::injector("INJ", 0.1, 0.1, 0.5);
    let mut prod = Well::producer("PROD", lx - 0.1, ly - 0.1, 1000.0);
    inj.radius = 0.01;
    prod.radius = 0.01;
    Problem {
        dim: SpatialDim::Two,
        domain: SpaceTimeBox::new([0.0, lx], [0.0, ly], [0.0, dims[2] as f64]).unwrap(),
        thickness: 1.0,
        roots: dims,
        ratios: ratios.to_vec(),
        slab_length: dims[2] as f64,
        model: model(random_field(dims[0] * r, dims[1] * r, seed), [0.0, 0.0]),
        wells: vec![inj, prod],
        initial: (1000.0, 0.2),
        newton: NewtonConfig::default(),
        marking: MarkingMode::Union,
    }
}

/// State with pressures in `1000 +/- 20` psi and saturations inside the
/// smooth part of the saturation functions.
pub fn random_state(n: usize, rng: &mut ChaCha8Rng) -> StateVector {
    let p: Vec<f64> = (0..n).map(|_| 1000.0 + rng.random_range(-20.0..20.0)).collect();
    let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..0.7)).collect();
    StateVector::from_parts(&p, &s)
}

/// Random refinement tree: random dims, mixed ratios with a total ratio of
/// at most 12, each leaf refined with probability `prob` per sweep.
pub fn random_tree(rng: &mut ChaCha8Rng, prob: f64) -> MeshTree {
    let dim = if rng.random_bool(0.5) { SpatialDim::One } else { SpatialDim::Two };
    let levels = rng.random_range(0..=3);
    let mut ratios: Vec<usize> = Vec::new();
    for _ in 0..levels {
        let r = rng.random_range(2..=3);
        ratios.push(if ratios.iter().product::<usize>() * r > 12 { 2 } else { r });
    }
    let nx = rng.random_range(1..=3);
    let ny = if dim == SpatialDim::Two { rng.random_range(1..=3) } else { 1 };
    let nt = rng.random_range(1..=3);
    let y = if dim == SpatialDim::Two { [-1.0, 2.5] } else { [0.0, 1.0] };
    let domain = SpaceTimeBox::new([0.0, 3.0 * nx as f64], y, [2.0, 2.0 + 0.7 * nt as f64]).unwrap();
    let mut tree = MeshTree::build_root_mesh(dim, domain, 1.3, [nx, ny, nt], &ratios).unwrap();
    for _ in 0..levels {
        for id in tree.leaves() {
            if tree.node(id).level < tree.max_level() && rng.random_bool(prob) {
                tree.refine_cell(id).unwrap();
            }
        }
    }
    tree
}

fn active_axes(dim: SpatialDim) -> Vec<usize> {
    match dim {
        SpatialDim::One => vec![0, 2],
        SpatialDim::Two => vec![0, 1, 2],
    }
}

/// Leaves sharing a facet of positive measure with `id` in `dir`, found by
/// testing every leaf geometrically.
pub fn brute_neighbors(tree: &MeshTree, id: NodeId, dir: Direction) -> BTreeSet<NodeId> {
    let a: LatticeBox = tree.node(id).lattice;
    let axis = dir.axis();
    tree.leaves()
        .into_iter()
        .filter(|&b| b != id)
        .filter(|&b| {
            let lb = tree.node(b).lattice;
            let touches = if dir.is_plus() { lb.lo[axis] == a.hi[axis] } else { lb.hi[axis] == a.lo[axis] };
            touches
                && active_axes(tree.dim())
                    .into_iter()
                    .filter(|&o| o != axis)
                    .all(|o| a.lo[o].max(lb.lo[o]) < a.hi[o].min(lb.hi[o]))
        })
        .collect()
}

/// Counts `(leaf, direction)` pairs where `find_neighbors` disagrees with
/// the brute-force oracle, and the relative volume error of the leaves.
pub fn check_tree(tree: &MeshTree) -> (usize, usize, f64) {
    let mut checked = 0;
    let mut mismatches = 0;
    for id in tree.leaves() {
        for &dir in Direction::active(tree.dim()) {
            let fast: BTreeSet<NodeId> = tree.find_neighbors(id, dir).into_iter().collect();
            if fast != brute_neighbors(tree, id, dir) {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    let total: f64 = tree.leaves().iter().map(|&id| tree.space_time_measure(id)).sum();
    let rel = (total - tree.domain_measure()).abs() / tree.domain_measure();
    (checked, mismatches, rel)
}

/// Independent re-implementation of the refinement interpolation: the old
/// cell of each new leaf is found by containment, neighbour averages by a
/// scan over all old leaves.
pub fn brute_interpolation(old: &MeshTree, old_state: &StateVector, new: &MeshTree) -> StateVector {
    let old_leaves = old.leaves();
    let pos = |id: NodeId| old_leaves.iter().position(|&x| x == id).unwrap();
    let new_leaves = new.leaves();
    let mut out = StateVector::uniform(new_leaves.len(), 0.0, 0.0);
    for (i, &nid) in new_leaves.iter().enumerate() {
        let nl = new.node(nid).lattice;
        let src = *old_leaves.iter().find(|&&o| old.node(o).lattice.contains(&nl)).unwrap();
        let k = pos(src);
        let (mut p, mut s) = (old_state.p(k), old_state.s(k));
        if old.node(src).lattice != nl {
            let ob = old.node(src).bounds;
            let nb = new.node(nid).bounds;
            for axis in active_axes(old.dim()) {
                let side = |plus: bool| -> Option<(f64, f64, f64)> {
                    let dir = if plus { Direction::plus(axis) } else { Direction::minus(axis) };
                    let nbrs = brute_neighbors(old, src, dir);
                    if nbrs.is_empty() {
                        return None;
                    }
                    let a = old.node(src).lattice;
                    let (mut w, mut c, mut pp, mut ss) = (0.0, 0.0, 0.0, 0.0);
                    for nb in nbrs {
                        let b = old.node(nb).lattice;
                        let wt: f64 = (0..3)
                            .filter(|&o| o != axis)
                            .map(|o| (a.hi[o].min(b.hi[o]) - a.lo[o].max(b.lo[o])) as f64)
                            .product();
                        let j = pos(nb);
                        w += wt;
                        c += wt * old.node(nb).bounds.center(axis);
                        pp += wt * old_state.p(j);
                        ss += wt * old_state.s(j);
                    }
                    Some((c / w, pp / w, ss / w))
                };
                let here = (ob.center(axis), old_state.p(k), old_state.s(k));
                let (lo, hi) = match (side(false), side(true)) {
                    (Some(a), Some(b)) => (a, b),
                    (Some(a), None) => (a, here),
                    (None, Some(b)) => (here, b),
                    (None, None) => continue,
                };
                let off = nb.center(axis) - ob.center(axis);
                p += (hi.1 - lo.1) / (hi.0 - lo.0) * off;
                s += (hi.2 - lo.2) / (hi.0 - lo.0) * off;
            }
        }
        out.set(i, p, s.clamp(0.0, 1.0));
    }
    out
}
