//! Sequential local refinement.
//!
//! Each slab is solved on its coarsest mesh first. At every further level the
//! cells flagged by the residual and/or error indicators are split once, the
//! previous solution is interpolated onto the refined mesh, and Newton is
//! restarted from that guess. Cells containing wells are always kept at the
//! finest level.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::discretization::{outflow_cells, MassBalance, ResidualVector, SlabInflow, SlabSystem, StateVector, Well, WellSource};
use crate::error::{Error, Result};
use crate::mesh::{Direction, LeafIndex, MeshTree, NodeId, SpaceTimeBox, SpatialDim, TIME_AXIS};
use crate::petrophysics::FluidRockModel;
use crate::solver::{newton_solve, LinearSolver, NewtonConfig, NewtonReport};

/// Indicator values below this are ignored when choosing cells to refine.
pub const ANALYSIS_RANGE: (f64, f64) = (0.01, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorKind {
    Residual,
    Error,
}

/// Per-leaf indicator normalised to `[0, 1]`, in [`LeafIndex`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorField {
    pub kind: IndicatorKind,
    pub values: Vec<f64>,
}

impl IndicatorField {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMethod {
    /// Geometric mean of the samples.
    LogMean,
    /// Average of the arithmetic and geometric means.
    MeanLogMeanAverage,
}

/// Which indicators drive marking between levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkingMode {
    Residual,
    Error,
    Union,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefinementPlan {
    pub cells: BTreeSet<NodeId>,
}

impl RefinementPlan {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn union(mut self, other: RefinementPlan) -> RefinementPlan {
        self.cells.extend(other.cells);
        self
    }
}

fn normalized(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter().map(|x| x / max).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// `max(|R_total| / ||R_total||, |R_water| / ||R_water||)` per leaf, each
/// family normalised on its own.
pub fn residual_indicator(residual: &ResidualVector) -> IndicatorField {
    let n = residual.len();
    let total = normalized((0..n).map(|i| residual.total(i).abs()));
    let water = normalized((0..n).map(|i| residual.water(i).abs()));
    IndicatorField {
        kind: IndicatorKind::Residual,
        values: total.iter().zip(&water).map(|(a, b)| a.max(*b)).collect(),
    }
}

/// Normalised saturation-variation indicator.
///
/// The spatial change is the largest jump to any spatial neighbour, the
/// temporal change the jump to the overlap-weighted past state (zero on the
/// first time layer of the slab). Each squared family is normalised by its
/// maximum before they are combined, and the result is scaled to max 1.
pub fn error_indicator(tree: &MeshTree, state: &StateVector) -> Result<IndicatorField> {
    let index = LeafIndex::new(tree);
    if state.len() != index.len() {
        return Err(Error::Integrity(format!(
            "state has {} cells, mesh has {} leaves",
            state.len(),
            index.len()
        )));
    }
    let n = index.len();
    let mut ds2 = vec![0.0; n];
    let mut dt2 = vec![0.0; n];
    for (i, &id) in index.leaves().iter().enumerate() {
        let s = state.s(i);
        for &dir in Direction::active(tree.dim()).iter().filter(|d| d.is_spatial()) {
            for nb in tree.find_neighbors(id, dir) {
                let j = index.index_of(nb).expect("neighbour is a leaf");
                let d = (s - state.s(j)).abs();
                ds2[i] = f64::max(ds2[i], d * d);
            }
        }
        let past = tree.find_neighbors(id, Direction::Past);
        if !past.is_empty() {
            let own = tree.node(id).lattice;
            let (mut acc, mut wsum) = (0.0, 0.0);
            for nb in past {
                let b = tree.node(nb).lattice;
                let w = (own.overlap(&b, 0) * own.overlap(&b, 1)) as f64;
                acc += w * state.s(index.index_of(nb).expect("neighbour is a leaf"));
                wsum += w;
            }
            let d = s - acc / wsum;
            dt2[i] = d * d;
        }
    }
    let ns = normalized(ds2.into_iter());
    let nt = normalized(dt2.into_iter());
    let eps = ns.iter().zip(&nt).map(|(a, b)| (a + b).sqrt());
    Ok(IndicatorField {
        kind: IndicatorKind::Error,
        values: normalized(eps),
    })
}

/// Threshold over the samples inside [`ANALYSIS_RANGE`]; `None` if there are none.
pub fn select_threshold(samples: &[f64], method: ThresholdMethod) -> Option<f64> {
    let (lo, hi) = ANALYSIS_RANGE;
    let inside: Vec<f64> = samples.iter().copied().filter(|&v| v >= lo && v <= hi).collect();
    if inside.is_empty() {
        return None;
    }
    let n = inside.len() as f64;
    let log_mean = (inside.iter().map(|v| v.ln()).sum::<f64>() / n).exp();
    match method {
        ThresholdMethod::LogMean => Some(log_mean),
        ThresholdMethod::MeanLogMeanAverage => {
            let mean = inside.iter().sum::<f64>() / n;
            Some(0.5 * (mean + log_mean))
        }
    }
}

/// Leaves at or above `threshold` (and inside the analysis range) plus every
/// leaf containing a well, restricted to leaves that can still be refined.
pub fn mark_cells(indicator: &IndicatorField, threshold: Option<f64>, tree: &MeshTree, wells: &[Well]) -> RefinementPlan {
    let index = LeafIndex::new(tree);
    let mut plan = RefinementPlan::default();
    let max = tree.max_level();
    if let Some(th) = threshold {
        for (i, &v) in indicator.values.iter().enumerate() {
            let id = index.leaf(i);
            if v >= th && v >= ANALYSIS_RANGE.0 && tree.node(id).level < max {
                plan.cells.insert(id);
            }
        }
    }
    for well in wells {
        if let Some((ix, iy)) = tree.column_of(well.x, well.y) {
            for id in tree.leaves_in_column(ix, iy) {
                if tree.node(id).level < max {
                    plan.cells.insert(id);
                }
            }
        }
    }
    plan
}

/// Transfers a solution from `old_tree` onto `new_tree`, which must be a
/// refinement of it.
///
/// Unchanged leaves copy their values. A refined leaf's children get the
/// parent value plus, per axis, a slope times the offset of the child centre.
/// The slope is centred between the neighbour averages on both sides,
/// one-sided at the boundary, and zero without neighbours. Saturations are
/// clamped to `[0, 1]`.
pub fn interpolate_solution(old_tree: &MeshTree, old_state: &StateVector, new_tree: &MeshTree) -> Result<StateVector> {
    let old_index = LeafIndex::new(old_tree);
    if old_state.len() != old_index.len() {
        return Err(Error::Integrity("old state does not match old mesh".into()));
    }
    if old_tree.domain() != new_tree.domain()
        || old_tree.roots_dims() != new_tree.roots_dims()
        || old_tree.ratios() != new_tree.ratios()
        || new_tree.nodes().len() < old_tree.nodes().len()
    {
        return Err(Error::Integrity("new mesh is not a refinement of the old mesh".into()));
    }
    for (a, b) in old_tree.nodes().iter().zip(new_tree.nodes()) {
        if a.lattice != b.lattice || a.parent != b.parent {
            return Err(Error::Integrity("new mesh is not a refinement of the old mesh".into()));
        }
    }

    let axes: Vec<usize> = match old_tree.dim() {
        SpatialDim::One => vec![0, TIME_AXIS],
        SpatialDim::Two => vec![0, 1, TIME_AXIS],
    };
    let new_index = LeafIndex::new(new_tree);
    let mut out = StateVector::uniform(new_index.len(), 0.0, 0.0);
    let mut cache: std::collections::HashMap<NodeId, [(f64, f64); 3]> = Default::default();
    for (i, &id) in new_index.leaves().iter().enumerate() {
        let mut anc = id;
        let src = loop {
            if let Some(k) = old_index.index_of(anc) {
                break k;
            }
            anc = new_tree.node(anc).parent.ok_or_else(|| {
                Error::Integrity(format!("leaf {} has no ancestor among the old leaves", id.0))
            })?;
        };
        if anc == id {
            out.set(i, old_state.p(src), old_state.s(src));
            continue;
        }
        let slopes = *cache.entry(anc).or_insert_with(|| {
            let mut sl = [(0.0, 0.0); 3];
            for &axis in &axes {
                sl[axis] = axis_slope(old_tree, &old_index, old_state, anc, src, axis);
            }
            sl
        });
        let parent = old_tree.node(anc).bounds;
        let child = new_tree.node(id).bounds;
        let (mut p, mut s) = (old_state.p(src), old_state.s(src));
        for &axis in &axes {
            let off = child.center(axis) - parent.center(axis);
            p += slopes[axis].0 * off;
            s += slopes[axis].1 * off;
        }
        out.set(i, p, s.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// `(dP/daxis, dS/daxis)` at an old leaf.
fn axis_slope(tree: &MeshTree, index: &LeafIndex, state: &StateVector, id: NodeId, k: usize, axis: usize) -> (f64, f64) {
    let own = tree.node(id);
    let c0 = own.bounds.center(axis);
    let side = |dir: Direction| -> Option<(f64, f64, f64)> {
        let nbrs = tree.find_neighbors(id, dir);
        if nbrs.is_empty() {
            return None;
        }
        let (mut w_sum, mut c, mut p, mut s) = (0.0, 0.0, 0.0, 0.0);
        for nb in nbrs {
            let node = tree.node(nb);
            let w: f64 = (0..3)
                .filter(|&a| a != axis)
                .map(|a| own.lattice.overlap(&node.lattice, a) as f64)
                .product();
            let j = index.index_of(nb).expect("neighbour is a leaf");
            w_sum += w;
            c += w * node.bounds.center(axis);
            p += w * state.p(j);
            s += w * state.s(j);
        }
        Some((c / w_sum, p / w_sum, s / w_sum))
    };
    let minus = side(Direction::minus(axis));
    let plus = side(Direction::plus(axis));
    let here = (c0, state.p(k), state.s(k));
    let (a, b) = match (minus, plus) {
        (Some(m), Some(p)) => (m, p),
        (Some(m), None) => (m, here),
        (None, Some(p)) => (here, p),
        (None, None) => return (0.0, 0.0),
    };
    let dx = b.0 - a.0;
    ((b.1 - a.1) / dx, (b.2 - a.2) / dx)
}

/// Full description of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub dim: SpatialDim,
    pub domain: SpaceTimeBox,
    pub thickness: f64,
    /// Root grid `(nx, ny, nt)` over the whole horizon.
    pub roots: [usize; 3],
    pub ratios: Vec<usize>,
    /// Length of one sequentially solved time slab (days).
    pub slab_length: f64,
    pub model: FluidRockModel,
    pub wells: Vec<Well>,
    /// Initial `(P_o, S_w)`.
    pub initial: (f64, f64),
    pub newton: NewtonConfig,
    pub marking: MarkingMode,
}

impl Problem {
    pub fn max_level(&self) -> usize {
        self.ratios.len()
    }

    /// Finest spatial grid `(nx, ny)`.
    pub fn finest_spatial_dims(&self) -> (usize, usize) {
        let r: usize = self.ratios.iter().product();
        match self.dim {
            SpatialDim::One => (self.roots[0] * r, 1),
            SpatialDim::Two => (self.roots[0] * r, self.roots[1] * r),
        }
    }

    /// Number of root time cells per slab.
    pub fn slab_roots(&self) -> Result<usize> {
        let dt = self.domain.duration() / self.roots[2] as f64;
        let k = self.slab_length / dt;
        let kr = k.round();
        if !(kr >= 1.0) || (k - kr).abs() > 1e-9 * k.max(1.0) || self.roots[2] % (kr as usize) != 0 {
            return Err(Error::config(
                "mesh.slab_length",
                format!(
                    "slab length {} must be a whole number of root time steps ({dt}) dividing the horizon",
                    self.slab_length
                ),
            ));
        }
        Ok(kr as usize)
    }

    pub fn slab_count(&self) -> Result<usize> {
        Ok(self.roots[2] / self.slab_roots()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.model.validate()?;
        self.newton.validate()?;
        let (nx, ny) = self.finest_spatial_dims();
        if self.model.rock.nx != nx || self.model.rock.ny != ny {
            return Err(Error::config(
                "rock",
                format!(
                    "field is {}x{} but the finest grid is {nx}x{ny}",
                    self.model.rock.nx, self.model.rock.ny
                ),
            ));
        }
        for (w, well) in self.wells.iter().enumerate() {
            well.validate(&format!("wells[{w}]"))?;
            if !self.domain.contains_point(well.x, well.y) {
                return Err(Error::config(
                    format!("wells[{w}]"),
                    format!("location ({}, {}) outside domain", well.x, well.y),
                ));
            }
        }
        let (p, s) = self.initial;
        if !p.is_finite() {
            return Err(Error::config("initial.p_o", "must be finite"));
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::config("initial.s_w", "must be in [0, 1]"));
        }
        self.slab_roots()?;
        MeshTree::build_root_mesh(self.dim, self.domain, self.thickness, self.roots, &self.ratios)?;
        Ok(())
    }

    /// Level-0 mesh of slab `k` (without well pre-refinement).
    pub fn slab_root_mesh(&self, k: usize) -> Result<MeshTree> {
        let nt = self.slab_roots()?;
        let dt = self.domain.duration() / self.roots[2] as f64;
        let t0 = self.domain.t_lo + (k * nt) as f64 * dt;
        let t1 = if (k + 1) * nt == self.roots[2] {
            self.domain.t_hi
        } else {
            self.domain.t_lo + ((k + 1) * nt) as f64 * dt
        };
        let mut domain = self.domain;
        domain.t_lo = t0;
        domain.t_hi = t1;
        MeshTree::build_root_mesh(
            self.dim,
            domain,
            self.thickness,
            [self.roots[0], self.roots[1], nt],
            &self.ratios,
        )
    }

    /// Level-0 slab mesh with every well column refined to the finest level.
    pub fn slab_start_mesh(&self, k: usize) -> Result<MeshTree> {
        let mut tree = self.slab_root_mesh(k)?;
        for well in &self.wells {
            tree.refine_column_to_max(well.x, well.y)?;
        }
        Ok(tree)
    }

    pub fn initial_inflow(&self) -> SlabInflow {
        SlabInflow::Uniform {
            p_o: self.initial.0,
            s_w: self.initial.1,
        }
    }

    /// State on `tree` obtained by spreading the inflow state over time.
    pub fn inflow_guess(&self, tree: &MeshTree, inflow: &SlabInflow) -> StateVector {
        let index = LeafIndex::new(tree);
        let mut st = StateVector::uniform(index.len(), 0.0, 0.0);
        for (i, &id) in index.leaves().iter().enumerate() {
            let (p, s) = inflow.average_over(&tree.node(id).lattice);
            st.set(i, p, s);
        }
        st
    }
}

/// Solution of one level of one slab.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub level: usize,
    pub tree: MeshTree,
    pub guess: StateVector,
    pub state: StateVector,
    pub newton: NewtonReport,
    /// Indicator of the initial guess on this level's mesh.
    pub residual_indicator: IndicatorField,
    /// Indicator of this level's solution.
    pub error_indicator: IndicatorField,
}

#[derive(Debug, Clone)]
pub struct SlabResult {
    pub index: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub levels: Vec<LevelResult>,
    pub balance: MassBalance,
    pub well_sources: Vec<WellSource>,
}

impl SlabResult {
    pub fn finest(&self) -> &LevelResult {
        self.levels.last().expect("slab has at least one level")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub slab: usize,
    pub level: usize,
    pub leaves: usize,
    pub newton_iterations: usize,
    pub converged: bool,
    pub halved_steps: usize,
    pub residual_history: Vec<f64>,
    pub assembly_s: f64,
    pub linear_solve_s: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WellTotals {
    pub name: String,
    pub water_mass_lb: f64,
    pub oil_mass_lb: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlabBalanceReport {
    pub slab: usize,
    pub initial_water_lb: f64,
    pub final_water_lb: f64,
    pub injected_water_lb: f64,
    pub produced_water_lb: f64,
}

/// Efficiency comparison against a reference (usually uniform-fine) run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub leaf_ratio: f64,
    pub assembly_plus_solve_ratio: f64,
    pub wall_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub levels: Vec<LevelReport>,
    /// Space-time leaves of the final meshes summed over slabs.
    pub final_leaves: usize,
    pub total_assembly_s: f64,
    pub total_linear_solve_s: f64,
    pub other_s: f64,
    pub wall_s: f64,
    pub wells: Vec<WellTotals>,
    pub mass_balance: Vec<SlabBalanceReport>,
    /// `(slab, level)` where the run stopped without convergence.
    pub failure: Option<(usize, usize)>,
    pub comparison: Option<Comparison>,
}

impl RunReport {
    pub fn assembly_plus_solve_s(&self) -> f64 {
        self.total_assembly_s + self.total_linear_solve_s
    }

    /// Fills `comparison` relative to `reference`.
    pub fn compare_with(&mut self, reference: &RunReport) {
        self.comparison = Some(Comparison {
            leaf_ratio: self.final_leaves as f64 / reference.final_leaves as f64,
            assembly_plus_solve_ratio: self.assembly_plus_solve_s() / reference.assembly_plus_solve_s(),
            wall_ratio: self.wall_s / reference.wall_s,
        });
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub slabs: Vec<SlabResult>,
    pub report: RunReport,
}

impl RunOutcome {
    /// Fails if the run was aborted by a finest-level Newton failure.
    pub fn check(&self) -> Result<()> {
        match self.report.failure {
            None => Ok(()),
            Some((slab, level)) => {
                let rep = &self.slabs[slab].levels.last().expect("level").newton;
                Err(Error::NonConvergence {
                    slab,
                    level,
                    iterations: rep.iterations,
                    residual: rep.residual_norm_history.last().copied().unwrap_or(f64::NAN),
                })
            }
        }
    }
}

struct LevelSolve {
    result: LevelResult,
    system_balance: MassBalance,
    well_sources: Vec<WellSource>,
    outflow: SlabInflow,
}

fn solve_level(
    problem: &Problem,
    tree: MeshTree,
    level: usize,
    inflow: &SlabInflow,
    guess: StateVector,
    linear: &dyn LinearSolver,
) -> Result<LevelSolve> {
    let system = SlabSystem::new(&tree, &problem.model, &problem.wells, inflow)?;
    let residual_ind = residual_indicator(&system.residual(&guess)?);
    let (state, newton) = newton_solve(&system, guess.clone(), &problem.newton, linear)?;
    let error_ind = error_indicator(&tree, &state)?;
    let balance = system.water_balance(&state)?;
    let well_sources = system.well_sources(&state);
    let outflow = outflow_cells(&tree, &system, &state);
    Ok(LevelSolve {
        result: LevelResult {
            level,
            tree,
            guess,
            state,
            newton,
            residual_indicator: residual_ind,
            error_indicator: error_ind,
        },
        system_balance: balance,
        well_sources,
        outflow,
    })
}

/// Refinement plan for the next level from the indicators of the current one.
pub fn plan_next_level(problem: &Problem, current: &LevelResult) -> RefinementPlan {
    let tree = &current.tree;
    let by_residual = || {
        let th = select_threshold(&current.residual_indicator.values, ThresholdMethod::LogMean);
        mark_cells(&current.residual_indicator, th, tree, &problem.wells)
    };
    let by_error = || {
        let th = select_threshold(&current.error_indicator.values, ThresholdMethod::MeanLogMeanAverage);
        mark_cells(&current.error_indicator, th, tree, &problem.wells)
    };
    match problem.marking {
        MarkingMode::Residual => by_residual(),
        MarkingMode::Error => by_error(),
        MarkingMode::Union => by_residual().union(by_error()),
    }
}

fn level_report(slab: usize, r: &LevelResult) -> LevelReport {
    LevelReport {
        slab,
        level: r.level,
        leaves: r.tree.leaf_count(),
        newton_iterations: r.newton.iterations,
        converged: r.newton.converged,
        halved_steps: r.newton.halved_steps.len(),
        residual_history: r.newton.residual_norm_history.clone(),
        assembly_s: r.newton.assembly_time.as_secs_f64(),
        linear_solve_s: r.newton.linear_solve_time.as_secs_f64(),
        wall_s: r.newton.wall_time.as_secs_f64(),
    }
}

fn finish_report(problem: &Problem, mode: &str, slabs: &[SlabResult], failure: Option<(usize, usize)>, wall: Duration) -> RunReport {
    let mut report = RunReport {
        mode: mode.to_string(),
        failure,
        wall_s: wall.as_secs_f64(),
        ..RunReport::default()
    };
    let mut wells: Vec<WellTotals> = problem
        .wells
        .iter()
        .map(|w| WellTotals {
            name: w.name.clone(),
            ..WellTotals::default()
        })
        .collect();
    for slab in slabs {
        for lvl in &slab.levels {
            let lr = level_report(slab.index, lvl);
            report.total_assembly_s += lr.assembly_s;
            report.total_linear_solve_s += lr.linear_solve_s;
            report.levels.push(lr);
        }
        report.final_leaves += slab.finest().tree.leaf_count();
        for src in &slab.well_sources {
            wells[src.well].water_mass_lb += src.water;
            wells[src.well].oil_mass_lb += src.oil;
        }
        report.mass_balance.push(SlabBalanceReport {
            slab: slab.index,
            initial_water_lb: slab.balance.initial,
            final_water_lb: slab.balance.final_mass,
            injected_water_lb: slab.balance.injected,
            produced_water_lb: slab.balance.produced,
        });
    }
    report.wells = wells;
    report.other_s = (report.wall_s - report.total_assembly_s - report.total_linear_solve_s).max(0.0);
    report
}

/// Runs the sequential refinement solver over every slab.
///
/// A Newton failure on the finest level stops the run; the partial outcome
/// is returned with `report.failure` set (see [`RunOutcome::check`]).
pub fn sequential_solve(problem: &Problem, linear: &dyn LinearSolver) -> Result<RunOutcome> {
    problem.validate()?;
    let start = Instant::now();
    let mut inflow = problem.initial_inflow();
    let mut slabs = Vec::new();
    let mut failure = None;
    for k in 0..problem.slab_count()? {
        let tree = problem.slab_start_mesh(k)?;
        let guess = problem.inflow_guess(&tree, &inflow);
        let mut solved = solve_level(problem, tree, 0, &inflow, guess, linear)?;
        let mut levels = Vec::new();
        for level in 1..=problem.max_level() {
            let plan = plan_next_level(problem, &solved.result);
            let old_tree = &solved.result.tree;
            let mut tree = old_tree.clone();
            for &id in &plan.cells {
                tree.refine_cell(id)?;
            }
            let guess = interpolate_solution(old_tree, &solved.result.state, &tree)?;
            let next = solve_level(problem, tree, level, &inflow, guess, linear)?;
            levels.push(std::mem::replace(&mut solved, next).result);
        }
        let converged = solved.result.newton.converged;
        let domain = *solved.result.tree.domain();
        levels.push(solved.result);
        slabs.push(SlabResult {
            index: k,
            t_lo: domain.t_lo,
            t_hi: domain.t_hi,
            levels,
            balance: solved.system_balance,
            well_sources: solved.well_sources,
        });
        if !converged {
            failure = Some((k, problem.max_level()));
            break;
        }
        inflow = solved.outflow;
    }
    let report = finish_report(problem, "adaptive", &slabs, failure, start.elapsed());
    Ok(RunOutcome { slabs, report })
}

/// Solves every slab on the mesh refined to `max_level` everywhere, starting
/// Newton from the inflow state.
pub fn uniform_solve(problem: &Problem, linear: &dyn LinearSolver) -> Result<RunOutcome> {
    problem.validate()?;
    let start = Instant::now();
    let mut inflow = problem.initial_inflow();
    let mut slabs = Vec::new();
    let mut failure = None;
    for k in 0..problem.slab_count()? {
        let mut tree = problem.slab_root_mesh(k)?;
        tree.refine_uniformly()?;
        let guess = problem.inflow_guess(&tree, &inflow);
        let solved = solve_level(problem, tree, problem.max_level(), &inflow, guess, linear)?;
        let converged = solved.result.newton.converged;
        let domain = *solved.result.tree.domain();
        slabs.push(SlabResult {
            index: k,
            t_lo: domain.t_lo,
            t_hi: domain.t_hi,
            levels: vec![solved.result],
            balance: solved.system_balance,
            well_sources: solved.well_sources,
        });
        if !converged {
            failure = Some((k, problem.max_level()));
            break;
        }
        inflow = solved.outflow;
    }
    let report = finish_report(problem, "uniform", &slabs, failure, start.elapsed());
    Ok(RunOutcome { slabs, report })
}

/// Newton solve of one slab on a given mesh from a given guess.
pub fn solve_on_mesh(
    problem: &Problem,
    tree: &MeshTree,
    inflow: &SlabInflow,
    guess: StateVector,
    linear: &dyn LinearSolver,
) -> Result<(StateVector, NewtonReport)> {
    let system = SlabSystem::new(tree, &problem.model, &problem.wells, inflow)?;
    newton_solve(&system, guess, &problem.newton, linear)
}

/// Inflow state that entered slab `k` of a finished run.
pub fn slab_inflow(problem: &Problem, outcome: &RunOutcome, k: usize) -> Result<SlabInflow> {
    if k == 0 {
        return Ok(problem.initial_inflow());
    }
    let prev = outcome.slabs[k - 1].finest();
    let inflow = slab_inflow(problem, outcome, k - 1)?;
    let system = SlabSystem::new(&prev.tree, &problem.model, &problem.wells, &inflow)?;
    Ok(outflow_cells(&prev.tree, &system, &prev.state))
}
