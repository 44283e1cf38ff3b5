//! Monolithic residual and Jacobian of one space-time slab.
//!
//! Unknowns are the oil pressure `P_o` (psi) and water saturation `S_w` of
//! every leaf. Phase velocities are eliminated locally, which turns the
//! lowest-order mixed space-time scheme into upwinded two-point fluxes over
//! space-time faces plus a backward-Euler style accumulation against the
//! cells (or inflow state) in the past. Every equation is a mass balance in
//! pounds over the cell's space-time extent.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mesh::{Direction, FaceAdjacency, LatticeBox, LeafIndex, MeshTree, NodeId, TIME_AXIS};
use crate::petrophysics::{FluidRockModel, Phase, RockProps};

/// Converts `md * ft * psi / (cp * ft^2)` into `ft / day`.
pub const DARCY_CONSTANT: f64 = 6.328e-3;

/// Per-leaf `(P_o, S_w)` pairs stored interleaved, ordered by [`LeafIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    values: Vec<f64>,
}

impl StateVector {
    pub fn uniform(cells: usize, p_o: f64, s_w: f64) -> Self {
        let mut values = Vec::with_capacity(2 * cells);
        for _ in 0..cells {
            values.push(p_o);
            values.push(s_w);
        }
        StateVector { values }
    }

    pub fn from_parts(p_o: &[f64], s_w: &[f64]) -> Self {
        assert_eq!(p_o.len(), s_w.len());
        let values = p_o.iter().zip(s_w).flat_map(|(&p, &s)| [p, s]).collect();
        StateVector { values }
    }

    pub fn from_interleaved(values: Vec<f64>) -> Self {
        assert!(values.len() % 2 == 0);
        StateVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn p(&self, i: usize) -> f64 {
        self.values[2 * i]
    }

    pub fn s(&self, i: usize) -> f64 {
        self.values[2 * i + 1]
    }

    pub fn set(&mut self, i: usize, p_o: f64, s_w: f64) {
        self.values[2 * i] = p_o;
        self.values[2 * i + 1] = s_w;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn pressures(&self) -> Vec<f64> {
        self.values.iter().step_by(2).copied().collect()
    }

    pub fn saturations(&self) -> Vec<f64> {
        self.values.iter().skip(1).step_by(2).copied().collect()
    }

    pub fn clamp_saturations(&mut self) {
        for s in self.values.iter_mut().skip(1).step_by(2) {
            *s = s.clamp(0.0, 1.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-leaf `(R_total, R_water)` mass residuals in lb, interleaved like the state.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    values: Vec<f64>,
}

impl ResidualVector {
    fn zeros(cells: usize) -> Self {
        ResidualVector {
            values: vec![0.0; 2 * cells],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        assert!(values.len() % 2 == 0);
        ResidualVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self, i: usize) -> f64 {
        self.values[2 * i]
    }

    pub fn water(&self, i: usize) -> f64 {
        self.values[2 * i + 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Sparse `2N x 2N` Jacobian stored as 2x2 blocks in block-CSR layout.
///
/// Block `(i, j)` holds `d(R_total, R_water)_i / d(P_o, S_w)_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<[[f64; 2]; 2]>,
}

impl JacobianMatrix {
    /// Builds a zero matrix with the given block pattern (rows of column lists).
    pub fn from_pattern(mut pattern: Vec<Vec<usize>>) -> Self {
        let mut row_ptr = Vec::with_capacity(pattern.len() + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in pattern.iter_mut() {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let blocks = vec![[[0.0; 2]; 2]; cols.len()];
        JacobianMatrix { row_ptr, cols, blocks }
    }

    /// Builds a matrix from a dense square array of even dimension.
    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let nb = a.len() / 2;
        let mut pattern = vec![Vec::new(); nb];
        for (r, row) in a.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    pattern[r / 2].push(c / 2);
                }
            }
        }
        let mut out = JacobianMatrix::from_pattern(pattern);
        for (r, row) in a.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    out.block_mut(r / 2, c / 2)[r % 2][c % 2] = v;
                }
            }
        }
        out
    }

    /// Number of scalar rows (`2N`).
    pub fn dim(&self) -> usize {
        2 * (self.row_ptr.len() - 1)
    }

    pub fn block_count(&self) -> usize {
        self.cols.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&[[f64; 2]; 2]> {
        self.position(i, j).map(|k| &self.blocks[k])
    }

    /// Panics if `(i, j)` is outside the pattern.
    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut [[f64; 2]; 2] {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("block ({i}, {j}) outside Jacobian pattern"));
        &mut self.blocks[k]
    }

    /// Scalar entry; zero outside the pattern.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.block(row / 2, col / 2).map_or(0.0, |b| b[row % 2][col % 2])
    }

    pub fn has_block(&self, i: usize, j: usize) -> bool {
        self.position(i, j).is_some()
    }

    /// Block pattern as `(i, j)` pairs in row-major order.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        (0..self.row_ptr.len() - 1)
            .flat_map(|i| self.cols[self.row_ptr[i]..self.row_ptr[i + 1]].iter().map(move |&j| (i, j)))
            .collect()
    }

    /// Stored scalar entries `(row, col, value)`, including structural zeros.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(4 * self.blocks.len());
        for i in 0..self.row_ptr.len() - 1 {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                for a in 0..2 {
                    for b in 0..2 {
                        out.push((2 * i + a, 2 * j + b, self.blocks[k][a][b]));
                    }
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for i in 0..self.row_ptr.len() - 1 {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let b = &self.blocks[k];
                y[2 * i] += b[0][0] * x[2 * j] + b[0][1] * x[2 * j + 1];
                y[2 * i + 1] += b[1][0] * x[2 * j] + b[1][1] * x[2 * j + 1];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut a = vec![vec![0.0; n]; n];
        for (r, c, v) in self.triplets() {
            a[r][c] = v;
        }
        a
    }

    fn clear(&mut self) {
        self.blocks.iter_mut().for_each(|b| *b = [[0.0; 2]; 2]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WellKind {
    /// Water injection at a fixed volumetric rate (ft^3/day at reference density).
    RateInjector { rate: f64 },
    /// Production at a fixed bottom-hole pressure (psi).
    BhpProducer { bhp: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Well {
    pub name: String,
    pub kind: WellKind,
    pub x: f64,
    pub y: f64,
    /// Wellbore radius (ft).
    pub radius: f64,
    pub skin: f64,
}

impl Well {
    pub fn injector(name: &str, x: f64, y: f64, rate: f64) -> Self {
        Well {
            name: name.to_string(),
            kind: WellKind::RateInjector { rate },
            x,
            y,
            radius: 0.25,
            skin: 0.0,
        }
    }

    pub fn producer(name: &str, x: f64, y: f64, bhp: f64) -> Self {
        Well {
            name: name.to_string(),
            kind: WellKind::BhpProducer { bhp },
            x,
            y,
            radius: 0.25,
            skin: 0.0,
        }
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        let value = match self.kind {
            WellKind::RateInjector { rate } => rate,
            WellKind::BhpProducer { bhp } => bhp,
        };
        if !value.is_finite() {
            return Err(Error::config(key, "control value must be finite"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::config(format!("{key}.radius"), "must be positive"));
        }
        if !self.skin.is_finite() {
            return Err(Error::config(format!("{key}.skin"), "must be finite"));
        }
        Ok(())
    }
}

/// Peaceman well index `beta 2 pi sqrt(kx ky) h / (ln(r_e / r_w) + skin)`
/// for a cell of size `dx x dy x h`.
pub fn peaceman_well_index(rock: &RockProps, dx: f64, dy: f64, h: f64, radius: f64, skin: f64) -> Result<f64> {
    let r_e = peaceman_radius(rock.kx, rock.ky, dx, dy);
    let denom = (r_e / radius).ln() + skin;
    if !(denom > 0.0) {
        return Err(Error::config(
            "wells.radius",
            format!("equivalent radius {r_e:.4} ft is too small for wellbore radius {radius} ft"),
        ));
    }
    Ok(DARCY_CONSTANT * 2.0 * PI * (rock.kx * rock.ky).sqrt() * h / denom)
}

/// Anisotropic Peaceman equivalent radius.
pub fn peaceman_radius(kx: f64, ky: f64, dx: f64, dy: f64) -> f64 {
    let ryx = (ky / kx).sqrt();
    let rxy = (kx / ky).sqrt();
    0.28 * (ryx * dx * dx + rxy * dy * dy).sqrt() / ((ky / kx).powf(0.25) + (kx / ky).powf(0.25))
}

/// One cell of the state at the end of the previous slab.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowCell {
    /// Lattice range of the cell footprint along x and y.
    pub x: [i64; 2],
    pub y: [i64; 2],
    pub phi: f64,
    pub p_o: f64,
    pub s_w: f64,
}

/// State entering a slab through its lower time facet.
#[derive(Debug, Clone, PartialEq)]
pub enum SlabInflow {
    /// Initial condition, constant in space; each cell uses its own porosity.
    Uniform { p_o: f64, s_w: f64 },
    /// Final cells of the previous slab on the same spatial lattice.
    Cells(Vec<InflowCell>),
}

impl SlabInflow {
    /// Overlap-weighted average `(P_o, S_w)` over the spatial footprint of `b`.
    pub fn average_over(&self, b: &LatticeBox) -> (f64, f64) {
        match self {
            SlabInflow::Uniform { p_o, s_w } => (*p_o, *s_w),
            SlabInflow::Cells(cells) => {
                let area = (b.extent(0) * b.extent(1)) as f64;
                let (mut p, mut s) = (0.0, 0.0);
                for c in cells {
                    let w = overlap(c.x, [b.lo[0], b.hi[0]]) * overlap(c.y, [b.lo[1], b.hi[1]]);
                    if w > 0 {
                        p += w as f64 * c.p_o;
                        s += w as f64 * c.s_w;
                    }
                }
                (p / area, s / area)
            }
        }
    }
}

fn overlap(a: [i64; 2], b: [i64; 2]) -> i64 {
    (a[1].min(b[1]) - a[0].max(b[0])).max(0)
}

/// Transmissibility of an interior spatial face:
/// `beta |e| 2 / (dx_L / K_L + dx_R / K_R)`.
pub fn face_transmissibility(face: &FaceAdjacency, tree: &MeshTree, rock_left: &RockProps, rock_right: &RockProps) -> f64 {
    let axis = face.axis();
    let right = face.right.expect("transmissibility of a boundary face");
    let dl = tree.node(face.left).bounds.extent(axis);
    let dr = tree.node(right).bounds.extent(axis);
    let (kl, kr) = match axis {
        0 => (rock_left.kx, rock_right.kx),
        _ => (rock_left.ky, rock_right.ky),
    };
    DARCY_CONSTANT * face.measure() * 2.0 / (dl / kl + dr / kr)
}

/// Geometry and rock of one leaf.
#[derive(Debug, Clone, Copy)]
pub struct CellInfo {
    pub id: NodeId,
    pub volume: f64,
    pub dt: f64,
    pub dx: f64,
    pub dy: f64,
    pub center: [f64; 3],
    pub rock: RockProps,
}

#[derive(Debug, Clone, Copy)]
struct FluxFace {
    left: usize,
    right: usize,
    trans: f64,
    /// `g . (c_R - c_L)` (psi per lb/ft^3).
    gravity_head: f64,
}

#[derive(Debug, Clone, Copy)]
enum PastSource {
    Leaf(usize),
    /// Fixed water and oil mass per unit bulk volume.
    Fixed { water: f64, oil: f64 },
}

#[derive(Debug, Clone, Copy)]
struct PastLink {
    weight: f64,
    source: PastSource,
}

#[derive(Debug, Clone, Copy)]
struct WellLink {
    cell: usize,
    well: usize,
    index: f64,
}

/// Phase fluxes across one face in lb over the face's time extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFlux {
    pub aux_oil: f64,
    pub aux_water: f64,
    pub oil: f64,
    pub water: f64,
}

/// Well mass source over a leaf's time extent (lb, positive into the cell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellSource {
    pub well: usize,
    pub cell: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub water: f64,
    pub oil: f64,
    pub bhp: f64,
}

/// Water-mass bookkeeping of a slab.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassBalance {
    pub initial: f64,
    pub final_mass: f64,
    pub injected: f64,
    pub produced: f64,
}

impl MassBalance {
    pub fn change(&self) -> f64 {
        self.final_mass - self.initial
    }

    pub fn net_source(&self) -> f64 {
        self.injected - self.produced
    }
}

/// Derived quantities of one cell at the current iterate.
#[derive(Debug, Clone, Copy, Default)]
struct CellEval {
    pc: f64,
    dpc: f64,
    rho_w: f64,
    drw_dp: f64,
    drw_ds: f64,
    rho_o: f64,
    dro_dp: f64,
    krw: f64,
    dkrw: f64,
    kro: f64,
    dkro: f64,
    /// Water and oil mass per bulk volume with derivatives.
    cw: f64,
    dcw: [f64; 2],
    co: f64,
    dco: [f64; 2],
}

/// Assembled description of one slab: leaf ordering, geometry, faces, past
/// couplings and well connections. Residual and Jacobian evaluations reuse it.
#[derive(Debug, Clone)]
pub struct SlabSystem<'a> {
    model: &'a FluidRockModel,
    wells: &'a [Well],
    thickness: f64,
    index: LeafIndex,
    cells: Vec<CellInfo>,
    faces: Vec<FluxFace>,
    past: Vec<Vec<PastLink>>,
    wells_links: Vec<WellLink>,
    top: Vec<bool>,
    pattern: Vec<Vec<usize>>,
}

impl<'a> SlabSystem<'a> {
    pub fn new(tree: &MeshTree, model: &'a FluidRockModel, wells: &'a [Well], inflow: &SlabInflow) -> Result<Self> {
        let index = LeafIndex::new(tree);
        let n = index.len();
        let cells: Vec<CellInfo> = index
            .leaves()
            .iter()
            .map(|&id| {
                let node = tree.node(id);
                let b = node.bounds;
                CellInfo {
                    id,
                    volume: tree.spatial_volume(id),
                    dt: b.duration(),
                    dx: b.extent(0),
                    dy: b.extent(1),
                    center: [b.center(0), b.center(1), b.center(2)],
                    rock: model.rock.effective(&node.lattice),
                }
            })
            .collect();

        let mut faces = Vec::new();
        let mut past: Vec<Vec<PastLink>> = vec![Vec::new(); n];
        let mut top = vec![false; n];
        let mut bottom = vec![false; n];
        let mut pattern: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let ix = |id: NodeId| index.index_of(id).expect("face references a non-leaf");
        for face in tree.enumerate_faces() {
            let l = ix(face.left);
            match (face.right, face.direction) {
                (None, Direction::Future) => top[l] = true,
                (None, Direction::Past) => bottom[l] = true,
                (None, _) => {}
                (Some(r), Direction::Future) => {
                    let r = ix(r);
                    past[r].push(PastLink {
                        weight: face.spatial_measure / cells[r].volume,
                        source: PastSource::Leaf(l),
                    });
                    pattern[r].push(l);
                    pattern[l].push(r);
                }
                (Some(r), _) => {
                    let r = ix(r);
                    let trans = face_transmissibility(&face, tree, &cells[l].rock, &cells[r].rock);
                    let g = model.gravity;
                    let gravity_head = g[0] * (cells[r].center[0] - cells[l].center[0])
                        + g[1] * (cells[r].center[1] - cells[l].center[1]);
                    faces.push(FluxFace {
                        left: l,
                        right: r,
                        trans,
                        gravity_head,
                    });
                    pattern[l].push(r);
                    pattern[r].push(l);
                }
            }
        }

        for i in (0..n).filter(|&i| bottom[i]) {
            let lattice = tree.node(cells[i].id).lattice;
            past[i] = inflow_links(model, inflow, &lattice, &cells[i])?;
        }
        for (i, links) in past.iter().enumerate() {
            let sum: f64 = links.iter().map(|l| l.weight).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::MeshIntegrity(format!(
                    "past overlap weights of leaf {} sum to {sum}",
                    cells[i].id.0
                )));
            }
        }

        let mut wells_links = Vec::new();
        for (w, well) in wells.iter().enumerate() {
            let (cx, cy) = tree.column_of(well.x, well.y).ok_or_else(|| {
                Error::config(
                    format!("wells[{w}]"),
                    format!("location ({}, {}) outside domain", well.x, well.y),
                )
            })?;
            for id in tree.leaves_in_column(cx, cy) {
                let cell = ix(id);
                let c = &cells[cell];
                let index = peaceman_well_index(&c.rock, c.dx, c.dy, tree.thickness(), well.radius, well.skin)?;
                wells_links.push(WellLink { cell, well: w, index });
            }
        }

        Ok(SlabSystem {
            model,
            wells,
            thickness: tree.thickness(),
            index,
            cells,
            faces,
            past,
            wells_links,
            top,
            pattern,
        })
    }

    pub fn index(&self) -> &LeafIndex {
        &self.index
    }

    pub fn cells(&self) -> &[CellInfo] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn model(&self) -> &FluidRockModel {
        self.model
    }

    /// Largest water pore mass of a single cell at reference density (lb).
    pub fn mass_scale(&self) -> f64 {
        let rho = self.model.water.rho_ref;
        self.cells
            .iter()
            .map(|c| c.rock.phi * rho * c.volume)
            .fold(0.0, f64::max)
    }

    /// Cells containing wells.
    pub fn well_cells(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.wells_links.iter().map(|l| l.cell).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn check(&self, state: &StateVector) -> Result<()> {
        if state.len() != self.cells.len() {
            return Err(Error::Integrity(format!(
                "state has {} cells, mesh has {} leaves",
                state.len(),
                self.cells.len()
            )));
        }
        Ok(())
    }

    fn eval_cell(&self, i: usize, state: &StateVector) -> CellEval {
        let m = self.model;
        let (p, s) = (state.p(i), state.s(i));
        let phi = self.cells[i].rock.phi;
        let (pc, dpc) = m.cap_pressure(s);
        let (rho_w, drw_dp) = m.water.density_with_derivative(p - pc);
        let drw_ds = -drw_dp * dpc;
        let (rho_o, dro_dp) = m.oil.density_with_derivative(p);
        let (krw, dkrw) = m.relperm.rel_perm(Phase::Water, s);
        let (kro, dkro) = m.relperm.rel_perm(Phase::Oil, s);
        CellEval {
            pc,
            dpc,
            rho_w,
            drw_dp,
            drw_ds,
            rho_o,
            dro_dp,
            krw,
            dkrw,
            kro,
            dkro,
            cw: phi * rho_w * s,
            dcw: [phi * s * drw_dp, phi * (rho_w + s * drw_ds)],
            co: phi * rho_o * (1.0 - s),
            dco: [phi * (1.0 - s) * dro_dp, -phi * rho_o],
        }
    }

    /// Accumulation `(A_total, A_water)` of cell `i` in lb.
    pub fn accumulation(&self, i: usize, state: &StateVector) -> (f64, f64) {
        let e = self.eval_cell(i, state);
        let v = self.cells[i].volume;
        let (mut pw, mut po) = (0.0, 0.0);
        for link in &self.past[i] {
            let (w, o) = match link.source {
                PastSource::Leaf(k) => {
                    let ek = self.eval_cell(k, state);
                    (ek.cw, ek.co)
                }
                PastSource::Fixed { water, oil } => (water, oil),
            };
            pw += link.weight * w;
            po += link.weight * o;
        }
        let aw = (e.cw - pw) * v;
        let ao = (e.co - po) * v;
        (aw + ao, aw)
    }

    /// Auxiliary and upwinded phase fluxes across the `f`-th interior spatial face.
    pub fn phase_flux(&self, f: usize, state: &StateVector) -> FaceFlux {
        let face = &self.faces[f];
        let el = self.eval_cell(face.left, state);
        let er = self.eval_cell(face.right, state);
        let fl = self.face_terms(face, &el, &er, state);
        FaceFlux {
            aux_oil: fl.oil.aux,
            aux_water: fl.water.aux,
            oil: fl.oil.flux,
            water: fl.water.flux,
        }
    }

    /// Interior spatial faces as `(left, right, transmissibility)`.
    pub fn flux_faces(&self) -> Vec<(usize, usize, f64)> {
        self.faces.iter().map(|f| (f.left, f.right, f.trans)).collect()
    }

    fn face_terms(&self, face: &FluxFace, el: &CellEval, er: &CellEval, state: &StateVector) -> FaceTerms {
        let m = self.model;
        let (l, r) = (face.left, face.right);
        let (t, g) = (face.trans, face.gravity_head);

        // Water: potential uses water pressure P_o - p_c.
        let rho_bar = 0.5 * (el.rho_w + er.rho_w);
        let dphi = (state.p(l) - el.pc) - (state.p(r) - er.pc) + rho_bar * g;
        let d_dphi = [
            1.0 + 0.5 * el.drw_dp * g,
            -el.dpc + 0.5 * el.drw_ds * g,
            -1.0 + 0.5 * er.drw_dp * g,
            er.dpc + 0.5 * er.drw_ds * g,
        ];
        let aux = t * dphi;
        let up_left = aux > 0.0;
        let (kr, dkr) = if up_left { (el.krw, el.dkrw) } else { (er.krw, er.dkrw) };
        let mu = m.water.mu;
        let lam = rho_bar * kr / mu;
        let mut d_lam = [
            0.5 * el.drw_dp * kr / mu,
            0.5 * el.drw_ds * kr / mu,
            0.5 * er.drw_dp * kr / mu,
            0.5 * er.drw_ds * kr / mu,
        ];
        d_lam[if up_left { 1 } else { 3 }] += rho_bar * dkr / mu;
        let water = PhaseFaceTerm {
            aux,
            flux: lam * aux,
            d_flux: [0, 1, 2, 3].map(|k| d_lam[k] * aux + lam * t * d_dphi[k]),
        };

        let rho_bar = 0.5 * (el.rho_o + er.rho_o);
        let dphi = state.p(l) - state.p(r) + rho_bar * g;
        let d_dphi = [1.0 + 0.5 * el.dro_dp * g, 0.0, -1.0 + 0.5 * er.dro_dp * g, 0.0];
        let aux = t * dphi;
        let up_left = aux > 0.0;
        let (kr, dkr) = if up_left { (el.kro, el.dkro) } else { (er.kro, er.dkro) };
        let mu = m.oil.mu;
        let lam = rho_bar * kr / mu;
        let mut d_lam = [0.5 * el.dro_dp * kr / mu, 0.0, 0.5 * er.dro_dp * kr / mu, 0.0];
        d_lam[if up_left { 1 } else { 3 }] += rho_bar * dkr / mu;
        let oil = PhaseFaceTerm {
            aux,
            flux: lam * aux,
            d_flux: [0, 1, 2, 3].map(|k| d_lam[k] * aux + lam * t * d_dphi[k]),
        };
        FaceTerms { water, oil }
    }

    fn well_terms(&self, link: &WellLink, e: &CellEval, state: &StateVector) -> WellTerms {
        let c = &self.cells[link.cell];
        let m = self.model;
        match self.wells[link.well].kind {
            WellKind::RateInjector { rate } => {
                let qw = rate * m.water.rho_ref * c.dt;
                // Reported only: pressure needed to push the rate through the
                // total mobility of the host cell.
                let lam_t = e.rho_w * (e.krw / m.water.mu + e.kro / m.oil.mu);
                let bhp = state.p(link.cell) + rate * m.water.rho_ref / (link.index * lam_t);
                WellTerms {
                    water: qw,
                    oil: 0.0,
                    d_water: [0.0; 2],
                    d_oil: [0.0; 2],
                    bhp,
                }
            }
            WellKind::BhpProducer { bhp } => {
                let draw = state.p(link.cell) - bhp;
                let f = link.index * c.dt;
                let lw = e.rho_w * e.krw / m.water.mu;
                let dlw = [e.drw_dp * e.krw / m.water.mu, (e.drw_ds * e.krw + e.rho_w * e.dkrw) / m.water.mu];
                let lo = e.rho_o * e.kro / m.oil.mu;
                let dlo = [e.dro_dp * e.kro / m.oil.mu, e.rho_o * e.dkro / m.oil.mu];
                WellTerms {
                    water: -f * lw * draw,
                    oil: -f * lo * draw,
                    d_water: [-f * (dlw[0] * draw + lw), -f * dlw[1] * draw],
                    d_oil: [-f * (dlo[0] * draw + lo), -f * dlo[1] * draw],
                    bhp,
                }
            }
        }
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    /// Mass sources of every well connection, in connection order.
    pub fn well_sources(&self, state: &StateVector) -> Vec<WellSource> {
        self.wells_links
            .iter()
            .map(|link| {
                let e = self.eval_cell(link.cell, state);
                let w = self.well_terms(link, &e, state);
                let c = &self.cells[link.cell];
                WellSource {
                    well: link.well,
                    cell: link.cell,
                    t_lo: c.center[TIME_AXIS] - 0.5 * c.dt,
                    t_hi: c.center[TIME_AXIS] + 0.5 * c.dt,
                    water: w.water,
                    oil: w.oil,
                    bhp: w.bhp,
                }
            })
            .collect()
    }

    /// Residual only.
    pub fn residual(&self, state: &StateVector) -> Result<ResidualVector> {
        self.check(state)?;
        Ok(self.assemble(state, None))
    }

    /// Residual together with the analytic Jacobian.
    pub fn residual_and_jacobian(&self, state: &StateVector) -> Result<(ResidualVector, JacobianMatrix)> {
        self.check(state)?;
        let mut jac = self.empty_jacobian();
        let r = self.assemble(state, Some(&mut jac));
        Ok((r, jac))
    }

    pub fn jacobian(&self, state: &StateVector) -> Result<JacobianMatrix> {
        Ok(self.residual_and_jacobian(state)?.1)
    }

    /// Zero matrix carrying the structural pattern of this slab.
    pub fn empty_jacobian(&self) -> JacobianMatrix {
        JacobianMatrix::from_pattern(self.pattern.clone())
    }

    fn assemble(&self, state: &StateVector, mut jac: Option<&mut JacobianMatrix>) -> ResidualVector {
        let n = self.cells.len();
        let evals: Vec<CellEval> = (0..n).map(|i| self.eval_cell(i, state)).collect();
        let mut res = ResidualVector::zeros(n);
        if let Some(j) = jac.as_deref_mut() {
            j.clear();
        }

        for i in 0..n {
            let v = self.cells[i].volume;
            let e = &evals[i];
            let (mut pw, mut po) = (e.cw, e.co);
            if let Some(j) = jac.as_deref_mut() {
                let b = j.block_mut(i, i);
                for k in 0..2 {
                    b[0][k] += v * (e.dcw[k] + e.dco[k]);
                    b[1][k] += v * e.dcw[k];
                }
            }
            for link in &self.past[i] {
                match link.source {
                    PastSource::Leaf(k) => {
                        let ek = &evals[k];
                        pw -= link.weight * ek.cw;
                        po -= link.weight * ek.co;
                        if let Some(j) = jac.as_deref_mut() {
                            let b = j.block_mut(i, k);
                            for c in 0..2 {
                                b[0][c] -= v * link.weight * (ek.dcw[c] + ek.dco[c]);
                                b[1][c] -= v * link.weight * ek.dcw[c];
                            }
                        }
                    }
                    PastSource::Fixed { water, oil } => {
                        pw -= link.weight * water;
                        po -= link.weight * oil;
                    }
                }
            }
            res.values[2 * i] += (pw + po) * v;
            res.values[2 * i + 1] += pw * v;
        }

        for face in &self.faces {
            let (l, r) = (face.left, face.right);
            let ft = self.face_terms(face, &evals[l], &evals[r], state);
            let total = ft.water.flux + ft.oil.flux;
            res.values[2 * l] += total;
            res.values[2 * l + 1] += ft.water.flux;
            res.values[2 * r] -= total;
            res.values[2 * r + 1] -= ft.water.flux;
            if let Some(j) = jac.as_deref_mut() {
                for (cell, sign) in [(l, 1.0), (r, -1.0)] {
                    for (nbr, off) in [(l, 0), (r, 2)] {
                        let b = j.block_mut(cell, nbr);
                        for c in 0..2 {
                            let dw = ft.water.d_flux[off + c];
                            let dt = dw + ft.oil.d_flux[off + c];
                            b[0][c] += sign * dt;
                            b[1][c] += sign * dw;
                        }
                    }
                }
            }
        }

        for link in &self.wells_links {
            let i = link.cell;
            let w = self.well_terms(link, &evals[i], state);
            res.values[2 * i] -= w.water + w.oil;
            res.values[2 * i + 1] -= w.water;
            if let Some(j) = jac.as_deref_mut() {
                let b = j.block_mut(i, i);
                for c in 0..2 {
                    b[0][c] -= w.d_water[c] + w.d_oil[c];
                    b[1][c] -= w.d_water[c];
                }
            }
        }
        res
    }

    /// Water mass entering through the slab's lower facet, leaving through
    /// its upper facet, and exchanged with wells.
    pub fn water_balance(&self, state: &StateVector) -> Result<MassBalance> {
        self.check(state)?;
        let mut initial = 0.0;
        let mut final_mass = 0.0;
        for (i, c) in self.cells.iter().enumerate() {
            for link in &self.past[i] {
                if let PastSource::Fixed { water, .. } = link.source {
                    initial += link.weight * water * c.volume;
                }
            }
            if self.top[i] {
                final_mass += self.eval_cell(i, state).cw * c.volume;
            }
        }
        let (mut injected, mut produced) = (0.0, 0.0);
        for src in self.well_sources(state) {
            if src.water >= 0.0 {
                injected += src.water;
            } else {
                produced -= src.water;
            }
        }
        Ok(MassBalance {
            initial,
            final_mass,
            injected,
            produced,
        })
    }

    /// Cells on the upper time facet of the slab.
    pub fn top_cells(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.top[i]).collect()
    }

    /// Past neighbours of cell `i` inside the slab with their overlap weights.
    pub fn past_leaves(&self, i: usize) -> Vec<(usize, f64)> {
        self.past[i]
            .iter()
            .filter_map(|l| match l.source {
                PastSource::Leaf(k) => Some((k, l.weight)),
                PastSource::Fixed { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct PhaseFaceTerm {
    aux: f64,
    flux: f64,
    /// Derivatives w.r.t. `(P_L, S_L, P_R, S_R)`.
    d_flux: [f64; 4],
}

#[derive(Debug, Clone, Copy)]
struct FaceTerms {
    water: PhaseFaceTerm,
    oil: PhaseFaceTerm,
}

#[derive(Debug, Clone, Copy)]
struct WellTerms {
    water: f64,
    oil: f64,
    d_water: [f64; 2],
    d_oil: [f64; 2],
    bhp: f64,
}

fn inflow_links(model: &FluidRockModel, inflow: &SlabInflow, lattice: &LatticeBox, cell: &CellInfo) -> Result<Vec<PastLink>> {
    let masses = |phi: f64, p: f64, s: f64| {
        let (pc, _) = model.cap_pressure(s);
        let water = phi * model.water.density(p - pc) * s;
        let oil = phi * model.oil.density(p) * (1.0 - s);
        PastSource::Fixed { water, oil }
    };
    match inflow {
        SlabInflow::Uniform { p_o, s_w } => Ok(vec![PastLink {
            weight: 1.0,
            source: masses(cell.rock.phi, *p_o, *s_w),
        }]),
        SlabInflow::Cells(cells) => {
            let area = (lattice.extent(0) * lattice.extent(1)) as f64;
            let links: Vec<PastLink> = cells
                .iter()
                .filter_map(|c| {
                    let w = overlap(c.x, [lattice.lo[0], lattice.hi[0]]) * overlap(c.y, [lattice.lo[1], lattice.hi[1]]);
                    (w > 0).then(|| PastLink {
                        weight: w as f64 / area,
                        source: masses(c.phi, c.p_o, c.s_w),
                    })
                })
                .collect();
            Ok(links)
        }
    }
}

/// Residual of the slab described by `tree` at `state`.
pub fn assemble_residual(
    tree: &MeshTree,
    state: &StateVector,
    inflow: &SlabInflow,
    wells: &[Well],
    model: &FluidRockModel,
) -> Result<ResidualVector> {
    SlabSystem::new(tree, model, wells, inflow)?.residual(state)
}

/// Analytic Jacobian of the slab described by `tree` at `state`.
pub fn assemble_jacobian(
    tree: &MeshTree,
    state: &StateVector,
    inflow: &SlabInflow,
    wells: &[Well],
    model: &FluidRockModel,
) -> Result<JacobianMatrix> {
    SlabSystem::new(tree, model, wells, inflow)?.jacobian(state)
}

/// Inflow state for the next slab: the top-layer cells of this one.
pub fn outflow_cells(tree: &MeshTree, system: &SlabSystem<'_>, state: &StateVector) -> SlabInflow {
    let cells = system
        .top_cells()
        .into_iter()
        .map(|i| {
            let c = &system.cells()[i];
            let b = tree.node(c.id).lattice;
            InflowCell {
                x: [b.lo[0], b.hi[0]],
                y: [b.lo[1], b.hi[1]],
                phi: c.rock.phi,
                p_o: state.p(i),
                s_w: state.s(i),
            }
        })
        .collect();
    SlabInflow::Cells(cells)
}
