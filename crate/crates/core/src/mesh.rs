//! Space-time refinement tree.
//!
//! Every cell of the coarsest grid is a root node; refinement splits a leaf
//! isotropically in space and time into `r^(d+1)` children. Geometry is kept
//! on an integer lattice whose spacing is the finest possible cell size, so
//! adjacency and overlap tests are exact.

use crate::error::{Error, Result};

/// Index of the time axis in lattice coordinates (`0 = x`, `1 = y`, `2 = t`).
pub const TIME_AXIS: usize = 2;

/// Identifier of a node in a [`MeshTree`]. Ids are never reused or moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialDim {
    One,
    Two,
}

impl SpatialDim {
    pub fn count(self) -> usize {
        match self {
            SpatialDim::One => 1,
            SpatialDim::Two => 2,
        }
    }

    pub fn from_count(d: usize) -> Option<Self> {
        match d {
            1 => Some(SpatialDim::One),
            2 => Some(SpatialDim::Two),
            _ => None,
        }
    }
}

/// Axis-aligned space-time cell `[x_lo,x_hi] x [y_lo,y_hi] x [t_lo,t_hi]`
/// in feet and days. One-dimensional problems still carry a y interval;
/// it is simply never split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeBox {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl SpaceTimeBox {
    pub fn new(x: [f64; 2], y: [f64; 2], t: [f64; 2]) -> Result<Self> {
        let b = SpaceTimeBox {
            x_lo: x[0],
            x_hi: x[1],
            y_lo: y[0],
            y_hi: y[1],
            t_lo: t[0],
            t_hi: t[1],
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("domain.x", self.x_lo, self.x_hi),
            ("domain.y", self.y_lo, self.y_hi),
            ("domain.t", self.t_lo, self.t_hi),
        ];
        for (key, lo, hi) in checks {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(key, format!("need lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn lo(&self, axis: usize) -> f64 {
        [self.x_lo, self.y_lo, self.t_lo][axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        [self.x_hi, self.y_hi, self.t_hi][axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi(axis) - self.lo(axis)
    }

    pub fn center(&self, axis: usize) -> f64 {
        0.5 * (self.lo(axis) + self.hi(axis))
    }

    /// Planar area `dx * dy` (ft^2).
    pub fn area(&self) -> f64 {
        self.extent(0) * self.extent(1)
    }

    pub fn duration(&self) -> f64 {
        self.extent(TIME_AXIS)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_lo && x <= self.x_hi && y >= self.y_lo && y <= self.y_hi
    }
}

/// Search directions. `Future` is only used for auxiliary queries such as
/// interpolation and visualisation, never for assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    Past,
    Future,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::XMinus,
        Direction::XPlus,
        Direction::YMinus,
        Direction::YPlus,
        Direction::Past,
        Direction::Future,
    ];

    pub fn axis(self) -> usize {
        match self {
            Direction::XMinus | Direction::XPlus => 0,
            Direction::YMinus | Direction::YPlus => 1,
            Direction::Past | Direction::Future => TIME_AXIS,
        }
    }

    pub fn is_plus(self) -> bool {
        matches!(self, Direction::XPlus | Direction::YPlus | Direction::Future)
    }

    pub fn is_spatial(self) -> bool {
        self.axis() != TIME_AXIS
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::XMinus => Direction::XPlus,
            Direction::XPlus => Direction::XMinus,
            Direction::YMinus => Direction::YPlus,
            Direction::YPlus => Direction::YMinus,
            Direction::Past => Direction::Future,
            Direction::Future => Direction::Past,
        }
    }

    pub fn plus(axis: usize) -> Direction {
        [Direction::XPlus, Direction::YPlus, Direction::Future][axis]
    }

    pub fn minus(axis: usize) -> Direction {
        [Direction::XMinus, Direction::YMinus, Direction::Past][axis]
    }

    /// Directions that exist for the given spatial dimension.
    pub fn active(dim: SpatialDim) -> &'static [Direction] {
        match dim {
            SpatialDim::One => &[
                Direction::XMinus,
                Direction::XPlus,
                Direction::Past,
                Direction::Future,
            ],
            SpatialDim::Two => &Direction::ALL,
        }
    }
}

/// Half-open integer box on the finest lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeBox {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl LatticeBox {
    pub fn extent(&self, axis: usize) -> i64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Length of the overlap of the two boxes along `axis` (0 if disjoint).
    pub fn overlap(&self, other: &LatticeBox, axis: usize) -> i64 {
        (self.hi[axis].min(other.hi[axis]) - self.lo[axis].max(other.lo[axis])).max(0)
    }

    pub fn contains(&self, other: &LatticeBox) -> bool {
        (0..3).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub id: NodeId,
    pub bounds: SpaceTimeBox,
    pub level: usize,
    pub parent: Option<NodeId>,
    /// Children in lexicographic order (x fastest, then y, then t). Empty iff leaf.
    pub children: Vec<NodeId>,
    pub lattice: LatticeBox,
    /// Position among siblings, or in the root grid for roots.
    slot: [i64; 3],
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Semi-structured space-time grid stored as a forest of refinement trees.
#[derive(Debug, Clone)]
pub struct MeshTree {
    dim: SpatialDim,
    domain: SpaceTimeBox,
    thickness: f64,
    roots_dims: [usize; 3],
    ratios: Vec<usize>,
    /// Lattice units spanned by one root cell along each axis.
    root_units: [i64; 3],
    nodes: Vec<TreeNode>,
    roots: Vec<NodeId>,
    leaf_count: usize,
}

impl MeshTree {
    /// Builds the level-0 grid of `nx * ny * nt` roots tiling `domain`.
    ///
    /// `ratios[l]` is the refinement ratio applied to cells of level `l`, so
    /// `ratios.len()` is the maximum level. For `SpatialDim::One`, `ny` must be 1
    /// and the y interval acts as a fixed width.
    pub fn build_root_mesh(
        dim: SpatialDim,
        domain: SpaceTimeBox,
        thickness: f64,
        dims: [usize; 3],
        ratios: &[usize],
    ) -> Result<Self> {
        domain.validate()?;
        if !(thickness.is_finite() && thickness > 0.0) {
            return Err(Error::config("domain.thickness", "must be positive"));
        }
        for (key, n) in ["mesh.roots[x]", "mesh.roots[y]", "mesh.roots[t]"].iter().zip(dims) {
            if n == 0 {
                return Err(Error::config(*key, "root grid dimensions must be >= 1"));
            }
        }
        if dim == SpatialDim::One && dims[1] != 1 {
            return Err(Error::config("mesh.roots[y]", "one-dimensional meshes need ny = 1"));
        }
        if let Some(r) = ratios.iter().find(|&&r| r < 2) {
            return Err(Error::config("mesh.ratios", format!("ratio {r} must be >= 2")));
        }

        let fine: i64 = ratios.iter().map(|&r| r as i64).product();
        let root_units = [fine, if dim == SpatialDim::Two { fine } else { 1 }, fine];
        let mut tree = MeshTree {
            dim,
            domain,
            thickness,
            roots_dims: dims,
            ratios: ratios.to_vec(),
            root_units,
            nodes: Vec::with_capacity(dims.iter().product()),
            roots: Vec::with_capacity(dims.iter().product()),
            leaf_count: 0,
        };
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let slot = [i as i64, j as i64, k as i64];
                    let lo = [0, 1, 2].map(|a| slot[a] * root_units[a]);
                    let hi = [0, 1, 2].map(|a| lo[a] + root_units[a]);
                    let lattice = LatticeBox { lo, hi };
                    let id = NodeId(tree.nodes.len());
                    tree.nodes.push(TreeNode {
                        id,
                        bounds: tree.physical(&lattice),
                        level: 0,
                        parent: None,
                        children: Vec::new(),
                        lattice,
                        slot,
                    });
                    tree.roots.push(id);
                }
            }
        }
        tree.leaf_count = tree.roots.len();
        Ok(tree)
    }

    pub fn dim(&self) -> SpatialDim {
        self.dim
    }

    pub fn domain(&self) -> &SpaceTimeBox {
        &self.domain
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn roots_dims(&self) -> [usize; 3] {
        self.roots_dims
    }

    pub fn ratios(&self) -> &[usize] {
        &self.ratios
    }

    pub fn max_level(&self) -> usize {
        self.ratios.len()
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Number of lattice units along each axis of the whole domain; equals the
    /// finest possible cell count per axis.
    pub fn lattice_dims(&self) -> [i64; 3] {
        [0, 1, 2].map(|a| self.root_units[a] * self.roots_dims[a] as i64)
    }

    /// Physical size of one lattice unit per axis.
    pub fn lattice_spacing(&self) -> [f64; 3] {
        let dims = self.lattice_dims();
        [0, 1, 2].map(|a| self.domain.extent(a) / dims[a] as f64)
    }

    /// Number of splits along `axis` when refining a cell of `level`.
    fn split(&self, level: usize, axis: usize) -> i64 {
        if axis == 1 && self.dim == SpatialDim::One {
            1
        } else {
            self.ratios[level] as i64
        }
    }

    fn coord(&self, axis: usize, l: i64) -> f64 {
        let n = self.lattice_dims()[axis];
        if l == n {
            return self.domain.hi(axis);
        }
        self.domain.lo(axis) + self.domain.extent(axis) * (l as f64) / (n as f64)
    }

    pub fn physical(&self, b: &LatticeBox) -> SpaceTimeBox {
        SpaceTimeBox {
            x_lo: self.coord(0, b.lo[0]),
            x_hi: self.coord(0, b.hi[0]),
            y_lo: self.coord(1, b.lo[1]),
            y_hi: self.coord(1, b.hi[1]),
            t_lo: self.coord(2, b.lo[2]),
            t_hi: self.coord(2, b.hi[2]),
        }
    }

    /// Bulk volume of the cell's spatial footprint: `dx * dy * thickness` (ft^3).
    pub fn spatial_volume(&self, id: NodeId) -> f64 {
        self.nodes[id.0].bounds.area() * self.thickness
    }

    /// Space-time measure `dx * dy * thickness * dt` (ft^3 day).
    pub fn space_time_measure(&self, id: NodeId) -> f64 {
        self.spatial_volume(id) * self.nodes[id.0].bounds.duration()
    }

    pub fn domain_measure(&self) -> f64 {
        self.domain.area() * self.thickness * self.domain.duration()
    }

    /// Splits leaf `id` into `r^(d+1)` equal children and returns their ids in
    /// lexicographic order.
    pub fn refine_cell(&mut self, id: NodeId) -> Result<Vec<NodeId>> {
        let node = self.nodes.get(id.0).ok_or_else(|| Error::InvalidRefinement {
            id: id.0,
            reason: "no such node".into(),
        })?;
        if !node.is_leaf() {
            return Err(Error::InvalidRefinement {
                id: id.0,
                reason: "cell is not a leaf".into(),
            });
        }
        if node.level >= self.max_level() {
            return Err(Error::InvalidRefinement {
                id: id.0,
                reason: format!("cell is already at max level {}", self.max_level()),
            });
        }
        let level = node.level;
        let parent_box = node.lattice;
        let counts = [0, 1, 2].map(|a| self.split(level, a));
        let step = [0, 1, 2].map(|a| parent_box.extent(a) / counts[a]);

        let mut children = Vec::with_capacity(counts.iter().product::<i64>() as usize);
        for st in 0..counts[2] {
            for sy in 0..counts[1] {
                for sx in 0..counts[0] {
                    let slot = [sx, sy, st];
                    let lo = [0, 1, 2].map(|a| parent_box.lo[a] + slot[a] * step[a]);
                    let hi = [0, 1, 2].map(|a| lo[a] + step[a]);
                    let lattice = LatticeBox { lo, hi };
                    let child = NodeId(self.nodes.len());
                    self.nodes.push(TreeNode {
                        id: child,
                        bounds: self.physical(&lattice),
                        level: level + 1,
                        parent: Some(id),
                        children: Vec::new(),
                        lattice,
                        slot,
                    });
                    children.push(child);
                }
            }
        }
        self.leaf_count += children.len() - 1;
        self.nodes[id.0].children = children.clone();
        Ok(children)
    }

    /// Leaves in deterministic order: roots in grid order, then depth-first
    /// through children in their fixed order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.leaf_count);
        let mut stack = Vec::new();
        for &root in &self.roots {
            stack.push(root);
            while let Some(id) = stack.pop() {
                let node = &self.nodes[id.0];
                if node.is_leaf() {
                    out.push(id);
                } else {
                    stack.extend(node.children.iter().rev());
                }
            }
        }
        out
    }

    /// Leaves whose boxes share a facet of positive measure with the facet of
    /// `id` facing `dir`.
    ///
    /// Ascends from `id` until a sibling exists on the requested side (or the
    /// root grid provides one), then descends from that sibling collecting
    /// every leaf touching the original facet.
    pub fn find_neighbors(&self, id: NodeId, dir: Direction) -> Vec<NodeId> {
        let axis = dir.axis();
        let step = if dir.is_plus() { 1 } else { -1 };

        let mut cur = id;
        let start = loop {
            let node = &self.nodes[cur.0];
            match node.parent {
                Some(p) => {
                    let parent = &self.nodes[p.0];
                    let counts = [0, 1, 2].map(|a| self.split(parent.level, a));
                    let s = node.slot[axis] + step;
                    if (0..counts[axis]).contains(&s) {
                        let mut slot = node.slot;
                        slot[axis] = s;
                        let idx = slot[0] + counts[0] * (slot[1] + counts[1] * slot[2]);
                        break parent.children[idx as usize];
                    }
                    cur = p;
                }
                None => {
                    let dims = self.roots_dims.map(|n| n as i64);
                    let mut slot = node.slot;
                    slot[axis] += step;
                    if !(0..dims[axis]).contains(&slot[axis]) {
                        return Vec::new();
                    }
                    let idx = slot[0] + dims[0] * (slot[1] + dims[1] * slot[2]);
                    break self.roots[idx as usize];
                }
            }
        };

        let facet = self.nodes[id.0].lattice;
        let plane = if dir.is_plus() { facet.hi[axis] } else { facet.lo[axis] };
        let mut out = Vec::new();
        self.collect_facet_leaves(start, &facet, axis, plane, dir.is_plus(), &mut out);
        out
    }

    fn collect_facet_leaves(
        &self,
        id: NodeId,
        facet: &LatticeBox,
        axis: usize,
        plane: i64,
        plus: bool,
        out: &mut Vec<NodeId>,
    ) {
        let node = &self.nodes[id.0];
        let b = &node.lattice;
        let touches = if plus { b.lo[axis] == plane } else { b.hi[axis] == plane };
        if !touches {
            return;
        }
        let overlaps = (0..3)
            .filter(|&a| a != axis)
            .all(|a| b.overlap(facet, a) > 0);
        if !overlaps {
            return;
        }
        if node.is_leaf() {
            out.push(id);
        } else {
            for &c in &node.children {
                self.collect_facet_leaves(c, facet, axis, plane, plus, out);
            }
        }
    }

    /// Every facet of every leaf, split at the finer side's resolution.
    ///
    /// Interior faces are listed once, from the lower side (`XPlus`, `YPlus`,
    /// `Future`); boundary facets appear with `right == None`.
    pub fn enumerate_faces(&self) -> Vec<FaceAdjacency> {
        let mut faces = Vec::new();
        for leaf in self.leaves() {
            for &dir in Direction::active(self.dim) {
                let nbrs = self.find_neighbors(leaf, dir);
                if nbrs.is_empty() {
                    faces.push(self.face_record(leaf, None, dir));
                } else if dir.is_plus() {
                    for n in nbrs {
                        faces.push(self.face_record(leaf, Some(n), dir));
                    }
                }
            }
        }
        faces
    }

    fn face_record(&self, left: NodeId, right: Option<NodeId>, dir: Direction) -> FaceAdjacency {
        let a = self.nodes[left.0].lattice;
        let shared = match right {
            Some(r) => {
                let b = self.nodes[r.0].lattice;
                let mut s = a;
                for ax in 0..3 {
                    s.lo[ax] = a.lo[ax].max(b.lo[ax]);
                    s.hi[ax] = a.hi[ax].min(b.hi[ax]);
                }
                s
            }
            None => a,
        };
        let geom = self.physical(&shared);
        let axis = dir.axis();
        let (spatial_measure, temporal_extent) = match axis {
            0 => (geom.extent(1) * self.thickness, geom.duration()),
            1 => (geom.extent(0) * self.thickness, geom.duration()),
            _ => (geom.area() * self.thickness, 0.0),
        };
        FaceAdjacency {
            left,
            right,
            direction: dir,
            spatial_measure,
            temporal_extent,
        }
    }

    /// Leaves whose spatial footprint contains the lattice column `(ix, iy)`,
    /// ordered by time.
    pub fn leaves_in_column(&self, ix: i64, iy: i64) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self
            .roots
            .iter()
            .copied()
            .filter(|r| {
                let b = &self.nodes[r.0].lattice;
                b.lo[0] <= ix && ix < b.hi[0] && b.lo[1] <= iy && iy < b.hi[1]
            })
            .collect();
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id.0];
            if node.is_leaf() {
                out.push(id);
                continue;
            }
            for &c in &node.children {
                let b = &self.nodes[c.0].lattice;
                if b.lo[0] <= ix && ix < b.hi[0] && b.lo[1] <= iy && iy < b.hi[1] {
                    stack.push(c);
                }
            }
        }
        out.sort_by_key(|id| self.nodes[id.0].lattice.lo[TIME_AXIS]);
        out
    }

    /// Lattice column containing the physical point, or `None` outside the domain.
    pub fn column_of(&self, x: f64, y: f64) -> Option<(i64, i64)> {
        let d = &self.domain;
        if !d.contains_point(x, y) {
            return None;
        }
        let dims = self.lattice_dims();
        let h = self.lattice_spacing();
        let ix = (((x - d.x_lo) / h[0]).floor() as i64).clamp(0, dims[0] - 1);
        let iy = (((y - d.y_lo) / h[1]).floor() as i64).clamp(0, dims[1] - 1);
        Some((ix, iy))
    }

    /// Leaf containing the space-time point, if inside the domain.
    pub fn locate(&self, x: f64, y: f64, t: f64) -> Option<NodeId> {
        let (ix, iy) = self.column_of(x, y)?;
        if t < self.domain.t_lo || t > self.domain.t_hi {
            return None;
        }
        self.leaves_in_column(ix, iy)
            .into_iter()
            .find(|id| {
                let b = &self.nodes[id.0].bounds;
                b.t_lo <= t && t <= b.t_hi
            })
    }

    /// Leaves whose upper time facet lies on the end of the window.
    pub fn top_leaves(&self) -> Vec<NodeId> {
        let t_end = self.lattice_dims()[TIME_AXIS];
        self.leaves()
            .into_iter()
            .filter(|id| self.nodes[id.0].lattice.hi[TIME_AXIS] == t_end)
            .collect()
    }

    /// Leaves whose lower time facet lies on the start of the window.
    pub fn bottom_leaves(&self) -> Vec<NodeId> {
        self.leaves()
            .into_iter()
            .filter(|id| self.nodes[id.0].lattice.lo[TIME_AXIS] == 0)
            .collect()
    }

    pub fn is_descendant_or_self(&self, id: NodeId, ancestor: NodeId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.nodes[c.0].parent;
        }
        false
    }

    /// Refines every leaf whose spatial footprint contains the point until it
    /// reaches `max_level`.
    pub fn refine_column_to_max(&mut self, x: f64, y: f64) -> Result<()> {
        let (ix, iy) = self
            .column_of(x, y)
            .ok_or_else(|| Error::config("wells", format!("location ({x}, {y}) outside domain")))?;
        loop {
            let coarse: Vec<NodeId> = self
                .leaves_in_column(ix, iy)
                .into_iter()
                .filter(|id| self.nodes[id.0].level < self.max_level())
                .collect();
            if coarse.is_empty() {
                return Ok(());
            }
            for id in coarse {
                self.refine_cell(id)?;
            }
        }
    }

    /// Refines every leaf until the whole mesh is at `max_level`.
    pub fn refine_uniformly(&mut self) -> Result<()> {
        for _ in 0..self.max_level() {
            for id in self.leaves() {
                if self.nodes[id.0].level < self.max_level() {
                    self.refine_cell(id)?;
                }
            }
        }
        Ok(())
    }
}

/// One shared (sub-)facet between two leaves, or a boundary facet.
///
/// For spatial faces `spatial_measure` is the facet length times the slab
/// thickness (ft^2) and `temporal_extent` is the shared time interval (days).
/// For temporal faces `spatial_measure` is the shared footprint volume (ft^3)
/// and `temporal_extent` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceAdjacency {
    /// Lower-side leaf for interior faces, the owning leaf for boundary facets.
    pub left: NodeId,
    /// `None` marks a domain boundary facet.
    pub right: Option<NodeId>,
    pub direction: Direction,
    pub spatial_measure: f64,
    pub temporal_extent: f64,
}

impl FaceAdjacency {
    pub fn axis(&self) -> usize {
        self.direction.axis()
    }

    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }

    /// Space-time measure `|e|`.
    pub fn measure(&self) -> f64 {
        if self.direction.is_spatial() {
            self.spatial_measure * self.temporal_extent
        } else {
            self.spatial_measure
        }
    }
}

/// Bijection between leaves and dense equation-block indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafIndex {
    order: Vec<NodeId>,
    lookup: Vec<Option<usize>>,
}

impl LeafIndex {
    pub fn new(tree: &MeshTree) -> Self {
        let order = tree.leaves();
        let mut lookup = vec![None; tree.nodes().len()];
        for (i, id) in order.iter().enumerate() {
            lookup[id.0] = Some(i);
        }
        LeafIndex { order, lookup }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.lookup.get(id.0).copied().flatten()
    }

    pub fn leaf(&self, i: usize) -> NodeId {
        self.order[i]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.order
    }
}
