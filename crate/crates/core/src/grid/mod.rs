//! Uniform structured 3D grids, boundary patches and block partitioning.
//!
//! Cells are numbered lexicographically with `x` fastest:
//! `index = i + nx * (j + ny * k)`. Every cell has the same volume.

mod partition;

pub use partition::{auto_cuts, halo_topology, partition_simple, Block, CellKind, HaloDescriptor, HaloLink, LocalLayout, PartitionMap};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    /// The two other axes, in increasing order.
    pub fn tangential(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::X, Axis::Z],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }
}

/// One of the six exterior faces of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::XMin, Face::XMax, Face::YMin, Face::YMax, Face::ZMin, Face::ZMax];

    pub fn new(axis: Axis, max_side: bool) -> Face {
        Face::ALL[axis.index() * 2 + max_side as usize]
    }

    pub fn axis(self) -> Axis {
        Axis::from_index(self as usize / 2)
    }

    pub fn is_max(self) -> bool {
        self as usize % 2 == 1
    }

    /// +1 for the max face, -1 for the min face.
    pub fn sign(self) -> f64 {
        if self.is_max() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn name(self) -> &'static str {
        ["x-", "x+", "y-", "y+", "z-", "z+"][self as usize]
    }

    pub fn parse(s: &str) -> Option<Face> {
        Face::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// User-facing description of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub cells: [usize; 3],
    pub spacing: [f64; 3],
    /// Coordinates of the centre of cell (0, 0, 0) [m].
    pub origin: [f64; 3],
    pub vertical: Axis,
    /// Tilt [degrees] along the two horizontal axes (in increasing axis
    /// order). Only the elevation field is rotated; the mesh stays aligned.
    pub slope_deg: [f64; 2],
}

impl GridSpec {
    pub fn new(cells: [usize; 3], spacing: [f64; 3]) -> Self {
        GridSpec {
            cells,
            spacing,
            origin: [0.5 * spacing[0], 0.5 * spacing[1], 0.5 * spacing[2]],
            vertical: Axis::Z,
            slope_deg: [0.0, 0.0],
        }
    }

    pub fn with_vertical(mut self, axis: Axis) -> Self {
        self.vertical = axis;
        self
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_slope(mut self, slope_deg: [f64; 2]) -> Self {
        self.slope_deg = slope_deg;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    spec: GridSpec,
    /// Unit upward direction expressed in grid axes.
    up: [f64; 3],
}

/// Builds a grid, validating counts, spacings and angles.
pub fn build_grid(spec: &GridSpec) -> Result<Grid> {
    let mut bad = Vec::new();
    for a in Axis::ALL {
        let i = a.index();
        if spec.cells[i] == 0 {
            bad.push(format!("cell count along {} must be >= 1", a.name()));
        }
        if !(spec.spacing[i] > 0.0 && spec.spacing[i].is_finite()) {
            bad.push(format!("spacing along {} must be > 0 (got {})", a.name(), spec.spacing[i]));
        }
        if !spec.origin[i].is_finite() {
            bad.push(format!("origin along {} must be finite", a.name()));
        }
    }
    for s in spec.slope_deg {
        if !(s.is_finite() && s.abs() < 90.0) {
            bad.push(format!("slope angles must lie in (-90, 90) degrees (got {s})"));
        }
    }
    if spec.cells.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).is_none() {
        bad.push("cell count overflows".into());
    }
    if !bad.is_empty() {
        return Err(Error::InvalidSpec(bad.join("; ")));
    }
    let [h1, h2] = spec.vertical.tangential();
    let (a, b) = (spec.slope_deg[0].to_radians(), spec.slope_deg[1].to_radians());
    let mut up = [0.0; 3];
    up[h1.index()] = a.sin() * b.cos();
    up[h2.index()] = b.sin();
    up[spec.vertical.index()] = a.cos() * b.cos();
    Ok(Grid { spec: spec.clone(), up })
}

impl Grid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.cells
    }

    pub fn n_cells(&self) -> usize {
        self.spec.cells.iter().product()
    }

    pub fn spacing(&self, axis: Axis) -> f64 {
        self.spec.spacing[axis.index()]
    }

    pub fn vertical(&self) -> Axis {
        self.spec.vertical
    }

    pub fn up(&self) -> [f64; 3] {
        self.up
    }

    pub fn cell_volume(&self) -> f64 {
        self.spec.spacing.iter().product()
    }

    /// Area of a face normal to `axis`.
    pub fn face_area(&self, axis: Axis) -> f64 {
        let [t1, t2] = axis.tangential();
        self.spacing(t1) * self.spacing(t2)
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        let [nx, ny, _] = self.spec.cells;
        ijk[0] + nx * (ijk[1] + ny * ijk[2])
    }

    #[inline]
    pub fn ijk(&self, cell: usize) -> [usize; 3] {
        let [nx, ny, _] = self.spec.cells;
        [cell % nx, (cell / nx) % ny, cell / (nx * ny)]
    }

    /// Centre of a (possibly out-of-range) cell position.
    pub fn center_of(&self, ijk: [i64; 3]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = self.spec.origin[a] + ijk[a] as f64 * self.spec.spacing[a];
        }
        c
    }

    pub fn center(&self, cell: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(cell);
        self.center_of([i as i64, j as i64, k as i64])
    }

    /// Elevation of an arbitrary point [m].
    pub fn elevation_at(&self, p: [f64; 3]) -> f64 {
        p[0] * self.up[0] + p[1] * self.up[1] + p[2] * self.up[2]
    }

    pub fn elevation(&self, cell: usize) -> f64 {
        self.elevation_at(self.center(cell))
    }

    /// Elevation of the centre of a boundary face of `cell`.
    pub fn face_elevation(&self, cell: usize, face: Face) -> f64 {
        let mut p = self.center(cell);
        let a = face.axis().index();
        p[a] += 0.5 * face.sign() * self.spec.spacing[a];
        self.elevation_at(p)
    }

    /// Cells per face, indexed by the face's two tangential axes.
    pub fn face_dims(&self, face: Face) -> [usize; 2] {
        let [t1, t2] = face.axis().tangential();
        [self.spec.cells[t1.index()], self.spec.cells[t2.index()]]
    }

    /// Whether `ijk` sits on `face`.
    pub fn on_face(&self, ijk: [usize; 3], face: Face) -> bool {
        let a = face.axis().index();
        if face.is_max() {
            ijk[a] + 1 == self.spec.cells[a]
        } else {
            ijk[a] == 0
        }
    }

    /// Tangential coordinates of a cell on `face`.
    pub fn face_coords(&self, ijk: [usize; 3], face: Face) -> [usize; 2] {
        let [t1, t2] = face.axis().tangential();
        [ijk[t1.index()], ijk[t2.index()]]
    }

    /// Outward component of the downward unit vector through `face`:
    /// the unit-gradient drainage factor. Positive for faces that look down.
    pub fn downward_component(&self, face: Face) -> f64 {
        -face.sign() * self.up[face.axis().index()]
    }
}

/// A named set of exterior faces sharing one boundary condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub name: String,
    pub face: Face,
    /// Half-open index ranges along the face's tangential axes; `None` means
    /// the whole face.
    pub region: Option<[(usize, usize); 2]>,
}

impl Patch {
    pub fn whole(name: impl Into<String>, face: Face) -> Self {
        Patch { name: name.into(), face, region: None }
    }

    pub fn region(name: impl Into<String>, face: Face, r1: (usize, usize), r2: (usize, usize)) -> Self {
        Patch { name: name.into(), face, region: Some([r1, r2]) }
    }
}

/// Patches together with the face-to-patch lookup table.
#[derive(Debug, Clone)]
pub struct PatchSet {
    patches: Vec<Patch>,
    lookup: [Vec<u32>; 6],
    face_dims: [[usize; 2]; 6],
}

impl PatchSet {
    /// Assigns every exterior face to exactly one patch. Faces left
    /// uncovered by `patches` go to `fallback` (an index into `patches`
    /// whose own face set is ignored), or produce an error.
    pub fn new(grid: &Grid, patches: Vec<Patch>, fallback: Option<usize>) -> Result<Self> {
        const NONE: u32 = u32::MAX;
        let mut lookup: [Vec<u32>; 6] = Default::default();
        let mut face_dims = [[0; 2]; 6];
        for f in Face::ALL {
            let d = grid.face_dims(f);
            face_dims[f as usize] = d;
            lookup[f as usize] = vec![NONE; d[0] * d[1]];
        }
        let mut names = std::collections::HashSet::new();
        for (pi, p) in patches.iter().enumerate() {
            if !names.insert(p.name.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate patch name '{}'", p.name)));
            }
            if Some(pi) == fallback {
                continue;
            }
            let d = face_dims[p.face as usize];
            let [r1, r2] = p.region.unwrap_or([(0, d[0]), (0, d[1])]);
            if r1.0 >= r1.1 || r2.0 >= r2.1 || r1.1 > d[0] || r2.1 > d[1] {
                return Err(Error::InvalidSpec(format!(
                    "patch '{}' region {:?} is empty or exceeds face {} of size {:?}",
                    p.name,
                    [r1, r2],
                    p.face.name(),
                    d
                )));
            }
            let table = &mut lookup[p.face as usize];
            for b in r2.0..r2.1 {
                for a in r1.0..r1.1 {
                    let slot = &mut table[a + d[0] * b];
                    if *slot != NONE {
                        return Err(Error::InvalidSpec(format!(
                            "patches '{}' and '{}' overlap on face {}",
                            patches[*slot as usize].name,
                            p.name,
                            p.face.name()
                        )));
                    }
                    *slot = pi as u32;
                }
            }
        }
        for f in Face::ALL {
            for slot in lookup[f as usize].iter_mut() {
                if *slot == NONE {
                    match fallback {
                        Some(fb) => *slot = fb as u32,
                        None => {
                            return Err(Error::InvalidSpec(format!(
                                "face {} is not fully covered by boundary patches",
                                f.name()
                            )))
                        }
                    }
                }
            }
        }
        Ok(PatchSet { patches, lookup, face_dims })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.patches.iter().position(|p| p.name == name)
    }

    /// Patch owning the boundary face of the cell at tangential coordinates `tc`.
    #[inline]
    pub fn patch_at(&self, face: Face, tc: [usize; 2]) -> usize {
        let d = self.face_dims[face as usize];
        self.lookup[face as usize][tc[0] + d[0] * tc[1]] as usize
    }
}
