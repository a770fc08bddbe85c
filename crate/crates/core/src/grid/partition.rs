//! Axis-aligned block partitioning and the per-part halo layout.

use std::collections::BTreeMap;

use super::{Axis, Grid};
use crate::error::{Error, Result};

/// Half-open box of global cell indices `[lo, hi)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Block {
    pub fn dims(&self) -> [usize; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, ijk: [i64; 3]) -> bool {
        (0..3).all(|a| ijk[a] >= self.lo[a] as i64 && ijk[a] < self.hi[a] as i64)
    }
}

#[derive(Debug, Clone)]
pub struct PartitionMap {
    parts: usize,
    cuts: [usize; 3],
    blocks: Vec<Block>,
    assignment: Vec<u32>,
    /// Faces between parts, keyed by ordered `(from, to)` part pair, as
    /// `(cell in from, cell in to)` global index pairs sorted by the first.
    interfaces: BTreeMap<(usize, usize), Vec<(usize, usize)>>,
    grid_dims: [usize; 3],
}

fn split(n: usize, pieces: usize) -> Vec<(usize, usize)> {
    let base = n / pieces;
    let extra = n % pieces;
    let mut out = Vec::with_capacity(pieces);
    let mut start = 0;
    for p in 0..pieces {
        let len = base + usize::from(p < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

fn block_sizes(dims: [usize; 3], cuts: [usize; 3]) -> Vec<usize> {
    let s: Vec<Vec<usize>> = (0..3).map(|a| split(dims[a], cuts[a]).iter().map(|r| r.1 - r.0).collect()).collect();
    let mut out = Vec::new();
    for &c in &s[2] {
        for &b in &s[1] {
            for &a in &s[0] {
                out.push(a * b * c);
            }
        }
    }
    out
}

/// Splits the grid into `cuts[0] * cuts[1] * cuts[2]` axis-aligned blocks.
///
/// Parts are numbered with the x block index fastest. Per-part cell counts
/// must differ by at most one.
pub fn partition_simple(grid: &Grid, parts: usize, cuts: [usize; 3]) -> Result<PartitionMap> {
    let dims = grid.dims();
    if parts == 0 {
        return Err(Error::InvalidSpec("at least one part is required".into()));
    }
    if parts > grid.n_cells() {
        return Err(Error::InvalidSpec(format!(
            "{parts} parts requested for a grid of {} cells",
            grid.n_cells()
        )));
    }
    if cuts.iter().product::<usize>() != parts {
        return Err(Error::InvalidSpec(format!("cuts {cuts:?} do not multiply to {parts} parts")));
    }
    for a in 0..3 {
        if cuts[a] == 0 || cuts[a] > dims[a] {
            return Err(Error::InvalidSpec(format!(
                "cannot cut {} cells along {} into {} pieces",
                dims[a],
                Axis::from_index(a).name(),
                cuts[a]
            )));
        }
    }
    let sizes = block_sizes(dims, cuts);
    let (mn, mx) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    if mx - mn > 1 {
        return Err(Error::InvalidSpec(format!(
            "cuts {cuts:?} give unbalanced parts ({mn}..{mx} cells)"
        )));
    }

    let ranges: Vec<Vec<(usize, usize)>> = (0..3).map(|a| split(dims[a], cuts[a])).collect();
    let mut blocks = Vec::with_capacity(parts);
    for c in 0..cuts[2] {
        for b in 0..cuts[1] {
            for a in 0..cuts[0] {
                blocks.push(Block {
                    lo: [ranges[0][a].0, ranges[1][b].0, ranges[2][c].0],
                    hi: [ranges[0][a].1, ranges[1][b].1, ranges[2][c].1],
                });
            }
        }
    }
    let mut assignment = vec![0u32; grid.n_cells()];
    for (p, blk) in blocks.iter().enumerate() {
        for k in blk.lo[2]..blk.hi[2] {
            for j in blk.lo[1]..blk.hi[1] {
                for i in blk.lo[0]..blk.hi[0] {
                    assignment[grid.index([i, j, k])] = p as u32;
                }
            }
        }
    }
    let mut interfaces: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for cell in 0..grid.n_cells() {
        let ijk = grid.ijk(cell);
        let p = assignment[cell] as usize;
        for a in 0..3 {
            if ijk[a] + 1 < dims[a] {
                let mut n = ijk;
                n[a] += 1;
                let nc = grid.index(n);
                let q = assignment[nc] as usize;
                if p != q {
                    interfaces.entry((p, q)).or_default().push((cell, nc));
                    interfaces.entry((q, p)).or_default().push((nc, cell));
                }
            }
        }
    }
    for list in interfaces.values_mut() {
        list.sort_unstable();
    }
    Ok(PartitionMap { parts, cuts, blocks, assignment, interfaces, grid_dims: dims })
}

/// Chooses per-axis cuts for `parts` blocks: balanced to within one cell,
/// with the smallest total interface area.
pub fn auto_cuts(grid: &Grid, parts: usize) -> Result<[usize; 3]> {
    let dims = grid.dims();
    let mut best: Option<([usize; 3], f64, usize)> = None;
    for a in 1..=parts {
        if parts % a != 0 {
            continue;
        }
        for b in 1..=parts / a {
            if (parts / a) % b != 0 {
                continue;
            }
            let c = parts / a / b;
            let cuts = [a, b, c];
            if (0..3).any(|i| cuts[i] > dims[i]) {
                continue;
            }
            let sizes = block_sizes(dims, cuts);
            if sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 1 {
                continue;
            }
            let mut area = 0.0;
            for i in 0..3 {
                let axis = Axis::from_index(i);
                let [t1, t2] = axis.tangential();
                area += (cuts[i] - 1) as f64
                    * (dims[t1.index()] * dims[t2.index()]) as f64
                    * grid.face_area(axis);
            }
            // ties go to the most even cut counts
            let spread = *cuts.iter().max().unwrap();
            if best.map_or(true, |(_, a, s)| area < a || (area == a && spread < s)) {
                best = Some((cuts, area, spread));
            }
        }
    }
    best.map(|b| b.0).ok_or_else(|| {
        Error::InvalidSpec(format!("no balanced axis-aligned decomposition of {dims:?} into {parts} parts"))
    })
}

impl PartitionMap {
    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn cuts(&self) -> [usize; 3] {
        self.cuts
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn part_of(&self, cell: usize) -> usize {
        self.assignment[cell] as usize
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn interfaces(&self) -> &BTreeMap<(usize, usize), Vec<(usize, usize)>> {
        &self.interfaces
    }

    /// Global cells owned by `part`, in local lexicographic order.
    pub fn owned_cells(&self, part: usize) -> Vec<usize> {
        let blk = &self.blocks[part];
        let [nx, ny, _] = self.grid_dims;
        let mut out = Vec::with_capacity(blk.len());
        for k in blk.lo[2]..blk.hi[2] {
            for j in blk.lo[1]..blk.hi[1] {
                for i in blk.lo[0]..blk.hi[0] {
                    out.push(i + nx * (j + ny * k));
                }
            }
        }
        out
    }

    /// Local index map of `part` (block plus one ghost layer).
    pub fn local_layout(&self, part: usize) -> LocalLayout {
        let blk = self.blocks[part];
        let d = blk.dims();
        let ext = [d[0] + 2, d[1] + 2, d[2] + 2];
        let strides = [1, ext[0], ext[0] * ext[1]];
        let len = ext[0] * ext[1] * ext[2];
        let mut kinds = vec![CellKind::Outside; len];
        let mut owned = Vec::with_capacity(blk.len());
        let mut global_of_owned = Vec::with_capacity(blk.len());
        let [nx, ny, _] = self.grid_dims;
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let e = (i + 1) + strides[1] * (j + 1) + strides[2] * (k + 1);
                    kinds[e] = CellKind::Owned;
                    owned.push(e);
                    let g = [blk.lo[0] + i, blk.lo[1] + j, blk.lo[2] + k];
                    global_of_owned.push(g[0] + nx * (g[1] + ny * g[2]));
                }
            }
        }
        let mut layout = LocalLayout { part, block: blk, ext, strides, kinds, owned, global_of_owned, grid_dims: self.grid_dims };
        for (&(_, to), faces) in &self.interfaces {
            if to == part {
                for &(remote, _) in faces {
                    let e = layout.ext_of_global(remote).expect("interface cell adjacent to block");
                    layout.kinds[e] = CellKind::Halo;
                }
            }
        }
        layout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Owned,
    /// Ghost slot holding a copy of a neighbour part's cell.
    Halo,
    /// Ghost slot outside the global domain (or an unused corner slot).
    Outside,
}

/// Per-part storage layout: the owned block padded by one ghost layer,
/// indexed lexicographically with x fastest ("ext" indices).
#[derive(Debug, Clone)]
pub struct LocalLayout {
    pub part: usize,
    pub block: Block,
    pub ext: [usize; 3],
    pub strides: [usize; 3],
    pub kinds: Vec<CellKind>,
    /// Ext indices of owned cells, in local lexicographic order.
    pub owned: Vec<usize>,
    /// Global index of each owned cell, aligned with `owned`.
    pub global_of_owned: Vec<usize>,
    grid_dims: [usize; 3],
}

impl LocalLayout {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Global (possibly out-of-domain) coordinates of an ext slot.
    pub fn global_ijk(&self, e: usize) -> [i64; 3] {
        let i = e % self.ext[0];
        let j = (e / self.ext[0]) % self.ext[1];
        let k = e / (self.ext[0] * self.ext[1]);
        [
            self.block.lo[0] as i64 + i as i64 - 1,
            self.block.lo[1] as i64 + j as i64 - 1,
            self.block.lo[2] as i64 + k as i64 - 1,
        ]
    }

    pub fn ext_of_global(&self, cell: usize) -> Option<usize> {
        let [nx, ny, _] = self.grid_dims;
        let g = [cell % nx, (cell / nx) % ny, cell / (nx * ny)];
        let mut e = 0;
        for a in 0..3 {
            let l = g[a] as i64 - self.block.lo[a] as i64 + 1;
            if l < 0 || l >= self.ext[a] as i64 {
                return None;
            }
            e += l as usize * self.strides[a];
        }
        Some(e)
    }
}

/// Send/receive lists between one part and one neighbour. `send[i]` on
/// part A pairs with `recv[i]` of the matching link on part B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaloLink {
    pub neighbor: usize,
    /// Ext indices of owned cells to send.
    pub send: Vec<usize>,
    /// Ext indices of halo slots to fill.
    pub recv: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HaloDescriptor {
    pub part: usize,
    /// Links ordered by neighbour part id.
    pub links: Vec<HaloLink>,
}

impl HaloDescriptor {
    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

/// Halo descriptors for every part (stencil width one, face neighbours).
pub fn halo_topology(map: &PartitionMap) -> Vec<HaloDescriptor> {
    let layouts: Vec<LocalLayout> = (0..map.parts()).map(|p| map.local_layout(p)).collect();
    halo_topology_with(map, &layouts)
}

pub(crate) fn halo_topology_with(map: &PartitionMap, layouts: &[LocalLayout]) -> Vec<HaloDescriptor> {
    let mut out: Vec<HaloDescriptor> =
        (0..map.parts()).map(|p| HaloDescriptor { part: p, links: Vec::new() }).collect();
    for p in 0..map.parts() {
        for q in 0..map.parts() {
            if p == q {
                continue;
            }
            // p sends to q the cells listed in interfaces[(p, q)]; q receives
            // into the ghost slots of those cells, which it lists from
            // interfaces[(q, p)] second entries. Both sides sort by the sent
            // global cell so the orders agree.
            let Some(out_faces) = map.interfaces().get(&(p, q)) else { continue };
            let mut sent: Vec<usize> = out_faces.iter().map(|f| f.0).collect();
            sent.dedup();
            let mut recv_from_q: Vec<usize> = map.interfaces()[&(q, p)].iter().map(|f| f.0).collect();
            recv_from_q.sort_unstable();
            recv_from_q.dedup();
            out[p].links.push(HaloLink {
                neighbor: q,
                send: sent.iter().map(|&c| layouts[p].ext_of_global(c).unwrap()).collect(),
                recv: recv_from_q.iter().map(|&c| layouts[p].ext_of_global(c).unwrap()).collect(),
            });
        }
    }
    out
}
