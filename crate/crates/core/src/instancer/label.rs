//! 3D connected-component labeling with a two-pass union-find scan.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::BinaryMask;

/// Voxel adjacency used for labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Shared face.
    Six,
    /// Shared face or edge.
    Eighteen,
    /// Shared face, edge or corner.
    TwentySix,
}

impl Default for Connectivity {
    fn default() -> Self {
        Connectivity::TwentySix
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::param(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

impl Connectivity {
    /// All neighbour offsets `(dx, dy, dz)` for this adjacency.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let max_nonzero = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let nz = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if nz > 0 && nz <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets of neighbours that precede a voxel in x-fastest scan order.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| (dz, dy, dx) < (0, 0, 0))
            .collect()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // Label 0 is background.
        DisjointSet { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    // Smaller label wins so roots are the earliest-created label.
    fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find(a);
        let rb = self.find(b);
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Label map with components numbered `1..=count` in order of their
/// smallest linear index; background is 0.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, usize) {
    let geom = mask.geometry();
    let [nx, ny, nz] = geom.dims;
    let backward = connectivity.backward_offsets();
    let mut labels = vec![0u32; geom.len()];
    let mut sets = DisjointSet::new();

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = geom.index(x, y, z);
                if !mask.bits()[i] {
                    continue;
                }
                let mut current = 0u32;
                for &[dx, dy, dz] in &backward {
                    let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 {
                        continue;
                    }
                    let l = labels[geom.index(qx as usize, qy as usize, qz as usize)];
                    if l == 0 {
                        continue;
                    }
                    current = if current == 0 { l } else { sets.union(current, l) };
                }
                labels[i] = if current == 0 { sets.make() } else { current };
            }
        }
    }

    // Provisional roots are ordered by creation, and creation follows scan
    // order, so numbering roots by first appearance gives the final order.
    let mut final_id = vec![0u32; sets.parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l);
        if final_id[root as usize] == 0 {
            count += 1;
            final_id[root as usize] = count;
        }
        *l = final_id[root as usize];
    }
    (labels, count as usize)
}

/// Foreground partitioned into maximal connected sets, each sorted, ordered by
/// smallest linear index.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Vec<usize>> {
    let (labels, count) = label_components(mask, connectivity);
    let mut out = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            out[l as usize - 1].push(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;

    #[test]
    fn offset_counts() {
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::Eighteen.offsets().len(), 18);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
        assert_eq!(Connectivity::TwentySix.backward_offsets().len(), 13);
    }

    #[test]
    fn gap_splits_row() {
        let g = Geometry::with_spacing([3, 1, 1], [1.0; 3]).unwrap();
        let m = BinaryMask::new(g, vec![true, false, true]).unwrap();
        assert_eq!(connected_components(&m, Connectivity::TwentySix), vec![vec![0], vec![2]]);
    }

    #[test]
    fn corner_contact() {
        let g = Geometry::with_spacing([2, 2, 2], [1.0; 3]).unwrap();
        let m = BinaryMask::from_indices(g, &[g.index(0, 0, 0), g.index(1, 1, 1)]).unwrap();
        assert_eq!(connected_components(&m, Connectivity::TwentySix).len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Eighteen).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::Six).len(), 2);
        let e = BinaryMask::from_indices(g, &[g.index(0, 0, 0), g.index(1, 1, 0)]).unwrap();
        assert_eq!(connected_components(&e, Connectivity::Eighteen).len(), 1);
        assert_eq!(connected_components(&e, Connectivity::Six).len(), 2);
    }

    #[test]
    fn u_shape_merges_late() {
        // Two arms that only join at the bottom row: provisional labels merge.
        let g = Geometry::with_spacing([5, 3, 1], [1.0; 3]).unwrap();
        let m = BinaryMask::from_fn(g, |[x, y, _]| x == 0 || x == 4 || y == 2).unwrap();
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.len(), 1);
        assert_eq!(cc[0].len(), m.count());
    }

    #[test]
    fn parse_connectivity() {
        assert_eq!(Connectivity::try_from(18).unwrap(), Connectivity::Eighteen);
        assert!(Connectivity::try_from(8).is_err());
        let c: Connectivity = serde_json::from_str("6").unwrap();
        assert_eq!(c, Connectivity::Six);
        assert!(serde_json::from_str::<Connectivity>("4").is_err());
    }
}
