//! Variable-length row groupings used by the scatter/gather kernels.

use crate::error::{Error, Result};

/// A compressed list of segments, each naming the input rows it reduces.
///
/// The layout is CSR: segment `s` owns `indices[offsets[s]..offsets[s + 1]]`.
/// Segments may be empty; the reductions then yield a zero row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMap {
    num_rows: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl SegmentMap {
    /// Builds a map over `num_rows` input rows from explicit groups.
    pub fn from_groups(num_rows: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut indices = Vec::with_capacity(groups.iter().map(Vec::len).sum());
        offsets.push(0);
        for group in groups {
            for &r in group {
                if r >= num_rows {
                    return Err(Error::OutOfRangeIndex {
                        what: "segment row",
                        index: r,
                        bound: num_rows,
                    });
                }
                indices.push(r);
            }
            offsets.push(indices.len());
        }
        Ok(Self {
            num_rows,
            offsets,
            indices,
        })
    }

    /// Unchecked constructor for callers that already validated the indices.
    pub(crate) fn from_csr(num_rows: usize, offsets: Vec<usize>, indices: Vec<usize>) -> Self {
        debug_assert_eq!(*offsets.last().unwrap_or(&0), indices.len());
        debug_assert!(indices.iter().all(|&r| r < num_rows));
        Self {
            num_rows,
            offsets,
            indices,
        }
    }

    /// Number of input rows the indices refer to.
    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total number of (segment, row) memberships.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn segment(&self, s: usize) -> &[usize] {
        &self.indices[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn size(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn is_empty_segment(&self, s: usize) -> bool {
        self.size(s) == 0
    }

    /// Indices of all empty segments.
    pub fn empty_segments(&self) -> Vec<usize> {
        (0..self.num_segments())
            .filter(|&s| self.is_empty_segment(s))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.offsets
            .windows(2)
            .map(move |w| &self.indices[w[0]..w[1]])
    }

    /// Block-diagonal repetition: copy `c` maps input rows offset by
    /// `c * num_rows` onto segments offset by `c * num_segments`.
    ///
    /// Used to run one shared topology over many stacked samples.
    pub fn replicate(&self, copies: usize) -> Self {
        let s = self.num_segments();
        let mut offsets = Vec::with_capacity(copies * s + 1);
        let mut indices = Vec::with_capacity(copies * self.nnz());
        offsets.push(0);
        for c in 0..copies {
            let shift = c * self.num_rows;
            for seg in self.iter() {
                indices.extend(seg.iter().map(|&r| r + shift));
                offsets.push(indices.len());
            }
        }
        Self {
            num_rows: copies * self.num_rows,
            offsets,
            indices,
        }
    }

    /// The reverse map: for every input row, the segments that contain it.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.num_rows + 1];
        for &r in &self.indices {
            counts[r + 1] += 1;
        }
        for i in 0..self.num_rows {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut indices = vec![0usize; self.nnz()];
        for (s, seg) in self.iter().enumerate() {
            for &r in seg {
                indices[cursor[r]] = s;
                cursor[r] += 1;
            }
        }
        Self {
            num_rows: self.num_segments(),
            offsets,
            indices,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_and_flags() {
        let map = SegmentMap::from_groups(4, &[vec![0, 2], vec![], vec![3]]).unwrap();
        assert_eq!(map.num_segments(), 3);
        assert_eq!(map.sizes(), vec![2, 0, 1]);
        assert_eq!(map.empty_segments(), vec![1]);
        assert_eq!(map.segment(0), &[0, 2]);
    }

    #[test]
    fn out_of_range_row() {
        assert!(SegmentMap::from_groups(2, &[vec![2]]).is_err());
    }

    #[test]
    fn replicate_offsets_rows_and_segments() {
        let map = SegmentMap::from_groups(3, &[vec![0, 1], vec![2]]).unwrap();
        let rep = map.replicate(2);
        assert_eq!(rep.num_rows(), 6);
        assert_eq!(rep.num_segments(), 4);
        assert_eq!(rep.segment(2), &[3, 4]);
        assert_eq!(rep.segment(3), &[5]);
    }

    #[test]
    fn transpose_twice_is_identity_on_sorted_maps() {
        let map = SegmentMap::from_groups(4, &[vec![0, 2], vec![1, 2, 3], vec![]]).unwrap();
        let back = map.transpose().transpose();
        assert_eq!(back, map);
    }
}
