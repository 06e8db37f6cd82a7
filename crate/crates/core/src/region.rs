//! Exact set algebra over half-open integer boxes in one to three dimensions.
//!
//! A [`Region`] is a finite union of pairwise disjoint [`GridBox`]es kept in a
//! canonical sorted order. Every data-requirement computation in the runtime
//! (mapper application, dependency conflicts, ownership tracking) is expressed
//! in terms of these two types.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::RegionError;

/// Highest supported dimensionality.
pub const MAX_DIMS: usize = 3;

/// A point in index space. Unused trailing dimensions are zero.
pub type Point = [i64; MAX_DIMS];

/// Half-open box `[min, max)` over `dims` integer dimensions.
///
/// Dimensions past `dims` are padded with `[0, 1)` so that volume and equality
/// only depend on the used dimensions.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridBox {
    dims: usize,
    min: Point,
    max: Point,
}

impl GridBox {
    pub fn new(min: &[i64], max: &[i64]) -> Result<Self, RegionError> {
        let dims = min.len();
        if dims == 0 || dims > MAX_DIMS {
            return Err(RegionError::BadDims(dims));
        }
        if max.len() != dims {
            return Err(RegionError::DimensionMismatch {
                left: dims,
                right: max.len(),
            });
        }
        let mut b = Self::unit_padding(dims);
        for k in 0..dims {
            if min[k] > max[k] {
                return Err(RegionError::Inverted {
                    dim: k,
                    min: min[k],
                    max: max[k],
                });
            }
            b.min[k] = min[k];
            b.max[k] = max[k];
        }
        Ok(b)
    }

    /// Box `[0, extent)` in every dimension.
    pub fn from_extent(extent: &[u64]) -> Result<Self, RegionError> {
        let max: Vec<i64> = extent.iter().map(|&e| e as i64).collect();
        Self::new(&vec![0; extent.len()], &max)
    }

    /// The single-cell box at `p`.
    pub fn unit(dims: usize, p: Point) -> Self {
        let mut b = Self::unit_padding(dims);
        for k in 0..dims {
            b.min[k] = p[k];
            b.max[k] = p[k] + 1;
        }
        b
    }

    fn unit_padding(dims: usize) -> Self {
        GridBox {
            dims,
            min: [0; MAX_DIMS],
            max: [1; MAX_DIMS],
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn lo(&self) -> &[i64] {
        &self.min[..self.dims]
    }

    pub fn hi(&self) -> &[i64] {
        &self.max[..self.dims]
    }

    pub fn min_point(&self) -> Point {
        self.min
    }

    /// Length along dimension `k`.
    pub fn len(&self, k: usize) -> u64 {
        (self.max[k] - self.min[k]).max(0) as u64
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dims).any(|k| self.min[k] >= self.max[k])
    }

    pub fn volume(&self) -> u64 {
        if self.is_empty() {
            return 0;
        }
        (0..self.dims).map(|k| self.len(k)).product()
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        (0..self.dims).all(|k| self.min[k] <= p[k] && p[k] < self.max[k])
    }

    pub fn contains_box(&self, other: &GridBox) -> bool {
        other.is_empty()
            || (0..self.dims).all(|k| self.min[k] <= other.min[k] && other.max[k] <= self.max[k])
    }

    fn check_dims(&self, other: &GridBox) -> Result<(), RegionError> {
        if self.dims != other.dims {
            return Err(RegionError::DimensionMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }

    /// Intersection, or `None` when the boxes share no cell.
    pub fn intersect(&self, other: &GridBox) -> Result<Option<GridBox>, RegionError> {
        self.check_dims(other)?;
        Ok(self.intersect_unchecked(other))
    }

    fn intersect_unchecked(&self, other: &GridBox) -> Option<GridBox> {
        let mut out = *self;
        for k in 0..self.dims {
            out.min[k] = self.min[k].max(other.min[k]);
            out.max[k] = self.max[k].min(other.max[k]);
            if out.min[k] >= out.max[k] {
                return None;
            }
        }
        Some(out)
    }

    /// `self \ other` as at most `2 * dims` disjoint boxes, splitting
    /// dimension 0 first.
    fn subtract_unchecked(&self, other: &GridBox, out: &mut Vec<GridBox>) {
        let Some(cut) = self.intersect_unchecked(other) else {
            out.push(*self);
            return;
        };
        let mut rest = *self;
        for k in 0..self.dims {
            if rest.min[k] < cut.min[k] {
                let mut lower = rest;
                lower.max[k] = cut.min[k];
                out.push(lower);
                rest.min[k] = cut.min[k];
            }
            if rest.max[k] > cut.max[k] {
                let mut upper = rest;
                upper.min[k] = cut.max[k];
                out.push(upper);
                rest.max[k] = cut.max[k];
            }
        }
    }

    /// Grows the box by `radius[k]` on both sides of every dimension.
    pub fn dilate(&self, radius: &[u64]) -> GridBox {
        let mut out = *self;
        for k in 0..self.dims {
            let r = radius.get(k).copied().unwrap_or(0) as i64;
            out.min[k] = self.min[k].saturating_sub(r);
            out.max[k] = self.max[k].saturating_add(r);
        }
        out
    }

    /// Replaces dimension `k` by `[min, max)`.
    pub fn with_dim(&self, k: usize, min: i64, max: i64) -> GridBox {
        let mut out = *self;
        out.min[k] = min;
        out.max[k] = max;
        out
    }

    /// Clamps `p` into the box. The box must be non-empty.
    pub fn clamp_point(&self, p: &Point) -> Point {
        let mut q = *p;
        for k in 0..self.dims {
            q[k] = p[k].clamp(self.min[k], self.max[k] - 1);
        }
        q
    }

    /// Row-major linear offset of `p` relative to `min`.
    pub fn linear_index(&self, p: &Point) -> usize {
        let mut idx = 0u64;
        for k in 0..self.dims {
            idx = idx * self.len(k) + (p[k] - self.min[k]) as u64;
        }
        idx as usize
    }

    /// Cells in row-major order (last dimension fastest).
    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        let total = self.volume();
        let mut cur = self.min;
        (0..total).map(move |_| {
            let p = cur;
            for k in (0..self.dims).rev() {
                cur[k] += 1;
                if cur[k] < self.max[k] {
                    break;
                }
                cur[k] = self.min[k];
            }
            p
        })
    }
}

impl fmt::Display for GridBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.dims {
            if k > 0 {
                f.write_str("x")?;
            }
            write!(f, "[{},{})", self.min[k], self.max[k])?;
        }
        Ok(())
    }
}

impl fmt::Debug for GridBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    min: Vec<i64>,
    max: Vec<i64>,
}

impl Serialize for GridBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        BoxRepr {
            min: self.lo().to_vec(),
            max: self.hi().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = BoxRepr::deserialize(d)?;
        GridBox::new(&repr.min, &repr.max).map_err(serde::de::Error::custom)
    }
}

/// Union of disjoint non-empty boxes, kept sorted and greedily merged.
/// Equality compares cell sets, not box decompositions.
#[derive(Clone, Eq)]
pub struct Region {
    dims: usize,
    boxes: Vec<GridBox>,
}

impl PartialEq for Region {
    fn eq(&self, other: &Region) -> bool {
        self.boxes == other.boxes || self.same_cells(other).unwrap_or(false)
    }
}

impl Region {
    pub fn empty(dims: usize) -> Self {
        Region {
            dims,
            boxes: Vec::new(),
        }
    }

    pub fn from_box(b: GridBox) -> Self {
        let dims = b.dims;
        if b.is_empty() {
            return Region::empty(dims);
        }
        Region {
            dims,
            boxes: vec![b],
        }
    }

    /// Builds a region from possibly overlapping boxes.
    pub fn from_boxes(
        dims: usize,
        boxes: impl IntoIterator<Item = GridBox>,
    ) -> Result<Self, RegionError> {
        let mut acc = Region::empty(dims);
        for b in boxes {
            acc = acc.union(&Region::from_box(b))?;
        }
        Ok(acc)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn boxes(&self) -> &[GridBox] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn volume(&self) -> u64 {
        self.boxes.iter().map(GridBox::volume).sum()
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        self.boxes.iter().any(|b| b.contains_point(p))
    }

    /// Cell-set equality, independent of the box decomposition.
    pub fn same_cells(&self, other: &Region) -> Result<bool, RegionError> {
        Ok(self.volume() == other.volume() && self.contains(other)?)
    }

    pub fn contains(&self, other: &Region) -> Result<bool, RegionError> {
        Ok(other.difference(self)?.is_empty())
    }

    /// Smallest box covering the region, `None` when empty.
    pub fn bounding_box(&self) -> Option<GridBox> {
        let mut it = self.boxes.iter();
        let mut acc = *it.next()?;
        for b in it {
            for k in 0..self.dims {
                acc.min[k] = acc.min[k].min(b.min[k]);
                acc.max[k] = acc.max[k].max(b.max[k]);
            }
        }
        Some(acc)
    }

    fn check_dims(&self, other: &Region) -> Result<(), RegionError> {
        if self.dims != other.dims {
            return Err(RegionError::DimensionMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &Region) -> Result<Region, RegionError> {
        self.check_dims(other)?;
        if self.is_empty() {
            return Ok(other.clone());
        }
        let mut boxes = self.boxes.clone();
        boxes.extend(other.difference(self)?.boxes);
        Ok(Region::normalized(self.dims, boxes))
    }

    pub fn intersect(&self, other: &Region) -> Result<Region, RegionError> {
        self.check_dims(other)?;
        let mut boxes = Vec::new();
        for a in &self.boxes {
            for b in &other.boxes {
                if let Some(c) = a.intersect_unchecked(b) {
                    boxes.push(c);
                }
            }
        }
        Ok(Region::normalized(self.dims, boxes))
    }

    pub fn intersect_box(&self, b: &GridBox) -> Result<Region, RegionError> {
        self.intersect(&Region::from_box(*b))
    }

    pub fn difference(&self, other: &Region) -> Result<Region, RegionError> {
        self.check_dims(other)?;
        let mut current = self.boxes.clone();
        let mut next = Vec::new();
        for cut in &other.boxes {
            next.clear();
            for b in &current {
                b.subtract_unchecked(cut, &mut next);
            }
            std::mem::swap(&mut current, &mut next);
            if current.is_empty() {
                break;
            }
        }
        Ok(Region::normalized(self.dims, current))
    }

    /// Re-canonicalizes the box list. Idempotent.
    pub fn normalize(&self) -> Region {
        Region::normalized(self.dims, self.boxes.clone())
    }

    /// Merges adjacent boxes greedily per dimension and sorts. Input boxes
    /// must already be pairwise disjoint.
    fn normalized(dims: usize, mut boxes: Vec<GridBox>) -> Region {
        boxes.retain(|b| !b.is_empty());
        loop {
            let mut changed = false;
            for k in 0..dims {
                changed |= merge_along(&mut boxes, dims, k);
            }
            if !changed {
                break;
            }
        }
        boxes.sort_unstable();
        Region { dims, boxes }
    }
}

/// Sweeps boxes sharing all extents except dimension `k` and fuses runs that
/// touch along `k`.
fn merge_along(boxes: &mut Vec<GridBox>, dims: usize, k: usize) -> bool {
    if boxes.len() < 2 {
        return false;
    }
    let key = |b: &GridBox| {
        let mut other = [(0i64, 0i64); MAX_DIMS];
        for j in 0..dims {
            if j != k {
                other[j] = (b.min[j], b.max[j]);
            }
        }
        (other, b.min[k])
    };
    boxes.sort_unstable_by_key(key);
    let mut out: Vec<GridBox> = Vec::with_capacity(boxes.len());
    let mut changed = false;
    for b in boxes.drain(..) {
        if let Some(last) = out.last_mut() {
            let same_cross_section =
                (0..dims).all(|j| j == k || (last.min[j] == b.min[j] && last.max[j] == b.max[j]));
            if same_cross_section && last.max[k] == b.min[k] {
                last.max[k] = b.max[k];
                changed = true;
                continue;
            }
        }
        out.push(b);
    }
    *boxes = out;
    changed
}

impl From<GridBox> for Region {
    fn from(b: GridBox) -> Self {
        Region::from_box(b)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, b) in self.boxes.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{b}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
