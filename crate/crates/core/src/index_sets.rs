//! ANOVA-structured frequency index sets.
//!
//! A [`GroupedIndexSet`] is a disjoint union of per-term frequency boxes plus,
//! optionally, the constant frequency `0`. The box of a term `u` with even
//! bandwidths `m_j` holds every `k` with `k_j ∈ [-m_j/2, m_j/2) \ {0}` for
//! `j ∈ u` and `k_j = 0` elsewhere, so every member has support exactly `u`
//! and boxes of distinct terms never overlap.
//!
//! Coordinates are zero-based throughout. The global enumeration order is
//! fixed: the constant first (when present), then the boxes in declaration
//! order, each box enumerated lexicographically with its first dimension
//! varying slowest.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A subset of coordinate indices, strictly increasing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct AnovaTerm(Vec<usize>);

impl AnovaTerm {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTerm {
                dims,
                reason: "dimensions must be strictly increasing",
            });
        }
        Ok(AnovaTerm(dims))
    }

    /// The empty term, i.e. the constant part of a function.
    pub fn empty() -> Self {
        AnovaTerm(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, dim: usize) -> bool {
        self.0.binary_search(&dim).is_ok()
    }

    /// Position of `dim` within the term.
    pub fn position(&self, dim: usize) -> Option<usize> {
        self.0.binary_search(&dim).ok()
    }

    pub fn is_subset_of(&self, other: &AnovaTerm) -> bool {
        self.0.iter().all(|&j| other.contains(j))
    }

    /// All non-empty proper and improper subsets, ordered by size then lexicographically.
    pub fn subterms(&self) -> Vec<AnovaTerm> {
        let r = self.0.len();
        let mut out: Vec<AnovaTerm> = (1u32..(1 << r))
            .map(|mask| {
                AnovaTerm(
                    (0..r)
                        .filter(|&b| mask & (1 << b) != 0)
                        .map(|b| self.0[b])
                        .collect(),
                )
            })
            .collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }
}

impl TryFrom<Vec<usize>> for AnovaTerm {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        AnovaTerm::new(dims)
    }
}

impl From<AnovaTerm> for Vec<usize> {
    fn from(term: AnovaTerm) -> Self {
        term.0
    }
}

impl fmt::Display for AnovaTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

/// Per-dimension bandwidths of one term; every entry is even.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BandwidthVector(Vec<usize>);

impl BandwidthVector {
    pub fn new(values: Vec<usize>) -> Result<Self> {
        if let Some((dim, &value)) = values.iter().enumerate().find(|(_, &m)| m % 2 != 0) {
            return Err(Error::InvalidBandwidth {
                dim,
                value,
                reason: "bandwidths must be even",
            });
        }
        Ok(BandwidthVector(values))
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for BandwidthVector {
    type Error = Error;

    fn try_from(values: Vec<usize>) -> Result<Self> {
        BandwidthVector::new(values)
    }
}

impl From<BandwidthVector> for Vec<usize> {
    fn from(bw: BandwidthVector) -> Self {
        bw.0
    }
}

/// Number of frequencies in `[-m/2, m/2) \ {0}`.
#[inline]
pub fn axis_len(m: usize) -> usize {
    m.saturating_sub(1)
}

/// The `idx`-th frequency of `[-m/2, m/2) \ {0}` in increasing order.
#[inline]
pub fn axis_frequency(m: usize, idx: usize) -> i64 {
    let v = idx as i64 - (m / 2) as i64;
    if v >= 0 {
        v + 1
    } else {
        v
    }
}

/// Inverse of [`axis_frequency`].
#[inline]
pub fn axis_index(m: usize, k: i64) -> Option<usize> {
    let h = (m / 2) as i64;
    if k == 0 || k < -h || k >= h {
        return None;
    }
    Some(if k < 0 { (k + h) as usize } else { (k + h - 1) as usize })
}

/// Half-bandwidth level at which `k` enters `[-m'/2, m'/2)`: the smallest `q`
/// such that `k ∈ [-q, q)`.
#[inline]
pub(crate) fn entry_level(k: i64) -> usize {
    if k < 0 {
        (-k) as usize
    } else {
        k as usize + 1
    }
}

/// The set of nonzero coordinates of `k`.
pub fn support(k: &[i64]) -> AnovaTerm {
    AnovaTerm(
        k.iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(j, _)| j)
            .collect(),
    )
}

/// Frequencies of one ANOVA term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyBox {
    d: usize,
    term: AnovaTerm,
    bandwidths: Vec<usize>,
    len: usize,
}

impl FrequencyBox {
    /// Builds the box of `term` in dimension `d`. Bandwidths must be even and
    /// nonzero: a zero entry would put `0` in a coordinate of the term and
    /// break the support property.
    pub fn new(d: usize, term: AnovaTerm, bandwidths: &BandwidthVector) -> Result<Self> {
        if bandwidths.len() != term.len() {
            return Err(Error::DimensionMismatch {
                expected: term.len(),
                actual: bandwidths.len(),
            });
        }
        if let Some(&j) = term.dims().iter().find(|&&j| j >= d) {
            return Err(Error::InvalidTerm {
                dims: vec![j],
                reason: "dimension out of range",
            });
        }
        if term.is_empty() {
            return Err(Error::InvalidTerm {
                dims: Vec::new(),
                reason: "the constant is not a box; use the constant flag",
            });
        }
        for (pos, &m) in bandwidths.values().iter().enumerate() {
            if m == 0 {
                return Err(Error::InvalidBandwidth {
                    dim: term.dims()[pos],
                    value: 0,
                    reason: "a zero bandwidth inside the term contradicts its support",
                });
            }
        }
        Ok(Self::from_parts(d, term, bandwidths.values().to_vec()))
    }

    // Zero entries are admitted here and produce an empty box.
    fn from_parts(d: usize, term: AnovaTerm, bandwidths: Vec<usize>) -> Self {
        let len = bandwidths.iter().map(|&m| axis_len(m)).product();
        FrequencyBox {
            d,
            term,
            bandwidths,
            len,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn term(&self) -> &AnovaTerm {
        &self.term
    }

    pub fn bandwidths(&self) -> &[usize] {
        &self.bandwidths
    }

    /// Number of frequencies along each dimension of the term.
    pub fn axis_lens(&self) -> Vec<usize> {
        self.bandwidths.iter().map(|&m| axis_len(m)).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The `idx`-th frequency of the box as a full-width vector.
    pub fn frequency(&self, idx: usize) -> Vec<i64> {
        let mut k = vec![0i64; self.d];
        self.write_frequency(idx, &mut k);
        k
    }

    fn write_frequency(&self, mut idx: usize, k: &mut [i64]) {
        for (pos, &j) in self.term.dims().iter().enumerate().rev() {
            let m = self.bandwidths[pos];
            let n = axis_len(m);
            k[j] = axis_frequency(m, idx % n);
            idx /= n;
        }
    }

    /// Position of `k` inside the box, if it is a member.
    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.d {
            return None;
        }
        let mut idx = 0usize;
        let mut pos = 0usize;
        for (j, &kj) in k.iter().enumerate() {
            if pos < self.term.len() && self.term.dims()[pos] == j {
                let m = self.bandwidths[pos];
                idx = idx * axis_len(m) + axis_index(m, kj)?;
                pos += 1;
            } else if kj != 0 {
                return None;
            }
        }
        Some(idx)
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        self.index_of(k).is_some()
    }

    /// Frequencies in enumeration order.
    pub fn iter(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len).map(move |idx| self.frequency(idx))
    }
}

/// The union of per-term boxes and optionally the constant frequency.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IndexSetRepr", into = "IndexSetRepr")]
pub struct GroupedIndexSet {
    d: usize,
    constant: bool,
    boxes: Vec<FrequencyBox>,
    offsets: Vec<usize>,
    len: usize,
}

impl GroupedIndexSet {
    /// Builds the grouped set from `(term, bandwidths)` pairs in declaration order.
    pub fn new(
        d: usize,
        terms: Vec<(AnovaTerm, BandwidthVector)>,
        include_constant: bool,
    ) -> Result<Self> {
        let mut boxes = Vec::with_capacity(terms.len());
        for (term, bw) in terms {
            if boxes.iter().any(|b: &FrequencyBox| b.term == term) {
                return Err(Error::DuplicateTerm(term.0));
            }
            boxes.push(FrequencyBox::new(d, term, &bw)?);
        }
        Ok(Self::from_boxes(d, boxes, include_constant))
    }

    fn from_boxes(d: usize, boxes: Vec<FrequencyBox>, constant: bool) -> Self {
        let mut offsets = Vec::with_capacity(boxes.len());
        let mut len = usize::from(constant);
        for b in &boxes {
            offsets.push(len);
            len += b.len();
        }
        GroupedIndexSet {
            d,
            constant,
            boxes,
            offsets,
            len,
        }
    }

    /// Constant frequency only.
    pub fn constant_only(d: usize) -> Self {
        Self::from_boxes(d, Vec::new(), true)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_constant(&self) -> bool {
        self.constant
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn boxes(&self) -> &[FrequencyBox] {
        &self.boxes
    }

    pub fn terms(&self) -> impl Iterator<Item = &AnovaTerm> {
        self.boxes.iter().map(|b| &b.term)
    }

    /// Index of `term` among the boxes.
    pub fn term_index(&self, term: &AnovaTerm) -> Option<usize> {
        self.boxes.iter().position(|b| &b.term == term)
    }

    pub fn bandwidths_of(&self, term: &AnovaTerm) -> Option<&[usize]> {
        self.term_index(term).map(|i| self.boxes[i].bandwidths())
    }

    /// Global positions occupied by box `i`.
    pub fn box_range(&self, i: usize) -> Range<usize> {
        let start = self.offsets[i];
        start..start + self.boxes[i].len()
    }

    /// Frequency at global position `pos`.
    pub fn frequency(&self, pos: usize) -> Vec<i64> {
        assert!(pos < self.len, "position {pos} out of range");
        if self.constant && pos == 0 {
            return vec![0; self.d];
        }
        let i = self.offsets.partition_point(|&o| o <= pos) - 1;
        self.boxes[i].frequency(pos - self.offsets[i])
    }

    /// Global position of `k`, if present.
    pub fn position(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.d {
            return None;
        }
        let supp = support(k);
        if supp.is_empty() {
            return self.constant.then_some(0);
        }
        let i = self.term_index(&supp)?;
        self.boxes[i].index_of(k).map(|idx| self.offsets[i] + idx)
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        self.position(k).is_some()
    }

    /// All frequencies in global enumeration order.
    pub fn frequencies(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        let constant = self.constant.then(|| vec![0i64; self.d]);
        constant
            .into_iter()
            .chain(self.boxes.iter().flat_map(|b| b.iter()))
    }

    /// Cardinality from the product formula, without enumeration.
    pub fn cardinality_formula(&self) -> usize {
        usize::from(self.constant)
            + self
                .boxes
                .iter()
                .map(|b| b.bandwidths.iter().map(|&m| axis_len(m)).product::<usize>())
                .sum::<usize>()
    }

    /// The set with dimension `dim` of `term` narrowed to bandwidth `m_new`;
    /// all other boxes are unchanged. `m_new = 0` empties the term's box.
    pub fn varied_set(&self, term: &AnovaTerm, dim: usize, m_new: usize) -> Result<Self> {
        let i = self
            .term_index(term)
            .ok_or_else(|| Error::UnknownTerm(term.0.clone()))?;
        let pos = term.position(dim).ok_or(Error::InvalidTerm {
            dims: term.0.clone(),
            reason: "probed dimension is not part of the term",
        })?;
        if m_new % 2 != 0 {
            return Err(Error::InvalidBandwidth {
                dim,
                value: m_new,
                reason: "bandwidths must be even",
            });
        }
        let current = self.boxes[i].bandwidths[pos];
        if m_new > current {
            return Err(Error::OutOfRange {
                requested: m_new,
                current,
            });
        }
        let mut boxes = self.boxes.clone();
        let mut bw = boxes[i].bandwidths.clone();
        bw[pos] = m_new;
        boxes[i] = FrequencyBox::from_parts(self.d, term.clone(), bw);
        Ok(Self::from_boxes(self.d, boxes, self.constant))
    }

    /// Number of frequencies of `self` absent from `varied`, using box structure.
    pub fn difference_len(&self, varied: &GroupedIndexSet) -> Result<usize> {
        check_subset(self, varied)?;
        Ok(self.len - varied.len)
    }
}

fn check_subset(base: &GroupedIndexSet, varied: &GroupedIndexSet) -> Result<()> {
    if base.d != varied.d {
        return Err(Error::DimensionMismatch {
            expected: base.d,
            actual: varied.d,
        });
    }
    if varied.constant && !base.constant {
        return Err(Error::NotSubset("constant frequency missing from base".into()));
    }
    for vb in &varied.boxes {
        if vb.is_empty() {
            continue;
        }
        let bb = base
            .term_index(&vb.term)
            .map(|i| &base.boxes[i])
            .ok_or_else(|| Error::NotSubset(format!("term {} missing from base", vb.term)))?;
        if vb
            .bandwidths
            .iter()
            .zip(&bb.bandwidths)
            .any(|(&mv, &mb)| mv > mb)
        {
            return Err(Error::NotSubset(format!(
                "box of term {} exceeds the base box",
                vb.term
            )));
        }
    }
    Ok(())
}

/// Positions (in the enumeration of `base`) of frequencies absent from `varied`.
pub fn set_difference_tail(base: &GroupedIndexSet, varied: &GroupedIndexSet) -> Result<Vec<usize>> {
    check_subset(base, varied)?;
    let mut out = Vec::with_capacity(base.len - varied.len);
    if base.constant && !varied.constant {
        out.push(0);
    }
    for (i, bb) in base.boxes.iter().enumerate() {
        let offset = base.offsets[i];
        let vb = varied.term_index(&bb.term).map(|v| &varied.boxes[v]);
        match vb {
            None => out.extend(base.box_range(i)),
            Some(vb) if vb.bandwidths == bb.bandwidths => {}
            Some(vb) => {
                // Per-dimension half-open ranges are nested, so membership is a
                // per-coordinate bound check.
                let mut k = vec![0i64; base.d];
                for idx in 0..bb.len() {
                    bb.write_frequency(idx, &mut k);
                    let inside = bb.term.dims().iter().zip(&vb.bandwidths).all(|(&j, &m)| {
                        let h = (m / 2) as i64;
                        k[j] >= -h && k[j] < h
                    });
                    if !inside {
                        out.push(offset + idx);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermSpec {
    pub dims: Vec<usize>,
    pub bandwidths: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexSetRepr {
    pub d: usize,
    pub constant: bool,
    pub terms: Vec<TermSpec>,
}

impl TryFrom<IndexSetRepr> for GroupedIndexSet {
    type Error = Error;

    fn try_from(repr: IndexSetRepr) -> Result<Self> {
        let terms = repr
            .terms
            .into_iter()
            .map(|t| Ok((AnovaTerm::new(t.dims)?, BandwidthVector::new(t.bandwidths)?)))
            .collect::<Result<Vec<_>>>()?;
        GroupedIndexSet::new(repr.d, terms, repr.constant)
    }
}

impl From<GroupedIndexSet> for IndexSetRepr {
    fn from(set: GroupedIndexSet) -> Self {
        IndexSetRepr {
            d: set.d,
            constant: set.constant,
            terms: set
                .boxes
                .into_iter()
                .map(|b| TermSpec {
                    dims: b.term.0,
                    bandwidths: b.bandwidths,
                })
                .collect(),
        }
    }
}
