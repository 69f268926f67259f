use num_complex::Complex64;
use rayon::prelude::*;

use super::{cis_turns, reduced_turns, FourierOperator};
use crate::error::Result;
use crate::index_sets::{axis_len, GroupedIndexSet};

/// Points handled together so that one coefficient block stays in cache.
const BLOCK: usize = 64;
/// Points per parallel forward task.
const FORWARD_CHUNK: usize = 8 * BLOCK;
/// Exact exponentials are recomputed every this many powers.
const SEED_STRIDE: usize = 32;
/// Upper bound on cached table memory.
pub const DEFAULT_CACHE_BYTES: usize = 256 << 20;
/// Upper bound on partial adjoint accumulators.
const PARTIAL_BYTES: usize = 256 << 20;
const MAX_PARTIALS: usize = 64;

/// One box in the coefficient vector.
struct TermLayout {
    dims: Vec<usize>,
    widths: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Per-dimension rows of `exp(2πi k x)` for `k` in `[-h, h) \ {0}` where
/// `2h` is the largest bandwidth of that dimension. A box with a smaller
/// bandwidth reads a contiguous window of the row.
struct AxisTables {
    half: Vec<usize>,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl AxisTables {
    fn new(half: &[usize], rows: usize) -> Self {
        let widths: Vec<usize> = half.iter().map(|&h| row_width(h)).collect();
        AxisTables {
            half: half.to_vec(),
            re: widths.iter().map(|&w| vec![0.0; w * rows]).collect(),
            im: widths.iter().map(|&w| vec![0.0; w * rows]).collect(),
        }
    }

    /// Fills local rows `0..count` with the points `start..start+count`.
    fn fill(&mut self, points: &[f64], d: usize, start: usize, count: usize) {
        for j in 0..self.half.len() {
            let h = self.half[j];
            if h == 0 {
                continue;
            }
            let w = row_width(h);
            let re = &mut self.re[j][..w * count];
            let im = &mut self.im[j][..w * count];
            for (b, (r, i)) in re.chunks_exact_mut(w).zip(im.chunks_exact_mut(w)).enumerate() {
                fill_row(points[(start + b) * d + j], h, r, i);
            }
        }
    }

    fn fill_parallel(&mut self, points: &[f64], d: usize) {
        for j in 0..self.half.len() {
            let h = self.half[j];
            if h == 0 {
                continue;
            }
            let w = row_width(h);
            self.re[j]
                .par_chunks_exact_mut(w)
                .zip(self.im[j].par_chunks_exact_mut(w))
                .enumerate()
                .for_each(|(i, (r, im))| fill_row(points[i * d + j], h, r, im));
        }
    }

    /// The `width` entries of row `row` belonging to bandwidth `width + 1`.
    #[inline]
    fn window(&self, dim: usize, row: usize, width: usize) -> (&[f64], &[f64]) {
        let h = self.half[dim];
        let stride = row_width(h);
        let start = row * stride + h - (width + 1) / 2;
        (
            &self.re[dim][start..start + width],
            &self.im[dim][start..start + width],
        )
    }

    /// Like [`window`](Self::window) for `rows` consecutive rows; the
    /// returned stride separates them.
    fn block_window(&self, dim: usize, row0: usize, rows: usize, width: usize) -> (&[f64], &[f64], usize) {
        let h = self.half[dim];
        let stride = row_width(h);
        let start = row0 * stride + h - (width + 1) / 2;
        let end = (row0 + rows - 1) * stride + h - (width + 1) / 2 + width;
        (&self.re[dim][start..end], &self.im[dim][start..end], stride)
    }
}

#[inline]
fn row_width(h: usize) -> usize {
    (2 * h).saturating_sub(1)
}

/// Writes `exp(2πi k x)` for `k = -h, …, -1, 1, …, h-1`.
fn fill_row(x: f64, h: usize, re: &mut [f64], im: &mut [f64]) {
    let one = Complex64::new(1.0, 0.0);
    let mut base = [one; SEED_STRIDE];
    base[1] = cis_turns(reduced_turns(1.0, x));
    for b in 2..SEED_STRIDE.min(h + 1) {
        base[b] = base[b - 1] * base[1];
    }
    let mut seed = one;
    for q in 1..=h {
        let b = q % SEED_STRIDE;
        if b == 0 {
            seed = cis_turns(reduced_turns(q as f64, x));
        }
        let p = if q < SEED_STRIDE {
            base[b]
        } else if b == 0 {
            seed
        } else {
            seed * base[b]
        };
        re[h - q] = p.re;
        im[h - q] = -p.im;
        if q < h {
            re[h - 1 + q] = p.re;
            im[h - 1 + q] = p.im;
        }
    }
}

/// Direct evaluation through per-dimension exponential tables.
///
/// Each box is a tensor product, so a point costs one pass over the box
/// coefficients. Tables are kept for all points when they fit the cache
/// budget and rebuilt per block otherwise; both paths give identical bits.
pub struct DirectOperator<'a> {
    d: usize,
    n: usize,
    points: &'a [f64],
    constant: bool,
    n_coeffs: usize,
    terms: Vec<TermLayout>,
    half: Vec<usize>,
    cache: Option<AxisTables>,
}

impl<'a> DirectOperator<'a> {
    pub fn new(points: &'a [f64], index_set: &GroupedIndexSet) -> Self {
        Self::with_cache_budget(points, index_set, DEFAULT_CACHE_BYTES)
    }

    pub fn with_cache_budget(
        points: &'a [f64],
        index_set: &GroupedIndexSet,
        budget_bytes: usize,
    ) -> Self {
        let d = index_set.d();
        let n = points.len() / d;
        let mut half = vec![0usize; d];
        let mut terms = Vec::new();
        for (i, b) in index_set.boxes().iter().enumerate() {
            if b.is_empty() {
                continue;
            }
            for (&j, &m) in b.term().dims().iter().zip(b.bandwidths()) {
                half[j] = half[j].max(m / 2);
            }
            terms.push(TermLayout {
                dims: b.term().dims().to_vec(),
                widths: b.bandwidths().iter().map(|&m| axis_len(m)).collect(),
                offset: index_set.box_range(i).start,
                len: b.len(),
            });
        }
        let table_bytes = half
            .iter()
            .map(|&h| row_width(h))
            .sum::<usize>()
            .saturating_mul(n)
            .saturating_mul(16);
        let cache = (table_bytes <= budget_bytes).then(|| {
            let mut t = AxisTables::new(&half, n);
            t.fill_parallel(points, d);
            t
        });
        DirectOperator {
            d,
            n,
            points,
            constant: index_set.has_constant(),
            n_coeffs: index_set.len(),
            terms,
            half,
            cache,
        }
    }

    /// True when the exponential tables are held for all points.
    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    fn scratch(&self) -> Scratch {
        let levels = self.terms.iter().map(|t| t.dims.len()).max().unwrap_or(0);
        Scratch {
            tables: if self.cache.is_none() {
                Some(AxisTables::new(&self.half, BLOCK))
            } else {
                None
            },
            levels: vec![(Vec::new(), Vec::new()); levels],
            gr: Vec::new(),
            gi: Vec::new(),
        }
    }

    /// Tables covering points `start..start+count` and the row of `start`.
    fn tables_for<'s>(
        &'s self,
        scratch: &'s mut Option<AxisTables>,
        start: usize,
        count: usize,
    ) -> (&'s AxisTables, usize) {
        match &self.cache {
            Some(t) => (t, start),
            None => {
                let t = scratch.as_mut().expect("streaming scratch");
                t.fill(self.points, self.d, start, count);
                (t, 0)
            }
        }
    }

    fn forward_range(
        &self,
        cr: &[f64],
        ci: &[f64],
        start: usize,
        out: &mut [Complex64],
        scratch: &mut Scratch,
    ) {
        let c0 = if self.constant {
            Complex64::new(cr[0], ci[0])
        } else {
            Complex64::new(0.0, 0.0)
        };
        out.fill(c0);
        for (bi, block) in out.chunks_mut(BLOCK).enumerate() {
            let bstart = start + bi * BLOCK;
            let Scratch {
                tables,
                levels,
                gr,
                gi,
            } = scratch;
            let (tabs, row0) = self.tables_for(tables, bstart, block.len());
            let mut rows: Vec<(&[f64], &[f64])> = Vec::with_capacity(self.d);
            for term in &self.terms {
                let tr = &cr[term.offset..term.offset + term.len];
                let ti = &ci[term.offset..term.offset + term.len];
                let r = term.dims.len();
                if r == 1 {
                    for (b, o) in block.iter_mut().enumerate() {
                        let (xr, xi) = tabs.window(term.dims[0], row0 + b, term.widths[0]);
                        let (re, im) = dot(xr, xi, tr, ti);
                        o.re += re;
                        o.im += im;
                    }
                    continue;
                }
                // Last axis for the whole block at once:
                // G[b, k'] = Σ_{k_r} T_r[b, k_r] c[k', k_r].
                let nb = block.len();
                let wl = term.widths[r - 1];
                let outer = term.len / wl;
                let (lr, li, stride) = tabs.block_window(term.dims[r - 1], row0, nb, wl);
                gr.resize(nb * outer, 0.0);
                gi.resize(nb * outer, 0.0);
                let t = Mat::new(nb, wl, stride, 1);
                let ct = Mat::new(wl, outer, 1, wl);
                let g = Mat::new(nb, outer, outer, 1);
                gemm(1.0, lr, t, tr, ct, 0.0, gr, g);
                gemm(-1.0, li, t, ti, ct, 1.0, gr, g);
                gemm(1.0, lr, t, ti, ct, 0.0, gi, g);
                gemm(1.0, li, t, tr, ct, 1.0, gi, g);
                for (b, o) in block.iter_mut().enumerate() {
                    rows.clear();
                    rows.extend(
                        term.dims[..r - 1]
                            .iter()
                            .zip(&term.widths)
                            .map(|(&j, &w)| tabs.window(j, row0 + b, w)),
                    );
                    let s = b * outer..(b + 1) * outer;
                    let (re, im) = contract(&rows, &gr[s.clone()], &gi[s], levels);
                    o.re += re;
                    o.im += im;
                }
            }
        }
    }

    fn adjoint_range(
        &self,
        values: &[Complex64],
        start: usize,
        acc_re: &mut [f64],
        acc_im: &mut [f64],
        scratch: &mut Scratch,
    ) {
        if self.constant {
            for v in values {
                acc_re[0] += v.re;
                acc_im[0] += v.im;
            }
        }
        for (bi, block) in values.chunks(BLOCK).enumerate() {
            let bstart = start + bi * BLOCK;
            let Scratch {
                tables,
                levels,
                gr,
                gi,
            } = scratch;
            let (tabs, row0) = self.tables_for(tables, bstart, block.len());
            let mut rows: Vec<(&[f64], &[f64])> = Vec::with_capacity(self.d);
            for term in &self.terms {
                let yr = &mut acc_re[term.offset..term.offset + term.len];
                let yi = &mut acc_im[term.offset..term.offset + term.len];
                let r = term.dims.len();
                if r == 1 {
                    for (b, v) in block.iter().enumerate() {
                        let (xr, xi) = tabs.window(term.dims[0], row0 + b, term.widths[0]);
                        for (((y_re, y_im), &t_re), &t_im) in
                            yr.iter_mut().zip(yi.iter_mut()).zip(xr).zip(xi)
                        {
                            *y_re += v.re * t_re + v.im * t_im;
                            *y_im += v.im * t_re - v.re * t_im;
                        }
                    }
                    continue;
                }
                // H[b, k'] = v_b Π_{l<r} conj(T_l[b, k_l]), then
                // y[k', k_r] += Σ_b H[b, k'] conj(T_r[b, k_r]).
                let nb = block.len();
                let wl = term.widths[r - 1];
                let outer = term.len / wl;
                gr.resize(nb * outer, 0.0);
                gi.resize(nb * outer, 0.0);
                for (b, v) in block.iter().enumerate() {
                    rows.clear();
                    rows.extend(
                        term.dims[..r - 1]
                            .iter()
                            .zip(&term.widths)
                            .map(|(&j, &w)| tabs.window(j, row0 + b, w)),
                    );
                    let s = b * outer..(b + 1) * outer;
                    conj_outer(&rows, v.re, v.im, &mut gr[s.clone()], &mut gi[s], levels);
                }
                let (lr, li, stride) = tabs.block_window(term.dims[r - 1], row0, nb, wl);
                let ht = Mat::new(outer, nb, 1, outer);
                let t = Mat::new(nb, wl, stride, 1);
                let y = Mat::new(outer, wl, wl, 1);
                gemm(1.0, gr, ht, lr, t, 1.0, yr, y);
                gemm(1.0, gi, ht, li, t, 1.0, yr, y);
                gemm(1.0, gi, ht, lr, t, 1.0, yi, y);
                gemm(-1.0, gr, ht, li, t, 1.0, yi, y);
            }
        }
    }

    fn adjoint_chunk_len(&self) -> usize {
        let by_memory = (PARTIAL_BYTES / (16 * self.n_coeffs.max(1))).max(1);
        let parts = MAX_PARTIALS.min(by_memory).min(self.n.div_ceil(16 * BLOCK)).max(1);
        self.n.div_ceil(parts).div_ceil(BLOCK) * BLOCK
    }
}

struct Scratch {
    tables: Option<AxisTables>,
    levels: Vec<(Vec<f64>, Vec<f64>)>,
    /// Block-by-outer-index buffers for the last-axis products.
    gr: Vec<f64>,
    gi: Vec<f64>,
}

impl FourierOperator for DirectOperator<'_> {
    fn n_points(&self) -> usize {
        self.n
    }

    fn n_coefficients(&self) -> usize {
        self.n_coeffs
    }

    fn forward(&self, coeffs: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        self.check_forward(coeffs, out)?;
        let cr: Vec<f64> = coeffs.iter().map(|c| c.re).collect();
        let ci: Vec<f64> = coeffs.iter().map(|c| c.im).collect();
        out.par_chunks_mut(FORWARD_CHUNK)
            .enumerate()
            .for_each(|(ci_idx, chunk)| {
                let mut scratch = self.scratch();
                self.forward_range(&cr, &ci, ci_idx * FORWARD_CHUNK, chunk, &mut scratch);
            });
        Ok(())
    }

    fn adjoint(&self, values: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        self.check_adjoint(values, out)?;
        let chunk = self.adjoint_chunk_len();
        // Fixed chunking and an in-order reduction keep the result independent
        // of the thread count.
        let partials: Vec<(Vec<f64>, Vec<f64>)> = values
            .par_chunks(chunk)
            .enumerate()
            .map(|(k, vals)| {
                let mut re = vec![0.0; self.n_coeffs];
                let mut im = vec![0.0; self.n_coeffs];
                let mut scratch = self.scratch();
                self.adjoint_range(vals, k * chunk, &mut re, &mut im, &mut scratch);
                (re, im)
            })
            .collect();
        out.fill(Complex64::new(0.0, 0.0));
        for (re, im) in &partials {
            for ((o, r), i) in out.iter_mut().zip(re).zip(im) {
                o.re += r;
                o.im += i;
            }
        }
        Ok(())
    }
}

/// `Σ_k Π_l T_l[k_l] c[k]` for a box stored with the first dimension slowest.
fn contract(
    rows: &[(&[f64], &[f64])],
    cr: &[f64],
    ci: &[f64],
    levels: &mut [(Vec<f64>, Vec<f64>)],
) -> (f64, f64) {
    let (tr, ti) = rows[0];
    if rows.len() == 1 {
        return dot(tr, ti, cr, ci);
    }
    let inner = cr.len() / tr.len();
    let ((ar, ai), rest) = levels.split_first_mut().expect("contraction level");
    ar.clear();
    ar.resize(inner, 0.0);
    ai.clear();
    ai.resize(inner, 0.0);
    for (k, (&t_re, &t_im)) in tr.iter().zip(ti).enumerate() {
        let s = k * inner..(k + 1) * inner;
        axpy(t_re, t_im, &cr[s.clone()], &ci[s], ar, ai);
    }
    contract(&rows[1..], ar, ai, rest)
}

/// Writes `v Π_l conj(T_l[k_l])` for the whole box, first dimension slowest.
fn conj_outer(
    rows: &[(&[f64], &[f64])],
    vr: f64,
    vi: f64,
    out_r: &mut [f64],
    out_i: &mut [f64],
    levels: &mut [(Vec<f64>, Vec<f64>)],
) {
    let (tr, ti) = rows[0];
    if rows.len() == 1 {
        for (((o_re, o_im), &t_re), &t_im) in out_r.iter_mut().zip(out_i.iter_mut()).zip(tr).zip(ti) {
            *o_re = vr * t_re + vi * t_im;
            *o_im = vi * t_re - vr * t_im;
        }
        return;
    }
    // Built from the last dimension inwards.
    let ((wr, wi), tail) = levels.split_first_mut().expect("outer product level");
    let (lr, li) = rows[rows.len() - 1];
    wr.clear();
    wi.clear();
    wr.extend(lr.iter().zip(li).map(|(&t_re, &t_im)| vr * t_re + vi * t_im));
    wi.extend(lr.iter().zip(li).map(|(&t_re, &t_im)| vi * t_re - vr * t_im));
    for &(lr, li) in rows[1..rows.len() - 1].iter().rev() {
        let (nr, ni) = &mut tail[0];
        nr.clear();
        ni.clear();
        for (&t_re, &t_im) in lr.iter().zip(li) {
            nr.extend(wr.iter().zip(wi.iter()).map(|(&a, &b)| t_re * a + t_im * b));
            ni.extend(wr.iter().zip(wi.iter()).map(|(&a, &b)| t_re * b - t_im * a));
        }
        std::mem::swap(wr, nr);
        std::mem::swap(wi, ni);
    }
    let inner = wr.len();
    for (k, (&t_re, &t_im)) in tr.iter().zip(ti).enumerate() {
        let s = k * inner..(k + 1) * inner;
        for (((o_re, o_im), &a), &b) in out_r[s.clone()].iter_mut().zip(&mut out_i[s]).zip(wr.iter()).zip(wi.iter()) {
            *o_re = t_re * a + t_im * b;
            *o_im = t_re * b - t_im * a;
        }
    }
}

/// Shape and strides of a row-major view.
#[derive(Clone, Copy)]
struct Mat {
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl Mat {
    fn new(rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        Mat { rows, cols, rs, cs }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = alpha a b + beta c`.
#[allow(clippy::too_many_arguments)]
fn gemm(alpha: f64, a: &[f64], am: Mat, b: &[f64], bm: Mat, beta: f64, c: &mut [f64], cm: Mat) {
    assert!(am.cols == bm.rows && am.rows == cm.rows && bm.cols == cm.cols);
    assert!(a.len() >= am.span() && b.len() >= bm.span() && c.len() >= cm.span());
    // SAFETY: the asserts keep every strided access inside the slices, and
    // `c` is a unique borrow that cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            am.rows,
            am.cols,
            bm.cols,
            alpha,
            a.as_ptr(),
            am.rs as isize,
            am.cs as isize,
            b.as_ptr(),
            bm.rs as isize,
            bm.cs as isize,
            beta,
            c.as_mut_ptr(),
            cm.rs as isize,
            cm.cs as isize,
        );
    }
}

#[inline]
fn axpy(ar: f64, ai: f64, xr: &[f64], xi: &[f64], yr: &mut [f64], yi: &mut [f64]) {
    let n = yr.len();
    let (xr, xi, yi) = (&xr[..n], &xi[..n], &mut yi[..n]);
    for i in 0..n {
        yr[i] += ar * xr[i] - ai * xi[i];
        yi[i] += ar * xi[i] + ai * xr[i];
    }
}

#[inline]
fn dot(tr: &[f64], ti: &[f64], cr: &[f64], ci: &[f64]) -> (f64, f64) {
    let n = tr.len();
    let (ti, cr, ci) = (&ti[..n], &cr[..n], &ci[..n]);
    let mut sr = [0.0f64; 4];
    let mut si = [0.0f64; 4];
    let full = n - n % 4;
    for i in (0..full).step_by(4) {
        for l in 0..4 {
            sr[l] += tr[i + l] * cr[i + l] - ti[i + l] * ci[i + l];
            si[l] += tr[i + l] * ci[i + l] + ti[i + l] * cr[i + l];
        }
    }
    for i in full..n {
        sr[0] += tr[i] * cr[i] - ti[i] * ci[i];
        si[0] += tr[i] * ci[i] + ti[i] * cr[i];
    }
    ((sr[0] + sr[1]) + (sr[2] + sr[3]), (si[0] + si[1]) + (si[2] + si[3]))
}
