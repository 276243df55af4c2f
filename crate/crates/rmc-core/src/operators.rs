//! Core sparse/low-rank data types and elementary operators.
//!
//! Everything the solvers touch is one of three shapes: a coordinate-format
//! sparse matrix ([`SparseCoo`]), a rank-k factorization ([`LowRankFactors`]),
//! or an implicit sum of the two ([`StructuredMatrix`]). The operators here
//! (sampling projection, hard thresholding, entrywise factor evaluation,
//! norms, incoherence) are all linear-time in the data they touch and never
//! densify.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Orthonormality tolerance for factor validation.
pub const ORTHO_TOL: f64 = 1e-10;

/// Coordinate-format sparse matrix with entries sorted by (row, col).
///
/// Duplicate coordinates are rejected on construction rather than summed:
/// the observed index sets these carry are sets, and silent summing masks
/// generator bugs. Explicitly stored zeros are kept (an observed entry may
/// legitimately be zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoo {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCoo {
    /// Builds a sparse matrix from triplets, normalizing to (row, col) order.
    pub fn new(nrows: usize, ncols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut entries = entries;
        for &(i, j, _) in &entries {
            if i >= nrows || j >= ncols {
                return Err(Error::IndexOutOfBounds {
                    row: i,
                    col: j,
                    nrows,
                    ncols,
                });
            }
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::DuplicateEntry {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }
        let mut rows = Vec::with_capacity(entries.len());
        let mut cols = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            rows.push(i);
            cols.push(j);
            values.push(v);
        }
        Ok(Self {
            nrows,
            ncols,
            rows,
            cols,
            values,
        })
    }

    pub fn empty(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Iterates entries in (row, col) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(self.cols.iter())
            .zip(self.values.iter())
            .map(|((&i, &j), &v)| (i, j, v))
    }

    /// The index set of stored entries, in (row, col) order.
    pub fn indices(&self) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .zip(self.cols.iter())
            .map(|(&i, &j)| (i, j))
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored value at (i, j), or 0 if absent. Binary search over the
    /// sorted triplets.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.find(i, j) {
            Some(pos) => self.values[pos],
            None => 0.0,
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.find(i, j).is_some()
    }

    fn find(&self, i: usize, j: usize) -> Option<usize> {
        let mut lo = 0usize;
        let mut hi = self.values.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            match (self.rows[mid], self.cols[mid]).cmp(&(i, j)) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Returns a copy with every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Maximum number of stored entries in any single row.
    pub fn max_row_nnz(&self) -> usize {
        let mut counts = vec![0usize; self.nrows];
        for &i in &self.rows {
            counts[i] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }

    /// Maximum number of stored entries in any single column.
    pub fn max_col_nnz(&self) -> usize {
        let mut counts = vec![0usize; self.ncols];
        for &j in &self.cols {
            counts[j] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }

    /// Measured row/column density: max(max_row_nnz / n, max_col_nnz / m).
    pub fn row_col_density(&self) -> f64 {
        if self.nrows == 0 || self.ncols == 0 {
            return 0.0;
        }
        let row = self.max_row_nnz() as f64 / self.ncols as f64;
        let col = self.max_col_nnz() as f64 / self.nrows as f64;
        row.max(col)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            out[(i, j)] = v;
        }
        out
    }
}

/// Observed index set Ω with its sampled values P_Ω(M) and sampling rate.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub nrows: usize,
    pub ncols: usize,
    /// P_Ω(M): the observed values on Ω.
    pub samples: SparseCoo,
    /// Sampling rate: |Ω|/(mn) or the configured Bernoulli rate.
    pub p: f64,
}

impl ObservationSet {
    pub fn new(samples: SparseCoo, p: f64) -> Result<Self> {
        if !(p > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling rate must be positive, got {p}"
            )));
        }
        Ok(Self {
            nrows: samples.nrows(),
            ncols: samples.ncols(),
            samples,
            p,
        })
    }

    /// Builds an observation set with p inferred from the sample count.
    pub fn from_samples(samples: SparseCoo) -> Result<Self> {
        let cells = (samples.nrows() * samples.ncols()) as f64;
        if cells == 0.0 {
            return Err(Error::InvalidArgument("empty matrix dimensions".into()));
        }
        let p = (samples.nnz() as f64 / cells).max(f64::MIN_POSITIVE);
        Self::new(samples, p)
    }

    pub fn nnz(&self) -> usize {
        self.samples.nnz()
    }
}

/// Rank-k factorization U·diag(sigma)·Vᵀ with orthonormal U, V and
/// nonincreasing nonnegative sigma. Rank 0 represents the zero matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
}

impl LowRankFactors {
    pub fn new(u: DMatrix<f64>, sigma: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let k = sigma.len();
        if u.ncols() != k || v.ncols() != k {
            return Err(Error::Dimension(format!(
                "factor rank mismatch: u has {} columns, v has {}, sigma has {}",
                u.ncols(),
                v.ncols(),
                k
            )));
        }
        for i in 0..k {
            if sigma[i] < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "singular value {} is negative: {}",
                    i, sigma[i]
                )));
            }
            if i + 1 < k && sigma[i] < sigma[i + 1] {
                return Err(Error::InvalidArgument(format!(
                    "singular values not nonincreasing at position {i}"
                )));
            }
        }
        check_orthonormal(&u, "u")?;
        check_orthonormal(&v, "v")?;
        Ok(Self { u, sigma, v })
    }

    /// The rank-0 factorization of the m×n zero matrix.
    pub fn zero(nrows: usize, ncols: usize) -> Self {
        Self {
            u: DMatrix::zeros(nrows, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(ncols, 0),
        }
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Entry (i, j) = Σ_l u[i,l]·σ[l]·v[j,l] in O(k).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let mut acc = 0.0;
        for l in 0..self.rank() {
            acc += self.u[(i, l)] * self.sigma[l] * self.v[(j, l)];
        }
        acc
    }

    /// ‖·‖_F = ‖sigma‖₂ by orthogonal invariance.
    pub fn frob_norm(&self) -> f64 {
        self.sigma.norm()
    }

    /// Largest leading singular value, or 0 at rank 0.
    pub fn sigma_max(&self) -> f64 {
        if self.rank() == 0 {
            0.0
        } else {
            self.sigma[0]
        }
    }

    /// Keeps only the first `k` factor columns.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.rank());
        Self {
            u: self.u.columns(0, k).into_owned(),
            sigma: self.sigma.rows(0, k).into_owned(),
            v: self.v.columns(0, k).into_owned(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        if self.rank() == 0 {
            return DMatrix::zeros(self.nrows(), self.ncols());
        }
        let mut us = self.u.clone();
        for l in 0..self.rank() {
            us.column_mut(l).scale_mut(self.sigma[l]);
        }
        &us * self.v.transpose()
    }

    /// Exact ‖·‖_∞ by full row-block evaluation. O(mnk): intended for test
    /// and diagnostic code only; use [`Self::inf_norm_sampled`] in hot paths.
    pub fn inf_norm_exact(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.nrows() {
            for j in 0..self.ncols() {
                best = best.max(self.entry(i, j).abs());
            }
        }
        best
    }

    /// Sampled lower bound on ‖·‖_∞: max |entry| over `nsamples` uniformly
    /// random positions. A lower bound, not an estimate of the max.
    pub fn inf_norm_sampled(&self, nsamples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut best: f64 = 0.0;
        for _ in 0..nsamples {
            let i = rng.gen_range(0..self.nrows());
            let j = rng.gen_range(0..self.ncols());
            best = best.max(self.entry(i, j).abs());
        }
        best
    }
}

fn check_orthonormal(q: &DMatrix<f64>, name: &str) -> Result<()> {
    let k = q.ncols();
    if k == 0 {
        return Ok(());
    }
    let gram = q.transpose() * q;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - target).abs() > ORTHO_TOL {
                return Err(Error::InvalidArgument(format!(
                    "columns of {name} are not orthonormal: gram[{i},{j}] = {:.3e}",
                    gram[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

/// Implicit matrix coeff_L·(UΣVᵀ) + coeff_S·(sparse) supporting fast
/// matvecs without densification.
#[derive(Debug, Clone)]
pub struct StructuredMatrix {
    nrows: usize,
    ncols: usize,
    lowrank: Option<(f64, LowRankFactors)>,
    sparse: Option<(f64, SparseCoo)>,
}

impl StructuredMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        lowrank: Option<(f64, LowRankFactors)>,
        sparse: Option<(f64, SparseCoo)>,
    ) -> Result<Self> {
        if let Some((_, f)) = &lowrank {
            if f.nrows() != nrows || f.ncols() != ncols {
                return Err(Error::Dimension(format!(
                    "low-rank part is {}x{}, expected {}x{}",
                    f.nrows(),
                    f.ncols(),
                    nrows,
                    ncols
                )));
            }
        }
        if let Some((_, s)) = &sparse {
            if s.nrows() != nrows || s.ncols() != ncols {
                return Err(Error::Dimension(format!(
                    "sparse part is {}x{}, expected {}x{}",
                    s.nrows(),
                    s.ncols(),
                    nrows,
                    ncols
                )));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            lowrank,
            sparse,
        })
    }

    pub fn from_lowrank(f: LowRankFactors) -> Self {
        let (m, n) = (f.nrows(), f.ncols());
        Self {
            nrows: m,
            ncols: n,
            lowrank: Some((1.0, f)),
            sparse: None,
        }
    }

    pub fn from_sparse(s: SparseCoo) -> Self {
        Self::from_scaled_sparse(1.0, s)
    }

    pub fn from_scaled_sparse(coeff: f64, s: SparseCoo) -> Self {
        let (m, n) = (s.nrows(), s.ncols());
        Self {
            nrows: m,
            ncols: n,
            lowrank: None,
            sparse: Some((coeff, s)),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn lowrank(&self) -> Option<&(f64, LowRankFactors)> {
        self.lowrank.as_ref()
    }

    pub fn sparse(&self) -> Option<&(f64, SparseCoo)> {
        self.sparse.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        let lr_zero = match &self.lowrank {
            None => true,
            Some((c, f)) => *c == 0.0 || f.rank() == 0,
        };
        let sp_zero = match &self.sparse {
            None => true,
            Some((c, s)) => *c == 0.0 || s.is_empty(),
        };
        lr_zero && sp_zero
    }

    /// y = A·x in O(nnz + (m+n)k).
    pub fn matvec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Dimension(format!(
                "matvec input has length {}, expected {}",
                x.len(),
                self.ncols
            )));
        }
        Ok(self.mul_mat(&DMatrix::from_column_slice(self.ncols, 1, x.as_slice()))
            .column(0)
            .into_owned())
    }

    /// y = Aᵀ·x in O(nnz + (m+n)k).
    pub fn rmatvec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.nrows {
            return Err(Error::Dimension(format!(
                "rmatvec input has length {}, expected {}",
                x.len(),
                self.nrows
            )));
        }
        Ok(self
            .tr_mul_mat(&DMatrix::from_column_slice(self.nrows, 1, x.as_slice()))
            .column(0)
            .into_owned())
    }

    /// Y = A·X for a block of columns. Sequential reductions keep results
    /// deterministic.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols, "mul_mat dimension mismatch");
        let mut y = DMatrix::zeros(self.nrows, x.ncols());
        if let Some((c, f)) = &self.lowrank {
            if f.rank() > 0 && *c != 0.0 {
                // U · (Σ · (Vᵀ X))
                let mut vt_x = f.v.transpose() * x;
                for l in 0..f.rank() {
                    vt_x.row_mut(l).scale_mut(c * f.sigma[l]);
                }
                y += &f.u * vt_x;
            }
        }
        if let Some((c, s)) = &self.sparse {
            if *c != 0.0 {
                for (i, j, v) in s.iter() {
                    let cv = c * v;
                    for col in 0..x.ncols() {
                        y[(i, col)] += cv * x[(j, col)];
                    }
                }
            }
        }
        y
    }

    /// Y = Aᵀ·X for a block of columns.
    pub fn tr_mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.nrows, "tr_mul_mat dimension mismatch");
        let mut y = DMatrix::zeros(self.ncols, x.ncols());
        if let Some((c, f)) = &self.lowrank {
            if f.rank() > 0 && *c != 0.0 {
                let mut ut_x = f.u.transpose() * x;
                for l in 0..f.rank() {
                    ut_x.row_mut(l).scale_mut(c * f.sigma[l]);
                }
                y += &f.v * ut_x;
            }
        }
        if let Some((c, s)) = &self.sparse {
            if *c != 0.0 {
                for (i, j, v) in s.iter() {
                    let cv = c * v;
                    for col in 0..x.ncols() {
                        y[(j, col)] += cv * x[(i, col)];
                    }
                }
            }
        }
        y
    }

    /// Entry (i, j) in O(k + log nnz).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let mut acc = 0.0;
        if let Some((c, f)) = &self.lowrank {
            acc += c * f.entry(i, j);
        }
        if let Some((c, s)) = &self.sparse {
            acc += c * s.get(i, j);
        }
        acc
    }

    /// ‖A‖_F via trace identities: no densification. The low-rank/sparse
    /// cross term is Σ over stored sparse entries of the low-rank value
    /// there, O(nnz·k).
    pub fn frob_norm(&self) -> f64 {
        let mut sq = 0.0;
        if let Some((c, f)) = &self.lowrank {
            sq += c * c * f.sigma.norm_squared();
        }
        if let Some((c, s)) = &self.sparse {
            sq += c * c * s.values().iter().map(|v| v * v).sum::<f64>();
        }
        if let (Some((cl, f)), Some((cs, s))) = (&self.lowrank, &self.sparse) {
            let mut cross = 0.0;
            for (i, j, v) in s.iter() {
                cross += v * f.entry(i, j);
            }
            sq += 2.0 * cl * cs * cross;
        }
        sq.max(0.0).sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        if let Some((c, f)) = &self.lowrank {
            out += f.to_dense() * *c;
        }
        if let Some((c, s)) = &self.sparse {
            for (i, j, v) in s.iter() {
                out[(i, j)] += c * v;
            }
        }
        out
    }
}

/// Sampling projection P_Ω: keeps exactly the entries of `source` at the
/// given indices.
pub fn project_observed<F>(
    indices: &[(usize, usize)],
    nrows: usize,
    ncols: usize,
    source: F,
) -> Result<SparseCoo>
where
    F: Fn(usize, usize) -> f64,
{
    let mut entries = Vec::with_capacity(indices.len());
    for &(i, j) in indices {
        if i >= nrows || j >= ncols {
            return Err(Error::IndexOutOfBounds {
                row: i,
                col: j,
                nrows,
                ncols,
            });
        }
        entries.push((i, j, source(i, j)));
    }
    SparseCoo::new(nrows, ncols, entries)
}

/// Hard thresholding HT_ζ: keeps entries with |value| ≥ ζ unchanged,
/// drops the rest. The boundary |value| = ζ is kept.
pub fn hard_threshold(a: &SparseCoo, zeta: f64) -> Result<SparseCoo> {
    if zeta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be nonnegative, got {zeta}"
        )));
    }
    let kept: Vec<_> = a.iter().filter(|(_, _, v)| v.abs() >= zeta).collect();
    SparseCoo::new(a.nrows(), a.ncols(), kept)
}

/// Evaluates a low-rank factorization at the given indices in O(|Ω|·k).
pub fn eval_lowrank_entries(
    f: &LowRankFactors,
    indices: &[(usize, usize)],
) -> Result<SparseCoo> {
    project_observed(indices, f.nrows(), f.ncols(), |i, j| f.entry(i, j))
}

/// Incoherence μ = max( max_i ‖eᵢᵀU‖·√(m/k), max_j ‖eⱼᵀV‖·√(n/k) ).
pub fn incoherence(f: &LowRankFactors) -> Result<f64> {
    let k = f.rank();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "incoherence is undefined for rank 0".into(),
        ));
    }
    let mut mu: f64 = 0.0;
    let mscale = (f.nrows() as f64 / k as f64).sqrt();
    for i in 0..f.nrows() {
        mu = mu.max(f.u.row(i).norm() * mscale);
    }
    let nscale = (f.ncols() as f64 / k as f64).sqrt();
    for j in 0..f.ncols() {
        mu = mu.max(f.v.row(j).norm() * nscale);
    }
    Ok(mu)
}

/// ‖A − B‖_F for two factorizations, computed in factored form via the
/// Gram-matrix trace identity in O((m+n)k²). Never densifies, so ground
/// truth comparisons stay cheap at any m, n.
pub fn frob_error(a: &LowRankFactors, b: &LowRankFactors) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "frob_error on {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    let sq_a = a.sigma.norm_squared();
    let sq_b = b.sigma.norm_squared();
    // <A, B> = tr(Σ_a · (U_aᵀU_b) · Σ_b · (V_bᵀV_a))
    let mut cross = 0.0;
    if a.rank() > 0 && b.rank() > 0 {
        let gu = a.u.transpose() * &b.u;
        let gv = b.v.transpose() * &a.v;
        for ia in 0..a.rank() {
            for ib in 0..b.rank() {
                cross += a.sigma[ia] * gu[(ia, ib)] * b.sigma[ib] * gv[(ib, ia)];
            }
        }
    }
    Ok((sq_a + sq_b - 2.0 * cross).max(0.0).sqrt())
}
