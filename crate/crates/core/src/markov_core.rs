//! Level-structured generators with bidiagonal blocks plus a lower-left
//! corner block, and their UL-type RG-factorization.
//!
//! A generator with levels `0..=L` has nonzero blocks only at `(k, k)`,
//! `(k, k + 1)` and `(L, 0)`. Censoring onto levels `<= k` therefore leaves
//! the diagonal blocks of levels `1..=L` untouched and folds everything above
//! `k` into a single block `(k, 0)`; the R-measures are superdiagonal and the
//! G-measures live in the first block column.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};

/// Absolute tolerance for generator row sums and sign checks.
pub const GENERATOR_TOLERANCE: f64 = 1e-9;

/// Stationary entries in `[-CLAMP_TOLERANCE, 0)` are treated as rounding noise.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGenerator {
    diag: Vec<DMatrix<f64>>,
    sup: Vec<DMatrix<f64>>,
    corner: DMatrix<f64>,
}

impl BlockGenerator {
    /// `diag[k]` is `Q_{k,k}`, `sup[k]` is `Q_{k,k+1}` and `corner` is `Q_{L,0}`.
    pub fn new(diag: Vec<DMatrix<f64>>, sup: Vec<DMatrix<f64>>, corner: DMatrix<f64>) -> Result<Self> {
        let levels = diag.len();
        if levels < 2 {
            return Err(Error::InvalidGenerator("at least two levels are required".into()));
        }
        if sup.len() != levels - 1 {
            return Err(Error::InvalidGenerator(format!(
                "expected {} superdiagonal blocks, found {}",
                levels - 1,
                sup.len()
            )));
        }
        for (k, d) in diag.iter().enumerate() {
            if !d.is_square() || d.nrows() == 0 {
                return Err(Error::InvalidGenerator(format!("diagonal block {k} is not square")));
            }
        }
        for (k, s) in sup.iter().enumerate() {
            if s.shape() != (diag[k].nrows(), diag[k + 1].nrows()) {
                return Err(Error::InvalidGenerator(format!(
                    "block ({k},{}) has shape {:?}",
                    k + 1,
                    s.shape()
                )));
            }
        }
        if corner.shape() != (diag[levels - 1].nrows(), diag[0].nrows()) {
            return Err(Error::InvalidGenerator(format!(
                "corner block has shape {:?}",
                corner.shape()
            )));
        }
        Ok(Self { diag, sup, corner })
    }

    pub fn num_levels(&self) -> usize {
        self.diag.len()
    }

    /// Index of the top level, `L`.
    pub fn top(&self) -> usize {
        self.diag.len() - 1
    }

    pub fn level_dims(&self) -> Vec<usize> {
        self.diag.iter().map(|d| d.nrows()).collect()
    }

    pub fn diag(&self, k: usize) -> &DMatrix<f64> {
        &self.diag[k]
    }

    pub fn sup(&self, k: usize) -> &DMatrix<f64> {
        &self.sup[k]
    }

    pub fn corner(&self) -> &DMatrix<f64> {
        &self.corner
    }

    /// Offset of each level in the assembled matrix, plus the total size.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.diag.len() + 1);
        let mut acc = 0;
        out.push(0);
        for d in &self.diag {
            acc += d.nrows();
            out.push(acc);
        }
        out
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let off = self.offsets();
        let n = off[self.num_levels()];
        let mut q = DMatrix::zeros(n, n);
        for k in 0..self.num_levels() {
            q.view_mut((off[k], off[k]), self.diag[k].shape())
                .copy_from(&self.diag[k]);
        }
        for k in 0..self.top() {
            q.view_mut((off[k], off[k + 1]), self.sup[k].shape())
                .copy_from(&self.sup[k]);
        }
        q.view_mut((off[self.top()], 0), self.corner.shape())
            .copy_from(&self.corner);
        q
    }

    /// Checks conservativeness and entry signs.
    pub fn check(&self) -> Result<()> {
        let top = self.top();
        for k in 0..self.num_levels() {
            let d = &self.diag[k];
            for i in 0..d.nrows() {
                let mut sum = d.row(i).sum();
                if k < top {
                    sum += self.sup[k].row(i).sum();
                } else {
                    sum += self.corner.row(i).sum();
                }
                let scale = d[(i, i)].abs().max(1.0);
                if sum.abs() > GENERATOR_TOLERANCE * scale {
                    return Err(Error::InvalidGenerator(format!(
                        "row {i} of level {k} sums to {sum:e}"
                    )));
                }
                if d[(i, i)] > 0.0 {
                    return Err(Error::InvalidGenerator(format!(
                        "positive diagonal entry at level {k}, phase {i}"
                    )));
                }
                for j in 0..d.ncols() {
                    if j != i && d[(i, j)] < 0.0 {
                        return Err(Error::InvalidGenerator(format!(
                            "negative off-diagonal entry in block ({k},{k})"
                        )));
                    }
                }
            }
        }
        let negative = |m: &DMatrix<f64>| m.iter().any(|&x| x < 0.0);
        if self.sup.iter().any(negative) || negative(&self.corner) {
            return Err(Error::InvalidGenerator("negative off-diagonal block entry".into()));
        }
        Ok(())
    }

    /// Strong connectivity of the state transition digraph.
    pub fn is_irreducible(&self) -> bool {
        let off = self.offsets();
        let n = off[self.num_levels()];
        let mut g = DiGraph::<(), ()>::with_capacity(n, 4 * n);
        let ids: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        let mut add = |m: &DMatrix<f64>, r0: usize, c0: usize, diagonal: bool| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if (!diagonal || i != j) && m[(i, j)] > 0.0 {
                        g.add_edge(ids[r0 + i], ids[c0 + j], ());
                    }
                }
            }
        };
        for k in 0..self.num_levels() {
            add(&self.diag[k], off[k], off[k], true);
        }
        for k in 0..self.top() {
            add(&self.sup[k], off[k], off[k + 1], false);
        }
        add(&self.corner, off[self.top()], 0, false);
        kosaraju_scc(&g).len() == 1
    }
}

/// U-, D- and L-factors of `Q = (I - R_U) Psi_D (I - G_L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RGFactors {
    /// `Psi_k`, `k = 0..=L`.
    pub psi: Vec<DMatrix<f64>>,
    /// `R_{k,k+1}`, `k = 0..L`.
    pub r_up: Vec<DMatrix<f64>>,
    /// `G_{k,0}`, stored at index `k - 1` for `k = 1..=L`.
    pub g_low: Vec<DMatrix<f64>>,
}

impl RGFactors {
    pub fn num_levels(&self) -> usize {
        self.psi.len()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut out = vec![0];
        for p in &self.psi {
            out.push(out.last().unwrap() + p.nrows());
        }
        out
    }

    /// Dense `R_U`; blocks other than `(k, k+1)` are exactly zero.
    pub fn r_upper(&self) -> DMatrix<f64> {
        let off = self.offsets();
        let n = off[self.num_levels()];
        let mut r = DMatrix::zeros(n, n);
        for (k, b) in self.r_up.iter().enumerate() {
            r.view_mut((off[k], off[k + 1]), b.shape()).copy_from(b);
        }
        r
    }

    /// Dense `Psi_D`.
    pub fn psi_diag(&self) -> DMatrix<f64> {
        let off = self.offsets();
        let n = off[self.num_levels()];
        let mut d = DMatrix::zeros(n, n);
        for (k, b) in self.psi.iter().enumerate() {
            d.view_mut((off[k], off[k]), b.shape()).copy_from(b);
        }
        d
    }

    /// Dense `G_L`; blocks other than `(k, 0)` are exactly zero.
    pub fn g_lower(&self) -> DMatrix<f64> {
        let off = self.offsets();
        let n = off[self.num_levels()];
        let mut g = DMatrix::zeros(n, n);
        for (k, b) in self.g_low.iter().enumerate() {
            g.view_mut((off[k + 1], 0), b.shape()).copy_from(b);
        }
        g
    }

    /// `(I - R_U) Psi_D (I - G_L)`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = *self.offsets().last().unwrap();
        let id = DMatrix::<f64>::identity(n, n);
        (&id - self.r_upper()) * self.psi_diag() * (&id - self.g_lower())
    }
}

/// `Q_{k,k+1}`-style right solve: returns `a (-b)^{-1}` without forming the
/// inverse.
fn right_solve_neg(a: &DMatrix<f64>, b: &DMatrix<f64>, level: usize) -> Result<DMatrix<f64>> {
    // x (-b) = a  <=>  (-b)^T x^T = a^T
    let lu = (-b.transpose()).lu();
    lu.solve(&a.transpose())
        .map(|x| x.transpose())
        .ok_or(Error::SingularBlock { level })
}

/// `(-b)^{-1} a`.
fn left_solve_neg(b: &DMatrix<f64>, a: &DMatrix<f64>, level: usize) -> Result<DMatrix<f64>> {
    (-b).lu().solve(a).ok_or(Error::SingularBlock { level })
}

/// `G_{k,0} = (-Q_{k,k})^{-1} Q^{[<=k]}_{k,0}` for `k = L, L-1, ..., 1`,
/// returned in increasing `k`.
fn g_measures(gen: &BlockGenerator) -> Result<Vec<DMatrix<f64>>> {
    let top = gen.top();
    let mut g = vec![DMatrix::zeros(0, 0); top];
    let mut corner_k = gen.corner().clone();
    for k in (1..=top).rev() {
        let gk = left_solve_neg(gen.diag(k), &corner_k, k)?;
        if k > 1 {
            corner_k = gen.sup(k - 1) * &gk;
        }
        g[k - 1] = gk;
    }
    Ok(g)
}

/// The censored corner block `Q^{[<=k]}_{k,0} = prod_{l=k}^{L-1} Q_{l,l+1} (-Q_{l+1,l+1})^{-1} Q_{L,0}`.
///
/// For `k = L` this is the corner block itself.
pub fn censored_corner(gen: &BlockGenerator, k: usize) -> Result<DMatrix<f64>> {
    let top = gen.top();
    if k == 0 || k > top {
        return Err(Error::LevelOutOfRange { level: k, max: top });
    }
    let mut acc = gen.corner().clone();
    for l in (k..top).rev() {
        acc = gen.sup(l) * left_solve_neg(gen.diag(l + 1), &acc, l + 1)?;
    }
    Ok(acc)
}

/// The level-0 censored generator `Q^{[<=0]} = Q_{0,0} + Q_{0,1} (-Q_{1,1})^{-1} Q^{[<=1]}_{1,0}`.
pub fn censored_level0(gen: &BlockGenerator) -> Result<DMatrix<f64>> {
    let g = g_measures(gen)?;
    Ok(gen.diag(0) + gen.sup(0) * &g[0])
}

/// UL-type RG-factorization. Fails fast on reducible or singular input.
pub fn rg_factorize(gen: &BlockGenerator) -> Result<RGFactors> {
    gen.check()?;
    if !gen.is_irreducible() {
        return Err(Error::NotIrreducible(
            "the state transition graph has more than one strongly connected component".into(),
        ));
    }
    let top = gen.top();
    let g_low = g_measures(gen)?;
    let mut psi = Vec::with_capacity(top + 1);
    psi.push(gen.diag(0) + gen.sup(0) * &g_low[0]);
    psi.extend((1..=top).map(|k| gen.diag(k).clone()));
    let r_up = (0..top)
        .map(|k| right_solve_neg(gen.sup(k), &psi[k + 1], k + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(RGFactors { psi, r_up, g_low })
}

/// Stationary vector of a conservative generator `q`: `x q = 0`, `x 1 = 1`.
pub(crate) fn null_vector(q: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = q.nrows();
    let mut a = q.transpose();
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    a.lu().solve(&rhs)
}

/// Level-indexed stationary probabilities from an RG-factorization:
/// `pi_0 = kappa x_0` with `x_0` stationary for `Psi_0`, then
/// `pi_k = pi_{k-1} R_{k-1,k}`.
pub fn stationary_vector(factors: &RGFactors) -> Result<Vec<Vec<f64>>> {
    let x0 = null_vector(&factors.psi[0]).ok_or(Error::Level0NotIrreducible)?;
    let mut levels: Vec<DVector<f64>> = Vec::with_capacity(factors.num_levels());
    levels.push(x0);
    for r in &factors.r_up {
        let prev = levels.last().unwrap();
        levels.push((prev.transpose() * r).transpose());
    }
    let total: f64 = levels.iter().map(|v| v.sum()).sum();
    let mut out: Vec<Vec<f64>> = levels
        .iter()
        .map(|v| v.iter().map(|x| x / total).collect())
        .collect();
    let mut clamped = false;
    for (level, v) in out.iter_mut().enumerate() {
        for (phase, x) in v.iter_mut().enumerate() {
            if *x < 0.0 {
                if *x < -CLAMP_TOLERANCE {
                    return Err(Error::NegativeProbability { level, phase, value: *x });
                }
                *x = 0.0;
                clamped = true;
            }
        }
    }
    if clamped {
        let s: f64 = out.iter().flatten().sum();
        out.iter_mut().flatten().for_each(|x| *x /= s);
    }
    Ok(out)
}

/// Writes a matrix in MatrixMarket coordinate format, preceded by a comment
/// naming it.
pub fn write_matrix_market(out: &mut impl Write, name: &str, m: &DMatrix<f64>) -> std::io::Result<()> {
    let nnz = m.iter().filter(|&&x| x != 0.0).count();
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "% {name}")?;
    writeln!(out, "{} {} {}", m.nrows(), m.ncols(), nnz)?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let x = m[(i, j)];
            if x != 0.0 {
                writeln!(out, "{} {} {:.17e}", i + 1, j + 1, x)?;
            }
        }
    }
    Ok(())
}

/// Dumps every block of a generator, one MatrixMarket section per block.
pub fn dump_generator(out: &mut impl Write, gen: &BlockGenerator) -> std::io::Result<()> {
    for k in 0..gen.num_levels() {
        write_matrix_market(out, &format!("Q[{k},{k}]"), gen.diag(k))?;
    }
    for k in 0..gen.top() {
        write_matrix_market(out, &format!("Q[{k},{}]", k + 1), gen.sup(k))?;
    }
    write_matrix_market(out, &format!("Q[{},0]", gen.top()), gen.corner())
}

pub fn dump_factors(out: &mut impl Write, factors: &RGFactors) -> std::io::Result<()> {
    for (k, b) in factors.psi.iter().enumerate() {
        write_matrix_market(out, &format!("Psi[{k}]"), b)?;
    }
    for (k, b) in factors.r_up.iter().enumerate() {
        write_matrix_market(out, &format!("R[{k},{}]", k + 1), b)?;
    }
    for (k, b) in factors.g_low.iter().enumerate() {
        write_matrix_market(out, &format!("G[{},0]", k + 1), b)?;
    }
    Ok(())
}
