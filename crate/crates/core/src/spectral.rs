//! Normalized-cuts embedding driven by a boundary map.
//!
//! Pixels within a small radius are linked with intervening-contour weights
//! `w = exp(-(m / σ)²)`, where `m` is the strongest boundary value on the
//! rasterized segment between them. The smallest eigenpairs of
//! `(D - W) v = λ D v` are found through the symmetric normalized Laplacian
//! `L = I - D^-1/2 W D^-1/2`, whose eigenvectors `u` map back as `v = D^-1/2 u`.
//!
//! `L` always has the eigenpair `(0, D^1/2 1)`. The solver places it first in
//! closed form and runs Lanczos on its orthogonal complement, so nearly
//! disconnected graphs still yield a meaningful second vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::boundary_map::{self, BoundaryMap};
use crate::error::{Error, Result};
use crate::features::map_point;
use crate::tensor_io::Tensor;

pub const DEFAULT_RADIUS: usize = 5;
pub const DEFAULT_SIGMA_FRAC: f32 = 0.14;
pub const SIGMA_FLOOR: f32 = 1e-6;
pub const DEFAULT_K: usize = 16;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1500;
pub const DEFAULT_DECIMATE_MAX: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LineMode {
    #[default]
    Bresenham,
    /// Every pixel the segment between the two pixel centers touches.
    Supercover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Neighborhood {
    #[default]
    Euclidean,
    Chebyshev,
}

impl std::str::FromStr for Neighborhood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "chebyshev" => Ok(Self::Chebyshev),
            other => Err(Error::InvalidArgument(format!("unknown neighborhood {other:?}"))),
        }
    }
}

/// Visits the pixels of the segment `a → b`, endpoints included.
pub fn rasterize_line(a: (usize, usize), b: (usize, usize), mode: LineMode, mut visit: impl FnMut(usize, usize)) {
    let (r0, c0) = (a.0 as i64, a.1 as i64);
    let (r1, c1) = (b.0 as i64, b.1 as i64);
    let (sr, sc) = ((r1 - r0).signum(), (c1 - c0).signum());
    let (nr, nc) = ((r1 - r0).abs(), (c1 - c0).abs());
    let (mut r, mut c) = (r0, c0);
    match mode {
        LineMode::Bresenham => {
            let mut err = nc - nr;
            loop {
                visit(r as usize, c as usize);
                if r == r1 && c == c1 {
                    break;
                }
                let e2 = 2 * err;
                if e2 >= -nr {
                    err -= nr;
                    c += sc;
                }
                if e2 <= nc {
                    err += nc;
                    r += sr;
                }
            }
        }
        LineMode::Supercover => {
            visit(r as usize, c as usize);
            let (mut ir, mut ic) = (0, 0);
            while ir < nr || ic < nc {
                // Sign of (next column crossing) - (next row crossing) along the segment.
                let decision = (1 + 2 * ic) * nr - (1 + 2 * ir) * nc;
                if decision == 0 {
                    visit((r + sr) as usize, c as usize);
                    visit(r as usize, (c + sc) as usize);
                    r += sr;
                    c += sc;
                    ir += 1;
                    ic += 1;
                } else if decision < 0 {
                    c += sc;
                    ic += 1;
                } else {
                    r += sr;
                    ir += 1;
                }
                visit(r as usize, c as usize);
            }
        }
    }
}

pub fn line_max_with(map: &BoundaryMap, a: (usize, usize), b: (usize, usize), mode: LineMode) -> f32 {
    let mut m = 0.0f32;
    rasterize_line(a, b, mode, |r, c| m = m.max(map.get(r, c)));
    m
}

/// Maximum of `map` over the Bresenham segment `a → b`.
pub fn line_max(map: &BoundaryMap, a: (usize, usize), b: (usize, usize)) -> f32 {
    line_max_with(map, a, b, LineMode::Bresenham)
}

pub fn sigma_with_frac(map: &BoundaryMap, frac: f32) -> f32 {
    let m = map.max_value();
    if m > 0.0 {
        frac * m
    } else {
        SIGMA_FLOOR
    }
}

/// `0.14 · max(map)`, or [`SIGMA_FLOOR`] on an all-zero map.
pub fn sigma_rule(map: &BoundaryMap) -> f32 {
    sigma_with_frac(map, DEFAULT_SIGMA_FRAC)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityOptions {
    pub radius: usize,
    /// Explicit σ; when absent it comes from `sigma_frac · max(map)`.
    pub sigma: Option<f32>,
    pub sigma_frac: f32,
    pub neighborhood: Neighborhood,
    pub line: LineMode,
}

impl Default for AffinityOptions {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            sigma: None,
            sigma_frac: DEFAULT_SIGMA_FRAC,
            neighborhood: Neighborhood::Euclidean,
            line: LineMode::Bresenham,
        }
    }
}

/// Nonzero lattice offsets `(dr, dc)` within `radius`, in row-major order.
pub fn neighbor_offsets(radius: usize, nb: Neighborhood) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            let inside = match nb {
                Neighborhood::Euclidean => dr * dr + dc * dc <= r * r,
                Neighborhood::Chebyshev => true,
            };
            if inside && (dr, dc) != (0, 0) {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Symmetric pixel affinity. Rows hold every neighbor in ascending column
/// order, so each unordered pair appears twice with bit-identical weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    dims: (usize, usize),
    sigma: f32,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    degree: Vec<f64>,
}

impl SparseAffinity {
    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.degree.len()
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    /// `D_i = Σ_{j≠i} W_ij`.
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.weights[span])
            .map(|(&j, &w)| (j as usize, w))
    }

    pub fn neighbor_count(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        let cols = &self.cols[span.clone()];
        cols.binary_search(&(j as u32))
            .ok()
            .map(|k| self.weights[span.start + k])
    }

    /// Each unordered pair once, as `(i, j, w)` with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n()).flat_map(move |i| {
            self.neighbors(i)
                .filter(move |&(j, _)| j > i)
                .map(move |(j, w)| (i, j, w))
        })
    }

    pub fn pair_count(&self) -> usize {
        self.cols.len() / 2
    }
}

/// Intervening-contour weight for a given segment maximum.
#[inline]
pub fn contour_weight(line_max: f32, sigma: f32) -> f64 {
    let t = f64::from(line_max) / f64::from(sigma);
    (-(t * t)).exp().max(f64::MIN_POSITIVE)
}

pub fn build_affinity(map: &BoundaryMap, opts: &AffinityOptions) -> Result<SparseAffinity> {
    if opts.radius == 0 {
        return Err(Error::InvalidArgument("affinity radius must be at least 1".into()));
    }
    let sigma = match opts.sigma {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidArgument(format!("sigma must be positive, got {s}"))),
        None => sigma_with_frac(map, opts.sigma_frac),
    };
    let (h, w) = map.dims();
    let offsets = neighbor_offsets(opts.radius, opts.neighborhood);
    let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            let mut cols = Vec::with_capacity(offsets.len());
            let mut ws = Vec::with_capacity(offsets.len());
            for &(dr, dc) in &offsets {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    continue;
                }
                let j = (rr as usize) * w + cc as usize;
                let (lo, hi) = (i.min(j), i.max(j));
                let m = line_max_with(map, (lo / w, lo % w), (hi / w, hi % w), opts.line);
                cols.push(j as u32);
                ws.push(contour_weight(m, sigma));
            }
            (cols, ws)
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(h * w + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    let mut degree = Vec::with_capacity(h * w);
    for (c, ws) in rows {
        degree.push(ws.iter().sum());
        cols.extend(c);
        weights.extend(ws);
        row_ptr.push(cols.len());
    }
    Ok(SparseAffinity {
        dims: (h, w),
        sigma,
        row_ptr,
        cols,
        weights,
        degree,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    pub k: usize,
    /// Bound on `‖L u - λ u‖` for unit `u`.
    pub tol: f64,
    /// Largest Krylov basis before giving up.
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    pub dims: (usize, usize),
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Generalized eigenvectors `v`, unit max-abs, first significant entry positive.
    pub eigenvectors: Vec<Vec<f64>>,
    /// `‖L u - λ u‖` for each pair.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl SpectralEmbedding {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Drops the leading (trivial, constant) pair.
    pub fn without_trivial(mut self) -> Self {
        if !self.eigenvalues.is_empty() {
            self.eigenvalues.remove(0);
            self.eigenvectors.remove(0);
            self.residuals.remove(0);
        }
        self
    }

    /// `[k, H, W]` tensor of the eigenvector channels.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = self.dims;
        let data = self
            .eigenvectors
            .iter()
            .flat_map(|v| v.iter().map(|&x| x as f32))
            .collect();
        Tensor::new(vec![self.k(), h, w], data).expect("embedding dims are consistent")
    }
}

/// `y = L x` with `L = I - D^-1/2 W D^-1/2`, rows summed in column order.
struct NormalizedLaplacian<'a> {
    a: &'a SparseAffinity,
    scaled: Vec<f64>,
}

impl<'a> NormalizedLaplacian<'a> {
    fn new(a: &'a SparseAffinity) -> Self {
        let dis: Vec<f64> = a.degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let scaled = (0..a.n())
            .into_par_iter()
            .flat_map_iter(|i| {
                let span = a.row_ptr[i]..a.row_ptr[i + 1];
                let di = dis[i];
                let dis = &dis;
                a.cols[span.clone()]
                    .iter()
                    .zip(&a.weights[span])
                    .map(move |(&j, &w)| w * di * dis[j as usize])
            })
            .collect();
        Self { a, scaled }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let a = self.a;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                s += self.scaled[k] * x[a.cols[k] as usize];
            }
            *yi = x[i] - s;
        });
    }
}

const CHUNK: usize = 4096;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the components of `w` along every basis vector, twice.
fn orthogonalize(w: &mut [f64], basis: &[&[f64]]) {
    for _ in 0..2 {
        let coeffs: Vec<f64> = basis.par_iter().map(|q| dot(q, w)).collect();
        w.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            let span = ci * CHUNK..ci * CHUNK + chunk.len();
            for (q, &h) in basis.iter().zip(&coeffs) {
                for (wk, &qk) in chunk.iter_mut().zip(&q[span.clone()]) {
                    *wk -= h * qk;
                }
            }
        });
    }
}

/// Eigen-decomposition of the symmetric tridiagonal matrix with diagonal `d`
/// and off-diagonal `e` (`e[i]` couples `i` and `i + 1`) by implicit QL.
/// Returns ascending eigenvalues and row-major eigenvectors (column `j` is
/// the vector of eigenvalue `j`).
pub fn tridiagonal_eigen(d: &[f64], e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = d.len();
    if e.len() + 1 != n.max(1) {
        return Err(Error::Shape(format!(
            "tridiagonal matrix of order {n} needs {} off-diagonal entries, got {}",
            n.saturating_sub(1),
            e.len()
        )));
    }
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).collect();
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residuals: vec![e[l].abs()],
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let zk = z[k * n + i + 1];
                    z[k * n + i + 1] = s * z[k * n + i] + c * zk;
                    z[k * n + i] = c * z[k * n + i] - s * zk;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let vals = order.iter().map(|&j| d[j]).collect();
    let mut vecs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + new] = z[k * n + old];
        }
    }
    Ok((vals, vecs))
}

/// Normalizes a generalized eigenvector: unit max-abs, first entry above
/// `1e-6` in magnitude made positive.
fn canonicalize(v: &mut [f64]) {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 {
        return;
    }
    let first = v.iter().map(|x| x / m).find(|x| x.abs() > 1e-6).unwrap_or(1.0);
    let s = if first < 0.0 { -1.0 / m } else { 1.0 / m };
    for x in v.iter_mut() {
        *x *= s;
    }
}

/// The `k` smallest generalized eigenpairs of `(D - W) v = λ D v`.
pub fn smallest_eigenpairs(a: &SparseAffinity, opts: &EigenOptions) -> Result<SpectralEmbedding> {
    let n = a.n();
    if opts.k == 0 || opts.k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k < n, got k = {} for n = {n}",
            opts.k
        )));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::InvalidArgument("eigen tolerance must be positive".into()));
    }
    let op = NormalizedLaplacian::new(a);
    let sqrt_d: Vec<f64> = a.degree.iter().map(|d| d.sqrt()).collect();
    let nd = norm(&sqrt_d);
    let u0: Vec<f64> = sqrt_d.iter().map(|x| x / nd).collect();
    let mut tmp = vec![0.0; n];

    let mut us = vec![u0];
    let mut lambdas = Vec::with_capacity(opts.k);
    let mut iterations = 0;
    if opts.k > 1 {
        let (vals, vecs, it) = lanczos(&op, &[&us[0]], opts.k - 1, opts, 0, &mut tmp)?;
        iterations = it;
        lambdas.extend(vals);
        us.extend(vecs);
        iterations += recover_missed(&op, &mut us, &mut lambdas, opts, &mut tmp)?;
    }
    op.apply(&us[0], &mut tmp);
    let rq0 = dot(&us[0], &tmp);
    lambdas.insert(0, rq0);

    let mut residuals = Vec::with_capacity(opts.k);
    for (u, &lam) in us.iter().zip(&lambdas) {
        op.apply(u, &mut tmp);
        let r: f64 = tmp.iter().zip(u).map(|(y, x)| (y - lam * x).powi(2)).sum();
        residuals.push(r.sqrt());
    }
    let eigenvectors = us
        .into_iter()
        .map(|u| {
            let mut v: Vec<f64> = u.iter().zip(&sqrt_d).map(|(x, s)| x / s).collect();
            canonicalize(&mut v);
            v
        })
        .collect();
    Ok(SpectralEmbedding {
        dims: a.dims,
        eigenvalues: lambdas,
        eigenvectors,
        residuals,
        iterations,
    })
}

/// Single-vector Lanczos sees one copy of a repeated eigenvalue at a time.
/// Searches the complement of everything found so far for a pair below the
/// current largest, swapping it in until none is left. `us[0]` is the trivial
/// vector; `lambdas` holds the rest, ascending.
fn recover_missed(
    op: &NormalizedLaplacian<'_>,
    us: &mut Vec<Vec<f64>>,
    lambdas: &mut Vec<f64>,
    opts: &EigenOptions,
    w: &mut [f64],
) -> Result<usize> {
    let n = us[0].len();
    let mut iterations = 0;
    for pass in 1..=opts.k as u64 {
        if us.len() >= n {
            break;
        }
        let locked: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
        let (vals, mut vecs, it) = lanczos(op, &locked, 1, opts, pass, w)?;
        iterations += it;
        let top = *lambdas.last().expect("at least one nontrivial pair");
        if vals[0] >= top - 10.0 * opts.tol {
            break;
        }
        lambdas.pop();
        us.pop();
        let at = lambdas.partition_point(|&l| l <= vals[0]);
        lambdas.insert(at, vals[0]);
        us.insert(at + 1, vecs.pop().expect("one Ritz vector"));
    }
    Ok(iterations)
}

/// Lanczos with full reorthogonalization on the complement of `locked`.
/// Returns the `want` smallest Ritz pairs and the final basis size.
fn lanczos(
    op: &NormalizedLaplacian<'_>,
    locked: &[&[f64]],
    want: usize,
    opts: &EigenOptions,
    stream: u64,
    w: &mut [f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize)> {
    let n = locked[0].len();
    let max_dim = opts.max_iter.min(n - locked.len()).max(want);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let start = |rng: &mut ChaCha8Rng, q: &[Vec<f64>]| -> Option<Vec<f64>> {
        for _ in 0..8 {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut basis: Vec<&[f64]> = locked.to_vec();
            basis.extend(q.iter().map(|x| x.as_slice()));
            orthogonalize(&mut v, &basis);
            let nv = norm(&v);
            if nv > 1e-8 {
                v.iter_mut().for_each(|x| *x /= nv);
                return Some(v);
            }
        }
        None
    };
    let mut next = start(&mut rng, &q).ok_or_else(|| Error::NoConvergence {
        iterations: 0,
        residuals: vec![f64::INFINITY; want],
    })?;
    let mut best = vec![f64::INFINITY; want];
    loop {
        q.push(next);
        let j = q.len() - 1;
        op.apply(&q[j], w);
        let alpha = dot(&q[j], w);
        for (wk, qk) in w.iter_mut().zip(&q[j]) {
            *wk -= alpha * qk;
        }
        if j > 0 {
            let b = betas[j - 1];
            for (wk, qk) in w.iter_mut().zip(&q[j - 1]) {
                *wk -= b * qk;
            }
        }
        {
            let mut basis: Vec<&[f64]> = locked.to_vec();
            basis.extend(q.iter().map(|x| x.as_slice()));
            orthogonalize(w, &basis);
        }
        alphas.push(alpha);
        let beta = norm(w);
        let dim = q.len();
        let exhausted = dim >= n - locked.len();
        let breakdown = beta <= 1e-12;
        let check = dim >= want && (dim.is_multiple_of(4) || dim == want || breakdown || exhausted || dim >= max_dim);
        if check {
            let (vals, vecs) = tridiagonal_eigen(&alphas, &betas)?;
            let est: Vec<f64> = (0..want).map(|i| (beta * vecs[(dim - 1) * dim + i]).abs()).collect();
            if est.iter().all(|&r| r <= opts.tol) || exhausted {
                let ritz: Vec<Vec<f64>> = (0..want)
                    .map(|i| {
                        let mut u = vec![0.0; n];
                        u.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
                            let span = ci * CHUNK..ci * CHUNK + chunk.len();
                            for (jj, qj) in q.iter().enumerate() {
                                let s = vecs[jj * dim + i];
                                for (uk, &qk) in chunk.iter_mut().zip(&qj[span.clone()]) {
                                    *uk += s * qk;
                                }
                            }
                        });
                        let nu = norm(&u);
                        u.iter_mut().for_each(|x| *x /= nu);
                        u
                    })
                    .collect();
                let mut tmp = vec![0.0; n];
                let true_res: Vec<f64> = ritz
                    .iter()
                    .zip(&vals)
                    .map(|(u, &lam)| {
                        op.apply(u, &mut tmp);
                        tmp.iter().zip(u).map(|(y, x)| (y - lam * x).powi(2)).sum::<f64>().sqrt()
                    })
                    .collect();
                if true_res.iter().all(|&r| r <= opts.tol) || exhausted {
                    return Ok((vals[..want].to_vec(), ritz, dim));
                }
                best = true_res;
            } else {
                best = est;
            }
        }
        if dim >= max_dim {
            return Err(Error::NoConvergence {
                iterations: dim,
                residuals: best,
            });
        }
        if breakdown {
            betas.push(0.0);
            match start(&mut rng, &q) {
                Some(v) => next = v,
                None => {
                    return Err(Error::NoConvergence {
                        iterations: dim,
                        residuals: best,
                    })
                }
            }
        } else {
            betas.push(beta);
            next = w.iter().map(|x| x / beta).collect();
        }
    }
}

/// Bilinear up-sampling of every channel with pixel-center alignment.
pub fn resize_embedding(e: &SpectralEmbedding, target: (usize, usize)) -> Result<Tensor> {
    let (h, w) = e.dims;
    let (th, tw) = target;
    if th < h || tw < w {
        return Err(Error::InvalidArgument(format!(
            "cannot resize a {h}x{w} embedding down to {th}x{tw}"
        )));
    }
    let mut data = Vec::with_capacity(e.k() * th * tw);
    for v in &e.eigenvectors {
        for r in 0..th {
            for c in 0..tw {
                let (y, x) = map_point(c as f32, r as f32, (h, w), (th, tw));
                let (r0, c0) = (y.floor() as usize, x.floor() as usize);
                let (r1, c1) = (y.ceil() as usize, x.ceil() as usize);
                let (fy, fx) = (y - r0 as f64, x - c0 as f64);
                let top = v[r0 * w + c0] * (1.0 - fx) + v[r0 * w + c1] * fx;
                let bottom = v[r1 * w + c0] * (1.0 - fx) + v[r1 * w + c1] * fx;
                data.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::new(vec![e.k(), th, tw], data)
}

/// Working-grid dims with the longest side at most `max_side`.
pub fn working_dims(dims: (usize, usize), max_side: usize) -> (usize, usize) {
    let (h, w) = dims;
    let longest = h.max(w);
    if max_side == 0 || longest <= max_side {
        return dims;
    }
    let s = max_side as f64 / longest as f64;
    let fit = |x: usize| ((x as f64 * s).round() as usize).clamp(1, max_side);
    (fit(h), fit(w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOptions {
    pub affinity: AffinityOptions,
    pub eigen: EigenOptions,
    /// Longest working-grid side; `None` keeps full resolution.
    pub decimate_max: Option<usize>,
    /// Return `k` non-trivial vectors instead of including the constant one.
    pub drop_trivial: bool,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            affinity: AffinityOptions::default(),
            eigen: EigenOptions::default(),
            decimate_max: Some(DEFAULT_DECIMATE_MAX),
            drop_trivial: false,
        }
    }
}

/// Decimate, embed, and resize back: a `[k, H, W]` tensor over the map's dims.
pub fn spectral_channels(map: &BoundaryMap, opts: &SpectralOptions) -> Result<(SpectralEmbedding, Tensor)> {
    let dims = map.dims();
    let work = opts.decimate_max.map_or(dims, |m| working_dims(dims, m));
    let small = if work == dims {
        map.clone()
    } else {
        boundary_map::downscale(map, work)?
    };
    let affinity = build_affinity(&small, &opts.affinity)?;
    let mut eig = opts.eigen.clone();
    if opts.drop_trivial {
        eig.k += 1;
    }
    let mut e = smallest_eigenpairs(&affinity, &eig)?;
    if opts.drop_trivial {
        e = e.without_trivial();
    }
    let t = resize_embedding(&e, dims)?;
    Ok((e, t))
}
