//! Affinity, eigensolver and wall-separation checks against dense oracles.

use std::time::Instant;

use hfl_core::boundary_map::BoundaryMap;
use hfl_core::grid::Raster;
use hfl_core::spectral::{self, AffinityOptions, EigenOptions, SparseAffinity};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Check;

const K: usize = 16;

fn uniform_map(h: usize, w: usize, seed: u64) -> BoundaryMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BoundaryMap::new(Raster::from_fn(h, w, |_, _| rng.random())).unwrap()
}

/// A few random strokes of random strength on an empty map.
fn stroke_map(h: usize, w: usize, seed: u64) -> BoundaryMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Raster::filled(h, w, 0.0);
    for _ in 0..rng.random_range(1..4) {
        let a = (rng.random_range(0..h), rng.random_range(0..w));
        let b = (rng.random_range(0..h), rng.random_range(0..w));
        let v: f32 = rng.random_range(0.3..1.0);
        for (pr, pc) in bresenham(a, b) {
            r.set(pr, pc, r.get(pr, pc).max(v));
        }
    }
    BoundaryMap::new(r).unwrap()
}

/// Pixels of the segment `a → b`: one per step of the major axis, the minor
/// coordinate rounded to nearest with halves resolved away from `a`.
fn bresenham(a: (usize, usize), b: (usize, usize)) -> Vec<(usize, usize)> {
    let (r0, c0) = (a.0 as i64, a.1 as i64);
    let (dr, dc) = (b.0 as i64 - r0, b.1 as i64 - c0);
    let n = dr.abs().max(dc.abs());
    if n == 0 {
        return vec![a];
    }
    // round(i·|d|/n) with halves rounded up, applied symmetrically in sign.
    let step = |i: i64, d: i64| -> i64 { (2 * i * d.abs() + n).div_euclid(2 * n) * d.signum() };
    (0..=n)
        .map(|i| ((r0 + step(i, dr)) as usize, (c0 + step(i, dc)) as usize))
        .collect()
}

fn line_max(map: &BoundaryMap, a: (usize, usize), b: (usize, usize)) -> f32 {
    bresenham(a, b).into_iter().map(|(r, c)| map.get(r, c)).fold(0.0, f32::max)
}

fn sigma(map: &BoundaryMap) -> f32 {
    let m = map.raster().max_value();
    if m > 0.0 {
        0.14 * m
    } else {
        1e-6
    }
}

fn weight(m: f32, sigma: f32) -> f64 {
    let t = f64::from(m) / f64::from(sigma);
    (-(t * t)).exp().max(f64::MIN_POSITIVE)
}

/// Dense affinity over every pixel pair within Euclidean radius 5.
fn dense_affinity(map: &BoundaryMap) -> DMatrix<f64> {
    let (h, w) = map.dims();
    let n = h * w;
    let s = sigma(map);
    DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (i.min(j), i.max(j));
        let (pa, pb) = ((a / w, a % w), (b / w, b % w));
        let d2 = (pa.0 as i64 - pb.0 as i64).pow(2) + (pa.1 as i64 - pb.1 as i64).pow(2);
        if i == j || d2 > 25 {
            0.0
        } else {
            weight(line_max(map, pa, pb), s)
        }
    })
}

/// `D^-1/2 (D - W) D^-1/2` and the degrees.
fn normalized_laplacian(wm: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = wm.nrows();
    let d: Vec<f64> = (0..n).map(|i| wm.row(i).sum()).collect();
    let l = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - wm[(i, j)] / (d[i] * d[j]).sqrt()
    });
    (l, d)
}

fn sorted_eigen(l: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = SymmetricEigen::new(l.clone());
    let mut idx: Vec<usize> = (0..l.nrows()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    (
        idx.iter().map(|&i| eig.eigenvalues[i]).collect(),
        idx.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect(),
    )
}

/// Sine of the largest principal angle between the spans of two sets of vectors.
fn subspace_sine(ours: &[DVector<f64>], oracle: &[DVector<f64>]) -> f64 {
    let q = DMatrix::from_columns(oracle).qr().q();
    let u = DMatrix::from_columns(ours).qr().q();
    let resid = &u - &q * (q.transpose() * &u);
    resid.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Within 1e-6 relative, with an absolute floor for the near-zero trivial eigenvalue.
fn eigen_close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-6 * want.abs() + 1e-10
}

pub fn oracle_equivalence(c: &mut Check) {
    let start = Instant::now();
    let mut worst_ratio = 0.0f64;
    let mut worst_sine = 0.0f64;
    let mut clusters_skipped = 0;
    for seed in 0..50u64 {
        let map = if seed % 2 == 0 { uniform_map(8, 8, seed) } else { stroke_map(8, 8, seed) };
        let a = spectral::build_affinity(&map, &AffinityOptions::default()).unwrap();
        let e = match spectral::smallest_eigenpairs(&a, &EigenOptions { k: K, seed, ..EigenOptions::default() }) {
            Ok(e) => e,
            Err(err) => {
                c.ensure(false, format!("seed {seed}: {err}"));
                continue;
            }
        };
        let (l, d) = normalized_laplacian(&dense_affinity(&map));
        let (vals, vecs) = sorted_eigen(&l);
        for (i, (&got, &want)) in e.eigenvalues.iter().zip(&vals).enumerate() {
            worst_ratio = worst_ratio.max((got - want).abs() / (1e-6 * want.abs() + 1e-10));
            c.ensure(eigen_close(got, want), format!("seed {seed} eigenvalue {i}: {got:e} vs {want:e}"));
        }

        // Compare eigenspaces cluster by cluster, in the symmetric frame u = D^1/2 v.
        let sqrt_d: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
        let as_u = |v: &[f64]| DVector::from_iterator(v.len(), v.iter().zip(&sqrt_d).map(|(x, s)| x * s));
        let mut i = 0;
        while i < K {
            let mut j = i + 1;
            while j < vals.len() && vals[j] - vals[j - 1] < 1e-8 {
                j += 1;
            }
            if j > K {
                // The cluster straddles the k-th eigenvalue; its basis is not determined.
                clusters_skipped += 1;
                break;
            }
            let ours: Vec<_> = e.eigenvectors[i..j].iter().map(|v| as_u(v)).collect();
            let sine = subspace_sine(&ours, &vecs[i..j]);
            worst_sine = worst_sine.max(sine);
            c.ensure(sine < 1e-4, format!("seed {seed} eigenvectors {i}..{j}: angle {sine:e}"));
            i = j;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    c.note(format!(
        "50 maps, eigenvalue error at most {worst_ratio:.1e} of tolerance, worst subspace angle {worst_sine:.1e}, {clusters_skipped} boundary clusters skipped, {secs:.1}s"
    ));
    c.ensure(secs < 30.0, "slower than 30 s");
}

fn affinity_matches_brute_force(map: &BoundaryMap, a: &SparseAffinity) -> Result<usize, String> {
    let (h, w) = map.dims();
    let s = sigma(map);
    if a.sigma() != s {
        return Err(format!("sigma {} vs {s}", a.sigma()));
    }
    let mut entries = 0;
    for i in 0..h * w {
        let mut expect = Vec::new();
        for j in 0..h * w {
            let (pi, pj) = ((i / w, i % w), (j / w, j % w));
            let d2 = (pi.0 as i64 - pj.0 as i64).pow(2) + (pi.1 as i64 - pj.1 as i64).pow(2);
            if i != j && d2 <= 25 {
                let (lo, hi) = (i.min(j), i.max(j));
                expect.push((j, weight(line_max(map, (lo / w, lo % w), (hi / w, hi % w)), s)));
            }
        }
        let mut got: Vec<(usize, f64)> = a.neighbors(i).collect();
        got.sort_by_key(|&(j, _)| j);
        if got.len() != expect.len() {
            return Err(format!("pixel {i}: {} neighbors, expected {}", got.len(), expect.len()));
        }
        for (&(gj, gw), &(ej, ew)) in got.iter().zip(&expect) {
            if gj != ej || gw.to_bits() != ew.to_bits() {
                return Err(format!("pixel {i}: entry ({gj}, {gw:e}) vs ({ej}, {ew:e})"));
            }
            if a.weight(gj, i).map(f64::to_bits) != Some(gw.to_bits()) {
                return Err(format!("asymmetric entry ({i}, {gj})"));
            }
            if !(gw > 0.0 && gw <= 1.0) {
                return Err(format!("weight {gw:e} outside (0, 1]"));
            }
        }
        let deg: f64 = expect.iter().map(|&(_, w)| w).sum();
        if (a.degree()[i] - deg).abs() > 1e-12 * deg {
            return Err(format!("pixel {i}: degree {} vs {deg}", a.degree()[i]));
        }
        entries += got.len();
    }
    Ok(entries)
}

pub fn affinity_correctness(c: &mut Check) {
    let mut entries = 0;
    for seed in 0..20u64 {
        let map = if seed % 2 == 0 { uniform_map(10, 10, 500 + seed) } else { stroke_map(10, 10, 500 + seed) };
        let a = spectral::build_affinity(&map, &AffinityOptions::default()).unwrap();
        match affinity_matches_brute_force(&map, &a) {
            Ok(n) => entries += n,
            Err(e) => c.ensure(false, format!("seed {seed}: {e}")),
        }
    }
    c.note(format!("20 maps, {entries} entries bit-exact and symmetric"));

    let zero = BoundaryMap::zeros(11, 11);
    let a = spectral::build_affinity(&zero, &AffinityOptions::default()).unwrap();
    let center = 5 * 11 + 5;
    c.ensure(a.neighbor_count(center) == 80, format!("interior count {}", a.neighbor_count(center)));
    c.ensure(a.pairs().all(|(_, _, w)| w == 1.0), "zero map has a weight other than 1");
    let big = spectral::build_affinity(&BoundaryMap::zeros(15, 15), &AffinityOptions::default()).unwrap();
    let interior_ok = (5..10).all(|r| (5..10).all(|col| big.neighbor_count(r * 15 + col) == 80));
    c.ensure(interior_ok, "an interior pixel of a 15x15 map lacks 80 neighbors");

    let zero10 = BoundaryMap::zeros(10, 10);
    let a = spectral::build_affinity(&zero10, &AffinityOptions::default()).unwrap();
    let e = spectral::smallest_eigenpairs(&a, &EigenOptions { k: 2, ..EigenOptions::default() }).unwrap();
    let v0 = &e.eigenvectors[0];
    let constant = v0.iter().all(|x| (x - v0[0]).abs() < 1e-9);
    c.note(format!("zero map: lambda_1 {:.1e}", e.eigenvalues[0]));
    c.ensure(e.eigenvalues[0].abs() < 1e-10, format!("lambda_1 = {:e}", e.eigenvalues[0]));
    c.ensure(constant, "first eigenvector of the zero map is not constant");
}

pub fn wall_separation(c: &mut Check) {
    let col = 3;
    let map = BoundaryMap::new(Raster::from_fn(8, 8, |_, x| if x == col { 1.0 } else { 0.0 })).unwrap();
    let a = spectral::build_affinity(&map, &AffinityOptions::default()).unwrap();
    let e = spectral::smallest_eigenpairs(&a, &EigenOptions::default()).unwrap();
    let v = &e.eigenvectors[1];
    let left = v[0].signum();
    let mut wrong = 0;
    for (i, &x) in v.iter().enumerate() {
        let side = i % 8;
        if side == col {
            continue;
        }
        let want = if side < col { left } else { -left };
        if x.signum() != want || x == 0.0 {
            wrong += 1;
        }
    }
    c.note(format!("lambda_2 {:.3e}, {wrong} misassigned pixels", e.eigenvalues[1]));
    c.ensure(wrong == 0, format!("{wrong} pixels on the wrong side"));
}
