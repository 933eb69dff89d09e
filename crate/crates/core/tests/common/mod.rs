//! Independent reference implementations and random instance builders shared
//! by the integration tests. Everything here is deliberately naive.
#![allow(dead_code)]

use nalgebra::DMatrix;
use npn_quilt::types::{BlockDesign, PairMask};
use rand::Rng;

/// `Σ_{i<j} sign((x_i − x_j)(y_i − y_j))` by enumerating every pair.
pub fn kendall_numerator_naive(x: &[f64], y: &[f64]) -> i64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let prod = (x[i] - x[j]) * (y[i] - y[j]);
            s += if prod > 0.0 {
                1
            } else if prod < 0.0 {
                -1
            } else {
                0
            };
        }
    }
    s
}

pub fn kendall_naive(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as i64;
    kendall_numerator_naive(x, y) as f64 / (n * (n - 1) / 2) as f64
}

/// Midranks by counting.
pub fn midranks_naive(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman_naive(x: &[f64], y: &[f64]) -> f64 {
    pearson(&midranks_naive(x), &midranks_naive(y))
}

/// Vector of length `n` drawn from a small integer alphabet when `ties` is
/// set, otherwise continuous.
pub fn random_vector<R: Rng>(rng: &mut R, n: usize, ties: bool) -> Vec<f64> {
    if ties {
        let levels = rng.random_range(2..=(n / 2).max(3));
        (0..n).map(|_| rng.random_range(0..levels) as f64).collect()
    } else {
        (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect()
    }
}

/// `A Aᵀ / p + shift · I` with standard normal `A`.
pub fn random_spd<R: Rng>(rng: &mut R, p: usize, shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| standard_normal(rng));
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * shift
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box–Muller; the library uses a different sampler
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rescales a positive definite matrix to unit diagonal.
pub fn to_correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].sqrt()).collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (d[i] * d[j]))
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn inverse_gauss_jordan(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::identity(n, n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[(x, col)].abs().total_cmp(&a[(y, col)].abs()))
            .unwrap();
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let d = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[(r, col)];
                if f != 0.0 {
                    for j in 0..n {
                        a[(r, j)] -= f * a[(col, j)];
                        inv[(r, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

pub fn sub(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Variables of the constrained max-det problem: the diagonal and every
/// observed off-diagonal pair.
fn support_terms(mask: &PairMask) -> Vec<(usize, usize)> {
    let p = mask.p();
    let mut terms: Vec<(usize, usize)> = (0..p).map(|i| (i, i)).collect();
    terms.extend(mask.observed_pairs());
    terms
}

fn objective(theta: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Option<f64> {
    let chol = theta.clone().cholesky()?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some(logdet - sigma.component_mul(theta).sum())
}

/// `argmax log det Θ − tr(ΣΘ)` over `Θ ≻ 0` supported on the diagonal and
/// the observed pairs, by damped Newton on the free entries.
pub fn maxdet_newton(sigma: &DMatrix<f64>, mask: &PairMask) -> DMatrix<f64> {
    let p = sigma.nrows();
    let terms = support_terms(mask);
    let m = terms.len();
    let mut theta = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / sigma[(i, i)] } else { 0.0 });
    let parts = |&(i, j): &(usize, usize)| -> Vec<(usize, usize)> {
        if i == j {
            vec![(i, i)]
        } else {
            vec![(i, j), (j, i)]
        }
    };
    for _ in 0..200 {
        let w = inverse_gauss_jordan(&theta);
        let grad = nalgebra::DVector::from_fn(m, |e, _| {
            parts(&terms[e]).iter().map(|&(a, b)| w[(b, a)] - sigma[(b, a)]).sum::<f64>()
        });
        if grad.amax() < 1e-13 {
            break;
        }
        let hess = DMatrix::from_fn(m, m, |e, f| {
            let mut t = 0.0;
            for &(a, b) in &parts(&terms[e]) {
                for &(c, d) in &parts(&terms[f]) {
                    t += w[(b, c)] * w[(d, a)];
                }
            }
            t
        });
        let step = hess.cholesky().expect("Hessian positive definite").solve(&grad);
        let f0 = objective(&theta, sigma).unwrap();
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let mut trial = theta.clone();
            for (e, &(i, j)) in terms.iter().enumerate() {
                trial[(i, j)] += t * step[e];
                if i != j {
                    trial[(j, i)] += t * step[e];
                }
            }
            if let Some(f1) = objective(&trial, sigma) {
                if f1 >= f0 + 0.25 * t * slope || t < 1e-12 {
                    theta = trial;
                    break;
                }
            }
            t *= 0.5;
        }
        if slope < 1e-26 {
            break;
        }
    }
    theta
}

/// Random cover of `0..p` by `k` blocks of size `o`, each sharing at least
/// `overlap` variables with the union of the earlier ones.
pub fn chained_design<R: Rng>(rng: &mut R, p: usize, k: usize, o: usize, overlap: usize, n: usize) -> BlockDesign {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    let step = if k > 1 { (p - o).div_ceil(k - 1) } else { 0 };
    assert!(k == 1 || o >= step + overlap, "blocks too small for the requested overlap");
    let blocks: Vec<Vec<usize>> = (0..k)
        .map(|b| {
            let start = (b * step).min(p - o);
            let mut block: Vec<usize> = perm[start..start + o].to_vec();
            block.sort_unstable();
            block
        })
        .collect();
    BlockDesign::new(p, blocks, vec![n; k]).expect("valid design")
}

/// A population instance on blocks `A ∪ B` and `B ∪ C`: sign-alternating
/// chains inside A, B and C and a few weaker A–C edges on at least three
/// attachment nodes per side, relabelled by a random permutation. Returns the
/// correlation-scale precision, its covariance and the design.
pub fn two_block_instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, BlockDesign) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let na = rng.random_range(4..=10);
    let nb = rng.random_range(2..=8);
    let nc = rng.random_range(4..=10);
    let p = na + nb + nc;
    let mut t = DMatrix::<f64>::zeros(p, p);
    let sign = |r: &mut rand_chacha::ChaCha8Rng| if r.random::<bool>() { 1.0 } else { -1.0 };
    for (s, e) in [(0, na), (na, na + nb), (na + nb, p)] {
        for i in s..e - 1 {
            let w = sign(&mut rng) * rng.random_range(0.25..0.5);
            t[(i, i + 1)] = w;
            t[(i + 1, i)] = w;
        }
    }
    let mut a_att: Vec<usize> = (0..na).collect();
    a_att.shuffle(&mut rng);
    let mut c_att: Vec<usize> = (na + nb..p).collect();
    c_att.shuffle(&mut rng);
    for h in 0..rng.random_range(3..=5) {
        let (a, c) = (a_att[h % 3], c_att[(h * 2 + 1) % 3]);
        let w = sign(&mut rng) * rng.random_range(0.08..0.2);
        t[(a, c)] = w;
        t[(c, a)] = w;
    }
    for i in 0..p {
        let s: f64 = (0..p).filter(|&j| j != i).map(|j| t[(i, j)].abs()).sum();
        t[(i, i)] = s + 0.1 + rng.random_range(0.0..0.5);
    }
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(&mut rng);
    let theta = DMatrix::from_fn(p, p, |i, j| t[(perm[i], perm[j])]);
    let mut position = vec![0; p];
    for (i, &q) in perm.iter().enumerate() {
        position[q] = i;
    }
    let mut b1: Vec<usize> = (0..na + nb).map(|q| position[q]).collect();
    b1.sort_unstable();
    let mut b2: Vec<usize> = (na..p).map(|q| position[q]).collect();
    b2.sort_unstable();
    let design = BlockDesign::new(p, vec![b1, b2], vec![1000, 1000]).unwrap();
    let sigma = to_correlation(&inverse_gauss_jordan(&theta));
    let theta = inverse_gauss_jordan(&sigma);
    (theta, sigma, design)
}

/// Quantities of the minimal-superset definition recomputed from scratch.
pub struct SupersetOracle {
    pub delta: f64,
    pub nu: Option<f64>,
    pub psi: Option<f64>,
    pub edges_o: Vec<(usize, usize)>,
    pub superset: Vec<(usize, usize)>,
}

/// Max-det completion by Newton, block marginal precisions by direct
/// inversion of the covariance blocks, and pair enumeration.
pub fn superset_oracle(theta: &DMatrix<f64>, sigma: &DMatrix<f64>, design: &BlockDesign, zero: f64) -> SupersetOracle {
    let p = theta.nrows();
    let mask = design.pair_mask();
    let tilde = maxdet_newton(sigma, &mask);
    let mut delta: f64 = 0.0;
    let mut nu: Option<f64> = None;
    let mut edges_o = Vec::new();
    for (i, j) in mask.observed_pairs() {
        delta = delta.max((theta[(i, j)] - tilde[(i, j)]).abs());
        if theta[(i, j)].abs() > zero {
            edges_o.push((i, j));
            nu = Some(nu.map_or(theta[(i, j)].abs(), |v: f64| v.min(theta[(i, j)].abs())));
        }
    }
    let marginals: Vec<DMatrix<f64>> = design.blocks().iter().map(|b| inverse_gauss_jordan(&sub(sigma, b))).collect();
    let mut psi: Option<f64> = None;
    for m in &marginals {
        for a in 0..m.nrows() {
            for b in 0..m.nrows() {
                let x = m[(a, b)].abs();
                if a != b && x > zero && x < delta {
                    let margin = x.min(delta - x);
                    psi = Some(psi.map_or(margin, |v: f64| v.min(margin)));
                }
            }
        }
    }
    let flagged: Vec<bool> = (0..p)
        .map(|i| {
            let holding: Vec<usize> = (0..design.num_blocks()).filter(|&k| design.block(k).contains(&i)).collect();
            !holding.is_empty()
                && holding.iter().all(|&k| {
                    let block = design.block(k);
                    let a = block.iter().position(|&v| v == i).unwrap();
                    (0..block.len()).any(|b| {
                        let x = marginals[k][(a, b)].abs();
                        b != a && x > zero && x < delta
                    })
                })
        })
        .collect();
    let superset = mask.unobserved_pairs().filter(|&(i, j)| flagged[i] && flagged[j]).collect();
    SupersetOracle {
        delta,
        nu,
        psi,
        edges_o,
        superset,
    }
}
