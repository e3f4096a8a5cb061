//! Reference implementations used as test oracles. Everything here is
//! written with plain loops and pivoted Gauss-Jordan elimination so that it
//! shares no code path with the library.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use opid_core::{one_hot_encode, Batch, FeatureSchema, LabelMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> LabelMatrix {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    one_hot_encode(&labels, classes).unwrap()
}

pub fn random_cbatch(rng: &mut ChaCha8Rng, schema: &FeatureSchema, n: usize) -> Batch {
    Batch::compress(
        gaussian(rng, n, schema.d_v),
        gaussian(rng, n, schema.d_s),
        random_labels(rng, n, schema.classes),
    )
}

pub fn random_ebatch(rng: &mut ChaCha8Rng, schema: &FeatureSchema, n: usize) -> Batch {
    Batch::expand(
        gaussian(rng, n, schema.d_s),
        gaussian(rng, n, schema.d_a),
        random_labels(rng, n, schema.classes),
    )
}

pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

pub fn transpose(a: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.ncols(), a.nrows()), |(i, j)| a[[j, i]])
}

pub fn identity(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 })
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn gj_inverse(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut inv = identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        assert!(m[[pivot, col]].abs() > 1e-300, "singular matrix");
        for k in 0..n {
            m.swap([col, k], [pivot, k]);
            inv.swap([col, k], [pivot, k]);
        }
        let p = m[[col, col]];
        for k in 0..n {
            m[[col, k]] /= p;
            inv[[col, k]] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[[r, col]];
                if f != 0.0 {
                    for k in 0..n {
                        m[[r, k]] -= f * m[[col, k]];
                        inv[[r, k]] -= f * inv[[col, k]];
                    }
                }
            }
        }
    }
    inv
}

pub fn gj_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    matmul(&gj_inverse(a), b)
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn hstack(blocks: &[&Array2<f64>]) -> Array2<f64> {
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut off = 0;
    for b in blocks {
        for i in 0..rows {
            for j in 0..b.ncols() {
                out[[i, off + j]] = b[[i, j]];
            }
        }
        off += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&Array2<f64>]) -> Array2<f64> {
    let cols = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut off = 0;
    for b in blocks {
        for i in 0..b.nrows() {
            for j in 0..cols {
                out[[off + i, j]] = b[[i, j]];
            }
        }
        off += b.nrows();
    }
    out
}

/// All C-stage batches stacked row-wise: `(X̃, X_s, Y)`.
pub fn stack_cstage(batches: &[Batch]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let xt: Vec<Array2<f64>> = batches
        .iter()
        .map(|b| hstack(&[b.x_v.as_ref().unwrap(), &b.x_s]))
        .collect();
    let xs: Vec<&Array2<f64>> = batches.iter().map(|b| &b.x_s).collect();
    let ys: Vec<&Array2<f64>> = batches.iter().map(|b| b.y.matrix()).collect();
    (
        vstack(&xt.iter().collect::<Vec<_>>()),
        vstack(&xs),
        vstack(&ys),
    )
}

/// Minimizer of
/// `‖X̃W̃ − Y‖² + ‖X_sW_s − Y‖² + λ‖X̃W̃ − X_sW_s‖² + ρ(‖W̃‖² + ‖W_s‖²)`
/// over all batches at once, from its normal equations.
pub fn cstage_oracle(
    batches: &[Batch],
    schema: &FeatureSchema,
    lambda: f64,
    rho: f64,
) -> (Array2<f64>, Array2<f64>) {
    let dt = schema.cstage_width();
    let ds = schema.d_s;
    if batches.is_empty() {
        return (
            Array2::zeros((dt, schema.classes)),
            Array2::zeros((ds, schema.classes)),
        );
    }
    let (xt, xs, y) = stack_cstage(batches);
    let (xtt, xst) = (transpose(&xt), transpose(&xs));
    let m = dt + ds;
    let mut h = Array2::zeros((m, m));
    let gtt = matmul(&xtt, &xt);
    let gts = matmul(&xtt, &xs);
    let gss = matmul(&xst, &xs);
    for i in 0..m {
        for j in 0..m {
            h[[i, j]] = match (i < dt, j < dt) {
                (true, true) => (1.0 + lambda) * gtt[[i, j]],
                (true, false) => -lambda * gts[[i, j - dt]],
                (false, true) => -lambda * gts[[j, i - dt]],
                (false, false) => (1.0 + lambda) * gss[[i - dt, j - dt]],
            };
            if i == j {
                h[[i, j]] += rho;
            }
        }
    }
    let rhs = vstack(&[&matmul(&xtt, &y), &matmul(&xst, &y)]);
    let w = gj_solve(&h, &rhs);
    let wt = w.slice(ndarray::s![..dt, ..]).to_owned();
    let ws = w.slice(ndarray::s![dt.., ..]).to_owned();
    (wt, ws)
}

/// Half-gradient of the C-stage objective above, written through residuals.
pub fn cstage_half_gradient(
    batches: &[Batch],
    lambda: f64,
    rho: f64,
    wt: &Array2<f64>,
    ws: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let (xt, xs, y) = stack_cstage(batches);
    let pt = matmul(&xt, wt);
    let ps = matmul(&xs, ws);
    let rt = &pt - &y;
    let rs = &ps - &y;
    let gap = &pt - &ps;
    let gt = matmul(&transpose(&xt), &rt) + matmul(&transpose(&xt), &gap) * lambda + wt * rho;
    let gs = matmul(&transpose(&xs), &rs) - matmul(&transpose(&xs), &gap) * lambda + ws * rho;
    (gt, gs)
}

pub fn ridge(x: &Array2<f64>, y: &Array2<f64>, rho: f64) -> Array2<f64> {
    let xt = transpose(x);
    let g = matmul(&xt, x) + identity(x.ncols()) * rho;
    gj_solve(&g, &matmul(&xt, y))
}

/// Elementwise evaluation of
/// `‖Z V_s + Z̄ V̄ − Y‖² + γ(‖V_s‖²/(c w1) + ‖V̄‖²/((c + d_a) w2))`.
#[allow(clippy::too_many_arguments)]
pub fn unified_objective(
    z_s: &Array2<f64>,
    z_bar: &Array2<f64>,
    y: &Array2<f64>,
    v_s: &Array2<f64>,
    v_bar: &Array2<f64>,
    w1: f64,
    w2: f64,
    gamma: f64,
) -> f64 {
    let (n, c) = y.dim();
    let mut fit = 0.0;
    for i in 0..n {
        for l in 0..c {
            let mut s = -y[[i, l]];
            for k in 0..z_s.ncols() {
                s += z_s[[i, k]] * v_s[[k, l]];
            }
            for k in 0..z_bar.ncols() {
                s += z_bar[[i, k]] * v_bar[[k, l]];
            }
            fit += s * s;
        }
    }
    let ns: f64 = v_s.iter().map(|v| v * v).sum();
    let nb: f64 = v_bar.iter().map(|v| v * v).sum();
    fit + gamma * (ns / (c as f64 * w1) + nb / (z_bar.ncols() as f64 * w2))
}

/// Central finite-difference gradient of `f` at the stacked point `x`.
pub fn fd_gradient(x: &Array1<f64>, step: f64, f: impl Fn(&Array1<f64>) -> f64) -> Array1<f64> {
    let mut g = Array1::zeros(x.len());
    let mut p = x.clone();
    for i in 0..x.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = f(&p);
        p[i] = orig - step;
        let down = f(&p);
        p[i] = orig;
        g[i] = (up - down) / (2.0 * step);
    }
    g
}

/// Flattens `(v_s, v_bar)` into one vector and back.
pub fn pack(v_s: &Array2<f64>, v_bar: &Array2<f64>) -> Array1<f64> {
    v_s.iter().chain(v_bar.iter()).copied().collect()
}

pub fn unpack(x: &Array1<f64>, c: usize, stacked: usize) -> (Array2<f64>, Array2<f64>) {
    let v_s = Array2::from_shape_vec((c, c), x.iter().take(c * c).copied().collect()).unwrap();
    let v_bar =
        Array2::from_shape_vec((stacked, c), x.iter().skip(c * c).copied().collect()).unwrap();
    (v_s, v_bar)
}

/// Minimizes the unified objective for fixed weights by plain gradient
/// descent with step `1/L`, `L` from power iteration on the Hessian, until
/// the gradient norm drops to `tol`.
#[allow(clippy::too_many_arguments)]
pub fn unified_gd_oracle(
    z_s: &Array2<f64>,
    z_bar: &Array2<f64>,
    y: &Array2<f64>,
    w1: f64,
    w2: f64,
    gamma: f64,
    tol: f64,
) -> (Array2<f64>, Array2<f64>) {
    let c = y.ncols();
    let p = z_bar.ncols();
    let z = hstack(&[z_s, z_bar]);
    let zt = transpose(&z);
    let gram = matmul(&zt, &z);
    let mut reg = Array1::zeros(c + p);
    for i in 0..c + p {
        reg[i] = if i < c {
            gamma / (c as f64 * w1)
        } else {
            gamma / (p as f64 * w2)
        };
    }
    // Hessian per output column: 2 (ZᵀZ + diag(reg)).
    let mut hess = gram.clone();
    for i in 0..c + p {
        hess[[i, i]] += reg[i];
    }
    hess *= 2.0;
    let mut v = Array1::from_elem(c + p, 1.0);
    let mut lmax = 0.0;
    for _ in 0..500 {
        let hv = hess.dot(&v);
        lmax = hv.dot(&hv).sqrt() / v.dot(&v).sqrt();
        v = &hv / hv.dot(&hv).sqrt();
    }
    let step = 1.0 / (1.05 * lmax);
    let zty = matmul(&zt, y);
    let mut w: Array2<f64> = Array2::zeros((c + p, c));
    for _ in 0..5_000_000 {
        let mut g = matmul(&gram, &w) - &zty;
        for i in 0..c + p {
            for l in 0..c {
                g[[i, l]] += reg[i] * w[[i, l]];
            }
        }
        g *= 2.0;
        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gn <= tol {
            break;
        }
        w = w - g * step;
    }
    (
        w.slice(ndarray::s![..c, ..]).to_owned(),
        w.slice(ndarray::s![c.., ..]).to_owned(),
    )
}

/// `½ vᵀv + α Σ log(1 + exp(−y x v))`, evaluated naively.
pub fn logistic_objective(x: &Array2<f64>, y: &Array1<f64>, alpha: f64, v: &Array1<f64>) -> f64 {
    let mut total = 0.5 * v.iter().map(|a| a * a).sum::<f64>();
    for i in 0..x.nrows() {
        let mut m = 0.0;
        for j in 0..x.ncols() {
            m += x[[i, j]] * v[j];
        }
        let t = -y[i] * m;
        total += alpha * if t > 30.0 { t } else { t.exp().ln_1p() };
    }
    total
}
