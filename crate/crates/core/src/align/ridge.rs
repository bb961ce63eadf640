//! Ridge regression from sparse binary codes to dense targets.

use nalgebra::DMatrix;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

/// Above this many samples the primal conjugate-gradient solver is used
/// instead of the dual Cholesky solve.
const DUAL_LIMIT: usize = 4000;
const CG_MAX_ITER: usize = 1000;
const CG_REL_TOL: f64 = 1e-10;

/// `y = W^T code + bias`, with `W` stored row-major (`dim x outputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Ridge {
    pub dim: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub lambda: f64,
}

impl Ridge {
    /// A model that always predicts zero.
    pub fn zero(dim: usize, outputs: usize) -> Self {
        Ridge {
            dim,
            outputs,
            weights: vec![0.0; dim * outputs],
            bias: vec![0.0; outputs],
            lambda: 0.0,
        }
    }

    /// Prediction for a code given by its active positions.
    pub fn predict(&self, ones: &[usize]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for &j in ones {
            let row = &self.weights[j * self.outputs..(j + 1) * self.outputs];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += w);
        }
        out
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.usize(self.dim);
        w.usize(self.outputs);
        w.f64(self.lambda);
        w.f64s(&self.bias);
        w.f64s(&self.weights);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Ridge> {
        let dim = r.usize()?;
        let outputs = r.usize()?;
        let lambda = r.f64()?;
        let bias = r.f64s()?;
        let weights = r.f64s()?;
        if bias.len() != outputs || Some(weights.len()) != dim.checked_mul(outputs) {
            return Err(Error::Format("ridge matrix size does not match its header".into()));
        }
        Ok(Ridge {
            dim,
            outputs,
            weights,
            bias,
            lambda,
        })
    }
}

/// Minimizes `sum_i ||y_i - W^T a_i - b||^2 + lambda ||W||^2` where `a_i`
/// is the binary code with ones at `codes[i]`. The bias is the target mean
/// and is not regularized.
pub fn ridge_fit(codes: &[Vec<usize>], dim: usize, targets: &[Vec<f64>], lambda: f64) -> Result<Ridge> {
    let n = codes.len();
    if n == 0 || targets.len() != n {
        return Err(Error::invalid("ridge regression needs one target per code"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("ridge penalty must be positive"));
    }
    let m = targets[0].len();
    if targets.iter().any(|t| t.len() != m) || codes.iter().flatten().any(|&j| j >= dim) {
        return Err(Error::invalid("inconsistent ridge inputs"));
    }
    let mut bias = vec![0.0; m];
    for t in targets {
        bias.iter_mut().zip(t).for_each(|(b, v)| *b += v);
    }
    bias.iter_mut().for_each(|b| *b /= n as f64);
    let centered: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| t.iter().zip(&bias).map(|(v, b)| v - b).collect())
        .collect();
    let weights = if n <= DUAL_LIMIT {
        solve_dual(codes, dim, &centered, lambda)?
    } else {
        solve_primal_cg(codes, dim, &centered, lambda)
    };
    Ok(Ridge {
        dim,
        outputs: m,
        weights,
        bias,
        lambda,
    })
}

/// `W = A^T (A A^T + lambda I)^{-1} Y`.
fn solve_dual(codes: &[Vec<usize>], dim: usize, y: &[Vec<f64>], lambda: f64) -> Result<Vec<f64>> {
    let n = codes.len();
    let m = y[0].len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); dim];
    for (i, c) in codes.iter().enumerate() {
        for &j in c {
            members[j].push(i);
        }
    }
    let mut gram = DMatrix::<f64>::identity(n, n) * lambda;
    for list in &members {
        for (p, &a) in list.iter().enumerate() {
            for &b in &list[p..] {
                gram[(a, b)] += 1.0;
                if a != b {
                    gram[(b, a)] += 1.0;
                }
            }
        }
    }
    let rhs = DMatrix::from_fn(n, m, |i, k| y[i][k]);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge Gram matrix is not positive definite".into()))?;
    let alpha = chol.solve(&rhs);
    let mut w = vec![0.0; dim * m];
    for (i, c) in codes.iter().enumerate() {
        for &j in c {
            for k in 0..m {
                w[j * m + k] += alpha[(i, k)];
            }
        }
    }
    Ok(w)
}

/// Jacobi-preconditioned conjugate gradients on
/// `(A^T A + lambda I) W = A^T Y`, all output columns at once.
fn solve_primal_cg(codes: &[Vec<usize>], dim: usize, y: &[Vec<f64>], lambda: f64) -> Vec<f64> {
    let m = y[0].len();
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|x| x * lambda).collect();
        let mut row = vec![0.0; m];
        for c in codes {
            row.iter_mut().for_each(|r| *r = 0.0);
            for &j in c {
                row.iter_mut().zip(&v[j * m..(j + 1) * m]).for_each(|(r, x)| *r += x);
            }
            for &j in c {
                out[j * m..(j + 1) * m].iter_mut().zip(&row).for_each(|(o, r)| *o += r);
            }
        }
        out
    };
    let mut diag = vec![lambda; dim];
    let mut b = vec![0.0; dim * m];
    for (c, t) in codes.iter().zip(y) {
        for &j in c {
            diag[j] += 1.0;
            b[j * m..(j + 1) * m].iter_mut().zip(t).for_each(|(o, v)| *o += v);
        }
    }
    let col_dot = |a: &[f64], b: &[f64], k: usize| (0..dim).map(|j| a[j * m + k] * b[j * m + k]).sum::<f64>();
    let mut x = vec![0.0; dim * m];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().enumerate().map(|(i, v)| v / diag[i / m]).collect();
    let mut p = z.clone();
    let mut rz: Vec<f64> = (0..m).map(|k| col_dot(&r, &z, k)).collect();
    let b_norm: Vec<f64> = (0..m)
        .map(|k| col_dot(&b, &b, k).sqrt().max(f64::MIN_POSITIVE))
        .collect();
    let mut done = vec![false; m];
    for _ in 0..CG_MAX_ITER {
        for k in 0..m {
            if !done[k] && col_dot(&r, &r, k).sqrt() <= CG_REL_TOL * b_norm[k] {
                done[k] = true;
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
        let ap = apply(&p);
        let step: Vec<f64> = (0..m)
            .map(|k| {
                let pap = col_dot(&p, &ap, k);
                if done[k] || pap <= 0.0 {
                    0.0
                } else {
                    rz[k] / pap
                }
            })
            .collect();
        for i in 0..dim * m {
            x[i] += step[i % m] * p[i];
            r[i] -= step[i % m] * ap[i];
        }
        z = r.iter().enumerate().map(|(i, v)| v / diag[i / m]).collect();
        let rz_new: Vec<f64> = (0..m).map(|k| col_dot(&r, &z, k)).collect();
        for i in 0..dim * m {
            let k = i % m;
            let beta = if rz[k] > 0.0 { rz_new[k] / rz[k] } else { 0.0 };
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(n: usize, trees: usize, leaves: usize, seed: u64) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes: Vec<Vec<usize>> = (0..n)
            .map(|_| (0..trees).map(|t| t * leaves + rng.gen_range(0..leaves)).collect())
            .collect();
        let y = (0..n)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-5.0..5.0)])
            .collect();
        (codes, y)
    }

    /// Dense normal-equation solution as an independent reference.
    fn dense_reference(codes: &[Vec<usize>], dim: usize, y: &[Vec<f64>], lambda: f64) -> DMatrix<f64> {
        let n = codes.len();
        let a = DMatrix::from_fn(n, dim, |i, j| if codes[i].contains(&j) { 1.0 } else { 0.0 });
        let mean: Vec<f64> = (0..2).map(|k| y.iter().map(|t| t[k]).sum::<f64>() / n as f64).collect();
        let yc = DMatrix::from_fn(n, 2, |i, k| y[i][k] - mean[k]);
        let lhs = a.transpose() * &a + DMatrix::identity(dim, dim) * lambda;
        lhs.cholesky().unwrap().solve(&(a.transpose() * yc))
    }

    #[test]
    fn dual_and_cg_match_dense_solution() {
        let (codes, y) = problem(60, 3, 4, 5);
        let dim = 12;
        for lambda in [0.1, 1.0, 10.0] {
            let reference = dense_reference(&codes, dim, &y, lambda);
            let n = y.len() as f64;
            let mean: Vec<f64> = (0..2).map(|k| y.iter().map(|t| t[k]).sum::<f64>() / n).collect();
            let yc: Vec<Vec<f64>> = y.iter().map(|t| vec![t[0] - mean[0], t[1] - mean[1]]).collect();
            let dual = solve_dual(&codes, dim, &yc, lambda).unwrap();
            let cg = solve_primal_cg(&codes, dim, &yc, lambda);
            for j in 0..dim {
                for k in 0..2 {
                    assert!((dual[j * 2 + k] - reference[(j, k)]).abs() < 1e-8);
                    assert!((cg[j * 2 + k] - reference[(j, k)]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn constant_targets_give_bias_only() {
        let (codes, _) = problem(20, 2, 3, 1);
        let y = vec![vec![3.0, -1.0]; 20];
        let r = ridge_fit(&codes, 6, &y, 1.0).unwrap();
        assert!(r.weights.iter().all(|w| w.abs() < 1e-12));
        assert_eq!(r.predict(&codes[0]), vec![3.0, -1.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ridge_fit(&[], 3, &[], 1.0).is_err());
        assert!(ridge_fit(&[vec![5]], 3, &[vec![1.0]], 1.0).is_err());
        assert!(ridge_fit(&[vec![0]], 3, &[vec![1.0]], 0.0).is_err());
    }
}
