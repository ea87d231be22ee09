use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 1000;

/// Per-class sample weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights { positive: 1.0, negative: 1.0 };

    pub fn of(&self, positive: bool) -> f64 {
        if positive {
            self.positive
        } else {
            self.negative
        }
    }
}

/// `n_total / (2 n_c)` for each class.
pub fn balanced_weights(labels: &[bool]) -> Result<ClassWeights> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::invalid("balanced class weights need both classes"));
    }
    Ok(ClassWeights { positive: n / (2.0 * pos), negative: n / (2.0 * neg) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub class_weights: ClassWeights,
    pub iterations: usize,
    /// Gradient ∞-norm at the returned parameters.
    pub grad_norm: f64,
    pub converged: bool,
}

impl LogRegModel {
    pub fn logit(&self, z: &[f64]) -> f64 {
        self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.intercept
    }

    pub fn predict_proba(&self, z: &[f64]) -> f64 {
        sigmoid(self.logit(z))
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-t))` without overflow.
fn log1pexp_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// Logistic loss `J(w, b) = Σ ωᵢ log(1 + exp(-ỹᵢ(w·xᵢ + b))) + λ/2 ‖w‖²`.
pub fn objective(x: &[Vec<f64>], y: &[bool], cw: ClassWeights, lambda: f64, w: &[f64], b: f64) -> f64 {
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let m = xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            let s = if yi { 1.0 } else { -1.0 };
            cw.of(yi) * log1pexp_neg(s * m)
        })
        .sum();
    loss + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

/// Gradient of [`objective`]: `(∂J/∂w, ∂J/∂b)`.
pub fn gradient(x: &[Vec<f64>], y: &[bool], cw: ClassWeights, lambda: f64, w: &[f64], b: f64) -> (Vec<f64>, f64) {
    let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    let mut gb = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let m = xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        let s = if yi { 1.0 } else { -1.0 };
        let r = -cw.of(yi) * s * sigmoid(-s * m);
        for (g, a) in gw.iter_mut().zip(xi) {
            *g += r * a;
        }
        gb += r;
    }
    (gw, gb)
}

fn inf_norm(g: &DVector<f64>, gb: f64) -> f64 {
    g.amax().max(gb.abs())
}

/// Newton's method with backtracking. The (p+1)-dimensional Newton system is
/// solved in sample space: `(λI + XᵀDX)⁻¹` by Woodbury through the n x n
/// matrix `λI + SXXᵀS` (S = D^½), then the unpenalized intercept by its Schur
/// complement.
pub fn fit(x: &[Vec<f64>], y: &[bool], lambda: f64, cw: ClassWeights) -> Result<LogRegModel> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return Err(Error::invalid("logistic regression needs at least two labelled rows"));
    }
    if !(y.iter().any(|&l| l) && y.iter().any(|&l| !l)) {
        return Err(Error::invalid("logistic regression needs both classes"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("l2 strength must be positive"));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::invalid("ragged design matrix"));
    }
    let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let gram = &xm * xm.transpose();
    let sign = DVector::from_fn(n, |i, _| if y[i] { 1.0 } else { -1.0 });
    let omega = DVector::from_fn(n, |i, _| cw.of(y[i]));

    let obj = |w: &DVector<f64>, margins: &DVector<f64>| -> f64 {
        (0..n).map(|i| omega[i] * log1pexp_neg(sign[i] * margins[i])).sum::<f64>()
            + 0.5 * lambda * w.norm_squared()
    };

    let mut w = DVector::zeros(p);
    let mut b = 0.0;
    let mut margins = DVector::from_element(n, b);
    let mut f = obj(&w, &margins);
    let mut iterations = 0;
    let mut gnorm;
    loop {
        // residuals r = dJ/dmargin, curvature d
        let r = DVector::from_fn(n, |i, _| -omega[i] * sign[i] * sigmoid(-sign[i] * margins[i]));
        let d = DVector::from_fn(n, |i, _| {
            let s = sigmoid(margins[i]);
            omega[i] * s * (1.0 - s)
        });
        let gw = xm.tr_mul(&r) + &w * lambda;
        let gb = r.sum();
        gnorm = inf_norm(&gw, gb);
        if gnorm < GRAD_TOL || iterations >= MAX_ITER {
            break;
        }
        iterations += 1;

        let s = d.map(f64::sqrt);
        let mut m = DMatrix::from_fn(n, n, |i, j| s[i] * gram[(i, j)] * s[j]);
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        let chol = m.cholesky().ok_or_else(|| Error::invalid("Newton system not positive definite"))?;
        // A⁻¹v = (v − XᵀS M⁻¹ S X v) / λ
        let a_inv = |v: &DVector<f64>| -> DVector<f64> {
            let sxv = (&xm * v).component_mul(&s);
            let t = chol.solve(&sxv).component_mul(&s);
            (v - xm.tr_mul(&t)) / lambda
        };
        let c = xm.tr_mul(&d);
        let a_inv_c = a_inv(&c);
        let a_inv_g = a_inv(&gw);
        let schur = d.sum() - c.dot(&a_inv_c);
        let db = if schur > 0.0 { (-gb + c.dot(&a_inv_g)) / schur } else { 0.0 };
        let dw = -(a_inv_g + a_inv_c * db);

        let dmarg = &xm * &dw + DVector::from_element(n, db);
        let slope = gw.dot(&dw) + gb * db;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let w_new = &w + &dw * step;
            let b_new = b + db * step;
            let m_new = &margins + &dmarg * step;
            let f_new = obj(&w_new, &m_new);
            if f_new <= f + 1e-4 * step * slope || f_new <= f {
                w = w_new;
                b = b_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        // margins from scratch so rounding does not accumulate across steps
        margins = &xm * &w + DVector::from_element(n, b);
        f = obj(&w, &margins);
    }
    Ok(LogRegModel {
        weights: w.iter().copied().collect(),
        intercept: b,
        lambda,
        class_weights: cw,
        iterations,
        grad_norm: gnorm,
        converged: gnorm < GRAD_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_weight_examples() {
        let mut l = vec![true; 129];
        l.extend(vec![false; 33]);
        let w = balanced_weights(&l).unwrap();
        assert!((w.positive - 162.0 / 258.0).abs() < 1e-15);
        assert!((w.negative - 162.0 / 66.0).abs() < 1e-15);
        let w = balanced_weights(&[true, false]).unwrap();
        assert_eq!((w.positive, w.negative), (1.0, 1.0));
        let w = balanced_weights(&[true, true, true, false]).unwrap();
        assert!((w.positive - 2.0 / 3.0).abs() < 1e-15 && w.negative == 2.0);
        assert!(balanced_weights(&[true, true]).is_err());
    }

    #[test]
    fn one_dimensional_separable() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![false, true];
        let m = fit(&x, &y, 1.0, ClassWeights::UNIFORM).unwrap();
        assert!(m.weights[0] > 0.0);
        assert!(m.converged);
        let (gw, gb) = gradient(&x, &y, ClassWeights::UNIFORM, 1.0, &m.weights, m.intercept);
        assert!(gw[0].abs() < 1e-8 && gb.abs() < 1e-8);
    }

    fn random_problem(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
        let y: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        (x, y)
    }

    #[test]
    fn flipped_labels_negate_parameters() {
        let (x, y) = random_problem(3, 12, 30);
        let cw = balanced_weights(&y).unwrap();
        let m = fit(&x, &y, 1.0, cw).unwrap();
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let cwf = ClassWeights { positive: cw.negative, negative: cw.positive };
        let mf = fit(&x, &flipped, 1.0, cwf).unwrap();
        for (a, b) in m.weights.iter().zip(&mf.weights) {
            assert!((a + b).abs() < 1e-9);
        }
        assert!((m.intercept + mf.intercept).abs() < 1e-9);
    }

    #[test]
    fn duplicated_rows_with_doubled_lambda() {
        let (x, y) = random_problem(5, 10, 8);
        let m = fit(&x, &y, 1.0, ClassWeights::UNIFORM).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<bool> = y.iter().chain(&y).copied().collect();
        let m2 = fit(&x2, &y2, 2.0, ClassWeights::UNIFORM).unwrap();
        for (a, b) in m.weights.iter().zip(&m2.weights) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn wide_problem_converges_to_stationary_point() {
        let (x, y) = random_problem(9, 15, 400);
        let cw = balanced_weights(&y).unwrap();
        let m = fit(&x, &y, 1.0, cw).unwrap();
        assert!(m.converged, "grad {}", m.grad_norm);
        let (gw, gb) = gradient(&x, &y, cw, 1.0, &m.weights, m.intercept);
        let g = gw.iter().fold(gb.abs(), |a, v| a.max(v.abs()));
        assert!(g < 1e-8, "{g}");
    }

    #[test]
    fn extreme_margins_stay_finite() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(log1pexp_neg(-800.0).is_finite());
        assert!((log1pexp_neg(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
