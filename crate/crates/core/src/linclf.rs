//! Weighted L2-regularized L1-loss (hinge) linear SVM, trained by dual
//! coordinate descent, used as the routing classifier of forest splits.
//!
//! Sample `i` with weight `w_i` gets the dual box constraint
//! `0 <= alpha_i <= C * w_i`. A constant bias feature of value 1 is
//! appended internally (so the bias is regularized). Samples of weight 0
//! are dropped before solving and therefore cannot affect the model.

use rand::Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    /// Misclassification cost `C`.
    pub cost: f64,
    /// Stopping tolerance on the projected-gradient spread.
    pub tol: f64,
    /// Maximum number of passes over the data.
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            cost: 1.0,
            tol: 0.1,
            max_iter: 1000,
        }
    }
}

/// Linear decision function `w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// A training sample for the split classifier. Classes are numbered from
/// 0; in the binary case class 1 is the positive side of the hyperplane.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSample<'a> {
    pub x: &'a [f64],
    pub label: usize,
    pub weight: f64,
}

/// Trained split classifier: one hyperplane for two classes, one-vs-rest
/// hyperplanes otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitClassifier {
    Binary(LinearModel),
    OneVsRest(Vec<LinearModel>),
}

impl SplitClassifier {
    pub fn num_classes(&self) -> usize {
        match self {
            SplitClassifier::Binary(_) => 2,
            SplitClassifier::OneVsRest(models) => models.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SplitClassifier::Binary(m) => m.dim(),
            SplitClassifier::OneVsRest(models) => models.first().map_or(0, LinearModel::dim),
        }
    }

    /// Routes `x` to a class. Binary: class 1 iff `w . x + b > 0` (points
    /// on the hyperplane go to class 0). One-vs-rest: highest score, ties
    /// to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        check_dim(self.dim(), x.len())?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> usize {
        match self {
            SplitClassifier::Binary(m) => usize::from(m.score(x) > 0.0),
            SplitClassifier::OneVsRest(models) => {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for (c, m) in models.iter().enumerate() {
                    let s = m.score(x);
                    if s > best_score {
                        best = c;
                        best_score = s;
                    }
                }
                best
            }
        }
    }
}

/// Four independent partial sums, so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Trains the split classifier for `num_classes` classes.
///
/// Fails if fewer than two classes are requested, a class has no sample of
/// positive weight, or the inputs are malformed.
pub fn train_weighted_svm<R: Rng>(
    samples: &[WeightedSample<'_>],
    num_classes: usize,
    params: &SvmParams,
    rng: &mut R,
) -> Result<SplitClassifier> {
    if num_classes < 2 {
        return Err(Error::invalid("a split classifier needs at least 2 classes"));
    }
    if !(params.cost > 0.0 && params.cost.is_finite()) {
        return Err(Error::invalid("SVM cost must be positive"));
    }
    let dim = samples
        .first()
        .map(|s| s.x.len())
        .ok_or_else(|| Error::invalid("no training samples"))?;
    let mut class_weight = vec![0.0; num_classes];
    for s in samples {
        check_dim(dim, s.x.len())?;
        if s.label >= num_classes {
            return Err(Error::invalid(format!("label {} out of range", s.label)));
        }
        if !(0.0..=1.0).contains(&s.weight) {
            return Err(Error::invalid(format!("sample weight {} outside [0, 1]", s.weight)));
        }
        if s.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        class_weight[s.label] += s.weight;
    }
    if let Some(c) = class_weight.iter().position(|&w| w <= 0.0) {
        return Err(Error::Degenerate(format!(
            "class {c} has no training sample with positive weight"
        )));
    }

    let active: Vec<&WeightedSample<'_>> = samples.iter().filter(|s| s.weight > 0.0).collect();
    let xs: Vec<&[f64]> = active.iter().map(|s| s.x).collect();
    let upper: Vec<f64> = active.iter().map(|s| params.cost * s.weight).collect();

    if num_classes == 2 {
        let ys: Vec<f64> = active.iter().map(|s| if s.label == 1 { 1.0 } else { -1.0 }).collect();
        Ok(SplitClassifier::Binary(solve_dual_cd(&xs, &ys, &upper, params, rng)))
    } else {
        let models = (0..num_classes)
            .map(|c| {
                let ys: Vec<f64> = active.iter().map(|s| if s.label == c { 1.0 } else { -1.0 }).collect();
                solve_dual_cd(&xs, &ys, &upper, params, rng)
            })
            .collect();
        Ok(SplitClassifier::OneVsRest(models))
    }
}

/// Dual coordinate descent with shrinking for
/// `min_a 1/2 a^T Q a - sum(a)`, `0 <= a_i <= upper_i`,
/// `Q_ij = y_i y_j [x_i; 1] . [x_j; 1]`.
fn solve_dual_cd<R: Rng>(xs: &[&[f64]], ys: &[f64], upper: &[f64], params: &SvmParams, rng: &mut R) -> LinearModel {
    let l = xs.len();
    let dim = xs.first().map_or(0, |x| x.len());
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut alpha = vec![0.0; l];
    let qd: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut index: Vec<usize> = (0..l).collect();
    let mut active = l;
    let mut pg_max_old = f64::INFINITY;
    let mut pg_min_old = f64::NEG_INFINITY;

    let mut iter = 0;
    while iter < params.max_iter {
        let mut pg_max_new = f64::NEG_INFINITY;
        let mut pg_min_new = f64::INFINITY;

        for i in 0..active {
            let j = i + rng.gen_range(0..active - i);
            index.swap(i, j);
        }

        let mut s = 0;
        while s < active {
            let i = index[s];
            let x = xs[i];
            let g = ys[i] * (dot(&w, x) + b) - 1.0;
            let u = upper[i];
            let mut pg = 0.0;
            if alpha[i] == 0.0 {
                if g > pg_max_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g < 0.0 {
                    pg = g;
                }
            } else if alpha[i] == u {
                if g < pg_min_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g > 0.0 {
                    pg = g;
                }
            } else {
                pg = g;
            }
            pg_max_new = pg_max_new.max(pg);
            pg_min_new = pg_min_new.min(pg);

            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, u);
                let delta = (alpha[i] - old) * ys[i];
                for (wk, xk) in w.iter_mut().zip(x) {
                    *wk += delta * xk;
                }
                b += delta;
            }
            s += 1;
        }
        iter += 1;

        if pg_max_new - pg_min_new <= params.tol {
            if active == l {
                break;
            }
            active = l;
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
            continue;
        }
        pg_max_old = if pg_max_new <= 0.0 { f64::INFINITY } else { pg_max_new };
        pg_min_old = if pg_min_new >= 0.0 {
            f64::NEG_INFINITY
        } else {
            pg_min_new
        };
    }
    if iter >= params.max_iter {
        log::debug!("linear SVM reached max_iter = {}", params.max_iter);
    }

    LinearModel { weights: w, bias: b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn samples<'a>(xs: &'a [Vec<f64>], labels: &[usize], weights: &[f64]) -> Vec<WeightedSample<'a>> {
        xs.iter()
            .zip(labels)
            .zip(weights)
            .map(|((x, &label), &weight)| WeightedSample { x, label, weight })
            .collect()
    }

    /// Primal objective `1/2 |[w; b]|^2 + sum_i C w_i max(0, 1 - y_i f(x_i))`.
    fn primal(m: &LinearModel, s: &[WeightedSample<'_>], c: f64) -> f64 {
        let reg = 0.5 * (dot(&m.weights, &m.weights) + m.bias * m.bias);
        let loss: f64 = s
            .iter()
            .map(|s| {
                let y = if s.label == 1 { 1.0 } else { -1.0 };
                c * s.weight * (1.0 - y * m.score(s.x)).max(0.0)
            })
            .sum();
        reg + loss
    }

    /// Independent reference: full-batch subgradient descent on the primal
    /// with a decaying step, keeping the best iterate.
    fn reference_primal(s: &[WeightedSample<'_>], c: f64) -> f64 {
        let dim = s[0].x.len();
        let mut m = LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        };
        let mut best = primal(&m, s, c);
        for t in 1..=20000 {
            let mut gw = m.weights.clone();
            let mut gb = m.bias;
            for s in s {
                let y = if s.label == 1 { 1.0 } else { -1.0 };
                if y * m.score(s.x) < 1.0 {
                    for (g, x) in gw.iter_mut().zip(s.x) {
                        *g -= c * s.weight * y * x;
                    }
                    gb -= c * s.weight * y;
                }
            }
            let step = 0.05 / (t as f64).sqrt();
            for (w, g) in m.weights.iter_mut().zip(&gw) {
                *w -= step * g;
            }
            m.bias -= step * gb;
            best = best.min(primal(&m, s, c));
        }
        best
    }

    #[test]
    fn symmetric_pair_splits_at_zero() {
        let xs = vec![vec![-1.0], vec![1.0]];
        let s = samples(&xs, &[0, 1], &[1.0, 1.0]);
        let clf = train_weighted_svm(&s, 2, &SvmParams::default(), &mut rng()).unwrap();
        assert_eq!(clf.predict(&[-1.0]).unwrap(), 0);
        assert_eq!(clf.predict(&[1.0]).unwrap(), 1);
        let SplitClassifier::Binary(m) = &clf else {
            panic!("expected binary model")
        };
        let boundary = -m.bias / m.weights[0];
        assert!(boundary.abs() < 0.1, "boundary at {boundary}");
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let label = i % 2;
            let off = if label == 1 { 2.0 } else { -2.0 };
            xs.push(vec![off + r.gen_range(-1.0..1.0), r.gen_range(-3.0..3.0)]);
            labels.push(label);
        }
        let s = samples(&xs, &labels, &vec![1.0; 60]);
        let params = SvmParams {
            cost: 100.0,
            ..SvmParams::default()
        };
        let clf = train_weighted_svm(&s, 2, &params, &mut rng()).unwrap();
        for s in &s {
            assert_eq!(clf.predict(s.x).unwrap(), s.label);
        }
    }

    #[test]
    fn prediction_tie_rules() {
        let bin = SplitClassifier::Binary(LinearModel {
            weights: vec![1.0],
            bias: 0.0,
        });
        assert_eq!(bin.predict(&[2.0]).unwrap(), 1);
        assert_eq!(bin.predict(&[0.0]).unwrap(), 0);
        assert!(bin.predict(&[1.0, 2.0]).is_err());
        let ovr = SplitClassifier::OneVsRest(vec![
            LinearModel {
                weights: vec![0.0],
                bias: 0.3,
            },
            LinearModel {
                weights: vec![0.0],
                bias: 0.3,
            },
        ]);
        assert_eq!(ovr.predict(&[5.0]).unwrap(), 0);
    }

    #[test]
    fn error_cases() {
        let xs = vec![vec![0.0], vec![1.0]];
        let p = SvmParams::default();
        assert!(train_weighted_svm(&samples(&xs, &[0, 0], &[1.0, 1.0]), 2, &p, &mut rng()).is_err());
        assert!(train_weighted_svm(&samples(&xs, &[0, 1], &[1.0, 0.0]), 2, &p, &mut rng()).is_err());
        assert!(train_weighted_svm(&samples(&xs, &[0, 1], &[1.0, 1.5]), 2, &p, &mut rng()).is_err());
        assert!(train_weighted_svm(&samples(&xs, &[0, 1], &[1.0, 1.0]), 1, &p, &mut rng()).is_err());
        let bad = SvmParams { cost: 0.0, ..p };
        assert!(train_weighted_svm(&samples(&xs, &[0, 1], &[1.0, 1.0]), 2, &bad, &mut rng()).is_err());
    }

    fn noisy_set(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        for _ in 0..n {
            let label = r.gen_range(0..2usize);
            let off = if label == 1 { 0.7 } else { -0.7 };
            xs.push(vec![
                off + r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            ]);
            labels.push(label);
            weights.push(r.gen_range(0.05..1.0));
        }
        (xs, labels, weights)
    }

    #[test]
    fn zero_weight_samples_have_no_influence() {
        let (xs, labels, mut weights) = noisy_set(3, 40);
        let base = train_weighted_svm(&samples(&xs, &labels, &weights), 2, &SvmParams::default(), &mut rng()).unwrap();
        // Append zero-weight samples anywhere in feature space.
        let mut xs2 = xs.clone();
        let mut labels2 = labels.clone();
        xs2.push(vec![50.0, -20.0, 3.0]);
        labels2.push(0);
        weights.push(0.0);
        xs2.insert(0, vec![-9.0, 9.0, 9.0]);
        labels2.insert(0, 1);
        weights.insert(0, 0.0);
        let with =
            train_weighted_svm(&samples(&xs2, &labels2, &weights), 2, &SvmParams::default(), &mut rng()).unwrap();
        assert_eq!(base, with);
    }

    #[test]
    fn weight_and_cost_rescaling_is_neutral() {
        let (xs, labels, weights) = noisy_set(4, 50);
        let p = SvmParams {
            tol: 1e-8,
            max_iter: 10000,
            ..SvmParams::default()
        };
        let a = train_weighted_svm(&samples(&xs, &labels, &weights), 2, &p, &mut rng()).unwrap();
        let alpha = 0.25;
        let scaled: Vec<f64> = weights.iter().map(|w| w * alpha).collect();
        let p2 = SvmParams {
            cost: p.cost / alpha,
            ..p
        };
        let b = train_weighted_svm(&samples(&xs, &labels, &scaled), 2, &p2, &mut rng()).unwrap();
        let (SplitClassifier::Binary(a), SplitClassifier::Binary(b)) = (a, b) else {
            panic!("expected binary models")
        };
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!((a.bias - b.bias).abs() < 1e-6);
    }

    #[test]
    fn matches_reference_solver_objective() {
        let (xs, labels, _) = noisy_set(8, 40);
        let s = samples(&xs, &labels, &vec![1.0; 40]);
        let p = SvmParams {
            tol: 1e-6,
            max_iter: 10000,
            ..SvmParams::default()
        };
        let SplitClassifier::Binary(m) = train_weighted_svm(&s, 2, &p, &mut rng()).unwrap() else {
            panic!()
        };
        let ours = primal(&m, &s, p.cost);
        let reference = reference_primal(&s, p.cost);
        assert!(
            ours <= reference + 1e-3 * reference.abs().max(1.0),
            "{ours} vs {reference}"
        );
    }

    #[test]
    fn one_vs_rest_three_classes() {
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        let centres = [(-4.0, 0.0), (4.0, 0.0), (0.0, 5.0)];
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for i in 0..90 {
            let c = i % 3;
            xs.push(vec![
                centres[c].0 + r.gen_range(-1.0..1.0),
                centres[c].1 + r.gen_range(-1.0..1.0),
            ]);
            labels.push(c);
        }
        let s = samples(&xs, &labels, &vec![1.0; 90]);
        let clf = train_weighted_svm(
            &s,
            3,
            &SvmParams {
                cost: 10.0,
                ..SvmParams::default()
            },
            &mut rng(),
        )
        .unwrap();
        assert_eq!(clf.num_classes(), 3);
        let correct = s.iter().filter(|s| clf.predict(s.x).unwrap() == s.label).count();
        assert!(correct >= 85, "{correct}/90");
    }
}
