//! Closed-form ridge regression version of the f -> pseudo-label -> g
//! pipeline, used as exact ground truth for the iterative trainer.
//!
//! A [`LinearModel`] stores `W` as a `[d_in + 1, d_out]` matrix whose last
//! row is the bias; predictions are `[X, 1] W`. The bias row is never
//! penalized.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{shape_err, Error, Result};
use crate::model::{HeadKind, ModelState, TapSource};
use crate::synthdata::Dataset;

/// Above this condition number the normal equations are solved by QR on
/// the augmented design instead of Cholesky.
pub const CHOLESKY_MAX_CONDITION: f64 = 1e8;
/// With `lambda = 0`, designs whose Gram matrix is worse than this are
/// treated as rank-deficient.
pub const RANK_DEFICIENT_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: DMatrix<f64>,
}

impl LinearModel {
    pub fn d_in(&self) -> usize {
        self.w.nrows() - 1
    }

    pub fn d_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.d_in() {
            return Err(shape_err(
                "LinearModel::predict",
                format!("input has {} columns, model expects {}", x.ncols(), self.d_in()),
            ));
        }
        Ok(augment(x) * &self.w)
    }

    /// Reads a network with no backbone layers, the raw input as its only
    /// tap and a single head layer.
    pub fn from_model(model: &ModelState) -> Result<Self> {
        let spec = &model.spec;
        let taps = spec.taps()?;
        if !model.convs.is_empty()
            || model.head.len() != 1
            || spec.head_kind != HeadKind::Regression
            || taps.len() != 1
            || taps[0].0 != TapSource::Input
        {
            return Err(Error::InvalidArgument(
                "model is not linear (needs no conv layers, input tap only, one head layer)".into(),
            ));
        }
        let layer = &model.head[0];
        let (d_out, d_in) = (layer.weight.value.shape()[0], layer.weight.value.shape()[1]);
        let w = DMatrix::from_fn(d_in + 1, d_out, |r, c| {
            if r < d_in {
                layer.weight.value.data()[c * d_in + r] as f64
            } else {
                layer.bias.value.data()[c] as f64
            }
        });
        Ok(Self { w })
    }
}

fn augment(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = x.clone().insert_column(x.ncols(), 1.0);
    a.set_column(x.ncols(), &nalgebra::DVector::from_element(x.nrows(), 1.0));
    a
}

/// `W = (A^T A + lambda D)^-1 A^T Y` with `A = [X, 1]` and `D` the identity
/// with a zero in the bias slot. Cholesky on the regularized normal
/// equations; QR on the stacked design `[A; sqrt(lambda) D]` when their
/// condition exceeds [`CHOLESKY_MAX_CONDITION`].
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<LinearModel> {
    let (n, d) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(Error::InvalidArgument("ridge_fit: no rows".into()));
    }
    if y.nrows() != n {
        return Err(shape_err("ridge_fit", format!("X has {n} rows, Y has {}", y.nrows())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge_fit: lambda must be >= 0, got {lambda}")));
    }
    let a = augment(x);
    let mut gram = a.transpose() * &a;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = a.transpose() * y;
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if lambda == 0.0 && !(condition <= RANK_DEFICIENT_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    if condition <= CHOLESKY_MAX_CONDITION {
        if let Some(chol) = gram.clone().cholesky() {
            return Ok(LinearModel { w: chol.solve(&rhs) });
        }
    }
    let stacked_rows = n + d;
    let mut big = DMatrix::zeros(stacked_rows, d + 1);
    big.rows_mut(0, n).copy_from(&a);
    let root = lambda.sqrt();
    for i in 0..d {
        big[(n + i, i)] = root;
    }
    let mut target = DMatrix::zeros(stacked_rows, y.ncols());
    target.rows_mut(0, n).copy_from(y);
    let qr = big.qr();
    let qty = qr.q().transpose() * target;
    let w = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { condition })?;
    Ok(LinearModel { w })
}

/// `Wf = ridge(X1, Y1)`, `Wg = ridge(X2, X2 Wf)`.
pub fn oracle_pipeline(
    x1: &DMatrix<f64>,
    y1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    lambda: f64,
) -> Result<(LinearModel, LinearModel)> {
    let wf = ridge_fit(x1, y1, lambda)?;
    let pseudo = wf.predict(x2)?;
    let wg = ridge_fit(x2, &pseudo, lambda)?;
    Ok((wf, wg))
}

/// Largest elementwise deviation between two models.
pub fn oracle_compare(iterative: &LinearModel, closed_form: &LinearModel) -> Result<f64> {
    if iterative.w.shape() != closed_form.w.shape() {
        return Err(shape_err(
            "oracle_compare",
            format!("{:?} vs {:?}", iterative.w.shape(), closed_form.w.shape()),
        ));
    }
    Ok((&iterative.w - &closed_form.w).abs().max())
}

/// Per-pixel design and target matrices of a dataset: one row per valid
/// pixel with the image channels as features and the regression target
/// (ground-truth normals or stored teacher outputs) as response.
pub fn pixel_design(data: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut d_out = 0;
    for (i, r) in data.records.iter().enumerate() {
        let target = r
            .target
            .as_ref()
            .ok_or_else(|| Error::Rejected(format!("sample {i} has no regression target")))?;
        let (c, h, w) = (r.image.shape()[0], r.image.shape()[1], r.image.shape()[2]);
        d_out = target.shape()[0];
        let plane = h * w;
        for p in 0..plane {
            if r.valid.as_ref().is_some_and(|v| v.data()[p] == 0.0) {
                continue;
            }
            xs.extend((0..c).map(|k| r.image.data()[k * plane + p] as f64));
            ys.extend((0..d_out).map(|k| target.data()[k * plane + p] as f64));
        }
    }
    let d_in = data.records.first().map_or(0, |r| r.image.shape()[0]);
    let rows = xs.len() / d_in.max(1);
    Ok((
        DMatrix::from_row_slice(rows, d_in, &xs),
        DMatrix::from_row_slice(rows, d_out, &ys),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    #[test]
    fn interpolates_exact_linear_data() {
        let mut rng = Rng::new(1);
        let x = random(30, 4, &mut rng);
        let w0 = random(5, 2, &mut rng);
        let y = augment(&x) * &w0;
        let fit = ridge_fit(&x, &y, 0.0).unwrap();
        assert!((&fit.w - &w0).abs().max() < 1e-8);
    }

    #[test]
    fn stationarity_residual_vanishes() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let x = random(50, 4, &mut rng);
            let y = random(50, 3, &mut rng);
            let lambda = 0.5 + seed as f64;
            let fit = ridge_fit(&x, &y, lambda).unwrap();
            let a = augment(&x);
            let mut reg = fit.w.clone();
            reg.row_mut(4).fill(0.0);
            let residual = a.transpose() * &a * &fit.w - a.transpose() * &y + reg * lambda;
            assert!(residual.abs().max() < 1e-8, "seed {seed}: {}", residual.abs().max());
        }
    }

    #[test]
    fn huge_lambda_kills_non_bias_weights() {
        let mut rng = Rng::new(2);
        let x = random(40, 3, &mut rng);
        let y = random(40, 2, &mut rng);
        let fit = ridge_fit(&x, &y, 1e8).unwrap();
        assert!(fit.w.rows(0, 3).abs().max() < 1e-4);
        // The unpenalized bias settles on the target mean.
        for c in 0..2 {
            assert!((fit.w[(3, c)] - y.column(c).mean()).abs() < 1e-4);
        }
    }

    #[test]
    fn rank_deficient_rejected_with_condition() {
        let mut rng = Rng::new(3);
        let mut x = random(20, 3, &mut rng);
        let c0 = x.column(0).clone_owned();
        x.set_column(2, &(c0 * 2.0));
        let y = random(20, 1, &mut rng);
        match ridge_fit(&x, &y, 0.0) {
            Err(Error::RankDeficient { condition }) => assert!(condition > RANK_DEFICIENT_CONDITION),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        assert!(ridge_fit(&x, &y, 0.1).is_ok());
        assert!(ridge_fit(&x, &y, -1.0).is_err());
    }

    #[test]
    fn ill_conditioned_uses_qr_and_still_solves() {
        let mut rng = Rng::new(4);
        let mut x = random(60, 3, &mut rng);
        // Two nearly collinear columns: condition far above the Cholesky limit.
        for r in 0..60 {
            x[(r, 1)] = x[(r, 0)] + 1e-6 * x[(r, 1)];
        }
        let w0 = random(4, 1, &mut rng);
        let y = augment(&x) * &w0;
        let fit = ridge_fit(&x, &y, 0.0).unwrap();
        let pred = fit.predict(&x).unwrap();
        assert!((pred - y).abs().max() < 1e-6);
    }

    #[test]
    fn compare_reports_max_deviation() {
        let a = LinearModel {
            w: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
        };
        let b = LinearModel {
            w: DMatrix::from_row_slice(2, 1, &[1.5, 1.0]),
        };
        assert_eq!(oracle_compare(&a, &b).unwrap(), 1.0);
        let c = LinearModel { w: DMatrix::zeros(3, 1) };
        assert!(oracle_compare(&a, &c).is_err());
    }
}
