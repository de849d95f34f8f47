//! Central finite differences and the stage-level derivative dispatch used by
//! linearization: analytic derivatives when an oracle registers them,
//! differences otherwise.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{finite, Dynamics, StageCost};

/// Step rule `h_k = rel_step * max(|x_k|, 1) + abs_floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub rel_step: f64,
    pub abs_floor: f64,
}

impl FdConfig {
    pub fn first_order() -> Self {
        Self {
            rel_step: 1e-5,
            abs_floor: 1e-8,
        }
    }

    pub fn second_order() -> Self {
        Self {
            rel_step: 1e-4,
            abs_floor: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rel_step > 0.0 && self.abs_floor > 0.0 {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "finite-difference steps must be positive (rel_step={}, abs_floor={})",
                self.rel_step, self.abs_floor
            )))
        }
    }

    pub fn step(&self, xk: f64) -> f64 {
        self.rel_step * xk.abs().max(1.0) + self.abs_floor
    }
}

impl Default for FdConfig {
    fn default() -> Self {
        Self::first_order()
    }
}

fn scalar_checked(f: &dyn Fn(&DVector<f64>) -> f64, at: &DVector<f64>) -> Result<f64> {
    let v = f(at);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            oracle: "scalar oracle",
            index: 0,
        })
    }
}

/// Central-difference Jacobian of a vector map.
pub fn jacobian(
    map: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    at: &DVector<f64>,
    cfg: &FdConfig,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let f0 = map(at);
    finite("vector oracle", &f0)?;
    let mut jac = DMatrix::zeros(f0.len(), at.len());
    let mut probe = at.clone();
    for k in 0..at.len() {
        let h = cfg.step(at[k]);
        probe[k] = at[k] + h;
        let fp = map(&probe);
        probe[k] = at[k] - h;
        let fm = map(&probe);
        probe[k] = at[k];
        finite("vector oracle", &fp)?;
        finite("vector oracle", &fm)?;
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// Central-difference gradient of a scalar map.
pub fn gradient(
    f: &dyn Fn(&DVector<f64>) -> f64,
    at: &DVector<f64>,
    cfg: &FdConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    let mut g = DVector::zeros(at.len());
    let mut probe = at.clone();
    for k in 0..at.len() {
        let h = cfg.step(at[k]);
        probe[k] = at[k] + h;
        let fp = scalar_checked(f, &probe)?;
        probe[k] = at[k] - h;
        let fm = scalar_checked(f, &probe)?;
        probe[k] = at[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Mixed second-derivative block `d^2 f / (d v_a d v_b)` by nested central
/// differences. Diagonal blocks (`a == b`) come out exactly symmetric.
pub fn hessian_block(
    f: &dyn Fn(&DVector<f64>) -> f64,
    a: Range<usize>,
    b: Range<usize>,
    at: &DVector<f64>,
    cfg: &FdConfig,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    if a.end > at.len() || b.end > at.len() {
        return Err(Error::Dimension {
            context: "hessian block range",
            expected: at.len(),
            actual: a.end.max(b.end),
        });
    }
    let same = a == b;
    let mut out = DMatrix::zeros(a.len(), b.len());
    let mut probe = at.clone();
    for (r, i) in a.clone().enumerate() {
        for (c, j) in b.clone().enumerate() {
            if same && c < r {
                continue;
            }
            let hi = cfg.step(at[i]);
            let hj = cfg.step(at[j]);
            let mut eval = |si: f64, sj: f64| -> Result<f64> {
                probe[i] += si * hi;
                probe[j] += sj * hj;
                let v = scalar_checked(f, &probe);
                probe[i] = at[i];
                probe[j] = at[j];
                v
            };
            let v = (eval(1.0, 1.0)? - eval(1.0, -1.0)? - eval(-1.0, 1.0)? + eval(-1.0, -1.0)?)
                / (4.0 * hi * hj);
            out[(r, c)] = v;
            if same {
                out[(c, r)] = v;
            }
        }
    }
    Ok(out)
}

/// Hessian from central differences of a gradient map, symmetrized.
pub fn hessian_from_gradient(
    grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    at: &DVector<f64>,
    cfg: &FdConfig,
) -> Result<DMatrix<f64>> {
    let h = jacobian(grad, at, cfg)?;
    Ok(symmetrize(&h))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Sizes of the stacked stage variable `[x; u; d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLayout {
    pub nx: usize,
    pub nu: usize,
    pub nd: usize,
}

impl StageLayout {
    pub fn len(&self) -> usize {
        self.nx + self.nu + self.nd
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self) -> Range<usize> {
        0..self.nx
    }

    pub fn u(&self) -> Range<usize> {
        self.nx..self.nx + self.nu
    }

    pub fn d(&self) -> Range<usize> {
        self.nx + self.nu..self.len()
    }

    pub fn stack(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            x.iter().chain(u.iter()).chain(d.iter()).copied(),
        )
    }

    pub fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        (
            v.rows(0, self.nx).into_owned(),
            v.rows(self.nx, self.nu).into_owned(),
            v.rows(self.nx + self.nu, self.nd).into_owned(),
        )
    }
}

/// Gradient of a stage cost with respect to `[x; u; d]`.
pub fn cost_gradient(
    cost: &StageCost,
    layout: StageLayout,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    cfg: &FdConfig,
) -> Result<DVector<f64>> {
    let g = match cost.gradient_fn() {
        Some(g) => g(x, u, d),
        None => {
            let f = |v: &DVector<f64>| {
                let (x, u, d) = layout.split(v);
                cost.value(&x, &u, &d)
            };
            gradient(&f, &layout.stack(x, u, d), cfg)?
        }
    };
    if g.len() != layout.len() {
        return Err(Error::Dimension {
            context: "cost gradient",
            expected: layout.len(),
            actual: g.len(),
        });
    }
    finite("cost gradient", &g)?;
    Ok(g)
}

/// Hessian of a stage cost with respect to `[x; u; d]`.
///
/// Order of preference: analytic Hessian, differences of the analytic
/// gradient, nested differences of the value.
pub fn cost_hessian(
    cost: &StageCost,
    layout: StageLayout,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    cfg: &FdConfig,
) -> Result<DMatrix<f64>> {
    let h = if let Some(h) = cost.hessian_fn() {
        h(x, u, d)
    } else if let Some(g) = cost.gradient_fn() {
        let gv = |v: &DVector<f64>| {
            let (x, u, d) = layout.split(v);
            g(&x, &u, &d)
        };
        hessian_from_gradient(&gv, &layout.stack(x, u, d), cfg)?
    } else {
        let f = |v: &DVector<f64>| {
            let (x, u, d) = layout.split(v);
            cost.value(&x, &u, &d)
        };
        let all = 0..layout.len();
        hessian_block(&f, all.clone(), all, &layout.stack(x, u, d), cfg)?
    };
    if h.nrows() != layout.len() || h.ncols() != layout.len() {
        return Err(Error::Dimension {
            context: "cost hessian",
            expected: layout.len(),
            actual: h.nrows(),
        });
    }
    Ok(h)
}

/// Jacobian of stage dynamics with respect to `[x; u; d]`.
pub fn dynamics_jacobian(
    dynamics: &Dynamics,
    layout: StageLayout,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    cfg: &FdConfig,
) -> Result<DMatrix<f64>> {
    let jac = match dynamics.jacobian_fn() {
        Some(j) => j(x, u, d),
        None => {
            let f = |v: &DVector<f64>| {
                let (x, u, d) = layout.split(v);
                dynamics.value(&x, &u, &d)
            };
            jacobian(&f, &layout.stack(x, u, d), cfg)?
        }
    };
    if jac.nrows() != layout.nx || jac.ncols() != layout.len() {
        return Err(Error::Dimension {
            context: "dynamics jacobian",
            expected: layout.nx * layout.len(),
            actual: jac.nrows() * jac.ncols(),
        });
    }
    if let Some(index) = jac.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            oracle: "dynamics jacobian",
            index,
        });
    }
    Ok(jac)
}

/// Hessian of `weights^T f(x, u; d)` with respect to `[x; u; d]`.
pub fn weighted_dynamics_hessian(
    dynamics: &Dynamics,
    weights: &DVector<f64>,
    layout: StageLayout,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    cfg: &FdConfig,
) -> Result<DMatrix<f64>> {
    let at = layout.stack(x, u, d);
    if weights.iter().all(|w| *w == 0.0) {
        return Ok(DMatrix::zeros(layout.len(), layout.len()));
    }
    match dynamics.jacobian_fn() {
        Some(j) => {
            let g = |v: &DVector<f64>| {
                let (x, u, d) = layout.split(v);
                j(&x, &u, &d).tr_mul(weights)
            };
            hessian_from_gradient(&g, &at, cfg)
        }
        None => {
            let f = |v: &DVector<f64>| {
                let (x, u, d) = layout.split(v);
                weights.dot(&dynamics.value(&x, &u, &d))
            };
            let all = 0..layout.len();
            hessian_block(&f, all.clone(), all, &at, cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn identity_jacobian() {
        let at = v(&[0.3, -2.0, 7.5]);
        let j = jacobian(&|x: &DVector<f64>| x.clone(), &at, &FdConfig::first_order()).unwrap();
        assert!((j - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn polynomial_jacobian() {
        let map = |x: &DVector<f64>| v(&[x[0] * x[0], x[0] * x[1]]);
        let j = jacobian(&map, &v(&[1.0, 2.0]), &FdConfig::first_order()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 2.0, 1.0]);
        assert!((j - expected).amax() < 1e-6);
    }

    #[test]
    fn constant_jacobian_is_zero() {
        let j = jacobian(
            &|_: &DVector<f64>| v(&[3.0, -1.0]),
            &v(&[1.0]),
            &FdConfig::default(),
        )
        .unwrap();
        assert!(j.amax() < 1e-10);
    }

    #[test]
    fn nonfinite_output_reports_index() {
        let map = |x: &DVector<f64>| v(&[x[0], if x[0] > 0.5 { f64::NAN } else { 0.0 }]);
        let err = jacobian(&map, &v(&[0.5]), &FdConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Evaluation { index: 1, .. }));
    }

    #[test]
    fn rejects_nonpositive_steps() {
        let cfg = FdConfig {
            rel_step: 0.0,
            abs_floor: 1e-8,
        };
        assert!(jacobian(&|x: &DVector<f64>| x.clone(), &v(&[1.0]), &cfg).is_err());
    }

    #[test]
    fn hessian_blocks_of_simple_functions() {
        let cfg = FdConfig::second_order();
        let at = v(&[0.7, -1.3]);
        let sq = |z: &DVector<f64>| z[0] * z[0] + z[1] * z[1];
        let h = hessian_block(&sq, 0..1, 0..1, &at, &cfg).unwrap();
        assert_relative_eq!(h[(0, 0)], 2.0, epsilon = 1e-5);

        let prod = |z: &DVector<f64>| z[0] * z[1];
        let h = hessian_block(&prod, 0..1, 1..2, &at, &cfg).unwrap();
        assert_relative_eq!(h[(0, 0)], 1.0, epsilon = 1e-5);

        let lin = |z: &DVector<f64>| 3.0 * z[0] - 2.0 * z[1] + 1.0;
        let h = hessian_block(&lin, 0..2, 0..2, &at, &cfg).unwrap();
        assert!(h.amax() < 1e-6);
    }

    #[test]
    fn hessian_from_gradient_matches_nested() {
        let f = |z: &DVector<f64>| z[0].sin() * z[1] + z[1].powi(3);
        let g = |z: &DVector<f64>| v(&[z[0].cos() * z[1], z[0].sin() + 3.0 * z[1] * z[1]]);
        let at = v(&[0.4, 1.1]);
        let h1 = hessian_from_gradient(&g, &at, &FdConfig::second_order()).unwrap();
        let h2 = hessian_block(&f, 0..2, 0..2, &at, &FdConfig::second_order()).unwrap();
        assert!((&h1 - &h2).amax() < 1e-5);
        assert_eq!(h1, h1.transpose());
    }

    proptest! {
        #[test]
        fn diagonal_blocks_symmetric_and_cross_blocks_transpose(
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
        ) {
            let f = |z: &DVector<f64>| (z[0] * z[1]).sin() + z[2] * z[0] * z[0] + (z[1] - z[2]).exp();
            let at = v(&[a, b, c]);
            let cfg = FdConfig::second_order();
            let hd = hessian_block(&f, 0..3, 0..3, &at, &cfg).unwrap();
            prop_assert_eq!(&hd, &hd.transpose());
            let hab = hessian_block(&f, 0..1, 1..3, &at, &cfg).unwrap();
            let hba = hessian_block(&f, 1..3, 0..1, &at, &cfg).unwrap();
            prop_assert!((hab - hba.transpose()).amax() < 1e-6);
        }

        #[test]
        fn fd_matches_analytic_gradient(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let f = |z: &DVector<f64>| z[0].powi(2) * z[1] + (0.5 * z[1]).cos();
            let g = gradient(&f, &v(&[x, y]), &FdConfig::first_order()).unwrap();
            let exact = v(&[2.0 * x * y, x * x - 0.5 * (0.5 * y).sin()]);
            for k in 0..2 {
                prop_assert!((g[k] - exact[k]).abs() <= 1e-5 * exact[k].abs().max(1.0));
            }
        }
    }
}
