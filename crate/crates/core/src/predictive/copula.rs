//! Grid-based Gaussian-copula predictive recursion
//! `p_{t+1}(y) = [1 - α + α c_ρ(P_t(y), P_t(y_{t+1}))] p_t(y)` with
//! `α_t = a / (t + 1)`.

use serde::{Deserialize, Serialize};

use super::normal::normal_quantile;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform grid `lo, lo + step, ..., lo + (n - 1) step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Grid<T: Scalar> {
    pub lo: T,
    pub step: T,
    pub n: usize,
}

impl<T: Scalar> Grid<T> {
    pub fn new(lo: T, hi: T, step: T) -> Result<Self> {
        if !(step > T::zero()) || !(hi > lo) {
            return Err(Error::Parameter(
                "grid needs lo < hi and a positive step".into(),
            ));
        }
        let n = ((hi - lo) / step).round().to_usize().unwrap_or(0) + 1;
        if n < 2 {
            return Err(Error::Parameter("grid needs at least two points".into()));
        }
        Ok(Self { lo, step, n })
    }

    /// Default support: [-6, 6] with step 0.01.
    pub fn standard() -> Self {
        Self::new(T::of(-6.0), T::of(6.0), T::of(0.01)).expect("valid default grid")
    }

    #[inline]
    pub fn point(&self, i: usize) -> T {
        self.lo + self.step * T::of(i as f64)
    }

    pub fn hi(&self) -> T {
        self.point(self.n - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.n).map(move |i| self.point(i))
    }

    pub fn trapezoid(&self, values: &[T]) -> T {
        let inner: T = values[1..values.len() - 1].iter().copied().sum();
        self.step * (inner + (values[0] + values[values.len() - 1]) * T::of(0.5))
    }

    /// Cumulative trapezoid integral at each grid point.
    pub fn cumulative(&self, values: &[T]) -> Vec<T> {
        let half = self.step * T::of(0.5);
        let mut acc = T::zero();
        let mut out = Vec::with_capacity(values.len());
        out.push(acc);
        for w in values.windows(2) {
            acc = acc + half * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// Linear interpolation of grid values at `y` (must lie in the hull).
    pub fn interpolate(&self, values: &[T], y: T) -> T {
        let pos = (y - self.lo) / self.step;
        let i = pos.floor().to_usize().unwrap_or(0).min(self.n - 2);
        let frac = pos - T::of(i as f64);
        values[i] + (values[i + 1] - values[i]) * frac
    }
}

/// Density sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GridDensity<T: Scalar> {
    pub grid: Grid<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> GridDensity<T> {
    /// Tabulates `f` and rescales to unit trapezoid mass.
    pub fn from_fn(grid: Grid<T>, f: impl Fn(T) -> T) -> Result<Self> {
        let values: Vec<T> = grid.points().map(f).collect();
        Self::from_values(grid, values)
    }

    pub fn from_values(grid: Grid<T>, mut values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::Shape(format!(
                "{} values for {} grid points",
                values.len(),
                grid.n
            )));
        }
        if values.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Parameter(
                "density values must be finite and non-negative".into(),
            ));
        }
        let mass = grid.trapezoid(&values);
        if !(mass > T::zero()) {
            return Err(Error::Parameter("density has zero mass on the grid".into()));
        }
        for v in values.iter_mut() {
            *v = *v / mass;
        }
        Ok(Self { grid, values })
    }

    pub fn mass(&self) -> T {
        self.grid.trapezoid(&self.values)
    }

    pub fn cdf(&self) -> Vec<T> {
        self.grid.cumulative(&self.values)
    }

    /// Grid point with the largest density (lowest index on ties).
    pub fn mode(&self) -> T {
        self.grid.point(crate::scalar::argmax(&self.values))
    }
}

/// Squared Hellinger distance `1 - ∫ sqrt(p f)`, clamped to [0, 1].
pub fn hellinger<T: Scalar>(p: &GridDensity<T>, f: &GridDensity<T>) -> Result<T> {
    if p.grid != f.grid {
        return Err(Error::Shape("densities live on different grids".into()));
    }
    let root: Vec<T> = p
        .values
        .iter()
        .zip(&f.values)
        .map(|(&a, &b)| (a * b).sqrt())
        .collect();
    let bc = p.grid.trapezoid(&root);
    Ok((T::one() - bc).max(T::zero()).min(T::one()))
}

/// Bivariate Gaussian copula density.
pub fn gaussian_copula_density(rho: f64, u: f64, v: f64) -> f64 {
    let a = normal_quantile(u);
    let b = normal_quantile(v);
    let r2 = rho * rho;
    let num = r2 * (a * a + b * b) - 2.0 * rho * a * b;
    (-num / (2.0 * (1.0 - r2))).exp() / (1.0 - r2).sqrt()
}

/// Copula-updated predictive density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CopulaPredictor<T: Scalar> {
    pub rho: T,
    pub a: T,
    pub density: GridDensity<T>,
    cdf: Vec<T>,
    /// Number of updates applied.
    pub observed: usize,
}

impl<T: Scalar> CopulaPredictor<T> {
    /// `rho` must lie in (0, 1); `a` in [0, 2/5).
    pub fn new(rho: T, a: T, p0: GridDensity<T>) -> Result<Self> {
        if !(rho > T::zero() && rho < T::one()) {
            return Err(Error::Parameter(format!(
                "rho must lie in (0, 1), got {rho}"
            )));
        }
        if !(a >= T::zero() && a < T::of(0.4)) {
            return Err(Error::Parameter(format!("a must lie in [0, 2/5), got {a}")));
        }
        let cdf = p0.cdf();
        Ok(Self {
            rho,
            a,
            density: p0,
            cdf,
            observed: 0,
        })
    }

    pub fn cdf(&self) -> &[T] {
        &self.cdf
    }

    /// Learning rate used for the update that consumes observation `t + 1`
    /// (zero-based round `t`): `α_{t+1} = a / (t + 2)`.
    pub fn rate(&self, t: usize) -> T {
        self.a / T::of((t + 2) as f64)
    }

    /// Absorbs `y_obs` observed at zero-based round `t`.
    pub fn update(&self, y_obs: T, t: usize) -> Result<Self> {
        let grid = self.density.grid;
        if !(y_obs >= grid.lo && y_obs <= grid.hi()) {
            return Err(Error::Support {
                value: y_obs.as_f64(),
                lo: grid.lo.as_f64(),
                hi: grid.hi().as_f64(),
            });
        }
        let alpha = self.rate(t);
        let v = grid.interpolate(&self.cdf, y_obs).as_f64();
        let rho = self.rho.as_f64();
        let values: Vec<T> = self
            .density
            .values
            .iter()
            .zip(&self.cdf)
            .map(|(&p, &u)| {
                let c = T::of(gaussian_copula_density(rho, u.as_f64(), v));
                (T::one() - alpha + alpha * c) * p
            })
            .collect();
        let density = GridDensity::from_values(grid, values)?;
        let cdf = density.cdf();
        Ok(Self {
            rho: self.rho,
            a: self.a,
            density,
            cdf,
            observed: self.observed + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(mu: f64, sd: f64) -> impl Fn(f64) -> f64 {
        move |y| (-0.5 * ((y - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn standard_normal() -> GridDensity<f64> {
        GridDensity::from_fn(Grid::standard(), gauss(0.0, 1.0)).unwrap()
    }

    #[test]
    fn grid_shape() {
        let g = Grid::<f64>::standard();
        assert_eq!(g.n, 1201);
        assert!((g.hi() - 6.0).abs() < 1e-12);
        assert!(Grid::new(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let c = CopulaPredictor::new(0.5, 0.0, standard_normal()).unwrap();
        let next = c.update(0.7, 0).unwrap();
        for (a, b) in next.density.values.iter().zip(&c.density.values) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn vanishing_correlation_is_identity() {
        let c = CopulaPredictor::new(1e-12, 0.3, standard_normal()).unwrap();
        let next = c.update(-1.3, 4).unwrap();
        for (a, b) in next.density.values.iter().zip(&c.density.values) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn update_keeps_mass_and_mode() {
        let c = CopulaPredictor::new(0.5, 0.3, standard_normal()).unwrap();
        let next = c.update(0.0, 0).unwrap();
        assert!((next.density.mass() - 1.0).abs() < 1e-6);
        assert!(next.density.mode().abs() < 0.005 + 1e-12);
        // the observation pulls mass toward itself
        let shifted = c.update(1.0, 0).unwrap();
        assert!(shifted.density.mode() > 0.0);
    }

    #[test]
    fn parameter_and_support_errors() {
        assert!(CopulaPredictor::new(0.0, 0.3, standard_normal()).is_err());
        assert!(CopulaPredictor::new(0.5, 0.4, standard_normal()).is_err());
        let c = CopulaPredictor::new(0.5, 0.3, standard_normal()).unwrap();
        assert!(matches!(c.update(6.5, 0), Err(Error::Support { .. })));
    }

    #[test]
    fn hellinger_anchors() {
        let p = standard_normal();
        assert!(hellinger(&p, &p).unwrap().abs() < 1e-12);
        let g = Grid::standard();
        let left = GridDensity::from_fn(g, |y: f64| if y < -1.0 { 1.0 } else { 0.0 }).unwrap();
        let right = GridDensity::from_fn(g, |y: f64| if y > 1.0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(hellinger(&left, &right).unwrap(), 1.0);
        // closed form for two unit-variance Gaussians one apart: 1 - exp(-1/8)
        let q = GridDensity::from_fn(g, gauss(1.0, 1.0)).unwrap();
        let closed = 1.0 - (-1.0f64 / 8.0).exp();
        assert!((hellinger(&p, &q).unwrap() - closed).abs() < 1e-3);
        assert!((closed - 0.117503).abs() < 1e-6);
        let other =
            GridDensity::from_fn(Grid::new(-5.0, 5.0, 0.01).unwrap(), gauss(0.0, 1.0)).unwrap();
        assert!(matches!(hellinger(&p, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn copula_density_integrates_to_one_in_u() {
        // ∫ c(u, v) du = 1 for fixed v; midpoint rule in u
        let n = 20000;
        let s: f64 = (0..n)
            .map(|i| gaussian_copula_density(0.6, (i as f64 + 0.5) / n as f64, 0.3))
            .sum::<f64>()
            / n as f64;
        assert!((s - 1.0).abs() < 1e-3);
    }
}
