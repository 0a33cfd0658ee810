use crate::error::{Error, Result};

/// Uniform grid in `z = log x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    z_min: f64,
    z_max: f64,
    m: usize,
    dz: f64,
    eta: f64,
}

/// Default half-width of the grid around `log X0`, in log-units.
pub const DEFAULT_HALF_WIDTH: f64 = 6.0;
pub const DEFAULT_NODES: usize = 512;
pub const DEFAULT_ETA: f64 = 1.5;
pub const MIN_NODES: usize = 64;

impl LogGrid {
    pub fn new(z_min: f64, z_max: f64, m: usize, eta: f64) -> Result<Self> {
        if !(z_min < z_max) || !z_min.is_finite() || !z_max.is_finite() {
            return Err(Error::Config(format!("grid bounds must satisfy z_min < z_max, got [{z_min}, {z_max}]")));
        }
        if m < MIN_NODES {
            return Err(Error::Config(format!("grid needs at least {MIN_NODES} nodes, got {m}")));
        }
        if !(eta > 1.0) || !eta.is_finite() {
            return Err(Error::Domain {
                name: "eta",
                value: eta,
                constraint: "eta > 1".into(),
            });
        }
        Ok(Self {
            z_min,
            z_max,
            m,
            dz: (z_max - z_min) / (m - 1) as f64,
            eta,
        })
    }

    /// `[log x0 - 6, log x0 + 6]` with 512 nodes and `eta = 1.5`.
    pub fn around(x0: f64) -> Result<Self> {
        crate::error::ensure_positive("X0", x0)?;
        let c = x0.ln();
        Self::new(c - DEFAULT_HALF_WIDTH, c + DEFAULT_HALF_WIDTH, DEFAULT_NODES, DEFAULT_ETA)
    }

    /// Same bounds with `m` nodes.
    pub fn with_nodes(&self, m: usize) -> Result<Self> {
        Self::new(self.z_min, self.z_max, m, self.eta)
    }

    /// Errors unless `log x` lies strictly inside the grid.
    pub fn check_interior(&self, x: f64) -> Result<f64> {
        let z = x.ln();
        if x > 0.0 && z > self.z_min && z < self.z_max {
            Ok(z)
        } else {
            Err(Error::Config(format!(
                "point x = {x} lies outside the grid (log x must be in ({}, {}))",
                self.z_min, self.z_max
            )))
        }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn z(&self, i: usize) -> f64 {
        if i + 1 == self.m {
            self.z_max
        } else {
            self.z_min + i as f64 * self.dz
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.z(i)).collect()
    }

    /// Cell `j` with `z_j <= z <= z_{j+1}` and the offset `z - z_j`.
    pub(crate) fn locate(&self, z: f64) -> (usize, f64) {
        let j = (((z - self.z_min) / self.dz).floor().max(0.0) as usize).min(self.m - 2);
        (j, z - self.z(j))
    }

    /// Linear interpolation of nodal values at `z` (inside the grid).
    pub fn interpolate(&self, values: &[f64], z: f64) -> f64 {
        let (j, h) = self.locate(z);
        let w = h / self.dz;
        values[j] * (1.0 - w) + values[j + 1] * w
    }

    /// Weight `r(z) = exp(eta sqrt(1 + z^2))`.
    pub fn weight(&self, z: f64) -> f64 {
        (self.eta * (1.0 + z * z).sqrt()).exp()
    }

    /// Discrete weighted Sobolev norm `(sum_{j<=order} int r^2 |f^{(j)}|^2 dz)^{1/2}`
    /// with derivatives by finite differences. Diagnostic only.
    pub fn weighted_norm(&self, values: &[f64], order: usize) -> f64 {
        let mut total = 0.0;
        let mut f = values.to_vec();
        for j in 0..=order {
            if j > 0 {
                f = crate::strategy::differentiate_nodal(&f, 1, self.dz);
            }
            total += trapezoid(
                &f.iter()
                    .enumerate()
                    .map(|(i, v)| (self.weight(self.z(i)) * v).powi(2))
                    .collect::<Vec<_>>(),
                self.dz,
            );
        }
        total.sqrt()
    }
}

pub(crate) fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

/// Running trapezoid integral from the left end: `out[i] = int_{z_0}^{z_i} g`.
pub(crate) fn cumulative(g: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in g.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// `int_{z_0}^{z} g` for the piecewise-linear interpolant of `g`, given its
/// running integral `cum` at the nodes.
pub(crate) fn cumulative_at(grid: &LogGrid, g: &[f64], cum: &[f64], z: f64) -> f64 {
    let (j, h) = grid.locate(z);
    let gz = grid.interpolate(g, z);
    cum[j] + 0.5 * h * (g[j] + gz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_layout() {
        let g = LogGrid::around(1.0).unwrap();
        assert_eq!(g.len(), 512);
        assert!((g.dz() - 12.0 / 511.0).abs() < 1e-15);
        assert_eq!(g.z(0), -6.0);
        assert_eq!(g.z(511), 6.0);
        assert!(g.check_interior(1.0).is_ok());
        assert!(g.check_interior(1e3).is_err());
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(LogGrid::new(1.0, -1.0, 128, 1.5).is_err());
        assert!(LogGrid::new(-1.0, 1.0, 63, 1.5).is_err());
        assert!(LogGrid::new(-1.0, 1.0, 64, 1.0).is_err());
    }

    #[test]
    fn running_integral_of_linear_function_is_exact() {
        let g = LogGrid::new(0.0, 1.0, 101, 1.5).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|z| 2.0 * z + 1.0).collect();
        let cum = cumulative(&f, g.dz());
        for z in [0.0, 0.123, 0.5, 0.9999, 1.0] {
            let exact = z * z + z;
            assert!((cumulative_at(&g, &f, &cum, z) - exact).abs() < 1e-13);
        }
        assert!((trapezoid(&f, g.dz()) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn weighted_norm_of_gaussian_bump() {
        let g = LogGrid::new(-8.0, 8.0, 2001, 1.5).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|z| (-z * z).exp()).collect();
        // order 0: int exp(2 eta sqrt(1+z^2) - 2 z^2) dz, by a fine Riemann sum
        let h = 1e-4;
        let exact: f64 = (0..160_000)
            .map(|i| -8.0 + (i as f64 + 0.5) * h)
            .map(|z| (3.0 * (1.0 + z * z).sqrt() - 2.0 * z * z).exp() * h)
            .sum();
        assert!((g.weighted_norm(&f, 0) / exact.sqrt() - 1.0).abs() < 1e-5);
        assert!(g.weighted_norm(&f, 1) > g.weighted_norm(&f, 0));
    }
}
