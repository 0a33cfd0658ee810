use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

/// Discretized `d`-dimensional Brownian trajectory on a uniform grid.
///
/// Fully determined by `(seed, index)` and the grid: increments are drawn
/// step-major from stream `index` of `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dim: usize,
    dt: f64,
    num_steps: usize,
    seed: u64,
    index: u64,
    /// `num_steps x dim`, row-major.
    increments: Vec<f64>,
    /// `(num_steps + 1) x dim`, row-major, starting at zero.
    levels: Vec<f64>,
}

/// Number of steps of size `dt` covering `[0, horizon]`.
pub fn grid_steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::Config(format!("horizon must be nonnegative, got {horizon}")));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
        return Err(Error::Config(format!(
            "time step {dt} does not divide the horizon {horizon}"
        )));
    }
    Ok(n as usize)
}

pub fn simulate_brownian(
    dim: usize,
    horizon: f64,
    dt: f64,
    master_seed: u64,
    path_index: u64,
) -> Result<BrownianPath> {
    if dim == 0 {
        return Err(Error::Config("Brownian dimension must be at least 1".into()));
    }
    let num_steps = grid_steps(horizon, dt)?;
    let mut rng = stream_rng(master_seed, path_index);
    let scale = dt.sqrt();
    let increments = (0..num_steps * dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(BrownianPath::assemble(dim, dt, master_seed, path_index, increments))
}

impl BrownianPath {
    fn assemble(dim: usize, dt: f64, seed: u64, index: u64, increments: Vec<f64>) -> Self {
        let num_steps = increments.len() / dim;
        let mut levels = vec![0.0; (num_steps + 1) * dim];
        for i in 0..num_steps {
            for j in 0..dim {
                levels[(i + 1) * dim + j] = levels[i * dim + j] + increments[i * dim + j];
            }
        }
        Self {
            dim,
            dt,
            num_steps,
            seed,
            index,
            increments,
            levels,
        }
    }

    /// Path with explicitly given increments (`num_steps x dim`, row-major).
    pub fn from_increments(dim: usize, dt: f64, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 || increments.len() % dim != 0 {
            return Err(Error::Config(format!(
                "{} increments cannot be split into rows of {dim}",
                increments.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        Ok(Self::assemble(dim, dt, 0, 0, increments))
    }

    /// Keeps the increments up to grid index `step` and draws the remainder
    /// from an independent stream labelled `branch`.
    ///
    /// Used for nested simulation: all continuations of one outer path share
    /// its history and differ afterwards.
    pub fn branch(&self, step: usize, branch: u64) -> Result<Self> {
        if step > self.num_steps {
            return Err(Error::Config(format!(
                "branch point {step} beyond the last grid index {}",
                self.num_steps
            )));
        }
        let seed = derive_seed(self.seed, &[self.index, step as u64]);
        let mut rng = stream_rng(seed, branch);
        let scale = self.dt.sqrt();
        let mut increments = self.increments[..step * self.dim].to_vec();
        increments.extend(
            (0..(self.num_steps - step) * self.dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
        );
        Ok(Self::assemble(self.dim, self.dt, self.seed, self.index, increments))
    }

    /// Mirror image of this path after grid index `step`: identical history,
    /// negated increments afterwards. Pairs `(branch, reflection)` are
    /// antithetic continuations with the same law.
    pub fn reflect_after(&self, step: usize) -> Result<Self> {
        if step > self.num_steps {
            return Err(Error::Config(format!(
                "reflection point {step} beyond the last grid index {}",
                self.num_steps
            )));
        }
        let mut increments = self.increments.clone();
        for v in &mut increments[step * self.dim..] {
            *v = -*v;
        }
        Ok(Self::assemble(self.dim, self.dt, self.seed, self.index, increments))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn horizon(&self) -> f64 {
        self.num_steps as f64 * self.dt
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// `W_{t_{i+1}} - W_{t_i}`.
    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.dim..(i + 1) * self.dim]
    }

    /// `W_{t_i}`.
    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Grid index of time `t`, which must lie on the grid.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let s = (t / self.dt).round();
        if !(t >= 0.0) || (s * self.dt - t).abs() > 1e-9 * self.dt.max(t) || s as usize > self.num_steps {
            return Err(Error::Config(format!(
                "time {t} is not a grid time of [0, {}] with step {}",
                self.horizon(),
                self.dt
            )));
        }
        Ok(s as usize)
    }
}

/// Splits one Brownian increment into `parts` sub-increments drawn from the
/// Brownian bridge pinned to it: the parts sum to `increment` and have the
/// conditional law of the finer-grid increments.
pub(crate) fn bridge_split<R: Rng>(increment: &[f64], dt: f64, parts: usize, rng: &mut R, out: &mut Vec<f64>) {
    let d = increment.len();
    out.clear();
    if parts == 1 {
        out.extend_from_slice(increment);
        return;
    }
    let scale = (dt / parts as f64).sqrt();
    out.extend((0..parts * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)));
    for j in 0..d {
        let total: f64 = (0..parts).map(|p| out[p * d + j]).sum();
        let shift = (total - increment[j]) / parts as f64;
        for p in 0..parts {
            out[p * d + j] -= shift;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn reference_path_shape_and_determinism() {
        let a = simulate_brownian(2, 1.0, 0.01, 7, 0).unwrap();
        let b = simulate_brownian(2, 1.0, 0.01, 7, 0).unwrap();
        assert_eq!(a.num_steps(), 100);
        assert_eq!(a.increments().len(), 200);
        let bits = |p: &BrownianPath| p.increments().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = simulate_brownian(2, 1.0, 0.01, 7, 1).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn zero_horizon_gives_empty_path() {
        let p = simulate_brownian(1, 0.0, 0.37, 3, 0).unwrap();
        assert_eq!(p.num_steps(), 0);
        assert!(p.increments().is_empty());
        assert_eq!(p.level(0), &[0.0]);
    }

    #[test]
    fn non_dividing_step_is_rejected() {
        assert!(matches!(simulate_brownian(1, 1.0, 0.3, 1, 0), Err(Error::Config(_))));
        assert!(simulate_brownian(1, 1.0, 0.1, 1, 0).is_ok());
        assert!(simulate_brownian(0, 1.0, 0.1, 1, 0).is_err());
        assert!(simulate_brownian(1, 1.0, 0.0, 1, 0).is_err());
    }

    #[test]
    fn levels_accumulate_increments() {
        let p = simulate_brownian(3, 0.5, 0.01, 11, 4).unwrap();
        for j in 0..3 {
            let s: f64 = (0..p.num_steps()).map(|i| p.increment(i)[j]).sum();
            assert!((p.level(p.num_steps())[j] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn branch_keeps_history_and_changes_future() {
        let p = simulate_brownian(2, 1.0, 0.01, 5, 9).unwrap();
        let b0 = p.branch(50, 0).unwrap();
        let b1 = p.branch(50, 1).unwrap();
        assert_eq!(&p.increments()[..100], &b0.increments()[..100]);
        assert_eq!(&p.increments()[..100], &b1.increments()[..100]);
        assert_ne!(&b0.increments()[100..], &b1.increments()[100..]);
        assert_eq!(b0, p.branch(50, 0).unwrap());
    }

    #[test]
    fn reflection_mirrors_only_the_future() {
        let p = simulate_brownian(2, 1.0, 0.01, 5, 9).unwrap();
        let r = p.reflect_after(30).unwrap();
        assert_eq!(&p.increments()[..60], &r.increments()[..60]);
        for (a, b) in p.increments()[60..].iter().zip(&r.increments()[60..]) {
            assert_eq!(*a, -*b);
        }
        assert_eq!(r.level(30), p.level(30));
        assert!(p.reflect_after(101).is_err());
    }

    #[test]
    fn bridge_parts_sum_to_increment() {
        let mut rng = stream_rng(1, 2);
        let mut out = Vec::new();
        bridge_split(&[0.3, -0.1], 0.01, 5, &mut rng, &mut out);
        assert_eq!(out.len(), 10);
        for j in 0..2 {
            let s: f64 = (0..5).map(|p| out[p * 2 + j]).sum();
            assert!((s - [0.3, -0.1][j]).abs() < 1e-15);
        }
    }

    #[test]
    fn bridge_parts_have_conditional_variance() {
        // Var of one part given the sum is (dt/n)(1 - 1/n).
        let (dt, n) = (0.01, 4);
        let mut rng = stream_rng(3, 0);
        let mut out = Vec::new();
        let trials = 40_000;
        let mut ss = 0.0;
        for _ in 0..trials {
            bridge_split(&[0.0], dt, n, &mut rng, &mut out);
            ss += out[0] * out[0];
        }
        let var = ss / trials as f64;
        let expected = dt / n as f64 * (1.0 - 1.0 / n as f64);
        assert!((var / expected - 1.0).abs() < 0.03, "{var} vs {expected}");
    }
}
