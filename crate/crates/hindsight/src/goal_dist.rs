//! Goal-distribution scoring.
//!
//! The instructiveness machinery rates a candidate virtual goal by the
//! kernel-regression score of the task's goal density around it:
//! `score(g) = integral of k(g, x) * g(x) dx` with an isotropic Gaussian
//! kernel `k(g, x) = exp(-||g - x||^2 / (2 sigma^2))` (raw kernel, maximum 1).
//! For uniform-rectangle densities the integral factorizes into per-axis error
//! functions; for Gaussian mixtures it is the mixture convolved with the
//! kernel; for anything evaluable there is a Monte-Carlo estimator with a
//! uniform or importance-sampling proposal. Scores over a grid of cell centers
//! normalize into the target distribution used for prioritization, compared
//! against proposals via KL divergence.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in goal space (any dimension).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Rect> {
        let rect = Rect { lo, hi };
        rect.validate()?;
        Ok(rect)
    }

    /// 2D convenience used by the screen-based environments.
    pub fn xy(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Rect> {
        Rect::new(vec![x_min, y_min], vec![x_max, y_max])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::Config(format!(
                "rectangle bounds must be non-empty and of equal dimension, got {} and {}",
                self.lo.len(),
                self.hi.len()
            )));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(h > l)) {
            return Err(Error::Config(format!(
                "rectangle must have positive extent on every axis: lo {:?}, hi {:?}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// One Gaussian-mixture component with full covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Gaussian mixture; weights sum to 1 and covariances are symmetric positive
/// definite (checked by [`Gmm::validate`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub components: Vec<GmmComponent>,
}

impl Gmm {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let dim = self.components[0].mean.len();
        if dim == 0 {
            return Err(Error::Config("mixture components need a non-empty mean".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights must sum to 1, got {total}")));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(Error::Config(format!("component {i} weight {} outside [0, 1]", c.weight)));
            }
            if c.mean.len() != dim {
                return Err(Error::Config(format!("component {i} mean dimension differs")));
            }
            if c.cov.len() != dim || c.cov.iter().any(|row| row.len() != dim) {
                return Err(Error::Config(format!("component {i} covariance must be {dim}x{dim}")));
            }
            for r in 0..dim {
                for s in 0..r {
                    if (c.cov[r][s] - c.cov[s][r]).abs() > 1e-9 {
                        return Err(Error::Config(format!("component {i} covariance not symmetric")));
                    }
                }
            }
            if cholesky(&c.cov).is_none() {
                return Err(Error::Config(format!("component {i} covariance not positive definite")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Mixture probability density at `x`.
    pub fn density(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * gaussian_pdf(x, &c.mean, &c.cov))
            .sum()
    }
}

/// Declarative goal density `g(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalDistributionSpec {
    /// Constant density `1 / volume` inside the rectangle, 0 outside.
    UniformRect(Rect),
    /// Gaussian mixture density.
    Gmm(Gmm),
    /// Empirical sample set; scored by the mean kernel value over the points.
    Samples(Vec<Vec<f64>>),
}

impl GoalDistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GoalDistributionSpec::UniformRect(rect) => rect.validate(),
            GoalDistributionSpec::Gmm(gmm) => gmm.validate(),
            GoalDistributionSpec::Samples(points) => {
                if points.is_empty() {
                    return Err(Error::Config("sample-set spec needs at least one point".into()));
                }
                let dim = points[0].len();
                if dim == 0 || points.iter().any(|p| p.len() != dim) {
                    return Err(Error::Config("sample points must share one non-zero dimension".into()));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GoalDistributionSpec::UniformRect(rect) => rect.dim(),
            GoalDistributionSpec::Gmm(gmm) => gmm.dim(),
            GoalDistributionSpec::Samples(points) => points[0].len(),
        }
    }
}

/// Isotropic Gaussian kernel, `exp(-||g1 - g2||^2 / (2 sigma^2))`, in (0, 1].
pub fn kernel(g1: &[f64], g2: &[f64], sigma: f64) -> f64 {
    assert!(sigma > 0.0, "kernel sigma must be positive, got {sigma}");
    assert_eq!(g1.len(), g2.len(), "kernel arguments must share a dimension");
    let sq: f64 = g1.iter().zip(g2).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq / (2.0 * sigma * sigma)).exp()
}

/// Closed-form kernel score of a uniform-rectangle density.
///
/// The Gaussian kernel factorizes over axes, so the integral over an
/// axis-aligned rectangle is a product of per-axis error-function terms,
/// scaled by the density `1 / volume`.
pub fn score_uniform(g: &[f64], rect: &Rect, sigma: f64) -> f64 {
    assert!(sigma > 0.0, "score sigma must be positive, got {sigma}");
    assert_eq!(g.len(), rect.dim(), "goal/rectangle dimension mismatch");
    let sqrt2 = std::f64::consts::SQRT_2;
    let half_pi_factor = sigma * (std::f64::consts::PI / 2.0).sqrt();
    let mut integral = 1.0;
    for (j, &x) in g.iter().enumerate() {
        let a = (rect.hi[j] - x) / (sigma * sqrt2);
        let b = (rect.lo[j] - x) / (sigma * sqrt2);
        integral *= half_pi_factor * (libm::erf(a) - libm::erf(b));
    }
    integral / rect.volume()
}

/// Closed-form kernel score of a Gaussian-mixture density:
/// `(2 pi)^(n/2) sigma^n * sum_i p_i * N(mean_i | g, cov_i + sigma^2 I)`,
/// i.e. the mixture convolved with the kernel. Requires a validated mixture.
pub fn score_gmm(g: &[f64], gmm: &Gmm, sigma: f64) -> f64 {
    assert!(sigma > 0.0, "score sigma must be positive, got {sigma}");
    let n = gmm.dim();
    assert_eq!(g.len(), n, "goal/mixture dimension mismatch");
    let kernel_mass = (2.0 * std::f64::consts::PI).powf(n as f64 / 2.0) * sigma.powi(n as i32);
    let mut acc = 0.0;
    for c in &gmm.components {
        let mut cov = c.cov.clone();
        for (j, row) in cov.iter_mut().enumerate() {
            row[j] += sigma * sigma;
        }
        acc += c.weight * gaussian_pdf(g, &c.mean, &cov);
    }
    kernel_mass * acc
}

/// Score of a validated [`GoalDistributionSpec`]; sample sets use the mean
/// kernel value over the points.
pub fn score_spec(g: &[f64], spec: &GoalDistributionSpec, sigma: f64) -> f64 {
    match spec {
        GoalDistributionSpec::UniformRect(rect) => score_uniform(g, rect, sigma),
        GoalDistributionSpec::Gmm(gmm) => score_gmm(g, gmm, sigma),
        GoalDistributionSpec::Samples(points) => {
            points.iter().map(|p| kernel(g, p, sigma)).sum::<f64>() / points.len() as f64
        }
    }
}

/// Sampling scheme for [`score_monte_carlo`].
pub enum Proposal<'a> {
    /// Uniform draws over a rectangle; estimate `V / N * sum k * density`.
    UniformRect(&'a Rect),
    /// Importance sampling from `N(g, sigma^2 I)`; the kernel concentrates
    /// there, which cuts the estimator's variance on concentrated densities.
    Gaussian,
}

/// Monte-Carlo kernel-score estimate for an arbitrary evaluable density.
/// Unbiased for both proposals.
pub fn score_monte_carlo<R: Rng>(
    g: &[f64],
    density: &dyn Fn(&[f64]) -> f64,
    sigma: f64,
    n_samples: usize,
    proposal: Proposal,
    rng: &mut R,
) -> f64 {
    assert!(n_samples >= 1, "need at least one sample");
    assert!(sigma > 0.0, "score sigma must be positive, got {sigma}");
    let dim = g.len();
    let mut acc = 0.0;
    match proposal {
        Proposal::UniformRect(rect) => {
            assert_eq!(rect.dim(), dim, "proposal rectangle dimension mismatch");
            let volume = rect.volume();
            let mut x = vec![0.0; dim];
            for _ in 0..n_samples {
                for (j, v) in x.iter_mut().enumerate() {
                    *v = rng.gen_range(rect.lo[j]..rect.hi[j]);
                }
                acc += kernel(g, &x, sigma) * density(&x);
            }
            volume * acc / n_samples as f64
        }
        Proposal::Gaussian => {
            let log_norm = -(dim as f64 / 2.0) * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
            let mut x = vec![0.0; dim];
            for _ in 0..n_samples {
                let mut sq = 0.0;
                for (j, v) in x.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = g[j] + sigma * z;
                    sq += (*v - g[j]) * (*v - g[j]);
                }
                let h = (log_norm - sq / (2.0 * sigma * sigma)).exp();
                acc += kernel(g, &x, sigma) * density(&x) / h;
            }
            acc / n_samples as f64
        }
    }
}

/// Discretization of a 2D goal space into `m x n` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub m: usize,
    pub n: usize,
    pub bounds: Rect,
}

impl GridSpec {
    pub fn new(m: usize, n: usize, bounds: Rect) -> Result<GridSpec> {
        if m == 0 || n == 0 {
            return Err(Error::Config(format!("grid must have positive dimensions, got {m}x{n}")));
        }
        bounds.validate()?;
        if bounds.dim() != 2 {
            return Err(Error::Config(format!(
                "grids discretize a 2D goal space, got {} dimensions",
                bounds.dim()
            )));
        }
        Ok(GridSpec { m, n, bounds })
    }

    pub fn cells(&self) -> usize {
        self.m * self.n
    }

    /// Flat index of cell `(i, j)`; `i` runs along the x axis, `j` along y.
    pub fn index(&self, i: usize, j: usize) -> usize {
        assert!(i < self.m && j < self.n, "cell ({i}, {j}) outside {}x{} grid", self.m, self.n);
        i * self.n + j
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        assert!(i < self.m && j < self.n, "cell ({i}, {j}) outside {}x{} grid", self.m, self.n);
        let dx = (self.bounds.hi[0] - self.bounds.lo[0]) / self.m as f64;
        let dy = (self.bounds.hi[1] - self.bounds.lo[1]) / self.n as f64;
        [self.bounds.lo[0] + (i as f64 + 0.5) * dx, self.bounds.lo[1] + (j as f64 + 0.5) * dy]
    }

    /// Cell containing `g`; out-of-bounds goals clamp to the nearest edge cell
    /// (thrown balls can land outside the discretized region).
    pub fn bin(&self, g: &[f64]) -> (usize, usize) {
        assert_eq!(g.len(), 2, "grid bins are for 2D goals");
        let dx = (self.bounds.hi[0] - self.bounds.lo[0]) / self.m as f64;
        let dy = (self.bounds.hi[1] - self.bounds.lo[1]) / self.n as f64;
        let i = ((g[0] - self.bounds.lo[0]) / dx).floor();
        let j = ((g[1] - self.bounds.lo[1]) / dy).floor();
        let i = (i.max(0.0) as usize).min(self.m - 1);
        let j = (j.max(0.0) as usize).min(self.n - 1);
        (i, j)
    }
}

/// Nonnegative values over a grid's cells, row-major with `n` values per row
/// (`values[i * n + j]`). Normalized variants sum to 1; the all-zero grid
/// represents an empty proposal (nothing stored yet).
#[derive(Clone, Debug, PartialEq)]
pub struct GridDistribution {
    pub m: usize,
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridDistribution {
    pub fn zeros(m: usize, n: usize) -> GridDistribution {
        GridDistribution { m, n, values: vec![0.0; m * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.m && j < self.n, "cell ({i}, {j}) outside {}x{} grid", self.m, self.n);
        self.values[i * self.n + j]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Check nonnegativity and sum-to-1 (within 1e-9).
    pub fn validate_normalized(&self) -> Result<()> {
        if self.values.len() != self.m * self.n {
            return Err(Error::Shape(format!(
                "grid holds {} values for {}x{} cells",
                self.values.len(),
                self.m,
                self.n
            )));
        }
        if self.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Numeric("grid distribution has negative or non-finite cells".into()));
        }
        if (self.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("grid distribution sums to {}, not 1", self.sum())));
        }
        Ok(())
    }
}

/// Build the normalized target distribution over a grid.
///
/// Scores the density at each cell center, normalizes, then raises every cell
/// below `floor` up to `floor` while rescaling the rest, iterating until the
/// result both sums to 1 and has no cell below the floor. Requires
/// `floor * m * n < 1`.
pub fn build_target_grid(
    spec: &GoalDistributionSpec,
    sigma: f64,
    grid: &GridSpec,
    floor: f64,
) -> Result<GridDistribution> {
    spec.validate()?;
    if sigma <= 0.0 {
        return Err(Error::Config(format!("target-grid sigma must be positive, got {sigma}")));
    }
    if floor < 0.0 || floor * grid.cells() as f64 >= 1.0 {
        return Err(Error::Config(format!(
            "floor {floor} infeasible for {} cells (needs floor * cells < 1)",
            grid.cells()
        )));
    }
    if spec.dim() != 2 {
        return Err(Error::Config(format!(
            "target grids require a 2D goal density, got {} dimensions",
            spec.dim()
        )));
    }
    let mut scores = vec![0.0; grid.cells()];
    for i in 0..grid.m {
        for j in 0..grid.n {
            let c = grid.cell_center(i, j);
            scores[grid.index(i, j)] = score_spec(&c, spec, sigma);
        }
    }
    let total: f64 = scores.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Config(
            "goal density scores to zero everywhere on the grid; check the spec and bounds".into(),
        ));
    }
    for s in scores.iter_mut() {
        *s /= total;
    }

    // Water-filling: cells pinned at the floor keep exactly `floor`; the rest
    // share the remaining mass proportionally to their raw scores. Rescaling
    // can push more cells under the floor, so iterate to a fixed point.
    let mut pinned = vec![false; scores.len()];
    loop {
        let pinned_count = pinned.iter().filter(|&&p| p).count();
        let remaining = 1.0 - floor * pinned_count as f64;
        let free_mass: f64 =
            scores.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(s, _)| *s).sum();
        if free_mass <= 0.0 {
            return Err(Error::Config("floor leaves no mass for unpinned cells".into()));
        }
        let scale = remaining / free_mass;
        let mut changed = false;
        for (s, p) in scores.iter().zip(pinned.iter_mut()) {
            if !*p && s * scale < floor {
                *p = true;
                changed = true;
            }
        }
        if !changed {
            let values: Vec<f64> = scores
                .iter()
                .zip(&pinned)
                .map(|(s, &p)| if p { floor } else { s * scale })
                .collect();
            return Ok(GridDistribution { m: grid.m, n: grid.n, values });
        }
    }
}

/// Discrete KL divergence `KL(P || Q)` in nats over matching grids.
///
/// Cells with `p = 0` contribute nothing; `q` is floored at 1e-12 to avoid
/// division by zero. Clamped at zero against floating-point round-off.
pub fn kl_divergence(p: &GridDistribution, q: &GridDistribution) -> Result<f64> {
    if p.m != q.m || p.n != q.n {
        return Err(Error::Shape(format!(
            "KL needs matching grids, got {}x{} vs {}x{}",
            p.m, p.n, q.m, q.n
        )));
    }
    let mut kl = 0.0;
    for (&pv, &qv) in p.values.iter().zip(&q.values) {
        if pv > 0.0 {
            kl += pv * (pv / qv.max(1e-12)).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Cholesky factor (lower triangular) of a symmetric positive-definite
/// matrix; `None` when the matrix is not positive definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// Multivariate Gaussian density `N(x | mean, cov)`. Panics on a
/// non-positive-definite covariance; validate specs before scoring.
fn gaussian_pdf(x: &[f64], mean: &[f64], cov: &[Vec<f64>]) -> f64 {
    let n = x.len();
    assert_eq!(mean.len(), n, "gaussian mean dimension mismatch");
    let l = cholesky(cov).expect("covariance must be positive definite");
    // Solve L y = (x - mean) by forward substitution; then the quadratic form
    // is ||y||^2 and log|cov| = 2 * sum(log L_ii).
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = x[i] - mean[i];
        for k in 0..i {
            v -= l[i][k] * y[k];
        }
        y[i] = v / l[i][i];
    }
    let quad: f64 = y.iter().map(|v| v * v).sum();
    let log_det: f64 = 2.0 * l.iter().enumerate().map(|(i, row)| row[i].ln()).sum::<f64>();
    let log_pdf =
        -0.5 * (quad + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln());
    log_pdf.exp()
}
