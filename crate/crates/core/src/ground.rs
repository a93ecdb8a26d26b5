//! Ground height estimation with a uniform bicubic B-spline.
//!
//! The control grid is fitted by regularised least squares over a set of
//! seed points. The first pass seeds with the lowest points of each coarse
//! cell; later passes re-seed with every point close to the previous
//! surface. Outside the fitted domain the surface is extended flat by
//! clamping the query coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PointCloud;

/// Minimum number of seed points for a fit.
pub const MIN_SEED_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundFitConfig {
    /// Meters per control interval.
    pub knot_spacing: f64,
    /// Weight of the second-difference penalty on the control grid.
    pub tikhonov_lambda: f64,
    /// Maximum |z - S(x, y)| for a point to count as ground.
    pub classify_threshold: f64,
    /// Total number of fitting passes.
    pub refit_iterations: usize,
    /// Fraction of lowest points per coarse cell used to seed the first pass.
    pub initial_percentile: f64,
}

impl Default for GroundFitConfig {
    fn default() -> Self {
        Self {
            knot_spacing: 5.0,
            tikhonov_lambda: 1e-2,
            classify_threshold: 0.3,
            refit_iterations: 2,
            initial_percentile: 0.2,
        }
    }
}

impl GroundFitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.knot_spacing)
            || !positive(self.tikhonov_lambda)
            || !positive(self.classify_threshold)
            || !positive(self.initial_percentile)
            || self.initial_percentile > 1.0
        {
            return Err(Error::InvalidParameter(format!("invalid ground fit config {self:?}")));
        }
        if self.refit_iterations < 1 {
            return Err(Error::InvalidParameter("refit_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Uniform cubic B-spline basis weights for local parameter `t` in `[0, 1]`.
#[inline]
pub fn cubic_basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let s = 1.0 - t;
    [
        s * s * s / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Fitted ground height field.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundSurface {
    nu: usize,
    nv: usize,
    knot_spacing: f64,
    origin: [f64; 2],
    /// Control heights, row-major (`v * nu + u`).
    control: Vec<f64>,
}

impl GroundSurface {
    /// Builds a surface from explicit control heights. The evaluation domain
    /// starts at `origin` and spans `(nu - 3, nv - 3)` knot intervals.
    pub fn from_control(nu: usize, nv: usize, knot_spacing: f64, origin: [f64; 2], control: Vec<f64>) -> Result<Self> {
        if nu < 4 || nv < 4 {
            return Err(Error::InvalidParameter(format!(
                "control grid must be at least 4x4, got {nu}x{nv}"
            )));
        }
        if !(knot_spacing.is_finite() && knot_spacing > 0.0) {
            return Err(Error::InvalidParameter("knot spacing must be positive".into()));
        }
        if control.len() != nu * nv {
            return Err(Error::DimensionMismatch(format!(
                "{} control heights for a {nu}x{nv} grid",
                control.len()
            )));
        }
        Ok(Self {
            nu,
            nv,
            knot_spacing,
            origin,
            control,
        })
    }

    /// A flat surface at height `z` covering `[min, max]`.
    pub fn flat(z: f64, min: [f64; 2], max: [f64; 2], knot_spacing: f64) -> Result<Self> {
        let layout = Layout::covering(min, max, knot_spacing);
        Self::from_control(
            layout.nu,
            layout.nv,
            knot_spacing,
            layout.origin,
            vec![z; layout.nu * layout.nv],
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nu, self.nv)
    }
    pub fn knot_spacing(&self) -> f64 {
        self.knot_spacing
    }
    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }
    pub fn control_points(&self) -> &[f64] {
        &self.control
    }

    /// `[min_x, min_y, max_x, max_y]` of the evaluation domain.
    pub fn domain(&self) -> [f64; 4] {
        [
            self.origin[0],
            self.origin[1],
            self.origin[0] + (self.nu - 3) as f64 * self.knot_spacing,
            self.origin[1] + (self.nv - 3) as f64 * self.knot_spacing,
        ]
    }

    fn layout(&self) -> Layout {
        Layout {
            nu: self.nu,
            nv: self.nv,
            h: self.knot_spacing,
            origin: self.origin,
        }
    }

    /// The 16 control indices and basis weights active at `(x, y)`.
    pub fn support(&self, x: f64, y: f64) -> ([usize; 16], [f64; 16]) {
        self.layout().support(x, y)
    }

    /// Surface height at `(x, y)`, clamped flat outside the domain.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (idx, w) = self.support(x, y);
        idx.iter().zip(w.iter()).map(|(&k, &wk)| self.control[k] * wk).sum()
    }

    /// Heights at every `(xs[i], ys[j])`, row-major with `ys` as rows.
    /// Identical to calling [`GroundSurface::eval`] per point, but reuses the
    /// per-axis basis weights.
    pub fn eval_lattice(&self, xs: &[f64], ys: &[f64]) -> Vec<f64> {
        let layout = self.layout();
        let cols: Vec<(usize, [f64; 4])> = xs
            .iter()
            .map(|&x| {
                let (iu, tu) = layout.span(x, self.origin[0], self.nu - 3);
                (iu, cubic_basis(tu))
            })
            .collect();
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &y in ys {
            let (iv, tv) = layout.span(y, self.origin[1], self.nv - 3);
            let bv = cubic_basis(tv);
            for &(iu, bu) in &cols {
                let mut z = 0.0;
                for (b, &wv) in bv.iter().enumerate() {
                    let row = &self.control[(iv + b) * self.nu + iu..][..4];
                    for (c, &wu) in row.iter().zip(&bu) {
                        z += c * (wu * wv);
                    }
                }
                out.push(z);
            }
        }
        out
    }

    /// Height above the surface of each input point.
    pub fn residuals(&self, cloud: &PointCloud) -> Vec<f64> {
        cloud.points.iter().map(|p| p.z - self.eval(p.x, p.y)).collect()
    }
}

/// Free-function form of [`GroundSurface::eval`].
pub fn eval_ground(surface: &GroundSurface, x: f64, y: f64) -> f64 {
    surface.eval(x, y)
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    nu: usize,
    nv: usize,
    h: f64,
    origin: [f64; 2],
}

impl Layout {
    fn covering(min: [f64; 2], max: [f64; 2], h: f64) -> Self {
        let segments = |lo: f64, hi: f64| (((hi - lo) / h).ceil() as usize).max(1);
        let su = segments(min[0], max[0]);
        let sv = segments(min[1], max[1]);
        // centre the knot lattice on the data extent
        let cx = 0.5 * (min[0] + max[0]);
        let cy = 0.5 * (min[1] + max[1]);
        Self {
            nu: su + 3,
            nv: sv + 3,
            h,
            origin: [cx - 0.5 * su as f64 * h, cy - 0.5 * sv as f64 * h],
        }
    }

    #[inline]
    fn span(&self, x: f64, origin: f64, segments: usize) -> (usize, f64) {
        let s = ((x - origin) / self.h).clamp(0.0, segments as f64);
        let s = if s.is_nan() { 0.0 } else { s };
        let span = (s.floor() as usize).min(segments - 1);
        (span, s - span as f64)
    }

    #[inline]
    fn support(&self, x: f64, y: f64) -> ([usize; 16], [f64; 16]) {
        let (iu, tu) = self.span(x, self.origin[0], self.nu - 3);
        let (iv, tv) = self.span(y, self.origin[1], self.nv - 3);
        let bu = cubic_basis(tu);
        let bv = cubic_basis(tv);
        let mut idx = [0usize; 16];
        let mut w = [0.0f64; 16];
        for b in 0..4 {
            for a in 0..4 {
                idx[b * 4 + a] = (iv + b) * self.nu + iu + a;
                w[b * 4 + a] = bu[a] * bv[b];
            }
        }
        (idx, w)
    }

    fn coarse_cell(&self, x: f64, y: f64) -> (usize, usize) {
        (
            self.span(x, self.origin[0], self.nu - 3).0,
            self.span(y, self.origin[1], self.nv - 3).0,
        )
    }
}

/// Symmetric positive definite banded system, lower band stored per row.
struct BandedSystem {
    n: usize,
    bandwidth: usize,
    /// `band[i * (bandwidth + 1) + d]` holds entry `(i, i - d)`.
    band: Vec<f64>,
    rhs: Vec<f64>,
}

impl BandedSystem {
    fn new(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            band: vec![0.0; n * (bandwidth + 1)],
            rhs: vec![0.0; n],
        }
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i >= j && i - j <= self.bandwidth);
        &mut self.band[i * (self.bandwidth + 1) + (i - j)]
    }

    /// Adds `scale * v v^T` restricted to the given sparse entries.
    fn add_outer(&mut self, idx: &[usize], w: &[f64], scale: f64) {
        for a in 0..idx.len() {
            for b in 0..idx.len() {
                if idx[a] >= idx[b] {
                    *self.at(idx[a], idx[b]) += scale * w[a] * w[b];
                }
            }
        }
    }

    /// In-place Cholesky followed by forward and back substitution.
    fn solve(mut self) -> Result<Vec<f64>> {
        let n = self.n;
        let bw = self.bandwidth;
        let stride = bw + 1;
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let row_j = j * stride;
            let original = self.band[row_j];
            let mut diag = original;
            for p in lo..j {
                let l = self.band[row_j + (j - p)];
                diag -= l * l;
            }
            if !(diag > 1e-12 * original.abs().max(f64::MIN_POSITIVE)) {
                return Err(Error::DegenerateFit(format!(
                    "normal equations are rank deficient at control point {j}"
                )));
            }
            let ljj = diag.sqrt();
            self.band[row_j] = ljj;
            for i in (j + 1)..n.min(j + bw + 1) {
                let row_i = i * stride;
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut acc = self.band[row_i + (i - j)];
                for p in lo_i..j {
                    acc -= self.band[row_i + (i - p)] * self.band[row_j + (j - p)];
                }
                self.band[row_i + (i - j)] = acc / ljj;
            }
        }
        let mut y = self.rhs;
        for i in 0..n {
            let row_i = i * stride;
            let mut acc = y[i];
            for p in i.saturating_sub(bw)..i {
                acc -= self.band[row_i + (i - p)] * y[p];
            }
            y[i] = acc / self.band[row_i];
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for r in (i + 1)..n.min(i + bw + 1) {
                acc -= self.band[r * stride + (r - i)] * y[r];
            }
            y[i] = acc / self.band[i * stride];
        }
        Ok(y)
    }
}

fn solve_control(layout: Layout, cloud: &PointCloud, seeds: &[usize], lambda: f64) -> Result<GroundSurface> {
    if seeds.len() < MIN_SEED_POINTS {
        return Err(Error::DegenerateFit(format!(
            "{} seed points, need at least {MIN_SEED_POINTS}",
            seeds.len()
        )));
    }
    let (nu, nv) = (layout.nu, layout.nv);
    let mut sys = BandedSystem::new(nu * nv, 3 * nu + 3);
    for &s in seeds {
        let p = &cloud.points[s];
        let (idx, w) = layout.support(p.x, p.y);
        sys.add_outer(&idx, &w, 1.0);
        for (&k, &wk) in idx.iter().zip(w.iter()) {
            sys.rhs[k] += wk * p.z;
        }
    }
    let stencil = [1.0, -2.0, 1.0];
    for v in 0..nv {
        for u in 1..nu - 1 {
            let k = v * nu + u;
            sys.add_outer(&[k - 1, k, k + 1], &stencil, lambda);
        }
    }
    for v in 1..nv - 1 {
        for u in 0..nu {
            let k = v * nu + u;
            sys.add_outer(&[k - nu, k, k + nu], &stencil, lambda);
        }
    }
    let control = sys.solve()?;
    GroundSurface::from_control(nu, nv, layout.h, layout.origin, control)
}

/// Per-pass fit statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitPass {
    pub seed_count: usize,
    /// Root mean square residual of the seed points against this pass's surface.
    pub rms_residual: f64,
}

#[derive(Debug, Clone)]
pub struct GroundFit {
    pub surface: GroundSurface,
    pub passes: Vec<FitPass>,
}

fn lowest_per_coarse_cell(layout: Layout, cloud: &PointCloud, fraction: f64) -> Vec<usize> {
    let su = layout.nu - 3;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); su * (layout.nv - 3)];
    for (k, p) in cloud.points.iter().enumerate() {
        let (cu, cv) = layout.coarse_cell(p.x, p.y);
        buckets[cv * su + cu].push(k);
    }
    let mut seeds = Vec::new();
    for mut bucket in buckets.into_iter().filter(|b| !b.is_empty()) {
        bucket.sort_by(|&a, &b| cloud.points[a].z.total_cmp(&cloud.points[b].z).then(a.cmp(&b)));
        let keep = ((bucket.len() as f64 * fraction).ceil() as usize).clamp(1, bucket.len());
        seeds.extend_from_slice(&bucket[..keep]);
    }
    seeds.sort_unstable();
    seeds
}

fn rms(surface: &GroundSurface, cloud: &PointCloud, seeds: &[usize]) -> f64 {
    let sum: f64 = seeds
        .iter()
        .map(|&s| {
            let p = &cloud.points[s];
            let r = p.z - surface.eval(p.x, p.y);
            r * r
        })
        .sum();
    (sum / seeds.len().max(1) as f64).sqrt()
}

/// Fits the ground surface and reports per-pass statistics.
pub fn fit_ground_with_report(cloud: &PointCloud, cfg: &GroundFitConfig) -> Result<GroundFit> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyInput("point cloud"));
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in &cloud.points {
        min[0] = min[0].min(p.x);
        min[1] = min[1].min(p.y);
        max[0] = max[0].max(p.x);
        max[1] = max[1].max(p.y);
    }
    let layout = Layout::covering(min, max, cfg.knot_spacing);

    let seeds = lowest_per_coarse_cell(layout, cloud, cfg.initial_percentile);
    let mut surface = solve_control(layout, cloud, &seeds, cfg.tikhonov_lambda)?;
    let mut passes = vec![FitPass {
        seed_count: seeds.len(),
        rms_residual: rms(&surface, cloud, &seeds),
    }];

    for _ in 1..cfg.refit_iterations {
        let (ground, _) = classify_points(cloud, &surface, cfg.classify_threshold);
        if ground.len() < MIN_SEED_POINTS {
            log::warn!("refit skipped: only {} points near the surface", ground.len());
            break;
        }
        surface = solve_control(layout, cloud, &ground, cfg.tikhonov_lambda)?;
        passes.push(FitPass {
            seed_count: ground.len(),
            rms_residual: rms(&surface, cloud, &ground),
        });
    }
    Ok(GroundFit { surface, passes })
}

pub fn fit_ground(cloud: &PointCloud, cfg: &GroundFitConfig) -> Result<GroundSurface> {
    fit_ground_with_report(cloud, cfg).map(|fit| fit.surface)
}

/// Splits point indices into `(ground, non_ground)` by `|z - S(x, y)| <= threshold`.
pub fn classify_points(cloud: &PointCloud, surface: &GroundSurface, threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let mut ground = Vec::with_capacity(cloud.len());
    let mut non_ground = Vec::new();
    for (k, p) in cloud.points.iter().enumerate() {
        if (p.z - surface.eval(p.x, p.y)).abs() <= threshold {
            ground.push(k);
        } else {
            non_ground.push(k);
        }
    }
    (ground, non_ground)
}

/// Ground flag per point, as consumed by the rasterizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub is_ground: Vec<bool>,
}

impl Classification {
    pub fn new(cloud: &PointCloud, surface: &GroundSurface, threshold: f64) -> Self {
        let (_, non_ground) = classify_points(cloud, surface, threshold);
        let mut is_ground = vec![true; cloud.len()];
        for k in non_ground {
            is_ground[k] = false;
        }
        Self { is_ground }
    }

    /// Every point treated as an obstacle reflection.
    pub fn all_non_ground(len: usize) -> Self {
        Self {
            is_ground: vec![false; len],
        }
    }
}
