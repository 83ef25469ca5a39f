//! Brute-force grid implementation of the hybrid Bernoulli recursion for scalar
//! models (`n = m = p = 1`).
//!
//! `p0` lives on a 1-D grid over `x`, `p1` on a tensor grid over `(x, a)`. Integrals
//! use the trapezoid rule. After every prediction the state grid is rebuilt to
//! cover the support of the predicted density, so the recursion never consults
//! the Gaussian-mixture filter it is used to check.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{HbfError, Result};
use crate::filter::{HybridBernoulliDensity, HybridBernoulliFilter, NORMALIZER_FLOOR};
use crate::gaussian::GaussianMixture;
use crate::models::{clutter_density, AttackModel, ChannelMode, ChannelModel, OutsideBoxPolicy, SystemModel};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Cells whose quadrature mass falls below this fraction of the largest cell are skipped.
const SPARSE_CUTOFF: f64 = 1e-15;

/// Probability mass allowed to fall outside each tail of a predicted grid.
const TAIL_MASS: f64 = 1e-13;

/// Kernel evaluations beyond this many standard deviations are skipped.
const KERNEL_SIGMAS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub points: usize,
    /// Half-width of each grid in standard deviations of the density it holds.
    pub span: f64,
    /// Largest tolerated probability mass falling outside a freshly built grid.
    pub max_leakage: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            points: 401,
            span: 8.0,
            max_leakage: 1e-3,
        }
    }
}

/// Uniform 1-D grid with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn uniform(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points < 3 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(HbfError::Resolution(format!(
                "cannot build a {points}-point grid on [{lo}, {hi}]"
            )));
        }
        let h = (hi - lo) / (points - 1) as f64;
        let nodes = (0..points).map(|i| lo + i as f64 * h).collect();
        let mut weights = vec![h; points];
        weights[0] = h / 2.0;
        weights[points - 1] = h / 2.0;
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// The `(r, p0, p1)` triplet tabulated on grids. `p1[i * a.len() + j]` is the
/// density at `(x1.nodes[i], a.nodes[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub r: f64,
    pub x0: Grid,
    pub p0: Vec<f64>,
    pub x1: Grid,
    pub a: Grid,
    pub p1: Vec<f64>,
}

/// Summary statistics compared between the two implementations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityMoments {
    pub r: f64,
    pub p0_mean: f64,
    pub p0_var: f64,
    pub p1_x_mean: f64,
    pub p1_x_var: f64,
    pub p1_a_mean: f64,
    pub p1_a_var: f64,
}

#[derive(Debug, Clone, Copy)]
struct Scalars {
    a: f64,
    g: f64,
    c: f64,
    h: f64,
    q: f64,
    r: f64,
}

fn scalars(sys: &SystemModel) -> Result<Scalars> {
    if !sys.is_scalar() {
        return Err(HbfError::OracleRequiresScalar {
            n: sys.n(),
            m: sys.m(),
            p: sys.p(),
        });
    }
    Ok(Scalars {
        a: sys.a[(0, 0)],
        g: sys.g[(0, 0)],
        c: sys.c[(0, 0)],
        h: sys.h[(0, 0)],
        q: sys.q[(0, 0)],
        r: sys.r[(0, 0)],
    })
}

fn normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    INV_SQRT_2PI / var.sqrt() * (-0.5 * d * d / var).exp()
}

fn normalize(values: &mut [f64], mass: f64) -> Result<()> {
    if !(mass > NORMALIZER_FLOOR) || !mass.is_finite() {
        return Err(HbfError::numerical("grid density", format!("total mass {mass:e}")));
    }
    values.iter_mut().for_each(|v| *v /= mass);
    Ok(())
}

fn check_leakage(what: &str, mass: f64, opts: &GridOptions) -> Result<()> {
    let leak = 1.0 - mass;
    if leak > opts.max_leakage {
        return Err(HbfError::Resolution(format!(
            "{what}: {leak:.3e} of the probability mass falls outside the grid"
        )));
    }
    Ok(())
}

/// Grid spanning every component of a mixture along one axis.
fn mixture_grid(gm: &GaussianMixture, axis: usize, opts: &GridOptions) -> Result<Grid> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in gm.components().iter().filter(|c| c.weight > 0.0) {
        let half = opts.span * c.cov[(axis, axis)].sqrt();
        lo = lo.min(c.mean[axis] - half);
        hi = hi.max(c.mean[axis] + half);
    }
    Grid::uniform(lo, hi, opts.points)
}

/// Mean and variance of a mixture along one axis.
fn mixture_moments(gm: &GaussianMixture, axis: usize) -> (f64, f64) {
    let total = gm.total_weight();
    let mean = gm.components().iter().map(|c| c.weight * c.mean[axis]).sum::<f64>() / total;
    let var = gm
        .components()
        .iter()
        .map(|c| c.weight * (c.cov[(axis, axis)] + (c.mean[axis] - mean).powi(2)))
        .sum::<f64>()
        / total;
    (mean, var)
}

impl GridDensity {
    /// Tabulates a Gaussian-mixture density on grids spanning all of its components.
    pub fn from_mixture(d: &HybridBernoulliDensity, opts: &GridOptions) -> Result<Self> {
        if d.n() != 1 || d.m() != 1 {
            return Err(HbfError::OracleRequiresScalar { n: d.n(), m: d.m(), p: 1 });
        }
        let x0 = mixture_grid(&d.p0, 0, opts)?;
        let mut p0 = x0
            .nodes
            .iter()
            .map(|&x| d.p0.eval(&DVector::from_element(1, x)))
            .collect::<Result<Vec<_>>>()?;
        let mass0 = x0.integrate(&p0);
        check_leakage("initial p0", mass0, opts)?;
        normalize(&mut p0, mass0)?;

        let x1 = mixture_grid(&d.p1, 0, opts)?;
        let a = mixture_grid(&d.p1, 1, opts)?;
        let mut p1 = Vec::with_capacity(x1.len() * a.len());
        for &x in &x1.nodes {
            for &av in &a.nodes {
                p1.push(d.p1.eval(&DVector::from_vec(vec![x, av]))?);
            }
        }
        let mut out = Self { r: d.r, x0, p0, x1, a, p1 };
        let mass1 = out.p1_mass();
        check_leakage("initial p1", mass1, opts)?;
        normalize(&mut out.p1, mass1)?;
        Ok(out)
    }

    fn p1_mass(&self) -> f64 {
        self.p1_integrate(|_, _| 1.0)
    }

    fn p1_integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let na = self.a.len();
        let mut total = 0.0;
        for (i, (&x, &wx)) in self.x1.nodes.iter().zip(&self.x1.weights).enumerate() {
            for (j, (&av, &wa)) in self.a.nodes.iter().zip(&self.a.weights).enumerate() {
                total += wx * wa * self.p1[i * na + j] * f(x, av);
            }
        }
        total
    }

    pub fn moments(&self) -> DensityMoments {
        let p0_mean = self.x0.integrate(&self.x0.nodes.iter().zip(&self.p0).map(|(x, p)| x * p).collect::<Vec<_>>());
        let p0_var = self
            .x0
            .integrate(&self.x0.nodes.iter().zip(&self.p0).map(|(x, p)| (x - p0_mean).powi(2) * p).collect::<Vec<_>>());
        let p1_x_mean = self.p1_integrate(|x, _| x);
        let p1_a_mean = self.p1_integrate(|_, a| a);
        DensityMoments {
            r: self.r,
            p0_mean,
            p0_var,
            p1_x_mean,
            p1_x_var: self.p1_integrate(|x, _| (x - p1_x_mean).powi(2)),
            p1_a_mean,
            p1_a_var: self.p1_integrate(|_, a| (a - p1_a_mean).powi(2)),
        }
    }
}

/// Moments of a Gaussian-mixture density in the same layout as [`GridDensity::moments`].
pub fn mixture_density_moments(d: &HybridBernoulliDensity) -> DensityMoments {
    let (p0_mean, p0_var) = mixture_moments(&d.p0, 0);
    let (p1_x_mean, p1_x_var) = mixture_moments(&d.p1, 0);
    let (p1_a_mean, p1_a_var) = mixture_moments(&d.p1, 1);
    DensityMoments {
        r: d.r,
        p0_mean,
        p0_var,
        p1_x_mean,
        p1_x_var,
        p1_a_mean,
        p1_a_var,
    }
}

/// Sum of weighted Gaussian kernels `Σ w_k N(x; u_k, var)` over centres sorted by
/// position, evaluated at every node.
fn convolve(centres: &[(f64, f64)], nodes: &[f64], var: f64) -> Vec<f64> {
    let reach = KERNEL_SIGMAS * var.sqrt();
    let norm = INV_SQRT_2PI / var.sqrt();
    nodes
        .iter()
        .map(|&x| {
            let lo = centres.partition_point(|c| c.0 < x - reach);
            let hi = centres.partition_point(|c| c.0 <= x + reach);
            let s: f64 = centres[lo..hi]
                .iter()
                .map(|&(u, w)| {
                    let d = x - u;
                    w * (-0.5 * d * d / var).exp()
                })
                .sum();
            norm * s
        })
        .collect()
}

/// Drops negligible cells and sorts the rest by position.
fn sorted_cells(cells: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let max = cells.iter().fold(0.0_f64, |m, c| m.max(c.1));
    let mut kept: Vec<_> = cells.into_iter().filter(|c| c.1 > SPARSE_CUTOFF * max).collect();
    kept.sort_by(|a, b| a.0.total_cmp(&b.0));
    kept
}

/// Positions between which all but `TAIL_MASS` of the (sorted) cell mass lies.
fn support(cells: &[(f64, f64)]) -> Option<(f64, f64)> {
    let total: f64 = cells.iter().map(|c| c.1).sum();
    if cells.is_empty() || !(total > 0.0) {
        return None;
    }
    let cut = TAIL_MASS * total;
    let mut acc = 0.0;
    let lo = cells.iter().find(|c| {
        acc += c.1;
        acc > cut
    })?;
    acc = 0.0;
    let hi = cells.iter().rev().find(|c| {
        acc += c.1;
        acc > cut
    })?;
    Some((lo.0, hi.0))
}

/// Grid version of the prediction step.
pub fn grid_predict(
    post: &GridDensity,
    sys: &SystemModel,
    am: &AttackModel,
    opts: &GridOptions,
) -> Result<GridDensity> {
    let s = scalars(sys)?;
    if am.dim() != 1 {
        return Err(HbfError::OracleRequiresScalar { n: 1, m: am.dim(), p: 1 });
    }
    let r = post.r;
    let (pb, ps) = (am.p_birth, am.p_survival);
    let r_pred = ((1.0 - r) * pb + r * ps).clamp(0.0, 1.0);
    let stay = (1.0 - r) * (1.0 - pb);
    let die = r * (1.0 - ps);
    let born = (1.0 - r) * pb;
    let survive = r * ps;

    let need0 = stay + born > 0.0;
    let need1 = die + survive > 0.0;
    let p0_live = stay + die > NORMALIZER_FLOOR;
    let p1_live = born + survive > NORMALIZER_FLOOR;

    // Transition sources as weighted kernel centres: x' = A x + w and x' = A x + G a + w.
    let cells0 = if need0 {
        sorted_cells(
            post.x0
                .nodes
                .iter()
                .zip(&post.x0.weights)
                .zip(&post.p0)
                .map(|((x, w), p)| (s.a * x, w * p))
                .collect(),
        )
    } else {
        Vec::new()
    };
    let cells1 = if need1 {
        let na = post.a.len();
        let mut cells = Vec::with_capacity(post.p1.len());
        for (i, (&x, &wx)) in post.x1.nodes.iter().zip(&post.x1.weights).enumerate() {
            for (j, (&av, &wa)) in post.a.nodes.iter().zip(&post.a.weights).enumerate() {
                cells.push((s.a * x + s.g * av, wx * wa * post.p1[i * na + j]));
            }
        }
        sorted_cells(cells)
    } else {
        Vec::new()
    };

    // One x grid covering both predicted branches.
    let reach = opts.span * s.q.sqrt();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for cells in [&cells0, &cells1] {
        if let Some((l, h)) = support(cells) {
            lo = lo.min(l - reach);
            hi = hi.max(h + reach);
        }
    }
    let xg = Grid::uniform(lo, hi, opts.points)?;

    let transition = |cells: &[(f64, f64)], what: &str| -> Result<Vec<f64>> {
        if cells.is_empty() {
            return Ok(vec![0.0; xg.len()]);
        }
        let f = convolve(cells, &xg.nodes, s.q);
        check_leakage(what, xg.integrate(&f), opts)?;
        Ok(f)
    };
    let f0 = transition(&cells0, "predicted no-attack transition")?;
    let f1 = transition(&cells1, "predicted attack transition")?;

    let (x0, p0) = if p0_live {
        let mut p0: Vec<f64> = f0.iter().zip(&f1).map(|(a, b)| stay * a + die * b).collect();
        let mass = xg.integrate(&p0);
        normalize(&mut p0, mass)?;
        (xg.clone(), p0)
    } else {
        (post.x0.clone(), post.p0.clone())
    };

    let (x1, a, p1) = if p1_live {
        let ag = mixture_grid(&am.prior, 0, opts)?;
        let prior = ag
            .nodes
            .iter()
            .map(|&v| am.prior.eval(&DVector::from_element(1, v)))
            .collect::<Result<Vec<_>>>()?;
        check_leakage("attack prior", ag.integrate(&prior), opts)?;
        let fx: Vec<f64> = f0.iter().zip(&f1).map(|(a, b)| born * a + survive * b).collect();
        let mut p1 = Vec::with_capacity(fx.len() * prior.len());
        for fv in &fx {
            for pv in &prior {
                p1.push(fv * pv);
            }
        }
        (xg, ag, p1)
    } else {
        (post.x1.clone(), post.a.clone(), post.p1.clone())
    };

    let mut out = GridDensity { r: r_pred, x0, p0, x1, a, p1 };
    if p1_live {
        let mass = out.p1_mass();
        normalize(&mut out.p1, mass)?;
    }
    Ok(out)
}

/// Grid version of the correction step for either channel attack.
///
/// The likelihood weighting mirrors the mixture filter: a measurement set `z`
/// reweights a density by `legacy + Σ_y coef(y) N(y; mean(x, a), R)`.
pub fn grid_correct(
    prior: &GridDensity,
    z: &[DVector<f64>],
    sys: &SystemModel,
    ch: &ChannelModel,
) -> Result<GridDensity> {
    let s = scalars(sys)?;
    if z.is_empty() {
        return Ok(prior.clone());
    }
    let ys: Vec<f64> = z.iter().map(|y| y[0]).collect();
    let (legacy, coefs) = match ch.mode {
        ChannelMode::PacketSubstitution => {
            if z.len() > 1 {
                return Err(HbfError::ModelMismatch(format!(
                    "packet substitution delivers at most one packet, got {}",
                    z.len()
                )));
            }
            (ch.p_fake * clutter_density(&z[0], ch), vec![1.0 - ch.p_fake])
        }
        ChannelMode::ExtraPacketInjection => epi_coefficients(z, ch)?,
    };

    let lik = |mean: f64| -> f64 {
        legacy
            + ys.iter()
                .zip(&coefs)
                .map(|(y, k)| if *k == 0.0 { 0.0 } else { k * normal(*y, mean, s.r) })
                .sum::<f64>()
    };
    let g0: Vec<f64> = prior.x0.nodes.iter().map(|&x| lik(s.c * x)).collect();
    let na = prior.a.len();
    let mut g1 = Vec::with_capacity(prior.p1.len());
    for &x in &prior.x1.nodes {
        for &av in &prior.a.nodes {
            g1.push(lik(s.c * x + s.h * av));
        }
    }
    debug_assert_eq!(g1.len(), prior.x1.len() * na);

    let mut p0: Vec<f64> = prior.p0.iter().zip(&g0).map(|(p, g)| p * g).collect();
    let n0 = prior.x0.integrate(&p0);
    let mut out = GridDensity {
        p1: prior.p1.iter().zip(&g1).map(|(p, g)| p * g).collect(),
        ..prior.clone()
    };
    let n1 = out.p1_mass();

    let r = prior.r;
    let live0 = r < 1.0 && n0 > NORMALIZER_FLOOR;
    let live1 = r > 0.0 && n1 > NORMALIZER_FLOOR;
    out.r = match (live0, live1) {
        (true, true) => (r * n1 / ((1.0 - r) * n0 + r * n1)).clamp(0.0, 1.0),
        (true, false) => 0.0,
        (false, true) => 1.0,
        (false, false) => {
            return Err(HbfError::numerical(
                "grid measurement update",
                format!("likelihood normalizers underflowed (no attack {n0:e}, attack {n1:e})"),
            ))
        }
    };
    if live0 {
        normalize(&mut p0, n0)?;
        out.p0 = p0;
    }
    if live1 {
        normalize(&mut out.p1, n1)?;
    } else {
        out.p1 = prior.p1.clone();
    }
    Ok(out)
}

fn epi_coefficients(z: &[DVector<f64>], ch: &ChannelModel) -> Result<(f64, Vec<f64>)> {
    let xi = ch.clutter_rate;
    if xi == 0.0 {
        if z.len() > 1 {
            return Err(HbfError::ModelMismatch(format!(
                "{} packets received on a channel without injected packets",
                z.len()
            )));
        }
        return Ok((0.0, vec![1.0]));
    }
    let outside: Vec<bool> = z.iter().map(|y| !ch.clutter_box.contains(y)).collect();
    if outside.iter().any(|&o| o) {
        return match ch.outside_box {
            OutsideBoxPolicy::Reject => Err(HbfError::ModelMismatch("packet outside the clutter box".into())),
            OutsideBoxPolicy::SystemOriginated => {
                Ok((0.0, outside.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect()))
            }
        };
    }
    let pd = ch.p_delivery;
    Ok((1.0 - pd, z.iter().map(|y| pd / (xi * clutter_density(y, ch))).collect()))
}

/// One row of a mixture-versus-grid comparison, taken after the correction at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleRow {
    pub k: usize,
    pub r_gm: f64,
    pub r_grid: f64,
    pub d_r: f64,
    pub d_p0_mean: f64,
    pub d_p0_var: f64,
    pub d_p1_x_mean: f64,
    pub d_p1_x_var: f64,
    pub d_p1_a_mean: f64,
    pub d_p1_a_var: f64,
}

impl OracleRow {
    pub fn from_moments(k: usize, gm: &DensityMoments, grid: &DensityMoments) -> Self {
        let mean_delta = |a: f64, b: f64, var: f64| (a - b).abs() / b.abs().max(var.sqrt());
        let var_delta = |a: f64, b: f64| (a - b).abs() / b;
        Self {
            k,
            r_gm: gm.r,
            r_grid: grid.r,
            d_r: if grid.r == 0.0 { (gm.r - grid.r).abs() } else { (gm.r - grid.r).abs() / grid.r },
            d_p0_mean: mean_delta(gm.p0_mean, grid.p0_mean, grid.p0_var),
            d_p0_var: var_delta(gm.p0_var, grid.p0_var),
            d_p1_x_mean: mean_delta(gm.p1_x_mean, grid.p1_x_mean, grid.p1_x_var),
            d_p1_x_var: var_delta(gm.p1_x_var, grid.p1_x_var),
            d_p1_a_mean: mean_delta(gm.p1_a_mean, grid.p1_a_mean, grid.p1_a_var),
            d_p1_a_var: var_delta(gm.p1_a_var, grid.p1_a_var),
        }
    }

    pub fn max_delta(&self) -> f64 {
        [
            self.d_r,
            self.d_p0_mean,
            self.d_p0_var,
            self.d_p1_x_mean,
            self.d_p1_x_var,
            self.d_p1_a_mean,
            self.d_p1_a_var,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Runs the mixture filter and the grid recursion side by side on the same
/// measurement sequence, starting from the filter's current density.
pub fn compare_along(
    filter: &mut HybridBernoulliFilter,
    measurements: &[Vec<DVector<f64>>],
    opts: &GridOptions,
) -> Result<Vec<OracleRow>> {
    scalars(&filter.sys)?;
    let mut grid = GridDensity::from_mixture(filter.density(), opts)?;
    let mut rows = Vec::with_capacity(measurements.len());
    for (k, z) in measurements.iter().enumerate() {
        let step = |e: HbfError| e.at_step(k);
        if k > 0 {
            filter.predict().map_err(step)?;
            grid = grid_predict(&grid, &filter.sys, &filter.attack, opts).map_err(step)?;
        }
        filter.correct(z).map_err(step)?;
        grid = grid_correct(&grid, z, &filter.sys, &filter.channel).map_err(step)?;
        rows.push(OracleRow::from_moments(
            k,
            &mixture_density_moments(filter.density()),
            &grid.moments(),
        ));
    }
    Ok(rows)
}
