//! B-spline densities for the diffuse background.
//!
//! Each background component is a product of two order-4 normalized B-spline
//! densities with five knots per axis. Knots carry an ordered uniform prior and a
//! lower bound on the per-axis standard deviation; their full conditionals are
//! drawn by rejection from a uniform proposal.

use num_traits::Num;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Spline order used by the background kernel.
pub const ORDER: usize = 4;
/// Knots per axis (`ORDER + 1`).
pub const N_KNOTS: usize = ORDER + 1;

fn check_ascending<T: Real>(knots: &[T]) -> Result<()> {
    if knots.len() < 2 {
        return Err(Error::InvalidArgument("need at least two knots".into()));
    }
    if knots.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("knots must be strictly ascending: {knots:?}")))
    }
}

/// Value of the B-spline basis function of order `order` on `knots` (length `order + 1`).
///
/// Evaluated with the usual two-term recursion down to the order-1 indicator of
/// `[tau_1, tau_2)`.
pub fn bspline_basis<T: Real>(order: usize, knots: &[T], x: T) -> Result<T> {
    if order == 0 || knots.len() != order + 1 {
        return Err(Error::InvalidArgument(format!(
            "order {order} needs {} knots, got {}",
            order + 1,
            knots.len()
        )));
    }
    check_ascending(knots)?;
    Ok(basis_unchecked(order, knots, x))
}

fn basis_unchecked<T: Real>(order: usize, knots: &[T], x: T) -> T {
    if x < knots[0] || x >= knots[order] {
        return T::zero();
    }
    // Triangular table: level-1 indicators, then raise the order in place.
    let mut b: Vec<T> = (0..order)
        .map(|i| if knots[i] <= x && x < knots[i + 1] { T::one() } else { T::zero() })
        .collect();
    for k in 2..=order {
        for i in 0..=(order - k) {
            let left = (x - knots[i]) / (knots[i + k - 1] - knots[i]) * b[i];
            let right = (knots[i + k] - x) / (knots[i + k] - knots[i + 1]) * b[i + 1];
            b[i] = left + right;
        }
    }
    b[0]
}

/// Basis normalized to a probability density: `order * B(x) / (tau_last - tau_first)`.
pub fn normalized_bspline_density<T: Real>(order: usize, knots: &[T], x: T) -> Result<T> {
    let v = bspline_basis(order, knots, x)?;
    let span = knots[order] - knots[0];
    Ok(T::from_usize(order).unwrap() * v / span)
}

/// Variance of a random variable with the normalized B-spline density on `knots`:
/// `sum_{p<q} (tau_p - tau_q)^2 / ((m+1)^2 (m+2))` with `m = knots.len() - 1`.
///
/// Generic over any numeric type so the formula can be checked in exact arithmetic.
pub fn knot_variance<T: Num + Copy>(knots: &[T]) -> T {
    let mut num = T::zero();
    for p in 0..knots.len() {
        for q in (p + 1)..knots.len() {
            let d = knots[p] - knots[q];
            num = num + d * d;
        }
    }
    let count = |n: usize| (0..n).fold(T::zero(), |acc, _| acc + T::one());
    let m = knots.len() - 1;
    let m1 = count(m + 1);
    num / (m1 * m1 * count(m + 2))
}

/// Five ascending knots along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct KnotVector<T = f64>(pub [T; N_KNOTS]);

impl<T: Real> KnotVector<T> {
    /// Validated constructor: strictly ascending and inside `axis`.
    pub fn new(knots: [T; N_KNOTS], axis: (T, T)) -> Result<Self> {
        check_ascending(&knots)?;
        if knots[0] < axis.0 || knots[N_KNOTS - 1] > axis.1 {
            return Err(Error::InvalidArgument(format!("knots {knots:?} outside axis {axis:?}")));
        }
        Ok(KnotVector(knots))
    }

    /// Equispaced knots from `lo` to `hi` inclusive.
    pub fn equispaced(lo: T, hi: T) -> Self {
        let step = (hi - lo) / T::lit(4.0);
        KnotVector(std::array::from_fn(|k| lo + step * T::from_usize(k).unwrap()))
    }

    #[inline]
    pub fn knots(&self) -> &[T; N_KNOTS] {
        &self.0
    }

    pub fn variance(&self) -> T {
        knot_variance(&self.0)
    }

    pub fn sd(&self) -> T {
        self.variance().sqrt()
    }

    pub fn support(&self) -> (T, T) {
        (self.0[0], self.0[N_KNOTS - 1])
    }

    #[inline]
    pub fn density(&self, x: T) -> T {
        if x < self.0[0] || x >= self.0[N_KNOTS - 1] {
            return T::zero();
        }
        T::lit(ORDER as f64) * basis_unchecked(ORDER, &self.0, x) / (self.0[N_KNOTS - 1] - self.0[0])
    }

    pub fn is_ascending(&self) -> bool {
        self.0.windows(2).all(|w| w[0] < w[1])
    }

    /// Draw from the normalized density: a uniform point on the simplex mapped through the knots.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let w: [f64; N_KNOTS] = std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln());
        let total: f64 = w.iter().sum();
        let mut acc = T::zero();
        for (wk, &t) in w.iter().zip(&self.0) {
            acc = acc + T::lit(wk / total) * t;
        }
        acc
    }
}

/// Order-4 density on fixed knots, stored as four cubic pieces for fast repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CubicPieces<T> {
    knots: [T; N_KNOTS],
    /// `coef[j]` holds the piece on `[knots[j], knots[j+1])` in powers of `x - knots[j]`.
    coef: [[T; 4]; 4],
}

impl<T: Real> CubicPieces<T> {
    pub fn new(kv: &KnotVector<T>) -> Self {
        let t = kv.0;
        let norm = T::lit(ORDER as f64) / (t[4] - t[0]);
        let mut coef = [[T::zero(); 4]; 4];
        for (j, cj) in coef.iter_mut().enumerate() {
            // polynomials in s = x - t[j]; b[i] is B_{k,i} restricted to piece j
            let mut b = [[T::zero(); 4]; 4];
            b[j][0] = T::one();
            for k in 2..=ORDER {
                for i in 0..=(ORDER - k) {
                    let d1 = t[i + k - 1] - t[i];
                    let d2 = t[i + k] - t[i + 1];
                    // (x - t_i)/d1 = (s + (t_j - t_i))/d1 ; (t_{i+k} - x)/d2 = ((t_{i+k} - t_j) - s)/d2
                    let a1 = (t[j] - t[i]) / d1;
                    let s1 = T::one() / d1;
                    let a2 = (t[i + k] - t[j]) / d2;
                    let s2 = -T::one() / d2;
                    let (p, q) = (b[i], b[i + 1]);
                    let mut r = [T::zero(); 4];
                    for e in 0..4 {
                        r[e] = r[e] + a1 * p[e] + a2 * q[e];
                        if e + 1 < 4 {
                            r[e + 1] = r[e + 1] + s1 * p[e] + s2 * q[e];
                        }
                    }
                    b[i] = r;
                }
            }
            for e in 0..4 {
                cj[e] = b[0][e] * norm;
            }
        }
        CubicPieces { knots: t, coef }
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        let t = &self.knots;
        if x < t[0] || x >= t[4] {
            return T::zero();
        }
        let j = if x < t[2] {
            usize::from(x >= t[1])
        } else if x < t[3] {
            2
        } else {
            3
        };
        let s = x - t[j];
        let c = &self.coef[j];
        let v = c[0] + s * (c[1] + s * (c[2] + s * c[3]));
        // rounding can push the piece marginally negative right at a knot
        v.max(T::zero())
    }

    /// `sum ln f(x_i)`; `-inf` as soon as one point has zero density.
    pub fn log_likelihood(&self, xs: &[T]) -> T {
        let mut total = T::zero();
        for chunk in xs.chunks(8) {
            let mut prod = T::one();
            for &x in chunk {
                prod = prod * self.eval(x);
            }
            if prod > T::min_positive_value() {
                total = total + prod.ln();
            } else {
                // slow path: underflow or a true zero
                for &x in chunk {
                    let v = self.eval(x);
                    if v <= T::zero() {
                        return T::neg_infinity();
                    }
                    total = total + v.ln();
                }
            }
        }
        total
    }
}

/// One background kernel: longitude and latitude knot vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct BackgroundComponent<T = f64> {
    pub ell: KnotVector<T>,
    pub b: KnotVector<T>,
}

impl<T: Real> BackgroundComponent<T> {
    pub fn new(ell: KnotVector<T>, b: KnotVector<T>) -> Self {
        BackgroundComponent { ell, b }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (T, T) {
        (self.ell.sample(rng), self.b.sample(rng))
    }
}

/// Product of the two order-4 normalized densities (per deg^2).
#[inline]
pub fn bivariate_kernel<T: Real>(x: T, y: T, comp: &BackgroundComponent<T>) -> T {
    let fx = comp.ell.density(x);
    if fx == T::zero() {
        return fx;
    }
    fx * comp.b.density(y)
}

/// Smoothness constraint: both axis standard deviations strictly above their floors.
pub fn check_smoothness<T: Real>(comp: &BackgroundComponent<T>, c_ell: T, c_b: T) -> bool {
    comp.ell.variance() > c_ell * c_ell && comp.b.variance() > c_b * c_b
}

/// Single-axis smoothness check.
#[inline]
pub fn axis_smooth<T: Real>(kv: &KnotVector<T>, floor: T) -> bool {
    kv.variance() > floor * floor
}

/// Draw knots from the ordered uniform prior: middle knot uniform on the axis,
/// neighbours uniform between it and the axis ends, outer knots likewise.
pub fn sample_knots_prior<T: Real, R: Rng + ?Sized>(axis: (T, T), rng: &mut R) -> KnotVector<T> {
    let (lo, hi) = (axis.0.as_f64(), axis.1.as_f64());
    loop {
        let u = |rng: &mut R, a: f64, b: f64| a + (b - a) * rng.random::<f64>();
        let k3 = u(rng, lo, hi);
        let k2 = u(rng, lo, k3);
        let k4 = u(rng, k3, hi);
        let k1 = u(rng, lo, k2);
        let k5 = u(rng, k4, hi);
        let kv = KnotVector([k1, k2, k3, k4, k5].map(T::lit));
        // reject the measure-zero ties and boundary hits produced by finite precision
        if kv.is_ascending() && kv.0[0] > axis.0 && kv.0[4] < axis.1 {
            return kv;
        }
    }
}

/// Log density of the ordered uniform prior; `-inf` off its support.
pub fn log_prior_density<T: Real>(kv: &KnotVector<T>, axis: (T, T)) -> T {
    let [k1, k2, k3, k4, k5] = kv.0;
    let (lo, hi) = axis;
    if !(lo < k1 && k1 < k2 && k2 < k3 && k3 < k4 && k4 < k5 && k5 < hi) {
        return T::neg_infinity();
    }
    -((hi - lo).ln() + (k3 - lo).ln() + (hi - k3).ln() + (k2 - lo).ln() + (hi - k4).ln())
}

/// Support of the full conditional of knot `knot` (0-based, 0..=4) given the other
/// knots and the range `(min, max)` of the coordinates assigned to the component.
///
/// | knot | left            | right           |
/// |------|-----------------|-----------------|
/// | 0    | axis lo         | min(x_min, k1)  |
/// | 1    | k0              | k2              |
/// | 2    | k1              | k3              |
/// | 3    | k2              | k4              |
/// | 4    | max(x_max, k3)  | axis hi         |
pub fn knot_conditional_bounds<T: Real>(
    knot: usize,
    kv: &KnotVector<T>,
    data_range: Option<(T, T)>,
    axis: (T, T),
) -> Result<(T, T)> {
    let k = &kv.0;
    let (left, right) = match knot {
        0 => (axis.0, data_range.map_or(k[1], |(lo, _)| lo.min(k[1]))),
        1..=3 => (k[knot - 1], k[knot + 1]),
        4 => (data_range.map_or(k[3], |(_, hi)| hi.max(k[3])), axis.1),
        _ => return Err(Error::InvalidArgument(format!("knot index {knot} out of range 0..=4"))),
    };
    if left < right {
        Ok((left, right))
    } else {
        Err(Error::EmptySupport { knot, left: left.as_f64(), right: right.as_f64() })
    }
}

/// Envelope construction for the knot rejection sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConfig {
    /// Uniform grid points used to locate the maximum of the full conditional.
    pub grid_points: usize,
    /// Multiplier applied to the located maximum.
    pub safety: f64,
    /// Golden-section iterations around the best grid point (0 disables).
    pub refine_iters: usize,
    /// Also evaluate at the current knot value.
    pub include_current: bool,
    pub max_rejections: usize,
    /// Piecewise-constant envelope over the grid cells instead of a single constant.
    pub piecewise: bool,
    /// Extra grid points placed around the best coarse point (piecewise mode).
    pub zoom_points: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            grid_points: 512,
            safety: 1.5,
            refine_iters: 0,
            include_current: false,
            max_rejections: 100_000,
            piecewise: false,
            zoom_points: 0,
        }
    }
}

impl EnvelopeConfig {
    /// Cheaper envelope for the inner loop of the Gibbs sampler: a coarse grid
    /// refined around its best point, with one level per grid cell. Cell levels
    /// take the larger endpoint value, except around the maximum where a
    /// golden-section search supplies the level; exact for unimodal conditionals.
    pub fn fast() -> Self {
        EnvelopeConfig {
            grid_points: 16,
            safety: 1.5,
            refine_iters: 12,
            include_current: true,
            max_rejections: 100_000,
            piecewise: true,
            zoom_points: 8,
        }
    }
}

/// Bookkeeping from one knot draw.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KnotDrawStats {
    pub proposals: usize,
    pub envelope_violations: usize,
}

/// Full conditional of one knot along one axis, given the coordinates assigned to the component.
pub struct KnotConditional<'a, T> {
    pub axis: (T, T),
    pub floor: T,
    pub xs: &'a [T],
    data_range: Option<(T, T)>,
}

impl<'a, T: Real> KnotConditional<'a, T> {
    pub fn new(axis: (T, T), floor: T, xs: &'a [T]) -> Self {
        let data_range = if xs.is_empty() {
            None
        } else {
            Some(xs.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x))))
        };
        KnotConditional { axis, floor, xs, data_range }
    }

    pub fn with_range(axis: (T, T), floor: T, xs: &'a [T], data_range: Option<(T, T)>) -> Self {
        KnotConditional { axis, floor, xs, data_range }
    }

    pub fn data_range(&self) -> Option<(T, T)> {
        self.data_range
    }

    /// Unnormalized log full conditional at `value` for knot `knot`.
    pub fn log_density(&self, kv: &KnotVector<T>, knot: usize, value: T) -> T {
        let mut cand = *kv;
        cand.0[knot] = value;
        let lp = log_prior_density(&cand, self.axis);
        if lp == T::neg_infinity() {
            return lp;
        }
        lp + CubicPieces::new(&cand).log_likelihood(self.xs)
    }

    /// Sub-intervals of `(left, right)` where replacing knot `knot` keeps the axis sd above the floor.
    ///
    /// The variance is a convex quadratic in a single knot, so the infeasible set is one interval.
    pub fn feasible_pieces(&self, kv: &KnotVector<T>, knot: usize, left: T, right: T) -> Vec<(T, T)> {
        let others: Vec<f64> = (0..N_KNOTS).filter(|&q| q != knot).map(|q| kv.0[q].as_f64()).collect();
        let denom = ((ORDER + 1) * (ORDER + 1) * (ORDER + 2)) as f64;
        let mut fixed = 0.0;
        for p in 0..others.len() {
            for q in (p + 1)..others.len() {
                fixed += (others[p] - others[q]).powi(2);
            }
        }
        // sum_q (t - o_q)^2 = 4 t^2 - 2 S t + Q
        let s: f64 = others.iter().sum();
        let qsum: f64 = others.iter().map(|o| o * o).sum();
        let target = self.floor.as_f64().powi(2) * denom - fixed;
        let (a, b, c) = (4.0, -2.0 * s, qsum - target);
        let disc = b * b - 4.0 * a * c;
        let (l, r) = (left.as_f64(), right.as_f64());
        let mut out = Vec::with_capacity(2);
        if disc <= 0.0 {
            out.push((left, right));
            return out;
        }
        let sq = disc.sqrt();
        let (r1, r2) = ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a));
        if l < r1 {
            out.push((left, T::lit(r1.min(r))));
        }
        if r2 < r {
            out.push((T::lit(r2.max(l)), right));
        }
        out.retain(|(a, b)| a < b);
        out
    }

    /// Draw knot `knot` from its full conditional by rejection from a uniform proposal.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        kv: &KnotVector<T>,
        knot: usize,
        cfg: &EnvelopeConfig,
        rng: &mut R,
    ) -> Result<(T, KnotDrawStats)> {
        let (left, right) = knot_conditional_bounds(knot, kv, self.data_range, self.axis)?;
        let pieces = self.feasible_pieces(kv, knot, left, right);
        let lengths: Vec<f64> = pieces.iter().map(|(a, b)| (*b - *a).as_f64()).collect();
        let total: f64 = lengths.iter().sum();
        if pieces.is_empty() || !(total > 0.0) {
            return Err(Error::Degenerate(format!("knot {knot}: smoothness constraint infeasible on ({left}, {right})")));
        }
        if cfg.piecewise {
            if let Some(cells) = self.cell_envelope(kv, knot, &pieces, &lengths, cfg) {
                return self.sample_cells(kv, knot, cells, cfg, rng);
            }
        }

        let mut log_env = self.envelope(kv, knot, &pieces, &lengths, cfg);
        if log_env == T::neg_infinity() {
            return Err(Error::Degenerate(format!("knot {knot}: full conditional vanishes on its support")));
        }
        let log_safety = T::lit(cfg.safety.ln());
        let mut stats = KnotDrawStats::default();
        let mut rejections = 0usize;
        loop {
            stats.proposals += 1;
            let mut u = rng.random::<f64>() * total;
            let mut which = 0;
            while which + 1 < pieces.len() && u >= lengths[which] {
                u -= lengths[which];
                which += 1;
            }
            let cand = pieces[which].0 + T::lit(u);
            let ok_range = cand > pieces[which].0 && cand < pieces[which].1;
            let mut proposal = *kv;
            proposal.0[knot] = cand;
            if ok_range && axis_smooth(&proposal, self.floor) {
                let lp = self.log_density(kv, knot, cand);
                if lp > log_env {
                    // envelope too low: raise it and keep going
                    stats.envelope_violations += 1;
                    log_env = lp + log_safety;
                    rejections = 0;
                    continue;
                }
                let log_u = (1.0 - rng.random::<f64>()).ln();
                if T::lit(log_u) + log_env < lp {
                    return Ok((cand, stats));
                }
            }
            rejections += 1;
            if rejections >= cfg.max_rejections {
                return Err(Error::RejectionExhausted(rejections));
            }
        }
    }

    /// Cells `(a, b, log level)` covering the feasible pieces; `None` when the
    /// grid never sees positive density.
    fn cell_envelope(
        &self,
        kv: &KnotVector<T>,
        knot: usize,
        pieces: &[(T, T)],
        lengths: &[f64],
        cfg: &EnvelopeConfig,
    ) -> Option<Vec<(T, T, T)>> {
        let total: f64 = lengths.iter().sum();
        let f = |v: T| self.log_density(kv, knot, v);
        // per piece: sorted edges with their log densities
        let mut edges: Vec<Vec<(T, T)>> = Vec::with_capacity(pieces.len());
        for (&(a, b), &len) in pieces.iter().zip(lengths) {
            let n = ((cfg.grid_points as f64 * len / total).round() as usize).max(1);
            let step = (b - a) / T::lit(n as f64);
            let mut e: Vec<(T, T)> = (0..=n)
                .map(|g| {
                    let v = if g == n { b } else { a + step * T::lit(g as f64) };
                    (v, f(v))
                })
                .collect();
            if cfg.include_current {
                let cur = kv.0[knot];
                if cur > a && cur < b {
                    e.push((cur, f(cur)));
                }
            }
            e.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            edges.push(e);
        }
        let argmax = |edges: &Vec<Vec<(T, T)>>| {
            let mut best = (0usize, 0usize, T::neg_infinity());
            for (p, e) in edges.iter().enumerate() {
                for (k, &(_, lp)) in e.iter().enumerate() {
                    if lp > best.2 {
                        best = (p, k, lp);
                    }
                }
            }
            best
        };
        let (p, k, lp) = argmax(&edges);
        if lp == T::neg_infinity() {
            return None;
        }
        // zoom into the two cells around the best edge
        let e = &edges[p];
        let (lo, hi) = (e[k.saturating_sub(1)].0, e[(k + 1).min(e.len() - 1)].0);
        if cfg.zoom_points > 0 && hi > lo {
            let step = (hi - lo) / T::lit((cfg.zoom_points + 1) as f64);
            let extra: Vec<(T, T)> = (1..=cfg.zoom_points)
                .map(|g| {
                    let v = lo + step * T::lit(g as f64);
                    (v, f(v))
                })
                .collect();
            edges[p].extend(extra);
            edges[p].sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            edges[p].dedup_by(|x, y| x.0 == y.0);
        }
        let (p, k, _) = argmax(&edges);
        let e = &edges[p];
        let (lo_k, hi_k) = (k.saturating_sub(1), (k + 1).min(e.len() - 1));
        let mut peak = e[k].1;
        if cfg.refine_iters > 0 && e[hi_k].0 > e[lo_k].0 {
            let (_, g) = golden_max(f, e[lo_k].0, e[hi_k].0, cfg.refine_iters);
            peak = peak.max(g);
        }
        let log_safety = T::lit(cfg.safety.ln());
        let mut cells = Vec::new();
        for (pp, e) in edges.iter().enumerate() {
            for c in 0..e.len().saturating_sub(1) {
                let (a, fa) = e[c];
                let (b, fb) = e[c + 1];
                if b <= a {
                    continue;
                }
                let level = if pp == p && c >= lo_k && c < hi_k { peak } else { fa.max(fb) };
                cells.push((a, b, level + log_safety));
            }
        }
        Some(cells)
    }

    fn sample_cells<R: Rng + ?Sized>(
        &self,
        kv: &KnotVector<T>,
        knot: usize,
        mut cells: Vec<(T, T, T)>,
        cfg: &EnvelopeConfig,
        rng: &mut R,
    ) -> Result<(T, KnotDrawStats)> {
        let log_safety = T::lit(cfg.safety.ln());
        let mut stats = KnotDrawStats::default();
        let mut rejections = 0usize;
        let masses = |cells: &[(T, T, T)]| {
            let top = cells.iter().map(|c| c.2).fold(T::neg_infinity(), T::max);
            let m: Vec<f64> = cells
                .iter()
                .map(|&(a, b, l)| if l == T::neg_infinity() { 0.0 } else { (b - a).as_f64() * (l - top).as_f64().exp() })
                .collect();
            m
        };
        let mut mass = masses(&cells);
        let mut total: f64 = mass.iter().sum();
        loop {
            stats.proposals += 1;
            let mut u = rng.random::<f64>() * total;
            let mut c = 0;
            while c + 1 < cells.len() && u >= mass[c] {
                u -= mass[c];
                c += 1;
            }
            let (a, b, level) = cells[c];
            let cand = a + (b - a) * T::lit(rng.random::<f64>());
            let mut proposal = *kv;
            proposal.0[knot] = cand;
            if cand > a && cand < b && axis_smooth(&proposal, self.floor) {
                let lp = self.log_density(kv, knot, cand);
                if lp > level {
                    // cell level too low: raise it and keep going
                    stats.envelope_violations += 1;
                    cells[c].2 = lp + log_safety;
                    mass = masses(&cells);
                    total = mass.iter().sum();
                    rejections = 0;
                    continue;
                }
                let log_u = (1.0 - rng.random::<f64>()).ln();
                if T::lit(log_u) + level < lp {
                    return Ok((cand, stats));
                }
            }
            rejections += 1;
            if rejections >= cfg.max_rejections {
                return Err(Error::RejectionExhausted(rejections));
            }
        }
    }

    fn envelope(&self, kv: &KnotVector<T>, knot: usize, pieces: &[(T, T)], lengths: &[f64], cfg: &EnvelopeConfig) -> T {
        let total: f64 = lengths.iter().sum();
        let mut best = (T::neg_infinity(), T::zero(), 0usize);
        let consider = |v: T, p: usize, best: &mut (T, T, usize)| {
            let lp = self.log_density(kv, knot, v);
            if lp > best.0 {
                *best = (lp, v, p);
            }
        };
        for (p, (&(a, b), &len)) in pieces.iter().zip(lengths).enumerate() {
            let n = ((cfg.grid_points as f64 * len / total).round() as usize).max(1);
            let step = (b - a) / T::lit(n as f64);
            for g in 0..n {
                consider(a + step * (T::lit(g as f64) + T::lit(0.5)), p, &mut best);
            }
        }
        if cfg.include_current {
            let cur = kv.0[knot];
            if let Some(p) = pieces.iter().position(|&(a, b)| cur > a && cur < b) {
                consider(cur, p, &mut best);
            }
        }
        if cfg.refine_iters > 0 && best.0 > T::neg_infinity() {
            let (a, b) = pieces[best.2];
            let n = ((cfg.grid_points as f64 * lengths[best.2] / total).round() as usize).max(1);
            let half = (b - a) / T::lit(n as f64);
            let lo = (best.1 - half).max(a);
            let hi = (best.1 + half).min(b);
            let (v, lp) = golden_max(|v| self.log_density(kv, knot, v), lo, hi, cfg.refine_iters);
            if lp > best.0 {
                best = (lp, v, best.2);
            }
        }
        best.0 + T::lit(cfg.safety.ln())
    }
}

fn golden_max<T: Real>(f: impl Fn(T) -> T, mut a: T, mut b: T, iters: usize) -> (T, T) {
    let g = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Draw one knot from its full conditional.
///
/// `knot` is 0-based, `xs` are the coordinates (along this axis) of the events
/// currently assigned to the component and `floor` is the axis smoothness floor.
pub fn sample_knot_full_conditional<T: Real, R: Rng + ?Sized>(
    knot: usize,
    kv: &KnotVector<T>,
    xs: &[T],
    axis: (T, T),
    floor: T,
    cfg: &EnvelopeConfig,
    rng: &mut R,
) -> Result<(T, KnotDrawStats)> {
    KnotConditional::new(axis, floor, xs).sample(kv, knot, cfg, rng)
}

/// Draw from the prior restricted to the smoothness constraint and, when given,
/// to supports covering `cover` (the data range of each axis).
pub fn sample_component_constrained<R: Rng + ?Sized>(
    x_axis: (f64, f64),
    y_axis: (f64, f64),
    c_ell: f64,
    c_b: f64,
    cover: Option<((f64, f64), (f64, f64))>,
    max_attempts: usize,
    rng: &mut R,
) -> Option<BackgroundComponent<f64>> {
    let draw_axis = |axis: (f64, f64), floor: f64, range: Option<(f64, f64)>, rng: &mut R| {
        for _ in 0..max_attempts {
            let kv = sample_knots_prior(axis, rng);
            let covers = range.is_none_or(|(lo, hi)| kv.0[0] < lo && kv.0[4] > hi);
            if covers && axis_smooth(&kv, floor) {
                return Some(kv);
            }
        }
        None
    };
    let ell = draw_axis(x_axis, c_ell, cover.map(|c| c.0), rng)?;
    let b = draw_axis(y_axis, c_b, cover.map(|c| c.1), rng)?;
    Some(BackgroundComponent::new(ell, b))
}
