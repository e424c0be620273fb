//! Local-linear moment machinery on the (calendar day, duration) grid and a
//! one-dimensional local-linear scatter smoother.
//!
//! For an evaluation cell `(t, w)` and a grid cell `(u, w')` the kernel
//! offsets are `x1 = t - u` (calendar) and `x2 = w - w'` (duration). With
//! `v = u - w'` and `s = t - w` the duration offset equals `t - s - (u - v)`.

use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::grid::DurationMatrix;
use crate::kernel::{support_radius, Kernel};

/// Condition-number ceiling above which the 2x2 moment matrix is treated as
/// singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    /// Calendar-time bandwidth in days.
    pub b1: f64,
    /// Duration bandwidth in days.
    pub b2: f64,
}

impl Bandwidths {
    pub fn new(b1: f64, b2: f64) -> Result<Self, EstimationError> {
        if !(b1.is_finite() && b2.is_finite()) || b1 < 1.0 || b2 < 1.0 {
            return Err(EstimationError::InvalidBandwidths(format!(
                "b1 = {b1}, b2 = {b2}; both must be finite and >= 1"
            )));
        }
        Ok(Self { b1, b2 })
    }

    pub fn area(&self) -> f64 {
        self.b1 * self.b2
    }
}

impl std::fmt::Display for Bandwidths {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.b1, self.b2)
    }
}

/// Kernel-weighted exposure moments around one evaluation cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalMoments {
    /// Zeroth moment `sum K1 K2 E`.
    pub mass: f64,
    /// First moments in the calendar and duration offsets.
    pub a: [f64; 2],
    /// Second-moment matrix.
    pub a_mat: [[f64; 2]; 2],
    pub degenerate: bool,
}

impl LocalMoments {
    /// `A^-1 a`, or `None` when the moment matrix is singular.
    pub fn solve(&self) -> Option<[f64; 2]> {
        if self.degenerate {
            return None;
        }
        let [[p, q], [_, r]] = self.a_mat;
        let det = p * r - q * q;
        Some([
            (r * self.a[0] - q * self.a[1]) / det,
            (p * self.a[1] - q * self.a[0]) / det,
        ])
    }

    /// Mirrors the accumulated upper cross moment and runs the singularity
    /// check.
    pub(crate) fn finish(mut self) -> Self {
        self.a_mat[1][0] = self.a_mat[0][1];
        self.degenerate = is_singular(&self.a_mat);
        self
    }
}

fn is_singular(m: &[[f64; 2]; 2]) -> bool {
    let [[p, q], [_, r]] = *m;
    let det = p * r - q * q;
    if !(det > 0.0) {
        return true;
    }
    let half_trace = 0.5 * (p + r);
    let disc = (half_trace * half_trace - det).max(0.0).sqrt();
    let hi = half_trace + disc;
    let lo = det / hi;
    !(lo > 0.0) || hi / lo > MAX_CONDITION
}

/// Precomputed product-kernel weights for one bandwidth pair.
#[derive(Debug, Clone)]
pub struct ProductWindow {
    pub r1: usize,
    pub r2: usize,
    k1: Vec<f64>,
    k2: Vec<f64>,
}

impl ProductWindow {
    pub fn new(kernel: &dyn Kernel, b: Bandwidths) -> Self {
        let r1 = support_radius(b.b1);
        let r2 = support_radius(b.b2);
        let weights = |r: usize, bw: f64| -> Vec<f64> {
            (0..=2 * r)
                .map(|i| kernel.scaled(i as f64 - r as f64, bw))
                .collect()
        };
        Self {
            r1,
            r2,
            k1: weights(r1, b.b1),
            k2: weights(r2, b.b2),
        }
    }

    /// `K1,b1(x1)` for an integer offset within the support radius.
    #[inline]
    pub fn k1(&self, x1: isize) -> f64 {
        self.k1[(x1 + self.r1 as isize) as usize]
    }

    #[inline]
    pub fn k2(&self, x2: isize) -> f64 {
        self.k2[(x2 + self.r2 as isize) as usize]
    }

    /// Weight of the evaluation cell itself.
    pub fn centre(&self) -> f64 {
        self.k1(0) * self.k2(0)
    }

    /// Calls `f(u, w', x1, x2, weight)` for every grid cell with non-zero
    /// product weight around `(t, w)`.
    #[inline]
    pub fn for_each(
        &self,
        grid: &DurationMatrix,
        t: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, f64, f64, f64),
    ) {
        let days = grid.days() as isize;
        let cap = grid.max_duration() as isize;
        let (t, w) = (t as isize, w as isize);
        for x1 in -(self.r1 as isize)..=self.r1 as isize {
            let u = t - x1;
            if u < 0 || u >= days {
                continue;
            }
            let k1 = self.k1(x1);
            if k1 == 0.0 {
                continue;
            }
            let w_lo = (w - self.r2 as isize).max(0);
            let w_hi = (w + self.r2 as isize).min(cap).min(u);
            for wp in w_lo..=w_hi {
                let x2 = w - wp;
                let k = k1 * self.k2(x2);
                if k != 0.0 {
                    f(u as usize, wp as usize, x1 as f64, x2 as f64, k);
                }
            }
        }
    }
}

/// Kernel moments `sum K1 K2 x1^i x2^j M` of `matrix` at every cell of the
/// full `(day, duration)` rectangle, one flat row-major field per requested
/// order `(i, j)` with `i, j <= 2`. Cells outside the feasible triangle count
/// as zero. The product kernel makes this two one-dimensional passes.
pub fn moment_fields(
    matrix: &DurationMatrix,
    window: &ProductWindow,
    orders: &[(usize, usize)],
) -> Vec<Vec<f64>> {
    let days = matrix.days();
    let width = matrix.max_duration() + 1;
    let (r1, r2) = (window.r1 as isize, window.r2 as isize);
    let pow = |x: f64, n: usize| match n {
        0 => 1.0,
        1 => x,
        _ => x * x,
    };
    let mut inner: [Option<Vec<f64>>; 3] = [None, None, None];
    for &(_, j) in orders {
        if inner[j].is_some() {
            continue;
        }
        let mut field = vec![0.0; days * width];
        for u in 0..days {
            let row = matrix.row(u);
            for w in 0..width as isize {
                let lo = (w - r2).max(0);
                let hi = (w + r2).min(row.len() as isize - 1);
                let mut acc = 0.0;
                for wp in lo..=hi {
                    let x2 = w - wp;
                    acc += window.k2(x2) * pow(x2 as f64, j) * row[wp as usize];
                }
                field[u * width + w as usize] = acc;
            }
        }
        inner[j] = Some(field);
    }
    orders
        .iter()
        .map(|&(i, j)| {
            let src = inner[j].as_ref().expect("computed above");
            let mut field = vec![0.0; days * width];
            for t in 0..days as isize {
                let lo = (t - r1).max(0);
                let hi = (t + r1).min(days as isize - 1);
                let out = &mut field[t as usize * width..(t as usize + 1) * width];
                for u in lo..=hi {
                    let x1 = t - u;
                    let k = window.k1(x1) * pow(x1 as f64, i);
                    if k == 0.0 {
                        continue;
                    }
                    let row = &src[u as usize * width..(u as usize + 1) * width];
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += k * v;
                    }
                }
            }
            field
        })
        .collect()
}

/// Kernel moments of `exposure` around the evaluation cell `(t, w)`.
pub fn local_moments(
    t: usize,
    w: usize,
    exposure: &DurationMatrix,
    window: &ProductWindow,
) -> LocalMoments {
    let mut m = LocalMoments::default();
    window.for_each(exposure, t, w, |u, wp, x1, x2, k| {
        let e = exposure.get(u, wp);
        if e == 0.0 {
            return;
        }
        let ke = k * e;
        m.mass += ke;
        m.a[0] += ke * x1;
        m.a[1] += ke * x2;
        m.a_mat[0][0] += ke * x1 * x1;
        m.a_mat[0][1] += ke * x1 * x2;
        m.a_mat[1][1] += ke * x2 * x2;
    });
    m.finish()
}

/// Local-linear correction weight `1 - (x1, x2) A^-1 a` for a cell at offsets
/// `(x1, x2)` from the evaluation point; `1` when the moments are degenerate.
pub fn correction_weight(x1: f64, x2: f64, m: &LocalMoments) -> f64 {
    match m.solve() {
        Some(sol) => 1.0 - (x1 * sol[0] + x2 * sol[1]),
        None => 1.0,
    }
}

/// Output of the one-dimensional local-linear smoother.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLinearFit {
    pub values: Vec<f64>,
    /// Grid points where no observation had positive weight and the nearest
    /// observation was used instead.
    pub fallback: Vec<bool>,
}

/// Kernel-weighted local-linear regression of `y` on `x`, evaluated at each
/// point of `grid`.
pub fn local_linear_regress(
    x: &[f64],
    y: &[f64],
    bandwidth: f64,
    grid: &[f64],
    kernel: &dyn Kernel,
) -> Result<LocalLinearFit, EstimationError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(EstimationError::InvalidInput(format!(
            "local-linear regression needs >= 2 paired points, got {} x and {} y",
            x.len(),
            y.len()
        )));
    }
    if !(bandwidth >= 1.0) {
        return Err(EstimationError::InvalidBandwidths(format!(
            "bandwidth {bandwidth} must be >= 1"
        )));
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut fallback = Vec::with_capacity(grid.len());
    for &g in grid {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let d = xi - g;
            let k = kernel.scaled(d, bandwidth);
            if k == 0.0 {
                continue;
            }
            s0 += k;
            s1 += k * d;
            s2 += k * d * d;
            t0 += k * yi;
            t1 += k * d * yi;
        }
        if s0 == 0.0 {
            let nearest = x
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - g).abs().total_cmp(&(b.1 - g).abs()))
                .map(|(i, _)| i)
                .expect("non-empty");
            values.push(y[nearest]);
            fallback.push(true);
            continue;
        }
        let det = s0 * s2 - s1 * s1;
        let value = if det > 1e-12 * s0 * s2.max(f64::MIN_POSITIVE) && det > 0.0 {
            (s2 * t0 - s1 * t1) / det
        } else {
            t0 / s0
        };
        values.push(value);
        fallback.push(false);
    }
    Ok(LocalLinearFit { values, fallback })
}
