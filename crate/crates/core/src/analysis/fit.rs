//! Least-squares fit of `a*exp(b*v) + c*exp(d*v)` to per-bin error variances.
//!
//! Sums of exponentials are badly conditioned and have a label-swap symmetry,
//! so the fit runs a damped Gauss-Newton (Levenberg-Marquardt) iteration from
//! a fixed grid of starts. Signs are enforced through the parameterization
//! `a = p0^2, b = -p1^2, c = p2^2, d = -p3^2`; the best start wins and its
//! terms are put in canonical order (`|b| >= |d|`).

use nalgebra::{Matrix4, Vector4};

use super::binning::BinnedStats;
use super::variance::{VarianceCoefficients, VarianceModel};
use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    Unweighted,
    /// Weight each bin by its sample count.
    ByCount,
    /// Weight each bin by the inverse sampling variance of its variance
    /// estimate, `(n - 1) / (2 sigma^4)`, with `sigma^2` taken from the
    /// current model (iteratively reweighted).
    #[default]
    InverseVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub min_bins: usize,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::InverseVariance,
            min_bins: 6,
            max_iterations: 2000,
        }
    }
}

// Start grid, as multiples of 1/v_max.
const FAST_RATES: [f64; 4] = [30.0, 12.0, 6.0, 3.0];
const SLOW_RATES: [f64; 4] = [1.0, 0.3, 0.05, 0.005];
const REWEIGHT_PASSES: usize = 3;

#[derive(Debug, Clone, Copy)]
struct Point {
    v: f64,
    y: f64,
    /// Sample count behind `y`; 1 when unknown.
    n: f64,
    w: f64,
}

/// Fits the usable bins of `bins`, using bin midpoints as abscissae and the
/// quantization-corrected variances as ordinates.
pub fn fit_variance_model(bins: &BinnedStats, opts: &FitOptions) -> Result<VarianceModel, AnalysisError> {
    let usable: Vec<_> = bins.usable().collect();
    let v: Vec<f64> = usable.iter().map(|b| b.v_mid_kmh()).collect();
    let y: Vec<f64> = usable.iter().map(|b| b.sensor_variance_kmh2).collect();
    let counts: Vec<f64> = usable.iter().map(|b| b.count as f64).collect();
    fit_variance_points(&v, &y, Some(&counts), opts)
}

/// Fits `(v, variance)` points directly. `counts` are the sample counts
/// behind each variance, used by the count-aware weightings.
pub fn fit_variance_points(
    v: &[f64],
    y: &[f64],
    counts: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<VarianceModel, AnalysisError> {
    if v.len() != y.len() || counts.is_some_and(|c| c.len() != v.len()) {
        return Err(AnalysisError::InvalidOption("fit inputs differ in length".into()));
    }
    let needed = opts.min_bins.max(5);
    if v.len() < needed {
        return Err(AnalysisError::InsufficientBins {
            needed,
            have: v.len(),
        });
    }
    let mut pts: Vec<Point> = (0..v.len())
        .map(|i| Point {
            v: v[i],
            y: y[i],
            n: counts.map_or(1.0, |c| c[i]),
            w: 1.0,
        })
        .collect();
    if pts.iter().any(|p| !(p.v.is_finite() && p.y.is_finite() && p.n.is_finite() && p.n >= 0.0)) {
        return Err(AnalysisError::InvalidOption("non-finite fit input".into()));
    }
    // Input order must not matter.
    pts.sort_by(|p, q| p.v.total_cmp(&q.v).then(p.y.total_cmp(&q.y)).then(p.n.total_cmp(&q.n)));

    if pts.iter().all(|p| p.y == 0.0) {
        let zero = VarianceCoefficients { a: 0.0, b: 0.0, c: 0.0, d: 0.0 };
        return Ok(VarianceModel {
            coefficients: zero,
            ci_halfwidth: zero,
            fit_rmse: 0.0,
            bins_used: pts.len(),
        });
    }

    let (coefficients, cost) = match opts.weighting {
        Weighting::Unweighted => {
            set_weights(&mut pts, |_| 1.0)?;
            multi_start(&pts, opts)?
        }
        Weighting::ByCount => {
            set_weights(&mut pts, |p| p.n)?;
            multi_start(&pts, opts)?
        }
        Weighting::InverseVariance => {
            let y_max = pts.iter().map(|p| p.y.abs()).fold(0.0, f64::max);
            let floor = 1e-6 * y_max;
            set_weights(&mut pts, |p| (p.n - 1.0).max(1.0) / p.y.abs().max(floor).powi(2))?;
            let mut fit = multi_start(&pts, opts)?;
            for _ in 0..REWEIGHT_PASSES {
                let model = fit.0;
                set_weights(&mut pts, |p| (p.n - 1.0).max(1.0) / model.eval(p.v).max(floor).powi(2))?;
                fit = multi_start(&pts, opts)?;
            }
            fit
        }
    };

    let dof = (pts.len() - 4) as f64;
    let ci_halfwidth = confidence_halfwidths(&pts, &coefficients, cost / dof);
    let fit_rmse = (pts.iter().map(|p| (coefficients.eval(p.v) - p.y).powi(2)).sum::<f64>()
        / pts.len() as f64)
        .sqrt();
    Ok(VarianceModel {
        coefficients,
        ci_halfwidth,
        fit_rmse,
        bins_used: pts.len(),
    })
}

/// Assigns weights normalized to mean one.
fn set_weights(pts: &mut [Point], weight: impl Fn(&Point) -> f64) -> Result<(), AnalysisError> {
    for p in pts.iter_mut() {
        p.w = weight(p);
    }
    let mean_w = pts.iter().map(|p| p.w).sum::<f64>() / pts.len() as f64;
    if !(mean_w.is_finite() && mean_w > 0.0) || pts.iter().any(|p| p.w.is_nan() || p.w < 0.0) {
        return Err(AnalysisError::InvalidOption("fit weights must be finite, >= 0 and not all zero".into()));
    }
    for p in pts.iter_mut() {
        p.w /= mean_w;
    }
    Ok(())
}

/// Runs every start and keeps the lowest cost; near-equal costs go to the
/// smaller `|b|`.
fn multi_start(pts: &[Point], opts: &FitOptions) -> Result<(VarianceCoefficients, f64), AnalysisError> {
    let y_scale: f64 = pts.iter().map(|p| p.w * p.y * p.y).sum();
    let cost_floor = 1e-32 * y_scale;
    let v_max = pts.iter().map(|p| p.v.abs()).fold(0.0, f64::max).max(1e-9);
    let y_max = pts.iter().map(|p| p.y.abs()).fold(0.0, f64::max);

    let mut best: Option<(VarianceCoefficients, f64)> = None;
    for fast in FAST_RATES {
        for slow in SLOW_RATES {
            let theta0 = initial_guess(pts, fast / v_max, slow / v_max, y_max);
            let Some(theta) = levenberg_marquardt(pts, theta0, opts.max_iterations, cost_floor) else {
                continue;
            };
            let coeffs = to_coefficients(&theta).canonical();
            let cost = cost_of(pts, &coeffs);
            if !cost.is_finite() {
                continue;
            }
            best = Some(match best {
                None => (coeffs, cost),
                Some((bc, bcost)) => {
                    let tie = (cost - bcost).abs() <= 1e-9 * bcost.max(cost) + cost_floor;
                    if (tie && coeffs.b.abs() < bc.b.abs()) || (!tie && cost < bcost) {
                        (coeffs, cost)
                    } else {
                        (bc, bcost)
                    }
                }
            });
        }
    }
    best.ok_or(AnalysisError::FitDiverged)
}

fn to_coefficients(theta: &Vector4<f64>) -> VarianceCoefficients {
    VarianceCoefficients {
        a: theta[0] * theta[0],
        b: -theta[1] * theta[1],
        c: theta[2] * theta[2],
        d: -theta[3] * theta[3],
    }
}

fn cost_of(pts: &[Point], m: &VarianceCoefficients) -> f64 {
    pts.iter().map(|p| p.w * (m.eval(p.v) - p.y).powi(2)).sum()
}

/// Non-negative least-squares amplitudes for fixed decay rates, lifted off
/// zero so both terms can still move.
fn initial_guess(pts: &[Point], fast: f64, slow: f64, y_max: f64) -> Vector4<f64> {
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in pts {
        let e1 = (-fast * p.v).exp();
        let e2 = (-slow * p.v).exp();
        s11 += p.w * e1 * e1;
        s12 += p.w * e1 * e2;
        s22 += p.w * e2 * e2;
        s1y += p.w * e1 * p.y;
        s2y += p.w * e2 * p.y;
    }
    let det = s11 * s22 - s12 * s12;
    let (mut a, mut c) = if det.abs() > 1e-300 {
        ((s22 * s1y - s12 * s2y) / det, (s11 * s2y - s12 * s1y) / det)
    } else {
        (-1.0, -1.0)
    };
    if !(a >= 0.0 && c >= 0.0) {
        let only_fast = (s1y / s11).max(0.0);
        let only_slow = (s2y / s22).max(0.0);
        // residual reduction of each single-term fit
        if only_fast * s1y >= only_slow * s2y {
            (a, c) = (only_fast, 0.0);
        } else {
            (a, c) = (0.0, only_slow);
        }
    }
    let floor = 1e-3 * y_max.max(1e-300);
    Vector4::new(a.max(floor).sqrt(), fast.sqrt(), c.max(floor).sqrt(), slow.sqrt())
}

/// Cost, `J^T J` and `J^T r` in the squared parameterization.
fn normal_equations(pts: &[Point], theta: &Vector4<f64>) -> (f64, Matrix4<f64>, Vector4<f64>) {
    let m = to_coefficients(theta);
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    let mut cost = 0.0;
    for p in pts {
        let e1 = (m.b * p.v).exp();
        let e2 = (m.d * p.v).exp();
        let r = m.a * e1 + m.c * e2 - p.y;
        let row = Vector4::new(
            2.0 * theta[0] * e1,
            -2.0 * theta[1] * m.a * p.v * e1,
            2.0 * theta[2] * e2,
            -2.0 * theta[3] * m.c * p.v * e2,
        );
        jtj += p.w * row * row.transpose();
        jtr += p.w * r * row;
        cost += p.w * r * r;
    }
    (cost, jtj, jtr)
}

fn levenberg_marquardt(
    pts: &[Point],
    mut theta: Vector4<f64>,
    max_iterations: usize,
    cost_floor: f64,
) -> Option<Vector4<f64>> {
    let (mut cost, mut jtj, mut jtr) = normal_equations(pts, &theta);
    if !cost.is_finite() {
        return None;
    }
    let mut lambda = 1e-3;
    let mut stalled = 0;
    for _ in 0..max_iterations {
        if cost <= cost_floor {
            break;
        }
        let diag_floor = 1e-15 * (0..4).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(diag_floor).max(1e-300);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let candidate = theta + chol.solve(&(-jtr));
            let (c_cost, c_jtj, c_jtr) = normal_equations(pts, &candidate);
            if c_cost.is_finite() && c_cost < cost {
                let rel = (cost - c_cost) / cost;
                stalled = if rel < 1e-13 { stalled + 1 } else { 0 };
                (theta, cost, jtj, jtr) = (candidate, c_cost, c_jtj, c_jtr);
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        if !accepted || stalled >= 4 {
            break;
        }
    }
    theta.iter().all(|x| x.is_finite()).then_some(theta)
}

/// Two standard errors per coefficient from `s^2 (J^T J)^-1`, with `J` taken
/// with respect to `(a, b, c, d)`. A rank-deficient `J^T J` is pseudo-inverted.
fn confidence_halfwidths(
    pts: &[Point],
    m: &VarianceCoefficients,
    residual_variance: f64,
) -> VarianceCoefficients {
    let mut jtj = Matrix4::<f64>::zeros();
    for p in pts {
        let e1 = (m.b * p.v).exp();
        let e2 = (m.d * p.v).exp();
        let row = Vector4::new(e1, m.a * p.v * e1, e2, m.c * p.v * e2);
        jtj += p.w * row * row.transpose();
    }
    // Jacobi scaling before inverting; the columns differ by orders of magnitude.
    let scale = Vector4::from_fn(|i, _| {
        let d = jtj[(i, i)];
        if d > 0.0 {
            1.0 / d.sqrt()
        } else {
            0.0
        }
    });
    let scaled = Matrix4::from_fn(|i, j| jtj[(i, j)] * scale[i] * scale[j]);
    let svd = scaled.svd(true, true);
    let max_sv = svd.singular_values.max();
    let inv = svd
        .pseudo_inverse(1e-12 * max_sv.max(1e-300))
        .unwrap_or_else(|_| Matrix4::zeros());
    let hw: [f64; 4] = std::array::from_fn(|i| {
        let var = residual_variance * inv[(i, i)] * scale[i] * scale[i];
        2.0 * var.max(0.0).sqrt()
    });
    VarianceCoefficients::from_array(hw)
}
