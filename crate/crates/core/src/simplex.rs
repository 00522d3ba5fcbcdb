//! Bounded downhill-simplex (Nelder–Mead) minimizer.
//!
//! Vertices are clamped into the box bounds whenever they are created, so
//! the objective is never evaluated outside it.

/// Reflection, expansion, contraction and shrink coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coefficients {
    /// 1, 2, 0.5, 0.5.
    #[default]
    Standard,
    /// 1, 1 + 2/n, 0.75 − 1/(2n), 1 − 1/n (Gao and Han); steadier than the
    /// standard set beyond a handful of dimensions.
    Adaptive,
}

impl Coefficients {
    fn values(self, n: usize) -> (f64, f64, f64, f64) {
        let n = n.max(2) as f64;
        match self {
            Coefficients::Standard => (1.0, 2.0, 0.5, 0.5),
            Coefficients::Adaptive => (1.0, 1.0 + 2.0 / n, 0.75 - 0.5 / n, 1.0 - 1.0 / n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Iteration cap (one reflect/expand/contract/shrink decision each).
    pub max_iterations: usize,
    /// Stop once the spread of vertex values is at most this...
    pub f_tol: f64,
    /// ...and the simplex diameter, measured in units of the initial steps,
    /// is at most this.
    pub x_tol: f64,
    pub coefficients: Coefficients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `f` from `x0`, building the initial simplex from `x0` plus one
/// `steps[i]` displacement per axis (flipped inward at an upper bound).
/// `f0` may carry an already-known `f(x0)`.
pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    f0: Option<f64>,
    steps: &[f64],
    bounds: &[(f64, f64)],
    opts: &SimplexOptions,
) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n);
    assert_eq!(bounds.len(), n);
    let mut evaluations = 0;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut start = x0.to_vec();
    clamp_into(&mut start, bounds);
    let mut vertices = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let step = if v[i] + steps[i] > bounds[i].1 {
            -steps[i]
        } else {
            steps[i]
        };
        v[i] += step;
        clamp_into(&mut v, bounds);
        vertices.push(v);
    }
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    for (k, v) in vertices.iter().enumerate() {
        let value = match (k, f0) {
            (0, Some(known)) if start == x0 => known,
            _ => eval(v, &mut evaluations),
        };
        values.push(value);
    }

    let (alpha, gamma, rho, sigma) = opts.coefficients.values(n);
    let scale: Vec<f64> = steps
        .iter()
        .map(|s| if *s != 0.0 { s.abs() } else { 1.0 })
        .collect();
    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();

    while iterations < opts.max_iterations {
        // stable sort keeps ties in vertex order, so runs are reproducible
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let best = order[0];
        let worst = order[n];
        let second = order[n.saturating_sub(1)];

        let spread = values[worst] - values[best];
        let diameter = vertices
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&vertices[best])
                    .zip(&scale)
                    .map(|((a, b), s)| ((a - b) / s).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= opts.f_tol && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for &k in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&vertices[k]) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect();
            clamp_into(&mut p, bounds);
            p
        };

        let xr = along(alpha, &vertices[worst]);
        let fr = eval(&xr, &mut evaluations);
        if fr < values[best] {
            let xe = along(gamma, &vertices[worst]);
            let fe = eval(&xe, &mut evaluations);
            if fe < fr {
                vertices[worst] = xe;
                values[worst] = fe;
            } else {
                vertices[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            vertices[worst] = xr;
            values[worst] = fr;
            continue;
        }
        if fr < values[worst] {
            let xc = along(alpha * rho, &vertices[worst]);
            let fc = eval(&xc, &mut evaluations);
            if fc <= fr {
                vertices[worst] = xc;
                values[worst] = fc;
                continue;
            }
        } else {
            let xcc = along(-rho, &vertices[worst]);
            let fcc = eval(&xcc, &mut evaluations);
            if fcc < values[worst] {
                vertices[worst] = xcc;
                values[worst] = fcc;
                continue;
            }
        }
        // shrink toward the best vertex
        let anchor = vertices[best].clone();
        for k in 0..=n {
            if k == best {
                continue;
            }
            let mut v: Vec<f64> = anchor
                .iter()
                .zip(&vertices[k])
                .map(|(a, x)| a + sigma * (x - a))
                .collect();
            clamp_into(&mut v, bounds);
            values[k] = eval(&v, &mut evaluations);
            vertices[k] = v;
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        .expect("non-empty simplex");
    SimplexOutcome {
        x: vertices[best].clone(),
        f: values[best],
        evaluations,
        iterations,
        converged,
    }
}

/// Repeats [`minimize`] from the incumbent until `max_iterations` is spent.
/// A restart that improves keeps the current steps; one that does not
/// shrinks them tenfold, stopping once they fall below `x_tol` of the
/// original. Restarting undoes the premature collapse plain Nelder–Mead is
/// prone to in higher dimensions.
pub fn minimize_with_restarts<F>(
    mut f: F,
    x0: &[f64],
    f0: Option<f64>,
    steps: &[f64],
    bounds: &[(f64, f64)],
    opts: &SimplexOptions,
) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let mut outcome = minimize(&mut f, x0, f0, steps, bounds, opts);
    let mut iterations = outcome.iterations;
    let mut evaluations = outcome.evaluations;
    let mut scale = 1.0;
    while iterations < opts.max_iterations && scale >= opts.x_tol {
        let remaining = SimplexOptions {
            max_iterations: opts.max_iterations - iterations,
            ..*opts
        };
        let scaled: Vec<f64> = steps.iter().map(|s| s * scale).collect();
        let next = minimize(&mut f, &outcome.x, Some(outcome.f), &scaled, bounds, &remaining);
        iterations += next.iterations.max(1);
        evaluations += next.evaluations;
        if next.f < outcome.f - opts.f_tol {
            outcome.x = next.x;
            outcome.f = next.f;
        } else {
            if next.f < outcome.f {
                outcome.x = next.x;
                outcome.f = next.f;
            }
            scale *= 0.1;
        }
        outcome.converged = next.converged;
    }
    outcome.iterations = iterations;
    outcome.evaluations = evaluations;
    outcome
}
