//! Derivative-free Nelder-Mead minimization with restarts.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Converged when the spread of simplex values falls below
    /// `f_tol * (|f_best| + f_tol)`.
    pub f_tol: f64,
    /// Restarts from the best vertex with a fresh simplex; stops early when a
    /// restart no longer improves the minimum.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            f_tol: 1e-12,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0` with initial simplex steps `scale`.
pub fn nelder_mead<F>(f: F, x0: &[f64], scale: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let mut best = single_run(&f, x0, scale, opts.max_evals, opts.f_tol);
    let mut evals = best.evals;
    for _ in 0..opts.restarts {
        if evals >= opts.max_evals {
            break;
        }
        let next = single_run(&f, &best.x, scale, opts.max_evals - evals, opts.f_tol);
        evals += next.evals;
        let improved = next.f < best.f - opts.f_tol * (best.f.abs() + opts.f_tol);
        if next.f <= best.f {
            best = Minimum { evals, ..next };
        }
        if !improved {
            break;
        }
    }
    best.evals = evals;
    best
}

fn single_run<F>(f: &F, x0: &[f64], scale: &[f64], max_evals: usize, f_tol: f64) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;

    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;

    let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
    };

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        if spread.abs() <= f_tol * (values[0].abs() + f_tol) {
            return Minimum {
                x: simplex.swap_remove(0),
                f: values[0],
                evals,
                converged: true,
            };
        }
        if evals >= max_evals {
            return Minimum {
                x: simplex.swap_remove(0),
                f: values[0],
                evals,
                converged: false,
            };
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();

        let reflected = blend(&centroid, &worst, -ALPHA);
        let fr = f(&reflected);
        evals += 1;

        if fr < values[0] {
            let expanded = blend(&centroid, &worst, -GAMMA);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let c = blend(&centroid, &reflected, RHO);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = blend(&centroid, &worst, RHO);
                let fc = f(&c);
                (c, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                // shrink toward the best vertex
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = blend(&best, &simplex[i], SIGMA);
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            m.x
        );
    }

    #[test]
    fn shifted_quadratic_in_five_dims() {
        let target = [3.0, -1.0, 0.5, 10.0, -7.0];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        let m = nelder_mead(f, &[0.0; 5], &[1.0; 5], &NelderMeadOptions::default());
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_budget_is_reported() {
        let f = |x: &[f64]| (x[0] - 1.0).abs().sqrt() + (x[1] + 2.0).powi(2);
        let m = nelder_mead(
            f,
            &[10.0, 10.0],
            &[1.0, 1.0],
            &NelderMeadOptions {
                max_evals: 15,
                f_tol: 1e-15,
                restarts: 0,
            },
        );
        assert!(!m.converged);
        assert!(m.evals >= 15);
    }
}
