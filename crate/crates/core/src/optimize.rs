//! Box-constrained Nelder–Mead simplex search.
//!
//! The search runs in coordinates normalized to the unit box; trial points
//! are projected back onto the box, so every objective evaluation is
//! feasible.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Simplex diameter in normalized coordinates.
    pub x_tolerance: f64,
    /// Spread of objective values across the simplex.
    pub f_tolerance: f64,
    /// Initial edge length in normalized coordinates.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            x_tolerance: 1e-9,
            f_tolerance: 1e-14,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Scaled<'a, F> {
    f: &'a F,
    bounds: &'a [(f64, f64)],
    evaluations: usize,
}

impl<F: Fn(&[f64]) -> f64> Scaled<'_, F> {
    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.bounds)
            .map(|(&ui, &(lo, hi))| lo + ui.clamp(0.0, 1.0) * (hi - lo))
            .collect()
    }

    fn eval(&mut self, u: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(&self.to_x(u));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn project(u: &mut [f64]) {
    u.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    let mut p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect();
    project(&mut p);
    p
}

/// Minimizes `f` over the box `bounds` starting from `x0` (clamped into it).
pub fn nelder_mead<F>(f: &F, x0: &[f64], bounds: &[(f64, f64)], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x0.len(), bounds.len(), "start point and bounds disagree in dimension");
    let n = x0.len();
    let mut obj = Scaled {
        f,
        bounds,
        evaluations: 0,
    };
    let u0: Vec<f64> = x0
        .iter()
        .zip(bounds)
        .map(|(&x, &(lo, hi))| {
            if hi > lo {
                ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();

    let mut simplex = vec![u0.clone()];
    for i in 0..n {
        let mut p = u0.clone();
        // step inward when the start sits on the upper face
        p[i] += if p[i] + opts.initial_step <= 1.0 {
            opts.initial_step
        } else {
            -opts.initial_step
        };
        project(&mut p);
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| obj.eval(p)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let f_spread = values[n] - values[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if x_spread <= opts.x_tolerance && f_spread <= opts.f_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();

        let reflected = lerp(&centroid, &worst, -1.0);
        let fr = obj.eval(&reflected);
        if fr < values[0] {
            let expanded = lerp(&centroid, &worst, -2.0);
            let fe = obj.eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = lerp(&centroid, &reflected, 0.5);
            let fc = obj.eval(&c);
            (c, fc)
        } else {
            let c = lerp(&centroid, &worst, 0.5);
            let fc = obj.eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            simplex[i] = lerp(&best, &simplex[i], 0.5);
            values[i] = obj.eval(&simplex[i]);
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum {
        x: obj.to_x(&simplex[best]),
        value: values[best],
        iterations,
        evaluations: obj.evaluations,
        converged,
    }
}
