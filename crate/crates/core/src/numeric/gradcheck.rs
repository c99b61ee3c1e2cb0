use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{ParamId, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Which coordinates to probe.
#[derive(Debug, Clone, Copy)]
pub enum Coordinates {
    All,
    /// `count` coordinates drawn uniformly (with replacement) over all
    /// parameters, reproducible from `seed`.
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (param, flat index, analytic, numeric) at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(ParamId(i), p)).collect();
    Ok(f(&tape, &vars)?.item())
}

/// Compares tape gradients against central differences
/// `(f(θ+h) − f(θ−h)) / 2h`, reporting the largest relative error
/// `|a − n| / (|a| + |n| + 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, coords: Coordinates) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(ParamId(i), p)).collect();
        let loss = f(&tape, &vars)?;
        tape.backward(loss)?
    };

    let total: usize = params.iter().map(Tensor::len).sum();
    let locate = |mut flat: usize| {
        for (i, p) in params.iter().enumerate() {
            if flat < p.len() {
                return (i, flat);
            }
            flat -= p.len();
        }
        unreachable!()
    };
    let picks: Vec<(usize, usize)> = match coords {
        Coordinates::All => (0..total).map(locate).collect(),
        Coordinates::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| locate(rng.gen_range(0..total))).collect()
        }
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (pi, j) in picks {
        let orig = work[pi].data()[j];
        work[pi].data_mut()[j] = orig + h;
        let up = eval(&f, &work)?;
        work[pi].data_mut()[j] = orig - h;
        let down = eval(&f, &work)?;
        work[pi].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.get(ParamId(pi)).map_or(0.0, |g| g.data()[j]);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((pi, j, a, numeric));
        }
    }
    Ok(report)
}
