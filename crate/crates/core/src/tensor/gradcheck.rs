//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dd::DoubleDouble;
use super::{Matrix, Real, Tape, Var};
use crate::error::{Error, Result};

/// Tensors larger than this are checked on a random subset of coordinates.
pub const FULL_PROBE_LIMIT: usize = 512;
/// Coordinates probed per tensor above [`FULL_PROBE_LIMIT`].
pub const RANDOM_PROBES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    /// `(tensor, coordinate, analytic, numeric)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A scalar function of parameter tensors that can be evaluated at any
/// precision.
pub trait Objective {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var>;
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [1e-7, 1e-4]")));
    }
    Ok(())
}

/// Runs `numeric(tensor, coordinate)` over every coordinate of small tensors
/// and [`RANDOM_PROBES`] random coordinates of large ones.
fn probe<F>(params: &[Matrix], analytic: &[Matrix], seed: u64, mut numeric: F) -> Result<GradCheckReport>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: 0,
        worst: None,
    };
    for (t, p) in params.iter().enumerate() {
        let coords: Vec<usize> = if p.len() > FULL_PROBE_LIMIT {
            let mut c = sample(&mut rng, p.len(), RANDOM_PROBES).into_vec();
            c.sort_unstable();
            c
        } else {
            (0..p.len()).collect()
        };
        for k in coords {
            let n = numeric(t, k)?;
            let a = analytic[t].as_slice()[k];
            let err = relative_error(a, n);
            report.probes += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((t, k, a, n));
            }
        }
    }
    Ok(report)
}

fn analytic_f64<F>(f: F, params: &[Matrix]) -> Result<Vec<Matrix>>
where
    F: FnOnce(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p, true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.matrix(v)).collect())
}

/// Compares the tape gradient of `f` at `params` with central differences of
/// step `eps`, both in 64-bit.
///
/// `f` receives a fresh tape and one leaf per parameter tensor and returns
/// the scalar loss node. It must be deterministic.
pub fn gradient_check<F>(f: F, params: &[Matrix], eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let analytic = analytic_f64(&f, params)?;
    let mut work: Vec<Matrix> = params.to_vec();
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p, false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };
    probe(params, &analytic, seed, |t, k| {
        let orig = params[t].as_slice()[k];
        work[t].as_mut_slice()[k] = orig + eps;
        let plus = eval(&work)?;
        work[t].as_mut_slice()[k] = orig - eps;
        let minus = eval(&work)?;
        work[t].as_mut_slice()[k] = orig;
        Ok((plus - minus) / (2.0 * eps))
    })
}

/// As [`gradient_check`], but the central differences are evaluated in
/// double-double arithmetic, so the oracle's round-off (about
/// `1e-16·|f| / eps` in 64-bit) no longer limits the comparison for
/// coordinates with small gradients. The analytic gradient under test is
/// still the 64-bit tape gradient.
pub fn gradient_check_extended<O: Objective>(
    objective: &O,
    params: &[Matrix],
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    check_eps(eps)?;
    let analytic = analytic_f64(|t, v| objective.eval(t, v), params)?;
    let base: Vec<Vec<DoubleDouble>> = params
        .iter()
        .map(|p| p.as_slice().iter().map(|&v| DoubleDouble::from_f64(v)).collect())
        .collect();
    let step = DoubleDouble::from_f64(eps);
    let eval = |t: usize, k: usize, delta: DoubleDouble| -> Result<DoubleDouble> {
        let mut tape = Tape::<DoubleDouble>::new();
        let mut vars = Vec::with_capacity(params.len());
        for (i, (p, b)) in params.iter().zip(&base).enumerate() {
            let mut v = b.clone();
            if i == t {
                v[k] += delta;
            }
            vars.push(tape.leaf_raw(p.rows(), p.cols(), v, false)?);
        }
        let loss = objective.eval(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };
    probe(params, &analytic, seed, |t, k| {
        let plus = eval(t, k, step)?;
        let minus = eval(t, k, -step)?;
        Ok(((plus - minus) / (step + step)).to_f64())
    })
}
