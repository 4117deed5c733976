use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

const STEP: f64 = 1e-5;

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

fn analytic<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect())
}

fn compare<F>(f: &F, inputs: &[Tensor], coords: &[(usize, usize)]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let grads = analytic(f, inputs)?;
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for &(t, i) in coords {
        let orig = work[t].data[i];
        work[t].data[i] = orig + STEP;
        let up = evaluate(f, &work)?;
        work[t].data[i] = orig - STEP;
        let down = evaluate(f, &work)?;
        work[t].data[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let err = (grads[t][i] - numeric).abs() / numeric.abs().max(1.0);
        if !err.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at input {t}[{i}]")));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Largest relative disagreement `|a - n| / max(1, |n|)` between the
/// analytic gradient of the scalar built by `f` and central differences,
/// over every input coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.numel()).map(move |i| (t, i)))
        .collect();
    compare(&f, inputs, &coords)
}

/// Like [`grad_check`] but on at most `samples` coordinates per input,
/// chosen by `seed`.
pub fn grad_check_sampled<F>(f: F, inputs: &[Tensor], samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (t, x) in inputs.iter().enumerate() {
        let n = x.numel();
        for i in sample(&mut rng, n, samples.min(n)) {
            coords.push((t, i));
        }
    }
    compare(&f, inputs, &coords)
}
