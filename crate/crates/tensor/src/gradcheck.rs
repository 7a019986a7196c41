//! Central finite-difference validation of analytic gradients in 64-bit.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{Result, TensorError};
use crate::init::substream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Magnitude floor of the relative-error denominator; keeps near-zero
    /// gradients from turning round-off into large relative errors.
    pub floor: f64,
    /// Check at most this many coordinates per input (sampled), `None` = all.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Largest share of checked coordinates allowed to sit on a kink at
    /// every probed step.
    pub max_kink_share: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            floor: 1e-4,
            max_coords: None,
            seed: 0,
            max_kink_share: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates left out because the function is not smooth around them.
    pub kinks: usize,
    pub worst: Option<Mismatch>,
    pub tol: f64,
    pub passed: bool,
}

/// Compare tape gradients of `f` with central differences.
///
/// `f` receives the inputs as tape leaves; a non-scalar result is reduced by
/// a fixed seeded random projection so every output element contributes.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], f: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut projection: Option<Vec<f64>> = None;
    let mut eval = |vals: &[Tensor<f64>], want_grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let len = tape.value(out).len();
        let loss = if len == 1 {
            out
        } else {
            let w = projection
                .get_or_insert_with(|| {
                    let mut rng = substream(opts.seed, "gradcheck-projection");
                    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
                })
                .clone();
            tape.weighted_sum(out, w)?
        };
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "gradcheck" });
        }
        let grads = if want_grads {
            let g = tape.backward(loss)?;
            vars.iter()
                .zip(vals)
                .map(|(&v, t)| g.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    check_gradients(inputs, &analytic, |vals| eval(vals, false).map(|(v, _)| v), opts)
}

fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare supplied analytic gradients against central differences of
/// `value`.
///
/// At each coordinate the forward and backward one-sided differences must
/// agree within `tol`; otherwise the probe straddles a kink (a ReLU or max
/// switching sides) and the step shrinks tenfold, down to `eps/100`.
/// Coordinates still unsmooth there are counted in `kinks` and left out.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    mut value: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    let mut rng = substream(opts.seed, "gradcheck-coords");
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst: Option<Mismatch> = None;
    let (mut checked, mut kinks) = (0, 0);
    let base = value(inputs)?;

    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < input.len() => {
                let mut c = sample(&mut rng, input.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            let mut sides = |h: f64| -> Result<(f64, f64)> {
                work[i].data_mut()[c] = orig + h;
                let plus = value(&work)?;
                work[i].data_mut()[c] = orig - h;
                let minus = value(&work)?;
                work[i].data_mut()[c] = orig;
                let (fwd, bwd) = ((plus - base) / h, (base - minus) / h);
                if !(fwd.is_finite() && bwd.is_finite()) {
                    return Err(TensorError::NonFinite { op: "gradcheck" });
                }
                Ok((fwd, bwd))
            };
            let mut numeric = None;
            let mut h = opts.eps;
            for _ in 0..3 {
                let (fwd, bwd) = sides(h)?;
                if rel_diff(fwd, bwd, opts.floor) <= opts.tol {
                    numeric = Some((fwd + bwd) / 2.0);
                    break;
                }
                h /= 10.0;
            }
            let a = analytic[i][c];
            if !a.is_finite() {
                return Err(TensorError::NonFinite { op: "gradcheck" });
            }
            checked += 1;
            let Some(numeric) = numeric else {
                kinks += 1;
                continue;
            };
            let rel = rel_diff(a, numeric, opts.floor);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some(Mismatch {
                    input: i,
                    coord: c,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    let kink_ok = kinks as f64 <= opts.max_kink_share * checked as f64;
    Ok(GradcheckReport {
        max_rel_error: max_rel,
        checked,
        kinks,
        worst,
        tol: opts.tol,
        passed: max_rel < opts.tol && kink_ok,
    })
}
