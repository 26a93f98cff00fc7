use crate::error::Result;

use super::{Tape, Tensor, Var};

/// Default central-difference step.
pub const GRADCHECK_STEP: f64 = 5e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Maximum relative error over every checked element.
    pub max_rel_error: f64,
    /// Maximum relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub elements: usize,
    /// `(tensor, element, analytic, numeric)` at the maximum error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

const RIDDERS_LEVELS: usize = 6;

fn ridders(mut central: impl FnMut(f64) -> Result<f64>, step: f64) -> Result<f64> {
    let mut table = [[0.0f64; RIDDERS_LEVELS]; RIDDERS_LEVELS];
    let mut h = step;
    table[0][0] = central(h)?;
    let mut best = table[0][0];
    let mut best_err = f64::INFINITY;
    for i in 1..RIDDERS_LEVELS {
        h /= 2.0;
        table[0][i] = central(h)?;
        let mut fac = 4.0;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= 4.0;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= best_err {
                best_err = e;
                best = table[j][i];
            }
        }
        // Higher orders have started to amplify noise.
        if (table[i][i] - table[i - 1][i - 1]).abs() >= 2.0 * best_err {
            break;
        }
    }
    Ok(best)
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of `f` with central differences, perturbing every
/// element of every tensor in `params`.
///
/// The numeric derivative uses Ridders' extrapolation: central differences at
/// `step`, `step / 2`, ... are combined in a Neville tableau that cancels the
/// even error terms, and the entry with the smallest estimated error wins.
/// This keeps both truncation error on curved directions and rounding noise
/// on flat ones below the tolerance.
/// `f` must be deterministic. Parameter values are restored bit-exactly.
pub fn gradient_check<F>(params: &mut [Tensor], step: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.get_or_zero(v)).collect::<Vec<_>>()
    };

    let mut eval = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut per_param = vec![0.0f64; params.len()];
    let mut elements = 0;
    let mut worst: Option<(usize, usize, f64, f64)> = None;
    let mut worst_err = -1.0;
    for i in 0..params.len() {
        for j in 0..params[i].numel() {
            let orig = params[i].values()[j];
            let mut central = |params: &mut [Tensor], h: f64| -> Result<f64> {
                // The f32 grid decides the real perturbation; divide by it.
                let plus = (f64::from(orig) + h) as f32;
                let minus = (f64::from(orig) - h) as f32;
                params[i].values_mut()[j] = plus;
                let lp = eval(params)?;
                params[i].values_mut()[j] = minus;
                let lm = eval(params)?;
                params[i].values_mut()[j] = orig;
                Ok((lp - lm) / (f64::from(plus) - f64::from(minus)))
            };
            let numeric = ridders(|h| central(params, h), step)?;
            let err = rel_error(analytic[i][j], numeric);
            if err > worst_err {
                worst_err = err;
                worst = Some((i, j, analytic[i][j], numeric));
            }
            per_param[i] = per_param[i].max(err);
            elements += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: per_param.iter().copied().fold(0.0, f64::max),
        per_param,
        elements,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let mut ps = vec![Tensor::new(vec![3], vec![0.3, -0.2, 0.7]).unwrap()];
        let report = gradient_check(&mut ps, GRADCHECK_STEP, |t, v| {
            let w = t.constant(vec![3], vec![2.0, -1.0, 0.5])?;
            let p = t.mul(v[0], w)?;
            t.sum(p)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
        assert_eq!(report.elements, 3);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut ps = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
        let report = gradient_check(&mut ps, GRADCHECK_STEP, |t, _| t.constant(vec![1], vec![4.0])).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn values_are_restored() {
        let orig = vec![0.1f32, 0.2, 0.3];
        let mut ps = vec![Tensor::new(vec![3], orig.clone()).unwrap()];
        gradient_check(&mut ps, GRADCHECK_STEP, |t, v| {
            let s = t.tanh(v[0])?;
            t.sum(s)
        })
        .unwrap();
        assert_eq!(ps[0].values(), &orig[..]);
    }
}
