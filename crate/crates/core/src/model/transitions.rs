use alloc::format;
use alloc::string::ToString;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::{SeriesHMM, StateId, StateSequence, PROB_FLOOR};
use crate::math::{exp, ln};
use crate::{Error, Result};

/// `Gamma(shape, 1)` draw, floored away from zero. Small shapes go through
/// `Gamma(shape + 1) · U^{1/shape}` in log space, which does not underflow.
pub(crate) fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let g = if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive gamma shape").sample(rng)
    } else {
        let big: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive gamma shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        exp(ln(big) + ln(u) / shape)
    };
    g.max(PROB_FLOOR)
}

/// Draws every row `i` of the transition matrix from
/// `Dirichlet(γ + κ·e_i + counts_i)`, where counts are the observed
/// transitions of `seq` among the `active` states.
pub fn sample_transitions<R: Rng + ?Sized>(
    seq: &StateSequence,
    active: &[StateId],
    gamma: f64,
    kappa: f64,
    rng: &mut R,
) -> Result<SeriesHMM> {
    if seq.z.is_empty() {
        return Err(Error::InvalidParameter(format!("series `{}` has an empty state sequence", seq.id)));
    }
    if active.is_empty() || active.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("active states must be nonempty and strictly ascending".into()));
    }
    let m = active.len();
    let pos = |s: StateId| active.binary_search(&s).ok();
    let mut counts = DMatrix::<f64>::zeros(m, m);
    for w in seq.z.windows(2) {
        match (pos(w[0]), pos(w[1])) {
            (Some(a), Some(b)) => counts[(a, b)] += 1.0,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "series `{}` visits a state outside its active set",
                    seq.id
                )))
            }
        }
    }
    if let Some(bad) = seq.z.first().filter(|s| pos(**s).is_none()) {
        return Err(Error::InvalidParameter(format!("series `{}` starts in inactive state {bad}", seq.id)));
    }
    let weights = DMatrix::from_fn(m, m, |i, j| {
        let shape = gamma + if i == j { kappa } else { 0.0 } + counts[(i, j)];
        sample_gamma(shape, rng)
    });
    Ok(SeriesHMM::from_weights(seq.id.to_string(), active.to_vec(), weights))
}
