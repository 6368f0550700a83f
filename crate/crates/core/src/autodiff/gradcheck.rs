//! Central finite-difference gradient checking.

use super::array::Array;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks a scalar function of one array against central differences.
///
/// `f` receives a fresh eval-mode tape and the node holding the point.
pub fn grad_check<F>(f: F, point: &Array<f64>, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    grad_check_many(
        |tape, ids| f(tape, ids[0]),
        std::slice::from_ref(point),
        None,
        h,
        tolerance,
    )
}

/// Checks a scalar function of several arrays.
///
/// With `coords = None` every coordinate of every input is checked; otherwise
/// only the listed `(input, flat index)` pairs.
pub fn grad_check_many<F>(
    f: F,
    points: &[Array<f64>],
    coords: Option<&[(usize, usize)]>,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |pts: &[Array<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &ids)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &ids)?;
    let base = tape.value(out).item();
    if eval(points)?.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Array<f64>> = ids.iter().map(|&id| grads.wrt(id)).collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = points
                .iter()
                .enumerate()
                .flat_map(|(i, p)| (0..p.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut work = points.to_vec();
    let mut worst = 0.0f64;
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + h;
        let plus = eval(&work)?;
        work[i].data_mut()[j] = orig - h;
        let minus = eval(&work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i].data()[j], numeric));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        coordinates: coords.len(),
        passed: worst <= tolerance,
    })
}
