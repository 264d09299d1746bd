use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Checks every coordinate of every tensor in `point`.
///
/// `build` receives a fresh graph and the parameter node ids (one per entry
/// of `point`, in order) and returns the scalar root. The relative error of
/// a coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(build: F, point: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::contract(format!("step h must be positive, got {h}")));
    }
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = point.iter().map(|t| graph.param(t.clone())).collect();
    let root = build(&mut graph, &ids)?;
    let grads = graph.backward(root)?;

    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
        let r = build(&mut g, &ids)?;
        Ok(g.value(r).item())
    };

    let mut work: Vec<Tensor> = point.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for (pi, id) in ids.iter().enumerate() {
        let analytic = &grads[id];
        for c in 0..point[pi].numel() {
            let orig = point[pi].data()[c];
            work[pi].data_mut()[c] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[c] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at perturbed point (param {pi}, coord {c})"
                )));
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[c];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, c);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::from_rows(&[vec![0.5, -1.5, 2.0]]).unwrap();
        let r = grad_check(
            |g, ids| {
                let s = g.square(ids[0]);
                let t = g.scale(s, 3.0);
                Ok(g.sum(t))
            },
            &[p],
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coordinates, 3);
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let p = Tensor::from_rows(&[vec![0.7, -0.3, 1.9, -2.2]]).unwrap();
        let r = grad_check(
            |g, ids| {
                let y = g.leaky_relu(ids[0], 0.2)?;
                let w = g.square(y);
                Ok(g.sum(w))
            },
            &[p],
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn non_positive_step_rejected() {
        let p = Tensor::scalar(1.0);
        let build = |g: &mut Graph, ids: &[NodeId]| Ok(g.square(ids[0]));
        assert!(grad_check(build, std::slice::from_ref(&p), 0.0).is_err());
        assert!(grad_check(build, &[p], -1.0).is_err());
    }

    #[test]
    fn non_finite_perturbation_reported() {
        // log(x) at x = h: the lower probe hits log(0).
        let p = Tensor::scalar(1e-4);
        let err = grad_check(|g, ids| Ok(g.log(ids[0])), &[p], 1e-4).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
