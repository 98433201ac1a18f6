//! Kernel mean-embedding discrepancies: plain MMD, class-conditional local
//! MMD, and its example-weighted (curricular) variant.
//!
//! All estimators are the squared RKHS distance between weighted kernel mean
//! embeddings, `||sum_i a_i phi(s_i) - sum_j b_j phi(t_j)||^2`, expanded with
//! the kernel trick (diagonal terms included, so identical batches give 0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Multipliers applied to the median-heuristic bandwidth.
pub const BANDWIDTH_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// Average of `exp(-|x - y|^2 / (2 sigma^2))` over the bandwidths.
    Rbf { bandwidths: Vec<f64> },
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Kernel {
    pub fn rbf(bandwidth: f64) -> Self {
        Kernel::Rbf {
            bandwidths: vec![bandwidth],
        }
    }

    /// Multi-bandwidth RBF around `sqrt(median squared pairwise distance)`
    /// of the pooled points.
    pub fn median_heuristic<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let mut d2 = Vec::new();
        for i in 0..points.len() {
            for j in 0..i {
                let d = sq_dist(points[i].as_ref(), points[j].as_ref());
                if d > 0.0 {
                    d2.push(d);
                }
            }
        }
        if d2.is_empty() {
            return Err(Error::DegenerateGeometry("no distinct points for the median heuristic".into()));
        }
        let base = crate::curriculum::median(&d2).expect("nonempty").sqrt();
        Ok(Kernel::Rbf {
            bandwidths: BANDWIDTH_MULTIPLIERS.iter().map(|m| m * base).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Kernel::Rbf { bandwidths } = self {
            if bandwidths.is_empty() || bandwidths.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
                return Err(Error::invalid("bandwidths", "need one or more positive bandwidths"));
            }
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { bandwidths } => {
                let d2 = sq_dist(a, b);
                bandwidths.iter().map(|s| (-d2 / (2.0 * s * s)).exp()).sum::<f64>() / bandwidths.len() as f64
            }
        }
    }

    /// Adds `coef * d k(a, b) / d a` into `out`.
    fn add_grad_first(&self, a: &[f64], b: &[f64], coef: f64, out: &mut [f64]) {
        match self {
            Kernel::Linear => {
                for (o, bi) in out.iter_mut().zip(b) {
                    *o += coef * bi;
                }
            }
            Kernel::Rbf { bandwidths } => {
                let d2 = sq_dist(a, b);
                let m = bandwidths.len() as f64;
                let factor: f64 = bandwidths
                    .iter()
                    .map(|s| -(-d2 / (2.0 * s * s)).exp() / (s * s))
                    .sum::<f64>()
                    / m;
                for ((o, ai), bi) in out.iter_mut().zip(a).zip(b) {
                    *o += coef * factor * (ai - bi);
                }
            }
        }
    }
}

/// Squared distance between weighted mean embeddings plus gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub value: f64,
    /// Gradient per source point (empty unless requested).
    pub grad_source: Vec<Vec<f64>>,
    /// Gradient per target point (empty unless requested).
    pub grad_target: Vec<Vec<f64>>,
}

/// One weighted term `u ||sum a_i phi(s_i) - sum b_j phi(t_j)||^2`.
struct Term {
    u: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn check_points<P: AsRef<[f64]>>(source: &[P], target: &[P]) -> Result<usize> {
    let s0 = source.first().ok_or_else(|| Error::Empty("source batch".into()))?;
    if target.is_empty() {
        return Err(Error::Empty("target batch".into()));
    }
    let dim = s0.as_ref().len();
    for p in source.iter().chain(target) {
        if p.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.as_ref().len(),
            });
        }
    }
    Ok(dim)
}

fn evaluate<P: AsRef<[f64]> + Sync>(
    kernel: &Kernel,
    source: &[P],
    target: &[P],
    terms: &[Term],
    with_grad: bool,
    exec: Exec,
) -> Discrepancy {
    let ns = source.len();
    let nt = target.len();
    let dim = source[0].as_ref().len();

    if let Kernel::Linear = kernel {
        // Explicit feature map: phi(x) = x.
        let mut value = 0.0;
        let mut gs = vec![vec![0.0; dim]; if with_grad { ns } else { 0 }];
        let mut gt = vec![vec![0.0; dim]; if with_grad { nt } else { 0 }];
        for term in terms {
            let mut diff = vec![0.0; dim];
            for (p, &w) in source.iter().zip(&term.a) {
                for (d, x) in diff.iter_mut().zip(p.as_ref()) {
                    *d += w * x;
                }
            }
            for (p, &w) in target.iter().zip(&term.b) {
                for (d, x) in diff.iter_mut().zip(p.as_ref()) {
                    *d -= w * x;
                }
            }
            value += term.u * dot(&diff, &diff);
            if with_grad {
                for (g, &w) in gs.iter_mut().zip(&term.a) {
                    for (gi, di) in g.iter_mut().zip(&diff) {
                        *gi += 2.0 * term.u * w * di;
                    }
                }
                for (g, &w) in gt.iter_mut().zip(&term.b) {
                    for (gi, di) in g.iter_mut().zip(&diff) {
                        *gi -= 2.0 * term.u * w * di;
                    }
                }
            }
        }
        return Discrepancy {
            value,
            grad_source: gs,
            grad_target: gt,
        };
    }

    // Pairwise coefficient matrices summed over terms.
    let coef_ss = |i: usize, j: usize| terms.iter().map(|t| t.u * t.a[i] * t.a[j]).sum::<f64>();
    let coef_tt = |i: usize, j: usize| terms.iter().map(|t| t.u * t.b[i] * t.b[j]).sum::<f64>();
    let coef_st = |i: usize, j: usize| terms.iter().map(|t| t.u * t.a[i] * t.b[j]).sum::<f64>();

    // Row i of the source block: value contribution and gradient for s_i.
    let source_rows = exec.map(ns, |i| {
        let si = source[i].as_ref();
        let mut v = 0.0;
        let mut g = vec![0.0; if with_grad { dim } else { 0 }];
        for (j, sj) in source.iter().enumerate() {
            let c = coef_ss(i, j);
            if c != 0.0 {
                v += c * kernel.eval(si, sj.as_ref());
                if with_grad {
                    kernel.add_grad_first(si, sj.as_ref(), 2.0 * c, &mut g);
                }
            }
        }
        for (j, tj) in target.iter().enumerate() {
            let c = coef_st(i, j);
            if c != 0.0 {
                v -= 2.0 * c * kernel.eval(si, tj.as_ref());
                if with_grad {
                    kernel.add_grad_first(si, tj.as_ref(), -2.0 * c, &mut g);
                }
            }
        }
        (v, g)
    });
    let target_rows = exec.map(nt, |j| {
        let tj = target[j].as_ref();
        let mut v = 0.0;
        let mut g = vec![0.0; if with_grad { dim } else { 0 }];
        for (l, tl) in target.iter().enumerate() {
            let c = coef_tt(j, l);
            if c != 0.0 {
                v += c * kernel.eval(tj, tl.as_ref());
                if with_grad {
                    kernel.add_grad_first(tj, tl.as_ref(), 2.0 * c, &mut g);
                }
            }
        }
        if with_grad {
            for (i, si) in source.iter().enumerate() {
                let c = coef_st(i, j);
                if c != 0.0 {
                    kernel.add_grad_first(tj, si.as_ref(), -2.0 * c, &mut g);
                }
            }
        }
        (v, g)
    });
    let mut value = 0.0;
    let mut gs = Vec::with_capacity(if with_grad { ns } else { 0 });
    let mut gt = Vec::with_capacity(if with_grad { nt } else { 0 });
    for (v, g) in source_rows {
        value += v;
        if with_grad {
            gs.push(g);
        }
    }
    for (v, g) in target_rows {
        value += v;
        if with_grad {
            gt.push(g);
        }
    }
    Discrepancy {
        value,
        grad_source: gs,
        grad_target: gt,
    }
}

/// Plain MMD between two batches (uniform weights), averaged over the
/// kernel's bandwidths.
pub fn mmd<P: AsRef<[f64]> + Sync>(kernel: &Kernel, source: &[P], target: &[P]) -> Result<f64> {
    Ok(mmd_with_grad(kernel, source, target, false, Exec::default())?.value)
}

pub fn mmd_with_grad<P: AsRef<[f64]> + Sync>(
    kernel: &Kernel,
    source: &[P],
    target: &[P],
    with_grad: bool,
    exec: Exec,
) -> Result<Discrepancy> {
    kernel.validate()?;
    check_points(source, target)?;
    let term = Term {
        u: 1.0,
        a: vec![1.0 / source.len() as f64; source.len()],
        b: vec![1.0 / target.len() as f64; target.len()],
    };
    Ok(evaluate(kernel, source, target, &[term], with_grad, exec))
}

/// How the per-class weights `u_k` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `u_k = 1 / C`.
    Uniform,
    /// `u_k` = source class frequency in the batch.
    SourceFrequency,
    Explicit(Vec<f64>),
}

impl ClassWeighting {
    pub fn resolve(&self, labels: &[usize], classes: usize) -> Result<Vec<f64>> {
        match self {
            ClassWeighting::Uniform => Ok(vec![1.0 / classes as f64; classes]),
            ClassWeighting::SourceFrequency => {
                let mut u = vec![0.0; classes];
                for &y in labels {
                    u[y] += 1.0 / labels.len() as f64;
                }
                Ok(u)
            }
            ClassWeighting::Explicit(u) => {
                if u.len() != classes {
                    return Err(Error::LengthMismatch {
                        what: "class weights u",
                        expected: classes,
                        found: u.len(),
                    });
                }
                Ok(u.clone())
            }
        }
    }
}

/// Inputs to the class-conditional discrepancy.
#[derive(Debug, Clone, Copy)]
pub struct LocalMmdInput<'a, P> {
    pub source: &'a [P],
    pub labels: &'a [usize],
    /// Per-source-example weights `d_s`; `None` means all ones.
    pub example_weights: Option<&'a [f64]>,
    pub target: &'a [P],
    /// Soft pseudo-label rows for the target, each summing to one.
    pub pseudo_probabilities: &'a [Vec<f64>],
    pub class_weights: &'a [f64],
}

/// `sum_k u_k MMD_k`, where the class-`k` source embedding averages source
/// points of label `k` (weighted by `d_s` when given, then renormalized) and
/// the class-`k` target embedding averages target points weighted by their
/// column-`k` pseudo-probability. Classes with zero weight on either side
/// contribute nothing.
pub fn local_mmd_with_grad<P: AsRef<[f64]> + Sync>(
    kernel: &Kernel,
    input: &LocalMmdInput<'_, P>,
    with_grad: bool,
    exec: Exec,
) -> Result<Discrepancy> {
    kernel.validate()?;
    check_points(input.source, input.target)?;
    let ns = input.source.len();
    let nt = input.target.len();
    let classes = input.class_weights.len();
    if input.labels.len() != ns {
        return Err(Error::LengthMismatch {
            what: "source labels",
            expected: ns,
            found: input.labels.len(),
        });
    }
    if input.pseudo_probabilities.len() != nt {
        return Err(Error::LengthMismatch {
            what: "pseudo-probabilities",
            expected: nt,
            found: input.pseudo_probabilities.len(),
        });
    }
    for (row, p) in input.pseudo_probabilities.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.len() != classes || (sum - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0) {
            return Err(Error::NotProbabilities { row, sum });
        }
    }
    for &y in input.labels {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
    }
    let weights = match input.example_weights {
        Some(w) => {
            if w.len() != ns {
                return Err(Error::LengthMismatch {
                    what: "example weights",
                    expected: ns,
                    found: w.len(),
                });
            }
            if w.iter().any(|d| !(0.0..=1.0).contains(d)) {
                return Err(Error::invalid("example weights", "must lie in [0, 1]"));
            }
            w.to_vec()
        }
        None => vec![1.0; ns],
    };

    let mut terms = Vec::with_capacity(classes);
    for k in 0..classes {
        let mut a: Vec<f64> = (0..ns)
            .map(|i| if input.labels[i] == k { weights[i] } else { 0.0 })
            .collect();
        let mut b: Vec<f64> = input.pseudo_probabilities.iter().map(|p| p[k]).collect();
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        if sa <= 0.0 || sb <= 0.0 {
            continue;
        }
        a.iter_mut().for_each(|v| *v /= sa);
        b.iter_mut().for_each(|v| *v /= sb);
        terms.push(Term {
            u: input.class_weights[k],
            a,
            b,
        });
    }
    if terms.is_empty() {
        return Err(Error::DegenerateGeometry(
            "no class carries weight in both the source and the target batch".into(),
        ));
    }
    Ok(evaluate(kernel, input.source, input.target, &terms, with_grad, exec))
}

/// Class-conditional MMD with uniform example weights.
pub fn local_mmd<P: AsRef<[f64]> + Sync>(
    kernel: &Kernel,
    source: &[P],
    labels: &[usize],
    target: &[P],
    pseudo_probabilities: &[Vec<f64>],
    class_weights: &[f64],
) -> Result<f64> {
    let input = LocalMmdInput {
        source,
        labels,
        example_weights: None,
        target,
        pseudo_probabilities,
        class_weights,
    };
    Ok(local_mmd_with_grad(kernel, &input, false, Exec::default())?.value)
}

/// Class-conditional MMD where each source example's contribution to its
/// class embedding is scaled by `d_s` before normalization.
pub fn curricular_local_mmd<P: AsRef<[f64]> + Sync>(
    kernel: &Kernel,
    source: &[P],
    labels: &[usize],
    example_weights: &[f64],
    target: &[P],
    pseudo_probabilities: &[Vec<f64>],
    class_weights: &[f64],
) -> Result<f64> {
    let input = LocalMmdInput {
        source,
        labels,
        example_weights: Some(example_weights),
        target,
        pseudo_probabilities,
        class_weights,
    };
    Ok(local_mmd_with_grad(kernel, &input, false, Exec::default())?.value)
}
