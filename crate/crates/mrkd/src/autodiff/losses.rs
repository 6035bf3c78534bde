//! Classification and distillation losses.
//!
//! Probabilities are clamped at `PROB_EPS` inside every logarithm, and
//! the backward pass differentiates the clamped forward exactly, so
//! gradient checks hold even on saturated rows.

use super::graph::{BackwardFn, Graph, Var};
use super::ops::KlDirection;
use super::tensor::{Element, Tensor};
use super::AutodiffError;

/// Floor applied inside logarithms; forward and backward use the same one.
pub const PROB_EPS: f64 = 1e-12;

/// Row sums may drift this far from 1 before a distribution is rejected.
const ROW_SUM_TOL: f64 = 1e-4;

/// Loss components of one training step. `l_d` is always the plain sum
/// of the other two, computed in the same precision.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub l_ce: f32,
    pub l_kl: f32,
    pub l_d: f32,
}

impl LossValues {
    pub fn new(l_ce: f32, l_kl: f32) -> Self {
        Self { l_ce, l_kl, l_d: l_ce + l_kl }
    }
}

/// Temperature-softened softmax over rows of a flat row-major matrix.
/// Subtracts each row's maximum before exponentiating, so logits up to
/// |1e4| stay finite.
pub fn soften_rows<E: Element>(
    logits: &[E],
    m: usize,
    temperature: E,
) -> Result<Vec<E>, AutodiffError> {
    if m < 2 {
        return Err(AutodiffError::Parameter(format!(
            "soften needs at least 2 classes, got {m}"
        )));
    }
    if !temperature.is_finite() || temperature <= E::ZERO {
        return Err(AutodiffError::Parameter(format!(
            "soften temperature must be positive and finite, got {temperature}"
        )));
    }
    if logits.is_empty() || logits.len() % m != 0 {
        return Err(AutodiffError::Shape {
            op: "soften",
            detail: format!("{} logits do not form rows of {m}", logits.len()),
        });
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(AutodiffError::NonFinite { op: "soften" });
    }
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(m) {
        let mut max = row[0];
        for &v in &row[1..] {
            max = max.max_of(v);
        }
        let mut sum = E::ZERO;
        let start = out.len();
        for &v in row {
            let e = ((v - max) / temperature).exp();
            sum += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Entropy of each row in nats; rows must already be distributions.
pub fn row_entropies<E: Element>(probs: &[E], m: usize) -> Vec<f64> {
    probs
        .chunks_exact(m)
        .map(|row| {
            row.iter()
                .map(|&p| {
                    let p = p.to_f64();
                    if p > 0.0 { -p * p.ln() } else { 0.0 }
                })
                .sum()
        })
        .collect()
}

fn validate_distribution<E: Element>(
    op: &'static str,
    name: &str,
    t: &Tensor<E>,
) -> Result<(usize, usize), AutodiffError> {
    let (n, m) = t.dims2(op)?;
    if n == 0 || m == 0 {
        return Err(AutodiffError::Shape {
            op,
            detail: format!("{name} has empty shape {:?}", t.shape()),
        });
    }
    for (r, row) in t.data().chunks_exact(m).enumerate() {
        let mut sum = 0.0f64;
        for &v in row {
            let v = v.to_f64();
            if v < 0.0 {
                return Err(AutodiffError::Distribution(format!(
                    "{op}: {name} row {r} has negative entry {v}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(AutodiffError::Distribution(format!(
                "{op}: {name} row {r} sums to {sum}, expected 1"
            )));
        }
    }
    Ok((n, m))
}

impl<E: Element> Graph<E> {
    /// Softened softmax over the rows of a (n, m) logits matrix.
    pub fn soften(&mut self, logits: Var, temperature: E) -> Result<Var, AutodiffError> {
        const OP: &str = "soften";
        let (n, m) = self.value(logits).dims2(OP)?;
        let probs = soften_rows(self.value(logits).data(), m, temperature)?;
        let value = Tensor::new(vec![n, m], probs)?;
        let backward: Option<BackwardFn<E>> = self.requires_grad(logits).then(|| {
            let y = value.data().to_vec();
            Box::new(move |_values: &[Tensor<E>], gout: &Tensor<E>| {
                let g = gout.data();
                let mut dz = vec![E::ZERO; y.len()];
                for r in 0..n {
                    let row = r * m;
                    let mut inner = E::ZERO;
                    for j in 0..m {
                        inner += g[row + j] * y[row + j];
                    }
                    for j in 0..m {
                        dz[row + j] = y[row + j] / temperature * (g[row + j] - inner);
                    }
                }
                vec![Some(Tensor::new(vec![n, m], dz).expect("soften dz shape"))]
            }) as BackwardFn<E>
        });
        self.push(OP, value, vec![logits], backward)
    }

    /// Mean cross-entropy between probability rows and target rows.
    /// Targets may be soft (mixup); gradients flow through `probs` only.
    pub fn cross_entropy(&mut self, probs: Var, targets: Var) -> Result<Var, AutodiffError> {
        const OP: &str = "cross_entropy";
        let (n, m) = validate_distribution(OP, "probs", self.value(probs))?;
        let (tn, tm) = self.value(targets).dims2(OP)?;
        if (tn, tm) != (n, m) {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "probs shape {:?} vs targets shape {:?}",
                    self.value(probs).shape(),
                    self.value(targets).shape()
                ),
            });
        }
        validate_distribution(OP, "targets", self.value(targets))?;

        let eps = E::from_f64(PROB_EPS);
        let inv_n = E::ONE / E::from_f64(n as f64);
        let mut total = E::ZERO;
        {
            let pv = self.value(probs).data();
            let tv = self.value(targets).data();
            for (&p, &t) in pv.iter().zip(tv) {
                total += t * p.max_of(eps).ln();
            }
        }
        let value = Tensor::scalar(E::ZERO - total * inv_n);

        let backward: Option<BackwardFn<E>> = self.requires_grad(probs).then(|| {
            let (pid, tid) = (probs.id, targets.id);
            Box::new(move |values: &[Tensor<E>], gout: &Tensor<E>| {
                let g = gout.item();
                let pv = values[pid].data();
                let tv = values[tid].data();
                let dp: Vec<E> = pv
                    .iter()
                    .zip(tv)
                    .map(|(&p, &t)| {
                        if p >= eps {
                            E::ZERO - g * inv_n * t / p
                        } else {
                            E::ZERO
                        }
                    })
                    .collect();
                vec![Some(Tensor::new(vec![n, m], dp).expect("ce dp shape")), None]
            }) as BackwardFn<E>
        });
        self.push(OP, value, vec![probs, targets], backward)
    }

    /// Mean row-wise KL divergence between student and teacher
    /// distributions. The teacher is treated as data: no gradient ever
    /// flows into it.
    pub fn kl_to_teacher(
        &mut self,
        student: Var,
        teacher: Var,
        direction: KlDirection,
    ) -> Result<Var, AutodiffError> {
        const OP: &str = "kl_to_teacher";
        let (n, m) = validate_distribution(OP, "student", self.value(student))?;
        let (tn, tm) = self.value(teacher).dims2(OP)?;
        if (tn, tm) != (n, m) {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "student shape {:?} vs teacher shape {:?}",
                    self.value(student).shape(),
                    self.value(teacher).shape()
                ),
            });
        }
        validate_distribution(OP, "teacher", self.value(teacher))?;

        let eps = E::from_f64(PROB_EPS);
        let inv_n = E::ONE / E::from_f64(n as f64);
        let mut total = E::ZERO;
        {
            let sv = self.value(student).data();
            let tv = self.value(teacher).data();
            for (&s, &t) in sv.iter().zip(tv) {
                let cs = s.max_of(eps);
                let ct = t.max_of(eps);
                match direction {
                    KlDirection::Forward => total += s * (cs.ln() - ct.ln()),
                    KlDirection::Reverse => total += t * (ct.ln() - cs.ln()),
                }
            }
        }
        let value = Tensor::scalar(total * inv_n);

        let backward: Option<BackwardFn<E>> = self.requires_grad(student).then(|| {
            let (sid, tid) = (student.id, teacher.id);
            Box::new(move |values: &[Tensor<E>], gout: &Tensor<E>| {
                let g = gout.item();
                let sv = values[sid].data();
                let tv = values[tid].data();
                let ds: Vec<E> = sv
                    .iter()
                    .zip(tv)
                    .map(|(&s, &t)| {
                        let cs = s.max_of(eps);
                        let ct = t.max_of(eps);
                        match direction {
                            KlDirection::Forward => {
                                let indicator = if s >= eps { E::ONE } else { E::ZERO };
                                g * inv_n * (cs.ln() - ct.ln() + indicator)
                            }
                            KlDirection::Reverse => {
                                if s >= eps {
                                    E::ZERO - g * inv_n * t / cs
                                } else {
                                    E::ZERO
                                }
                            }
                        }
                    })
                    .collect();
                vec![Some(Tensor::new(vec![n, m], ds).expect("kl ds shape")), None]
            }) as BackwardFn<E>
        });
        self.push(OP, value, vec![student, teacher], backward)
    }
}
