//! Training objective: k-max MIL classification loss for both heads, plus
//! the overlap and ordering regularizers on the two attention tracks.
//!
//! ```text
//! total = w * (cls_ia + cls_ua) + (1 - w) * (overlap + order)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelOutputs, OutputVars, Tcam};
use crate::tensor::{top_k_indices, Tape, Tensor, Var};

/// Video-level labels: one goal-directed and one unintentional class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub goal_class: usize,
    pub unint_class: usize,
}

impl LabelVector {
    pub fn validate(&self, n_ia: usize, n_ua: usize) -> Result<()> {
        if self.goal_class >= n_ia || self.unint_class >= n_ua {
            return Err(Error::invalid(
                "label",
                format!(
                    "({}, {}) out of range for {n_ia} goal / {n_ua} unintentional classes",
                    self.goal_class, self.unint_class
                ),
            ));
        }
        Ok(())
    }
}

/// How the ordering hinge margin scales with the clip count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMargin {
    /// `1/q`, added after the centroid difference is divided by `l`.
    #[default]
    Normalized,
    /// `l/q` as literally printed; exposed for comparison runs.
    Literal,
}

impl OrderMargin {
    pub fn value(self, l: usize, q: f64) -> f64 {
        match self {
            OrderMargin::Normalized => 1.0 / q,
            OrderMargin::Literal => l as f64 / q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    /// top-k divisor: `k = max(1, floor(l / s))`
    pub s: usize,
    /// overlap allowance `l / p`
    pub p: f64,
    /// ordering margin parameter
    pub q: f64,
    pub activation_threshold: f64,
    /// weight of the classification term
    pub lambda_weight: f64,
    pub order_margin: OrderMargin,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            s: 3,
            p: 1000.0,
            q: 10.0,
            activation_threshold: 0.5,
            lambda_weight: 0.8,
            order_margin: OrderMargin::Normalized,
        }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("loss hyperparameters", msg));
        if self.s == 0 {
            return bad("s must be >= 1".into());
        }
        if self.p.is_nan() || self.p <= 0.0 {
            return bad(format!("p must be > 0, got {}", self.p));
        }
        if self.q.is_nan() || self.q < 1.0 {
            return bad(format!("q must be >= 1, got {}", self.q));
        }
        if !(self.activation_threshold > 0.0 && self.activation_threshold < 1.0) {
            return bad(format!(
                "activation_threshold must lie in (0, 1), got {}",
                self.activation_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_weight) {
            return bad(format!("lambda_weight must lie in [0, 1], got {}", self.lambda_weight));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls_ia: f64,
    pub l_cls_ua: f64,
    pub l_overlap: f64,
    pub l_order: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a LossBreakdown>) -> LossBreakdown {
        let mut acc = LossBreakdown::default();
        let mut n = 0usize;
        for b in items {
            acc.l_cls_ia += b.l_cls_ia;
            acc.l_cls_ua += b.l_cls_ua;
            acc.l_overlap += b.l_overlap;
            acc.l_order += b.l_order;
            acc.total += b.total;
            n += 1;
        }
        if n > 0 {
            let inv = 1.0 / n as f64;
            acc.l_cls_ia *= inv;
            acc.l_cls_ua *= inv;
            acc.l_overlap *= inv;
            acc.l_order *= inv;
            acc.total *= inv;
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        [self.l_cls_ia, self.l_cls_ua, self.l_overlap, self.l_order, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Number of clips averaged per class.
pub fn top_k(num_clips: usize, s: usize) -> usize {
    (num_clips / s.max(1)).max(1)
}

/// Per-class mean of the `k` largest activations of each TCAM column.
pub fn video_class_scores(tcam: &Tcam, s: usize) -> Result<Vec<f64>> {
    let l = tcam.num_clips();
    if l == 0 || tcam.num_classes() == 0 || s == 0 {
        return Err(Error::invalid("video_class_scores", "empty TCAM or s = 0"));
    }
    let k = top_k(l, s);
    Ok((0..tcam.num_classes())
        .map(|c| {
            let col = tcam.column(c);
            top_k_indices(&col, k).iter().map(|&i| col[i]).sum::<f64>() / k as f64
        })
        .collect())
}

/// Tape form of [`video_class_scores`].
pub fn class_scores_var(tape: &mut Tape, tcam: Var, s: usize) -> Result<Var> {
    let l = tape.value(tcam).rows();
    if l == 0 || s == 0 {
        return Err(Error::invalid("video_class_scores", "empty TCAM or s = 0"));
    }
    tape.topk_mean(tcam, top_k(l, s))
}

/// Cross-entropy of `softmax(A)` against a one-hot target.
pub fn mil_loss_var(tape: &mut Tape, tcam: Var, label: usize, s: usize) -> Result<Var> {
    let scores = class_scores_var(tape, tcam, s)?;
    let n = tape.value(scores).numel();
    if label >= n {
        return Err(Error::invalid("mil_loss", format!("label {label} out of range for {n} classes")));
    }
    let log_p = tape.log_softmax(scores)?;
    let picked = tape.gather(log_p, &[label])?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0))
}

/// Classification losses `(l_cls_ia, l_cls_ua)` for one video.
pub fn mil_loss(
    tcam_ia: &Tcam,
    tcam_ua: &Tcam,
    label: LabelVector,
    s: usize,
) -> Result<(f64, f64)> {
    label.validate(tcam_ia.num_classes(), tcam_ua.num_classes())?;
    let mut tape = Tape::new();
    let a = tape.constant(tcam_ia.0.clone());
    let b = tape.constant(tcam_ua.0.clone());
    let la = mil_loss_var(&mut tape, a, label.goal_class, s)?;
    let lb = mil_loss_var(&mut tape, b, label.unint_class, s)?;
    Ok((tape.value(la).item()?, tape.value(lb).item()?))
}

fn hinge_mean_over(tape: &mut Tape, track: Var, indices: &[usize], allowance: f64) -> Result<Var> {
    if indices.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let picked = tape.gather(track, indices)?;
    let m = tape.mean(picked)?;
    let shifted = tape.add_scalar(m, -allowance);
    Ok(tape.max_const(shifted, 0.0))
}

/// Overlap penalty. Index-set membership carries no gradient.
pub fn overlap_reg_var(
    tape: &mut Tape,
    lambda_ia: Var,
    lambda_ua: Var,
    activation_threshold: f64,
    p: f64,
) -> Result<Var> {
    let (ia, ua) = (tape.value(lambda_ia), tape.value(lambda_ua));
    if ia.shape() != ua.shape() {
        return Err(Error::ShapeMismatch {
            op: "overlap_reg",
            lhs: ia.shape().to_vec(),
            rhs: ua.shape().to_vec(),
        });
    }
    let active = |t: &Tensor| -> Vec<usize> {
        t.data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > activation_threshold)
            .map(|(i, _)| i)
            .collect()
    };
    let t_ua = active(ua);
    let t_ia = active(ia);
    let allowance = ia.numel() as f64 / p;
    let l_ia = hinge_mean_over(tape, lambda_ia, &t_ua, allowance)?;
    let l_ua = hinge_mean_over(tape, lambda_ua, &t_ia, allowance)?;
    tape.add(l_ia, l_ua)
}

/// Expected clip position `sum_t softmax(track)[t] * t` with `t` in `1..=l`.
pub fn centroid_var(tape: &mut Tape, track: Var) -> Result<Var> {
    let l = tape.value(track).numel();
    let p = tape.softmax(track)?;
    let pos = tape.constant(Tensor::vector((1..=l).map(|t| t as f64).collect()));
    let weighted = tape.mul(p, pos)?;
    Ok(tape.sum(weighted))
}

/// Value form of [`centroid_var`].
pub fn attention_centroid(track: &[f64]) -> f64 {
    crate::tensor::softmax(track)
        .iter()
        .enumerate()
        .map(|(i, p)| p * (i + 1) as f64)
        .sum()
}

/// Ordering hinge `max(0, (mu_ia - mu_ua) / l + margin)`.
pub fn order_reg_var(
    tape: &mut Tape,
    lambda_ia: Var,
    lambda_ua: Var,
    q: f64,
    margin: OrderMargin,
) -> Result<Var> {
    let l = tape.value(lambda_ia).numel();
    if l != tape.value(lambda_ua).numel() || l == 0 {
        return Err(Error::ShapeMismatch {
            op: "order_reg",
            lhs: tape.value(lambda_ia).shape().to_vec(),
            rhs: tape.value(lambda_ua).shape().to_vec(),
        });
    }
    let mu_ia = centroid_var(tape, lambda_ia)?;
    let mu_ua = centroid_var(tape, lambda_ua)?;
    let diff = tape.sub(mu_ia, mu_ua)?;
    let norm = tape.scale(diff, 1.0 / l as f64);
    let shifted = tape.add_scalar(norm, margin.value(l, q));
    Ok(tape.max_const(shifted, 0.0))
}

pub fn overlap_reg(ia: &[f64], ua: &[f64], activation_threshold: f64, p: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(ia.to_vec()));
    let b = tape.constant(Tensor::vector(ua.to_vec()));
    let v = overlap_reg_var(&mut tape, a, b, activation_threshold, p)?;
    tape.value(v).item()
}

pub fn order_reg(ia: &[f64], ua: &[f64], q: f64, margin: OrderMargin) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(ia.to_vec()));
    let b = tape.constant(Tensor::vector(ua.to_vec()));
    let v = order_reg_var(&mut tape, a, b, q, margin)?;
    tape.value(v).item()
}

/// Tape handles of each loss component.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_cls_ia: Var,
    pub l_cls_ua: Var,
    pub l_overlap: Var,
    pub l_order: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            l_cls_ia: tape.value(self.l_cls_ia).item()?,
            l_cls_ua: tape.value(self.l_cls_ua).item()?,
            l_overlap: tape.value(self.l_overlap).item()?,
            l_order: tape.value(self.l_order).item()?,
            total: tape.value(self.total).item()?,
        })
    }
}

pub fn total_loss_var(
    tape: &mut Tape,
    outputs: &OutputVars,
    label: LabelVector,
    hyper: &LossHyper,
) -> Result<LossVars> {
    hyper.validate()?;
    let l_cls_ia = mil_loss_var(tape, outputs.tcam_ia, label.goal_class, hyper.s)?;
    let l_cls_ua = mil_loss_var(tape, outputs.tcam_ua, label.unint_class, hyper.s)?;
    let l_overlap = overlap_reg_var(
        tape,
        outputs.lambda_ia,
        outputs.lambda_ua,
        hyper.activation_threshold,
        hyper.p,
    )?;
    let l_order = order_reg_var(tape, outputs.lambda_ia, outputs.lambda_ua, hyper.q, hyper.order_margin)?;

    let cls = tape.add(l_cls_ia, l_cls_ua)?;
    let reg = tape.add(l_overlap, l_order)?;
    let cls = tape.scale(cls, hyper.lambda_weight);
    let reg = tape.scale(reg, 1.0 - hyper.lambda_weight);
    let total = tape.add(cls, reg)?;
    Ok(LossVars {
        l_cls_ia,
        l_cls_ua,
        l_overlap,
        l_order,
        total,
    })
}

/// Loss breakdown of one video's model outputs.
pub fn total_loss(outputs: &ModelOutputs, label: LabelVector, hyper: &LossHyper) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = OutputVars {
        o_joint: tape.constant(outputs.o_joint.clone()),
        lambda_ia: tape.constant(Tensor::vector(outputs.lambda_ia.0.clone())),
        lambda_ua: tape.constant(Tensor::vector(outputs.lambda_ua.0.clone())),
        o_ia: tape.constant(outputs.o_ia.clone()),
        o_ua: tape.constant(outputs.o_ua.clone()),
        tcam_ia: tape.constant(outputs.tcam_ia.0.clone()),
        tcam_ua: tape.constant(outputs.tcam_ua.0.clone()),
    };
    label.validate(outputs.tcam_ia.num_classes(), outputs.tcam_ua.num_classes())?;
    total_loss_var(&mut tape, &vars, label, hyper)?.values(&tape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use proptest::prelude::*;

    fn tcam(cols: &[&[f64]]) -> Tcam {
        let l = cols[0].len();
        let mut data = Vec::new();
        for t in 0..l {
            for c in cols {
                data.push(c[t]);
            }
        }
        Tcam(Tensor::matrix(l, cols.len(), data).unwrap())
    }

    #[test]
    fn class_scores_enumerated() {
        let t = tcam(&[&[1.0, 5.0, 3.0]]);
        assert_eq!(video_class_scores(&t, 1).unwrap(), vec![3.0]);
        assert_eq!(video_class_scores(&t, 2).unwrap(), vec![5.0]);
        assert_eq!(video_class_scores(&t, 3).unwrap(), vec![5.0]);
        // l < s still averages one clip
        assert_eq!(video_class_scores(&t, 7).unwrap(), vec![5.0]);
        let c = tcam(&[&[2.5; 7]]);
        for s in 1..9 {
            assert_eq!(video_class_scores(&c, s).unwrap(), vec![2.5]);
        }
    }

    #[test]
    fn class_scores_tape_matches_values() {
        let t = tcam(&[&[0.1, -2.0, 4.0, 0.3, 1.0, 1.0], &[3.0, 2.0, 1.0, 0.0, -1.0, 7.0]]);
        let mut tape = Tape::new();
        let v = tape.constant(t.0.clone());
        let a = class_scores_var(&mut tape, v, 3).unwrap();
        assert_eq!(tape.value(a).data(), video_class_scores(&t, 3).unwrap().as_slice());
    }

    #[test]
    fn mil_uniform_scores_give_log_n() {
        let t = tcam(&[&[0.2, 0.2], &[0.2, 0.2], &[0.2, 0.2], &[0.2, 0.2]]);
        let u = tcam(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let (a, b) = mil_loss(&t, &u, LabelVector { goal_class: 1, unint_class: 0 }, 2).unwrap();
        assert!((a - 4f64.ln()).abs() < 1e-14);
        assert!((b - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn mil_direct_evaluation() {
        // single clip: A equals the row
        let t = tcam(&[&[1.0], &[2.0], &[3.0]]);
        let u = tcam(&[&[0.0], &[0.0]]);
        let (a, _) = mil_loss(&t, &u, LabelVector { goal_class: 2, unint_class: 0 }, 3).unwrap();
        let want = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((a - want).abs() < 1e-14);
        assert!((a - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn mil_dominant_label_tends_to_zero_without_overflow() {
        let t = tcam(&[&[800.0], &[-800.0], &[0.0]]);
        let u = tcam(&[&[0.0], &[0.0]]);
        let (a, _) = mil_loss(&t, &u, LabelVector { goal_class: 0, unint_class: 0 }, 1).unwrap();
        assert!(a.abs() < 1e-300 || a == 0.0);
        let (b, _) = mil_loss(&t, &u, LabelVector { goal_class: 1, unint_class: 0 }, 1).unwrap();
        assert!((b - 1600.0).abs() < 1e-9);
    }

    #[test]
    fn mil_rejects_bad_label() {
        let t = tcam(&[&[1.0], &[2.0]]);
        assert!(mil_loss(&t, &t, LabelVector { goal_class: 2, unint_class: 0 }, 1).is_err());
    }

    #[test]
    fn overlap_disjoint_tracks_is_near_zero() {
        let ia = [0.99, 0.99, 0.99, 1e-6, 1e-6, 1e-6];
        let ua = [1e-6, 1e-6, 1e-6, 0.99, 0.99, 0.99];
        // l/p = 0.006 > 1e-6, both hinges inactive
        assert_eq!(overlap_reg(&ia, &ua, 0.5, 1000.0).unwrap(), 0.0);
    }

    #[test]
    fn overlap_saturated_tracks() {
        let ones = [1.0 - 1e-12; 10];
        let v = overlap_reg(&ones, &ones, 0.5, 1000.0).unwrap();
        assert!((v - 2.0 * (1.0 - 0.01)).abs() < 1e-9, "{v}");
    }

    #[test]
    fn overlap_empty_set_contributes_nothing() {
        let ia = [0.9, 0.8, 0.7];
        let ua = [0.1, 0.2, 0.3];
        // T^UA empty -> L_IA = 0; T^IA full -> L_UA = mean(ua) - 3/1000
        let v = overlap_reg(&ia, &ua, 0.5, 1000.0).unwrap();
        assert!((v - (0.2 - 0.003)).abs() < 1e-15);
    }

    #[test]
    fn order_equal_tracks_give_margin() {
        let t = [0.3, 0.9, 0.5, 0.1];
        let v = order_reg(&t, &t, 10.0, OrderMargin::Normalized).unwrap();
        assert!((v - 0.1).abs() < 1e-15);
        let lit = order_reg(&t, &t, 10.0, OrderMargin::Literal).unwrap();
        assert!((lit - 0.4).abs() < 1e-15);
    }

    #[test]
    fn order_correctly_separated_is_zero() {
        let l = 60;
        let mut ia = vec![-40.0; l];
        let mut ua = vec![-40.0; l];
        ia[0] = 40.0;
        ua[l - 1] = 40.0;
        assert_eq!(order_reg(&ia, &ua, 10.0, OrderMargin::Normalized).unwrap(), 0.0);
    }

    #[test]
    fn uniform_track_centroid() {
        for l in 1..12 {
            let mu = attention_centroid(&vec![0.4; l]);
            assert!((mu - (l as f64 + 1.0) / 2.0).abs() < 1e-12);
        }
    }

    fn outputs(l: usize, seed: u64) -> ModelOutputs {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r: usize, c: usize| {
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
        };
        let tcam_ia = Tcam(m(l, 4));
        let tcam_ua = Tcam(m(l, 3));
        let o = m(l, 2);
        let lia = m(1, l).into_data().iter().map(|x| crate::tensor::sigmoid(*x)).collect();
        let lua = m(1, l).into_data().iter().map(|x| crate::tensor::sigmoid(*x)).collect();
        ModelOutputs {
            lambda_ia: crate::model::AttentionTrack(lia),
            lambda_ua: crate::model::AttentionTrack(lua),
            o_joint: o.clone(),
            o_ia: o.clone(),
            o_ua: o,
            tcam_ia,
            tcam_ua,
        }
    }

    #[test]
    fn total_loss_endpoints_and_components() {
        let out = outputs(11, 3);
        let label = LabelVector { goal_class: 1, unint_class: 2 };
        let hyper = LossHyper::default();
        let b = total_loss(&out, label, &hyper).unwrap();

        // independent recomputation of every component
        let scores = |t: &Tcam| -> Vec<f64> {
            (0..t.num_classes())
                .map(|c| {
                    let mut col = t.column(c);
                    col.sort_by(|a, b| b.total_cmp(a));
                    col[..3].iter().sum::<f64>() / 3.0
                })
                .collect()
        };
        let ce = |a: Vec<f64>, y: usize| {
            let lse = a.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - a[y]
        };
        let cls_ia = ce(scores(&out.tcam_ia), 1);
        let cls_ua = ce(scores(&out.tcam_ua), 2);
        let ia = out.lambda_ia.weights();
        let ua = out.lambda_ua.weights();
        let masked_mean = |x: &[f64], mask: &[f64]| {
            let sel: Vec<f64> = x.iter().zip(mask).filter(|(_, m)| **m > 0.5).map(|(v, _)| *v).collect();
            if sel.is_empty() {
                0.0
            } else {
                (sel.iter().sum::<f64>() / sel.len() as f64 - 11.0 / 1000.0).max(0.0)
            }
        };
        let overlap = masked_mean(ia, ua) + masked_mean(ua, ia);
        let mu = |x: &[f64]| {
            let z: f64 = x.iter().map(|v| v.exp()).sum();
            x.iter().enumerate().map(|(i, v)| v.exp() / z * (i + 1) as f64).sum::<f64>()
        };
        let order = ((mu(ia) - mu(ua)) / 11.0 + 0.1).max(0.0);
        assert!((b.l_cls_ia - cls_ia).abs() < 1e-12);
        assert!((b.l_cls_ua - cls_ua).abs() < 1e-12);
        assert!((b.l_overlap - overlap).abs() < 1e-12);
        assert!((b.l_order - order).abs() < 1e-12);
        let total = 0.8 * (cls_ia + cls_ua) + 0.2 * (overlap + order);
        assert!((b.total - total).abs() < 1e-12);

        let only_cls = total_loss(&out, label, &LossHyper { lambda_weight: 1.0, ..hyper }).unwrap();
        assert!((only_cls.total - (cls_ia + cls_ua)).abs() < 1e-12);
        let only_reg = total_loss(&out, label, &LossHyper { lambda_weight: 0.0, ..hyper }).unwrap();
        assert!((only_reg.total - (overlap + order)).abs() < 1e-12);
    }

    #[test]
    fn hyper_validation() {
        let h = LossHyper::default();
        assert!(h.validate().is_ok());
        assert!(LossHyper { lambda_weight: 1.5, ..h }.validate().is_err());
        assert!(LossHyper { s: 0, ..h }.validate().is_err());
        assert!(LossHyper { activation_threshold: 1.0, ..h }.validate().is_err());
    }

    #[test]
    fn topk_mean_gradient_matches_finite_differences() {
        let x = Tensor::vector(vec![0.3, 2.1, -0.4, 1.7, 0.9, 2.0]);
        let err = grad_check(|t, v| t.topk_mean(v, 3), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    proptest! {
        #[test]
        fn components_nonnegative(seed in 0u64..500, l in 1usize..20) {
            let out = outputs(l, seed);
            let b = total_loss(&out, LabelVector { goal_class: 0, unint_class: 1 }, &LossHyper::default()).unwrap();
            prop_assert!(b.l_cls_ia >= 0.0 && b.l_cls_ua >= 0.0);
            prop_assert!(b.l_overlap >= 0.0 && b.l_order >= 0.0 && b.total >= 0.0);
        }

        #[test]
        fn mil_shift_invariant(seed in 0u64..500, shift in -50.0f64..50.0) {
            let out = outputs(6, seed);
            let shifted = Tcam(Tensor::matrix(6, 4, out.tcam_ia.0.data().iter().map(|v| v + shift).collect()).unwrap());
            let label = LabelVector { goal_class: 3, unint_class: 0 };
            let (a, _) = mil_loss(&out.tcam_ia, &out.tcam_ua, label, 2).unwrap();
            let (b, _) = mil_loss(&shifted, &out.tcam_ua, label, 2).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn order_translation_consistent(ia in proptest::collection::vec(-3.0f64..3.0, 8), ua in proptest::collection::vec(-3.0f64..3.0, 8)) {
            // Shift both tracks one clip later with a negligible-mass pad in front.
            let pad = -200.0;
            let mut ia2 = vec![pad]; ia2.extend(&ia);
            let mut ua2 = vec![pad]; ua2.extend(&ua);
            let d1 = attention_centroid(&ia) - attention_centroid(&ua);
            let d2 = attention_centroid(&ia2) - attention_centroid(&ua2);
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn overlap_symmetric(ia in proptest::collection::vec(0.01f64..0.99, 1..15), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ua: Vec<f64> = ia.iter().map(|_| rng.random_range(0.01..0.99)).collect();
            let a = overlap_reg(&ia, &ua, 0.5, 1000.0).unwrap();
            let b = overlap_reg(&ua, &ia, 0.5, 1000.0).unwrap();
            prop_assert!((a - b).abs() < 1e-15);
        }
    }
}
