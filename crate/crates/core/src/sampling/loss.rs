use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which loss terms contribute to the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossToggles {
    pub rr_pos: bool,
    pub rr_neg: bool,
    pub gr_pos: bool,
    pub gr_neg: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            rr_pos: true,
            rr_neg: true,
            gr_pos: true,
            gr_neg: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p_rr: f64,
    pub l_n_rr: f64,
    pub l_p_gr: f64,
    pub l_n_gr: f64,
    pub total: f64,
}

/// Gradients of the total with respect to every PSD of the two clips.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads<T> {
    pub f: Vec<Vec<T>>,
    pub f_prime: Vec<Vec<T>>,
}

/// PSD sets of one training pair. `g`/`g_prime` are present exactly when the
/// matching clip carries a label.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a, T> {
    pub f: &'a [Vec<T>],
    pub f_prime: &'a [Vec<T>],
    pub g: Option<&'a [Vec<T>]>,
    pub g_prime: Option<&'a [Vec<T>]>,
}

struct Moments<T> {
    n: usize,
    sum: Vec<T>,
    mean: Vec<T>,
    /// Sum of squared deviations from the mean.
    scatter: T,
}

fn moments<T: Scalar>(a: &[Vec<T>]) -> Moments<T> {
    let bins = a[0].len();
    let mut sum = vec![T::zero(); bins];
    for v in a {
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let inv = T::one() / T::of_usize(a.len());
    let mean: Vec<T> = sum.iter().map(|&s| s * inv).collect();
    let scatter = a
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(&x, &m)| (x - m) * (x - m)).sum::<T>())
        .sum();
    Moments {
        n: a.len(),
        sum,
        mean,
        scatter,
    }
}

/// `sum_i sum_j |a_i - b_j|^2` in centered form, non-negative by construction.
fn cross<T: Scalar>(a: &Moments<T>, b: &Moments<T>) -> T {
    let gap: T = a.mean.iter().zip(&b.mean).map(|(&x, &y)| (x - y) * (x - y)).sum();
    T::of_usize(a.n * b.n) * gap + T::of_usize(b.n) * a.scatter + T::of_usize(a.n) * b.scatter
}

/// Adds `scale * d cross(A, B) / d a_i = scale * 2 (|B| a_i - sum b)` to `grad`.
fn add_cross_grad<T: Scalar>(grad: &mut [Vec<T>], a: &[Vec<T>], b: &Moments<T>, scale: T) {
    let nb = T::of_usize(b.n);
    let two = T::of(2.0);
    for (g, v) in grad.iter_mut().zip(a) {
        for ((gk, &x), &sb) in g.iter_mut().zip(v).zip(&b.sum) {
            *gk += scale * two * (nb * x - sb);
        }
    }
}

fn check_set<T>(name: &str, a: &[Vec<T>], bins: usize) -> Result<()> {
    if a.is_empty() {
        return Err(Error::InvalidConfig(format!("{name} is empty")));
    }
    if let Some(v) = a.iter().find(|v| v.len() != bins) {
        return Err(Error::Shape(format!(
            "{name} has a PSD with {} bins, expected {bins}",
            v.len()
        )));
    }
    Ok(())
}

fn check_gt<T>(name: &str, g: Option<&[Vec<T>]>, phi: bool, bins: usize) -> Result<()> {
    match (g, phi) {
        (Some(g), true) => check_set(name, g, bins),
        (None, false) => Ok(()),
        (Some(_), false) => Err(Error::Consistency(format!("{name} present but its phi is 0"))),
        (None, true) => Err(Error::Consistency(format!("{name} absent but its phi is 1"))),
    }
}

impl<'a, T: Scalar> LossInputs<'a, T> {
    pub fn phi(&self) -> bool {
        self.g.is_some()
    }

    pub fn phi_prime(&self) -> bool {
        self.g_prime.is_some()
    }

    fn validate(&self, phi: bool, phi_prime: bool) -> Result<usize> {
        let bins = self.f.first().map_or(0, Vec::len);
        check_set("F", self.f, bins)?;
        check_set("F'", self.f_prime, bins)?;
        if self.f.len() != self.f_prime.len() {
            return Err(Error::Shape(format!(
                "F has {} PSDs but F' has {}",
                self.f.len(),
                self.f_prime.len()
            )));
        }
        check_gt("G", self.g, phi, bins)?;
        check_gt("G'", self.g_prime, phi_prime, bins)?;
        Ok(bins)
    }
}

/// Positive rPPG-rPPG term: mean squared distance between distinct PSDs of
/// the same clip, averaged over both clips.
pub fn loss_rr_pos<T: Scalar>(f: &[Vec<T>], f_prime: &[Vec<T>]) -> Result<T> {
    let inputs = LossInputs {
        f,
        f_prime,
        g: None,
        g_prime: None,
    };
    inputs.validate(false, false)?;
    let n = f.len();
    if n < 2 {
        return Err(Error::InvalidConfig("the positive term needs N >= 2".into()));
    }
    let (a, b) = (moments(f), moments(f_prime));
    Ok((cross(&a, &a) + cross(&b, &b)) / T::of_usize(2 * n * (n - 1)))
}

/// Negative rPPG-rPPG term across the two clips.
pub fn loss_rr_neg<T: Scalar>(f: &[Vec<T>], f_prime: &[Vec<T>]) -> Result<T> {
    let inputs = LossInputs {
        f,
        f_prime,
        g: None,
        g_prime: None,
    };
    inputs.validate(false, false)?;
    let (a, b) = (moments(f), moments(f_prime));
    Ok(-cross(&a, &b) / T::of_usize(a.n * b.n))
}

fn gr_weights(phi: bool, phi_prime: bool) -> Option<(f64, f64, f64)> {
    let (p, q) = (phi as u8 as f64, phi_prime as u8 as f64);
    (p + q > 0.0).then_some((p, q, p + q))
}

/// Positive GT-rPPG term; zero when neither clip is labeled.
pub fn loss_gr_pos<T: Scalar>(
    f: &[Vec<T>],
    g: Option<&[Vec<T>]>,
    f_prime: &[Vec<T>],
    g_prime: Option<&[Vec<T>]>,
    phi: bool,
    phi_prime: bool,
) -> Result<T> {
    let inputs = LossInputs { f, f_prime, g, g_prime };
    inputs.validate(phi, phi_prime)?;
    Ok(gr_terms(&inputs, LossToggles::default(), None).0)
}

/// Negative GT-rPPG term (each clip against the other clip's GT); zero when
/// neither clip is labeled.
pub fn loss_gr_neg<T: Scalar>(
    f: &[Vec<T>],
    g: Option<&[Vec<T>]>,
    f_prime: &[Vec<T>],
    g_prime: Option<&[Vec<T>]>,
    phi: bool,
    phi_prime: bool,
) -> Result<T> {
    let inputs = LossInputs { f, f_prime, g, g_prime };
    inputs.validate(phi, phi_prime)?;
    Ok(gr_terms(&inputs, LossToggles::default(), None).1)
}

/// Returns `(l_p_gr, l_n_gr)` and accumulates their gradients into `grads`.
fn gr_terms<T: Scalar>(
    inputs: &LossInputs<'_, T>,
    toggles: LossToggles,
    mut grads: Option<&mut LossGrads<T>>,
) -> (T, T) {
    let Some((p, q, w)) = gr_weights(inputs.phi(), inputs.phi_prime()) else {
        return (T::zero(), T::zero());
    };
    let mf = moments(inputs.f);
    let mfp = moments(inputs.f_prime);
    let mg = inputs.g.map(moments);
    let mgp = inputs.g_prime.map(moments);
    let mut pos = T::zero();
    let mut neg = T::zero();
    let wt = T::of(w);
    if let Some(mg) = &mg {
        let sp = T::of(p) / (wt * T::of_usize(mf.n * mg.n));
        let sn = T::of(p) / (wt * T::of_usize(mfp.n * mg.n));
        if toggles.gr_pos {
            pos += sp * cross(&mf, mg);
        }
        if toggles.gr_neg {
            neg -= sn * cross(&mfp, mg);
        }
        if let Some(gr) = grads.as_deref_mut() {
            if toggles.gr_pos {
                add_cross_grad(&mut gr.f, inputs.f, mg, sp);
            }
            if toggles.gr_neg {
                add_cross_grad(&mut gr.f_prime, inputs.f_prime, mg, -sn);
            }
        }
    }
    if let Some(mgp) = &mgp {
        let sp = T::of(q) / (wt * T::of_usize(mfp.n * mgp.n));
        let sn = T::of(q) / (wt * T::of_usize(mf.n * mgp.n));
        if toggles.gr_pos {
            pos += sp * cross(&mfp, mgp);
        }
        if toggles.gr_neg {
            neg -= sn * cross(&mf, mgp);
        }
        if let Some(gr) = grads.as_deref_mut() {
            if toggles.gr_pos {
                add_cross_grad(&mut gr.f_prime, inputs.f_prime, mgp, sp);
            }
            if toggles.gr_neg {
                add_cross_grad(&mut gr.f, inputs.f, mgp, -sn);
            }
        }
    }
    (pos, neg)
}

/// All four terms, their sum and the gradients with respect to `F` and `F'`.
/// Disabled terms are reported as zero.
pub fn loss_total_with_grad<T: Scalar>(
    inputs: &LossInputs<'_, T>,
    toggles: LossToggles,
) -> Result<(LossBreakdown, LossGrads<T>)> {
    let bins = inputs.validate(inputs.phi(), inputs.phi_prime())?;
    let n = inputs.f.len();
    let mut grads = LossGrads {
        f: vec![vec![T::zero(); bins]; n],
        f_prime: vec![vec![T::zero(); bins]; n],
    };
    let mf = moments(inputs.f);
    let mfp = moments(inputs.f_prime);

    let mut l_p_rr = T::zero();
    if toggles.rr_pos {
        if n < 2 {
            return Err(Error::InvalidConfig("the positive term needs N >= 2".into()));
        }
        let scale = T::one() / T::of_usize(2 * n * (n - 1));
        l_p_rr = scale * (cross(&mf, &mf) + cross(&mfp, &mfp));
        // cross(A, A) is symmetric in its arguments, so its gradient is twice the one-sided form.
        add_cross_grad(&mut grads.f, inputs.f, &mf, T::of(2.0) * scale);
        add_cross_grad(&mut grads.f_prime, inputs.f_prime, &mfp, T::of(2.0) * scale);
    }
    let mut l_n_rr = T::zero();
    if toggles.rr_neg {
        let scale = T::one() / T::of_usize(mf.n * mfp.n);
        l_n_rr = -scale * cross(&mf, &mfp);
        add_cross_grad(&mut grads.f, inputs.f, &mfp, -scale);
        add_cross_grad(&mut grads.f_prime, inputs.f_prime, &mf, -scale);
    }
    let (l_p_gr, l_n_gr) = gr_terms(inputs, toggles, Some(&mut grads));

    let b = LossBreakdown {
        l_p_rr: l_p_rr.f64(),
        l_n_rr: l_n_rr.f64(),
        l_p_gr: l_p_gr.f64(),
        l_n_gr: l_n_gr.f64(),
        total: (l_p_rr + l_n_rr + l_p_gr + l_n_gr).f64(),
    };
    Ok((b, grads))
}

/// All four terms with every term enabled.
pub fn loss_total<T: Scalar>(
    f: &[Vec<T>],
    f_prime: &[Vec<T>],
    g: Option<&[Vec<T>]>,
    g_prime: Option<&[Vec<T>]>,
    phi: bool,
    phi_prime: bool,
) -> Result<LossBreakdown> {
    let inputs = LossInputs { f, f_prime, g, g_prime };
    inputs.validate(phi, phi_prime)?;
    Ok(loss_total_with_grad(&inputs, LossToggles::default())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(bins: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; bins];
        v[k] = 1.0;
        v
    }

    #[test]
    fn hand_computed_values() {
        let a = onehot(5, 1);
        let b = onehot(5, 3);
        let alt = vec![a.clone(), b.clone(), a.clone(), b.clone()];
        let same = vec![a.clone(); 4];
        assert!((loss_rr_pos(&alt, &same).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(loss_rr_pos(&same, &same).unwrap().abs() < 1e-12);
        let fb = vec![b.clone(); 4];
        assert!((loss_rr_neg(&same, &fb).unwrap() + 2.0).abs() < 1e-12);
        assert!(loss_rr_neg(&alt, &alt).unwrap() <= 0.0);
        let ga = vec![a.clone(); 4];
        let gb = vec![b.clone(); 4];
        assert!(loss_gr_pos(&same, Some(&ga), &fb, None, true, false).unwrap().abs() < 1e-12);
        assert_eq!(loss_gr_pos(&same, None, &fb, None, false, false).unwrap(), 0.0);
        assert!(loss_gr_neg(&same, Some(&ga), &same, None, true, false).unwrap().abs() < 1e-12);
        let v = loss_gr_neg(&same, Some(&gb), &same, Some(&gb), true, true).unwrap();
        assert!((v + 2.0).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_total_is_rr_sum() {
        let f = vec![onehot(4, 0), onehot(4, 1)];
        let fp = vec![onehot(4, 2), onehot(4, 2)];
        let b = loss_total(&f, &fp, None, None, false, false).unwrap();
        assert_eq!(b.l_p_gr, 0.0);
        assert_eq!(b.l_n_gr, 0.0);
        assert_eq!(b.total, b.l_p_rr + b.l_n_rr);
    }

    #[test]
    fn inconsistent_labels_rejected() {
        let f = vec![onehot(4, 0), onehot(4, 1)];
        assert!(matches!(
            loss_gr_pos(&f, Some(&f), &f, None, false, false),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(loss_rr_pos(&f[..1], &f[..1]), Err(Error::InvalidConfig(_))));
    }
}
