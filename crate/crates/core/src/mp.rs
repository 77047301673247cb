//! Membrane-potential space: reset-aware addition and subtraction of
//! waveforms, the distance they induce, and single-step-flip neighborhoods.
//!
//! `u ⊞ ε` re-integrates the neuron with `ε[t]` added to the synaptic input,
//! so a perturbation at one step propagates through every later reset.
//! `u' ⊟ u` is the input-space difference that makes `u ⊞ (u' ⊟ u) = u'`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Result, SnnError};
use crate::lif::{integrate, NeuronParams, NeuronTrace, SpikeTrain};

/// Extra margin used to push a firing step strictly below threshold.
pub const FLIP_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation(pub Vec<f64>);

impl Perturbation {
    pub fn zeros(n_steps: usize) -> Self {
        Self(vec![0.0; n_steps])
    }

    /// Zero everywhere except `value` at `step`.
    pub fn single(n_steps: usize, step: usize, value: f64) -> Self {
        let mut v = vec![0.0; n_steps];
        v[step] = value;
        Self(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One member of a neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Zero-based flip position.
    pub index: usize,
    pub trace: NeuronTrace,
    /// `theta - u[index]`, magnitude floored at [`FLIP_MARGIN`].
    pub signed_dist: f64,
    /// `(u_p ⊟ u) / ||u_p ⊟ u||`.
    pub unit_dir: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub members: Vec<Neighbor>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn check_trace(trace: &NeuronTrace, params: &NeuronParams) -> Result<()> {
    let n = params.n_steps();
    check_len("trace.u", n, trace.u.len())?;
    check_len("trace.s", n, trace.s.len())?;
    check_len("trace.a", n, trace.a.len())?;
    check_len("trace.c", n, trace.c.len())?;
    Ok(())
}

/// Recovers the synaptic input from a trace by inverting the membrane recursion.
pub fn synaptic_input_of(trace: &NeuronTrace, params: &NeuronParams) -> Result<Vec<f64>> {
    check_trace(trace, params)?;
    check_finite("trace.u", &trace.u)?;
    let alpha = params.membrane_decay();
    let mut carry = 0.0;
    let mut c = Vec::with_capacity(trace.u.len());
    for (t, &u) in trace.u.iter().enumerate() {
        let fired = trace.s.get(t);
        if fired != params.fires(u) {
            return Err(SnnError::InconsistentTrace(format!(
                "spike flag at step {t} disagrees with u = {u} and threshold {}",
                params.theta()
            )));
        }
        c.push(u - alpha * carry);
        carry = if fired { 0.0 } else { u };
    }
    Ok(c)
}

/// `u ⊞ ε`: the trace obtained by adding `ε` to the synaptic input and re-integrating.
pub fn mp_add(trace: &NeuronTrace, eps: &Perturbation, params: &NeuronParams) -> Result<NeuronTrace> {
    check_trace(trace, params)?;
    check_len("mp_add perturbation", params.n_steps(), eps.0.len())?;
    check_finite("mp_add perturbation", &eps.0)?;
    let c: Vec<f64> = trace.c.iter().zip(&eps.0).map(|(c, e)| c + e).collect();
    Ok(integrate(c, params))
}

/// `u' ⊟ u` for an arbitrary waveform `u'`; resets of `u'` come from thresholding it.
pub fn mp_sub_waveform(u_prime: &[f64], trace: &NeuronTrace, params: &NeuronParams) -> Result<Perturbation> {
    check_trace(trace, params)?;
    check_len("mp_sub waveform", params.n_steps(), u_prime.len())?;
    let alpha = params.membrane_decay();
    let mut carry = 0.0;
    let eps = u_prime
        .iter()
        .zip(&trace.c)
        .map(|(&up, &c)| {
            let e = up - (alpha * carry + c);
            carry = if params.fires(up) { 0.0 } else { up };
            e
        })
        .collect();
    Ok(Perturbation(eps))
}

/// `u' ⊟ u`.
pub fn mp_sub(u_prime: &NeuronTrace, trace: &NeuronTrace, params: &NeuronParams) -> Result<Perturbation> {
    check_trace(u_prime, params)?;
    mp_sub_waveform(&u_prime.u, trace, params)
}

/// `||u' ⊟ u||_2`.
pub fn mp_dist(u_prime: &NeuronTrace, trace: &NeuronTrace, params: &NeuronParams) -> Result<f64> {
    Ok(mp_sub(u_prime, trace, params)?.norm())
}

/// `theta - u[p]`: the closed-form distance to the `p`-th single-flip neighbor.
pub fn sns_closed_form_dist(trace: &NeuronTrace, p: usize, params: &NeuronParams) -> f64 {
    params.theta() - trace.u[p]
}

pub(crate) fn floor_signed(d: f64) -> f64 {
    if d.abs() >= FLIP_MARGIN {
        d
    } else if d < 0.0 {
        -FLIP_MARGIN
    } else {
        FLIP_MARGIN
    }
}

/// Smallest perturbation at step `p` that flips its firing status given the
/// unchanged prefix. Rounding can leave `u[p] + (theta - u[p])` a hair short of
/// the threshold, so the value is nudged until the flip is real.
pub(crate) fn flip_perturbation(decayed_carry: f64, c_p: f64, fired: bool, params: &NeuronParams, u_p: f64) -> f64 {
    let theta = params.theta();
    let mut eps = if fired {
        theta - u_p - FLIP_MARGIN
    } else {
        theta - u_p
    };
    let mut nudge = f64::EPSILON * theta.abs().max(1.0);
    while params.fires(decayed_carry + (c_p + eps)) == fired {
        eps += if fired { -nudge } else { nudge };
        nudge *= 2.0;
    }
    eps
}

/// Builds the `N_t` single-step-flip neighbors of a trace.
pub fn sns_neighborhood(trace: &NeuronTrace, params: &NeuronParams) -> Result<Neighborhood> {
    check_trace(trace, params)?;
    let n = params.n_steps();
    let alpha = params.membrane_decay();
    let mut members = Vec::with_capacity(n);
    let mut carry = 0.0;
    for p in 0..n {
        let fired = trace.s.get(p);
        let eps_p = flip_perturbation(alpha * carry, trace.c[p], fired, params, trace.u[p]);
        let eps = Perturbation::single(n, p, eps_p);
        let neighbor_trace = mp_add(trace, &eps, params)?;
        let diff = mp_sub(&neighbor_trace, trace, params)?;
        let norm = diff.norm();
        let unit_dir = if norm > 0.0 {
            diff.0.iter().map(|v| v / norm).collect()
        } else {
            let mut e = vec![0.0; n];
            e[p] = if fired { -1.0 } else { 1.0 };
            e
        };
        members.push(Neighbor {
            index: p,
            trace: neighbor_trace,
            signed_dist: floor_signed(sns_closed_form_dist(trace, p, params)),
            unit_dir,
        });
        carry = if fired { 0.0 } else { trace.u[p] };
    }
    Ok(Neighborhood { members })
}

/// Streams the neighbors of `trace`, handing `(p, signed_dist, sum_t w[t] (a_p[t] - a[t]))`
/// to `visit`. Steps before `p` are unchanged by the flip and contribute nothing.
pub(crate) fn for_each_neighbor_change<F>(trace: &NeuronTrace, params: &NeuronParams, w: &[f64], mut visit: F)
where
    F: FnMut(usize, f64, f64),
{
    let n = trace.u.len();
    let alpha = params.membrane_decay();
    let syn = params.synaptic_decay();
    let gain = 1.0 / params.tau_s();
    let a = &trace.a.values()[..n];
    let c = &trace.c[..n];
    let w = &w[..n];
    let mut carry = 0.0;
    for p in 0..n {
        let fired = trace.s.get(p);
        let eps_p = flip_perturbation(alpha * carry, c[p], fired, params, trace.u[p]);

        let v = alpha * carry + (c[p] + eps_p);
        let f = params.fires(v);
        let mut c_carry = if f { 0.0 } else { v };
        let mut prev_a = syn * if p == 0 { 0.0 } else { a[p - 1] } + if f { gain } else { 0.0 };
        let mut change = w[p] * (prev_a - a[p]);
        for t in p + 1..n {
            let v = alpha * c_carry + c[t];
            let f = params.fires(v);
            c_carry = if f { 0.0 } else { v };
            prev_a = syn * prev_a + if f { gain } else { 0.0 };
            change += w[t] * (prev_a - a[t]);
        }
        visit(p, floor_signed(params.theta() - trace.u[p]), change);
        carry = if fired { 0.0 } else { trace.u[p] };
    }
}

/// Spike trains of the single-flip neighbors, in flip order.
pub fn neighbor_spike_trains(trace: &NeuronTrace, params: &NeuronParams) -> Result<Vec<SpikeTrain>> {
    Ok(sns_neighborhood(trace, params)?
        .members
        .into_iter()
        .map(|m| m.trace.s)
        .collect())
}

/// Reads a spike train as a binary number, first step most significant.
pub fn spike_train_index(s: &SpikeTrain) -> Result<u64> {
    if s.len() > 63 {
        return Err(SnnError::IndexOverflow(s.len()));
    }
    Ok(s.bits().iter().fold(0u64, |acc, &b| (acc << 1) | b as u64))
}

/// Inverse of [`spike_train_index`] for a known length.
pub fn spike_train_from_index(index: u64, n_steps: usize) -> Result<SpikeTrain> {
    if n_steps > 63 {
        return Err(SnnError::IndexOverflow(n_steps));
    }
    if n_steps < 64 && index >> n_steps != 0 {
        return Err(SnnError::InvalidParams(format!(
            "index {index} does not fit in {n_steps} steps"
        )));
    }
    Ok(SpikeTrain::new(
        (0..n_steps).map(|t| (index >> (n_steps - 1 - t)) & 1 == 1).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lif::lif_forward;

    fn p3() -> NeuronParams {
        NeuronParams::new(2.0, 2.0, 1.0, 3).unwrap()
    }

    fn fixture() -> NeuronTrace {
        lif_forward(&[0.6, 0.6, 0.6], &p3()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn inverse_of_fixture() {
        let c = synaptic_input_of(&fixture(), &p3()).unwrap();
        assert!(close(&c, &[0.6, 0.6, 0.6], 1e-12));
    }

    #[test]
    fn inverse_of_zero_trace() {
        let c = synaptic_input_of(&NeuronTrace::silent(3), &p3()).unwrap();
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn inverse_rejects_inconsistent_spikes() {
        let mut tr = fixture();
        tr.s = SpikeTrain::silent(3);
        assert!(matches!(
            synaptic_input_of(&tr, &p3()),
            Err(SnnError::InconsistentTrace(_))
        ));
    }

    #[test]
    fn add_moves_spike_earlier() {
        let out = mp_add(&fixture(), &Perturbation(vec![0.4, 0.0, 0.0]), &p3()).unwrap();
        assert!(close(&out.u, &[1.0, 0.6, 0.9], 1e-12));
        assert_eq!(out.s.to_binary(), vec![1, 0, 0]);
    }

    #[test]
    fn add_zero_is_identity() {
        let tr = fixture();
        assert_eq!(mp_add(&tr, &Perturbation::zeros(3), &p3()).unwrap(), tr);
    }

    #[test]
    fn add_at_last_step_only_changes_last_step() {
        let p = NeuronParams::new(5.0, 2.0, 1.0, 6).unwrap();
        let tr = lif_forward(&[0.3, 0.5, 0.9, 0.1, 0.7, 0.2], &p).unwrap();
        let out = mp_add(&tr, &Perturbation::single(6, 5, 0.37), &p).unwrap();
        assert_eq!(out.u[..5], tr.u[..5]);
        assert!((out.u[5] - tr.u[5] - 0.37).abs() < 1e-12);
    }

    #[test]
    fn add_rejects_non_finite() {
        assert!(mp_add(&fixture(), &Perturbation(vec![0.0, f64::NAN, 0.0]), &p3()).is_err());
        assert!(mp_add(&fixture(), &Perturbation(vec![0.0; 2]), &p3()).is_err());
    }

    #[test]
    fn sub_fixture_and_antisymmetry() {
        let u = fixture();
        let up = mp_add(&u, &Perturbation(vec![0.4, 0.0, 0.0]), &p3()).unwrap();
        let fwd = mp_sub(&up, &u, &p3()).unwrap();
        let back = mp_sub(&u, &up, &p3()).unwrap();
        assert!(close(fwd.values(), &[0.4, 0.0, 0.0], 1e-12));
        assert!(close(back.values(), &[-0.4, 0.0, 0.0], 1e-12));
        assert!((mp_dist(&up, &u, &p3()).unwrap() - 0.4).abs() < 1e-12);
        assert!((mp_dist(&u, &up, &p3()).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sub_of_identical_is_zero() {
        let u = fixture();
        assert_eq!(mp_sub(&u, &u, &p3()).unwrap(), Perturbation::zeros(3));
        assert_eq!(mp_dist(&u, &u, &p3()).unwrap(), 0.0);
    }

    #[test]
    fn sub_rejects_length_mismatch() {
        let other = lif_forward(&[0.1, 0.2], &NeuronParams::new(2.0, 2.0, 1.0, 2).unwrap()).unwrap();
        assert!(mp_sub(&other, &fixture(), &p3()).is_err());
    }

    #[test]
    fn sns_fixture_first_neighbor() {
        let hood = sns_neighborhood(&fixture(), &p3()).unwrap();
        assert_eq!(hood.len(), 3);
        let first = &hood.members[0];
        assert_eq!(first.trace.s.to_binary(), vec![1, 0, 0]);
        assert!((first.signed_dist - 0.4).abs() < 1e-12);
        // the firing step 3 flips to silent with a negative distance
        assert!((hood.members[2].signed_dist + 0.05).abs() < 1e-12);
        for m in &hood.members {
            assert_ne!(m.trace.s.get(m.index), fixture().s.get(m.index));
        }
    }

    #[test]
    fn sns_single_step() {
        let p = NeuronParams::new(5.0, 2.0, 1.0, 1).unwrap();
        for c in [0.3, 1.7, 1.0] {
            let tr = lif_forward(&[c], &p).unwrap();
            let hood = sns_neighborhood(&tr, &p).unwrap();
            assert_eq!(hood.len(), 1);
            assert_eq!(hood.members[0].trace.s.get(0), !tr.s.get(0));
        }
    }

    #[test]
    fn closed_form_values() {
        let tr = fixture();
        assert!((sns_closed_form_dist(&tr, 0, &p3()) - 0.4).abs() < 1e-12);
        assert!((sns_closed_form_dist(&tr, 2, &p3()) + 0.05).abs() < 1e-12);
        let at = lif_forward(&[1.0, 0.0, 0.0], &p3()).unwrap();
        assert_eq!(sns_closed_form_dist(&at, 0, &p3()), 0.0);
        // degenerate case still yields a real flip and a floored distance
        let hood = sns_neighborhood(&at, &p3()).unwrap();
        assert!(!hood.members[0].trace.s.get(0));
        assert_eq!(hood.members[0].signed_dist, FLIP_MARGIN);
    }

    #[test]
    fn streamed_changes_match_full_neighbors() {
        let p = NeuronParams::new(5.0, 2.0, 1.0, 12).unwrap();
        let c = [0.4, 0.5, 0.6, -0.2, 0.9, 0.3, 0.3, 0.8, 0.1, 0.7, 0.6, 0.2];
        let w = [0.3, -1.0, 0.5, 2.0, -0.7, 0.1, 0.9, -0.4, 1.2, 0.0, -2.0, 0.6];
        let tr = lif_forward(&c, &p).unwrap();
        let hood = sns_neighborhood(&tr, &p).unwrap();
        let mut seen = 0;
        for_each_neighbor_change(&tr, &p, &w, |idx, d, change| {
            let m = &hood.members[idx];
            assert_eq!(d, m.signed_dist);
            let expected: f64 = (0..12).map(|t| w[t] * (m.trace.a.values()[t] - tr.a.values()[t])).sum();
            assert!((change - expected).abs() < 1e-14);
            for t in 0..idx {
                assert_eq!(m.trace.a.values()[t], tr.a.values()[t]);
            }
            seen += 1;
        });
        assert_eq!(seen, 12);
    }

    #[test]
    fn index_examples() {
        let ones = SpikeTrain::from_binary(&[1; 10]).unwrap();
        assert_eq!(spike_train_index(&ones).unwrap(), 1023);
        let five = SpikeTrain::from_binary(&[0, 0, 0, 0, 0, 0, 0, 1, 0, 1]).unwrap();
        assert_eq!(spike_train_index(&five).unwrap(), 5);
        assert_eq!(spike_train_index(&SpikeTrain::silent(10)).unwrap(), 0);
        assert!(matches!(
            spike_train_index(&SpikeTrain::silent(64)),
            Err(SnnError::IndexOverflow(64))
        ));
    }

    #[test]
    fn index_round_trip_small() {
        for n in 1..=10 {
            for idx in 0..(1u64 << n) {
                let s = spike_train_from_index(idx, n).unwrap();
                assert_eq!(spike_train_index(&s).unwrap(), idx);
            }
        }
        assert!(spike_train_from_index(8, 3).is_err());
    }
}
