//! Connectionist Temporal Classification: log-space forward-backward loss,
//! analytic gradient, greedy decoding, and an exhaustive path-enumeration
//! oracle for testing.
//!
//! Blank is label 0 everywhere. All computations run in f64 log space with a
//! stable log-sum-exp; the oracle comparison at 1e-9 depends on it.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("logits must have at least 1 frame and 2 labels, got T={t}, V={v}")]
    BadShape { t: usize, v: usize },
    #[error("logits buffer length {got} does not match T*V = {expected}")]
    BadBufferLength { expected: usize, got: usize },
    #[error("non-finite logit at frame {t}, label {v}")]
    NonFiniteLogit { t: usize, v: usize },
    #[error("target label {0} is out of range [1, {1}]")]
    LabelOutOfRange(usize, usize),
    #[error("target label 0 is the blank and cannot appear in a target")]
    BlankInTarget,
    #[error("target needs at least {required} frames but logits have {available}")]
    InfeasibleTarget { required: usize, available: usize },
    #[error("path enumeration guard exceeded: V^T = {0} > {1}")]
    GuardExceeded(f64, f64),
    #[error("non-finite value in gradient at frame {t}, label {v}")]
    NonFiniteGrad { t: usize, v: usize },
}

/// Unnormalized per-frame scores, row-major `T x V`; label 0 is the blank.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsSeq {
    t: usize,
    v: usize,
    values: Vec<f64>,
}

impl LogitsSeq {
    pub fn new(t: usize, v: usize, values: Vec<f64>) -> Result<Self, CtcError> {
        if t < 1 || v < 2 {
            return Err(CtcError::BadShape { t, v });
        }
        if values.len() != t * v {
            return Err(CtcError::BadBufferLength {
                expected: t * v,
                got: values.len(),
            });
        }
        for (i, x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(CtcError::NonFiniteLogit { t: i / v, v: i % v });
            }
        }
        Ok(LogitsSeq { t, v, values })
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn vocab(&self) -> usize {
        self.v
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.v..(t + 1) * self.v]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A blank-free label sequence; labels are in `[1, V-1]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TargetSeq {
    labels: Vec<usize>,
}

impl TargetSeq {
    pub fn new(labels: Vec<usize>) -> Result<Self, CtcError> {
        if labels.contains(&0) {
            return Err(CtcError::BlankInTarget);
        }
        Ok(TargetSeq { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Minimum number of frames any path needs: one per label plus a
    /// mandatory blank between adjacent repeats.
    pub fn min_frames(&self) -> usize {
        let repeats = self.labels.windows(2).filter(|w| w[0] == w[1]).count();
        self.labels.len() + repeats
    }

    fn check_against(&self, logits: &LogitsSeq) -> Result<(), CtcError> {
        for &l in &self.labels {
            if l >= logits.vocab() {
                return Err(CtcError::LabelOutOfRange(l, logits.vocab() - 1));
            }
        }
        if self.min_frames() > logits.frames() {
            return Err(CtcError::InfeasibleTarget {
                required: self.min_frames(),
                available: logits.frames(),
            });
        }
        Ok(())
    }
}

const NEG_INF: f64 = f64::NEG_INFINITY;

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp3(a: f64, b: f64, c: f64) -> f64 {
    log_sum_exp2(log_sum_exp2(a, b), c)
}

/// Per-row log-softmax of the logits.
fn log_probs(logits: &LogitsSeq) -> Vec<f64> {
    let v = logits.vocab();
    let mut out = Vec::with_capacity(logits.values().len());
    for t in 0..logits.frames() {
        let row = logits.row(t);
        let m = row.iter().cloned().fold(NEG_INF, f64::max);
        let z = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - z));
        debug_assert_eq!(out.len(), (t + 1) * v);
    }
    out
}

/// Blank-interleaved extended target: `[0, l1, 0, l2, ..., 0]`.
fn extended(target: &TargetSeq) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(0);
    for &l in target.labels() {
        ext.push(l);
        ext.push(0);
    }
    ext
}

struct Lattice {
    lp: Vec<f64>,  // T x V log-probs
    ext: Vec<usize>,
    t: usize,
    v: usize,
}

impl Lattice {
    fn build(logits: &LogitsSeq, target: &TargetSeq) -> Result<Self, CtcError> {
        target.check_against(logits)?;
        Ok(Lattice {
            lp: log_probs(logits),
            ext: extended(target),
            t: logits.frames(),
            v: logits.vocab(),
        })
    }

    fn lp(&self, t: usize, k: usize) -> f64 {
        self.lp[t * self.v + k]
    }

    /// A skip transition s-2 -> s is allowed when s holds a non-blank label
    /// different from the one two slots back.
    fn can_skip(&self, s: usize) -> bool {
        s >= 2 && self.ext[s] != 0 && self.ext[s] != self.ext[s - 2]
    }

    /// Forward lattice; alpha[t][s] includes the emission at frame t.
    fn alphas(&self) -> Vec<f64> {
        let s_len = self.ext.len();
        let mut alpha = vec![NEG_INF; self.t * s_len];
        alpha[0] = self.lp(0, self.ext[0]);
        if s_len > 1 {
            alpha[1] = self.lp(0, self.ext[1]);
        }
        for t in 1..self.t {
            for s in 0..s_len {
                let stay = alpha[(t - 1) * s_len + s];
                let step = if s >= 1 {
                    alpha[(t - 1) * s_len + s - 1]
                } else {
                    NEG_INF
                };
                let skip = if self.can_skip(s) {
                    alpha[(t - 1) * s_len + s - 2]
                } else {
                    NEG_INF
                };
                let total = log_sum_exp3(stay, step, skip);
                alpha[t * s_len + s] = if total == NEG_INF {
                    NEG_INF
                } else {
                    total + self.lp(t, self.ext[s])
                };
            }
        }
        alpha
    }

    /// Backward lattice; beta[t][s] excludes the emission at frame t, so
    /// alpha[t][s] + beta[t][s] is the log-mass of all paths through (t, s).
    fn betas(&self) -> Vec<f64> {
        let s_len = self.ext.len();
        let mut beta = vec![NEG_INF; self.t * s_len];
        beta[(self.t - 1) * s_len + s_len - 1] = 0.0;
        if s_len > 1 {
            beta[(self.t - 1) * s_len + s_len - 2] = 0.0;
        }
        for t in (0..self.t - 1).rev() {
            for s in 0..s_len {
                let stay = beta[(t + 1) * s_len + s] + self.lp(t + 1, self.ext[s]);
                let step = if s + 1 < s_len {
                    beta[(t + 1) * s_len + s + 1] + self.lp(t + 1, self.ext[s + 1])
                } else {
                    NEG_INF
                };
                let skip = if s + 2 < s_len && self.can_skip(s + 2) {
                    beta[(t + 1) * s_len + s + 2] + self.lp(t + 1, self.ext[s + 2])
                } else {
                    NEG_INF
                };
                beta[t * s_len + s] = log_sum_exp3(stay, step, skip);
            }
        }
        beta
    }

    fn log_total(&self, alpha: &[f64]) -> f64 {
        let s_len = self.ext.len();
        let last = alpha[(self.t - 1) * s_len + s_len - 1];
        let prev = if s_len > 1 {
            alpha[(self.t - 1) * s_len + s_len - 2]
        } else {
            NEG_INF
        };
        log_sum_exp2(last, prev)
    }
}

/// Negative log-probability that the softmax path distribution collapses to
/// `target`.
pub fn ctc_loss(logits: &LogitsSeq, target: &TargetSeq) -> Result<f64, CtcError> {
    let lattice = Lattice::build(logits, target)?;
    let alpha = lattice.alphas();
    Ok(-lattice.log_total(&alpha))
}

/// Gradient of `ctc_loss` with respect to the logits, shape `T x V`
/// row-major. Each row sums to zero.
pub fn ctc_grad(logits: &LogitsSeq, target: &TargetSeq) -> Result<Vec<f64>, CtcError> {
    let lattice = Lattice::build(logits, target)?;
    let alpha = lattice.alphas();
    let beta = lattice.betas();
    let log_p = lattice.log_total(&alpha);
    let (t_len, v_len) = (lattice.t, lattice.v);
    let s_len = lattice.ext.len();

    // d loss / d logit(t,k) = softmax(t,k) - posterior(t,k), where the
    // posterior is the probability mass of paths emitting label k at frame t.
    let mut grad = vec![0.0; t_len * v_len];
    for t in 0..t_len {
        let mut post = vec![NEG_INF; v_len];
        for s in 0..s_len {
            let mass = alpha[t * s_len + s] + beta[t * s_len + s];
            let k = lattice.ext[s];
            post[k] = log_sum_exp2(post[k], mass);
        }
        for k in 0..v_len {
            let y = lattice.lp(t, k).exp();
            let posterior = if post[k] == NEG_INF {
                0.0
            } else {
                (post[k] - log_p).exp()
            };
            let g = y - posterior;
            if !g.is_finite() {
                return Err(CtcError::NonFiniteGrad { t, v: k });
            }
            grad[t * v_len + k] = g;
        }
    }
    Ok(grad)
}

/// Best-path decoding: per-frame argmax (ties to the lowest index), collapse
/// consecutive repeats, drop blanks.
pub fn greedy_decode(logits: &LogitsSeq) -> TargetSeq {
    let mut labels = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..logits.frames() {
        let row = logits.row(t);
        let mut arg = 0;
        for (k, &x) in row.iter().enumerate() {
            if x > row[arg] {
                arg = k;
            }
        }
        if arg != prev && arg != 0 {
            labels.push(arg);
        }
        prev = arg;
    }
    TargetSeq { labels }
}

/// Collapse a raw frame-label path: merge consecutive repeats, remove blanks.
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &l in path {
        if l != prev && l != 0 {
            out.push(l);
        }
        prev = l;
    }
    out
}

/// Exhaustive oracle: enumerate all `V^T` frame-label paths and sum the
/// probabilities of those collapsing to `target`. Guarded to small problems.
pub fn brute_force_ctc(logits: &LogitsSeq, target: &TargetSeq) -> Result<f64, CtcError> {
    const GUARD: f64 = 1e6;
    let t = logits.frames();
    let v = logits.vocab();
    let n_paths = (v as f64).powi(t as i32);
    if n_paths > GUARD {
        return Err(CtcError::GuardExceeded(n_paths, GUARD));
    }
    target.check_against(logits)?;

    let lp = log_probs(logits);
    let mut total = 0.0f64;
    let mut path = vec![0usize; t];
    let n = n_paths as u64;
    for code in 0..n {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = (c % v as u64) as usize;
            c /= v as u64;
        }
        if collapse_path(&path) == target.labels {
            let logp: f64 = path.iter().enumerate().map(|(i, &k)| lp[i * v + k]).sum();
            total += logp.exp();
        }
    }
    Ok(-total.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;
    use rand::Rng;

    fn logits(t: usize, v: usize, vals: &[f64]) -> LogitsSeq {
        LogitsSeq::new(t, v, vals.to_vec()).unwrap()
    }

    fn target(labels: &[usize]) -> TargetSeq {
        TargetSeq::new(labels.to_vec()).unwrap()
    }

    fn random_logits<R: Rng>(t: usize, v: usize, rng: &mut R) -> LogitsSeq {
        let vals: Vec<f64> = (0..t * v).map(|_| rng.random_range(-2.0..=2.0)).collect();
        LogitsSeq::new(t, v, vals).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        // T=1, target [a]: loss = -log softmax(row)[a].
        let l = logits(1, 3, &[0.2, 1.3, -0.4]);
        let row = l.row(0);
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        let expect = -(row[1].exp() / z).ln();
        let got = ctc_loss(&l, &target(&[1])).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn uniform_two_frames_enumerated_by_hand() {
        // Uniform logits, T=2, V=2, target [a]: paths {aa, .a, a.} where '.'
        // is blank, each with probability 1/4 -> loss = -log(3/4).
        let l = logits(2, 2, &[0.0; 4]);
        let got = ctc_loss(&l, &target(&[1])).unwrap();
        assert!((got - -(0.75f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = rng_from(1234);
        for _ in 0..100 {
            let t = rng.random_range(1..=6);
            let v = rng.random_range(2..=4);
            let max_len = 3.min(t);
            let len = rng.random_range(0..=max_len);
            let labels: Vec<usize> = (0..len).map(|_| rng.random_range(1..v)).collect();
            let tgt = TargetSeq::new(labels).unwrap();
            if tgt.min_frames() > t {
                continue;
            }
            let l = random_logits(t, v, &mut rng);
            let fast = ctc_loss(&l, &tgt).unwrap();
            let slow = brute_force_ctc(&l, &tgt).unwrap();
            assert!((fast - slow).abs() <= 1e-9, "fast={fast} slow={slow}");
        }
    }

    #[test]
    fn empty_target_is_all_blanks() {
        let l = logits(2, 2, &[0.3, -0.7, 0.1, 0.9]);
        let fast = ctc_loss(&l, &target(&[])).unwrap();
        let slow = brute_force_ctc(&l, &target(&[])).unwrap();
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn infeasible_target_is_typed_error() {
        // [a, a] needs 3 frames (blank between repeats).
        let l = logits(2, 2, &[0.0; 4]);
        let err = ctc_loss(&l, &target(&[1, 1])).unwrap_err();
        assert!(matches!(
            err,
            CtcError::InfeasibleTarget {
                required: 3,
                available: 2
            }
        ));
    }

    #[test]
    fn blank_rejected_in_target() {
        assert!(matches!(
            TargetSeq::new(vec![1, 0]).unwrap_err(),
            CtcError::BlankInTarget
        ));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let l = logits(2, 3, &[0.0; 6]);
        assert!(matches!(
            ctc_loss(&l, &target(&[3])).unwrap_err(),
            CtcError::LabelOutOfRange(3, 2)
        ));
    }

    #[test]
    fn loss_invariant_to_per_frame_shift() {
        let mut rng = rng_from(7);
        let l = random_logits(5, 4, &mut rng);
        let tgt = target(&[2, 1]);
        let base = ctc_loss(&l, &tgt).unwrap();
        let mut shifted = l.values().to_vec();
        for t in 0..5 {
            let c = rng.random_range(-3.0..=3.0);
            for k in 0..4 {
                shifted[t * 4 + k] += c;
            }
        }
        let l2 = LogitsSeq::new(5, 4, shifted).unwrap();
        let moved = ctc_loss(&l2, &tgt).unwrap();
        assert!((base - moved).abs() < 1e-9);
    }

    #[test]
    fn single_frame_grad_is_softmax_minus_onehot() {
        let l = logits(1, 4, &[0.4, -1.0, 2.0, 0.3]);
        let g = ctc_grad(&l, &target(&[2])).unwrap();
        let row = l.row(0);
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        for k in 0..4 {
            let soft = row[k].exp() / z;
            let expect = soft - if k == 2 { 1.0 } else { 0.0 };
            assert!((g[k] - expect).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn grad_rows_sum_to_zero() {
        let mut rng = rng_from(99);
        for _ in 0..20 {
            let t = rng.random_range(2..=6);
            let v = rng.random_range(2..=4);
            let l = random_logits(t, v, &mut rng);
            let tgt = target(&[1]);
            let g = ctc_grad(&l, &tgt).unwrap();
            for row in g.chunks_exact(v) {
                let s: f64 = row.iter().sum();
                assert!(s.abs() < 1e-12, "row sum {s}");
            }
        }
    }

    #[test]
    fn greedy_decode_collapses() {
        // argmax path [blank, a, a, blank, b] -> [a, b]
        let vals = [
            9.0, 0.0, 0.0, //
            0.0, 9.0, 0.0, //
            0.0, 9.0, 0.0, //
            9.0, 0.0, 0.0, //
            0.0, 0.0, 9.0,
        ];
        let l = logits(5, 3, &vals);
        assert_eq!(greedy_decode(&l).labels(), &[1, 2]);
    }

    #[test]
    fn greedy_decode_all_blank_is_empty() {
        let vals = [5.0, 0.0, 0.0, 5.0, 0.0, 0.0];
        let l = logits(2, 3, &vals);
        assert!(greedy_decode(&l).is_empty());
    }

    #[test]
    fn greedy_decode_blank_separates_repeats() {
        // path [a, blank, a] -> [a, a]
        let vals = [0.0, 9.0, 9.0, 0.0, 0.0, 9.0];
        let l = logits(3, 2, &vals);
        assert_eq!(greedy_decode(&l).labels(), &[1, 1]);
    }

    #[test]
    fn greedy_decode_ties_pick_lowest_index() {
        let l = logits(1, 3, &[1.0, 1.0, 1.0]);
        assert!(greedy_decode(&l).is_empty()); // index 0 = blank wins
    }

    #[test]
    fn brute_force_guard_trips() {
        let l = logits(30, 4, &[0.0; 120]);
        assert!(matches!(
            brute_force_ctc(&l, &target(&[1])).unwrap_err(),
            CtcError::GuardExceeded(..)
        ));
    }

    #[test]
    fn collapse_mass_sums_to_one_small_sweep() {
        // For every feasible collapse class, exp(-loss) is that class's
        // probability; summed over all classes the mass must be 1.
        let mut rng = rng_from(2024);
        for _ in 0..5 {
            let t = rng.random_range(1..=4);
            let v = rng.random_range(2..=3);
            let l = random_logits(t, v, &mut rng);
            let mut mass = 0.0;
            for class in enumerate_targets(t, v) {
                let tgt = TargetSeq::new(class).unwrap();
                if tgt.min_frames() > t {
                    continue;
                }
                mass += (-ctc_loss(&l, &tgt).unwrap()).exp();
            }
            assert!((mass - 1.0).abs() <= 1e-9, "mass = {mass}");
        }
    }

    /// All label sequences of length 0..=max_len over [1, v-1].
    fn enumerate_targets(max_len: usize, v: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for seq in &frontier {
                for l in 1..v {
                    let mut s = seq.clone();
                    s.push(l);
                    next.push(s);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }
}
